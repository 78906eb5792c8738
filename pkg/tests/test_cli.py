import json
import math

import numpy as np
import pytest

from optocool import cli
from optocool.meanfield import steady_state
from optocool.params import room_temperature

GOLDEN_HEADER = "n_b,method,n_c_mean,n_c_stderr,n_a_mean,effective_T,diagnostics"

QUANTUM = {"kappa": 0.1, "gamma": 0.01, "g": 0.006, "n_b": 1.0, "n_c": 1.0}
SHORT = {"t_end": 200.0}


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run_cli(tmp_path, doc, verb="run", extra=(), out="out.csv"):
    cfg = write(tmp_path, doc)
    out_path = tmp_path / out
    code = cli.main([verb, "--config", cfg, "--out", str(out_path), *extra])
    return code, out_path


def test_golden_header(tmp_path, capsys):
    code, out = run_cli(tmp_path, {"params": dict(QUANTUM, g=0.0), "method": "meanfield"})
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# config: ")
    assert lines[1] == GOLDEN_HEADER
    assert list(cli.COLUMNS) == GOLDEN_HEADER.split(",")
    raw, rows = cli.read_results(out)
    assert raw["ensemble"]["master_seed"] == 0
    assert len(rows) == 1
    assert float(rows[0]["n_c_mean"]) == 1.0
    assert float(rows[0]["n_a_mean"]) == 0.0
    assert float(rows[0]["n_c_stderr"]) == 0.0
    assert "meanfield" in capsys.readouterr().out


def test_stdout_when_no_output_path(tmp_path, capsys):
    cfg = write(tmp_path, {"params": QUANTUM, "method": "meanfield"})
    assert cli.main(["run", "--config", cfg]) == 0
    assert capsys.readouterr().out.splitlines()[1] == GOLDEN_HEADER


def test_sweep_singleton_zero_grid(tmp_path):
    doc = {"params": QUANTUM, "method": "meanfield", "sweep": {"variable": "n_b", "grid": [0.0]}}
    code, out = run_cli(tmp_path, doc, verb="sweep")
    assert code == 0
    _, rows = cli.read_results(out)
    assert len(rows) == 1
    assert float(rows[0]["n_c_mean"]) == 1.0


def test_sweep_rows_in_grid_order(tmp_path):
    doc = {"params": QUANTUM, "method": "meanfield", "sweep": {"variable": "n_b", "grid": [3.0, 0.5, 1.0]}}
    code, out = run_cli(tmp_path, doc, verb="sweep")
    _, rows = cli.read_results(out)
    assert [float(r["n_b"]) for r in rows] == [0.5, 1.0, 3.0]


def test_log_sweep_with_temperature(tmp_path):
    p = room_temperature().to_dict()
    doc = {"params": p, "method": "meanfield", "sweep": {"variable": "n_b", "log_start": 2, "log_stop": 12, "num": 21}}
    code, out = run_cli(tmp_path, doc, verb="sweep")
    assert code == 0
    _, rows = cli.read_results(out)
    n_c = np.array([float(r["n_c_mean"]) for r in rows])
    k = int(np.argmin(n_c))
    assert 0 < k < len(n_c) - 1
    T = np.array([float(r["effective_T"]) for r in rows])
    assert np.all(np.isfinite(T)) and T[0] == pytest.approx(300.0, rel=1e-3)


def test_stochastic_sub_grid(tmp_path):
    doc = {
        "params": QUANTUM, "method": "stochastic", "schedule": SHORT,
        "ensemble": {"n_traj": 4, "master_seed": 3},
        "sweep": {"variable": "n_b", "grid": [0.5, 1.0, 2.0], "sub_grid": [1.0]},
    }
    code, out = run_cli(tmp_path, doc, verb="sweep")
    _, rows = cli.read_results(out)
    assert [(float(r["n_b"]), r["method"]) for r in rows] == [
        (0.5, "meanfield"), (1.0, "meanfield"), (1.0, "stochastic"), (2.0, "meanfield")]
    assert float(rows[2]["n_c_stderr"]) > 0


def test_rerun_from_result_file_is_byte_identical(tmp_path):
    doc = {"params": QUANTUM, "method": "stochastic", "schedule": SHORT, "ensemble": {"n_traj": 6}}
    code, first = run_cli(tmp_path, doc, extra=("--seed", "77", "--threads", "1"))
    assert code == 0
    second = tmp_path / "again.csv"
    assert cli.main(["run", "--config", str(first), "--out", str(second), "--threads", "3"]) == 0
    assert first.read_bytes() == second.read_bytes()
    raw, _ = cli.read_results(first)
    assert raw["ensemble"]["master_seed"] == 77


def test_json_output_and_rerun(tmp_path):
    doc = {"params": QUANTUM, "method": "meanfield"}
    code, out = run_cli(tmp_path, doc, extra=("--format", "json"), out="out.json")
    data = json.loads(out.read_text())
    assert data["columns"] == list(cli.COLUMNS)
    assert data["rows"][0]["n_c_mean"] == steady_state(cli.parse_config(doc).params).n_c
    again = tmp_path / "again.json"
    assert cli.main(["run", "--config", str(out), "--out", str(again)]) == 0
    assert again.read_bytes() == out.read_bytes()


def test_compare_reports_failed_method(tmp_path):
    doc = {"params": QUANTUM, "method": "compare", "schedule": SHORT, "ensemble": {"n_traj": 4},
           "truncation": {"n_a_dim": 6, "n_b_dim": 6, "n_c_dim": 6, "max_dim": 8}}
    code, out = run_cli(tmp_path, doc, verb="compare")
    assert code == 3
    _, rows = cli.read_results(out)
    assert [r["method"] for r in rows] == ["meanfield", "stochastic", "exact"]
    assert rows[2]["diagnostics"].startswith("FAILED:DimensionLimitError")
    assert math.isnan(float(rows[2]["n_c_mean"]))


def test_sweep_failure_flushes_partial_rows(tmp_path, monkeypatch):
    real = cli._row_fock

    def flaky(cfg, params, reduced):
        if params.n_b > 0.5:
            raise ArithmeticError("solver gave up")
        return real(cfg, params, reduced)

    monkeypatch.setattr(cli, "_row_fock", flaky)
    doc = {"params": QUANTUM, "method": "exact", "sweep": {"variable": "n_b", "grid": [0.1, 1.0, 2.0]}}
    code, out = run_cli(tmp_path, doc, verb="sweep")
    assert code == 3
    _, rows = cli.read_results(out)
    assert [(float(r["n_b"]), r["method"]) for r in rows] == [
        (0.1, "meanfield"), (0.1, "exact"), (1.0, "meanfield"), (1.0, "exact")]
    assert rows[-1]["diagnostics"] == "FAILED:ArithmeticError:solver gave up"
    assert not rows[1]["diagnostics"].startswith("FAILED")


def test_exact_and_reduced_rows(tmp_path):
    for method in ("exact", "reduced"):
        doc = {"params": dict(QUANTUM, g=0.0), "method": method}
        code, out = run_cli(tmp_path, doc, out=f"{method}.csv")
        assert code == 0
        _, rows = cli.read_results(out)
        assert float(rows[0]["n_a_mean"]) == pytest.approx(0.0, abs=1e-12)
        assert "truncation=" in rows[0]["diagnostics"]


def test_truncation_capped():
    cfg = cli.parse_config({"params": QUANTUM, "method": "exact"})
    t = cli._truncation_for(cfg, cfg.params)
    assert t.dim <= 512
    assert t.dims == (6, 9, 9)


@pytest.mark.parametrize("doc,fragment", [
    ({"params": QUANTUM}, "method"),
    ({"params": QUANTUM, "method": "nope"}, "method"),
    ({"params": dict(QUANTUM, temperature=3), "method": "meanfield"}, "params"),
    ({"params": dict(QUANTUM, kappa=0.0), "method": "meanfield"}, "kappa"),
    ({"params": QUANTUM, "method": "stochastic"}, "schedule"),
    ({"params": QUANTUM, "method": "meanfield", "sweep": {"variable": "n_b"}}, "sweep"),
    ({"params": QUANTUM, "method": "meanfield", "sweep": {"variable": "n_b", "grid": [-1.0]}}, "sweep"),
])
def test_config_errors_exit_2(tmp_path, capsys, doc, fragment):
    code, _ = run_cli(tmp_path, doc)
    assert code == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: ")
    payload = json.loads(err[len("error: "):])
    assert payload["type"] == "ConfigError"
    assert fragment in payload["message"]


def test_missing_config_file(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "absent.json")]) == 2


def test_unwritable_output(tmp_path, capsys):
    cfg = write(tmp_path, {"params": QUANTUM, "method": "meanfield"})
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "no" / "such" / "dir.csv")]) == 4


def test_convert_temp(capsys):
    assert cli.main(["convert-temp", "--temperature", "300", "--omega", str(2 * math.pi * 1e6)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["occupation"] == pytest.approx(6.25e6, rel=0.01)
    assert cli.main(["convert-temp", "--occupation", str(1 / (math.e - 1))]) == 0
    assert json.loads(capsys.readouterr().out)["temperature"] == pytest.approx(1.0)
    assert cli.main(["convert-temp", "--occupation", "-1"]) == 2
    assert cli.main(["convert-temp", "--temperature", "3"]) == 2

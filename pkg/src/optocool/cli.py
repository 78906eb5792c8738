"""
Command line driver: single runs, n_b sweeps and three-method comparisons.

Every result file starts with ``# config: {...}`` holding the full effective
configuration (including the master seed), followed by a CSV header and one
row per (grid point, method).  Feeding a result file back through
``--config`` reproduces it byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import fock, meanfield, stochastic
from .params import SystemParams, effective_temperature, dimensionless_temperature, report_temperature, validate

METHODS = ("meanfield", "stochastic", "exact", "reduced", "compare")
COMPARE_METHODS = ("meanfield", "stochastic", "exact")
COLUMNS = ("n_b", "method", "n_c_mean", "n_c_stderr", "n_a_mean", "effective_T", "diagnostics")
CONFIG_PREFIX = "# config: "
DEFAULT_N_TRAJ = 100

_number = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["params", "method"],
    "properties": {
        "params": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kappa", "gamma", "g"],
            "properties": {
                "kappa": _number, "gamma": _number, "g": _number,
                "n_b": _nonneg, "n_c": _nonneg, "delta": _number, "omega_c": _number,
                "omega_c_hz": {"type": ["number", "null"]},
            },
        },
        "method": {"enum": list(METHODS)},
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "required": ["t_end"],
            "properties": {
                "t_end": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "sample_stride": {"type": ["integer", "null"], "minimum": 1},
                "burn_in": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
        },
        "ensemble": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_traj": {"type": "integer", "minimum": 2},
                "master_seed": {"type": "integer", "minimum": 0},
                "force_coefficient": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["variable"],
            "properties": {
                "variable": {"const": "n_b"},
                "grid": {"type": "array", "items": _nonneg, "minItems": 1},
                "log_start": _number,
                "log_stop": _number,
                "num": {"type": "integer", "minimum": 1},
                "sub_grid": {"type": "array", "items": _nonneg},
            },
        },
        "truncation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_a_dim": {"type": "integer", "minimum": 2},
                "n_b_dim": {"type": "integer", "minimum": 2},
                "n_c_dim": {"type": "integer", "minimum": 2},
                "max_dim": {"type": "integer", "minimum": 8},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "format": {"enum": ["csv", "json"]},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    params: SystemParams
    method: str
    schedule: stochastic.Schedule | None = None
    n_traj: int = DEFAULT_N_TRAJ
    master_seed: int = 0
    force_coefficient: float = stochastic.FORCE_COEFFICIENT
    sweep: dict | None = None
    truncation: dict | None = None
    output_path: str | None = None
    output_format: str = "csv"
    raw: dict | None = None

    def grid(self) -> list[float]:
        if not self.sweep:
            return [self.params.n_b]
        if "grid" in self.sweep:
            return sorted(float(x) for x in self.sweep["grid"])
        return [float(x) for x in np.logspace(self.sweep["log_start"], self.sweep["log_stop"], self.sweep["num"])]

    def sub_grid(self) -> list[float]:
        grid = self.grid()
        if not self.sweep or "sub_grid" not in self.sweep:
            return grid
        wanted = [float(x) for x in self.sweep["sub_grid"]]
        return [x for x in grid if any(math.isclose(x, w, rel_tol=1e-9) for w in wanted)]


@dataclass
class ResultRow:
    n_b: float
    method: str
    n_c_mean: float
    n_c_stderr: float
    n_a_mean: float
    effective_T: float
    diagnostics: str = ""

    def cells(self) -> list[str]:
        return [_fmt(self.n_b), self.method, _fmt(self.n_c_mean), _fmt(self.n_c_stderr),
                _fmt(self.n_a_mean), _fmt(self.effective_T), self.diagnostics]


def _fmt(x: float) -> str:
    return repr(float(x))


def _diag(d: dict) -> str:
    parts = []
    for k, v in d.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        parts.append(f"{k}={v}")
    return ";".join(parts)


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a configuration document and build an :class:`ExperimentConfig`."""
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from None
    try:
        params = SystemParams.from_dict(data["params"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"params: {exc}") from None
    report = validate(params)
    if not report.ok:
        raise ConfigError("params: " + "; ".join(report.errors))
    method = data["method"]
    if method in ("stochastic", "compare") and "schedule" not in data:
        raise ConfigError(f"method {method!r} needs a schedule block")
    sweep = data.get("sweep")
    if sweep is not None:
        has_grid = "grid" in sweep
        has_log = all(k in sweep for k in ("log_start", "log_stop", "num"))
        if has_grid == has_log:
            raise ConfigError("sweep: give either 'grid' or all of 'log_start', 'log_stop', 'num'")
    schedule = None
    if "schedule" in data:
        s = data["schedule"]
        schedule = stochastic.Schedule(
            t_end=float(s["t_end"]), dt=s.get("dt"), sample_stride=s.get("sample_stride"),
            burn_in=float(s.get("burn_in", 0.5)),
        )
    ens = data.get("ensemble", {})
    out = data.get("output", {})
    return ExperimentConfig(
        params=params,
        method=method,
        schedule=schedule,
        n_traj=int(ens.get("n_traj", DEFAULT_N_TRAJ)),
        master_seed=int(ens.get("master_seed", 0)),
        force_coefficient=float(ens.get("force_coefficient", stochastic.FORCE_COEFFICIENT)),
        sweep=sweep,
        truncation=data.get("truncation"),
        output_path=out.get("path"),
        output_format=out.get("format", "csv"),
        raw=data,
    )


def load_config(path: str | Path) -> dict:
    """Read a JSON config, or the embedded config line of a result file."""
    text = Path(path).read_text()
    first = text.lstrip().splitlines()[0] if text.strip() else ""
    if first.startswith(CONFIG_PREFIX):
        return json.loads(first[len(CONFIG_PREFIX):])
    if first.startswith("{") and '"config"' in text[:2000]:
        doc = json.loads(text)
        if "config" in doc and "rows" in doc:
            return doc["config"]
    return json.loads(text)


# ----------------------------------------------------------------- methods

def _truncation_for(cfg: ExperimentConfig, params: SystemParams) -> fock.TruncationSpec:
    t = dict(cfg.truncation or {})
    max_dim = int(t.pop("max_dim", fock.DEFAULT_MAX_DIM))
    if {"n_a_dim", "n_b_dim", "n_c_dim"} <= set(t):
        return fock.TruncationSpec(t["n_a_dim"], t["n_b_dim"], t["n_c_dim"], max_dim=max_dim)
    mf = meanfield.steady_state(params)
    dims = [max(6, math.ceil(5 * (n + 1))) for n in (mf.n_a, params.n_b, mf.n_c)]
    for k, name in enumerate(("n_a_dim", "n_b_dim", "n_c_dim")):
        if name in t:
            dims[k] = int(t[name])
    while dims[0] * dims[1] * dims[2] > max_dim and max(dims) > 2:
        dims[int(np.argmax(dims))] -= 1
    return fock.TruncationSpec(*dims, max_dim=max_dim)


def _row_meanfield(cfg, params) -> ResultRow:
    ss = meanfield.steady_state(params)
    r = meanfield.rates(params)
    warn = [w.split(" ")[0] for w in validate(params).warnings]
    diag = {"n_c_tilde": r.n_c_tilde}
    if warn:
        diag["warnings"] = ",".join(warn)
    return ResultRow(params.n_b, "meanfield", ss.n_c, 0.0, ss.n_a, report_temperature(ss.n_c, params), _diag(diag))


def _row_stochastic(cfg, params, threads) -> ResultRow:
    if cfg.schedule is None:
        raise ConfigError("stochastic runs need a schedule block")
    ens = stochastic.run_ensemble(params, cfg.schedule, cfg.n_traj, cfg.master_seed, threads=threads,
                                  force_coefficient=cfg.force_coefficient)
    diag = {"n_traj": cfg.n_traj, "seed": cfg.master_seed, "dt": ens.schedule.dt, "blowups": len(ens.failed)}
    n_c = max(ens.steady_mean, 0.0)
    return ResultRow(params.n_b, "stochastic", ens.steady_mean, ens.steady_stderr, ens.steady_photon,
                     report_temperature(n_c, params), _diag(diag))


def _row_fock(cfg, params, reduced: bool) -> ResultRow:
    trunc = _truncation_for(cfg, params)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fock.TruncationWarning)
        if reduced:
            L = fock.liouvillian_reduced(params, trunc)
            label = f"{trunc.n_a_dim}x{trunc.n_c_dim}"
        else:
            L = fock.liouvillian_full(params, trunc)
            label = f"{trunc.n_a_dim}x{trunc.n_b_dim}x{trunc.n_c_dim}"
        res = fock.steady_state(L)
    diag = {"truncation": label, "residual": res.residual, "leakage": max(res.leakage.values()),
            "min_eig": res.min_eigenvalue}
    n_c = max(res.n_c, 0.0)
    return ResultRow(params.n_b, "reduced" if reduced else "exact", res.n_c, 0.0, res.n_a,
                     report_temperature(n_c, params), _diag(diag))


def _compute(cfg: ExperimentConfig, params: SystemParams, method: str, threads: int) -> ResultRow:
    if method == "meanfield":
        return _row_meanfield(cfg, params)
    if method == "stochastic":
        return _row_stochastic(cfg, params, threads)
    if method == "exact":
        return _row_fock(cfg, params, reduced=False)
    if method == "reduced":
        return _row_fock(cfg, params, reduced=True)
    raise ConfigError(f"unknown method {method!r}")


def _failure_row(n_b: float, method: str, exc: Exception) -> ResultRow:
    msg = f"FAILED:{type(exc).__name__}:{exc}".replace("\n", " ")
    nan = math.nan
    return ResultRow(n_b, method, nan, nan, nan, nan, msg)


class RunFailed(RuntimeError):
    def __init__(self, rows, errors):
        super().__init__("; ".join(errors))
        self.rows = rows
        self.errors = errors


def run(cfg: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    """Evaluate the configured method(s) at ``params.n_b``.

    ``compare`` yields meanfield, stochastic and exact rows; a failing method
    yields an explicit ``FAILED`` row and :class:`RunFailed` is raised after
    all methods were attempted.
    """
    methods = COMPARE_METHODS if cfg.method == "compare" else (cfg.method,)
    rows, errors = [], []
    for m in methods:
        try:
            rows.append(_compute(cfg, cfg.params, m, threads))
        except ConfigError:
            raise
        except Exception as exc:  # noqa: BLE001 - reported as a failure row
            rows.append(_failure_row(cfg.params.n_b, m, exc))
            errors.append(f"{m}: {exc}")
    if errors:
        raise RunFailed(rows, errors)
    return rows


def sweep(cfg: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    """One row per grid point and method, in increasing grid order.

    Mean-field is evaluated everywhere; the configured method (or all three
    for ``compare``) only on ``sweep.sub_grid`` (default: the full grid).
    Stops at the first failing point with a ``FAILED`` marker row.
    """
    if not cfg.sweep:
        raise ConfigError("sweep needs a sweep block")
    extra = [m for m in (COMPARE_METHODS if cfg.method == "compare" else (cfg.method,)) if m != "meanfield"]
    sub = cfg.sub_grid()
    rows = []
    for n_b in cfg.grid():
        params = cfg.params.replace(n_b=n_b)
        methods = ["meanfield"] + ([m for m in extra] if any(math.isclose(n_b, s, rel_tol=1e-9) for s in sub) else [])
        for m in methods:
            try:
                rows.append(_compute(cfg, params, m, threads))
            except ConfigError:
                raise
            except Exception as exc:  # noqa: BLE001
                rows.append(_failure_row(n_b, m, exc))
                raise RunFailed(rows, [f"{m} at n_b={n_b!r}: {exc}"]) from exc
    return rows


# ------------------------------------------------------------------ output

def config_line(raw: dict) -> str:
    return CONFIG_PREFIX + json.dumps(raw, sort_keys=True, separators=(",", ":"))


def render(rows: list[ResultRow], raw: dict, fmt: str = "csv") -> str:
    if fmt == "json":
        doc = {"config": raw, "columns": list(COLUMNS),
               "rows": [dict(zip(COLUMNS, [r.n_b, r.method, r.n_c_mean, r.n_c_stderr, r.n_a_mean,
                                           r.effective_T, r.diagnostics])) for r in rows]}
        return json.dumps(doc, sort_keys=True, indent=1, allow_nan=True) + "\n"
    buf = io.StringIO()
    buf.write(config_line(raw) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow(r.cells())
    return buf.getvalue()


def read_results(path: str | Path) -> tuple[dict, list[dict]]:
    """Parse a CSV result file into (config, rows)."""
    lines = Path(path).read_text().splitlines()
    raw = json.loads(lines[0][len(CONFIG_PREFIX):])
    reader = csv.DictReader(lines[1:])
    return raw, list(reader)


# --------------------------------------------------------------------- CLI

def _error(kind: str, message: str, code: int) -> int:
    sys.stderr.write("error: " + json.dumps({"type": kind, "message": message}) + "\n")
    return code


def _effective_raw(raw: dict, args, verb: str) -> dict:
    raw = json.loads(json.dumps(raw))
    if verb == "compare":
        raw["method"] = "compare"
    ens = raw.setdefault("ensemble", {})
    if args.seed is not None:
        ens["master_seed"] = args.seed
    ens.setdefault("master_seed", 0)
    out = raw.setdefault("output", {})
    if args.format is not None:
        out["format"] = args.format
    out.pop("path", None)
    if not out:
        raw.pop("output")
    return raw


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optocool", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, help_ in (("run", "evaluate the configured method at one n_b"),
                        ("sweep", "scan n_b over the sweep grid"),
                        ("compare", "meanfield, stochastic and exact side by side")):
        p = sub.add_parser(verb, help=help_)
        p.add_argument("--config", required=True, help="JSON config or a previous result file")
        p.add_argument("--out", help="output file (default: config output.path or stdout)")
        p.add_argument("--seed", type=int, help="override ensemble.master_seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for trajectories")
        p.add_argument("--format", choices=("csv", "json"))
    p = sub.add_parser("convert-temp", help="occupation <-> effective temperature")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--occupation", type=float)
    g.add_argument("--temperature", type=float, help="kelvin (needs --omega)")
    p.add_argument("--omega", type=float, help="angular frequency in rad/s; omit for units of hbar*omega_c/k_B")
    return parser


def _convert(args) -> int:
    from .params import thermal_occupation
    try:
        if args.occupation is not None:
            if args.omega is None:
                value = dimensionless_temperature(args.occupation)
                print(json.dumps({"occupation": args.occupation, "temperature": value, "unit": "hbar*omega_c/k_B"}))
            else:
                value = effective_temperature(args.occupation, args.omega)
                print(json.dumps({"occupation": args.occupation, "temperature": value, "unit": "K"}))
        else:
            if args.omega is None:
                return _error("ConfigError", "--temperature needs --omega", 2)
            value = thermal_occupation(args.temperature, args.omega)
            print(json.dumps({"temperature": args.temperature, "occupation": value}))
    except ValueError as exc:
        return _error("ValueError", str(exc), 2)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "convert-temp":
        return _convert(args)
    try:
        original = load_config(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        return _error("ConfigError", f"cannot read config: {exc}", 2)
    try:
        raw = _effective_raw(original, args, args.verb)
        cfg = parse_config(raw)
    except (ConfigError, AttributeError, TypeError) as exc:
        return _error("ConfigError", str(exc), 2)
    out_path = args.out or (original.get("output") or {}).get("path")
    code = 0
    try:
        rows = sweep(cfg, args.threads) if args.verb == "sweep" else run(cfg, args.threads)
    except ConfigError as exc:
        return _error("ConfigError", str(exc), 2)
    except RunFailed as exc:
        rows = exc.rows
        code = _error("ModuleError", str(exc), 3)
    text = render(rows, raw, cfg.output_format)
    try:
        if out_path:
            Path(out_path).write_text(text)
        else:
            sys.stdout.write(text)
    except OSError as exc:
        return _error("IOError", str(exc), 4)
    if out_path:
        for r in rows:
            print(f"{r.method:>10}  n_b={r.n_b:<12.6g} n_c={r.n_c_mean:<14.8g} +- {r.n_c_stderr:<10.3g} n_a={r.n_a_mean:.6g}")
    return code


if __name__ == "__main__":
    sys.exit(main())

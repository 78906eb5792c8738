"""Exit criteria of the project, one test per checkable clause.

Each test carries an ``acceptance`` label ``Cn.x``; the terminal summary
prints one line per clause and one aggregate line per criterion.
"""
import json
import math
import time
import warnings

import numpy as np
import pytest

from optocool import cli, fock, meanfield, stochastic
from optocool.meanfield import OccupationPair
from optocool.params import QUANTUM_REGIME, SystemParams, room_temperature

acc = pytest.mark.acceptance

ROOM_GRID = np.logspace(2, 12, 21)
SPOT_CHECKS = (1e7, 10**7.5, 1e8)


@pytest.fixture(scope="module")
def exact666():
    start = time.perf_counter()
    L = fock.liouvillian_full(QUANTUM_REGIME, fock.TruncationSpec(6, 6, 6))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fock.TruncationWarning)
        res = fock.steady_state(L)
    return res, time.perf_counter() - start, L


@pytest.fixture(scope="module")
def quantum_ensemble():
    start = time.perf_counter()
    ens = stochastic.run_ensemble(QUANTUM_REGIME, stochastic.Schedule(t_end=10 / QUANTUM_REGIME.gamma),
                                  n_traj=100, master_seed=2024)
    return ens, time.perf_counter() - start


# ----------------------------------------------------------------- C1

@acc("C1.a exact <n_c> at (6,6,6) solved in < 2 min, eigen path agrees to 1e-6")
def test_c1_exact_oracle(exact666):
    res, seconds, L = exact666
    eig = fock.steady_state_eigen(L)
    print(f"exact(6,6,6) n_c={res.n_c:.10f} eigen={eig.n_c:.10f} t={seconds:.1f}s")
    assert seconds < 120
    assert res.n_c == pytest.approx(eig.n_c, rel=1e-6)
    assert res.residual <= 1e-8


@acc("C1.b exact <n_c> stable to 1% from (6,6,6) to (8,8,8)")
def test_c1_truncation_stability(exact666):
    start = time.perf_counter()
    big = fock.steady_state(fock.liouvillian_full(QUANTUM_REGIME, fock.TruncationSpec(8, 8, 8)))
    seconds = time.perf_counter() - start
    change = abs(big.n_c - exact666[0].n_c) / big.n_c
    print(f"exact(8,8,8) n_c={big.n_c:.10f} relative change {change:.4f} t={seconds:.1f}s")
    assert seconds < 120
    assert change <= 0.01


@acc("C1.c stochastic (t_end=10/gamma, 100 traj) within max(10%, 3 SE) of exact, < 5 min")
def test_c1_stochastic(exact666, quantum_ensemble):
    ens, seconds = quantum_ensemble
    exact = exact666[0].n_c
    tol = max(0.10 * exact, 3 * ens.steady_stderr)
    print(f"stochastic n_c={ens.steady_mean:.6f} +- {ens.steady_stderr:.2g} vs exact {exact:.6f} t={seconds:.1f}s")
    assert seconds < 300
    assert abs(ens.steady_mean - exact) <= tol


@acc("C1.d mean-field closed form within 25% of exact")
def test_c1_meanfield(exact666):
    mf = meanfield.steady_state(QUANTUM_REGIME).n_c
    exact = exact666[0].n_c
    print(f"meanfield n_c={mf:.6f} relative gap {abs(mf - exact) / exact:.4f}")
    assert abs(mf - exact) <= 0.25 * exact


# ----------------------------------------------------------------- C2

def room_curve():
    return np.array([meanfield.steady_state(room_temperature(nb)).n_c for nb in ROOM_GRID])


@acc("C2.a mean-field <n_c>(n_b) on 21-point log grid has an interior minimum")
def test_c2_nonmonotonic():
    n_c = room_curve()
    k = int(np.argmin(n_c))
    print(f"argmin n_b={ROOM_GRID[k]:.3g} min n_c={n_c[k]:.6g}")
    assert 0 < k < len(ROOM_GRID) - 1
    assert n_c[0] > n_c[k] < n_c[-1]


@acc("C2.b minimum <n_c> at least a factor 10 below n_c")
def test_c2_cooling_factor():
    n_c = room_curve()
    bath = room_temperature().n_c
    print(f"bath n_c={bath:.6g} min={n_c.min():.6g} ratio={bath / n_c.min():.3f}")
    assert n_c.min() <= bath / 10


@pytest.mark.slow
@pytest.mark.parametrize("n_b", SPOT_CHECKS, ids=["1e7", "10^7.5", "1e8"])
@acc("C2.c stochastic spot check within 3 SE of mean-field")
def test_c2_spot_checks(n_b):
    p = room_temperature(n_b)
    ens = stochastic.run_ensemble(p, stochastic.Schedule(t_end=5000.0), n_traj=100, master_seed=7)
    mf = meanfield.steady_state(p).n_c
    z = (ens.steady_mean - mf) / ens.steady_stderr
    print(f"n_b={n_b:.3g} stochastic={ens.steady_mean:.6g} +- {ens.steady_stderr:.3g} meanfield={mf:.6g} z={z:.2f}")
    assert abs(z) <= 3


# ----------------------------------------------------------------- C3

DECOUPLED = {"g=0": QUANTUM_REGIME.replace(g=0.0), "n_b=0": QUANTUM_REGIME.replace(n_b=0.0)}


@pytest.mark.parametrize("case", list(DECOUPLED))
@acc("C3.a decoupled limit exact in mean-field (1e-9)")
def test_c3_meanfield(case):
    ss = meanfield.steady_state(DECOUPLED[case])
    assert abs(ss.n_c - 1.0) <= 1e-9 and abs(ss.n_a) <= 1e-9


@pytest.mark.parametrize("case", list(DECOUPLED))
@acc("C3.b decoupled limit in stochastic sampler (3 SE)")
def test_c3_stochastic(case):
    ens = stochastic.run_ensemble(DECOUPLED[case], stochastic.Schedule(t_end=500.0), n_traj=20, master_seed=1)
    tol = max(3 * ens.steady_stderr, 1e-9)
    assert abs(ens.steady_mean - 1.0) <= tol
    assert abs(ens.steady_photon) <= max(3 * ens.steady_photon_stderr, 1e-9)
    assert np.max(np.abs(ens.mean_phonon - 1.0)) <= 1e-9


@pytest.mark.parametrize("case", list(DECOUPLED))
@acc("C3.c decoupled limit in exact solver (1e-6, truncation 2x2x30)")
def test_c3_exact(case):
    res = fock.steady_state(fock.liouvillian_full(DECOUPLED[case], fock.TruncationSpec(2, 2, 30)))
    assert abs(res.n_c - 1.0) <= 1e-6
    assert abs(res.n_a) <= 1e-6


# ----------------------------------------------------------------- C4

@pytest.fixture(scope="module")
def ou_paths():
    p = SystemParams(kappa=0.1, gamma=0.05, g=0.0, n_b=2.0, n_c=0.0)
    sched = stochastic.Schedule(t_end=60.0, dt=0.005, sample_stride=100)
    ens = stochastic.run_ensemble(p, sched, n_traj=2000, master_seed=99, keep_trajectories=True)
    return p, 100 * 0.005, ens.per_trajectory


@acc("C4.a time-averaged E|beta|^2 = n_b within 3 SE over 2000 trajectories")
def test_c4_variance(ou_paths):
    p, _, beta = ou_paths
    per = np.mean(np.abs(beta) ** 2, axis=1)
    se = per.std(ddof=1) / math.sqrt(len(per))
    print(f"E|beta|^2={per.mean():.4f} +- {se:.3g} (n_b={p.n_b})")
    assert abs(per.mean() - p.n_b) <= 3 * se


@pytest.mark.parametrize("lag_kappa", [0.5, 1.0, 2.0])
@acc("C4.b autocorrelation n_b exp(-kappa s) within 3 SE")
def test_c4_autocorrelation(ou_paths, lag_kappa):
    p, spacing, beta = ou_paths
    lag = int(round(lag_kappa / p.kappa / spacing))
    corr = beta[:, :-lag] * np.conj(beta[:, lag:])
    per = corr.mean(axis=1)
    target = p.n_b * math.exp(-lag_kappa)
    se_re = per.real.std(ddof=1) / math.sqrt(len(per))
    se_im = per.imag.std(ddof=1) / math.sqrt(len(per))
    print(f"s={lag_kappa}/kappa corr={per.mean():.4f} target={target:.4f} se={se_re:.3g}")
    assert abs(per.real.mean() - target) <= 3 * se_re
    assert abs(per.imag.mean()) <= 3 * se_im


# ----------------------------------------------------------------- C5

def random_parameter_sets(n=10, seed=5):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        out.append(SystemParams(
            kappa=rng.uniform(0.05, 0.5), gamma=rng.uniform(0.005, 0.05), g=rng.uniform(0.001, 0.08),
            n_b=rng.uniform(0.0, 0.3), n_c=rng.uniform(0.0, 0.3), delta=rng.uniform(0.9, 1.1),
        ))
    return out


@pytest.mark.parametrize("kind", ["full", "reduced"])
@acc("C5 Lindblad structure: trace, Hermiticity (1e-12), positivity, residual (10 parameter sets)")
def test_c5_lindblad_structure(kind):
    rng = np.random.default_rng(17)
    for p in random_parameter_sets():
        if kind == "full":
            L = fock.liouvillian_full(p, fock.TruncationSpec(3, 4, 4))
        else:
            L = fock.liouvillian_reduced(p, (4, 6))
        d = L.dim
        for _ in range(5):
            x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
            h = x + x.conj().T
            assert abs(np.trace(L.apply(h))) <= 1e-12
            assert np.max(np.abs(L.apply(x).conj().T - L.apply(x.conj().T))) <= 1e-12
        res = fock.steady_state(L)
        assert res.min_eigenvalue >= -1e-8
        assert res.residual <= 1e-8
        assert res.trace_error <= 1e-10


# ----------------------------------------------------------------- C6

@pytest.mark.parametrize("params", [QUANTUM_REGIME, room_temperature(1e8)], ids=["quantum", "room-1e8"])
@acc("C6.a mean-field ODE long-time limit equals closed form (rel 1e-6)")
def test_c6_long_time(params):
    t_end = 40 / params.gamma
    out = meanfield.evolve_occupations(params, OccupationPair(0.0, params.n_c), np.linspace(0, t_end, 41))
    ss = meanfield.steady_state(params)
    assert out.n_c[-1] == pytest.approx(ss.n_c, rel=1e-6)
    assert out.n_a[-1] == pytest.approx(ss.n_a, rel=1e-6)


@acc("C6.b undamped exchange conserves <n_a>+<n_c> to 1e-9")
def test_c6_conservation():
    coupling = QUANTUM_REGIME.g**2 / QUANTUM_REGIME.kappa
    for n_b, start in ((1.0, (0.0, 1.0)), (5.0, (2.0, 0.3)), (0.0, (1.5, 0.5))):
        out = meanfield.evolve_exchange(coupling * 50, n_b, OccupationPair(*start), np.linspace(0, 200, 21))
        total = out.n_a + out.n_c
        assert np.max(np.abs(total - sum(start))) <= 1e-9 * sum(start)


# ----------------------------------------------------------------- C7

def _rerun(tmp_path, doc, verb, threads):
    cfg = tmp_path / f"{verb}.json"
    cfg.write_text(json.dumps(doc))
    first = tmp_path / f"{verb}-1.csv"
    assert cli.main([verb, "--config", str(cfg), "--out", str(first), "--threads", "1"]) == 0
    second = tmp_path / f"{verb}-2.csv"
    assert cli.main([verb, "--config", str(first), "--out", str(second), "--threads", str(threads)]) == 0
    return first.read_bytes(), second.read_bytes()


@acc("C7.a stochastic run regenerated from its result file is byte-identical across thread counts")
def test_c7_run(tmp_path):
    doc = {"params": QUANTUM_REGIME.to_dict(), "method": "stochastic", "schedule": {"t_end": 300.0},
           "ensemble": {"n_traj": 12, "master_seed": 31337}}
    a, b = _rerun(tmp_path, doc, "run", threads=4)
    assert a == b


@acc("C7.b sweep regenerated from its result file is byte-identical across thread counts")
def test_c7_sweep(tmp_path):
    doc = {"params": QUANTUM_REGIME.to_dict(), "method": "stochastic", "schedule": {"t_end": 200.0},
           "ensemble": {"n_traj": 6, "master_seed": 8},
           "sweep": {"variable": "n_b", "grid": [0.5, 1.0, 2.0], "sub_grid": [0.5, 2.0]}}
    a, b = _rerun(tmp_path, doc, "sweep", threads=3)
    assert a == b

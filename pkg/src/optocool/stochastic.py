"""
Sampling over Gaussian states driven by a classical colored noise.

Mode b is replaced by a complex Ornstein-Uhlenbeck amplitude ``beta``.  For
every realization of ``beta`` the modes a and c stay Gaussian, so each
trajectory carries only the quadrature means ``u = [x_c, y_c, x_a, y_a]``
(vacuum variance 1/2) and the non-central second moments
``V = Re <u u^T>``.  Averaging ``(V11 + V22 - 1) / 2`` over realizations
estimates the phonon number.

Integration is Euler-Maruyama for ``beta`` and explicit Euler for the moments
on the same grid.  Trajectory ``i`` of an ensemble draws from
``SeedSequence(master_seed, spawn_key=(i,))`` with a PCG64 generator and
NumPy's ziggurat normal transform, so results do not depend on execution
order or thread count.

The radiation-pressure drive on ``y_c`` defaults to ``sqrt(2) g |beta|^2``,
which is what ``g |beta|^2 (c + c^dag) = sqrt(2) g |beta|^2 x_c`` gives in
this quadrature convention; pass ``force_coefficient=1.0`` for the
unnormalized ``g |beta|^2`` drive.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .params import SystemParams, validate

FORCE_COEFFICIENT = math.sqrt(2.0)
UNNORMALIZED_FORCE = 1.0
DEFAULT_DT = 2 * math.pi * 1e-3
BLOWUP_LIMIT = _kernels.BLOWUP_LIMIT
PHONON_TOLERANCE = 1e-6
MAX_FAILED_FRACTION = 0.01
TARGET_SAMPLES = 2000
CHUNK_STEPS = 1 << 16


class NumericalBlowupError(FloatingPointError):
    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class EnsembleError(RuntimeError):
    pass


@dataclass
class NoiseState:
    beta: complex
    rng: np.random.Generator


@dataclass
class GaussianTrajectoryState:
    mean: np.ndarray
    second_moments: np.ndarray
    time: float = 0.0

    @property
    def phonon_number(self) -> float:
        V = self.second_moments
        return 0.5 * (V[0, 0] + V[1, 1] - 1.0)

    @property
    def photon_number(self) -> float:
        V = self.second_moments
        return 0.5 * (V[2, 2] + V[3, 3] - 1.0)


@dataclass(frozen=True)
class Schedule:
    """Time grid of a run.

    ``dt=None`` picks ``min(2 pi 1e-3, stable_dt(params))``.
    ``sample_stride`` is the number of Euler steps between stored samples;
    ``None`` keeps about 2000 samples.  Steady-state averages use every step
    after the first ``burn_in`` fraction of the run.
    """

    t_end: float
    dt: float | None = None
    sample_stride: int | None = None
    burn_in: float = 0.5

    def resolve(self, params: SystemParams) -> "Schedule":
        dt = self.dt if self.dt is not None else min(DEFAULT_DT, stable_dt(params))
        n = max(1, round(self.t_end / dt))
        stride = self.sample_stride if self.sample_stride is not None else max(1, n // TARGET_SAMPLES)
        return replace(self, dt=dt, sample_stride=int(stride))

    @property
    def n_steps(self) -> int:
        return max(1, round(self.t_end / self.dt))


@dataclass
class TrajectoryResult:
    t: np.ndarray
    phonon: np.ndarray
    photon: np.ndarray
    beta: np.ndarray
    steady_phonon: float
    steady_photon: float
    min_phonon: float
    final: GaussianTrajectoryState
    seed: object = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class EnsembleSeries:
    t_grid: np.ndarray
    mean_phonon: np.ndarray
    std_error: np.ndarray
    n_traj: int
    master_seed: int
    mean_photon: np.ndarray | None = None
    steady_mean: float = math.nan
    steady_stderr: float = math.nan
    steady_photon: float = math.nan
    steady_photon_stderr: float = math.nan
    per_trajectory: np.ndarray | None = None
    failed: list = field(default_factory=list)
    schedule: Schedule | None = None


# ------------------------------------------------------------------ noise

def step_noise(state: NoiseState, params: SystemParams, dt: float) -> NoiseState:
    """One Euler-Maruyama step of ``d beta = -kappa beta dt + sqrt(kappa n_b) (dW_x + i dW_y)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    z = state.rng.standard_normal(2)
    amp = math.sqrt(params.kappa * params.n_b * dt)
    re = state.beta.real - params.kappa * state.beta.real * dt + amp * z[0]
    im = state.beta.imag - params.kappa * state.beta.imag * dt + amp * z[1]
    return NoiseState(complex(re, im), state.rng)


def sample_stationary_noise(params: SystemParams, rng: np.random.Generator) -> NoiseState:
    """Circular complex normal start with ``E|beta|^2 = n_b``."""
    z = rng.standard_normal(2)
    s = math.sqrt(params.n_b / 2.0)
    return NoiseState(complex(s * z[0], s * z[1]), rng)


def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(index,))))


# ---------------------------------------------------------------- moments

def drift_matrix(params: SystemParams, beta: complex) -> np.ndarray:
    g = params.g
    bx = (beta + np.conj(beta)).real
    by = (1j * (np.conj(beta) - beta)).real
    w, k, gam, dlt = params.omega_c, params.kappa, params.gamma, params.delta
    return np.array([
        [-gam, w, 0.0, 0.0],
        [-w, -gam, g * bx, g * by],
        [-g * by, 0.0, -k, dlt],
        [g * bx, 0.0, -dlt, -k],
    ])


def drive_vector(params: SystemParams, beta: complex, force_coefficient: float = FORCE_COEFFICIENT) -> np.ndarray:
    return np.array([0.0, force_coefficient * params.g * abs(beta) ** 2, 0.0, 0.0])


def diffusion_matrix(params: SystemParams) -> np.ndarray:
    m = params.gamma * (2 * params.n_c + 1)
    return np.diag([m, m, params.kappa, params.kappa])


def initial_state(params: SystemParams) -> GaussianTrajectoryState:
    """Thermal mechanical mode at ``n_c``, optical mode a in vacuum."""
    v = params.n_c + 0.5
    return GaussianTrajectoryState(np.zeros(4), np.diag([v, v, 0.5, 0.5]), 0.0)


def step_moments(state: GaussianTrajectoryState, A: np.ndarray, f: np.ndarray,
                 params: SystemParams, dt: float) -> GaussianTrajectoryState:
    """Euler step of the first and non-central second moments.

    Raises
    ------
    NumericalBlowupError
        If any entry of the new ``V`` is non-finite or exceeds ``1e15``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    u, V = state.mean, state.second_moments
    F = np.outer(f, u) + np.outer(u, f)
    u_new = u + (A @ u + f) * dt
    V_new = V + (A @ V + V @ A.T + diffusion_matrix(params) + F) * dt
    V_new = 0.5 * (V_new + V_new.T)
    t = state.time + dt
    if not np.all(np.abs(V_new) <= BLOWUP_LIMIT):
        raise NumericalBlowupError(f"second moments blew up at t={t:g}", time=t)
    return GaussianTrajectoryState(u_new, V_new, t)


# ------------------------------------------------------------- schedules

def stable_dt(params: SystemParams, safety: float = 0.5) -> float:
    """Largest explicit-Euler step keeping every oscillating moment damped.

    A Lyapunov mode with eigenvalue ``-r + i w`` is contracted by Euler only
    when ``dt < 2 r / (r**2 + w**2)``.
    """
    w, dlt, k, gam = params.omega_c, params.delta, params.kappa, params.gamma
    modes = [
        (2 * gam, 2 * w),
        (2 * k, 2 * dlt),
        (k + gam, w + dlt),
        (k + gam, abs(w - dlt)),
    ]
    bound = min(2 * r / (r * r + x * x) for r, x in modes)
    return safety * bound


def typical_beta(params: SystemParams) -> float:
    return math.sqrt(params.n_b) + 3.0 * math.sqrt(params.n_b / 2.0)


def check_schedule(params: SystemParams, schedule: Schedule) -> None:
    dt = schedule.dt
    if not dt > 0 or not schedule.t_end > 0:
        raise ValueError("dt and t_end must be positive")
    scale = max(params.omega_c, params.delta, params.kappa, params.g * typical_beta(params))
    if dt * scale >= 0.05:
        raise ValueError(f"dt={dt:g} too coarse: dt * max rate = {dt * scale:.3g} >= 0.05")
    if dt > stable_dt(params, safety=1.0):
        raise ValueError(f"dt={dt:g} exceeds the explicit-Euler stability bound {stable_dt(params, 1.0):.3g}")
    if not 0 <= schedule.burn_in < 1:
        raise ValueError("burn_in must lie in [0, 1)")
    if schedule.sample_stride < 1:
        raise ValueError("sample_stride must be a positive integer")


# ----------------------------------------------------------- trajectories

class _Trajectory:
    """Mutable per-trajectory buffers for the compiled kernel."""

    def __init__(self, params, schedule, beta0, force):
        self.p = params
        self.s = schedule
        self.force = force
        n = schedule.n_steps
        stride = schedule.sample_stride
        m = n // stride + 1
        self.beta = np.array([beta0.real, beta0.imag])
        init = initial_state(params)
        self.u = init.mean.copy()
        self.V = init.second_moments.copy()
        self.out_nc = np.empty(m)
        self.out_na = np.empty(m)
        self.out_beta = np.empty((m, 2))
        self.out_nc[0] = init.phonon_number
        self.out_na[0] = init.photon_number
        self.out_beta[0] = self.beta
        self.burn_step = int(math.floor(schedule.burn_in * n)) + 1
        self.acc = np.array([0.0, 0.0, 0.0, np.inf])
        self.step = 0
        self.blowup = -1

    def advance(self, z):
        p = self.p
        status = _kernels.integrate_chunk(
            self.beta, self.u, self.V, z, self.s.dt, p.kappa, p.gamma, p.g, p.n_b, p.n_c,
            p.delta, p.omega_c, self.force, self.step, self.s.sample_stride, self.burn_step,
            self.out_nc, self.out_na, self.out_beta, self.acc,
        )
        self.step += z.shape[0]
        if status >= 0:
            self.blowup = status
        return status < 0

    def result(self, seed) -> TrajectoryResult:
        if self.blowup >= 0:
            t = self.blowup * self.s.dt
            raise NumericalBlowupError(f"second moments blew up at t={t:g}", time=t)
        stride = self.s.sample_stride
        m = len(self.out_nc)
        t = np.arange(m) * stride * self.s.dt
        count = self.acc[2]
        steady_nc = self.acc[0] / count if count else math.nan
        steady_na = self.acc[1] / count if count else math.nan
        diag = {}
        if self.acc[3] < -PHONON_TOLERANCE:
            diag["negative_phonon"] = float(self.acc[3])
        final = GaussianTrajectoryState(self.u.copy(), self.V.copy(), self.step * self.s.dt)
        return TrajectoryResult(
            t=t,
            phonon=self.out_nc.copy(),
            photon=self.out_na.copy(),
            beta=self.out_beta[:, 0] + 1j * self.out_beta[:, 1],
            steady_phonon=float(steady_nc),
            steady_photon=float(steady_na),
            min_phonon=float(self.acc[3]),
            final=final,
            seed=seed,
            diagnostics=diag,
        )


def _prepare(params, schedule):
    validate(params).raise_for_errors()
    schedule = schedule.resolve(params)
    check_schedule(params, schedule)
    return schedule


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _run(params, schedule, rng, force, seed=None) -> TrajectoryResult:
    beta0 = sample_stationary_noise(params, rng).beta
    traj = _Trajectory(params, schedule, beta0, force)
    n = schedule.n_steps
    while traj.step < n:
        m = min(CHUNK_STEPS, n - traj.step)
        if not traj.advance(rng.standard_normal((m, 2))):
            break
    return traj.result(seed)


def run_trajectory(params: SystemParams, schedule: Schedule, seed=0,
                   force_coefficient: float = FORCE_COEFFICIENT) -> TrajectoryResult:
    """Integrate one realization and return its sampled phonon series.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``; the run is
    a deterministic function of (params, schedule, seed).
    """
    schedule = _prepare(params, schedule)
    return _run(params, schedule, _as_rng(seed), force_coefficient, seed)


def run_ensemble(params: SystemParams, schedule: Schedule, n_traj: int, master_seed: int = 0,
                 threads: int = 1, force_coefficient: float = FORCE_COEFFICIENT,
                 keep_trajectories: bool = False) -> EnsembleSeries:
    """Average ``n_traj`` independent trajectories.

    Trajectory ``i`` uses ``trajectory_rng(master_seed, i)``.  Results are
    collected by index and reduced in index order, so the output is
    bit-identical for any ``threads``.  Trajectories that blow up are
    excluded and listed in ``failed``; more than 1% failures raise
    :class:`EnsembleError`.
    """
    if n_traj < 2:
        raise ValueError("n_traj must be at least 2")
    schedule = _prepare(params, schedule)

    def work(i):
        try:
            return _run(params, schedule, trajectory_rng(master_seed, i), force_coefficient, seed=(master_seed, i))
        except NumericalBlowupError as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(n_traj)))
    else:
        results = [work(i) for i in range(n_traj)]

    failed = [(i, r.time) for i, r in enumerate(results) if isinstance(r, NumericalBlowupError)]
    if len(failed) > MAX_FAILED_FRACTION * n_traj:
        raise EnsembleError(f"{len(failed)} of {n_traj} trajectories blew up (first at index {failed[0][0]}, t={failed[0][1]:g})")
    good = [r for r in results if not isinstance(r, NumericalBlowupError)]
    phonon = np.stack([r.phonon for r in good])
    photon = np.stack([r.photon for r in good])
    steady = np.array([r.steady_phonon for r in good])
    steady_a = np.array([r.steady_photon for r in good])
    n = len(good)
    return EnsembleSeries(
        t_grid=good[0].t,
        mean_phonon=phonon.mean(axis=0),
        std_error=phonon.std(axis=0, ddof=1) / math.sqrt(n),
        n_traj=n_traj,
        master_seed=master_seed,
        mean_photon=photon.mean(axis=0),
        steady_mean=float(steady.mean()),
        steady_stderr=float(steady.std(ddof=1) / math.sqrt(n)),
        steady_photon=float(steady_a.mean()),
        steady_photon_stderr=float(steady_a.std(ddof=1) / math.sqrt(n)),
        per_trajectory=np.stack([r.beta for r in good]) if keep_trajectories else None,
        failed=failed,
        schedule=schedule,
    )


def halving_check(params: SystemParams, schedule: Schedule, n_traj: int, master_seed: int = 0,
                  force_coefficient: float = FORCE_COEFFICIENT) -> dict:
    """Compare steady means at ``dt`` and ``dt/2`` on the same Brownian paths.

    The fine run draws its own increments; each coarse increment is the sum
    of two fine ones, rescaled to unit variance.
    """
    coarse_s = _prepare(params, schedule)
    fine_s = replace(coarse_s, dt=coarse_s.dt / 2, sample_stride=coarse_s.sample_stride * 2)
    check_schedule(params, fine_s)
    coarse_vals, fine_vals = [], []
    for i in range(n_traj):
        rng = trajectory_rng(master_seed, i)
        beta0 = sample_stationary_noise(params, rng).beta
        tc = _Trajectory(params, coarse_s, beta0, force_coefficient)
        tf = _Trajectory(params, fine_s, beta0, force_coefficient)
        n = coarse_s.n_steps
        while tc.step < n:
            m = min(CHUNK_STEPS, n - tc.step)
            zf = rng.standard_normal((2 * m, 2))
            zc = (zf[0::2] + zf[1::2]) / math.sqrt(2.0)
            tc.advance(zc)
            tf.advance(zf)
        coarse_vals.append(tc.result(None).steady_phonon)
        fine_vals.append(tf.result(None).steady_phonon)
    c = np.array(coarse_vals)
    f = np.array(fine_vals)
    se = math.sqrt(c.var(ddof=1) / n_traj + f.var(ddof=1) / n_traj)
    return {
        "dt": coarse_s.dt,
        "coarse_mean": float(c.mean()),
        "fine_mean": float(f.mean()),
        "difference": float(f.mean() - c.mean()),
        "std_error": se,
        "converged": abs(f.mean() - c.mean()) < se,
    }

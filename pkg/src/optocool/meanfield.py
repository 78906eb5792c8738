"""
Weak-coupling (mean-field) description of the mechanical and optical occupations.

Mode b is treated as a bath for modes a and c.  Its intensity noise
renormalizes the mechanical bath occupation, and its amplitude noise opens
the cooling channel a c^dag / a^dag c.  The occupation equations are closed by
factorizing <n_a n_c> = <n_a><n_c>.

The printed adjoint equations carry two typos that are corrected here: the
mechanical damping term is -2 gamma n_c (not -2 kappa n_c), and the n_a n_c
term inside the bracket of dn_a/dt enters with a plus sign so that the
beam-splitter coupling conserves n_a + n_c.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .params import SystemParams, validate


class StepSizeError(RuntimeError):
    """Raised when a fixed RK4 step changes the state by more than allowed."""


@dataclass(frozen=True)
class MeanFieldRates:
    rate_down: float
    rate_up: float
    heat_rate: float
    n_c_tilde: float
    eta: float

    @property
    def decoupled(self) -> bool:
        # g = 0 makes eta infinite, consumers must use the decoupled limits
        return math.isinf(self.eta)


@dataclass(frozen=True)
class OccupationPair:
    n_a: float
    n_c: float


@dataclass
class OccupationSeries:
    t: np.ndarray
    n_a: np.ndarray
    n_c: np.ndarray
    clamped: bool = False
    converged: bool | None = None
    diagnostics: dict = field(default_factory=dict)

    def __getitem__(self, i: int) -> OccupationPair:
        return OccupationPair(float(self.n_a[i]), float(self.n_c[i]))

    def __len__(self) -> int:
        return len(self.t)


def rates(params: SystemParams) -> MeanFieldRates:
    """Jump rates, extra mechanical diffusion and the constant eta.

    ``eta`` is returned as ``math.inf`` when ``g == 0``.
    """
    validate(params).raise_for_errors()
    k, gam, g, nb = params.kappa, params.gamma, params.g, params.n_b
    g2 = g * g
    heat = 2.0 * k * g2 * (nb * nb + nb) / (4.0 * k * k + params.omega_c**2)
    if g == 0:
        eta = math.inf
    else:
        eta = 1.0 + nb * (1.0 + k / gam) + 2.0 * k * k / g2
    return MeanFieldRates(
        rate_down=g2 * (1.0 + nb) / (2.0 * k),
        rate_up=g2 * nb / (2.0 * k),
        heat_rate=heat,
        n_c_tilde=params.n_c + heat / gam,
        eta=eta,
    )


def steady_state(params: SystemParams) -> OccupationPair:
    """Closed-form mean-field steady state (n_a, n_c).

    ``n_c`` is the positive root of
    ``y**2 + y*(eta - n_c_tilde) - n_c_tilde*(eta - n_b*kappa/gamma) = 0``,
    evaluated in the cancellation-free form.  ``n_a`` follows from the
    stationary photon equation, which is algebraically the same as
    ``(n_c_tilde - n_c) * gamma / kappa`` but stays exact for ``n_b = 0``.
    """
    r = rates(params)
    if r.decoupled:
        return OccupationPair(0.0, float(params.n_c))
    k, gam, nb = params.kappa, params.gamma, params.n_b
    nct, eta = r.n_c_tilde, r.eta
    b = eta - nct
    c = nct * (eta - nb * k / gam)
    disc = b * b + 4.0 * c
    if disc < 0:
        raise ArithmeticError(f"negative discriminant {disc!r} in mean-field steady state")
    root = math.sqrt(disc)
    if b > 0:
        y = 2.0 * c / (b + root)
    else:
        y = 0.5 * (root - b)
    coupling = params.g**2 / k
    x = coupling * nb * y / (2.0 * k + coupling * (nb + 1.0 + y))
    return OccupationPair(x, y)


def occupation_rhs(
    x: float,
    y: float,
    damping_a: float,
    damping_c: float,
    coupling: float,
    n_b: float,
    n_c_tilde: float,
) -> tuple[float, float]:
    """Time derivatives of (<n_a>, <n_c>) in the factorized closure.

    ``damping_a``/``damping_c`` are the amplitude decay rates kappa/gamma and
    ``coupling`` is g**2/kappa.  Keeping them separate lets the damping be
    switched off while the coupling stays finite.
    """
    exchange = (n_b + 1.0) * x - n_b * y + x * y
    dx = -2.0 * damping_a * x - coupling * exchange
    dy = -2.0 * damping_c * (y - n_c_tilde) + coupling * exchange
    return dx, dy


def stiffness(x: float, y: float, damping_a: float, damping_c: float, coupling: float, n_b: float) -> float:
    """Gershgorin bound on the spectral radius of the Jacobian of :func:`occupation_rhs`."""
    jxx = 2.0 * damping_a + coupling * (n_b + 1.0 + y)
    jxy = coupling * abs(n_b - x)
    jyy = abs(-2.0 * damping_c + coupling * (x - n_b))
    return max(jxx + jxy, jxx + jyy, jxy + jyy)


# RK4 is absolutely stable on the negative real axis up to h * lambda ~ 2.78
RK4_STABILITY = 2.5


def default_step(params: SystemParams) -> float:
    """``min(0.05/kappa, 0.05/gamma, 0.25/lambda)`` with ``lambda`` the stiffness at the steady state."""
    ss = steady_state(params)
    lam = stiffness(ss.n_a, max(ss.n_c, rates(params).n_c_tilde), params.kappa, params.gamma,
                    params.g**2 / params.kappa, params.n_b)
    return min(0.05 / params.kappa, 0.05 / params.gamma, 0.25 / lam)


def _rk4(rhs, stiff, x0, y0, t_grid, dt):
    t_grid = np.asarray(t_grid, dtype=float)
    xs = np.empty(len(t_grid))
    ys = np.empty(len(t_grid))
    x, y = float(x0), float(y0)
    xs[0], ys[0] = x, y
    clamped = False
    t = t_grid[0]
    for i in range(1, len(t_grid)):
        t_next = t_grid[i]
        n_steps = max(1, math.ceil((t_next - t) / dt - 1e-9))
        h = (t_next - t) / n_steps
        for _ in range(n_steps):
            if h * stiff(x, y) > RK4_STABILITY:
                raise StepSizeError(f"step {h:g} exceeds the RK4 stability limit at t={t:g}")
            k1 = rhs(x, y)
            k2 = rhs(x + 0.5 * h * k1[0], y + 0.5 * h * k1[1])
            k3 = rhs(x + 0.5 * h * k2[0], y + 0.5 * h * k2[1])
            k4 = rhs(x + h * k3[0], y + h * k3[1])
            x += h * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]) / 6.0
            y += h * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]) / 6.0
            if x < 0.0:
                x, clamped = 0.0, True
            if y < 0.0:
                y, clamped = 0.0, True
            t += h
        t = t_next
        xs[i], ys[i] = x, y
    return xs, ys, clamped


def evolve_occupations(
    params: SystemParams,
    initial: OccupationPair,
    t_grid,
    dt: float | None = None,
    check_convergence: bool = False,
) -> OccupationSeries:
    """Integrate the closed occupation equations with fixed-step RK4.

    Parameters
    ----------
    params : SystemParams
    initial : OccupationPair
        Occupations at ``t_grid[0] == 0``.
    t_grid : array_like
        Strictly increasing output times starting at 0.
    dt : float, optional
        Integration step; defaults to :func:`default_step`.  A step beyond
        the RK4 stability limit raises :class:`StepSizeError`.
    check_convergence : bool
        Repeat the run with ``dt/2`` and record the relative difference of the
        final state in ``diagnostics["halving_rel_diff"]``.

    Returns
    -------
    OccupationSeries
        ``clamped`` is set if a negative occupation had to be clamped to 0.
    """
    validate(params).raise_for_errors()
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) == 0 or t_grid[0] != 0.0:
        raise ValueError("t_grid must be one-dimensional and start at 0")
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    if initial.n_a < 0 or initial.n_c < 0:
        raise ValueError("initial occupations must be non-negative")

    r = rates(params)
    coupling = params.g**2 / params.kappa
    k, gam, nb, nct = params.kappa, params.gamma, params.n_b, r.n_c_tilde

    def rhs(x, y):
        return occupation_rhs(x, y, k, gam, coupling, nb, nct)

    def stiff(x, y):
        return stiffness(x, y, k, gam, coupling, nb)

    dt = default_step(params) if dt is None else dt
    xs, ys, clamped = _rk4(rhs, stiff, initial.n_a, initial.n_c, t_grid, dt)
    out = OccupationSeries(t_grid, xs, ys, clamped=clamped)
    if check_convergence:
        xh, yh, _ = _rk4(rhs, stiff, initial.n_a, initial.n_c, t_grid, dt / 2)
        scale = max(abs(ys[-1]), abs(xs[-1]), 1e-300)
        diff = max(abs(xh[-1] - xs[-1]), abs(yh[-1] - ys[-1])) / scale
        out.diagnostics["halving_rel_diff"] = diff
        out.converged = diff < 1e-6
    return out


def evolve_exchange(coupling: float, n_b: float, initial: OccupationPair, t_grid, dt: float = 0.01) -> OccupationSeries:
    """Occupation dynamics with both damping rates set to zero.

    Only the photon-phonon exchange term acts, at strength ``coupling``
    (``g**2/kappa`` in the full model), so ``n_a + n_c`` is conserved.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if coupling < 0 or n_b < 0:
        raise ValueError("coupling and n_b must be non-negative")

    def rhs(x, y):
        return occupation_rhs(x, y, 0.0, 0.0, coupling, n_b, 0.0)

    def stiff(x, y):
        return stiffness(x, y, 0.0, 0.0, coupling, n_b)

    xs, ys, clamped = _rk4(rhs, stiff, initial.n_a, initial.n_c, t_grid, dt)
    return OccupationSeries(t_grid, xs, ys, clamped=clamped)

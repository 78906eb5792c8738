"""
scikit-learn style front-ends for the three steady-state solvers.

Each estimator holds the fixed physical rates as constructor parameters
(so ``get_params``/``set_params``/``clone`` work) and maps a column of
mode-b occupations ``n_b`` to the mechanical occupation ``<n_c>``::

    MeanFieldCooling(kappa=0.1, gamma=0.01, g=0.006, n_c=1.0).fit().predict([[0.5], [1.0]])

``fit`` only validates the parameters; there is nothing to learn.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import fock, meanfield, stochastic
from .params import SystemParams, validate


def check_occupations(X) -> np.ndarray:
    """Validate ``X`` as an (n_samples, 1) array of non-negative n_b values."""
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[1] != 1:
        raise ValueError(f"expected a single column of n_b values, got {X.shape[1]} columns")
    if np.any(X < 0):
        raise ValueError("n_b values must be non-negative")
    return X[:, 0]


class _CoolingEstimator(BaseEstimator):
    def __init__(self, kappa=0.1, gamma=0.01, g=0.006, n_c=1.0, delta=1.0):
        self.kappa = kappa
        self.gamma = gamma
        self.g = g
        self.n_c = n_c
        self.delta = delta

    def _system(self, n_b: float = 0.0) -> SystemParams:
        return SystemParams(kappa=self.kappa, gamma=self.gamma, g=self.g, n_b=n_b, n_c=self.n_c, delta=self.delta)

    def fit(self, X=None, y=None):
        report = validate(self._system())
        report.raise_for_errors()
        self.warnings_ = report.warnings
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "warnings_")
        return np.array([self._solve(n_b)[1] for n_b in check_occupations(X)])

    def predict_occupations(self, X) -> np.ndarray:
        """Columns ``[n_a, n_c]`` for every row of ``X``."""
        check_is_fitted(self, "warnings_")
        return np.array([self._solve(n_b) for n_b in check_occupations(X)])


class MeanFieldCooling(_CoolingEstimator):
    def _solve(self, n_b):
        ss = meanfield.steady_state(self._system(n_b))
        return ss.n_a, ss.n_c


class ExactCooling(_CoolingEstimator):
    """Truncated-Fock steady state; ``truncation`` is ``(N_a, N_b, N_c)``."""

    def __init__(self, kappa=0.1, gamma=0.01, g=0.006, n_c=1.0, delta=1.0, truncation=(6, 6, 6), max_dim=512):
        super().__init__(kappa, gamma, g, n_c, delta)
        self.truncation = truncation
        self.max_dim = max_dim

    def _solve(self, n_b):
        trunc = fock.TruncationSpec(*self.truncation, max_dim=self.max_dim)
        res = fock.steady_state(fock.liouvillian_full(self._system(n_b), trunc))
        return res.n_a, res.n_c


class StochasticCooling(_CoolingEstimator):
    """Ensemble average over colored-noise trajectories (steady window)."""

    def __init__(self, kappa=0.1, gamma=0.01, g=0.006, n_c=1.0, delta=1.0, t_end=1000.0, dt=None,
                 n_traj=100, master_seed=0, threads=1):
        super().__init__(kappa, gamma, g, n_c, delta)
        self.t_end = t_end
        self.dt = dt
        self.n_traj = n_traj
        self.master_seed = master_seed
        self.threads = threads

    def _solve(self, n_b):
        ens = stochastic.run_ensemble(self._system(n_b), stochastic.Schedule(self.t_end, self.dt), self.n_traj,
                                      self.master_seed, threads=self.threads)
        self.last_stderr_ = ens.steady_stderr
        return ens.steady_photon, ens.steady_mean

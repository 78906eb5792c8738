"""
Exact master-equation solver in a truncated Fock space.

Conventions
-----------
* Tensor order is a (x) b (x) c for the full model and a (x) c for the
  reduced one; embeddings are Kronecker products with identities.
* Density matrices are vectorized by stacking columns::

      vec(rho)[i + d*j] = rho[i, j],      vec(A rho B) = (B.T kron A) vec(rho)

  so ``rho.reshape(-1, order="F")`` is the vector and left/right
  multiplication become ``I kron A`` and ``B.T kron I``.
* hbar = 1 and all rates are in units of omega_c.

Every Liouvillian built here is covariant under a U(1) phase symmetry (total
photon number for the full model, separate a and c phases for the reduced
one).  The steady state therefore lives in the block of ``vec(rho)`` whose
row and column charges coincide; the solver works on that block and checks
that it is invariant before trusting it.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import meanfield
from .params import SystemParams, validate

DEFAULT_MAX_DIM = 512
LEAKAGE_WARN = 1e-3
DIRECT_SOLVE_LIMIT = 6000


class DimensionLimitError(MemoryError):
    """The requested truncation exceeds the configured dimension limit."""


class SingularSystemError(RuntimeError):
    """The trace-constrained system is singular (non-unique stationary state)."""


class ConvergenceError(RuntimeError):
    """An iterative solve did not reach the requested tolerance."""


class TruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TruncationSpec:
    """Fock cutoffs (levels ``0 .. N-1``) for modes a, b and c."""

    n_a_dim: int
    n_b_dim: int
    n_c_dim: int
    max_dim: int = DEFAULT_MAX_DIM

    def __post_init__(self):
        for name in ("n_a_dim", "n_b_dim", "n_c_dim"):
            if int(getattr(self, name)) < 2:
                raise ValueError(f"{name} must be at least 2")
        if self.dim > self.max_dim:
            raise DimensionLimitError(
                f"Hilbert space dimension {self.dim} (superoperator {self.dim**2}**2) "
                f"exceeds max_dim={self.max_dim}"
            )

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.n_a_dim, self.n_b_dim, self.n_c_dim)

    @property
    def dim(self) -> int:
        return self.n_a_dim * self.n_b_dim * self.n_c_dim

    @classmethod
    def for_occupations(cls, n_a: float, n_b: float, n_c: float, max_dim: int = DEFAULT_MAX_DIM):
        """Heuristic cutoff ``max(6, ceil(5 (n + 1)))`` per mode."""
        return cls(*(max(6, math.ceil(5 * (n + 1))) for n in (n_a, n_b, n_c)), max_dim=max_dim)


@dataclass
class Superoperator:
    """Sparse Liouvillian together with the space it acts on.

    ``charges`` lists integer weight vectors (one entry per mode); each
    defines a conserved phase charge ``sum(w * n)`` of the basis states.
    """

    matrix: sp.csr_matrix
    dims: tuple[int, ...]
    modes: tuple[str, ...]
    charges: tuple[tuple[int, ...], ...] = ()

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def __matmul__(self, vec):
        return self.matrix @ vec

    def apply(self, rho: np.ndarray) -> np.ndarray:
        d = self.dim
        return (self.matrix @ np.asarray(rho).reshape(-1, order="F")).reshape(d, d, order="F")


@dataclass
class SteadyStateResult:
    rho: np.ndarray
    occupations: dict[str, float]
    residual: float
    trace_error: float
    min_eigenvalue: float
    leakage: dict[str, float]
    method: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_a(self) -> float:
        return self.occupations.get("a", math.nan)

    @property
    def n_b(self) -> float:
        return self.occupations.get("b", math.nan)

    @property
    def n_c(self) -> float:
        return self.occupations.get("c", math.nan)


# ---------------------------------------------------------------- operators

def annihilation(dim: int) -> sp.csr_matrix:
    if dim < 2:
        raise ValueError("dimension must be at least 2")
    return sp.diags(np.sqrt(np.arange(1, dim, dtype=float)), 1, shape=(dim, dim), format="csr").astype(complex)


def number(dim: int) -> sp.csr_matrix:
    return sp.diags(np.arange(dim, dtype=float), 0, format="csr").astype(complex)


def embed(op: sp.spmatrix, index: int, dims: Sequence[int]) -> sp.csr_matrix:
    """Place a single-mode operator at position ``index`` of the tensor product."""
    out = None
    for k, d in enumerate(dims):
        factor = op if k == index else sp.identity(d, dtype=complex, format="csr")
        out = factor if out is None else sp.kron(out, factor, format="csr")
    return out.tocsr()


def mode_operators(dims: Sequence[int], modes: Sequence[str]) -> dict[str, sp.csr_matrix]:
    return {m: embed(annihilation(d), k, dims) for k, (m, d) in enumerate(zip(modes, dims))}


def hamiltonian(params: SystemParams, trunc: TruncationSpec) -> sp.csr_matrix:
    """Rotating-frame Hamiltonian ``delta n_a + omega_c n_c + g (a+b)^dag (a+b) (c+c^dag)``."""
    ops = mode_operators(trunc.dims, "abc")
    a, b, c = ops["a"], ops["b"], ops["c"]
    s = a + b
    h = params.delta * (a.getH() @ a) + params.omega_c * (c.getH() @ c)
    h = h + params.g * (s.getH() @ s) @ (c + c.getH())
    return h.tocsr()


# ----------------------------------------------------------- superoperators

def spre(op: sp.spmatrix) -> sp.csr_matrix:
    d = op.shape[0]
    return sp.kron(sp.identity(d, dtype=complex), op, format="csr")


def spost(op: sp.spmatrix) -> sp.csr_matrix:
    d = op.shape[0]
    return sp.kron(op.T, sp.identity(d, dtype=complex), format="csr")


def dissipator(x: sp.spmatrix) -> sp.csr_matrix:
    """Superoperator of ``rho -> 2 x rho x^dag - {x^dag x, rho}``."""
    x = sp.csr_matrix(x)
    xdx = (x.getH() @ x).tocsr()
    return (2.0 * sp.kron(x.conj(), x, format="csr") - spre(xdx) - spost(xdx)).tocsr()


def commutator_super(h: sp.spmatrix) -> sp.csr_matrix:
    """Superoperator of ``rho -> -i [h, rho]``."""
    return (-1j * (spre(h) - spost(h))).tocsr()


def _check_size(dim: int, max_dim: int):
    if dim > max_dim:
        raise DimensionLimitError(f"dimension {dim} (superoperator size {dim * dim}) exceeds limit {max_dim}")


def liouvillian_full(params: SystemParams, trunc: TruncationSpec) -> Superoperator:
    """Generator of the three-mode master equation."""
    validate(params).raise_for_errors()
    _check_size(trunc.dim, trunc.max_dim)
    ops = mode_operators(trunc.dims, "abc")
    a, b, c = ops["a"], ops["b"], ops["c"]
    k, gam, nb, nc = params.kappa, params.gamma, params.n_b, params.n_c
    L = commutator_super(hamiltonian(params, trunc))
    L = L + k * dissipator(a)
    L = L + (1 + nb) * k * dissipator(b) + nb * k * dissipator(b.getH())
    L = L + (1 + nc) * gam * dissipator(c) + nc * gam * dissipator(c.getH())
    L.sum_duplicates()
    return Superoperator(L.tocsr(), trunc.dims, ("a", "b", "c"), charges=((1, 1, 0),))


def liouvillian_reduced(params: SystemParams, trunc_ac, max_dim: int = DEFAULT_MAX_DIM) -> Superoperator:
    """Two-mode generator with mode b eliminated.

    Free rotation, photon loss, a mechanical bath at the renormalized
    occupation, and the jump operators ``a c^dag`` / ``a^dag c`` at rates
    ``g^2 (1+n_b) / (2 kappa)`` and ``g^2 n_b / (2 kappa)``.

    ``trunc_ac`` is a pair ``(N_a, N_c)`` or a :class:`TruncationSpec`
    (whose b cutoff is ignored).
    """
    validate(params).raise_for_errors()
    if isinstance(trunc_ac, TruncationSpec):
        dims = (trunc_ac.n_a_dim, trunc_ac.n_c_dim)
        max_dim = trunc_ac.max_dim
    else:
        dims = tuple(int(n) for n in trunc_ac)
    if len(dims) != 2 or min(dims) < 2:
        raise ValueError("reduced truncation needs two cutoffs, each at least 2")
    _check_size(dims[0] * dims[1], max_dim)
    ops = mode_operators(dims, "ac")
    a, c = ops["a"], ops["c"]
    r = meanfield.rates(params)
    k, gam = params.kappa, params.gamma
    nct = r.n_c_tilde
    h = params.delta * (a.getH() @ a) + params.omega_c * (c.getH() @ c)
    L = commutator_super(h) + k * dissipator(a)
    L = L + (1 + nct) * gam * dissipator(c) + nct * gam * dissipator(c.getH())
    if params.g > 0:
        L = L + r.rate_down * dissipator(a @ c.getH()) + r.rate_up * dissipator(a.getH() @ c)
    L.sum_duplicates()
    return Superoperator(L.tocsr(), dims, ("a", "c"), charges=((1, 0), (0, 1)))


def single_mode_liouvillian(rate: float, n_th: float, dim: int, frequency: float = 0.0) -> Superoperator:
    """One damped mode: ``rate ((1+n) D_x + n D_x^dag)`` plus free rotation."""
    x = annihilation(dim)
    L = commutator_super(frequency * number(dim))
    L = L + (1 + n_th) * rate * dissipator(x) + n_th * rate * dissipator(x.getH())
    return Superoperator(L.tocsr(), (dim,), ("x",), charges=((1,),))


# ----------------------------------------------------------------- solvers

def _charge_labels(dims, charges):
    idx = np.indices(dims).reshape(len(dims), -1)
    if not charges:
        return np.zeros((1, idx.shape[1]), dtype=np.int64)
    return np.array([np.asarray(w)[:, None] * idx for w in charges]).sum(axis=1)


def sector_indices(L: Superoperator) -> np.ndarray:
    """Positions of ``vec(rho)`` whose row and column states carry equal charges."""
    d = L.dim
    q = _charge_labels(L.dims, L.charges)
    i = np.tile(np.arange(d), d)
    j = np.repeat(np.arange(d), d)
    return np.flatnonzero(np.all(q[:, i] == q[:, j], axis=0))


def _sector_block(L: Superoperator, check: bool = True):
    M = L.matrix.tocsc()
    keep = sector_indices(L)
    cols = M[:, keep]
    block = cols[keep, :]
    if check and keep.size < M.shape[0] and abs(cols).sum() - abs(block).sum() > 1e-12 * max(abs(block).sum(), 1.0):
        raise ValueError("declared phase symmetry is not conserved by the Liouvillian")
    return block.tocsr(), keep


def _trace_constrained(block: sp.csr_matrix, keep: np.ndarray, d: int):
    diag = np.flatnonzero(keep % (d + 1) == 0)
    coo = block.tocoo()
    row0 = diag[0]
    mask = coo.row != row0
    rows = np.concatenate([coo.row[mask], np.full(diag.size, row0)])
    cols = np.concatenate([coo.col[mask], diag])
    vals = np.concatenate([coo.data[mask], np.ones(diag.size, dtype=complex)])
    A = sp.csc_matrix((vals, (rows, cols)), shape=block.shape)
    rhs = np.zeros(block.shape[0], dtype=complex)
    rhs[row0] = 1.0
    return A, rhs


def _solve_linear(A, rhs, method, rtol):
    n = A.shape[0]
    if method == "auto":
        method = "direct" if n <= DIRECT_SOLVE_LIMIT else "iterative"
    if method == "direct":
        try:
            lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SingularSystemError(f"trace-constrained Liouvillian is singular: {exc}") from exc
        x = lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("direct solve produced non-finite entries")
        return x, {"solver": "splu"}
    if method == "iterative":
        try:
            ilu = spla.spilu(A, drop_tol=1e-4, fill_factor=10, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SingularSystemError(f"incomplete factorization failed: {exc}") from exc
        M = spla.LinearOperator(A.shape, ilu.solve, dtype=complex)
        count = [0]

        def tick(_):
            count[0] += 1

        x, info = spla.gmres(A, rhs, M=M, rtol=rtol, atol=0.0, restart=100, maxiter=50,
                             callback=tick, callback_type="pr_norm")
        if info != 0:
            raise ConvergenceError(f"GMRES did not converge (info={info}, iterations={count[0]})")
        return x, {"solver": "ilu-gmres", "iterations": count[0]}
    raise ValueError(f"unknown method {method!r}")


def _result(L: Superoperator, vec: np.ndarray, method: str, diagnostics: dict) -> SteadyStateResult:
    d = L.dim
    rho = vec.reshape(d, d, order="F")
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    v = rho.reshape(-1, order="F")
    residual = float(np.linalg.norm(L.matrix @ v) / np.linalg.norm(v))
    evals = np.linalg.eigvalsh(rho)
    ops = mode_operators(L.dims, L.modes)
    occ = {m: expectation(rho, op.getH() @ op) for m, op in ops.items()}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        leak = truncation_check(rho, L.dims, L.modes)
    flagged = [m for m, p in leak.items() if p > LEAKAGE_WARN]
    if flagged:
        warnings.warn(f"truncation leakage above {LEAKAGE_WARN:g} in modes {flagged}", TruncationWarning, stacklevel=3)
    return SteadyStateResult(
        rho=rho,
        occupations=occ,
        residual=residual,
        trace_error=float(abs(np.trace(rho) - 1.0)),
        min_eigenvalue=float(evals[0]),
        leakage=leak,
        method=method,
        diagnostics=diagnostics,
    )


def steady_state(L: Superoperator | sp.spmatrix, dims: Sequence[int] | None = None,
                 method: str = "auto", use_symmetry: bool = True, rtol: float = 1e-12) -> SteadyStateResult:
    """Stationary state of ``L`` via the trace-constrained linear system.

    One row of ``L`` (the one belonging to ``|0><0|``) is replaced by the row
    computing ``tr(rho)`` and the system ``L' v = e_0`` is solved, either by
    sparse LU (small systems) or ILU-preconditioned GMRES.

    Parameters
    ----------
    L : Superoperator or sparse matrix
        A bare matrix needs ``dims``; no symmetry is assumed then.
    method : {"auto", "direct", "iterative"}
    use_symmetry : bool
        Restrict to the symmetry block of the declared phase charges.

    Raises
    ------
    SingularSystemError
        Degenerate stationary manifold (the constrained system is singular).
    ConvergenceError
        The iterative solver failed to converge.
    """
    if not isinstance(L, Superoperator):
        if dims is None:
            raise ValueError("dims are required for a bare matrix")
        L = Superoperator(sp.csr_matrix(L), tuple(dims), tuple(f"m{k}" for k in range(len(dims))))
    d = L.dim
    if use_symmetry and L.charges:
        block, keep = _sector_block(L)
    else:
        block, keep = L.matrix.tocsr(), np.arange(d * d)
    A, rhs = _trace_constrained(block, keep, d)
    x, info = _solve_linear(A, rhs, method, rtol)
    vec = np.zeros(d * d, dtype=complex)
    vec[keep] = x
    info["unknowns"] = int(keep.size)
    return _result(L, vec, "trace-row", info)


def steady_state_eigen(L: Superoperator, use_symmetry: bool = True, shift: float = 1e-7) -> SteadyStateResult:
    """Stationary state as the eigenvector of ``L`` closest to zero (shift-invert Arnoldi)."""
    d = L.dim
    if use_symmetry and L.charges:
        block, keep = _sector_block(L)
    else:
        block, keep = L.matrix.tocsr(), np.arange(d * d)
    vals, vecs = spla.eigs(block.tocsc(), k=1, sigma=shift, which="LM")
    vec = np.zeros(d * d, dtype=complex)
    vec[keep] = vecs[:, 0]
    diag = vec[:: d + 1]
    vec = vec / diag.sum()
    return _result(L, vec, "eigen", {"eigenvalue": complex(vals[0]), "unknowns": int(keep.size)})


# ------------------------------------------------------------ observables

def expectation(rho: np.ndarray, op) -> complex | float:
    """``tr(rho op)``; real for Hermitian ``op`` (imaginary residue checked)."""
    rho = np.asarray(rho)
    if sp.issparse(op):
        if op.shape != rho.shape:
            raise ValueError(f"dimension mismatch: rho {rho.shape}, operator {op.shape}")
        value = complex((op.multiply(rho.T)).sum())
        hermitian = abs(op - op.getH()).max() == 0 if op.nnz else True
    else:
        op = np.asarray(op)
        if op.shape != rho.shape:
            raise ValueError(f"dimension mismatch: rho {rho.shape}, operator {op.shape}")
        value = complex(np.einsum("ij,ji->", rho, op))
        hermitian = np.allclose(op, op.conj().T, rtol=0, atol=0)
    if hermitian:
        if abs(value.imag) > 1e-10:
            warnings.warn(f"imaginary residue {value.imag:.3g} in expectation of a Hermitian operator")
        return value.real
    return value


def reduced_populations(rho: np.ndarray, dims: Sequence[int]) -> list[np.ndarray]:
    """Fock-level populations of each mode (diagonal of each one-mode marginal)."""
    p = np.real(np.diagonal(rho)).reshape(dims)
    out = []
    for k in range(len(dims)):
        axes = tuple(i for i in range(len(dims)) if i != k)
        out.append(p.sum(axis=axes) if axes else p)
    return out


def truncation_check(rho: np.ndarray, dims: Sequence[int], modes: Sequence[str] | None = None) -> dict[str, float]:
    """Population of the highest kept Fock level of each mode.

    Emits a :class:`TruncationWarning` for any mode above ``1e-3``.
    """
    dims = tuple(dims)
    modes = tuple(modes) if modes is not None else tuple("abc"[: len(dims)]) if len(dims) <= 3 else tuple(f"m{k}" for k in range(len(dims)))
    leak = {m: float(pops[-1]) for m, pops in zip(modes, reduced_populations(rho, dims))}
    flagged = [m for m, v in leak.items() if v > LEAKAGE_WARN]
    if flagged:
        warnings.warn(f"truncation leakage above {LEAKAGE_WARN:g} in modes {flagged}", TruncationWarning, stacklevel=2)
    return leak


def thermal_populations(dim: int, n: float) -> np.ndarray:
    """Geometric populations of a thermal state at mean ``n``, renormalized on ``dim`` levels."""
    if n == 0:
        p = np.zeros(dim)
        p[0] = 1.0
        return p
    ratio = n / (n + 1.0)
    p = ratio ** np.arange(dim)
    return p / p.sum()


def thermal_state(dim: int, n: float) -> np.ndarray:
    return np.diag(thermal_populations(dim, n)).astype(complex)


def product_state(*factors: np.ndarray) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for f in factors:
        out = np.kron(out, f)
    return out


def fock_state(dims: Sequence[int], levels: Sequence[int]) -> np.ndarray:
    psi = np.zeros(int(np.prod(dims)), dtype=complex)
    psi[np.ravel_multi_index(tuple(levels), tuple(dims))] = 1.0
    return np.outer(psi, psi.conj())


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.linalg.eigvalsh(rho - sigma)).sum())


# ------------------------------------------------------------- evolution

@dataclass
class EvolutionResult:
    t: np.ndarray
    expectations: dict[str, np.ndarray]
    rho_final: np.ndarray
    trace_drift: float


def evolve_density_matrix(L: Superoperator, rho0: np.ndarray, t_grid, observables: Mapping[str, object] | None = None,
                          dt: float | None = None, max_trace_drift: float = 1e-8) -> EvolutionResult:
    """Integrate ``d rho/dt = L rho`` with fixed-step RK4 on ``vec(rho)``.

    ``observables`` maps names to operators; by default the number operator
    of every mode is tracked.  If ``rho0`` lies in the symmetry block the
    propagation is done on that block only.

    Raises
    ------
    meanfield.StepSizeError
        The trace drifted by more than ``max_trace_drift``.
    """
    d = L.dim
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (d, d):
        raise ValueError(f"rho0 has shape {rho0.shape}, expected {(d, d)}")
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    if observables is None:
        ops = mode_operators(L.dims, L.modes)
        observables = {f"n_{m}": op.getH() @ op for m, op in ops.items()}

    v_full = rho0.reshape(-1, order="F")
    keep = sector_indices(L) if L.charges else np.arange(d * d)
    outside = np.ones(d * d, dtype=bool)
    outside[keep] = False
    if L.charges and not np.any(np.abs(v_full[outside]) > 0):
        M, _ = _sector_block(L)
    else:
        M, keep = L.matrix.tocsr(), np.arange(d * d)
    v = v_full[keep].copy()
    if dt is None:
        norm = abs(M).sum(axis=1).max()
        dt = 1.0 / max(float(norm), 1e-12)
    diag_pos = np.flatnonzero(keep % (d + 1) == 0)

    def full_rho(vec):
        out = np.zeros(d * d, dtype=complex)
        out[keep] = vec
        return out.reshape(d, d, order="F")

    series = {name: np.empty(len(t_grid)) for name in observables}
    tr0 = v[diag_pos].sum()
    drift = 0.0
    t = t_grid[0]
    for n, t_next in enumerate(t_grid):
        steps = max(0, math.ceil((t_next - t) / dt - 1e-9))
        if steps:
            h = (t_next - t) / steps
            for _ in range(steps):
                k1 = M @ v
                k2 = M @ (v + 0.5 * h * k1)
                k3 = M @ (v + 0.5 * h * k2)
                k4 = M @ (v + h * k3)
                v = v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                t += h
                drift = max(drift, abs(v[diag_pos].sum() - tr0))
                if not drift <= max_trace_drift or not np.all(np.isfinite(v)):
                    raise meanfield.StepSizeError(f"trace drift {drift:.3g} at t={t:g}; reduce dt={dt:g}")
        t = t_next
        rho = full_rho(v)
        for name, op in observables.items():
            val = expectation(rho, op)
            series[name][n] = float(np.real(val))
    return EvolutionResult(t_grid, series, full_rho(v), float(drift))


# ---------------------------------------------------------------- export

def write_triplets(matrix, path: str | Path) -> None:
    """Write a matrix as ``row col re im`` lines (0-based) after a shape header."""
    m = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"# shape {m.shape[0]} {m.shape[1]} nnz {m.nnz}\n")
        for r, c, v in zip(m.row, m.col, m.data):
            v = complex(v)
            fh.write(f"{r} {c} {v.real!r} {v.imag!r}\n")


def read_triplets(path: str | Path) -> sp.csr_matrix:
    with open(path) as fh:
        header = fh.readline().split()
        shape = (int(header[2]), int(header[3]))
        nnz = int(header[5])
        if nnz == 0:
            return sp.csr_matrix(shape, dtype=complex)
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix(shape, dtype=complex)
    return sp.csr_matrix((data[:, 2] + 1j * data[:, 3], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=shape)

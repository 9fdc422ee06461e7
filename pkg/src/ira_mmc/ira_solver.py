"""Iterative reanalysis approximation (IRA): a two-grid V-cycle whose coarse
problem is solved by exact reanalysis on top of a stored Cholesky factor.

The coarse solve reuses the factor ``L0`` of a reference coarse matrix
``K_ref``. When the current coarse matrix differs from ``K_ref`` only in a set
``M`` of rows (and, by symmetry, columns), the solution is recovered exactly
from ``L0`` plus a dense ``|M| x |M|`` system; once too many rows have
changed the coarse matrix is refactorized and becomes the new reference.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .linalg import SparseCholesky, direct_solve
from .mesh_fe import GlobalSystem, Prolongation


class SingularSmootherError(ValueError):
    pass


class ReanalysisBreakdown(RuntimeError):
    """The reduced system is singular; the caller should refactorize."""


# --------------------------------------------------------------------------
# smoothing and transfer
# --------------------------------------------------------------------------


@numba.njit(cache=True)
def _gs_sweeps(indptr, indices, data, diag, U, F, sweeps):
    n = U.size
    for _ in range(sweeps):
        for i in range(n):
            s = F[i]
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j != i:
                    s -= data[k] * U[j]
            U[i] = s / diag[i]


def gauss_seidel(K: sp.csr_matrix, U_in: np.ndarray, F: np.ndarray, sweeps: int) -> np.ndarray:
    """Forward Gauss-Seidel sweeps in ascending DOF order. Returns a new array."""
    K = sp.csr_matrix(K)
    diag = K.diagonal()
    if np.any(diag == 0.0):
        raise SingularSmootherError("zero on the diagonal")
    U = np.array(U_in, dtype=float, copy=True)
    _gs_sweeps(
        K.indptr.astype(np.int64),
        K.indices.astype(np.int64),
        K.data.astype(np.float64),
        diag.astype(np.float64),
        U,
        np.asarray(F, dtype=np.float64),
        int(sweeps),
    )
    return U


class TwoGridHierarchy:
    """Fixed prolongation plus the Galerkin coarse operator of the current ``K``."""

    def __init__(self, prolongation: Prolongation, smoother_sweeps: int = 2):
        self.prolongation = prolongation
        self.P = sp.csr_matrix(prolongation.weights)
        self.PT = sp.csr_matrix(self.P.T)
        self.smoother_sweeps = smoother_sweeps
        self.fine_dim, self.coarse_dim = self.P.shape
        # coarse DOFs whose basis function vanishes on every free fine DOF
        col_weight = np.asarray(abs(self.P).sum(axis=0)).ravel()
        self._dead = np.flatnonzero(col_weight == 0.0)
        self.K = None
        self.coarse_operator = None
        self._smoother_arrays = None

    def update(self, K: sp.spmatrix) -> sp.csr_matrix:
        self.K = sp.csr_matrix(K)
        Kc = sp.csr_matrix(self.PT @ self.K @ self.P)
        if self._dead.size:
            bump = np.zeros(self.coarse_dim)
            bump[self._dead] = 1.0
            Kc = sp.csr_matrix(Kc + sp.diags(bump))
        Kc.sort_indices()
        self.coarse_operator = Kc
        diag = self.K.diagonal()
        if np.any(diag == 0.0):
            raise SingularSmootherError("zero on the diagonal")
        self._smoother_arrays = (
            self.K.indptr.astype(np.int64),
            self.K.indices.astype(np.int64),
            self.K.data,
            diag,
        )
        return Kc

    def smooth(self, U: np.ndarray, F: np.ndarray, sweeps: int | None = None) -> np.ndarray:
        indptr, indices, data, diag = self._smoother_arrays
        U = np.array(U, dtype=float, copy=True)
        _gs_sweeps(indptr, indices, data, diag, U, F, self.smoother_sweeps if sweeps is None else sweeps)
        return U


def restrict_residual(hierarchy: TwoGridHierarchy, K, U, F) -> np.ndarray:
    """``P^T (F - K U)``."""
    return hierarchy.PT @ (F - K @ U)


def v_cycle(hierarchy: TwoGridHierarchy, K, F, U_in, coarse_solver) -> np.ndarray:
    """One two-grid V-cycle: smooth, restrict, coarse solve, correct, smooth.

    ``hierarchy.update(K)`` must have been called for this ``K``.
    """
    U = hierarchy.smooth(U_in, F)
    d = restrict_residual(hierarchy, K, U, F)
    U = U + hierarchy.P @ coarse_solver(d)
    return hierarchy.smooth(U, F)


# --------------------------------------------------------------------------
# exact reanalysis on the coarse level
# --------------------------------------------------------------------------


@dataclass(eq=False)
class ReferenceFactorization:
    factor: SparseCholesky
    K_ref: sp.csr_matrix
    dx_ref: dict = field(default_factory=dict)
    d_ref: dict = field(default_factory=dict)
    iteration_tag: int = 0

    @classmethod
    def build(cls, K_ref, iteration_tag: int = 0) -> "ReferenceFactorization":
        K_ref = sp.csr_matrix(K_ref)
        return cls(SparseCholesky(K_ref), K_ref, iteration_tag=iteration_tag)

    @property
    def L0(self) -> sp.csc_matrix:
        return self.factor.L0

    def tolerance(self) -> float:
        return 1e-12 * abs(self.K_ref).max()

    def reference_solution(self, d: np.ndarray, key: str = "state") -> np.ndarray:
        """Solve with ``K_ref`` and store the pair as this key's ``(d_ref, dx_ref)``."""
        dx = self.factor.solve(d)
        self.d_ref[key] = np.array(d, copy=True)
        self.dx_ref[key] = dx
        return dx


@dataclass(frozen=True, eq=False)
class ModificationSet:
    indices: np.ndarray

    @property
    def n_d(self) -> int:
        return int(self.indices.size)


def detect_modifications(K_star_i, ref: ReferenceFactorization, delta_i=None, tol=None) -> ModificationSet:
    """Coarse DOFs whose stiffness row (or, if given, correction RHS) has changed.

    ``row_sum(|K_i - K_ref|) + |delta_i| > tol`` with ``tol`` defaulting to
    ``1e-12 * max|K_ref|``.
    """
    diff = abs(sp.csr_matrix(K_star_i) - ref.K_ref)
    score = np.asarray(diff.sum(axis=1)).ravel()
    if delta_i is not None:
        score = score + np.abs(delta_i)
    tol = ref.tolerance() if tol is None else tol
    return ModificationSet(np.flatnonzero(score > tol))


@dataclass(eq=False)
class ReanalysisWorkspace:
    """Per-matrix data: ``B`` (fundamental solutions), ``K_B`` and the unbalanced rows."""

    mods: ModificationSet
    B: np.ndarray
    K_u: sp.csr_matrix
    K_B: np.ndarray
    K_B_factor: tuple | None


def prepare_reanalysis(ref: ReferenceFactorization, K_star_i, mods: ModificationSet) -> ReanalysisWorkspace:
    """Build ``B`` with ``K_c B = R`` and the reduced matrix ``K_B = K_u B``.

    ``K_c`` is the current matrix with the modified rows/columns replaced by
    the identity; outside ``M`` it coincides with ``K_ref``, so ``K_c`` is a
    rank-``n_d`` modification of ``K_ref`` along unit vectors and
    Sherman-Morrison-Woodbury gives ``B = W S^{-1}`` with ``W = K_ref^{-1} E_M``
    and ``S = E_M^T W``.
    """
    K_star_i = sp.csr_matrix(K_star_i)
    n_c = K_star_i.shape[0]
    M = mods.indices
    n_d = M.size
    if n_d == 0:
        empty = np.zeros((n_c, 0))
        return ReanalysisWorkspace(mods, empty, K_star_i[M], np.zeros((0, 0)), None)
    E_M = np.zeros((n_c, n_d))
    E_M[M, np.arange(n_d)] = 1.0
    W = ref.factor.solve(E_M)
    S = 0.5 * (W[M] + W[M].T)
    try:
        S_factor = sla.cho_factor(S)
    except np.linalg.LinAlgError as exc:
        raise ReanalysisBreakdown("capacitance matrix not positive definite") from exc
    B = sla.cho_solve(S_factor, W.T).T
    B[M] = np.eye(n_d)
    K_u = K_star_i[M]
    K_B = np.asarray(K_u @ B)
    K_B = 0.5 * (K_B + K_B.T)  # Schur complement of the current matrix: symmetric
    try:
        K_B_factor = sla.cho_factor(K_B)
    except np.linalg.LinAlgError as exc:
        raise ReanalysisBreakdown("reduced matrix K_B is singular") from exc
    return ReanalysisWorkspace(mods, B, K_u, K_B, K_B_factor)


def exact_reanalysis(
    ref: ReferenceFactorization,
    K_star_i,
    d_i: np.ndarray,
    mods: ModificationSet,
    workspace: ReanalysisWorkspace | None = None,
    rhs_key: str = "state",
) -> np.ndarray:
    """Solve ``K_star_i dx = d_i`` exactly from the reference factorization.

    ``dx = dx_ref + dx_delta`` with ``K_star_i dx_delta = delta``,
    ``delta = d_i - K_star_i dx_ref``. The correction is ``z + B y`` where
    ``z = K_c^{-1} delta_b`` carries the part of ``delta`` on unmodified rows
    (zero whenever ``M`` already covers every non-zero of ``delta``) and ``y``
    solves the reduced system ``K_B y = delta_u - K_u z``.
    """
    if workspace is None:
        workspace = prepare_reanalysis(ref, K_star_i, mods)
    M = mods.indices
    dx_ref = ref.dx_ref.get(rhs_key)
    if dx_ref is None:
        dx_ref = np.zeros(K_star_i.shape[0])
    elif M.size == 0 and np.array_equal(d_i, ref.d_ref[rhs_key]):
        return dx_ref.copy()  # nothing changed
    delta = d_i - K_star_i @ dx_ref
    delta_b = delta.copy()
    delta_b[M] = 0.0
    if np.any(delta_b):
        w = ref.factor.solve(delta_b)
        z = w - workspace.B @ w[M] if M.size else w
    else:
        z = np.zeros_like(delta)
    if M.size == 0:
        return dx_ref + z
    rhs = delta[M] - workspace.K_u @ z
    y = sla.cho_solve(workspace.K_B_factor, rhs)
    return dx_ref + z + workspace.B @ y


# --------------------------------------------------------------------------
# the solver
# --------------------------------------------------------------------------


@dataclass
class IRAConfig:
    eta: float = 0.11
    eps_star: float = 1e-2
    nu: int = 2
    max_cycles: int = 50

    def __post_init__(self):
        if not 0 <= self.eta <= 1:
            raise ValueError("eta is a fraction in [0, 1]")
        if self.eps_star <= 0 or self.nu < 1 or self.max_cycles < 1:
            raise ValueError("eps_star, nu and max_cycles must be positive")


@dataclass
class SolveInfo:
    mode: str
    n_d: int
    v_cycles: int
    converged: bool
    residual_norms: list
    wall_time: float


@dataclass
class SolverStats:
    v_cycles: int = 0
    refactorizations: int = 0
    n_d_history: list = field(default_factory=list)
    mode_per_call: list = field(default_factory=list)
    fallbacks: int = 0
    wall_time: float = 0.0

    @property
    def reanalysis_calls(self) -> int:
        return sum(m == "reanalysis" for m in self.mode_per_call)


def refactorization_needed(n_d: int, n_c: int, eta: float) -> bool:
    """Threshold rule: refactorize when strictly more than ``eta`` of the coarse DOFs changed."""
    return n_d / n_c > eta


def energy_measure(K, U) -> float:
    return float(U @ (K @ U))


class IRASolver:
    """Stateful IRA solver for a sequence of stiffness matrices on one mesh.

    Call ``prepare(K)`` once per matrix, then ``solve(F)`` for each load
    (state, adjoint, ...). A single instance must not be shared between
    threads; independent instances are independent.
    """

    def __init__(self, prolongation: Prolongation, config: IRAConfig | None = None):
        self.config = config or IRAConfig()
        self.hierarchy = TwoGridHierarchy(prolongation, self.config.nu)
        self.reference: ReferenceFactorization | None = None
        self.stats = SolverStats()
        self._mode = None
        self._mods = None
        self._workspace = None
        self._calls = 0

    @property
    def mode(self) -> str | None:
        return self._mode

    @property
    def n_d(self) -> int:
        return self._mods.n_d if self._mods is not None else 0

    def invalidate(self) -> None:
        self.reference = None

    def prepare(self, K) -> str:
        t0 = time.perf_counter()
        self._calls += 1
        Kc = self.hierarchy.update(K)
        n_c = self.hierarchy.coarse_dim
        mode = "full-factorization"
        mods = None
        if self.reference is not None:
            mods = detect_modifications(Kc, self.reference)
            if not refactorization_needed(mods.n_d, n_c, self.config.eta):
                try:
                    self._workspace = prepare_reanalysis(self.reference, Kc, mods)
                    mode = "reanalysis"
                except ReanalysisBreakdown:
                    mode = "full-factorization"
        if mode == "full-factorization":
            n_d = n_c if mods is None else mods.n_d
            self._refactorize(Kc)
            mods = ModificationSet(np.arange(n_d))  # recorded count only
            self._workspace = None
        self._mode = mode
        self._mods = mods
        self.stats.mode_per_call.append(mode)
        self.stats.n_d_history.append(mods.n_d)
        self.stats.wall_time += time.perf_counter() - t0
        return mode

    def _refactorize(self, Kc) -> None:
        self.reference = ReferenceFactorization.build(Kc, iteration_tag=self._calls)
        self.stats.refactorizations += 1

    def coarse_solve(self, d: np.ndarray, key: str = "state") -> np.ndarray:
        ref = self.reference
        if self._mode == "full-factorization":
            if key not in ref.dx_ref:
                return ref.reference_solution(d, key)
            return ref.factor.solve(d)
        return exact_reanalysis(
            ref, self.hierarchy.coarse_operator, d, self._mods, self._workspace, rhs_key=key
        )

    def solve(self, F, U0=None, key: str = "state", sensitivity_probe=None, fallback: bool = True):
        """V-cycle until the relative change of the monitored quantity drops below ``eps_star``.

        The monitored quantity is ``U^T K U`` unless ``sensitivity_probe(U)``
        is given, in which case its largest relative component change is used.
        Returns ``(U, SolveInfo)``.
        """
        if self._mode is None:
            raise RuntimeError("call prepare(K) first")
        t0 = time.perf_counter()
        K = self.hierarchy.K
        F = np.asarray(F, dtype=float)
        norm_F = np.linalg.norm(F)
        if norm_F == 0.0:
            info = SolveInfo(self._mode, self.n_d, 0, True, [], time.perf_counter() - t0)
            return np.zeros_like(F), info
        if U0 is None:
            # cold start from the interpolated coarse solution
            U = self.hierarchy.P @ self.coarse_solve(self.hierarchy.PT @ F, key)
        else:
            U = np.array(U0, dtype=float, copy=True)

        def measure(U):
            if sensitivity_probe is None:
                return np.atleast_1d(energy_measure(K, U))
            return np.atleast_1d(np.asarray(sensitivity_probe(U), dtype=float))

        prev = measure(U)
        residuals = [float(np.linalg.norm(F - K @ U))]
        converged = False
        cycles = 0
        for cycles in range(1, self.config.max_cycles + 1):
            U = v_cycle(self.hierarchy, K, F, U, lambda d: self.coarse_solve(d, key))
            residuals.append(float(np.linalg.norm(F - K @ U)))
            cur = measure(U)
            scale = np.abs(cur)
            change = np.abs(cur - prev)
            rel = np.max(np.where(scale > 0, change / np.where(scale > 0, scale, 1.0), change))
            prev = cur
            if rel < self.config.eps_star:
                converged = True
                break
        self.stats.v_cycles += cycles
        if not converged and fallback:
            U = direct_solve(K, F)
            self.stats.fallbacks += 1
            # later loads on this matrix start from a fresh reference
            self._refactorize(self.hierarchy.coarse_operator)
            self._mode = "full-factorization"
            self._workspace = None
        info = SolveInfo(self._mode, self.n_d, cycles, converged, residuals, time.perf_counter() - t0)
        self.stats.wall_time += info.wall_time
        return U, info


def ira_solve(
    system: GlobalSystem,
    state: ReferenceFactorization | None,
    config: IRAConfig,
    prolongation: Prolongation,
    sensitivity_probe=None,
    U0=None,
):
    """One-shot functional form: ``(U, updated reference, SolveInfo)``."""
    solver = IRASolver(prolongation, config)
    solver.reference = state
    solver.prepare(system.stiffness)
    U, info = solver.solve(system.load, U0, sensitivity_probe=sensitivity_probe)
    return U, solver.reference, info

"""Sparse Cholesky factorization built on SuperLU.

SuperLU run in symmetric mode with a symmetric fill-reducing ordering and no
off-diagonal pivoting produces ``Pr K Pr^T = L U`` with ``U = D L^T`` for an
SPD matrix, so ``L sqrt(D)`` is the Cholesky factor of the permuted matrix.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


class SparseCholesky:
    """Cholesky factor ``L0`` of a sparse SPD matrix, with a symmetric permutation.

    ``L0 @ L0.T == permuted(K)`` up to round-off.
    """

    def __init__(self, K: sp.spmatrix):
        K = sp.csc_matrix(K)
        if K.shape[0] != K.shape[1]:
            raise ValueError(f"matrix must be square, got {K.shape}")
        self.n = K.shape[0]
        try:
            self._lu = sla.splu(
                K,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:  # exactly singular
            raise NotPositiveDefiniteError(str(exc)) from exc
        if not np.array_equal(self._lu.perm_r, self._lu.perm_c):
            raise NotPositiveDefiniteError("SuperLU pivoted off the diagonal")
        d = self._lu.U.diagonal()
        if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
            raise NotPositiveDefiniteError("non-positive pivot in Cholesky factorization")
        self._pivots = d
        self._L0 = None

    @property
    def perm(self) -> np.ndarray:
        """Original row ``i`` sits at position ``perm[i]`` of the factored matrix."""
        return self._lu.perm_c

    @property
    def L0(self) -> sp.csc_matrix:
        if self._L0 is None:
            self._L0 = sp.csc_matrix(self._lu.L @ sp.diags(np.sqrt(self._pivots)))
        return self._L0

    def permuted(self, K: sp.spmatrix) -> sp.csr_matrix:
        """Return ``K`` in the factor's ordering (``L0 L0^T`` approximates this)."""
        p = np.empty(self.n, dtype=int)
        p[self.perm] = np.arange(self.n)
        K = sp.csr_matrix(K)
        return K[p][:, p]

    def reconstruction_error(self, K: sp.spmatrix) -> float:
        """Relative Frobenius error of ``L0 L0^T`` against ``K``."""
        Kp = self.permuted(K)
        diff = self.L0 @ self.L0.T - Kp
        return sp.linalg.norm(diff) / sp.linalg.norm(Kp)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        return self._lu.solve(b)


def direct_solve(K: sp.spmatrix, F: np.ndarray) -> np.ndarray:
    """Reference solver: one fresh sparse Cholesky factorization and solve."""
    return SparseCholesky(K).solve(F)

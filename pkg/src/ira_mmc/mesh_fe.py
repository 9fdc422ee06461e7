"""Structured bilinear-quad finite elements on a rectangular grid.

Nodes are numbered column-major, ``node = ix * (nely + 1) + iy`` with ``iy``
counted upwards from ``y = 0``; DOFs are interleaved ``(2*node, 2*node + 1) =
(ux, uy)``. Elements follow the same rule, ``elem = ex * nely + ey``, and list
their nodes counter-clockwise from the bottom-left corner.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class SingularityRiskError(ValueError):
    """Raised when an element modulus would make the stiffness matrix singular."""


@dataclass(frozen=True, eq=False)
class GridSpec:
    domain_width: float
    domain_height: float
    nelx: int
    nely: int
    active_mask: np.ndarray = None

    def __post_init__(self):
        if self.nelx < 1 or self.nely < 1:
            raise ValueError("need at least one element in each direction")
        if self.domain_width <= 0 or self.domain_height <= 0:
            raise ValueError("domain dimensions must be positive")
        mask = self.active_mask
        if mask is None:
            mask = np.ones(self.nelx * self.nely, dtype=bool)
        mask = np.asarray(mask, dtype=bool).ravel()
        if mask.size != self.nelx * self.nely:
            raise ValueError("active_mask must have one entry per element")
        mask.setflags(write=False)
        object.__setattr__(self, "active_mask", mask)

    @property
    def element_width(self) -> float:
        return self.domain_width / self.nelx

    @property
    def element_height(self) -> float:
        return self.domain_height / self.nely

    @property
    def element_area(self) -> float:
        return self.element_width * self.element_height

    @property
    def n_elements(self) -> int:
        return self.nelx * self.nely

    @property
    def n_nodes(self) -> int:
        return (self.nelx + 1) * (self.nely + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def is_coarsenable(self) -> bool:
        return self.nelx % 2 == 0 and self.nely % 2 == 0

    def node_id(self, ix, iy):
        return np.asarray(ix) * (self.nely + 1) + np.asarray(iy)

    def node_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """``(x, y)`` arrays of length ``n_nodes`` in node order."""
        ix, iy = np.divmod(np.arange(self.n_nodes), self.nely + 1)
        return ix * self.element_width, iy * self.element_height

    def element_nodes(self) -> np.ndarray:
        """``(n_elements, 4)`` node ids, counter-clockwise from bottom-left."""
        ex, ey = np.divmod(np.arange(self.n_elements), self.nely)
        n1 = self.node_id(ex, ey)
        n2 = self.node_id(ex + 1, ey)
        return np.stack([n1, n2, n2 + 1, n1 + 1], axis=1)

    def element_dofs(self) -> np.ndarray:
        """``(n_elements, 8)`` global DOF indices (ux, uy per node)."""
        nodes = self.element_nodes()
        return np.stack([2 * nodes, 2 * nodes + 1], axis=2).reshape(-1, 8)

    def element_grid(self, values: np.ndarray) -> np.ndarray:
        """Reshape a per-element array to ``(nely, nelx)`` with row 0 at ``y = 0``."""
        return np.asarray(values).reshape(self.nelx, self.nely).T

    def coarsened(self) -> "GridSpec":
        if not self.is_coarsenable:
            raise ValueError(f"cannot coarsen a {self.nelx}x{self.nely} grid 2:1")
        fine = self.active_mask.reshape(self.nelx, self.nely)
        blocks = fine.reshape(self.nelx // 2, 2, self.nely // 2, 2)
        return GridSpec(
            self.domain_width,
            self.domain_height,
            self.nelx // 2,
            self.nely // 2,
            blocks.any(axis=(1, 3)).ravel(),
        )


def build_element_stiffness(E: float, nu: float, ew: float, eh: float) -> np.ndarray:
    """8x8 plane-stress stiffness of a rectangular bilinear quad (unit thickness).

    Integrated with 2x2 Gauss points, which is exact for a rectangle.
    """
    if ew <= 0 or eh <= 0:
        raise ValueError("element dimensions must be positive")
    if E <= 0:
        raise ValueError("Young's modulus must be positive")
    if not 0.0 <= nu < 0.5:
        raise ValueError("Poisson's ratio must lie in [0, 0.5)")
    D = E / (1.0 - nu**2) * np.array(
        [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]]
    )
    xi_n = np.array([-1.0, 1.0, 1.0, -1.0])
    eta_n = np.array([-1.0, -1.0, 1.0, 1.0])
    g = 1.0 / np.sqrt(3.0)
    ke = np.zeros((8, 8))
    for xi in (-g, g):
        for eta in (-g, g):
            dN_dx = 0.25 * xi_n * (1.0 + eta * eta_n) * (2.0 / ew)
            dN_dy = 0.25 * eta_n * (1.0 + xi * xi_n) * (2.0 / eh)
            B = np.zeros((3, 8))
            B[0, 0::2] = dN_dx
            B[1, 1::2] = dN_dy
            B[2, 0::2] = dN_dy
            B[2, 1::2] = dN_dx
            ke += B.T @ D @ B * (0.25 * ew * eh)
    return 0.5 * (ke + ke.T)


@dataclass(frozen=True, eq=False)
class GlobalSystem:
    stiffness: sp.csr_matrix
    load: np.ndarray
    fixed_dofs: np.ndarray
    springs: tuple = ()
    dof_map: np.ndarray = field(default=None, repr=False)


class Assembler:
    """Reusable assembly of ``K = sum_e E^e ke`` on a fixed sparsity pattern.

    Fixed DOFs are eliminated symmetrically (zero row and column, unit
    diagonal). Springs add to the diagonal of unconstrained DOFs.
    """

    def __init__(
        self,
        grid: GridSpec,
        ke: np.ndarray,
        fixed_dofs: Iterable[int] = (),
        springs: Sequence[tuple[int, float]] = (),
        e_min: float = 1e-12,
    ):
        self.grid = grid
        self.ke = np.asarray(ke, dtype=float)
        self.e_min = e_min
        n = grid.n_dofs
        self.fixed_dofs = np.unique(np.asarray(list(fixed_dofs), dtype=int))
        if self.fixed_dofs.size and (self.fixed_dofs.min() < 0 or self.fixed_dofs.max() >= n):
            raise ValueError("fixed DOF index out of range")
        self.springs = tuple((int(j), float(k)) for j, k in springs)
        for j, k in self.springs:
            if not 0 <= j < n:
                raise ValueError(f"spring DOF {j} out of range")
            if k < 0:
                raise ValueError("spring stiffness must be non-negative")

        self.edof = grid.element_dofs()
        rows = np.repeat(self.edof, 8, axis=1).ravel()
        cols = np.tile(self.edof, (1, 8)).ravel()
        key = rows * n + cols
        uniq, self._pos = np.unique(key, return_inverse=True)
        self._pos = self._pos.ravel()
        self.indptr = np.searchsorted(uniq // n, np.arange(n + 1))
        self.indices = (uniq % n).astype(np.int32)
        self.nnz = uniq.size

        is_fixed = np.zeros(n, dtype=bool)
        is_fixed[self.fixed_dofs] = True
        self.free_entry = ~(is_fixed[rows] | is_fixed[cols])
        self.diag_pos = np.searchsorted(uniq, np.arange(n) * n + np.arange(n))
        self._ke_flat = self.ke.ravel()
        self._is_fixed = is_fixed

    def stiffness(self, moduli: np.ndarray) -> sp.csr_matrix:
        moduli = np.asarray(moduli, dtype=float)
        if moduli.shape != (self.grid.n_elements,):
            raise ValueError("need one modulus per element")
        if not np.all(moduli >= self.e_min):
            raise SingularityRiskError(
                f"element modulus {moduli.min():.3e} below floor {self.e_min:.3e}"
            )
        w = (moduli[:, None] * self._ke_flat[None, :]).ravel()
        w[~self.free_entry] = 0.0
        data = np.bincount(self._pos, weights=w, minlength=self.nnz)
        data[self.diag_pos[self.fixed_dofs]] = 1.0
        for j, k in self.springs:
            if not self._is_fixed[j]:
                data[self.diag_pos[j]] += k
        n = self.grid.n_dofs
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))


def assemble_global(
    grid: GridSpec,
    ke: np.ndarray,
    element_moduli: np.ndarray,
    fixed_dofs: Iterable[int] = (),
    springs: Sequence[tuple[int, float]] = (),
    e_min: float = 1e-12,
) -> GlobalSystem:
    asm = Assembler(grid, ke, fixed_dofs, springs, e_min=e_min)
    K = asm.stiffness(element_moduli)
    return GlobalSystem(K, np.zeros(grid.n_dofs), asm.fixed_dofs, asm.springs, asm.edof)


def apply_load(
    system: GlobalSystem, loads: Sequence[tuple[int, int, float]], grid: GridSpec | None = None
) -> GlobalSystem:
    """Return a copy of ``system`` whose load vector holds the given point loads.

    ``loads`` is a list of ``(node, direction, magnitude)`` with direction 0
    for x and 1 for y. Repeated DOFs superpose.
    """
    n = system.stiffness.shape[0]
    F = np.zeros(n)
    fixed = set(int(j) for j in system.fixed_dofs)
    for node, direction, magnitude in loads:
        if direction not in (0, 1):
            raise ValueError("direction must be 0 (x) or 1 (y)")
        dof = 2 * int(node) + direction
        if not 0 <= dof < n:
            raise ValueError(f"node {node} out of range")
        if dof in fixed:
            warnings.warn(f"load on fixed DOF {dof} ignored", stacklevel=2)
            continue
        F[dof] += magnitude
    return replace(system, load=F)


@dataclass(frozen=True, eq=False)
class Prolongation:
    weights: sp.csr_matrix
    coarse_grid: GridSpec


def _interp_1d(n_fine: int) -> sp.csr_matrix:
    """Linear interpolation from ``n_fine/2 + 1`` coarse to ``n_fine + 1`` fine points."""
    rows, cols, vals = [], [], []
    for i in range(n_fine + 1):
        if i % 2 == 0:
            rows.append(i), cols.append(i // 2), vals.append(1.0)
        else:
            rows += [i, i]
            cols += [(i - 1) // 2, (i + 1) // 2]
            vals += [0.5, 0.5]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_fine + 1, n_fine // 2 + 1))


def build_prolongation(fine: GridSpec, fixed_dofs: Iterable[int] = ()) -> Prolongation:
    """Bilinear fine-from-coarse interpolation, one block per displacement direction.

    Rows of constrained fine DOFs are zeroed so the coarse correction never
    moves a support; this leaves ``P^T K P`` free of the unit diagonals used
    for elimination.
    """
    if not fine.is_coarsenable:
        raise ValueError(f"element counts must be even, got {fine.nelx}x{fine.nely}")
    coarse = fine.coarsened()
    # node = ix * (nely+1) + iy  ->  kron(Ix, Iy)
    nodal = sp.kron(_interp_1d(fine.nelx), _interp_1d(fine.nely), format="csr")
    P = sp.kron(nodal, sp.identity(2), format="csr")
    fixed = np.asarray(list(fixed_dofs), dtype=int)
    if fixed.size:
        keep = np.ones(fine.n_dofs)
        keep[fixed] = 0.0
        P = sp.diags(keep) @ P
        P.eliminate_zeros()
    return Prolongation(sp.csr_matrix(P), coarse)

"""Adjoint sensitivities of compliance, output displacement and volume.

Every design derivative of the stiffness enters through the ersatz moduli,
``dE^e/da = (E q / 4) sum_i H_i^(q-1) dH_i/da``, and each nodal ``dH_i/da``
is non-zero only for the parameters of the component that owns node ``i``.
The routines therefore work per node: an element quantity is summed onto its
four nodes, weighted by ``dE^e/dH_i``, and contracted with ``dH/da``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh_fe import GridSpec
from .mmc import N_PARAMS, FieldSnapshot, HeavisideParams, as_design, nodal_heaviside_derivatives


@dataclass(frozen=True, eq=False)
class GradientVector:
    values: np.ndarray  # 7 * n_components, component-major
    objective_value: float
    constraint_value: float

    def as_matrix(self) -> np.ndarray:
        return self.values.reshape(-1, N_PARAMS)


def _check_vector(name, v, n):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"{name} must have length {n}, got shape {v.shape}")
    return v


def _scatter_to_design(design, grid, snapshot, params, nodal_weight) -> np.ndarray:
    """``sum_n nodal_weight[n] * dH_n/da`` for every design variable ``a``."""
    nodes, owner, dH = nodal_heaviside_derivatives(design, grid, snapshot, params)
    n_comp = design.shape[0]
    if nodes.size == 0:
        return np.zeros(n_comp * N_PARAMS)
    w = nodal_weight[nodes]
    idx = (owner[None, :] * N_PARAMS + np.arange(N_PARAMS)[:, None]).ravel()
    return np.bincount(idx, weights=(dH * w[None, :]).ravel(), minlength=n_comp * N_PARAMS)


def _nodal_modulus_weight(grid, element_values, snapshot, params, E):
    """``sum_{e ni n} element_values[e] * dE^e/dH_n`` for every node ``n``.

    Passive elements have a pinned modulus and contribute nothing.
    """
    H = snapshot.H_nodal
    en = grid.element_nodes()
    vals = np.where(grid.active_mask, element_values, 0.0)
    contrib = (E * params.q / 4.0) * H[en] ** (params.q - 1) * vals[:, None]
    return np.bincount(en.ravel(), weights=contrib.ravel(), minlength=grid.n_nodes)


def _element_products(grid: GridSpec, ke, A, B) -> np.ndarray:
    """``a_e^T ke b_e`` for every element."""
    edof = grid.element_dofs()
    a, b = A[edof], B[edof]
    return np.einsum("ei,ij,ej->e", a, ke, b)


def compliance_gradient(
    U,
    snapshot: FieldSnapshot,
    components,
    ke,
    params: HeavisideParams,
    grid: GridSpec,
    E: float = 1.0,
    load=None,
) -> GradientVector:
    """``dC/da = -U^T (dK/da) U`` for the compliance ``C = F^T U``.

    The objective value is ``F^T U`` when ``load`` is given, else ``U^T K U``.
    The constraint value is the volume fraction of the snapshot.
    """
    design = as_design(components)
    U = _check_vector("U", U, grid.n_dofs)
    energy = _element_products(grid, ke, U, U)
    weight = _nodal_modulus_weight(grid, energy, snapshot, params, E)
    values = -_scatter_to_design(design, grid, snapshot, params, weight)
    if load is not None:
        C = float(_check_vector("load", load, grid.n_dofs) @ U)
    else:
        C = float(snapshot.element_moduli @ energy)
    return GradientVector(values, C, snapshot.volume_fraction)


def mechanism_gradient(
    U,
    lam,
    snapshot: FieldSnapshot,
    components,
    ke,
    params: HeavisideParams,
    grid: GridSpec,
    E: float = 1.0,
    output=None,
) -> GradientVector:
    """``dC/da = lam^T (dK/da) U`` for ``C = l^T U`` with ``K lam = -l``.

    ``output`` is the selector ``l``; when given the objective value is
    ``l^T U``, otherwise ``-lam^T K U`` (equal for exact solves). Spring
    stiffnesses do not depend on the design and drop out.
    """
    design = as_design(components)
    U = _check_vector("U", U, grid.n_dofs)
    lam = _check_vector("lam", lam, grid.n_dofs)
    mutual = _element_products(grid, ke, lam, U)
    weight = _nodal_modulus_weight(grid, mutual, snapshot, params, E)
    values = _scatter_to_design(design, grid, snapshot, params, weight)
    if output is not None:
        C = float(_check_vector("output", output, grid.n_dofs) @ U)
    else:
        C = -float(snapshot.element_moduli @ mutual)
    return GradientVector(values, C, snapshot.volume_fraction)


def volume_gradient(snapshot: FieldSnapshot, components, grid: GridSpec, params: HeavisideParams) -> np.ndarray:
    """Derivative of the active-area volume fraction for every design variable."""
    design = as_design(components)
    en = grid.element_nodes()[grid.active_mask]
    # each active element spreads 1/4 of its area onto each of its nodes
    weight = np.bincount(en.ravel(), minlength=grid.n_nodes) / (4.0 * en.shape[0])
    return _scatter_to_design(design, grid, snapshot, params, weight)

"""Moving morphable components: geometry, ersatz moduli and volume.

A component is a straight-skeleton bar with a quadratically varying
half-thickness, described by a hyperelliptic topology description function
(TDF) that is positive inside, zero on the boundary and negative outside.
The structure is the max-union of its components. The Heaviside band is
applied to a first-order signed distance derived from the TDF, so that its
width is a length.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass
from pathlib import Path

import numba
import numpy as np

from .mesh_fe import GridSpec

N_PARAMS = 7
PARAM_NAMES = ("x0", "y0", "half_length", "t1", "t2", "t3", "theta")
TDF_POWER = 6


@dataclass(frozen=True)
class Component:
    x0: float
    y0: float
    half_length: float
    t1: float
    t2: float
    t3: float
    theta: float

    def __post_init__(self):
        if self.half_length <= 0:
            raise ValueError("half_length must be positive")
        if min(self.t1, self.t2, self.t3) <= 0:
            raise ValueError("thicknesses must be positive")

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, a) -> "Component":
        return cls(*map(float, a))


def as_design(components) -> np.ndarray:
    """Stack components (or an existing array) into an ``(n, 7)`` design array."""
    if isinstance(components, Component):
        return components.to_array()[None, :]
    if isinstance(components, np.ndarray):
        design = np.atleast_2d(np.asarray(components, dtype=float))
    else:
        design = np.array(
            [c.to_array() if isinstance(c, Component) else c for c in components], dtype=float
        )
    if design.ndim != 2 or design.shape[1] != N_PARAMS or design.shape[0] == 0:
        raise ValueError("need at least one component with 7 parameters")
    return design


@dataclass(frozen=True)
class HeavisideParams:
    epsilon: float
    alpha: float = 1e-3
    q: int = 2

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if int(self.q) != self.q or self.q < 2:
            raise ValueError("q must be an integer >= 2")

    @classmethod
    def for_grid(cls, grid: GridSpec, alpha: float = 1e-3, q: int = 2) -> "HeavisideParams":
        return cls(min(grid.element_width, grid.element_height), alpha, q)


def _local_frame(p: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Rotate ``(x, y)`` into each component's frame. ``p`` is ``(n, 7)``."""
    dx = x[None, :] - p[:, 0:1]
    dy = y[None, :] - p[:, 1:2]
    c = np.cos(p[:, 6:7])
    s = np.sin(p[:, 6:7])
    return c * dx + s * dy, -s * dx + c * dy, c, s


@dataclass(frozen=True, eq=False)
class _Profile:
    """Half-thickness ``f(X)`` along the skeleton with its X-derivatives and
    its partials with respect to ``(L, t1, t2, t3)`` at fixed ``X``."""

    f: np.ndarray
    fp: np.ndarray
    fpp: np.ndarray
    f_s: np.ndarray  # (4, ...)
    fp_s: np.ndarray  # (4, ...)


def _profile(L, t1, t2, t3, X, partials: bool = True) -> _Profile:
    """Quadratic through ``(-L, t1), (0, t2), (L, t3)``, floored at ``min(t1, t2, t3)``.

    A convex quadratic can pinch between its samples (or turn negative just
    past a tip), where ``1/f`` terms make the TDF wildly sensitive; the floor
    keeps every cross-section at least as thick as the thinnest sample.
    """
    b = (t3 - t1) / (2 * L)
    a = (t1 + t3 - 2 * t2) / (2 * L**2)
    quad = t2 + b * X + a * X**2
    t_lo = np.minimum(np.minimum(t1, t2), t3)
    clamped = quad < t_lo
    f = np.where(clamped, t_lo, quad)
    fp = np.where(clamped, 0.0, b + 2 * a * X)
    fpp = np.where(clamped, 0.0, 2 * a + 0 * X)
    if not partials:
        return _Profile(f, fp, fpp, None, None)
    free = ~clamped
    zero = np.zeros_like(quad)
    lo_idx = np.argmin(np.stack(np.broadcast_arrays(t1, t2, t3)), axis=0)
    f_s = np.stack([
        np.where(free, -b * X / L - 2 * a * X**2 / L, zero),
        np.where(free, -X / (2 * L) + X**2 / (2 * L**2), lo_idx == 0),
        np.where(free, 1 - X**2 / L**2, lo_idx == 1),
        np.where(free, X / (2 * L) + X**2 / (2 * L**2), lo_idx == 2),
    ]).astype(float)
    fp_s = np.stack([
        np.where(free, -b / L - 4 * a * X / L, zero),
        np.where(free, -1 / (2 * L) + X / L**2, zero),
        np.where(free, -2 * X / L**2, zero),
        np.where(free, 1 / (2 * L) + X / L**2, zero),
    ])
    return _Profile(f, fp, fpp, f_s, fp_s)


def _thickness_profile(p, xl):
    L, t1, t2, t3 = (p[:, k : k + 1] for k in (2, 3, 4, 5))
    return _profile(L, t1, t2, t3, xl, partials=False).f


def tdf(component, x, y) -> np.ndarray:
    """Per-component TDF at the points ``(x, y)``.

    Returns shape ``(n_components, n_points)``; a single ``Component`` gives
    ``(1, n_points)``. Scalars are accepted for ``x`` and ``y``.
    """
    p = as_design(component)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    xl, yl, _, _ = _local_frame(p, x, y)
    f = _thickness_profile(p, xl)
    return 1.0 - (xl / p[:, 2:3]) ** TDF_POWER - (yl / f) ** TDF_POWER


def combine_max(components, x, y, return_owner: bool = False):
    """Structure TDF ``max_k phi_k``; ``owner`` is the argmax (lowest index on ties)."""
    phis = tdf(components, x, y)
    owner = np.argmax(phis, axis=0)
    phi_s = np.take_along_axis(phis, owner[None, :], axis=0)[0]
    if return_owner:
        return phi_s, owner
    return phi_s


def tdf_gradient(component, x, y, param_index: int | None = None) -> np.ndarray:
    """Analytic partial derivatives of a single component's TDF.

    Returns ``(7, n_points)`` ordered as ``PARAM_NAMES``, or one row when
    ``param_index`` is given.
    """
    p = as_design(component)
    if p.shape[0] != 1:
        raise ValueError("tdf_gradient takes a single component")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    grads = _tdf_partials(p, x, y, np.zeros(x.size, dtype=int))
    return grads if param_index is None else grads[param_index]


def _tdf_partials(design: np.ndarray, x, y, owner) -> np.ndarray:
    """``(7, n_points)`` partials of the TDF of component ``owner[i]`` at point ``i``."""
    p = design[owner]  # (m, 7), one row per point
    dx = x - p[:, 0]
    dy = y - p[:, 1]
    c, s = np.cos(p[:, 6]), np.sin(p[:, 6])
    xl = c * dx + s * dy
    yl = -s * dx + c * dy
    L = p[:, 2]
    prof = _profile(L, p[:, 3], p[:, 4], p[:, 5], xl)
    f = prof.f
    n = TDF_POWER
    rx = xl / L
    ry = yl / f
    ryn_f = n * ry**n / f  # d/df of -(yl/f)^n

    dphi_dxl = -n * rx ** (n - 1) / L + ryn_f * prof.fp
    dphi_dyl = -n * ry ** (n - 1) / f

    out = np.empty((N_PARAMS, x.size))
    out[0] = -c * dphi_dxl + s * dphi_dyl
    out[1] = -s * dphi_dxl - c * dphi_dyl
    out[2:6] = ryn_f * prof.f_s
    out[2] += n * rx**n / L
    out[6] = yl * dphi_dxl - xl * dphi_dyl
    return out


def _distance_partials(design: np.ndarray, x, y, owner):
    """First-order signed distance ``d = phi / |grad phi|`` of component
    ``owner[i]`` at point ``i``, and its ``(7, n_points)`` parameter partials.

    ``d`` has the zero set of the TDF but length units, so a Heaviside band
    of one element is one element wide whatever the component thickness.
    Away from the boundary the ratio underestimates the true distance (about
    ``r / p`` far out), which widens the outer fringe of the band; that
    fringe keeps nearly touching components sensitive to each other.
    At a component's centre ``grad phi`` vanishes and ``d = +inf``.
    """
    p = design[owner]
    dx = x - p[:, 0]
    dy = y - p[:, 1]
    c, s = np.cos(p[:, 6]), np.sin(p[:, 6])
    X = c * dx + s * dy
    Y = -s * dx + c * dy
    L = p[:, 2]
    n = TDF_POWER
    prof = _profile(L, p[:, 3], p[:, 4], p[:, 5], X)
    f, fp = prof.f, prof.fp
    u = X / L
    v = Y / f

    phi = 1.0 - u**n - v**n
    A = -n * u ** (n - 1) / L + n * v**n * fp / f  # d phi / dX
    Bv = -n * v ** (n - 1) / f  # d phi / dY
    G = np.hypot(A, Bv)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(G > 0, phi / np.where(G > 0, G, 1.0), np.inf)
    f_s, fp_s = prof.f_s, prof.fp_s

    # derivatives of (phi, A, Bv) with respect to X, Y and the shape parameters
    A_X = -n * (n - 1) * u ** (n - 2) / L**2 + n * v**n * (prof.fpp / f - (n + 1) * fp**2 / f**2)
    A_Y = n**2 * v ** (n - 1) * fp / f**2
    B_Y = -n * (n - 1) * v ** (n - 2) / f**2
    phi_s = n * v**n * f_s / f
    phi_s[0] += n * u**n / L
    A_s = n * v**n * (fp_s / f - (n + 1) * fp * f_s / f**2)
    A_s[0] += n**2 * u ** (n - 1) / L**2
    B_s = n**2 * v ** (n - 1) * f_s / f**2

    safe_G = np.where(G > 0, G, 1.0)

    def d_of(phi_t, A_t, B_t):
        G_t = (A * A_t + Bv * B_t) / safe_G
        return np.where(G > 0, phi_t / safe_G - phi * G_t / safe_G**2, 0.0)

    d_X = d_of(A, A_X, A_Y)
    d_Y = d_of(Bv, A_Y, B_Y)
    out = np.empty((N_PARAMS, x.size))
    out[0] = -c * d_X + s * d_Y
    out[1] = -s * d_X - c * d_Y
    out[2:6] = d_of(phi_s, A_s, B_s)
    out[6] = Y * d_X - X * d_Y
    return d, out


@numba.njit(cache=True)
def _tdf_and_distance_kernel(p, x, y, phi, dist):
    n = TDF_POWER
    for k in range(p.shape[0]):
        x0, y0, L, t1, t2, t3, th = p[k, 0], p[k, 1], p[k, 2], p[k, 3], p[k, 4], p[k, 5], p[k, 6]
        c, s = np.cos(th), np.sin(th)
        b = (t3 - t1) / (2 * L)
        a = (t1 + t3 - 2 * t2) / (2 * L * L)
        t_lo = min(t1, t2, t3)
        for i in range(x.size):
            dx, dy = x[i] - x0, y[i] - y0
            X = c * dx + s * dy
            Y = -s * dx + c * dy
            f = t2 + b * X + a * X * X
            fp = b + 2 * a * X
            if f < t_lo:
                f, fp = t_lo, 0.0
            u = X / L
            v = Y / f
            un1 = u ** (n - 1)
            vn1 = v ** (n - 1)
            ph = 1.0 - un1 * u - vn1 * v
            A = -n * un1 / L + n * vn1 * v * fp / f
            B = -n * vn1 / f
            G = np.sqrt(A * A + B * B)
            phi[k, i] = ph
            dist[k, i] = ph / G if G > 0 else np.inf


def _tdf_and_distance(p: np.ndarray, x, y):
    """Per-component TDF and distance estimate, both ``(n_components, n_points)``."""
    p = np.ascontiguousarray(p, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    phi = np.empty((p.shape[0], x.size))
    dist = np.empty_like(phi)
    _tdf_and_distance_kernel(p, x, y, phi, dist)
    return phi, dist


def tdf_distance(component, x, y) -> np.ndarray:
    """Per-component signed distance estimate ``phi / |grad phi|``, shape ``(n_components, n_points)``."""
    p = as_design(component)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return _tdf_and_distance(p, x, y)[1]


def distance_gradient(component, x, y) -> np.ndarray:
    """Analytic ``(7, n_points)`` partials of a single component's distance estimate."""
    p = as_design(component)
    if p.shape[0] != 1:
        raise ValueError("distance_gradient takes a single component")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return _distance_partials(p, x, y, np.zeros(x.size, dtype=int))[1]


def heaviside(phi, params: HeavisideParams):
    """C1 regularized step: ``alpha`` below ``-eps``, 1 above ``eps``, cubic blend between."""
    eps, a = params.epsilon, params.alpha
    r = np.clip(np.asarray(phi, dtype=float) / eps, -1.0, 1.0)
    return 0.75 * (1.0 - a) * (r - r**3 / 3.0) + 0.5 * (1.0 + a)


def heaviside_derivative(phi, params: HeavisideParams):
    eps, a = params.epsilon, params.alpha
    r = np.clip(np.asarray(phi, dtype=float) / eps, -1.0, 1.0)
    return 0.75 * (1.0 - a) / eps * (1.0 - r**2)


def element_moduli(H_nodal, grid: GridSpec, E: float, q: int, alpha: float = 1e-3):
    """Ersatz modulus ``E * mean_i(H_i^q)`` over each element's four nodes.

    Passive (inactive) elements are pinned to ``E * alpha^q``.
    """
    H_nodal = np.asarray(H_nodal, dtype=float)
    Ee = E * np.mean(H_nodal[grid.element_nodes()] ** q, axis=1)
    if not grid.active_mask.all():
        Ee = np.where(grid.active_mask, Ee, E * alpha**q)
    return Ee


def _element_H(H_nodal, grid: GridSpec) -> np.ndarray:
    return np.mean(np.asarray(H_nodal, dtype=float)[grid.element_nodes()], axis=1)


def volume(H_nodal, grid: GridSpec, bound: float = 0.0):
    """Material volume fraction over the active elements and ``g = fraction - bound``."""
    H_elem = _element_H(H_nodal, grid)
    active = grid.active_mask
    fraction = float(H_elem[active].sum() / active.sum())
    return fraction, fraction - bound


@dataclass(frozen=True, eq=False)
class FieldSnapshot:
    """Nodal fields of one design.

    ``phi_nodal`` is the structure TDF ``max_k phi_k``; ``dist_nodal`` is the
    max of the per-component distance estimates, whose argmax is ``owner``.
    The two share their sign everywhere; ``H_nodal`` is the Heaviside of
    ``dist_nodal``.
    """

    phi_nodal: np.ndarray
    dist_nodal: np.ndarray
    owner: np.ndarray
    H_nodal: np.ndarray
    element_moduli: np.ndarray
    volume_fraction: float

    def element_density(self, grid: GridSpec) -> np.ndarray:
        """Element-averaged Heaviside field, ``(nely, nelx)`` with row 0 at ``y = 0``."""
        return grid.element_grid(_element_H(self.H_nodal, grid))


def field_snapshot(design, grid: GridSpec, params: HeavisideParams, E: float = 1.0) -> FieldSnapshot:
    design = as_design(design)
    x, y = grid.node_coordinates()
    phis, dist = _tdf_and_distance(design, x, y)
    phi = phis.max(axis=0)
    owner = np.argmax(dist, axis=0)
    dist_s = np.take_along_axis(dist, owner[None, :], axis=0)[0]
    H = heaviside(dist_s, params)
    Ee = element_moduli(H, grid, E, params.q, params.alpha)
    frac, _ = volume(H, grid)
    return FieldSnapshot(phi, dist_s, owner, H, Ee, frac)


def nodal_heaviside_derivatives(design, grid: GridSpec, snapshot: FieldSnapshot, params: HeavisideParams):
    """Non-zero ``dH/da`` at nodes inside the regularization band.

    Returns ``(nodes, owner, dH)`` where ``dH`` is ``(7, len(nodes))``: the
    derivative of the nodal Heaviside value with respect to the 7 parameters
    of the owning (argmax) component. Every other derivative is zero.
    """
    design = as_design(design)
    nodes = np.flatnonzero(np.abs(snapshot.dist_nodal) < params.epsilon)
    x, y = grid.node_coordinates()
    owner = snapshot.owner[nodes]
    _, dd = _distance_partials(design, x[nodes], y[nodes], owner)
    dH = heaviside_derivative(snapshot.dist_nodal[nodes], params)
    return nodes, owner, dd * dH[None, :]


def write_components(path, design, grid: GridSpec) -> None:
    """Plain-text snapshot: header ``count nelx nely width height``, then 7 fields per line."""
    design = as_design(design)
    lines = [f"{design.shape[0]} {grid.nelx} {grid.nely} {grid.domain_width!r} {grid.domain_height!r}"]
    lines += [" ".join(f"{v!r}" for v in map(float, row)) for row in design]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_components(path):
    """Inverse of ``write_components``: returns ``(design, (nelx, nely, width, height))``."""
    rows = Path(path).read_text(encoding="utf-8").split("\n")
    head = rows[0].split()
    count = int(head[0])
    grid_info = (int(head[1]), int(head[2]), float(head[3]), float(head[4]))
    design = np.array([[float(v) for v in r.split()] for r in rows[1 : 1 + count]])
    if design.shape != (count, N_PARAMS):
        raise ValueError(f"expected {count} components with {N_PARAMS} fields")
    return design, grid_info

"""Benchmark problems: cantilever beam, L-shape beam, displacement inverter."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh_fe import GridSpec
from .mmc import HeavisideParams, field_snapshot

INITIAL_THICKNESS_RATIO = 0.1
PROBLEMS = ("cantilever", "lshape", "mechanism")


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    name: str
    grid: GridSpec
    volume_fraction_bound: float
    loads: tuple  # (node, direction, magnitude)
    fixed_dofs: np.ndarray
    springs: tuple  # (dof, stiffness)
    objective_kind: str  # "compliance" | "output-displacement"
    initial_components: np.ndarray
    lower: np.ndarray  # per-parameter physical bounds, shape (7,)
    upper: np.ndarray
    output_dof: int | None = None
    E: float = 1.0
    nu: float = 0.3
    defaults: dict = field(default_factory=dict)

    @property
    def n_components(self) -> int:
        return self.initial_components.shape[0]

    @property
    def scale(self) -> np.ndarray:
        """Per-parameter normalization: coordinates by (DW, DH), lengths by DW,
        thicknesses by DH, angle by pi."""
        DW, DH = self.grid.domain_width, self.grid.domain_height
        return np.array([DW, DH, DW, DH, DH, DH, math.pi])

    def load_vector(self) -> np.ndarray:
        F = np.zeros(self.grid.n_dofs)
        for node, direction, magnitude in self.loads:
            F[2 * node + direction] += magnitude
        return F

    def output_vector(self) -> np.ndarray:
        l = np.zeros(self.grid.n_dofs)
        if self.output_dof is not None:
            l[self.output_dof] = 1.0
        return l

    def heaviside_params(self) -> HeavisideParams:
        return HeavisideParams.for_grid(self.grid)


def _edge_nodes(grid: GridSpec, side: str) -> np.ndarray:
    if side == "left":
        return grid.node_id(0, np.arange(grid.nely + 1))
    raise ValueError(side)


def _dofs(nodes) -> np.ndarray:
    nodes = np.asarray(nodes)
    return np.sort(np.concatenate([2 * nodes, 2 * nodes + 1]))


def _check_grid(nelx: int, nely: int) -> None:
    if nelx < 2 or nely < 2 or nelx % 2 or nely % 2:
        raise ValueError(f"grid {nelx}x{nely} must have even element counts >= 2")


def _lshape_mask(nelx: int, nely: int) -> np.ndarray:
    """Inactive block: the top-right 60% of the width by 40% of the height."""
    if (nelx * 3) % 5 or (nely * 2) % 5:
        raise ValueError("L-shape grids need nelx and nely divisible by 5")
    ex, ey = np.divmod(np.arange(nelx * nely), nely)
    void = (ex >= nelx - nelx * 3 // 5) & (ey >= nely - nely * 2 // 5)
    return ~void


def initial_layout(name: str, grid: GridSpec) -> np.ndarray:
    """Crossed pairs of components spanning the diagonals of a regular cell grid."""
    if name in ("cantilever", "mechanism"):
        nx, ny = 4, 2
    elif name == "lshape":
        nx, ny = 4, 4
    else:
        raise ValueError(f"unknown problem {name!r}")
    cw, ch = grid.domain_width / nx, grid.domain_height / ny
    half_len = 0.5 * math.hypot(cw, ch)
    angle = math.atan2(ch, cw)
    t = INITIAL_THICKNESS_RATIO * min(cw, ch)
    rows = []
    for i in range(nx):
        for j in range(ny):
            xc, yc = (i + 0.5) * cw, (j + 0.5) * ch
            if name == "lshape" and xc > 0.4 * grid.domain_width and yc > 0.6 * grid.domain_height:
                continue
            for sign in (1.0, -1.0):
                rows.append([xc, yc, half_len, t, t, t, sign * angle])
    return np.array(rows)


def build_problem(name: str, nelx: int, nely: int) -> ProblemSpec:
    _check_grid(nelx, nely)
    if name in ("cantilever", "mechanism"):
        grid = GridSpec(2.0, 1.0, nelx, nely)
    elif name == "lshape":
        grid = GridSpec(1.0, 1.0, nelx, nely, _lshape_mask(nelx, nely))
    else:
        raise ValueError(f"unknown problem {name!r}; expected one of {PROBLEMS}")

    DW, DH = grid.domain_width, grid.domain_height
    t_min = 0.01 * min(DW, DH)
    # a half-length far below the thickness makes the quadratic profile blow up
    # across the band beyond the tips, so L has its own floor
    l_min = 0.05 * min(DW, DH)
    lower = np.array([0.0, 0.0, l_min, t_min, t_min, t_min, -math.pi])
    upper = np.array([DW, DH, max(DW, DH), 0.2 * min(DW, DH), 0.2 * min(DW, DH), 0.2 * min(DW, DH), math.pi])
    components = initial_layout(name, grid)
    common = dict(grid=grid, initial_components=components, lower=lower, upper=upper)

    if name == "cantilever":
        load_node = int(grid.node_id(nelx, nely // 2))
        return ProblemSpec(
            name,
            volume_fraction_bound=0.4,
            loads=((load_node, 1, -1.0),),
            fixed_dofs=_dofs(_edge_nodes(grid, "left")),
            springs=(),
            objective_kind="compliance",
            defaults=dict(eta=0.11, eps_star=1e-2, delta=0.002, max_iter=600),
            **common,
        )
    if name == "lshape":
        top = grid.node_id(np.arange(nelx * 2 // 5 + 1), nely)
        load_node = int(grid.node_id(nelx, nely * 3 // 10))
        return ProblemSpec(
            name,
            volume_fraction_bound=0.3,
            loads=((load_node, 1, -1.0),),
            fixed_dofs=_dofs(top),
            springs=(),
            objective_kind="compliance",
            defaults=dict(eta=0.05, eps_star=1e-2, delta=0.001, max_iter=600),
            **common,
        )
    # displacement inverter: push right at mid-left, want mid-right to move left
    in_node = int(grid.node_id(0, nely // 2))
    out_node = int(grid.node_id(nelx, nely // 2))
    corners = [int(grid.node_id(0, 0)), int(grid.node_id(0, nely))]
    k_spring = 0.1
    return ProblemSpec(
        name,
        volume_fraction_bound=0.3,
        loads=((in_node, 0, 1.0),),
        fixed_dofs=_dofs(corners),
        springs=((2 * in_node, k_spring), (2 * out_node, k_spring)),
        objective_kind="output-displacement",
        output_dof=2 * out_node,
        defaults=dict(eta=0.13, eps_star=1e-2, delta=0.002, max_iter=600),
        **common,
    )


def initial_volume_fraction(problem: ProblemSpec) -> float:
    snap = field_snapshot(problem.initial_components, problem.grid, problem.heaviside_params(), problem.E)
    return snap.volume_fraction

"""MMA and GCMMA for one inequality constraint, plus the hybrid switch.

Both methods build the same separable convex approximation around the
current point and solve its dual, which for a single constraint is a
one-dimensional concave maximization handled by bisection. The artificial
variable ``y`` (penalized by ``c``) keeps the subproblem feasible when the
constraint cannot be met inside the move limits.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MmaState:
    xmin: np.ndarray
    xmax: np.ndarray
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    x_prev: np.ndarray | None = None
    x_prev2: np.ndarray | None = None
    move_limit: float = 0.1
    asy_init: float = 0.5
    asy_incr: float = 1.2
    asy_decr: float = 0.7
    albefa: float = 0.1
    c: float = 1000.0
    raa0: float = 1e-5
    outer_iter: int = 0
    last_solution: "SubproblemSolution | None" = field(default=None, repr=False)
    last_subproblem: "Subproblem | None" = field(default=None, repr=False)

    def __post_init__(self):
        self.xmin = np.asarray(self.xmin, dtype=float)
        self.xmax = np.asarray(self.xmax, dtype=float)
        if self.xmin.shape != self.xmax.shape or np.any(self.xmax <= self.xmin):
            raise ValueError("need xmin < xmax componentwise")
        if not (np.all(np.isfinite(self.xmin)) and np.all(np.isfinite(self.xmax))):
            raise ValueError("bounds must be finite")

    @property
    def span(self) -> np.ndarray:
        return self.xmax - self.xmin


@dataclass
class GcmmaState(MmaState):
    rho0: float = 0.0
    rho1: float = 0.0
    rho_eps: float = 1e-6
    inner_iter_cap: int = 15
    rho_log: list = field(default_factory=list)


@dataclass(frozen=True)
class SubproblemSolution:
    x: np.ndarray
    lam: float
    y: float


@dataclass(frozen=True)
class GcmmaResult:
    x: np.ndarray
    f0: float
    g: float
    conservative: bool
    inner_iterations: int
    rho_history: tuple


class Subproblem:
    """Separable approximation ``r_i + sum_j p_ij/(u_j - x_j) + q_ij/(x_j - l_j)``
    of the objective (``i = 0``) and the constraint (``i = 1``)."""

    def __init__(self, x, f0, df0, g, dg, low, upp, alpha, beta, span, rho0, rho1, c):
        self.x0 = x
        self.low, self.upp, self.alpha, self.beta, self.c = low, upp, alpha, beta, c
        ux2 = (upp - x) ** 2
        xl2 = (x - low) ** 2
        self.p0 = ux2 * (1.001 * np.maximum(df0, 0) + 0.001 * np.maximum(-df0, 0) + rho0 / span)
        self.q0 = xl2 * (0.001 * np.maximum(df0, 0) + 1.001 * np.maximum(-df0, 0) + rho0 / span)
        self.p1 = ux2 * (1.001 * np.maximum(dg, 0) + 0.001 * np.maximum(-dg, 0) + rho1 / span)
        self.q1 = xl2 * (0.001 * np.maximum(dg, 0) + 1.001 * np.maximum(-dg, 0) + rho1 / span)
        self.r0 = f0 - self._sum(self.p0, self.q0, x)
        self.r1 = g - self._sum(self.p1, self.q1, x)

    def _sum(self, p, q, x):
        return float(np.sum(p / (self.upp - x) + q / (x - self.low)))

    def approx(self, x) -> tuple[float, float]:
        return self.r0 + self._sum(self.p0, self.q0, x), self.r1 + self._sum(self.p1, self.q1, x)

    def x_of(self, lam: float) -> np.ndarray:
        P = self.p0 + lam * self.p1
        Q = self.q0 + lam * self.q1
        sp, sq = np.sqrt(P), np.sqrt(Q)
        denom = sp + sq
        safe = np.where(denom > 0, denom, 1.0)
        x = np.where(denom > 0, (sp * self.low + sq * self.upp) / safe, self.x0)
        return np.clip(x, self.alpha, self.beta)

    def y_of(self, lam: float) -> float:
        return max(0.0, lam - self.c)  # minimizer of c*y + y^2/2 - lam*y

    def dual_slope(self, lam: float) -> float:
        return self.approx(self.x_of(lam))[1] - self.y_of(lam)

    def solve(self) -> SubproblemSolution:
        if self.dual_slope(0.0) <= 0.0:
            return SubproblemSolution(self.x_of(0.0), 0.0, 0.0)
        hi = 1.0
        while self.dual_slope(hi) > 0.0:
            hi *= 2.0
            if hi > 1e300:
                raise ArithmeticError("dual bracket diverged")
        lo = 0.0
        for _ in range(2000):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if self.dual_slope(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        # pick the end with the smaller complementarity residual
        lam = lo if abs(self.dual_slope(lo)) * lo <= abs(self.dual_slope(hi)) * hi else hi
        return SubproblemSolution(self.x_of(lam), lam, self.y_of(lam))

    def kkt_residual(self, sol: SubproblemSolution) -> float:
        """Largest violation of stationarity (projected onto the box), primal
        feasibility and complementarity, relative to the gradient scale."""
        x, lam, y = sol.x, sol.lam, sol.y
        P = self.p0 + lam * self.p1
        Q = self.q0 + lam * self.q1
        grad = P / (self.upp - x) ** 2 - Q / (x - self.low) ** 2
        at_lo = x <= self.alpha
        at_hi = x >= self.beta
        stat = np.where(at_lo, np.minimum(grad, 0.0), np.where(at_hi, np.maximum(grad, 0.0), grad))
        scale = max(1.0, float(np.max(np.abs(P / (self.upp - x) ** 2) + np.abs(Q / (x - self.low) ** 2))))
        g_t = self.approx(x)[1] - y
        feas = max(g_t, 0.0)
        comp = abs(lam * g_t)
        y_stat = abs(self.c + y - lam) if y > 0 else max(lam - self.c, 0.0)
        return max(float(np.max(np.abs(stat))) / scale, feas, comp / max(1.0, lam), y_stat / max(1.0, self.c))


def _update_asymptotes(x, state: MmaState) -> None:
    span = state.span
    if state.outer_iter < 2 or state.x_prev2 is None or state.low is None:
        state.low = x - state.asy_init * span
        state.upp = x + state.asy_init * span
    else:
        sign = (x - state.x_prev) * (state.x_prev - state.x_prev2)
        gamma = np.where(sign > 0, state.asy_incr, np.where(sign < 0, state.asy_decr, 1.0))
        low = x - gamma * (state.x_prev - state.low)
        upp = x + gamma * (state.upp - state.x_prev)
        state.low = np.clip(low, x - 10.0 * span, x - 0.01 * span)
        state.upp = np.clip(upp, x + 0.01 * span, x + 10.0 * span)


def _move_box(x, state: MmaState):
    span = state.span
    alpha = np.maximum.reduce([state.xmin, state.low + state.albefa * (x - state.low), x - state.move_limit * span])
    beta = np.minimum.reduce([state.xmax, state.upp - state.albefa * (state.upp - x), x + state.move_limit * span])
    return alpha, beta


def _check_inputs(x, df0, dg, state):
    x = np.asarray(x, dtype=float)
    df0 = np.asarray(df0, dtype=float)
    dg = np.asarray(dg, dtype=float).ravel()
    if not (x.shape == df0.shape == dg.shape == state.xmin.shape):
        raise ValueError("x, gradients and bounds must have equal lengths")
    if np.any(x < state.xmin) or np.any(x > state.xmax):
        raise ValueError("x outside its bounds")
    return x, df0, dg


def _advance(state: MmaState, x) -> None:
    state.x_prev2 = state.x_prev
    state.x_prev = x.copy()
    state.outer_iter += 1


def build_subproblem(x, f0, df0, g, dg, state: MmaState, rho0=None, rho1=None) -> Subproblem:
    """Update the asymptotes for this outer iteration and build the approximation."""
    x, df0, dg = _check_inputs(x, df0, dg, state)
    _update_asymptotes(x, state)
    alpha, beta = _move_box(x, state)
    r0 = state.raa0 if rho0 is None else rho0
    r1 = state.raa0 if rho1 is None else rho1
    return Subproblem(x, float(f0), df0, float(np.ravel(g)[0]), dg, state.low, state.upp, alpha, beta, state.span, r0, r1, state.c)


def mma_step(x, f0, df0, g, dg, state: MmaState) -> np.ndarray:
    """One MMA iteration for ``min f0 s.t. g <= 0`` inside the box of ``state``."""
    sub = build_subproblem(x, f0, df0, g, dg, state)
    sol = sub.solve()
    state.last_solution = sol
    state.last_subproblem = sub
    _advance(state, np.asarray(x, dtype=float))
    return sol.x


def _initial_rho(df, span, eps):
    return max(0.1 * float(np.mean(np.abs(df) * span)), eps)


def gcmma_step(x, f0, df0, g, dg, evaluator, state: GcmmaState) -> GcmmaResult:
    """One GCMMA outer iteration.

    ``evaluator(x) -> (f0, g)`` is called at each trial point. The inner loop
    raises ``rho`` until the approximation is conservative for the objective
    and the constraint at the trial point, or the inner cap is hit.
    """
    x = np.asarray(x, dtype=float)
    _, df0a, dga = _check_inputs(x, df0, dg, state)
    state.rho0 = _initial_rho(df0a, state.span, state.rho_eps)
    state.rho1 = _initial_rho(dga, state.span, state.rho_eps)
    sub = build_subproblem(x, f0, df0, g, dg, state, state.rho0, state.rho1)
    history = []
    conservative = False
    inner = 0
    while True:
        history.append((state.rho0, state.rho1))
        sol = sub.solve()
        f_new, g_new = evaluator(sol.x)
        g_new = float(np.ravel(g_new)[0])
        f_apx, g_apx = sub.approx(sol.x)
        conservative = f_apx >= f_new and g_apx >= g_new
        if conservative or inner >= state.inner_iter_cap:
            break
        inner += 1
        # raise rho in proportion to the shortfall, normalized by the step "distance"
        d = float(
            np.sum((state.upp - state.low) * (sol.x - x) ** 2 / ((state.upp - sol.x) * (sol.x - state.low) * state.span))
        )
        d = max(d, 1e-10)
        if f_apx < f_new:
            state.rho0 = min(1.1 * (state.rho0 + (f_new - f_apx) / d), 10.0 * state.rho0)
        if g_apx < g_new:
            state.rho1 = min(1.1 * (state.rho1 + (g_new - g_apx) / d), 10.0 * state.rho1)
        sub = Subproblem(x, float(f0), df0a, float(np.ravel(g)[0]), dga, state.low, state.upp,
                         sub.alpha, sub.beta, state.span, state.rho0, state.rho1, state.c)
    state.rho_log.append(tuple(history))
    state.last_solution = sol
    state.last_subproblem = sub
    _advance(state, x)
    return GcmmaResult(sol.x, float(f_new), g_new, conservative, inner, tuple(history))


@dataclass
class SwitchMonitor:
    delta: float = 0.002
    f_hist: list = field(default_factory=list)
    switched: bool = False
    switch_iteration: int | None = None

    def push(self, f: float, iteration: int | None = None) -> bool:
        """Record an objective value; returns the (latched) switch state."""
        self.f_hist = (self.f_hist + [float(f)])[-3:]
        if not self.switched and should_switch(self):
            self.switched = True
            self.switch_iteration = iteration
        return self.switched


def _sym_change(a: float, b: float) -> float:
    mean = 0.5 * (abs(a) + abs(b))
    return 0.0 if mean == 0.0 else (a - b) / mean


def should_switch(monitor: SwitchMonitor) -> bool:
    """True once the two latest symmetric relative changes have a product in ``(-delta, 0)``."""
    if monitor.switched:
        return True
    if len(monitor.f_hist) < 3:
        return False
    f1, f2, f3 = monitor.f_hist[-3:]
    prod = _sym_change(f1, f2) * _sym_change(f2, f3)
    return -monitor.delta < prod < 0.0


def check_stop(x_new, x_old, tol: float, iteration: int, max_iter: int) -> tuple[bool, str | None]:
    change = float(np.max(np.abs(np.asarray(x_new) - np.asarray(x_old))))
    if change < tol:
        return True, "converged"
    if iteration >= max_iter:
        return True, "budget"
    return False, None

"""Optimization driver: the outer loop, run artifacts and the full-vs-IRA comparison."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .ira_solver import IRAConfig, IRASolver
from .linalg import SparseCholesky
from .mesh_fe import Assembler, build_element_stiffness, build_prolongation
from .mmc import field_snapshot, write_components
from .optimizer import GcmmaState, SwitchMonitor, check_stop, gcmma_step, mma_step
from .problems import PROBLEMS, ProblemSpec, build_problem
from .sensitivity import compliance_gradient, mechanism_gradient, volume_gradient

log = logging.getLogger(__name__)

HISTORY_COLUMNS = (
    "iteration",
    "objective",
    "constraint",
    "max_dx",
    "opt_mode",
    "solver_mode",
    "n_d",
    "v_cycles",
    "wall_s",
)
SNAPSHOT_EVERY = 10
# Component designs tear apart under the textbook 0.1 move / 0.5 asymptote
# spread; these tighter values keep the early iterations connected.
MOVE_LIMIT = 0.01
ASY_INIT = 0.2


@dataclass
class RunConfig:
    problem: str = "cantilever"
    nelx: int = 80
    nely: int = 40
    solver: str = "ira"
    eta: float | None = None
    eps_star: float | None = None
    delta: float | None = None
    tol_x: float = 1e-3
    max_iter: int | None = None
    seed: int | None = None
    output_dir: str | None = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.solver not in ("full", "ira"):
            raise ValueError("solver must be 'full' or 'ira'")
        for name in ("eta", "eps_star", "delta", "tol_x", "max_iter"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")

    def resolved(self, problem: ProblemSpec) -> "RunConfig":
        """Fill unset scalars from the problem defaults."""
        d = problem.defaults
        return replace(
            self,
            eta=d["eta"] if self.eta is None else self.eta,
            eps_star=d["eps_star"] if self.eps_star is None else self.eps_star,
            delta=d["delta"] if self.delta is None else self.delta,
            max_iter=d["max_iter"] if self.max_iter is None else self.max_iter,
        )


@dataclass
class HistoryRow:
    iteration: int
    objective: float
    constraint: float
    max_dx: float
    opt_mode: str
    solver_mode: str
    n_d: int
    v_cycles: int
    wall_s: float


@dataclass
class RunRecord:
    rows: list = field(default_factory=list)
    stop_reason: str | None = None
    refactorizations: int = 0
    reanalysis_iterations: int = 0
    switch_iteration: int | None = None
    fallbacks: int = 0
    final_components: np.ndarray | None = None

    @property
    def iterations(self) -> int:
        return len(self.rows)

    @property
    def final_objective(self) -> float:
        return self.rows[-1].objective

    @property
    def final_constraint(self) -> float:
        return self.rows[-1].constraint

    @property
    def wall_time(self) -> float:
        return self.rows[-1].wall_s if self.rows else 0.0

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]


# --------------------------------------------------------------------------
# linear solvers behind one interface
# --------------------------------------------------------------------------


class DirectAnalysis:
    """Full analysis: a fresh sparse Cholesky of the fine matrix per design."""

    name = "full"

    def __init__(self):
        self.refactorizations = 0
        self.fallbacks = 0
        self._factor = None

    def prepare(self, K) -> str:
        self._factor = SparseCholesky(K)
        self.refactorizations += 1
        return "direct"

    def solve(self, F, U0=None, key="state", probe=None):
        return self._factor.solve(F), 0

    @property
    def n_d(self) -> int:
        return 0


class IRAAnalysis:
    def __init__(self, prolongation, config: IRAConfig):
        self.solver = IRASolver(prolongation, config)

    def prepare(self, K) -> str:
        return self.solver.prepare(K)

    def solve(self, F, U0=None, key="state", probe=None):
        U, info = self.solver.solve(F, U0, key=key, sensitivity_probe=probe)
        if not info.converged:
            log.warning("IRA did not converge in %d cycles; used a direct solve", info.v_cycles)
        return U, info.v_cycles

    @property
    def n_d(self) -> int:
        return self.solver.n_d

    @property
    def refactorizations(self) -> int:
        return self.solver.stats.refactorizations

    @property
    def fallbacks(self) -> int:
        return self.solver.stats.fallbacks


# --------------------------------------------------------------------------
# the outer loop
# --------------------------------------------------------------------------


@dataclass
class _Evaluation:
    design: np.ndarray
    snapshot: object
    U: np.ndarray
    objective: float
    constraint: float
    solver_mode: str
    n_d: int
    adjoint: np.ndarray | None = None


class _Model:
    """Design -> response map shared by the MMA and GCMMA paths."""

    def __init__(self, problem: ProblemSpec, analysis, volume_bound: float):
        self.problem = problem
        self.grid = problem.grid
        self.params = problem.heaviside_params()
        self.ke = build_element_stiffness(1.0, problem.nu, self.grid.element_width, self.grid.element_height)
        self.assembler = Assembler(self.grid, problem.E * self.ke, problem.fixed_dofs, problem.springs)
        self.F = problem.load_vector()
        self.F[problem.fixed_dofs] = 0.0
        self.l_out = problem.output_vector()
        self.analysis = analysis
        self.bound = volume_bound
        self.scale = problem.scale
        self._U_prev = None
        self._lam_prev = None
        self.v_cycles = 0

    def to_design(self, x):
        return x.reshape(-1, 7) * self.scale

    def evaluate(self, x) -> _Evaluation:
        design = self.to_design(x)
        snap = field_snapshot(design, self.grid, self.params, self.problem.E)
        K = self.assembler.stiffness(snap.element_moduli)
        mode = self.analysis.prepare(K)
        probe = None
        if self.problem.objective_kind != "compliance":
            # the output displacement is what the mechanism sensitivities hinge on
            probe = lambda v: (v @ (K @ v), self.l_out @ v)  # noqa: E731
        U, cycles = self.analysis.solve(self.F, self._U_prev, "state", probe)
        self._U_prev = U
        self.v_cycles += cycles
        # Residual-corrected objective: its error is the product of the state
        # and adjoint errors, so inexact iterative solves stay accurate.
        r = self.F - K @ U
        lam = None
        if self.problem.objective_kind == "compliance":
            obj = float(self.F @ U + U @ r)
        else:
            probe = lambda v: (v @ (K @ v), self.F @ v)  # noqa: E731
            lam, cycles = self.analysis.solve(-self.l_out, self._lam_prev, "adjoint", probe)
            self._lam_prev = lam
            self.v_cycles += cycles
            obj = float(self.l_out @ U - lam @ r)
        return _Evaluation(design, snap, U, obj, snap.volume_fraction - self.bound, mode, self.analysis.n_d, lam)

    def gradients(self, ev: _Evaluation):
        """Objective and constraint gradients with respect to the normalized variables."""
        if self.problem.objective_kind == "compliance":
            gv = compliance_gradient(ev.U, ev.snapshot, ev.design, self.ke, self.params, self.grid, self.problem.E)
        else:
            gv = mechanism_gradient(ev.U, ev.adjoint, ev.snapshot, ev.design, self.ke, self.params, self.grid, self.problem.E)
        dvol = volume_gradient(ev.snapshot, ev.design, self.grid, self.params)
        s = np.tile(self.scale, ev.design.shape[0])
        return gv.values * s, dvol * s


def _jitter(design, problem, seed):
    rng = np.random.default_rng(seed)
    d = design.copy()
    cell = 0.02 * min(problem.grid.domain_width, problem.grid.domain_height)
    d[:, :2] += rng.uniform(-cell, cell, size=(d.shape[0], 2))
    return d


def _write_density(path: Path, ev: _Evaluation, grid) -> None:
    dens = ev.snapshot.element_density(grid)[::-1]  # top row first
    np.savetxt(path, dens, fmt="%.6e")


def write_history(path, record: RunRecord) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in record.rows:
            w.writerow([
                r.iteration, repr(r.objective), repr(r.constraint), repr(r.max_dx),
                r.opt_mode, r.solver_mode, r.n_d, r.v_cycles, repr(r.wall_s),
            ])


def read_history(path) -> RunRecord:
    types = {f.name: f.type for f in fields(HistoryRow)}
    conv = {"int": int, "float": float, "str": str}
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != HISTORY_COLUMNS:
            raise ValueError(f"unexpected history header {reader.fieldnames}")
        for rec in reader:
            rows.append(HistoryRow(**{k: conv[types[k]](v) for k, v in rec.items()}))
    return RunRecord(rows=rows)


def _write_summary(path: Path, config: RunConfig, record: RunRecord) -> None:
    lines = {
        "problem": config.problem,
        "solver": config.solver,
        "nelx": config.nelx,
        "nely": config.nely,
        "final_objective": repr(record.final_objective),
        "final_constraint": repr(record.final_constraint),
        "iterations": record.iterations,
        "stop_reason": record.stop_reason,
        "wall_time_s": repr(record.wall_time),
        "refactorizations": record.refactorizations,
        "reanalysis_iterations": record.reanalysis_iterations,
        "switch_iteration": record.switch_iteration,
        "solver_fallbacks": record.fallbacks,
    }
    path.write_text("".join(f"{k} = {v}\n" for k, v in lines.items()), encoding="utf-8")


def read_summary(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def run(config: RunConfig) -> RunRecord:
    """Run one optimization. Artifacts go to ``config.output_dir`` when set."""
    problem = build_problem(config.problem, config.nelx, config.nely)
    cfg = config.resolved(problem)
    out = Path(cfg.output_dir) if cfg.output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    if cfg.solver == "full":
        analysis = DirectAnalysis()
    else:
        P = build_prolongation(problem.grid, problem.fixed_dofs)
        analysis = IRAAnalysis(P, IRAConfig(eta=cfg.eta, eps_star=cfg.eps_star))
    model = _Model(problem, analysis, problem.volume_fraction_bound)

    design0 = problem.initial_components
    if cfg.seed is not None:
        design0 = _jitter(design0, problem, cfg.seed)
    n_comp = design0.shape[0]
    scale = np.tile(problem.scale, n_comp)
    xmin = np.tile(problem.lower, n_comp) / scale
    xmax = np.tile(problem.upper, n_comp) / scale
    x = np.clip(design0.ravel() / scale, xmin, xmax)

    state = GcmmaState(xmin, xmax, move_limit=MOVE_LIMIT, asy_init=ASY_INIT)
    monitor = SwitchMonitor(delta=cfg.delta)
    record = RunRecord()
    wall = 0.0
    f_scale = None

    t0 = time.perf_counter()
    ev = model.evaluate(x)
    wall += time.perf_counter() - t0
    cycles_mark = 0
    for it in range(1, cfg.max_iter + 1):
        t0 = time.perf_counter()
        df0, dvol = model.gradients(ev)
        if f_scale is None:
            f_scale = 10.0 / max(abs(ev.objective), 1e-12)
        f0 = ev.objective * f_scale
        switched = monitor.push(ev.objective, it)
        opt_mode = "gcmma" if switched else "mma"
        ev_next = None
        if switched:
            trials = []

            def evaluator(xt):
                trials.append(model.evaluate(xt))
                return trials[-1].objective * f_scale, trials[-1].constraint

            res = gcmma_step(x, f0, df0 * f_scale, ev.constraint, dvol, evaluator, state)
            x_new, ev_next = res.x, trials[-1]
            if not res.conservative:
                log.info("iteration %d: GCMMA inner cap reached", it)
        else:
            x_new = mma_step(x, f0, df0 * f_scale, ev.constraint, dvol, state)
        stop, reason = check_stop(x_new, x, cfg.tol_x, it, cfg.max_iter)
        wall += time.perf_counter() - t0
        record.rows.append(HistoryRow(
            it, ev.objective, ev.constraint, float(np.max(np.abs(x_new - x))), opt_mode,
            ev.solver_mode, int(ev.n_d), int(model.v_cycles - cycles_mark), wall,
        ))
        cycles_mark = model.v_cycles
        if ev.solver_mode == "reanalysis":
            record.reanalysis_iterations += 1
        if out is not None and (it == 1 or it % SNAPSHOT_EVERY == 0 or stop):
            _write_density(out / f"density_{it:04d}.txt", ev, problem.grid)
            write_components(out / f"components_{it:04d}.txt", ev.design, problem.grid)
        if stop:
            record.stop_reason = reason
            break
        t0 = time.perf_counter()
        x = x_new
        ev = ev_next if ev_next is not None else model.evaluate(x)
        wall += time.perf_counter() - t0

    record.refactorizations = analysis.refactorizations
    record.fallbacks = analysis.fallbacks
    record.switch_iteration = monitor.switch_iteration
    record.final_components = ev.design
    if out is not None:
        write_history(out / "history.csv", record)
        _write_summary(out / "summary.txt", cfg, record)
    return record


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------


@dataclass
class Comparison:
    full: RunRecord | None
    ira: RunRecord | None
    objective_pct: float = math.nan
    iteration_pct: float = math.nan
    time_pct: float = math.nan
    complete: bool = False

    def report(self) -> str:
        def pct(v):
            return f"{v:.4g}%"

        lines = ["method objective constraint iterations time_s"]
        for name, rec in (("full", self.full), ("ira", self.ira)):
            if rec is None or not rec.rows:
                lines.append(f"{name} aborted")
            else:
                lines.append(
                    f"{name} {rec.final_objective:.6g} {rec.final_constraint:.4g} {rec.iterations} {rec.wall_time:.4g}"
                )
        if self.complete:
            lines.append(
                f"difference {pct(self.objective_pct)} - {pct(self.iteration_pct)} {pct(self.time_pct)}"
            )
        else:
            lines.append("difference incomplete")
        return "\n".join(lines) + "\n"


def percent_difference(new: float, base: float) -> float:
    return (new - base) / base * 100.0


def compare(config: RunConfig, solvers=("full", "ira")) -> Comparison:
    """Run the two solver legs one after the other with identical settings.

    The legs are sequential so their wall times do not compete for cores.
    """
    legs = {}
    for solver in solvers:
        sub = None if config.output_dir is None else str(Path(config.output_dir) / solver)
        try:
            legs[solver] = run(replace(config, solver=solver, output_dir=sub))
        except Exception:  # noqa: BLE001 - a failed leg marks the report incomplete
            log.exception("%s leg aborted", solver)
            legs[solver] = None
    base, new = (legs[s] for s in solvers)
    cmp = Comparison(base, new)
    if base is not None and new is not None and base.rows and new.rows:
        cmp.objective_pct = percent_difference(new.final_objective, base.final_objective)
        cmp.iteration_pct = percent_difference(new.iterations, base.iterations)
        cmp.time_pct = percent_difference(new.wall_time, base.wall_time)
        cmp.complete = True
    if config.output_dir is not None:
        Path(config.output_dir).mkdir(parents=True, exist_ok=True)
        (Path(config.output_dir) / "comparison.txt").write_text(cmp.report(), encoding="utf-8")
    return cmp


# --------------------------------------------------------------------------
# config files
# --------------------------------------------------------------------------


def _coerce(name: str, value: str):
    kinds = {"nelx": int, "nely": int, "max_iter": int, "seed": int,
             "eta": float, "eps_star": float, "delta": float, "tol_x": float}
    if value.lower() in ("", "none"):
        return None
    return kinds.get(name, str)(value)


def parse_config_text(text: str) -> dict:
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in known:
            raise ValueError(f"line {lineno}: unknown key {k!r}")
        out[k] = _coerce(k, v)
    return out


def load_config(path, overrides: dict | None = None) -> RunConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8"))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values)

"""Experiment orchestration: seeded repeat runs of the two solvers, Monte
Carlo cost evaluation on disjoint seed streams, sample-size sweeps, and
deterministic report files (results.csv, trajectories.csv, config.resolved,
plot.py).

Reproducibility contract: every emitted byte except the wall_time_ms column
is a pure function of the configuration. Solve streams are tagged
"solve/<run>" and evaluation streams "eval/<run>", so they never overlap.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from .grid import ControlSignal, EnsembleSpec, SampledPath, TimeGrid, brownian_sample
from .integrate import IntegrationError, integrate_coupled
from .lift import stratonovich_lift
from .problems import evaluate_cost_mc, scalar_lqr_test, spacecraft_fb, spacecraft_ol, SpacecraftConfig
from .shooting import SolverOptions, homotopy_solve, newton_solve
from .transcription import solve_direct

__all__ = [
    "ConfigError",
    "RunConfig",
    "ExperimentReport",
    "REPORT_COLUMNS",
    "make_problem",
    "run_experiment",
    "solve_once",
    "run_feedback",
    "sweep_sample_sizes",
    "median_costs",
    "median_speedup",
    "emit_report",
]

PROBLEMS = ("ol", "fb", "lqr")
METHODS = ("indirect", "direct", "both")
T_DEFAULTS = {"ol": 2.0, "fb": 1.0, "lqr": 1.0}
DEFAULT_SCHEDULE = (100.0, 90.0, 80.0, 70.0, 60.0, 50.0, 40.0, 30.0, 20.0, 10.0, 3.0)

REPORT_COLUMNS = (
    "problem",
    "method",
    "T",
    "N",
    "M",
    "seed",
    "run",
    "wall_time_ms",
    "iterations",
    "converged",
    "residual_inf",
    "cost_mc_mean",
    "cost_mc_stderr",
)


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class RunConfig:
    """One experiment description; None T resolves to the problem default."""

    problem: str = "ol"
    method: str = "indirect"
    T: float = None
    N: int = 40
    M: int = 10
    master_seed: int = 0
    eps: float = 1e-6
    max_iters: int = 50
    fd_step: float = 1e-6
    repeats: int = 20
    eval_samples: int = 10000
    schedule: tuple = DEFAULT_SCHEDULE
    out: str = None
    pvar_alpha: float = 1.0
    pvar_p: float = 2.5
    problem_params: tuple = ()

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError("unknown problem %r (choose ol, fb, lqr)" % (self.problem,))
        if self.method not in METHODS:
            raise ConfigError("unknown method %r (choose indirect, direct, both)" % (self.method,))
        if self.problem == "fb" and self.method != "indirect":
            raise ConfigError(
                "the feedback problem has a quartic running cost in its decision "
                "variable; the direct method needs a quadratic one (use method=indirect)"
            )
        if self.N < 1 or self.M < 1 or self.eval_samples < 1:
            raise ConfigError("N, M, eval_samples must be positive")
        if self.repeats < 0 or self.max_iters < 0:
            raise ConfigError("repeats and max_iters must be nonnegative")
        if self.eps <= 0 or self.fd_step <= 0:
            raise ConfigError("eps and fd_step must be positive")
        if self.T is not None and self.T <= 0:
            raise ConfigError("T must be positive")
        if not (1.0 <= self.pvar_p):
            raise ConfigError("pvar.p must be >= 1")
        sched = tuple(float(r) for r in self.schedule)
        if not sched or any(b >= a for a, b in zip(sched, sched[1:])):
            raise ConfigError("homotopy schedule must be nonempty and strictly decreasing")
        object.__setattr__(self, "schedule", sched)
        object.__setattr__(self, "problem_params", tuple(self.problem_params))

    @property
    def resolved_T(self):
        return float(self.T) if self.T is not None else T_DEFAULTS[self.problem]

    def params(self):
        return dict(self.problem_params)


@dataclass(frozen=True)
class ExperimentReport:
    """Report rows (one dict per (run, method)) plus the generating config
    and, for single-run solves, the realized trajectories as (columns, rows)."""

    config: RunConfig
    rows: tuple
    trajectories: tuple = ()


def _floats(value):
    return tuple(float(v) for v in str(value).split(","))


def _spacecraft_config(config, r_weight=None):
    p = config.params()
    if r_weight is None:
        r_weight = float(p.get("spacecraft.r_weight", 3.0))
    return SpacecraftConfig(
        J=_floats(p.get("spacecraft.J", "3,2,4")),
        noise=float(p.get("spacecraft.noise", 0.4)),
        q_weight=float(p.get("spacecraft.q_weight", 10.0)),
        r_weight=r_weight,
        x0_deg=_floats(p.get("spacecraft.x0_deg", "-1,-4.5,4.5")),
        T=config.resolved_T,
        N=config.N,
        M=config.M,
    )


def make_problem(config, r_weight=None):
    """Problem instance named by the config; r_weight overrides the control
    cost scale (the feedback homotopy parameter)."""
    if config.problem == "ol":
        return spacecraft_ol(_spacecraft_config(config, r_weight))
    if config.problem == "fb":
        return spacecraft_fb(_spacecraft_config(config, r_weight))
    p = config.params()
    return scalar_lqr_test(
        x0=float(p.get("lqr.x0", 1.0)),
        a=float(p.get("lqr.a", -0.5)),
        q=float(p.get("lqr.q", 1.0)),
        r=float(p.get("lqr.r", 1.0)),
        T=config.resolved_T,
    )


def _solver_options(config):
    return SolverOptions(eps=config.eps, max_iters=config.max_iters, fd_step=config.fd_step)


def _ensemble(config, problem, run):
    grid = TimeGrid(0.0, problem.T, config.N)
    spec = EnsembleSpec(
        M=config.M, d=problem.d, master_seed=config.master_seed, stream="solve/%d" % run
    )
    paths = brownian_sample(spec, grid)
    return grid, [stratonovich_lift(p) for p in paths]


def _mc_cost(problem, control, config, run):
    spec = EnsembleSpec(
        M=config.eval_samples,
        d=problem.d,
        master_seed=config.master_seed,
        stream="eval/%d" % run,
    )
    return evaluate_cost_mc(problem, control, spec)


def _row(config, problem, method, run, report, cost):
    mean, stderr = cost if cost is not None else (None, None)
    return {
        "problem": config.problem,
        "method": method,
        "T": problem.T,
        "N": config.N,
        "M": config.M,
        "seed": config.master_seed,
        "run": run,
        "wall_time_ms": report.wall_time_ms,
        "iterations": report.iterations,
        "converged": report.converged,
        "residual_inf": report.residual_inf,
        "cost_mc_mean": mean,
        "cost_mc_stderr": stderr,
    }


def _traj_columns(n, m):
    cols = ["run", "sample", "k", "t"]
    cols += ["x_%d" % (j + 1) for j in range(n)]
    cols += ["p_%d" % (j + 1) for j in range(n)]
    cols += ["u_%d" % (j + 1) for j in range(m)]
    return tuple(cols)


def _traj_rows(run, grid, states, adjoints, control):
    """One row per (sample, node); adjoint cells empty when the method
    produces none, control cells empty at the terminal node."""
    n = states[0].dim
    m = control.dim
    rows = []
    nodes = grid.nodes
    for i, sp in enumerate(states):
        pvals = adjoints[i].values if adjoints is not None else None
        for k in range(grid.N + 1):
            row = [run, i, k, nodes[k]]
            row += list(sp.values[k])
            row += list(pvals[k]) if pvals is not None else [None] * n
            row += list(control.values[k]) if k < grid.N else [None] * m
            rows.append(tuple(row))
    return rows


def _solve_fb_chain(config, ensemble, x0s, opts):
    """Timed homotopy chain for the feedback problem; the chain's wall time,
    iteration total, and final residual make one bench row."""

    def family(R):
        return make_problem(config, r_weight=R)

    results = homotopy_solve(family, config.schedule, ensemble, x0s, opts=opts)
    last_R, last_sol, last_rep = results[-1]
    chain = _ChainReport(
        converged=last_rep.converged and len(results) == len(config.schedule),
        iterations=sum(r.iterations for _, _, r in results),
        residual_inf=last_rep.residual_inf,
        wall_time_ms=sum(r.wall_time_ms for _, _, r in results),
        history=tuple(h for _, _, r in results for h in r.history),
    )
    return family(config.schedule[-1]), last_sol, chain, results


@dataclass(frozen=True)
class _ChainReport:
    converged: bool
    iterations: int
    residual_inf: float
    wall_time_ms: float
    history: tuple


def _run_once(config, run, want_traj=False):
    """All rows for one repeat index; optionally the realized trajectories."""
    problem = make_problem(config)
    grid, ensemble = _ensemble(config, problem, run)
    x0s = problem.initial_states(config.M)
    opts = _solver_options(config)
    methods = ("indirect", "direct") if config.method == "both" else (config.method,)
    rows = []
    traj = ()
    for method in methods:
        cost = None
        states = adjoints = control = None
        if method == "indirect":
            if config.problem == "fb":
                problem_fin, sol, report, _ = _solve_fb_chain(config, ensemble, x0s, opts)
            else:
                problem_fin = problem
                sol, report = newton_solve(problem, ensemble, x0s, opts=opts)
            if report.converged:
                try:
                    states, adjoints, control = integrate_coupled(
                        problem_fin, x0s, sol.p0s, ensemble
                    )
                    cost = _mc_cost(problem_fin, control, config, run)
                except IntegrationError:
                    cost = None
            row_problem = problem_fin
        else:
            dv, report = solve_direct(problem, ensemble, x0s, opts)
            if report.converged:
                control = ControlSignal(grid, dv.u_hat)
                states = [SampledPath(grid, dv.x_hat[i]) for i in range(config.M)]
                adjoints = None
                try:
                    cost = _mc_cost(problem, control, config, run)
                except IntegrationError:
                    cost = None
            row_problem = problem
        rows.append(_row(config, row_problem, method, run, report, cost))
        if want_traj and not traj and control is not None and states is not None:
            traj = (
                _traj_columns(problem.n, problem.m),
                tuple(_traj_rows(run, grid, states, adjoints, control)),
            )
    return rows, traj


def run_experiment(config):
    """Repeat-sweep of the configured problem and method(s): one fresh solve
    ensemble per run index, solver wall-clock only, MC cost of every
    converged solution on the run's evaluation stream. Failures become
    converged=false rows; the sweep never aborts."""
    rows = []
    for run in range(config.repeats):
        run_rows, _ = _run_once(config, run)
        rows.extend(run_rows)
    return ExperimentReport(config=config, rows=tuple(rows))


def solve_once(config):
    """Single run (run index 0) that also captures trajectories."""
    rows, traj = _run_once(config, 0, want_traj=True)
    return ExperimentReport(config=config, rows=tuple(rows), trajectories=traj)


def run_feedback(config):
    """Homotopy chain for the feedback problem with one report row per
    schedule step (run = step index); trajectories from the final step."""
    if config.problem != "fb":
        raise ConfigError("run_feedback needs problem=fb")
    problem = make_problem(config)
    grid, ensemble = _ensemble(config, problem, 0)
    x0s = problem.initial_states(config.M)
    opts = _solver_options(config)

    def family(R):
        return make_problem(config, r_weight=R)

    results = homotopy_solve(family, config.schedule, ensemble, x0s, opts=opts)
    rows = []
    traj = ()
    for step, (R, sol, report) in enumerate(results):
        cost = None
        is_last_converged = report.converged and step == len(results) - 1
        if is_last_converged:
            try:
                states, adjoints, control = integrate_coupled(
                    family(R), x0s, sol.p0s, ensemble
                )
                cost = _mc_cost(family(R), control, config, 0)
                traj = (
                    _traj_columns(problem.n, problem.m),
                    tuple(_traj_rows(step, grid, states, adjoints, control)),
                )
            except IntegrationError:
                cost = None
        rows.append(_row(config, family(R), "indirect", step, report, cost))
    return ExperimentReport(config=config, rows=tuple(rows), trajectories=traj)


def sweep_sample_sizes(config, Ms):
    """Indirect-method repeats at each sample size M (fresh seeds per run);
    rows concatenate in the given M order."""
    Ms = list(Ms)
    if not Ms:
        raise ConfigError("Ms must be nonempty")
    rows = []
    for M in Ms:
        sub = replace(config, M=int(M), method="indirect")
        rows.extend(run_experiment(sub).rows)
    return ExperimentReport(config=config, rows=tuple(rows))


def median_costs(report):
    """Median converged MC cost per sample size: {M: (median, count)}. A
    count below the configured repeats marks insufficient data."""
    groups = {}
    for row in report.rows:
        if row["converged"] and row["cost_mc_mean"] is not None:
            groups.setdefault(row["M"], []).append(row["cost_mc_mean"])
    return {M: (float(np.median(v)), len(v)) for M, v in sorted(groups.items())}


def median_speedup(report):
    """median(direct wall time) / median(indirect wall time) over converged
    rows; None when either method has no converged rows."""
    walls = {"direct": [], "indirect": []}
    for row in report.rows:
        if row["converged"] and row["method"] in walls:
            walls[row["method"]].append(row["wall_time_ms"])
    if not walls["direct"] or not walls["indirect"]:
        return None
    return float(np.median(walls["direct"]) / np.median(walls["indirect"]))


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _resolved_items(config):
    items = [
        ("eval.samples", config.eval_samples),
        ("fb.schedule", ",".join(repr(float(r)) for r in config.schedule)),
        ("pvar.alpha", config.pvar_alpha),
        ("pvar.p", config.pvar_p),
        ("run.M", config.M),
        ("run.N", config.N),
        ("run.T", config.resolved_T),
        ("run.method", config.method),
        ("run.out", config.out),
        ("run.problem", config.problem),
        ("run.repeats", config.repeats),
        ("run.seed", config.master_seed),
        ("solver.eps", config.eps),
        ("solver.fd_step", config.fd_step),
        ("solver.max_iters", config.max_iters),
    ]
    items.extend(config.problem_params)
    return sorted(items)


PLOT_SCRIPT = '''\
"""Plot results.csv produced alongside this script: per-method median wall
time, and the median-cost-vs-M curve when the sweep varied M."""
import csv
import os
import statistics

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "results.csv"), newline="") as f:
    rows = [r for r in csv.DictReader(f)]

conv = [r for r in rows if r["converged"] == "true"]
for method in sorted({r["method"] for r in conv}):
    walls = [float(r["wall_time_ms"]) for r in conv if r["method"] == method]
    print("%-8s median wall time %10.3f ms over %d runs" % (method, statistics.median(walls), len(walls)))

by_m = {}
for r in conv:
    if r["cost_mc_mean"]:
        by_m.setdefault(int(r["M"]), []).append(float(r["cost_mc_mean"]))
for M in sorted(by_m):
    print("M=%-4d median MC cost %.6f over %d runs" % (M, statistics.median(by_m[M]), len(by_m[M])))

try:
    import matplotlib.pyplot as plt
except ImportError:
    raise SystemExit(0)
if len(by_m) > 1:
    ms = sorted(by_m)
    plt.plot(ms, [statistics.median(by_m[M]) for M in ms], marker="o")
    plt.xlabel("sample size M")
    plt.ylabel("median MC cost")
    plt.savefig(os.path.join(here, "cost_vs_m.png"), dpi=120)
    print("wrote cost_vs_m.png")
'''


def emit_report(report, out_dir):
    """Write results.csv, config.resolved, plot.py, and trajectories.csv when
    the report carries trajectories. UTF-8, LF endings; deterministic bytes
    except the wall_time_ms column. Returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    path = os.path.join(out_dir, "results.csv")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in report.rows:
            w.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])
    written.append(path)

    path = os.path.join(out_dir, "config.resolved")
    with open(path, "w", encoding="utf-8", newline="") as f:
        for key, value in _resolved_items(report.config):
            f.write("%s = %s\n" % (key, _fmt(value)))
    written.append(path)

    if report.trajectories:
        cols, rows = report.trajectories
        path = os.path.join(out_dir, "trajectories.csv")
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(cols)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        written.append(path)

    path = os.path.join(out_dir, "plot.py")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(PLOT_SCRIPT)
    written.append(path)
    return written

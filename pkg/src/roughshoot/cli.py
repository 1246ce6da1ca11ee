"""Command-line front end.

Subcommands: solve (one run, writes trajectories), bench (repeat sweep),
sweep-m (sample-size sweep), feedback (gain homotopy chain), validate
(integrator and lift invariant checks).

Configuration is a flat file of "dotted.key = value" lines ('#' comments,
blank lines allowed); command-line flags override file values, which
override defaults. Exit codes: 0 success, 1 configuration or usage error,
2 solver non-convergence or failed validation, 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .bench import (
    ConfigError,
    RunConfig,
    emit_report,
    make_problem,
    run_experiment,
    run_feedback,
    solve_once,
    sweep_sample_sizes,
)
from .grid import ControlSignal, EnsembleSpec, TimeGrid, brownian_sample, coarsen
from .integrate import (
    RoughStepInput,
    integrate_coupled,
    integrate_linear,
    milstein_step,
    needle_variation_check,
    pairing_invariant_check,
    rough_step,
)
from .lift import chen_compose, check_geometric, stratonovich_lift
from .pvar import control_w, greedy_partition

__all__ = ["main"]

_SCALAR_KEYS = {
    "run.problem": ("problem", str),
    "run.method": ("method", str),
    "run.T": ("T", float),
    "run.N": ("N", int),
    "run.M": ("M", int),
    "run.seed": ("master_seed", int),
    "run.repeats": ("repeats", int),
    "run.out": ("out", str),
    "solver.eps": ("eps", float),
    "solver.max_iters": ("max_iters", int),
    "solver.fd_step": ("fd_step", float),
    "eval.samples": ("eval_samples", int),
    "pvar.alpha": ("pvar_alpha", float),
    "pvar.p": ("pvar_p", float),
}

_PASSTHROUGH_KEYS = (
    "spacecraft.J",
    "spacecraft.noise",
    "spacecraft.q_weight",
    "spacecraft.r_weight",
    "spacecraft.x0_deg",
    "lqr.x0",
    "lqr.a",
    "lqr.q",
    "lqr.r",
    "sweep.Ms",
)

DEFAULT_SWEEP_MS = (5, 10, 20, 50)


class _Parser(argparse.ArgumentParser):
    """Argparse that reports usage problems as configuration errors."""

    def error(self, message):
        raise ConfigError(message)


def parse_config_file(path):
    """Flat dotted-key file -> {key: raw string}. Unknown keys are errors."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as exc:
        raise ConfigError("cannot read config file %s: %s" % (path, exc))
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("%s:%d: expected 'key = value'" % (path, lineno))
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCALAR_KEYS and key != "fb.schedule" and key not in _PASSTHROUGH_KEYS:
            raise ConfigError("%s:%d: unknown config key %r" % (path, lineno, key))
        out[key] = value
    return out


def _convert(key, value, kind):
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError("bad value for %s: %r" % (key, value))


def build_config(file_cfg, args):
    """Merge defaults < config file < CLI flags into a RunConfig."""
    kwargs = {}
    params = {}
    for key, value in file_cfg.items():
        if key in _SCALAR_KEYS:
            field, kind = _SCALAR_KEYS[key]
            kwargs[field] = _convert(key, value, kind)
        elif key == "fb.schedule":
            kwargs["schedule"] = tuple(
                _convert(key, v, float) for v in value.split(",")
            )
        else:
            params[key] = value
    for flag, field, kind in (
        ("seed", "master_seed", int),
        ("problem", "problem", str),
        ("method", "method", str),
        ("out", "out", str),
        ("N", "N", int),
        ("M", "M", int),
        ("T", "T", float),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            kwargs[field] = kind(value)
    kwargs["problem_params"] = tuple(sorted(params.items()))
    return RunConfig(**kwargs)


def _sweep_ms(config):
    raw = config.params().get("sweep.Ms")
    if raw is None:
        return DEFAULT_SWEEP_MS
    Ms = tuple(_convert("sweep.Ms", v, int) for v in str(raw).split(","))
    if any(m < 1 for m in Ms):
        raise ConfigError("sweep.Ms entries must be positive")
    return Ms


def _out_dir(config, subcommand):
    return config.out if config.out is not None else "out-%s" % subcommand


def _print_rows(report):
    for row in report.rows:
        print(
            "%(problem)s %(method)s run=%(run)d converged=%(converged)s "
            "iters=%(iterations)s residual=%(residual_inf).3e wall=%(wall_time_ms).1f ms"
            % row
        )


def _cmd_solve(config):
    report = solve_once(config)
    emit_report(report, _out_dir(config, "solve"))
    _print_rows(report)
    return 0 if all(r["converged"] for r in report.rows) else 2


def _cmd_bench(config):
    report = run_experiment(config)
    emit_report(report, _out_dir(config, "bench"))
    _print_rows(report)
    return 0


def _cmd_sweep_m(config):
    report = sweep_sample_sizes(config, _sweep_ms(config))
    emit_report(report, _out_dir(config, "sweep-m"))
    _print_rows(report)
    return 0


def _cmd_feedback(config):
    if config.problem != "fb" or config.method != "indirect":
        config = replace(config, problem="fb", method="indirect")
    report = run_feedback(config)
    emit_report(report, _out_dir(config, "feedback"))
    _print_rows(report)
    ok = len(report.rows) == len(config.schedule) and all(
        r["converged"] for r in report.rows
    )
    return 0 if ok else 2


def _validate_lifts(config, M, N, d):
    spec = EnsembleSpec(M=M, d=d, master_seed=config.master_seed, stream="validate")
    grid = TimeGrid(0.0, 1.0, N)
    return grid, [stratonovich_lift(p) for p in brownian_sample(spec, grid)]


def _check_chen(lifts, grid):
    worst = 0.0
    N = grid.N
    triples = [(0, N // 3, N), (1, N // 2, N - 1), (N // 4, N // 2, 3 * N // 4)]
    for rp in lifts:
        for j, u, k in triples:
            x_jk, xx_jk = chen_compose(rp, j, k)
            x_ju, xx_ju = chen_compose(rp, j, u)
            x_uk, xx_uk = chen_compose(rp, u, k)
            glued = xx_ju + xx_uk + np.outer(x_ju, x_uk)
            worst = max(worst, float(np.max(np.abs(xx_jk - glued))))
            worst = max(worst, float(np.max(np.abs(x_jk - x_ju - x_uk))))
    return worst, worst <= 1e-12


def _check_geometric_all(lifts):
    return all(check_geometric(rp, 1e-12) for rp in lifts)


def _check_milstein(config):
    problem = make_problem(RunConfig(problem="ol"))
    fields = problem.fields
    rng = EnsembleSpec(
        M=1, d=3, master_seed=config.master_seed, stream="validate/milstein"
    ).generator(0)
    worst = 0.0
    dt = 0.01
    for _ in range(200):
        x = rng.normal(size=3) + 2.0
        u = rng.normal(size=3)
        dx = rng.normal(size=3) * np.sqrt(dt)
        inc = RoughStepInput(dt=dt, dx=dx, xx=0.5 * np.outer(dx, dx))
        a = rough_step(fields, 0.3, x, u, inc)
        b = milstein_step(fields, 0.3, x, u, dt, dx)
        worst = max(worst, float(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(a)))))
    return worst, worst <= 1e-12


def _check_needle(config):
    problem = make_problem(RunConfig(problem="ol", N=64))
    grid, lifts = _validate_lifts(config, 1, 64, problem.d)
    rp = lifts[0]
    u0 = ControlSignal(grid, np.zeros((grid.N, problem.m)))
    dt = grid.dt
    pairs = needle_variation_check(
        problem.fields,
        problem.x0,
        u0,
        rp,
        t1=grid.N // 4,
        ubar=np.full(problem.m, 0.5),
        etas=(8 * dt, 4 * dt, 2 * dt),
    )
    ratios = [r for _, r in pairs]
    ok = all(np.isfinite(ratios)) and max(ratios) <= 4.0 * min(ratios)
    return (min(ratios), max(ratios)), ok


def _check_pairing(config):
    problem = make_problem(RunConfig(problem="ol"))
    drifts = []
    for N in (32, 64):
        spec = EnsembleSpec(
            M=1, d=problem.d, master_seed=config.master_seed, stream="validate/pairing"
        )
        fine = brownian_sample(spec, TimeGrid(0.0, problem.T, 64))[0]
        path = coarsen(fine, 64 // N)
        rp = stratonovich_lift(path)
        x0s = problem.initial_states(1)
        p0s = np.full((1, problem.n), 0.2)
        states, adjoints, control = integrate_coupled(problem, x0s, p0s, [rp])
        v = integrate_linear(
            problem.fields, states[0], control, rp, np.ones(problem.n)
        )
        drifts.append(pairing_invariant_check(problem, states[0], adjoints[0], v, rp))
    return tuple(drifts), drifts[1] <= 0.8 * drifts[0] + 1e-12


def _check_greedy(config, lifts, grid):
    ok = True
    worst = -np.inf
    p = config.pvar_p
    for rp in lifts:
        w = control_w(rp, 0, grid.N, p)
        for alpha in (0.1 * config.pvar_alpha, config.pvar_alpha, 10.0 * config.pvar_alpha):
            gp = greedy_partition(rp, alpha, p, 0, grid.N)
            slack = alpha * gp.n_alpha - w
            worst = max(worst, slack)
            ok = ok and slack <= 1e-12
    return worst, ok


def _cmd_validate(config):
    grid, lifts = _validate_lifts(config, 20, 64, 3)
    checks = []
    val, ok = _check_chen(lifts, grid)
    checks.append(("chen-relation", ok, "max defect %.3e" % val))
    checks.append(("geometric-symmetry", _check_geometric_all(lifts), "tol 1e-12"))
    val, ok = _check_milstein(config)
    checks.append(("milstein-equivalence", ok, "max rel diff %.3e" % val))
    val, ok = _check_needle(config)
    checks.append(("needle-ratio-band", ok, "ratios in [%.3e, %.3e]" % val))
    val, ok = _check_pairing(config)
    checks.append(("pairing-drift-decay", ok, "drift %.3e -> %.3e" % val))
    val, ok = _check_greedy(config, lifts, grid)
    checks.append(("greedy-count-bound", ok, "max slack %.3e" % val))
    failed = False
    for name, ok, detail in checks:
        print("%-22s %s (%s)" % (name, "PASS" if ok else "FAIL", detail))
        failed = failed or not ok
    return 2 if failed else 0


_COMMANDS = {
    "solve": _cmd_solve,
    "bench": _cmd_bench,
    "sweep-m": _cmd_sweep_m,
    "feedback": _cmd_feedback,
    "validate": _cmd_validate,
}


def _build_parser():
    parser = _Parser(
        prog="roughshoot",
        description="Pathwise stochastic optimal control: rough-path lifts, "
        "shooting and transcription solvers, seeded experiments.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, help_text in (
        ("solve", "one seeded run; writes results and trajectories"),
        ("bench", "repeat sweep of the configured problem and method(s)"),
        ("sweep-m", "indirect-method sweep over ensemble sizes"),
        ("feedback", "gain-synthesis homotopy chain on the feedback problem"),
        ("validate", "run lift and integrator invariant checks"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="flat dotted-key config file")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--problem", default=None, help="ol | fb | lqr")
        p.add_argument("--method", default=None, help="indirect | direct | both")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--N", type=int, default=None, help="time steps")
        p.add_argument("--M", type=int, default=None, help="solve ensemble size")
        p.add_argument("--T", type=float, default=None, help="horizon")
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        file_cfg = parse_config_file(args.config) if args.config else {}
        config = build_config(file_cfg, args)
        return _COMMANDS[args.subcommand](config)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print("i/o error: %s" % exc, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Indirect method: the shooting map from initial adjoints to terminal
transversality residuals, a central finite-difference Jacobian, full-step
Newton iteration, and homotopy continuation with warm starts.

The adjoint is always integrated forward from the unknown p0 alongside the
state, which is what makes the Newton root-finding problem well posed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .integrate import IntegrationError, _coupled_march, _stack_ensemble

__all__ = [
    "SolverOptions",
    "ShootingUnknowns",
    "NewtonReport",
    "shooting_map",
    "numeric_jacobian",
    "newton_solve",
    "homotopy_solve",
]


@dataclass(frozen=True)
class SolverOptions:
    """Shared solver knobs: residual tolerance, iteration cap, FD step."""

    eps: float = 1e-6
    max_iters: int = 50
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class ShootingUnknowns:
    """Initial adjoints, one n-vector per sample; flattened length M*n."""

    p0s: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p0s", np.asarray(self.p0s, dtype=float))

    @property
    def flat(self):
        return self.p0s.reshape(-1)

    @classmethod
    def zeros(cls, M, n):
        return cls(np.zeros((M, n)))


@dataclass(frozen=True)
class NewtonReport:
    converged: bool
    iterations: int
    residual_inf: float
    wall_time_ms: float
    history: tuple = field(default_factory=tuple)


def _terminal_residual(problem, z_terminal):
    """Transversality residual p_T - p0_weight * grad g(x_T) (just p_T for
    zero terminal cost), shape (..., M, n)."""
    n = problem.n
    p_T = z_terminal[..., n:]
    if problem.grad_g is None:
        return p_T
    return p_T - problem.p0_weight * problem.grad_g(z_terminal[..., :n])


def _residual_fn(problem, ensemble, x0s):
    """Batched map (..., M*n) initial adjoints -> (..., M*n) residuals."""
    dxs, xxs = _stack_ensemble(ensemble)
    grid = ensemble[0].grid
    x0s = np.asarray(x0s, dtype=float)
    M, n = x0s.shape

    def F(flat):
        p0s = np.asarray(flat, dtype=float).reshape(flat.shape[:-1] + (M, n))
        z_T, _ = _coupled_march(problem, x0s, p0s, dxs, xxs, grid, keep=False)
        return _terminal_residual(problem, z_T).reshape(flat.shape)

    return F


def shooting_map(problem, unknowns, ensemble, x0s):
    """Residual of the shooting system at the given initial adjoints."""
    F = _residual_fn(problem, ensemble, np.asarray(x0s, dtype=float))
    return F(unknowns.flat)


def numeric_jacobian(F, z, fd_step=1e-6):
    """Dense central-difference Jacobian: column j is
    (F(z + h e_j) - F(z - h e_j)) / (2h) with h = fd_step * (1 + |z_j|)."""
    z = np.asarray(z, dtype=float)
    K = z.size
    J = np.empty((K, K))
    for j in range(K):
        h = fd_step * (1.0 + abs(z[j]))
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        J[:, j] = (F(zp) - F(zm)) / (2.0 * h)
    return J


def _batched_jacobian(F, z, fd_step):
    # same probe points and formula as numeric_jacobian, evaluated in one
    # batched sweep of the coupled integrator
    K = z.size
    hs = fd_step * (1.0 + np.abs(z))
    probes = np.concatenate([z + np.diag(hs), z - np.diag(hs)], axis=0)
    vals = F(probes)
    return ((vals[:K] - vals[K:]) / (2.0 * hs[:, None])).T


def newton_solve(problem, ensemble, x0s, init=None, opts=None):
    """Full-step Newton on the shooting map from init (zero by default).

    Stops as converged when ||F||_inf < eps; stops unconverged on the
    iteration cap, a non-finite residual, or a singular Jacobian — all
    reported, never raised.
    """
    opts = opts or SolverOptions()
    x0s = np.asarray(x0s, dtype=float)
    M, n = x0s.shape
    if init is None:
        init = ShootingUnknowns.zeros(M, n)
    F = _residual_fn(problem, ensemble, x0s)
    z = init.flat.copy()
    history = []
    converged = False
    iterations = 0
    start = time.perf_counter()
    while True:
        try:
            r = F(z)
        except IntegrationError:
            history.append(float("nan"))
            break
        rnorm = float(np.max(np.abs(r))) if r.size else 0.0
        history.append(rnorm)
        if not np.isfinite(rnorm):
            break
        if rnorm < opts.eps:
            converged = True
            break
        if iterations >= opts.max_iters:
            break
        try:
            J = _batched_jacobian(F, z, opts.fd_step)
            dz = np.linalg.solve(J, r)
        except (IntegrationError, np.linalg.LinAlgError):
            break
        z = z - dz
        iterations += 1
    wall_ms = (time.perf_counter() - start) * 1e3
    report = NewtonReport(
        converged=converged,
        iterations=iterations,
        residual_inf=history[-1],
        wall_time_ms=wall_ms,
        history=tuple(history),
    )
    return ShootingUnknowns(z.reshape(M, n)), report


def homotopy_solve(problem_family, schedule, ensemble, x0s, opts=None):
    """Continuation along a decreasing parameter schedule: the first entry is
    solved from zero, each later entry warm-starts from the previous
    solution. The chain stops at the first non-converged step and the partial
    results (including the failed step's report) are returned."""
    schedule = list(schedule)
    if not schedule:
        raise ValueError("schedule must be nonempty")
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly decreasing")
    results = []
    init = None
    for j, R in enumerate(schedule):
        problem = problem_family(R)
        sol, report = newton_solve(problem, ensemble, x0s, init=init, opts=opts)
        results.append((R, sol, report))
        if not report.converged:
            where = "first step" if j == 0 else "step %d of %d" % (j + 1, len(schedule))
            logging.getLogger(__name__).warning(
                "homotopy aborted at %s (R=%s): not converged", where, R
            )
            break
        init = sol
    return results

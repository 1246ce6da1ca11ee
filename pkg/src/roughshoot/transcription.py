"""Direct method: full transcription of the sampled control problem into an
equality-constrained NLP (decision variables = one control sequence plus all
per-sample state trajectories) solved by full-step SQP.

Index map of the flattened decision vector z (length N*m + M*(N+1)*n):
controls first, u_k = z[k*m : (k+1)*m] for k = 0..N-1, then states
sample-major and node-minor, x^i_k = z[N*m + (i*(N+1) + k)*n :][:n].
Constraint rows use the same (i, k) order: block (i, 0) pins x^i_0 = x0^i and
block (i, k+1) enforces the one-step dynamics into node k+1.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .integrate import _stack_ensemble, _step_arrays
from .shooting import NewtonReport, SolverOptions

__all__ = [
    "TranscriptionLayout",
    "DecisionVector",
    "KktSystem",
    "transcribe",
    "sqp_solve",
    "solve_direct",
    "rollout_states",
]


@dataclass(frozen=True)
class TranscriptionLayout:
    """Dimensions and the index bijection of the flattened decision vector."""

    N: int
    m: int
    M: int
    n: int

    @property
    def n_controls(self):
        return self.N * self.m

    @property
    def n_states(self):
        return self.M * (self.N + 1) * self.n

    @property
    def n_z(self):
        return self.n_controls + self.n_states

    @property
    def n_constraints(self):
        return self.M * (self.N + 1) * self.n

    def u_slice(self, k):
        return slice(k * self.m, (k + 1) * self.m)

    def x_slice(self, i, k):
        base = self.n_controls + (i * (self.N + 1) + k) * self.n
        return slice(base, base + self.n)

    def row_slice(self, i, k):
        base = (i * (self.N + 1) + k) * self.n
        return slice(base, base + self.n)


@dataclass(frozen=True)
class DecisionVector:
    """Control sequence u_hat (N, m) and per-sample states x_hat (M, N+1, n)."""

    u_hat: np.ndarray
    x_hat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u_hat", np.asarray(self.u_hat, dtype=float))
        object.__setattr__(self, "x_hat", np.asarray(self.x_hat, dtype=float))
        if self.u_hat.ndim != 2 or self.x_hat.ndim != 3:
            raise ValueError("u_hat must be (N, m) and x_hat (M, N+1, n)")
        if self.x_hat.shape[1] != self.u_hat.shape[0] + 1:
            raise ValueError("x_hat must have one more node than u_hat has steps")

    @property
    def layout(self):
        N, m = self.u_hat.shape
        M, _, n = self.x_hat.shape
        return TranscriptionLayout(N=N, m=m, M=M, n=n)

    def flatten(self):
        return np.concatenate([self.u_hat.reshape(-1), self.x_hat.reshape(-1)])

    @classmethod
    def from_flat(cls, z, layout):
        z = np.asarray(z, dtype=float)
        if z.shape != (layout.n_z,):
            raise ValueError("flat vector has wrong length")
        nu = layout.n_controls
        u = z[:nu].reshape(layout.N, layout.m)
        x = z[nu:].reshape(layout.M, layout.N + 1, layout.n)
        return cls(u, x)

    @classmethod
    def zeros(cls, layout):
        return cls(
            np.zeros((layout.N, layout.m)),
            np.zeros((layout.M, layout.N + 1, layout.n)),
        )


@dataclass(frozen=True)
class KktSystem:
    """One SQP subproblem: min 1/2 dz'H dz + g'dz  s.t.  A dz + c = 0."""

    H: np.ndarray
    A: np.ndarray
    g: np.ndarray
    c: np.ndarray

    def solve(self):
        """Full-step solution (dz, lam) of the symmetric KKT linear system
        [[H, A'], [A, 0]] [dz, lam] = [-g, -c] by dense LU."""
        nz = self.H.shape[0]
        nc = self.A.shape[0]
        K = np.zeros((nz + nc, nz + nc))
        K[:nz, :nz] = self.H
        K[:nz, nz:] = self.A.T
        K[nz:, :nz] = self.A
        rhs = np.concatenate([-self.g, -self.c])
        sol = np.linalg.solve(K, rhs)
        return sol[:nz], sol[nz:]


def transcribe(problem, ensemble, x0s, grid):
    """Build (cost evaluator, constraint evaluator, layout) for the sampled
    problem on the given noise ensemble.

    cost(z) -> (value, gradient, Hessian): the sample-average left-endpoint
    quadrature of the quadratic running cost (Hessian constant).
    constraints(z) -> (residual, Jacobian): initial-state rows plus one-step
    dynamics rows using the second-order rough update per sample; Jacobians
    are analytic from the field bundle.
    """
    if problem.quad_cost is None:
        raise ValueError("direct transcription needs a quadratic running cost (Q, R)")
    Q, R = problem.quad_cost
    x0s = np.asarray(x0s, dtype=float)
    M, n = x0s.shape
    N, m = grid.N, problem.m
    if n != problem.n:
        raise ValueError("x0s dimension does not match the problem")
    if len(ensemble) != M:
        raise ValueError("ensemble size does not match x0s")
    for rp in ensemble:
        if rp.grid != grid:
            raise ValueError("ensemble grids do not match the transcription grid")
    layout = TranscriptionLayout(N=N, m=m, M=M, n=n)
    dxs, xxs = _stack_ensemble(ensemble)  # (M, N, d), (M, N, d, d)
    dt = grid.dt
    nodes = grid.nodes
    fields = problem.fields

    hess = np.zeros((layout.n_z, layout.n_z))
    for k in range(N):
        hess[layout.u_slice(k), layout.u_slice(k)] = dt * R
    for i in range(M):
        for k in range(N):
            hess[layout.x_slice(i, k), layout.x_slice(i, k)] = (dt / M) * Q

    def cost(z):
        dv = DecisionVector.from_flat(z, layout)
        u, x = dv.u_hat, dv.x_hat
        val = 0.5 * dt * float(np.einsum("kj,jl,kl->", u, R, u))
        xr = x[:, :N, :]
        val += 0.5 * (dt / M) * float(np.einsum("ikj,jl,ikl->", xr, Q, xr))
        grad = hess @ z
        if problem.g is not None:
            val += float(np.sum(problem.g(x[:, N, :]))) / M
            gg = np.asarray(problem.grad_g(x[:, N, :]), dtype=float) / M
            for i in range(M):
                grad[layout.x_slice(i, N)] += gg[i]
        return val, grad, hess

    eye_n = np.eye(n)

    def constraints(z):
        dv = DecisionVector.from_flat(z, layout)
        u, x = dv.u_hat, dv.x_hat
        c = np.zeros(layout.n_constraints)
        A = np.zeros((layout.n_constraints, layout.n_z))
        for i in range(M):
            c[layout.row_slice(i, 0)] = x[i, 0] - x0s[i]
            A[layout.row_slice(i, 0), layout.x_slice(i, 0)] = eye_n
        for k in range(N):
            t = nodes[k]
            xk = x[:, k, :]
            dx = dxs[:, k, :]
            xx = xxs[:, k, :, :]
            phi = _step_arrays(fields, t, xk, u[k], dt, dx, xx)
            sig = fields.diffusion(t, xk)
            jac = fields.jac_x_diffusion(t, xk)
            hxx = fields.hess_or_fd(t, xk)
            # d(sigma dX)/dx and d(Gamma : XX)/dx, per sample
            dsig = np.einsum("...jlq,...l->...jq", jac, dx)
            dgam = np.einsum("...ijlq,...lk,...jk->...iq", hxx, sig, xx)
            dgam += np.einsum("...ijl,...lkq,...jk->...iq", jac, jac, xx)
            jb = fields.jac_x_drift(t, xk, u[k])
            dphi_dx = eye_n + dt * jb + dsig + dgam
            dphi_du = np.broadcast_to(
                dt * fields.jac_u_or_fd(t, xk, u[k]), (M, n, m)
            )
            for i in range(M):
                rows = layout.row_slice(i, k + 1)
                c[rows] = x[i, k + 1] - phi[i]
                A[rows, layout.x_slice(i, k + 1)] = eye_n
                A[rows, layout.x_slice(i, k)] = -dphi_dx[i]
                A[rows, layout.u_slice(k)] = -dphi_du[i]
        return c, A

    return cost, constraints, layout


def sqp_solve(cost, constraints, z0, opts=None):
    """Full-step SQP on the transcribed NLP from the DecisionVector z0.

    Each iteration solves one equality-constrained QP through the KKT system
    and applies the whole step; the loop stops as converged once the applied
    step satisfies ||dz||_inf < eps. iterations counts the steps of size
    >= eps (a QP-exact problem therefore converges in exactly 1). Singular
    KKT systems and non-finite evaluations are reported, never raised.
    """
    opts = opts or SolverOptions()
    layout = z0.layout
    z = z0.flatten().copy()
    history = []
    converged = False
    solves = 0
    start = time.perf_counter()
    while solves < opts.max_iters:
        try:
            _, g, H = cost(z)
            c, A = constraints(z)
            dz, _lam = KktSystem(H=H, A=A, g=g, c=c).solve()
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(dz)):
            break
        z = z + dz
        solves += 1
        dnorm = float(np.max(np.abs(dz))) if dz.size else 0.0
        history.append(dnorm)
        if dnorm < opts.eps:
            converged = True
            break
    wall_ms = (time.perf_counter() - start) * 1e3
    report = NewtonReport(
        converged=converged,
        iterations=solves - 1 if converged else solves,
        residual_inf=history[-1] if history else float("inf"),
        wall_time_ms=wall_ms,
        history=tuple(history),
    )
    return DecisionVector.from_flat(z, layout), report


def rollout_states(problem, u_hat, ensemble, x0s):
    """States reached by marching the rough stepper under u_hat on the
    ensemble noise: shape (M, N+1, n). By construction these make the
    transcription's dynamics rows vanish."""
    grid = ensemble[0].grid
    dxs, xxs = _stack_ensemble(ensemble)
    x = np.asarray(x0s, dtype=float)
    out = [x]
    for k in range(grid.N):
        x = _step_arrays(
            problem.fields, grid.nodes[k], x, u_hat[k], grid.dt, dxs[:, k, :], xxs[:, k, :, :]
        )
        out.append(x)
    return np.stack(out, axis=1)


def solve_direct(problem, ensemble, x0s, opts=None, init=None):
    """Transcribe and solve with SQP from a zero initial guess (both the
    control sequence and all states), unless an init DecisionVector is given.
    Returns (DecisionVector, NewtonReport)."""
    grid = ensemble[0].grid
    cost, constraints, layout = transcribe(problem, ensemble, x0s, grid)
    z0 = init if init is not None else DecisionVector.zeros(layout)
    return sqp_solve(cost, constraints, z0, opts)

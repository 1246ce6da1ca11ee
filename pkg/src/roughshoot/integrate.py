"""Pathwise RDE integration: the second-order rough step, forward / linear /
coupled marches, the Milstein reference stepper, and the validation probes
(needle variations and the adjoint-variation pairing).

Every stepper is pure and broadcasts over leading batch axes; ensembles are
advanced in lockstep with a barrier at each node (states -> control -> step),
and reductions over samples always run in sample-index order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ControlSignal, SampledPath

__all__ = [
    "IntegrationError",
    "RoughStepInput",
    "rough_step",
    "milstein_step",
    "integrate_forward",
    "integrate_linear",
    "integrate_coupled",
    "needle_variation_check",
    "pairing_invariant_check",
]


class IntegrationError(RuntimeError):
    """A step produced a non-finite state; carries the failing location."""

    def __init__(self, message, node=None, sample=None):
        super().__init__(message)
        self.node = node
        self.sample = sample


@dataclass(frozen=True)
class RoughStepInput:
    """One grid step of a rough path: dt, first level dx (d,), second level
    xx (d, d). Batched arrays with leading axes are accepted."""

    dt: float
    dx: np.ndarray
    xx: np.ndarray


def _step_arrays(fields, t, x, u, dt, dx, xx):
    b = fields.drift(t, x, u)
    sig = fields.diffusion(t, x)
    gamma = fields.second_level_tensor(t, x)
    return (
        x
        + dt * b
        + np.einsum("...ij,...j->...i", sig, dx)
        + np.einsum("...ijk,...jk->...i", gamma, xx)
    )


def rough_step(fields, t, x, u, inc):
    """x + b dt + sigma dX + (grad_x sigma . sigma) : XX  (one-step truncation
    of the rough integral; second order in the driving increment)."""
    out = _step_arrays(fields, t, np.asarray(x, dtype=float), u, inc.dt, inc.dx, inc.xx)
    if not np.all(np.isfinite(out)):
        raise IntegrationError("rough step produced a non-finite state")
    return out


def milstein_step(fields, t, x, u, dt, dB):
    """Componentwise Milstein update for diagonally structured diffusion.

    Requires every state component to be driven by at most one noise channel,
    with Milstein corrections coupling only same-channel components (square
    diagonal sigma is the usual special case). Coupled noise would need Levy
    areas and is rejected.
    """
    x = np.asarray(x, dtype=float)
    sig = fields.diffusion(t, x)
    jac = fields.jac_x_diffusion(t, x)
    active = (sig != 0.0) | np.any(jac != 0.0, axis=-1)
    if np.any(np.sum(active, axis=-1) > 1):
        raise ValueError("diffusion is not diagonal: a component is driven by several noise channels")
    channel = np.argmax(active, axis=-1)  # arbitrary for all-zero rows
    rows = np.arange(sig.shape[-2])
    # corr[i, l] = sum_q d sigma^{i,c_i}/dx^q * sigma^{q,l}
    corr = np.einsum("...iq,...ql->...il", jac[..., rows, channel, :], sig)
    off = corr.copy()
    off[..., rows, channel] = 0.0
    if np.any(off != 0.0):
        raise ValueError("diffusion couples distinct noise channels; Milstein form needs Levy areas")
    drive = np.where(np.any(active, axis=-1), np.asarray(dB)[..., channel], 0.0)
    out = (
        x
        + dt * fields.drift(t, x, u)
        + sig[..., rows, channel] * drive
        + 0.5 * corr[..., rows, channel] * drive * drive
    )
    if not np.all(np.isfinite(out)):
        raise IntegrationError("Milstein step produced a non-finite state")
    return out


def _check_grids(a, b):
    if a != b:
        raise ValueError("grids do not coincide")


def _march(fields, x0, uvals, dxs, xxs, grid, keep=True):
    """Advance x0 through all N steps; uvals (N, m) or (..., N, m), dxs
    (..., N, d), xxs (..., N, d, d). Returns the node stack or the terminal
    state only."""
    x = np.asarray(x0, dtype=float)
    dt = grid.dt
    nodes = grid.nodes
    out = [x] if keep else None
    for k in range(grid.N):
        u_k = uvals[..., k, :] if uvals is not None else None
        x = _step_arrays(fields, nodes[k], x, u_k, dt, dxs[..., k, :], xxs[..., k, :, :])
        if not np.all(np.isfinite(x)):
            raise IntegrationError("non-finite state", node=k + 1)
        if keep:
            out.append(x)
    return np.stack(out, axis=-2) if keep else x


def integrate_forward(fields, x0, u, rp):
    """Solve the forward RDE driven by rp under the piecewise-constant control
    u; returns the solution SampledPath. A non-finite step aborts with the
    offending node index."""
    _check_grids(u.grid, rp.grid)
    dxs = np.diff(rp.base.values, axis=0)
    vals = _march(fields, x0, u.values, dxs, rp.level2, rp.grid)
    return SampledPath(rp.grid, vals)


def _linear_march(fields, ref_vals, uvals, dxs, xxs, grid, v0, k0=0):
    """Jacobian-flow march: dV = grad_x b V dt + grad_x sigma V dX + second
    level from the field grad_x sigma(., Y) V, over steps k0..N-1."""
    v = np.asarray(v0, dtype=float)
    dt = grid.dt
    nodes = grid.nodes
    out = [v]
    for k in range(k0, grid.N):
        y = ref_vals[..., k, :]
        u_k = uvals[..., k, :] if uvals is not None else None
        jb = fields.jac_x_drift(nodes[k], y, u_k)
        js = fields.jac_x_diffusion(nodes[k], y)
        sig = fields.diffusion(nodes[k], y)
        sig_v = np.einsum("...ijl,...l->...ij", js, v)
        if fields.hess_x_diffusion is not None:
            hess = fields.hess_x_diffusion(nodes[k], y)
            term1 = np.einsum("...ijql,...q,...lk->...ijk", hess, v, sig)
        else:
            term1 = _fd_linear_second_level(fields, nodes[k], y, v, sig)
        gamma = term1 + np.einsum("...ijl,...lk->...ijk", js, sig_v)
        v = (
            v
            + dt * np.einsum("...ij,...j->...i", jb, v)
            + np.einsum("...ij,...j->...i", sig_v, dxs[..., k, :])
            + np.einsum("...ijk,...jk->...i", gamma, xxs[..., k, :, :])
        )
        if not np.all(np.isfinite(v)):
            raise IntegrationError("non-finite variation", node=k + 1)
        out.append(v)
    return np.stack(out, axis=-2)


def _fd_linear_second_level(fields, t, y, v, sig):
    # directional central differences of grad_x sigma along the diffusion
    # columns, step 1e-6 * (1 + ||state||)
    h = 1e-6 * (1.0 + np.linalg.norm(y, axis=-1, keepdims=True))
    d = sig.shape[-1]
    cols = []
    for k in range(d):
        direction = sig[..., :, k]
        jp = fields.jac_x_diffusion(t, y + h * direction)
        jm = fields.jac_x_diffusion(t, y - h * direction)
        dj = (jp - jm) / (2.0 * h[..., None, None])
        cols.append(np.einsum("...ijq,...q->...ij", dj, v))
    return np.stack(cols, axis=-1)


def integrate_linear(fields, ref_state, u, rp, v0):
    """Solve the linear (variational) RDE along ref_state; the second-level
    term uses grad^2_x sigma when the bundle supplies it, else the
    finite-difference surrogate. Exactly linear and homogeneous in v0."""
    _check_grids(ref_state.grid, rp.grid)
    _check_grids(u.grid, rp.grid)
    dxs = np.diff(rp.base.values, axis=0)
    vals = _linear_march(fields, ref_state.values, u.values, dxs, rp.level2, rp.grid, v0)
    return SampledPath(rp.grid, vals)


def _stack_ensemble(ensemble):
    dxs = np.stack([np.diff(rp.base.values, axis=0) for rp in ensemble])
    xxs = np.stack([rp.level2 for rp in ensemble])
    return dxs, xxs


def _coupled_march(problem, x0s, p0s, dxs, xxs, grid, keep=True):
    """Lockstep march of all samples of the augmented system. x0s (M, n);
    p0s (..., M, n) — leading axes of p0s batch whole ensembles (the shooting
    Jacobian probes many initial adjoints in one pass). Barrier per node:
    resolve u from the ensemble, then advance every sample one rough step.
    keep=True returns node-major states (..., N+1, M, 2n); keep=False only
    the terminal (..., M, 2n). Controls stack as (..., N, m)."""
    n = problem.n
    aug = problem.augmented()
    z = np.concatenate(np.broadcast_arrays(np.broadcast_to(x0s, p0s.shape), p0s), axis=-1)
    dt = grid.dt
    nodes = grid.nodes
    states = [z] if keep else None
    controls = []
    for k in range(grid.N):
        u_k = problem.resolver(nodes[k], z[..., :n], z[..., n:])
        controls.append(u_k)
        z = _step_arrays(
            aug, nodes[k], z, u_k[..., None, :], dt, dxs[..., k, :], xxs[..., k, :, :]
        )
        if not np.all(np.isfinite(z)):
            bad = np.argwhere(~np.isfinite(z).all(axis=-1))
            sample = int(bad[0][-1]) if bad.size else None
            raise IntegrationError("non-finite augmented state", node=k + 1, sample=sample)
        if keep:
            states.append(z)
    ustack = np.stack(controls, axis=-2)
    if keep:
        return np.stack(states, axis=-3), ustack
    return z, ustack


def integrate_coupled(problem, x0s, p0s, ensemble):
    """March M coupled (state, adjoint) pairs under the problem's sample-
    average control resolver. Returns (states, adjoints, control) with one
    SampledPath per sample and the realized ControlSignal."""
    M = len(ensemble)
    if len(x0s) != M or len(p0s) != M:
        raise ValueError("x0s, p0s, ensemble must share the sample count")
    grid = ensemble[0].grid
    for rp in ensemble:
        _check_grids(rp.grid, grid)
    dxs, xxs = _stack_ensemble(ensemble)
    x0s = np.asarray(x0s, dtype=float)
    p0s = np.asarray(p0s, dtype=float)
    zs, ustack = _coupled_march(problem, x0s, p0s, dxs, xxs, grid)
    n = problem.n
    states = [SampledPath(grid, zs[:, i, :n]) for i in range(M)]
    adjoints = [SampledPath(grid, zs[:, i, n:]) for i in range(M)]
    return states, adjoints, ControlSignal(grid, ustack)


def needle_variation_check(fields, x0, u, rp, t1, ubar, etas):
    """Second-order effect of needle-like control variations.

    For each eta (a multiple of dt): perturb u to ubar on [t_{t1}, t_{t1}+eta),
    integrate the perturbed path, and compare against the first-order
    prediction Y + eta*V where V solves the variational RDE from
    b(t1, Y_{t1}, ubar) - b(t1, Y_{t1}, u_{t1}). Returns [(eta, ratio)] with
    ratio = sup-norm discrepancy over [t1 + eta, T] / eta^2. The window
    itself is excluded: while it is open the perturbation has only partially
    acted, so the discrepancy there is (eta - (t - t1))|v0|, first order by
    construction, and the quadratic estimate starts once the window closes.
    """
    _check_grids(u.grid, rp.grid)
    grid = rp.grid
    dt = grid.dt
    if not (0 < t1 < grid.N):
        raise ValueError("t1 must be an interior node")
    dxs = np.diff(rp.base.values, axis=0)
    y_vals = _march(fields, x0, u.values, dxs, rp.level2, grid)
    t1_time = grid.nodes[t1]
    ubar = np.asarray(ubar, dtype=float)
    v0 = fields.drift(t1_time, y_vals[t1], ubar) - fields.drift(
        t1_time, y_vals[t1], u.values[t1]
    )
    out = []
    for eta in etas:
        steps = int(round(eta / dt))
        if steps < 1 or abs(eta - steps * dt) > 1e-9 * dt:
            raise ValueError("eta must be a positive multiple of dt")
        if t1 + steps > grid.N:
            raise ValueError("needle window must fit inside [t1, T]")
        u_pert = u.values.copy()
        u_pert[t1 : t1 + steps] = ubar
        y_pert = _march(fields, x0, u_pert, dxs, rp.level2, grid)
        v_vals = _linear_march(
            fields, y_vals, u.values, dxs, rp.level2, grid, v0, k0=t1
        )
        diff = y_pert[t1:] - y_vals[t1:] - eta * v_vals
        out.append((float(eta), float(np.max(np.abs(diff[steps:])) / eta**2)))
    return out


def pairing_invariant_check(problem, state, adjoint, variation, rp):
    """Drift of the adjoint-variation pairing along the grid, in the cost-
    extended space where it is conserved: the pairing is p_k.v_k + p0 v0_k
    with v0 the cost-variation coordinate (dv0 = grad_x f . v dt, v0_0 = 0)
    and p0 the constant cost multiplier. Returns
    max_k |pairing_k - pairing_0| / (1 + |pairing_0|); O(dt) for geometric
    lifts. The control is reconstructed nodewise from the single-sample
    resolver, so the inputs should come from a one-sample coupled march."""
    for path in (state, adjoint, variation):
        _check_grids(path.grid, rp.grid)
    grid = rp.grid
    nodes = grid.nodes
    x = state.values
    p = adjoint.values
    v = variation.values
    rates = np.empty(grid.N)
    for k in range(grid.N):
        u_k = problem.resolver(nodes[k], x[k][None, :], p[k][None, :])
        rates[k] = np.dot(problem.grad_x_f(nodes[k], x[k], u_k), v[k])
    v0 = np.concatenate([[0.0], np.cumsum(grid.dt * rates)])
    dots = np.sum(p * v, axis=-1) + problem.p0_weight * v0
    return float(np.max(np.abs(dots - dots[0])) / (1.0 + abs(dots[0])))

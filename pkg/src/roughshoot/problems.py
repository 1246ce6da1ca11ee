"""Stochastic optimal control problems: Hamiltonian, the two spacecraft
attitude problems (open-loop control and diagonal feedback gains), a scalar
LQR benchmark, and Monte-Carlo cost evaluation.

Conventions: expected-cost minimization with Hamiltonian weight p0 = -1, so
the maximality condition is the stationary point of the sample-average
Hamiltonian p.b - f; U is unconstrained and every resolver is closed form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fields import VectorFieldBundle, augment_fields
from .grid import brownian_sample
from .integrate import _march
from .lift import stratonovich_lift

__all__ = [
    "OcpProblem",
    "SpacecraftConfig",
    "hamiltonian",
    "grad_x_hamiltonian",
    "grad_u_hamiltonian",
    "spacecraft_ol",
    "spacecraft_fb",
    "scalar_lqr_test",
    "evaluate_cost_mc",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OcpProblem:
    """A sampled stochastic OCP: minimize E[ int f dt + g(x_T) ].

    resolver(t, xs, ps) returns the control maximizing the sample-average
    Hamiltonian; xs, ps have shape (..., M, n) and the mean runs over the
    second-to-last axis, so whole ensembles can be batched. g/grad_g may be
    None (zero terminal cost). h is carried for terminal constraints but the
    solver path covers r = 0. quad_cost = (Q, R) marks a quadratic running
    cost (what the direct transcription optimizes).
    """

    name: str
    n: int
    m: int
    d: int
    T: float
    fields: VectorFieldBundle
    f: callable
    grad_x_f: callable
    grad_u_f: callable
    resolver: callable
    x0: np.ndarray
    g: callable = None
    grad_g: callable = None
    h: callable = None
    jac_h: callable = None
    r: int = 0
    p0_weight: float = -1.0
    quad_cost: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))

    def augmented(self):
        """Field bundle of the coupled (x, p) system."""
        return augment_fields(self.fields, self.grad_x_f, self.p0_weight)

    def initial_states(self, M):
        return np.tile(self.x0, (M, 1))


def hamiltonian(problem, t, x, u, p, p0=None):
    """H = p.b(t,x,u) + p0 * f(t,x,u)."""
    if p0 is None:
        p0 = problem.p0_weight
    b = problem.fields.drift(t, x, u)
    return np.sum(p * b, axis=-1) + p0 * problem.f(t, x, u)


def grad_x_hamiltonian(problem, t, x, u, p, p0=None):
    if p0 is None:
        p0 = problem.p0_weight
    jb = problem.fields.jac_x_drift(t, x, u)
    return np.einsum("...ij,...i->...j", jb, p) + p0 * problem.grad_x_f(t, x, u)


def grad_u_hamiltonian(problem, t, x, u, p, p0=None):
    if p0 is None:
        p0 = problem.p0_weight
    ju = problem.fields.jac_u_or_fd(t, x, u)
    return np.einsum("...ij,...i->...j", ju, p) + p0 * problem.grad_u_f(t, x, u)


@dataclass(frozen=True)
class SpacecraftConfig:
    """Rigid-body attitude data: inertia J, multiplicative noise scale, state
    and control cost weights, initial attitude error in degrees."""

    J: tuple = (3.0, 2.0, 4.0)
    noise: float = 0.4
    q_weight: float = 10.0
    r_weight: float = 3.0
    x0_deg: tuple = (-1.0, -4.5, 4.5)
    T: float = 2.0
    N: int = 40
    M: int = 10

    def __post_init__(self):
        if len(self.J) != 3 or any(j <= 0 for j in self.J):
            raise ValueError("J must be a positive 3-vector")
        if self.q_weight <= 0 or self.r_weight <= 0:
            raise ValueError("cost weights must be positive")

    @property
    def x0(self):
        return (np.pi / 180.0) * np.asarray(self.x0_deg, dtype=float)


def _skew(v):
    """Cross-product matrix S(v), batched: S(v) w = v x w."""
    batch = v.shape[:-1]
    S = np.zeros(batch + (3, 3))
    S[..., 0, 1] = -v[..., 2]
    S[..., 0, 2] = v[..., 1]
    S[..., 1, 0] = v[..., 2]
    S[..., 1, 2] = -v[..., 0]
    S[..., 2, 0] = -v[..., 1]
    S[..., 2, 1] = v[..., 0]
    return S


def _diag_embed(v):
    return v[..., :, None] * np.eye(v.shape[-1])


def _spacecraft_sigma(cfg):
    c = cfg.noise
    eye3 = np.eye(3)

    def diffusion(t, x):
        return c * x[..., :, None] * eye3

    E = np.zeros((3, 3, 3))
    for i in range(3):
        E[i, i, i] = c

    def jac_x_diffusion(t, x):
        batch = np.asarray(x).shape[:-1]
        return np.broadcast_to(E, batch + (3, 3, 3))

    def hess_x_diffusion(t, x):
        batch = np.asarray(x).shape[:-1]
        return np.zeros(batch + (3, 3, 3, 3))

    return diffusion, jac_x_diffusion, hess_x_diffusion


def spacecraft_ol(cfg):
    """Open-loop spacecraft problem: b = A(x)x + Bbar u with A(x) = -J^{-1}S(x)J,
    Bbar = J^{-1}, multiplicative diagonal noise, quadratic costs, zero
    terminal cost. Resolver: u = R^{-1} Bbar^T mean(p)."""
    Jd = np.asarray(cfg.J, dtype=float)
    q, r, c = cfg.q_weight, cfg.r_weight, cfg.noise

    def drift(t, x, u):
        return (-np.cross(x, Jd * x) + u) / Jd

    def jac_x_drift(t, x, u):
        # grad of A(x)x is J^{-1}S(Jx) + A(x)
        return (_skew(Jd * x) - _skew(x) * Jd) / Jd[:, None]

    def jac_u_drift(t, x, u):
        batch = np.asarray(x).shape[:-1]
        return np.broadcast_to(np.diag(1.0 / Jd), batch + (3, 3))

    diffusion, jac_sig, hess_sig = _spacecraft_sigma(cfg)
    fields = VectorFieldBundle(
        n=3,
        m=3,
        d=3,
        drift=drift,
        diffusion=diffusion,
        jac_x_drift=jac_x_drift,
        jac_x_diffusion=jac_sig,
        hess_x_diffusion=hess_sig,
        jac_u_drift=jac_u_drift,
    )

    def f(t, x, u):
        return 0.5 * (q * np.sum(x * x, axis=-1) + r * np.sum(u * u, axis=-1))

    def resolver(t, xs, ps):
        return np.mean(ps, axis=-2) / (r * Jd)

    return OcpProblem(
        name="ol",
        n=3,
        m=3,
        d=3,
        T=cfg.T,
        fields=fields,
        f=f,
        grad_x_f=lambda t, x, u: q * x,
        grad_u_f=lambda t, x, u: r * np.asarray(u, dtype=float),
        resolver=resolver,
        x0=cfg.x0,
        quad_cost=(q * np.eye(3), r * np.eye(3)),
    )


def spacecraft_fb(cfg):
    """Feedback spacecraft problem: the decision variable is the diagonal gain
    vector k; drift (A(x) + Bbar diag(k)) x; running cost
    0.5 (x'Qx + x'diag(k) R diag(k) x). Resolver per component:
    k_j = mean(p_j x_j) / (J_j R_j mean(x_j^2)), guarded below 1e-12."""
    Jd = np.asarray(cfg.J, dtype=float)
    q, r = cfg.q_weight, cfg.r_weight

    def drift(t, x, k):
        return (-np.cross(x, Jd * x) + k * x) / Jd

    def jac_x_drift(t, x, k):
        base = (_skew(Jd * x) - _skew(x) * Jd) / Jd[:, None]
        return base + _diag_embed(k / Jd * np.ones_like(x))

    def jac_u_drift(t, x, k):
        return _diag_embed(np.asarray(x) / Jd * np.ones_like(k))

    diffusion, jac_sig, hess_sig = _spacecraft_sigma(cfg)
    fields = VectorFieldBundle(
        n=3,
        m=3,
        d=3,
        drift=drift,
        diffusion=diffusion,
        jac_x_drift=jac_x_drift,
        jac_x_diffusion=jac_sig,
        hess_x_diffusion=hess_sig,
        jac_u_drift=jac_u_drift,
    )

    def f(t, x, k):
        return 0.5 * np.sum((q + r * k * k) * x * x, axis=-1)

    def resolver(t, xs, ps):
        num = np.mean(ps * xs, axis=-2)
        den = np.mean(xs * xs, axis=-2)
        ok = den >= 1e-12
        if not np.all(ok):
            log.warning("feedback resolver: component variance below guard, gain set to 0")
        return np.where(ok, num / np.where(ok, Jd * r * den, 1.0), 0.0)

    return OcpProblem(
        name="fb",
        n=3,
        m=3,
        d=3,
        T=cfg.T,
        fields=fields,
        f=f,
        grad_x_f=lambda t, x, k: (q + r * k * k) * x,
        grad_u_f=lambda t, x, k: r * k * x * x,
        resolver=resolver,
        x0=cfg.x0,
        quad_cost=None,
    )


def scalar_lqr_test(x0=1.0, a=-0.5, q=1.0, r=1.0, T=1.0):
    """Deterministic scalar LQR benchmark: b = a x + u, sigma = 0,
    f = 0.5 (q x^2 + r u^2), g = 0. The optimal control is the Riccati
    feedback; resolver u = mean(p) / r."""

    def drift(t, x, u):
        return a * x + u

    def zero_sig(t, x):
        return np.zeros(np.asarray(x).shape + (1,))

    fields = VectorFieldBundle(
        n=1,
        m=1,
        d=1,
        drift=drift,
        diffusion=zero_sig,
        jac_x_drift=lambda t, x, u: a * np.ones(np.asarray(x).shape[:-1] + (1, 1)),
        jac_x_diffusion=lambda t, x: np.zeros(np.asarray(x).shape + (1, 1)),
        hess_x_diffusion=lambda t, x: np.zeros(np.asarray(x).shape + (1, 1, 1)),
        jac_u_drift=lambda t, x, u: np.ones(np.asarray(x).shape[:-1] + (1, 1)),
    )

    return OcpProblem(
        name="lqr",
        n=1,
        m=1,
        d=1,
        T=T,
        fields=fields,
        f=lambda t, x, u: 0.5 * (q * np.sum(x * x, -1) + r * np.sum(u * u, -1)),
        grad_x_f=lambda t, x, u: q * x,
        grad_u_f=lambda t, x, u: r * np.asarray(u, dtype=float),
        resolver=lambda t, xs, ps: np.mean(ps, axis=-2) / r,
        x0=np.array([x0]),
        quad_cost=(q * np.eye(1), r * np.eye(1)),
    )


def evaluate_cost_mc(problem, control, eval_spec):
    """Monte-Carlo cost of a fixed control (or gain) signal on fresh paths.

    Simulates eval_spec.M paths with the rough stepper, accumulates the
    running cost by left-endpoint quadrature plus the terminal cost, and
    returns (sample mean, standard error). The eval ensemble must come from a
    seed stream disjoint from the solve streams (distinct stream tag).
    """
    grid = control.grid
    paths = brownian_sample(eval_spec, grid)
    dxs = np.stack([np.diff(p.values, axis=0) for p in paths])
    lifts = [stratonovich_lift(p) for p in paths]
    xxs = np.stack([rp.level2 for rp in lifts])
    x0s = problem.initial_states(eval_spec.M)
    traj = _march(problem.fields, x0s, control.values, dxs, xxs, grid)
    dt = grid.dt
    nodes = grid.nodes
    costs = np.zeros(eval_spec.M)
    for k in range(grid.N):
        costs += problem.f(nodes[k], traj[:, k, :], control.values[k]) * dt
    if problem.g is not None:
        costs += problem.g(traj[:, grid.N, :])
    mean = float(np.mean(costs))
    stderr = 0.0
    if eval_spec.M > 1:
        stderr = float(np.std(costs, ddof=1) / np.sqrt(eval_spec.M))
    return mean, stderr

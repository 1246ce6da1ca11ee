"""Vector field bundles for controlled rough differential equations.

All field callables broadcast over arbitrary leading batch axes:
b(t, x, u) maps (..., n) states (and (..., m) controls) to (..., n), the
diffusion maps to (..., n, d), its Jacobian to (..., n, d, n), and the
optional second derivative to (..., n, d, n, n). Scalar t throughout
(steppers advance whole ensembles in lockstep).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["VectorFieldBundle", "augment_fields", "validate_jacobians"]


@dataclass(frozen=True)
class VectorFieldBundle:
    """Drift, diffusion, and the Jacobians the second-order stepper needs.

    hess_x_diffusion (d^2 sigma / dx dx) is optional; when absent, terms that
    need it fall back to a central finite-difference surrogate with step
    1e-6 * (1 + ||state||). jac_u_drift is optional likewise.
    """

    n: int
    m: int
    d: int
    drift: callable
    diffusion: callable
    jac_x_drift: callable
    jac_x_diffusion: callable
    hess_x_diffusion: callable = None
    jac_u_drift: callable = None

    def second_level_tensor(self, t, x):
        """Gubinelli tensor of the diffusion along itself:
        G[..., i, j, k] = sum_l  d sigma^{ij}/dx^l * sigma^{lk}."""
        jac = self.jac_x_diffusion(t, x)
        sig = self.diffusion(t, x)
        return np.einsum("...ijl,...lk->...ijk", jac, sig)

    def hess_or_fd(self, t, x):
        if self.hess_x_diffusion is not None:
            return self.hess_x_diffusion(t, x)
        return _fd_hess_diffusion(self, t, x)

    def jac_u_or_fd(self, t, x, u):
        if self.jac_u_drift is not None:
            return self.jac_u_drift(t, x, u)
        return _fd_jac_u_drift(self, t, x, u)


def _basis_shifts(x, h):
    # pairs of shifted copies of x along each trailing coordinate
    n = x.shape[-1]
    eye = np.eye(n)
    plus = x[..., None, :] + h[..., None, :] * eye
    minus = x[..., None, :] - h[..., None, :] * eye
    return plus, minus


def _fd_hess_diffusion(fields, t, x):
    """Central-difference surrogate for d^2 sigma / dx dx, shape (..., n, d, n, n)."""
    x = np.asarray(x, dtype=float)
    scale = 1e-6 * (1.0 + np.linalg.norm(x, axis=-1, keepdims=True))
    h = np.broadcast_to(scale, x.shape)
    plus, minus = _basis_shifts(x, h)
    jp = fields.jac_x_diffusion(t, plus)  # (..., n_coord, n, d, n)
    jm = fields.jac_x_diffusion(t, minus)
    hess = (jp - jm) / (2.0 * h[..., :, None, None, None])
    # coordinate axis is the differentiation direction; move it last
    return np.moveaxis(hess, -4, -1)


def _fd_jac_u_drift(fields, t, x, u):
    u = np.asarray(u, dtype=float)
    scale = 1e-6 * (1.0 + np.linalg.norm(u, axis=-1, keepdims=True))
    h = np.broadcast_to(scale, u.shape)
    plus, minus = _basis_shifts(u, h)
    bp = fields.drift(t, x[..., None, :], plus)
    bm = fields.drift(t, x[..., None, :], minus)
    jac = (bp - bm) / (2.0 * h[..., :, None])
    return np.moveaxis(jac, -2, -1)


def augment_fields(fields, grad_x_f, p0_weight=-1.0):
    """Bundle for the coupled state-adjoint system z = (x, p).

    Drift (b, -grad_x H) with H = p^T b + p0 * f; diffusion
    (sigma(x), -grad_x sigma(x)^T p). The second level used by the rough step
    is the generic Gubinelli tensor of this augmented diffusion, assembled
    from grad_x sigma and (when supplied) its second derivative.
    """
    n, m, d = fields.n, fields.m, fields.d

    def split(z):
        return z[..., :n], z[..., n:]

    def drift(t, z, u):
        x, p = split(z)
        bx = fields.drift(t, x, u)
        jbx = fields.jac_x_drift(t, x, u)
        grad_h = np.einsum("...ij,...i->...j", jbx, p) + p0_weight * grad_x_f(t, x, u)
        return np.concatenate([bx, -grad_h], axis=-1)

    def diffusion(t, z):
        x, p = split(z)
        sig = fields.diffusion(t, x)
        jac = fields.jac_x_diffusion(t, x)
        # [grad_x sigma^T p]^{ij} = sum_q  d sigma^{qj}/dx^i * p^q
        sig_p = np.einsum("...qji,...q->...ij", jac, p)
        return np.concatenate([sig, -sig_p], axis=-2)

    def jac_x_diffusion(t, z):
        x, p = split(z)
        jac = fields.jac_x_diffusion(t, x)
        hess = fields.hess_or_fd(t, x)
        batch = np.broadcast_shapes(x.shape[:-1], p.shape[:-1])
        out = np.zeros(batch + (2 * n, d, 2 * n))
        out[..., :n, :, :n] = np.broadcast_to(jac, batch + (n, d, n))
        # d/dx^l of -sum_q d sigma^{qj}/dx^i p^q
        out[..., n:, :, :n] = -np.einsum("...qjil,...q->...ijl", hess, p)
        # d/dp^l of -sum_q d sigma^{qj}/dx^i p^q
        out[..., n:, :, n:] = -np.einsum("...ljk->...kjl", jac)
        return out

    def jac_x_drift(t, z, u):
        # finite-difference Jacobian of the augmented drift; only used by
        # diagnostics, never by the steppers
        z = np.asarray(z, dtype=float)
        scale = 1e-6 * (1.0 + np.linalg.norm(z, axis=-1, keepdims=True))
        h = np.broadcast_to(scale, z.shape)
        plus, minus = _basis_shifts(z, h)
        uu = None if u is None else np.asarray(u)[..., None, :]
        bp = drift(t, plus, uu)
        bm = drift(t, minus, uu)
        return np.moveaxis((bp - bm) / (2.0 * h[..., :, None]), -2, -1)

    return VectorFieldBundle(
        n=2 * n,
        m=m,
        d=d,
        drift=drift,
        diffusion=diffusion,
        jac_x_drift=jac_x_drift,
        jac_x_diffusion=jac_x_diffusion,
        hess_x_diffusion=None,
        jac_u_drift=None,
    )


def validate_jacobians(fields, rng, npoints=10, t=0.0, u_scale=1.0, x_scale=1.0):
    """Max relative error of the supplied Jacobians against central finite
    differences at random points (step 1e-6 * (1 + |coordinate|))."""
    worst = {"jac_x_drift": 0.0, "jac_x_diffusion": 0.0}
    if fields.jac_u_drift is not None:
        worst["jac_u_drift"] = 0.0
    for _ in range(npoints):
        x = x_scale * rng.standard_normal(fields.n)
        u = u_scale * rng.standard_normal(fields.m)

        def fd(fun, point):
            cols = []
            for j in range(point.size):
                h = 1e-6 * (1.0 + abs(point[j]))
                pp, pm = point.copy(), point.copy()
                pp[j] += h
                pm[j] -= h
                cols.append((fun(pp) - fun(pm)) / (2.0 * h))
            return np.stack(cols, axis=-1)

        ref = fd(lambda y: fields.drift(t, y, u), x)
        got = fields.jac_x_drift(t, x, u)
        worst["jac_x_drift"] = max(worst["jac_x_drift"], _rel_err(got, ref))

        ref = fd(lambda y: fields.diffusion(t, y), x)
        got = fields.jac_x_diffusion(t, x)
        worst["jac_x_diffusion"] = max(worst["jac_x_diffusion"], _rel_err(got, ref))

        if fields.jac_u_drift is not None:
            ref = fd(lambda v: fields.drift(t, x, v), u)
            got = fields.jac_u_drift(t, x, u)
            worst["jac_u_drift"] = max(worst["jac_u_drift"], _rel_err(got, ref))
    return worst


def _rel_err(got, ref):
    denom = 1.0 + np.max(np.abs(ref))
    return float(np.max(np.abs(got - ref)) / denom)

"""Vector field bundles and the one-step integrators."""

import numpy as np
import pytest

from oracles import rel_err
from roughshoot.fields import VectorFieldBundle, augment_fields, validate_jacobians
from roughshoot.grid import ControlSignal, EnsembleSpec, TimeGrid, brownian_sample
from roughshoot.integrate import (
    RoughStepInput,
    integrate_forward,
    milstein_step,
    rough_step,
)
from roughshoot.lift import stratonovich_lift
from roughshoot.problems import scalar_lqr_test, spacecraft_fb, spacecraft_ol, SpacecraftConfig


def scalar_geometric_bundle(c=0.7, drift_rate=0.0):
    """b = drift_rate * x, sigma = c x, all derivatives closed form."""
    return VectorFieldBundle(
        n=1,
        m=1,
        d=1,
        drift=lambda t, x, u: drift_rate * x,
        diffusion=lambda t, x: c * x[..., :, None],
        jac_x_drift=lambda t, x, u: drift_rate * np.ones(np.asarray(x).shape[:-1] + (1, 1)),
        jac_x_diffusion=lambda t, x: c * np.ones(np.asarray(x).shape + (1, 1)),
        hess_x_diffusion=lambda t, x: np.zeros(np.asarray(x).shape + (1, 1, 1)),
        jac_u_drift=lambda t, x, u: np.zeros(np.asarray(x).shape[:-1] + (1, 1)),
    )


def test_second_level_tensor_of_a_diagonal_diffusion():
    # sigma = c diag(x) gives G[i, j, k] = c^2 x_i exactly when i = j = k
    cfg = SpacecraftConfig()
    fields = spacecraft_ol(cfg).fields
    x = np.array([0.3, -1.2, 0.5])
    G = fields.second_level_tensor(0.0, x)
    expect = np.zeros((3, 3, 3))
    for i in range(3):
        expect[i, i, i] = cfg.noise**2 * x[i]
    assert np.allclose(G, expect)


def test_supplied_jacobians_match_finite_differences():
    rng = np.random.default_rng(0)
    for problem in (
        spacecraft_ol(SpacecraftConfig()),
        spacecraft_fb(SpacecraftConfig()),
        scalar_lqr_test(),
    ):
        worst = validate_jacobians(problem.fields, rng, npoints=20)
        assert max(worst.values()) <= 1e-5


def test_hessian_fallback_matches_an_analytic_second_derivative():
    # cubic scalar diffusion: d2 sigma / dx2 = 6x, recovered exactly by the
    # central difference of the (quadratic) Jacobian
    bundle = VectorFieldBundle(
        n=1,
        m=1,
        d=1,
        drift=lambda t, x, u: 0.0 * x,
        diffusion=lambda t, x: x[..., :, None] ** 3,
        jac_x_drift=lambda t, x, u: np.zeros(np.asarray(x).shape[:-1] + (1, 1)),
        jac_x_diffusion=lambda t, x: 3.0 * (x**2)[..., :, None, None],
    )
    x = np.array([0.8])
    hess = bundle.hess_or_fd(0.0, x)
    assert hess.shape == (1, 1, 1, 1)
    assert hess[0, 0, 0, 0] == pytest.approx(6.0 * 0.8, rel=1e-7)


def test_control_jacobian_fallback_on_a_quadratic_drift():
    bundle = VectorFieldBundle(
        n=1,
        m=1,
        d=1,
        drift=lambda t, x, u: x + u**2,
        diffusion=lambda t, x: np.zeros(np.asarray(x).shape + (1,)),
        jac_x_drift=lambda t, x, u: np.ones(np.asarray(x).shape[:-1] + (1, 1)),
        jac_x_diffusion=lambda t, x: np.zeros(np.asarray(x).shape + (1, 1)),
    )
    got = bundle.jac_u_or_fd(0.0, np.array([0.5]), np.array([1.5]))
    assert got[0, 0] == pytest.approx(3.0, rel=1e-8)


def test_rough_step_without_noise_is_explicit_euler():
    problem = scalar_lqr_test(a=-0.5)
    x = np.array([2.0])
    u = np.array([0.3])
    inc = RoughStepInput(dt=0.1, dx=np.array([0.4]), xx=np.array([[0.08]]))
    out = rough_step(problem.fields, 0.0, x, u, inc)
    assert out[0] == pytest.approx(2.0 + 0.1 * (-0.5 * 2.0 + 0.3))


def test_rough_step_on_the_scalar_geometric_field():
    c, dB = 0.7, 0.31
    bundle = scalar_geometric_bundle(c)
    inc = RoughStepInput(dt=0.05, dx=np.array([dB]), xx=np.array([[0.5 * dB * dB]]))
    out = rough_step(bundle, 0.0, np.array([1.3]), np.array([0.0]), inc)
    assert out[0] == pytest.approx(1.3 * (1.0 + c * dB + 0.5 * c * c * dB * dB), rel=1e-14)


def test_milstein_step_without_noise_is_the_drift_step():
    c = 0.7
    bundle = scalar_geometric_bundle(c, drift_rate=-0.2)
    out = milstein_step(bundle, 0.0, np.array([2.0]), np.array([0.0]), 0.1, np.array([0.0]))
    assert out[0] == pytest.approx(2.0 * (1.0 - 0.2 * 0.1))


def test_milstein_step_scalar_formula():
    c, dB, dt, b = 0.7, -0.4, 0.05, -0.2
    bundle = scalar_geometric_bundle(c, drift_rate=b)
    out = milstein_step(bundle, 0.0, np.array([1.5]), np.array([0.0]), dt, np.array([dB]))
    expect = 1.5 * (1.0 + c * dB + 0.5 * c * c * dB * dB) + b * 1.5 * dt
    assert out[0] == pytest.approx(expect, rel=1e-14)


def _two_channel_bundle(diffusion, jac_x_diffusion):
    return VectorFieldBundle(
        n=2,
        m=1,
        d=2,
        drift=lambda t, x, u: 0.0 * x,
        jac_x_drift=lambda t, x, u: np.zeros(np.asarray(x).shape[:-1] + (2, 2)),
        diffusion=diffusion,
        jac_x_diffusion=jac_x_diffusion,
    )


def test_milstein_rejects_a_component_driven_by_two_channels():
    def diffusion(t, x):
        out = np.zeros(np.asarray(x).shape + (2,))
        out[..., 0, 0] = x[..., 0]
        out[..., 0, 1] = x[..., 0]
        return out

    def jac(t, x):
        out = np.zeros(np.asarray(x).shape + (2, 2))
        out[..., 0, 0, 0] = 1.0
        out[..., 0, 1, 0] = 1.0
        return out

    bundle = _two_channel_bundle(diffusion, jac)
    with pytest.raises(ValueError):
        milstein_step(bundle, 0.0, np.array([1.0, 2.0]), None, 0.1, np.array([0.1, 0.2]))


def test_milstein_rejects_cross_channel_corrections():
    # sigma^{00} = sigma^{11} = x_2: each component sees one channel, but the
    # correction of component 1 picks up channel 2, which needs a Levy area
    def diffusion(t, x):
        out = np.zeros(np.asarray(x).shape + (2,))
        out[..., 0, 0] = x[..., 1]
        out[..., 1, 1] = x[..., 1]
        return out

    def jac(t, x):
        out = np.zeros(np.asarray(x).shape + (2, 2))
        out[..., 0, 0, 1] = 1.0
        out[..., 1, 1, 1] = 1.0
        return out

    bundle = _two_channel_bundle(diffusion, jac)
    with pytest.raises(ValueError):
        milstein_step(bundle, 0.0, np.array([1.0, 2.0]), None, 0.1, np.array([0.1, 0.2]))


def test_milstein_equals_rough_step_on_the_attitude_fields():
    problem = spacecraft_ol(SpacecraftConfig())
    rng = np.random.default_rng(42)
    dt = 0.01
    for _ in range(50):
        x = rng.standard_normal(3) + 2.0
        u = rng.standard_normal(3)
        dB = np.sqrt(dt) * rng.standard_normal(3)
        inc = RoughStepInput(dt=dt, dx=dB, xx=0.5 * np.outer(dB, dB))
        a = rough_step(problem.fields, 0.0, x, u, inc)
        b = milstein_step(problem.fields, 0.0, x, u, dt, dB)
        assert rel_err(a, b) <= 1e-12


def test_augmented_drift_carries_the_negative_hamiltonian_gradient():
    problem = spacecraft_ol(SpacecraftConfig())
    aug = problem.augmented()
    rng = np.random.default_rng(1)
    x, p, u = rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(3)
    z = np.concatenate([x, p])
    out = aug.drift(0.0, z, u)
    jb = problem.fields.jac_x_drift(0.0, x, u)
    grad_h = jb.T @ p - problem.grad_x_f(0.0, x, u)
    assert np.allclose(out[:3], problem.fields.drift(0.0, x, u))
    assert np.allclose(out[3:], -grad_h)


def test_augmented_diffusion_jacobian_matches_finite_differences():
    problem = spacecraft_ol(SpacecraftConfig())
    aug = problem.augmented()
    rng = np.random.default_rng(2)
    z = rng.standard_normal(6)
    got = aug.jac_x_diffusion(0.0, z)
    h = 1e-6
    for l in range(6):
        zp, zm = z.copy(), z.copy()
        zp[l] += h
        zm[l] -= h
        fd = (aug.diffusion(0.0, zp) - aug.diffusion(0.0, zm)) / (2.0 * h)
        assert rel_err(got[..., l], fd) <= 1e-6


def test_adjoint_of_the_geometric_sde_decays_with_the_inverse_exponential():
    # dx = c x o dB has adjoint dp = -c p o dB, so p_T = p0 exp(-c B_T);
    # marching (x, p) with the augmented stepper must track that sign
    c, p0 = 0.7, 1.0
    bundle = scalar_geometric_bundle(c)
    aug = augment_fields(
        bundle, lambda t, x, u: np.zeros_like(x), p0_weight=-1.0
    )
    N = 2048
    grid = TimeGrid(0.0, 1.0, N)
    path = brownian_sample(EnsembleSpec(M=1, d=1, master_seed=9), grid)[0]
    rp = stratonovich_lift(path)
    u = ControlSignal(grid, np.zeros((N, 1)))
    sol = integrate_forward(aug, np.array([1.0, p0]), u, rp)
    B_T = path.values[-1, 0]
    x_T, p_T = sol.values[-1]
    assert abs(x_T - np.exp(c * B_T)) < 5e-3
    assert abs(p_T - p0 * np.exp(-c * B_T)) < 5e-3
    assert abs(p_T - p0 * np.exp(+c * B_T)) > 0.1

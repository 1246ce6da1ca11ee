"""Problem definitions, Hamiltonian calculus, resolvers, and MC cost."""

import logging

import numpy as np
import pytest

from oracles import fd_gradient, riccati_feedback
from roughshoot.fields import VectorFieldBundle
from roughshoot.grid import ControlSignal, EnsembleSpec, TimeGrid, brownian_sample
from roughshoot.integrate import integrate_coupled
from roughshoot.lift import stratonovich_lift
from roughshoot.problems import (
    OcpProblem,
    SpacecraftConfig,
    evaluate_cost_mc,
    grad_u_hamiltonian,
    grad_x_hamiltonian,
    hamiltonian,
    scalar_lqr_test,
    spacecraft_fb,
    spacecraft_ol,
)
from roughshoot.shooting import newton_solve


def test_hamiltonian_vanishes_without_costates():
    problem = spacecraft_ol(SpacecraftConfig())
    x = np.array([0.1, -0.2, 0.3])
    u = np.array([1.0, 2.0, 3.0])
    assert hamiltonian(problem, 0.0, x, u, np.zeros(3), p0=0.0) == pytest.approx(0.0)


def test_hamiltonian_vanishes_at_the_origin():
    problem = spacecraft_ol(SpacecraftConfig())
    p = np.array([0.4, -1.0, 2.0])
    assert hamiltonian(problem, 0.0, np.zeros(3), np.zeros(3), p) == pytest.approx(0.0)


def test_hamiltonian_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    for problem in (
        spacecraft_ol(SpacecraftConfig()),
        spacecraft_fb(SpacecraftConfig()),
        scalar_lqr_test(),
    ):
        n, m = problem.n, problem.m
        for _ in range(20):
            x = rng.standard_normal(n)
            u = rng.standard_normal(m)
            p = rng.standard_normal(n)
            gx = grad_x_hamiltonian(problem, 0.0, x, u, p)
            gu = grad_u_hamiltonian(problem, 0.0, x, u, p)
            fx = fd_gradient(lambda y: hamiltonian(problem, 0.0, y, u, p), x)
            fu = fd_gradient(lambda v: hamiltonian(problem, 0.0, x, v, p), u)
            assert np.max(np.abs(gx - fx)) <= 1e-5 * (1.0 + np.max(np.abs(fx)))
            assert np.max(np.abs(gu - fu)) <= 1e-5 * (1.0 + np.max(np.abs(fu)))


def test_gyroscopic_drift_vanishes_with_isotropic_inertia():
    # with J = I the drift at zero control is -x cross x = 0 for every x,
    # which pins the cross-product structure S(x) x = 0
    problem = spacecraft_ol(SpacecraftConfig(J=(1.0, 1.0, 1.0)))
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.standard_normal(3)
        assert np.allclose(problem.fields.drift(0.0, x, np.zeros(3)), 0.0, atol=1e-15)


def test_spacecraft_diffusion_is_the_scaled_state_diagonal():
    cfg = SpacecraftConfig()
    problem = spacecraft_ol(cfg)
    sig = problem.fields.diffusion(0.0, cfg.x0)
    assert np.allclose(sig, cfg.noise * np.diag(cfg.x0))


def test_spacecraft_initial_state_is_converted_from_degrees():
    cfg = SpacecraftConfig()
    assert np.allclose(cfg.x0, np.pi / 180.0 * np.array([-1.0, -4.5, 4.5]))


def test_spacecraft_config_validation():
    with pytest.raises(ValueError):
        SpacecraftConfig(J=(1.0, -2.0, 3.0))
    with pytest.raises(ValueError):
        SpacecraftConfig(q_weight=0.0)


def test_open_loop_resolver_is_stationary_for_the_sample_mean():
    cfg = SpacecraftConfig()
    problem = spacecraft_ol(cfg)
    rng = np.random.default_rng(2)
    xs = rng.standard_normal((8, 3))
    ps = rng.standard_normal((8, 3))
    u = problem.resolver(0.0, xs, ps)
    grads = grad_u_hamiltonian(problem, 0.0, xs, u, ps)
    assert np.max(np.abs(np.mean(grads, axis=0))) <= 1e-10


def test_feedback_resolver_is_stationary_for_the_sample_mean():
    cfg = SpacecraftConfig()
    problem = spacecraft_fb(cfg)
    rng = np.random.default_rng(3)
    xs = rng.standard_normal((8, 3)) + 2.0
    ps = rng.standard_normal((8, 3))
    k = problem.resolver(0.0, xs, ps)
    grads = grad_u_hamiltonian(problem, 0.0, xs, k, ps)
    assert np.max(np.abs(np.mean(grads, axis=0))) <= 1e-10


def test_feedback_resolver_trivial_cases():
    cfg = SpacecraftConfig()
    problem = spacecraft_fb(cfg)
    xs = np.array([[0.5, -1.0, 2.0]])
    assert np.allclose(problem.resolver(0.0, xs, np.zeros((1, 3))), 0.0)
    ps = np.array([[0.3, 0.6, -0.9]])
    k = problem.resolver(0.0, xs, ps)
    expect = ps[0] / (np.asarray(cfg.J) * cfg.r_weight * xs[0])
    assert np.allclose(k, expect)


def test_feedback_resolver_guards_vanishing_state_variance(caplog):
    problem = spacecraft_fb(SpacecraftConfig())
    xs = np.array([[0.0, 1.0, 1.0]])
    ps = np.array([[5.0, 1.0, 1.0]])
    with caplog.at_level(logging.WARNING):
        k = problem.resolver(0.0, xs, ps)
    assert k[0] == 0.0
    assert np.all(np.isfinite(k))
    assert any("guard" in rec.message for rec in caplog.records)


def test_lqr_problem_at_the_origin_is_already_solved():
    problem = scalar_lqr_test(x0=0.0)
    grid = TimeGrid(0.0, 1.0, 20)
    zero_path = brownian_sample(EnsembleSpec(M=1, d=1, master_seed=0), grid)[0]
    ensemble = [stratonovich_lift(zero_path)]
    sol, report = newton_solve(problem, ensemble, problem.initial_states(1))
    assert report.converged
    assert report.iterations == 0
    _, _, control = integrate_coupled(problem, problem.initial_states(1), sol.p0s, ensemble)
    assert np.allclose(control.values, 0.0)


def test_riccati_control_beats_doing_nothing():
    problem = scalar_lqr_test()
    N = 100
    grid = TimeGrid(0.0, 1.0, N)
    _, u_star, _ = riccati_feedback(1.0, -0.5, 1.0, 1.0, 1.0)
    u_ref = ControlSignal(grid, u_star(grid.nodes[:-1])[:, None])
    spec = EnsembleSpec(M=1, d=1, master_seed=0, stream="validate/lqr")
    cost_star, err_star = evaluate_cost_mc(problem, u_ref, spec)
    cost_zero, err_zero = evaluate_cost_mc(problem, ControlSignal(grid, np.zeros((N, 1))), spec)
    assert err_star == 0.0 and err_zero == 0.0  # deterministic dynamics
    assert cost_star < cost_zero


def _unit_cost_problem():
    bundle = VectorFieldBundle(
        n=1,
        m=1,
        d=1,
        drift=lambda t, x, u: 0.0 * x,
        diffusion=lambda t, x: np.zeros(np.asarray(x).shape + (1,)),
        jac_x_drift=lambda t, x, u: np.zeros(np.asarray(x).shape[:-1] + (1, 1)),
        jac_x_diffusion=lambda t, x: np.zeros(np.asarray(x).shape + (1, 1)),
    )
    return OcpProblem(
        name="unit",
        n=1,
        m=1,
        d=1,
        T=2.0,
        fields=bundle,
        f=lambda t, x, u: np.ones(np.asarray(x).shape[:-1]),
        grad_x_f=lambda t, x, u: np.zeros_like(x),
        grad_u_f=lambda t, x, u: np.zeros_like(np.asarray(u, dtype=float)),
        resolver=lambda t, xs, ps: np.zeros(1),
        x0=np.zeros(1),
    )


def test_mc_cost_of_a_unit_integrand_is_the_horizon():
    problem = _unit_cost_problem()
    grid = TimeGrid(0.0, 2.0, 25)
    u = ControlSignal(grid, np.zeros((25, 1)))
    mean, stderr = evaluate_cost_mc(problem, u, EnsembleSpec(M=50, d=1, master_seed=4))
    assert mean == pytest.approx(2.0, abs=1e-12)
    assert stderr == 0.0


def test_mc_cost_is_deterministic_per_stream():
    problem = spacecraft_ol(SpacecraftConfig(T=1.0))
    grid = TimeGrid(0.0, 1.0, 20)
    u = ControlSignal(grid, np.zeros((20, 3)))
    spec = EnsembleSpec(M=30, d=3, master_seed=5, stream="eval/0")
    assert evaluate_cost_mc(problem, u, spec) == evaluate_cost_mc(problem, u, spec)


def test_doubling_eval_samples_halves_the_estimator_variance():
    problem = spacecraft_ol(SpacecraftConfig(T=1.0))
    grid = TimeGrid(0.0, 1.0, 20)
    u = ControlSignal(grid, np.zeros((20, 3)))
    means = {20: [], 40: []}
    for seed in range(300):
        for M in (20, 40):
            spec = EnsembleSpec(M=M, d=3, master_seed=seed, stream="validate/var%d" % M)
            mean, _ = evaluate_cost_mc(problem, u, spec)
            means[M].append(mean)
    ratio = np.var(means[20], ddof=1) / np.var(means[40], ddof=1)
    assert 1.6 <= ratio <= 2.5


def test_solved_spacecraft_control_beats_doing_nothing():
    cfg = SpacecraftConfig()
    problem = spacecraft_ol(cfg)
    grid = TimeGrid(0.0, cfg.T, 40)
    paths = brownian_sample(EnsembleSpec(M=10, d=3, master_seed=0, stream="solve/0"), grid)
    ensemble = [stratonovich_lift(p) for p in paths]
    x0s = problem.initial_states(10)
    sol, report = newton_solve(problem, ensemble, x0s)
    assert report.converged
    _, _, control = integrate_coupled(problem, x0s, sol.p0s, ensemble)
    spec = EnsembleSpec(M=500, d=3, master_seed=0, stream="eval/0")
    cost_solved, _ = evaluate_cost_mc(problem, control, spec)
    cost_zero, _ = evaluate_cost_mc(problem, ControlSignal(grid, np.zeros((40, 3))), spec)
    assert cost_solved < cost_zero

"""Monolithic backward Euler with damped Newton iterations."""

import numpy as np
import pytest

from mqsolve import (NewtonConfig, NewtonFailureError, PcgConfig,
                     implicit_euler_step, run_implicit)

TIGHT = NewtonConfig(tol=1e-10,
                     linear_solver=PcgConfig(rel_tol=1e-12, max_iter=50000))


def ramp_value(t, tau):
    return 1.0 - np.exp(-t / tau)


def monolithic(blocks, dt):
    n_c = blocks["mc_diag"].size
    j = blocks["full"].copy()
    j[:n_c, :n_c] += np.diag(blocks["mc_diag"] / dt)
    return j


def test_linear_step_needs_one_newton_iteration(rng, make_linear_system):
    system, _ = make_linear_system(rng)
    a_c = rng.standard_normal(3)
    a_n = rng.standard_normal(5)
    x_c, x_n, report = implicit_euler_step((a_c, a_n, 0.0), 1e-2, system,
                                           TIGHT)
    assert report.newton_iterations == 1
    assert len(report.residual_history) == 2
    assert len(report.linear_iterations) == 1


def test_huge_step_lands_on_stationary_state(rng, make_linear_system):
    system, blocks = make_linear_system(rng, n_c=3, n_n=6)
    dt = 1e12
    x_c, x_n, _ = implicit_euler_step(
        (np.zeros(3), np.zeros(6), 0.0), dt, system, TIGHT)
    rhs = np.concatenate([np.zeros(3),
                          blocks["pattern"] * ramp_value(dt, blocks["tau"])])
    expected = np.linalg.solve(blocks["full"], rhs)
    scale = np.linalg.norm(expected)
    assert np.linalg.norm(np.concatenate([x_c, x_n]) - expected) <= 1e-6 * scale


def test_run_implicit_matches_dense_chain(rng, make_linear_system):
    system, blocks = make_linear_system(rng, n_c=4, n_n=7)
    dt, steps = 0.05, 4
    result = run_implicit(system, t_end=dt * steps, dt=dt, config=TIGHT,
                          output_period=dt)
    j = monolithic(blocks, dt)
    a_c = np.zeros(4)
    for k in range(1, steps + 1):
        rhs = np.concatenate([
            blocks["mc_diag"] * a_c / dt,
            blocks["pattern"] * ramp_value(k * dt, blocks["tau"])])
        x = np.linalg.solve(j, rhs)
        a_c = x[:4]
    assert np.allclose(result.final_a_c, a_c, rtol=1e-7, atol=1e-12)
    assert np.allclose(result.final_a_n, x[4:], rtol=1e-7, atol=1e-12)
    assert result.aggregates["steps"] == steps
    assert result.aggregates["mean_newton_per_step"] == 1.0


def test_hard_nonlinear_step_converges_with_damping(corner_toy):
    system = corner_toy.system
    x_c, x_n, report = implicit_euler_step(
        (np.zeros(system.n_c), np.zeros(system.n_n), 0.0), 0.2, system)
    hist = np.array(report.residual_history)
    assert report.newton_iterations <= 10
    assert np.all(np.diff(hist) < 0)
    assert hist[-1] <= 1e-8 * hist[0]
    # terminal contraction is much faster than the damped opening phase
    assert hist[-1] / hist[-2] < 1e-2
    assert 1.5 <= corner_toy.probe(x_c, x_n) <= 3.5


def test_moderate_nonlinear_step(corner_toy):
    system = corner_toy.system
    x_c, x_n, report = implicit_euler_step(
        (np.zeros(system.n_c), np.zeros(system.n_n), 0.0), 0.05, system)
    assert report.newton_iterations == 2
    assert 1.0 <= corner_toy.probe(x_c, x_n) <= 1.7


def test_conducting_jacobian_matches_directional_fd(corner_toy, rng):
    system = corner_toy.system
    x_c, _, _ = implicit_euler_step(
        (np.zeros(system.n_c), np.zeros(system.n_n), 0.0), 0.05, system)
    jac = system.kc_jacobian(x_c).to_dense()
    eps = 1e-6 * np.linalg.norm(x_c)
    for _ in range(4):
        e = rng.standard_normal(system.n_c)
        e /= np.linalg.norm(e)
        plus = system.kc_apply(x_c + eps * e, x_c + eps * e)
        minus = system.kc_apply(x_c - eps * e, x_c - eps * e)
        fd = (plus - minus) / (2.0 * eps)
        assert np.linalg.norm(fd - jac @ e) <= 1e-6 * np.linalg.norm(jac @ e)


def test_unconditional_stability_across_step_sizes(rng, make_linear_system):
    system, blocks = make_linear_system(rng, n_c=3, n_n=6)
    a0 = rng.standard_normal(3)
    stationary = np.linalg.norm(
        np.linalg.solve(blocks["full"],
                        np.concatenate([np.zeros(3), blocks["pattern"]])))
    bound = 10.0 * (np.linalg.norm(a0) + stationary)
    for dt in (1e-3, 1.0, 1e3, 1e6):
        a_c, a_n, t = a0.copy(), np.zeros(6), 0.0
        for _ in range(3):
            a_c, a_n, rep = implicit_euler_step((a_c, a_n, t), dt, system,
                                                TIGHT)
            t += dt
            assert np.isfinite(a_c).all()
            assert np.linalg.norm(a_c) <= bound


def test_zero_source_stays_zero(rng, make_linear_system):
    from mqsolve import PartitionedSystem, ScaledPatternSource, exponential_ramp
    system, _ = make_linear_system(rng, n_c=3, n_n=5)
    quiet = PartitionedSystem.linear(
        mc=system.mc, kcn=system.kcn, kn=system.kn,
        kc=system.kc_matrix(None),
        source=ScaledPatternSource(np.zeros(5), exponential_ramp(0.5)))
    result = run_implicit(quiet, t_end=1e-2, dt=2e-3)
    assert np.array_equal(result.final_a_c, np.zeros(3))
    assert result.aggregates["newton_iterations"] == 0


def test_run_implicit_rows_and_aggregates(rng, make_linear_system):
    system, _ = make_linear_system(rng)
    result = run_implicit(system, t_end=1e-2, dt=2e-3, config=TIGHT,
                          output_period=5e-3)
    assert result.times[0] == 0.0
    assert result.times[-1] == pytest.approx(1e-2, rel=1e-12)
    agg = result.aggregates
    assert agg["integrator"] == "implicit"
    assert agg["strategy"] == "newton"
    assert agg["steps"] == 5
    assert not agg["aborted"]
    assert agg["min_pod_info"] == 1.0
    assert agg["max_basis_cols"] == 0
    assert np.all(result.iters_cpl_prev == 0)
    assert np.all(result.iters_cpl_cur == 0)
    assert np.all(result.basis_cols == 0)
    assert np.all(result.pod_info == 1.0)


def test_two_steps_match_manual_chain(rng, make_linear_system):
    system, _ = make_linear_system(rng, n_c=3, n_n=6)
    dt = 1e-2
    result = run_implicit(system, t_end=2 * dt, dt=dt, config=TIGHT,
                          output_period=dt)
    a_c, a_n, t = np.zeros(3), np.zeros(6), 0.0
    for _ in range(2):
        a_c, a_n, _ = implicit_euler_step((a_c, a_n, t), dt, system, TIGHT)
        t += dt
    assert np.array_equal(result.final_a_c, a_c)
    assert np.array_equal(result.final_a_n, a_n)


def test_newton_budget_failure_carries_history(corner_toy):
    system = corner_toy.system
    config = NewtonConfig(max_newton=1)
    with pytest.raises(NewtonFailureError) as err:
        implicit_euler_step((np.zeros(system.n_c), np.zeros(system.n_n), 0.0),
                            0.2, system, config)
    assert len(err.value.residual_history) >= 2
    assert "Newton" in str(err.value) or "newton" in str(err.value)


def test_run_implicit_abort_records_reason(corner_toy):
    result = run_implicit(corner_toy.system, t_end=0.4, dt=0.2,
                          config=NewtonConfig(max_newton=1))
    agg = result.aggregates
    assert agg["aborted"]
    assert "step 1" in agg["abort_reason"]
    assert result.n_rows == 1


def test_validation_errors(rng, make_linear_system):
    system, _ = make_linear_system(rng)
    state = (np.zeros(3), np.zeros(5), 0.0)
    with pytest.raises(ValueError):
        implicit_euler_step(state, 0.0, system)
    with pytest.raises(ValueError):
        NewtonConfig(tol=0.0)
    with pytest.raises(ValueError):
        NewtonConfig(max_newton=0)
    with pytest.raises(ValueError):
        run_implicit(system, t_end=0.0, dt=1e-3)
    with pytest.raises(ValueError):
        run_implicit(system, t_end=1.0, dt=0.0)
    with pytest.raises(ValueError):
        run_implicit(system, t_end=1.0, dt=1e-3, output_period=0.0)


def test_singular_block_keeps_algebraic_row_consistent(rng,
                                                       make_linear_system):
    system, blocks = make_linear_system(rng, n_c=4, n_n=8, singular=True)
    t_end = 0.03
    result = run_implicit(system, t_end=t_end, dt=1e-2, config=TIGHT)
    assert not result.aggregates["aborted"]
    j = blocks["pattern"] * ramp_value(t_end, blocks["tau"])
    residual = (blocks["kcn"].T @ result.final_a_c
                + blocks["kn"] @ result.final_a_n - j)
    assert np.linalg.norm(residual) <= 1e-7 * np.linalg.norm(j)

from dataclasses import replace

import numpy as np
import pytest

from twogrid_ns import mms
from twogrid_ns.assembly import trilinear_vector
from twogrid_ns.linalg import saddle_matrix
from twogrid_ns.space import FeFunction, evaluate
from twogrid_ns.twogrid import (
    NewtonDivergence,
    SimulationConfig,
    StepFailure,
    TwoGridSolver,
    coarse_for,
    initial_projection,
    level,
    parse_krule,
    run,
)

FREE_DECAY = replace(mms.EXAMPLE1, unforced=True)
AT_REST = replace(mms.EXAMPLE2, unforced=True)  # zero initial velocity, zero forcing


def l2(lev, u):
    return float(np.sqrt(u.coefficients @ (lev.forms.M @ u.coefficients)))


def test_config_rules():
    cfg = SimulationConfig(n_h=16)
    assert cfg.n_H == 4 and cfg.k == 1 / 256 and cfg.n_steps == 256
    assert [coarse_for(n) for n in (4, 8, 16, 32, 64)] == [2, 3, 4, 6, 8]
    assert parse_krule("h", 8) == 1 / 8
    assert parse_krule("fixed:0.05", 8) == 0.05
    with pytest.raises(ValueError):
        parse_krule("bogus", 4)
    with pytest.raises(ValueError):
        SimulationConfig(n_h=4, T=0.1, k=0.03)
    with pytest.raises(ValueError):
        SimulationConfig(n_h=4, n_H=8)
    with pytest.raises(ValueError):
        SimulationConfig(n_h=4, mode="bogus")
    a = SimulationConfig(n_h=4, k=0.1, T=1.0)
    b = SimulationConfig(n_h=4, k=0.2, T=1.0)
    assert a.n_steps == 2 * b.n_steps == 10


def test_initial_projection_zero_and_idempotent():
    lev = level(6)
    u, q = initial_projection(lambda x, y: (0 * x, 0 * y), lev)
    assert np.abs(u.coefficients).max() == 0 and np.abs(q).max() == 0
    u, _ = initial_projection(mms.velocity(mms.EXAMPLE1, 0.0), lev)
    assert lev.divergence_residual(u) <= 1e-12
    again, _ = initial_projection(lambda x, y: evaluate(u, np.column_stack([x.ravel(), y.ravel()])).T.reshape((2,) + x.shape), lev)
    np.testing.assert_allclose(again.coefficients, u.coefficients, atol=1e-10)


def test_initial_projection_convergence():
    u0 = mms.velocity(mms.EXAMPLE1, 0.0)
    errs = [mms.error_norms(initial_projection(u0, level(n))[0], None, mms.EXAMPLE1, 0.0)[0] for n in (4, 8, 16)]
    for a, b in zip(errs, errs[1:]):
        assert 4.0 <= a / b <= 8.0


def test_discrete_steady_state_is_reproduced():
    cfg = SimulationConfig(n_h=4, n_H=4, k=0.05, T=0.05)
    solver = TwoGridSolver(cfg)
    lev = solver.coarse
    u_star, _ = initial_projection(mms.velocity(mms.EXAMPLE1, 0.0), lev)
    p_star = np.linspace(-1, 1, lev.dofs.n_pressure_dofs)
    p_star -= lev.areas @ p_star / lev.areas.sum()
    # load making (u*, p*) an exact discrete steady solution: nu A u + b(u,u) - B^T p
    load = cfg.nu * lev.forms.A @ u_star.coefficients + trilinear_vector(u_star, u_star, lev.dofs)
    load -= lev.forms.B.T @ p_star
    solver.load = lambda _lev, t: load
    u, q, hist = solver.newton(lev, u_star, np.zeros_like(p_star), cfg.k)
    np.testing.assert_allclose(u.coefficients, u_star.coefficients, atol=1e-12)
    np.testing.assert_allclose(-q, p_star, atol=1e-10)


def test_zero_data_gives_zero_solution():
    for mode in ("twogrid", "onegrid"):
        res = run(SimulationConfig(n_h=4, k=0.125, T=0.5, mode=mode), AT_REST)
        st = res.state
        assert np.abs(st.U_h.coefficients).max() == 0
        assert np.abs(st.P_h.coefficients).max() == 0
        if mode == "twogrid":
            assert np.abs(st.U_H.coefficients).max() == 0
            assert np.abs(st.U_star.coefficients).max() == 0


def test_newton_iteration_bound_example1():
    res = run(SimulationConfig(n_h=4, n_H=4, k=0.01, T=0.1, newton_tol=1e-10))
    assert max(s.newton_iterations for s in res.steps) <= 5


def test_newton_quadratic_convergence():
    solver = TwoGridSolver(SimulationConfig(n_h=4, n_H=4, k=0.25, T=1.0, nu=0.05))
    state = solver.initial_state()
    histories = []
    for _ in range(4):
        state.U_H.coefficients[:] *= 0.0  # poor initial guess: more iterations
        histories.append(solver.advance(state).newton_residuals)
    checked = 0
    for hist in histories:
        for r0, r1 in zip(hist, hist[1:]):
            if r0 <= 1e-3 and r1 > 1e-13:
                assert r1 <= 50.0 * r0**2
                checked += 1
    assert checked >= 1


def test_newton_divergence_reported():
    solver = TwoGridSolver(SimulationConfig(n_h=4, n_H=4, k=0.25, T=1.0, newton_max_iter=1, newton_tol=1e-14))
    with pytest.raises(StepFailure) as err:
        solver.run()
    assert err.value.step == 1
    assert isinstance(err.value.cause, NewtonDivergence)


def test_jacobian_matches_finite_differences(rng):
    cfg = SimulationConfig(n_h=4, n_H=4, k=0.01, T=0.01)
    solver = TwoGridSolver(cfg)
    lev = solver.coarse
    ni, nc = len(lev.inner), lev.dofs.n_pressure_dofs
    load = solver.load(lev, cfg.k)
    u_prev = lev.velocity(rng.standard_normal(ni))
    for _ in range(10):
        x = np.concatenate([rng.standard_normal(ni), rng.standard_normal(nc), [0.0]])
        d = rng.standard_normal(len(x))
        jac = saddle_matrix(solver.jacobian(lev, lev.velocity(x[:ni])), lev.B, lev.areas)
        eps = 1e-6
        fd = (solver.residual(lev, x + eps * d, u_prev, load) - solver.residual(lev, x - eps * d, u_prev, load)) / (2 * eps)
        jd = jac @ d
        assert np.linalg.norm(fd - jd) <= 1e-6 * np.linalg.norm(jd)


def test_step_degeneracy_equal_grids():
    solver = TwoGridSolver(SimulationConfig(n_h=4, n_H=4, k=1 / 16, T=0.25))
    state = solver.initial_state()
    for _ in range(4):
        solver.advance(state)
        np.testing.assert_allclose(state.U_star.coefficients, state.U_H.coefficients, atol=1e-9)
        np.testing.assert_allclose(state.U_h.coefficients, state.U_H.coefficients, atol=1e-9)
        np.testing.assert_allclose(state.P_h.coefficients, state.P_H.coefficients, atol=1e-8)


def test_one_fine_factorization_per_step():
    res = run(SimulationConfig(n_h=8, k=1 / 16, T=0.25))
    assert all(s.fine_factorizations == 1 for s in res.steps)
    one = run(SimulationConfig(n_h=8, k=1 / 16, T=0.25, mode="onegrid"))
    assert all(s.fine_factorizations == s.newton_iterations >= 1 for s in one.steps)


def test_run_log_properties_and_single_step():
    res = run(SimulationConfig(n_h=4, n_H=2, k=1 / 16, T=1.0))
    assert len(res.steps) == 16
    assert res.state.t == pytest.approx(1.0)
    assert res.max_divergence <= 1e-9
    assert res.max_pressure_mean <= 1e-12

    # T = k: the driver performs exactly the three steps once
    cfg = SimulationConfig(n_h=8, n_H=3, k=1 / 64, T=1 / 64)
    res = run(cfg)
    solver = TwoGridSolver(cfg)
    state = solver.initial_state()
    u_H, p_H, _ = solver.step1_coarse(state, cfg.k)
    load = solver.load(solver.fine, cfg.k)
    system = solver.fine_operator(u_H)
    u_star, _ = solver.step2_fine(system, u_H, state.U_star, load)
    u_h, p_h = solver.step3_fine(system, u_H, u_star, state.U_h, load)
    np.testing.assert_array_equal(res.state.U_h.coefficients, u_h.coefficients)
    np.testing.assert_array_equal(res.state.P_h.coefficients, p_h.coefficients)


def test_step3_does_not_degrade_step2():
    cfg = SimulationConfig(n_h=4, n_H=2, k=0.1 / 4, T=0.1)
    res = run(cfg)
    e_star = mms.error_norms(res.state.U_star, None, mms.EXAMPLE1, cfg.T)[0]
    e_h = mms.error_norms(res.state.U_h, None, mms.EXAMPLE1, cfg.T)[0]
    assert e_h <= 1.5 * e_star


def test_one_grid_close_to_two_grid():
    cfg = SimulationConfig(n_h=8, k=1 / 64, T=0.25)
    two = run(cfg)
    one = run(replace(cfg, mode="onegrid"))
    diff = FeFunction("velocity", two.state.U_h.coefficients - one.state.U_h.coefficients, two.state.U_h.dofs)
    gap = np.sqrt(diff.coefficients @ (level(8).forms.M @ diff.coefficients))
    err = mms.error_norms(one.state.U_h, None, mms.EXAMPLE1, cfg.T)[0]
    assert gap <= 5 * err


def test_energy_decay_without_forcing():
    solver = TwoGridSolver(SimulationConfig(n_h=4, n_H=4, k=0.01, T=1.0), FREE_DECAY)
    state = solver.initial_state()
    norms = [l2(solver.coarse, state.U_H)]
    for _ in range(100):
        solver.advance(state)
        norms.append(l2(solver.coarse, state.U_H))
    assert norms[0] > 0
    assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))


def test_two_grid_converges_in_h():
    errs = []
    for n_h in (4, 16):
        cfg = SimulationConfig(n_h=n_h, k=1 / 64, T=0.125)
        res = run(cfg)
        errs.append(mms.error_norms(res.fine_velocity, res.fine_pressure, mms.EXAMPLE1, cfg.T))
    assert errs[1][0] < errs[0][0] / 8

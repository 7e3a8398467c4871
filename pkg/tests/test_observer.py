import numpy as np
import pytest

from epictrl import kernels
from epictrl.control import select_gains, theta_sat
from epictrl.integrator import StepSpec, simulate
from epictrl.model import ModelParams, StateVec, lift_f, sird_rhs
from epictrl.observer import (LyapunovSolution, ObserverConfig, closed_loop_rhs, contact_tilde,
                              epsilon_star, from_z, in_set_Z, observer_matrices, observer_rhs,
                              output_u, phi, phi_lipschitz_bound, ratio_bound, solve_lyapunov,
                              to_z)

from oracles import companion3, f_loops, lyapunov_by_quadrature


def random_B(rng, p, m, positive=False):
    out = []
    for _ in range(m):
        w = rng.dirichlet(np.ones(4), size=p.n)
        if positive:
            w = 0.98 * w + 0.005
        out.append((w * p.populations[:, None]).T.reshape(-1))
    return np.array(out)


def test_gain_blocks():
    obs = ObserverConfig.default(2, epsilon=0.1)
    np.testing.assert_allclose(obs.G[0:3, 0], [60.0, 1100.0, 6000.0], rtol=1e-12)
    np.testing.assert_allclose(obs.G[3:6, 1], [60.0, 1100.0, 6000.0], rtol=1e-12)
    assert np.all(obs.G[0:3, 1] == 0)


def test_routh_rejects():
    with pytest.raises(ValueError, match="Hurwitz"):
        ObserverConfig([[1.0, 1.0, 2.0]], 0.01)


def test_contact_tilde_requires_gamma_d():
    p = ModelParams(0.5, [[2.0]], [1000.0], [0.3], [0.0], [1.0])
    with pytest.raises(ValueError, match="gamma_d must be positive for observer mode"):
        contact_tilde(p)


def test_to_z_zero_infected(two_class):
    z = to_z(StateVec([450.0, 780.0], [0.0, 0.0], [40.0, 15.0], [10.0, 5.0]), two_class)
    assert np.all(z.z2 == 0) and np.all(z.z3 == 0)
    np.testing.assert_array_equal(z.z1, [10.0, 5.0])


def test_to_z_hand_case(one_class):
    z = to_z(StateVec([800.0], [50.0], [140.0], [10.0]), one_class)
    f1 = f_loops([800.0], [50.0], 0.5, [[2.0]], [1000.0], [0.3], [0.001])[0]
    assert z.z3[0] == pytest.approx(0.001 * f1, rel=1e-14)
    assert z.z2[0] == pytest.approx(0.05)
    assert z.z1[0] == 10.0


def test_image_of_B_in_Z(scenario):
    p = scenario.params
    for x in random_B(np.random.default_rng(0), p, 1000):
        assert in_set_Z(to_z(x, p), p)


def test_round_trip(scenario):
    p = scenario.params
    for x in random_B(np.random.default_rng(1), p, 200, positive=True):
        D, I, S = from_z(to_z(x, p), p)
        n = p.n
        np.testing.assert_allclose(D, x[3 * n:], rtol=1e-10)
        np.testing.assert_allclose(I, x[n:2 * n], rtol=1e-10)
        np.testing.assert_allclose(S, x[:n], rtol=1e-10)


def test_from_z_fallback(two_class):
    z = np.array([3.0, 0.0, 0.0, 4.0, 0.0, 0.0])
    D, I, S = from_z(z, two_class, s_fallback=[7.0, 8.0])
    np.testing.assert_array_equal(I, [0.0, 0.0])
    np.testing.assert_array_equal(D, [3.0, 4.0])
    np.testing.assert_array_equal(S, [7.0, 8.0])


def test_phi_zero(two_class):
    assert np.all(phi(np.array([1.0, 0, 0, 2.0, 0, 0]), [0.01, 0.02], two_class) == 0)


def test_phi_matches_trajectory(two_class):
    """``z3' = phi(z, u)`` along the plant, by central differences of ``z3``."""
    p = two_class
    x0 = np.array([420.0, 700.0, 60.0, 40.0, 20.0, 60.0, 0.0, 0.0])
    u = np.array([0.02, 0.01])
    from epictrl.integrator import PiecewiseConstant

    sched = PiecewiseConstant([0.0], [u])
    tr = simulate(p, x0, 2.0, "schedule", schedule=sched, step=StepSpec(h=0.001),
                  stop_at_eradication=False)
    errs = []
    for stride in (20, 10):
        h = 0.001 * stride
        j = 1000
        z = [to_z(tr.states[i], p) for i in (j - stride, j, j + stride)]
        d3 = (z[2].z3 - z[0].z3) / (2 * h)
        errs.append(np.abs(d3 - phi(z[1], u, p)).max())
    assert errs[1] < errs[0] / 3.0


def test_ratio_bound_holds(scenario):
    p = scenario.params
    Ct = contact_tilde(p)
    K = ratio_bound(p)
    rng = np.random.default_rng(2)
    lam, c, gd, N = p.lam, p.gamma, p.gamma_d, p.populations
    worst = 0.0
    for _ in range(10_000):
        z2 = rng.uniform(0, gd * N)
        s2 = Ct @ z2
        lo = -c * z2
        hi = N * gd * lam * s2 - c * z2
        z3 = rng.uniform(lo, hi)
        ratio = np.abs(Ct @ z3) / s2
        assert np.all(ratio <= K)
        worst = max(worst, float((ratio / K).max()))
    assert worst > 0.05


def test_output_u_outside_Z(scenario):
    p = scenario.params
    z = to_z(scenario.x0, p).z.copy()
    z[1] = -1.0
    assert np.all(output_u(z, p, scenario.gains, scenario.sat) == 0)


def test_output_u_equals_state_feedback(scenario):
    p = scenario.params
    for x in random_B(np.random.default_rng(3), p, 100, positive=True):
        np.testing.assert_allclose(output_u(to_z(x, p), p, scenario.gains, scenario.sat),
                                   theta_sat(x, scenario.gains, p, scenario.sat), rtol=1e-9, atol=1e-15)


def test_output_u_bounded_and_lipschitz(scenario):
    p = scenario.params
    xs = random_B(np.random.default_rng(4), p, 400, positive=True)
    us = np.array([output_u(to_z(x, p), p, scenario.gains, scenario.sat) for x in xs])
    assert np.all((us >= 0) & (us <= scenario.sat.theta_sup))
    zs = np.array([to_z(x, p).z for x in xs])
    dz = np.abs(zs[:-1] - zs[1:]).max(axis=1)
    du = np.abs(us[:-1] - us[1:]).max(axis=1)
    assert np.isfinite((du / dz).max())


def test_observer_rhs_perfect_estimate(scenario):
    p = scenario.params
    obs = scenario.observer
    x = scenario.x0.as_array()
    x[p.n:2 * p.n] += 40.0
    x[:p.n] -= 40.0
    z = to_z(x, p)
    A, B, H = observer_matrices(p.n)
    dz = observer_rhs(z, H @ z.z, p, obs, scenario.gains, scenario.sat)
    u = output_u(z, p, scenario.gains, scenario.sat)
    np.testing.assert_allclose(dz, A @ z.z + B @ phi(z, u, p), rtol=1e-12, atol=1e-15)


def test_closed_loop_separation(scenario):
    p = scenario.params
    x = random_B(np.random.default_rng(5), p, 1, positive=True)[0]
    dx, _ = closed_loop_rhs(x, to_z(x, p), p, scenario.observer, scenario.gains, scenario.sat)
    expected = sird_rhs(x, theta_sat(x, scenario.gains, p, scenario.sat), p)
    np.testing.assert_allclose(dx, expected, rtol=1e-9, atol=1e-12)


def test_lyapunov_matches_quadrature():
    obs = ObserverConfig([[6.0, 11.0, 6.0]], 1.0)
    sol = solve_lyapunov(obs)
    ref = lyapunov_by_quadrature(companion3(6.0, 11.0, 6.0))
    assert np.abs(sol.P - ref).max() <= 1e-6
    assert sol.residual <= 1e-10


def test_lyapunov_block_structure():
    sol = solve_lyapunov(ObserverConfig.default(3))
    blk = sol.P[:3, :3]
    for k in range(3):
        np.testing.assert_array_equal(sol.P[3 * k:3 * k + 3, 3 * k:3 * k + 3], blk)
    off = sol.P.copy()
    for k in range(3):
        off[3 * k:3 * k + 3, 3 * k:3 * k + 3] = 0
    assert np.all(off == 0)


def test_epsilon_star_closed_form():
    assert epsilon_star(LyapunovSolution(np.diag([50.0, 1.0]), 0.0)) == pytest.approx(0.01)
    assert epsilon_star(LyapunovSolution(np.diag([0.25, 0.1]), 0.0)) == 1.0


def test_scenario_epsilon(scenario):
    sol = solve_lyapunov(scenario.observer)
    assert scenario.observer.epsilon == 0.01
    assert scenario.observer.epsilon <= epsilon_star(sol)
    m = phi_lipschitz_bound(scenario.params, scenario.sat.theta_sup).max()
    assert scenario.observer.epsilon <= epsilon_star(sol, m)

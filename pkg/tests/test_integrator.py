import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from epictrl.integrator import (IntegrationError, PiecewiseConstant, StepSpec, _bisect,
                                eradication_stop, integrate, simulate)
from epictrl.model import StateVec

from oracles import rk4_scalar, sird_rhs_loops


def test_zero_rhs_constant():
    tr = integrate(lambda t, x: np.zeros_like(x), [1.0, -2.0, 3.0], 5.0)
    assert np.all(tr.states == tr.states[0])


def test_exponential_decay():
    tr = integrate(lambda t, x: -x, [1.0], 1.0, StepSpec(h=0.01))
    assert tr.times[-1] == pytest.approx(1.0)
    assert abs(tr.states[-1, 0] - math.exp(-1.0)) < 1e-8
    assert tr.states[-1, 0] == pytest.approx(rk4_scalar(lambda t, x: -x, 1.0, 1.0, 0.01), rel=1e-13)


def test_adaptive_method():
    tr = integrate(lambda t, x: -x, [1.0], 1.0, StepSpec(h=0.1, method="adaptive", tol=1e-10))
    assert abs(tr.states[-1, 0] - math.exp(-1.0)) < 1e-8


def test_nonfinite_derivative_names_time_and_component():
    def rhs(t, x):
        return np.array([1.0, np.inf if t > 0.5 else 0.0])

    with pytest.raises(IntegrationError) as exc:
        integrate(rhs, [0.0, 0.0], 1.0, StepSpec(h=0.1))
    assert exc.value.component == "1" and exc.value.time > 0.5


def test_eradication_stop_threshold():
    x = StateVec([10.0, 10.0], [0.5, 0.49], [0.0, 0.0], [0.0, 0.0])
    assert eradication_stop(x)
    x.i[1] = 0.5
    assert not eradication_stop(x)


def test_open_loop_conservation_and_stop(scenario):
    p = scenario.params
    tr = simulate(p, scenario.x0, scenario.horizon, "none", step=StepSpec(h=0.01))
    drift = np.abs(tr.states.reshape(len(tr), 4, -1).sum(axis=1) - p.populations)
    assert np.all(drift < 1e-8 * p.populations)
    assert tr.status == "eradicated"
    # open-loop eradication happens after a few hundred days
    assert 150.0 < tr.eradication_time < 300.0


def _reference(p, x0, t_end):
    n = p.n

    def rhs(t, y):
        s, i, r, d = (y[j * n:(j + 1) * n] for j in range(4))
        return np.concatenate(sird_rhs_loops(s, i, r, d, np.zeros(n), p.lam, p.contact,
                                             p.populations, p.gamma_r, p.gamma_d, p.immun_prob))

    sol = solve_ivp(rhs, (0.0, t_end), x0, method="DOP853", rtol=1e-13, atol=1e-10)
    return sol.y[:, -1]


def test_rk4_fourth_order(two_class):
    x0 = np.array([450.0, 780.0, 50.0, 20.0, 0.0, 0.0, 0.0, 0.0])
    ref = _reference(two_class, x0, 20.0)
    errs = []
    for h in (0.4, 0.2):
        tr = simulate(two_class, x0, 20.0, "none", step=StepSpec(h=h), stop_at_eradication=False)
        errs.append(np.abs(tr.states[-1] - ref).max())
    ratio = errs[0] / errs[1]
    assert 10.0 <= ratio <= 24.0, ratio


def test_deterministic(scenario):
    a = simulate(scenario.params, scenario.x0, 50.0, "saturated", scenario.gains, scenario.sat)
    b = simulate(scenario.params, scenario.x0, 50.0, "saturated", scenario.gains, scenario.sat)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.controls, b.controls)
    assert [e.time for e in a.events] == [e.time for e in b.events]


def test_bisect_resolution():
    t = _bisect(lambda tau: tau > 0.0031415926, 0.01)
    assert 0.0031415926 < t <= 0.0031415926 + 1e-6


def test_eradication_time_matches_adaptive_root(scenario):
    p = scenario.params
    fixed = simulate(p, scenario.x0, scenario.horizon, "none", step=StepSpec(h=0.01))
    adapt = simulate(p, scenario.x0, scenario.horizon, "none",
                     step=StepSpec(h=0.5, method="adaptive", tol=1e-11))
    assert adapt.eradication_time == pytest.approx(fixed.eradication_time, abs=1e-4)


def test_controls_recorded_and_nonnegative(scenario):
    sched = PiecewiseConstant([0.0, 10.0], np.array([[0.01] * 6, [0.0] * 6]))
    tr = simulate(scenario.params, scenario.x0, 20.0, "schedule", schedule=sched)
    assert np.all(np.diff(tr.times) > 0)
    assert tr.controls.shape == (len(tr), 6) and np.all(tr.controls >= 0)
    assert np.all(tr.controls[tr.times < 10.0 - 1e-9] == 0.01)
    assert np.all(tr.controls[tr.times >= 10.0 + 1e-9] == 0.0)


def test_piecewise_constant_validation():
    with pytest.raises(ValueError):
        PiecewiseConstant([0.0, 0.0], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        PiecewiseConstant([0.0], [[-1.0]])


def test_unknown_controller(one_class):
    with pytest.raises(ValueError, match="unknown controller"):
        simulate(one_class, [900.0, 100.0, 0.0, 0.0], 1.0, "bang-bang")

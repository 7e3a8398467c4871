"""Randomized invariants of the plant, the laws and the coordinate change."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from epictrl import kernels
from epictrl.control import SatConfig, packed, q_blend, select_gains
from epictrl.integrator import PiecewiseConstant, StepSpec, simulate
from epictrl.model import ModelParams, in_set_B, sird_rhs
from epictrl.observer import from_z, in_set_Z, to_z

P = ModelParams(0.6, [[4.0, 1.0, 0.5], [1.2, 3.0, 0.8], [0.4, 0.9, 2.0]], [800.0, 1200.0, 400.0],
                [0.25, 0.15, 0.1], [0.002, 0.02, 0.08], [1.0, 0.9, 0.7])
CFG = SatConfig.auto(P, theta_sup=0.02, i_lo=15.0)
GAINS = select_gains(P)

fractions = arrays(np.float64, (3, 4), elements=st.floats(0.001, 1.0))


def state_from(w):
    w = w / w.sum(axis=1, keepdims=True)
    return (w * P.populations[:, None]).T.reshape(-1)


@settings(max_examples=200, deadline=None)
@given(fractions, arrays(np.float64, 3, elements=st.floats(0.0, 5.0)))
def test_rhs_conserves(w, theta):
    d = sird_rhs(state_from(w), theta, P).reshape(4, 3).sum(axis=0)
    assert np.all(np.abs(d) <= 1e-10 * P.populations)


@settings(max_examples=200, deadline=None)
@given(fractions)
def test_theta_sat_bounds(w):
    u = kernels.theta_sat(state_from(w), packed(GAINS, CFG, P), P.packed())
    assert np.all(u >= 0) and np.all(u <= CFG.theta_sup)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.5))
def test_q_blend_range_and_monotone(a, b, d):
    s = CFG.s_lo[0] + a * 3 * (CFG.s_hi[0] - CFG.s_lo[0])
    i = CFG.i_lo[0] + b * 3 * (CFG.i_hi[0] - CFG.i_lo[0])
    q = q_blend(s, i, CFG, 0)
    assert 0.0 <= q <= 1.0
    assert q_blend(s + d, i, CFG, 0) >= q - 1e-15
    assert q_blend(s, i + d, CFG, 0) >= q - 1e-15


@settings(max_examples=200, deadline=None)
@given(fractions)
def test_z_round_trip(w):
    x = state_from(w)
    z = to_z(x, P)
    assert in_set_Z(z, P)
    D, I, S = from_z(z, P)
    np.testing.assert_allclose(np.concatenate([S, I, D]), np.concatenate([x[:3], x[3:6], x[9:]]),
                               rtol=1e-9, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(fractions, arrays(np.float64, (3, 3), elements=st.floats(0.0, 1.0)))
def test_open_loop_stays_in_B(w, vals):
    sched = PiecewiseConstant([0.0, 3.0, 7.0], vals)
    tr = simulate(P, state_from(w), 12.0, "schedule", schedule=sched, step=StepSpec(h=0.02),
                  stop_at_eradication=False)
    assert all(in_set_B(x, P.populations, 1e-6 * P.populations.min()) for x in tr.states)
    drift = np.abs(tr.states.reshape(len(tr), 4, 3).sum(axis=1) - P.populations)
    assert np.all(drift < 1e-8 * P.populations)

"""Property suites run by ``epictrl verify``.

Each suite takes a scenario, runs what it needs and returns a list of
``Certificate`` objects with margins. Sampling is seeded, so repeated calls
give identical reports.
"""

from __future__ import annotations

import math
import time

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import expm

from . import kernels
from .analysis import (Certificate, box_exit_check, conservation_check, decay_envelope_check,
                       dstar_bound, invariance_check, lasalle_check, linearization_check,
                       lipschitz_estimate, peak_comparison_n1, summarize)
from .control import count_switches, lipschitz_constants, packed
from .integrator import PiecewiseConstant, StepSpec, simulate, simulate_observer
from .model import ModelParams, domain_floors
from .observer import (ObserverConfig, epsilon_star, lyapunov_V, phi_lipschitz_bound,
                       solve_lyapunov, to_z)
from .scenario import Scenario

__all__ = ["SUITES", "run_suite"]


def random_state(rng, N: np.ndarray, positive: bool = False) -> np.ndarray:
    """Uniform split of each ``N_k`` into ``(S, I, R, D)``."""
    w = rng.dirichlet(np.ones(4), size=N.shape[0])
    if positive:
        w = 0.98 * w + 0.005
    x = (w * N[:, None]).T.reshape(-1).copy()
    n = N.shape[0]
    # restore exact conservation after the float products
    x[2 * n:3 * n] = N - x[:n] - x[n:2 * n] - x[3 * n:]
    return np.maximum(x, 0.0)


def random_schedule(rng, n: int, horizon: float, pieces: int = 8, top: float = 0.3) -> PiecewiseConstant:
    times = np.concatenate([[0.0], np.sort(rng.uniform(0.0, horizon, pieces - 1))])
    return PiecewiseConstant(times, rng.uniform(0.0, top, size=(pieces, n)))


def suite_invariance(scn: Scenario, runs: int = 200, horizon: float = 100.0,
                     seed: int = 0) -> list[Certificate]:
    """Box invariance, conservation and the LaSalle facts over random open-loop runs."""
    rng = np.random.default_rng(seed)
    p = scn.params
    N = p.populations
    inv, cons, las = [], [], []
    t0 = time.perf_counter()
    trajs = [simulate(p, scn.x0, scn.horizon, "none", step=StepSpec(h=scn.step))]
    for _ in range(runs):
        x0 = random_state(rng, N)
        sched = random_schedule(rng, p.n, horizon)
        trajs.append(simulate(p, x0, horizon, "schedule", schedule=sched,
                              step=StepSpec(h=scn.step), stop_at_eradication=False))
    elapsed = time.perf_counter() - t0
    for tr in trajs:
        inv.append(invariance_check(tr, p, 1e-6))
        cons.append(conservation_check(tr, p, 1e-8))
        las.append(lasalle_check(tr, p))
    bad_las = [i for i, r in enumerate(las) if not r.passed]
    return [
        Certificate("invariance", all(c.passed for c in inv), min(c.margin for c in inv),
                    {"runs": len(inv), "seconds": elapsed, "time_ok": elapsed < 60.0}),
        Certificate("conservation", all(c.passed for c in cons), min(c.margin for c in cons),
                    {"max_relative_drift": max(c.detail["max_relative_drift"] for c in cons)}),
        Certificate("lasalle", not bad_las,
                    min(c.margin for r in las for c in r.checks),
                    {"failing_runs": bad_las[:10],
                     "failing_checks": [c.name for i in bad_las[:3] for c in las[i].failing()]}),
    ]


def sample_B_cap_D(rng, p: ModelParams, count: int) -> np.ndarray:
    floors = domain_floors(p)
    out = []
    while len(out) < count:
        x = random_state(rng, p.populations, positive=True)
        if kernels.in_domain(x, p.C, floors[0], floors[1]):
            out.append(x)
    return np.array(out)


def suite_linearization(scn: Scenario, samples: int = 10_000, seed: int = 1) -> list[Certificate]:
    """Linearized chains, non-negativity of the input, decay envelope, final-death bound."""
    p = scn.params
    g = scn.gains
    tr = simulate(p, scn.x0, scn.horizon, "linearizing", g, step=StepSpec(h=scn.step))
    lin = linearization_check(tr, p, g, 1e-4)
    xs = sample_B_cap_D(np.random.default_rng(seed), p, samples)
    th = kernels.theta_linearizing_batch(xs, g.alpha1, g.alpha2, p.packed())
    tmin = float(th.min())
    nonneg = Certificate("nonnegative_input", tmin >= -1e-12, tmin + 1e-12,
                         {"samples": samples, "min_theta": tmin})
    env = decay_envelope_check(tr, p, g, 1e-3)
    bound = dstar_bound(p, g, scn.i0)
    dead = tr.compartment("d")[-1] - scn.d0
    slack = bound - dead
    dstar = Certificate("dstar_bound", bool(np.all(slack >= 0)), float(slack.min()),
                        {"bound": bound.tolist(), "deaths": dead.tolist(), "status": tr.status,
                         "note": "deaths at the end of the run, which stops on leaving D"})
    return [lin, nonneg, env, dstar]


def suite_ordering(scn: Scenario) -> list[Certificate]:
    """Peak and eradication-time ordering across the three state-feedback regimes."""
    p = scn.params
    g = scn.gains
    step = StepSpec(h=scn.step)
    runs = {c: simulate(p, scn.x0, scn.horizon, c, g, scn.sat, step=step)
            for c in ("none", "linearizing", "saturated")}
    s = {c: summarize(tr, p) for c, tr in runs.items()}
    pk = {c: s[c].peak_total_infected for c in s}
    peaks_ok = pk["linearizing"] < pk["saturated"] < pk["none"]
    e_lin, e_open = s["linearizing"].eradication_time, s["none"].eradication_time
    erad_ok = e_lin is not None and e_open is not None and e_lin < e_open
    detail = {"peaks": pk, "eradication": {c: s[c].eradication_time for c in s},
              "status": {c: s[c].status for c in s}}
    erad_margin = (e_open - e_lin) if erad_ok else -math.inf
    return [
        Certificate("peak_ordering", peaks_ok,
                    min(pk["saturated"] - pk["linearizing"], pk["none"] - pk["saturated"]) / pk["none"],
                    detail),
        Certificate("eradication_ordering", erad_ok, erad_margin, detail),
    ]


def suite_peak_n1(grid: int = 5, h: float = 0.01) -> list[Certificate]:
    """Single-class peak reduction over a grid of admissible initial conditions."""
    p = ModelParams(0.5, np.array([[2.0]]), np.array([1000.0]), np.array([0.3]),
                    np.array([0.001]), np.array([1.0]))
    N = 1000.0
    s_hat = N * float(p.gamma[0]) / (p.lam * 2.0)
    profiles = {
        "pulse_0.01_5d": PiecewiseConstant([0.0, 5.0], [[0.01], [0.0]]),
        "long_0.005_30d": PiecewiseConstant([0.0, 30.0], [[0.005], [0.0]]),
        "stepdown": PiecewiseConstant([0.0, 2.0, 15.0], [[0.02], [0.004], [0.0]]),
    }
    rows = []
    for i0 in np.linspace(1.0, 50.0, grid):
        for f in np.linspace(0.2, 1.0, grid):
            s0 = s_hat + f * (N - i0 - s_hat)
            table = peak_comparison_n1(p, profiles, float(i0), float(s0), h=h)
            rows.extend(dict(r, i0=float(i0), s0=float(s0)) for r in table.rows)
    reduced = all(r["reduced"] for r in rows if r["profile"] != "zero")
    tm = all(r["tm_ok"] for r in rows)
    ident = all(r["identity_ok"] for r in rows)
    worst_id = max(r["identity_residual"] / (1e-3 * r["peak"]) for r in rows)
    gap = min(rows[j]["peak"] - r["peak"] for j in range(0, len(rows), 4)
              for r in rows[j + 1:j + 4])
    return [
        Certificate("peak_reduction_n1", reduced and tm and ident, 1 - worst_id,
                    {"cells": grid * grid, "min_peak_gap": gap, "profiles": list(profiles), "reduced": reduced,
                     "tm_ok": tm, "identity_ok": ident, "worst_identity_ratio": worst_id}),
    ]


def suite_lemma(scn: Scenario, starts: int = 100, horizon: float = 60.0, seed: int = 2) -> list[Certificate]:
    """Starts on the boundary of ``[0, S~_k] x [0, I~_k]`` never leave it."""
    rng = np.random.default_rng(seed)
    p = scn.params
    N = p.populations
    n = p.n
    s_lo, i_lo = scn.sat.s_lo, scn.sat.i_lo
    certs = []
    for _ in range(starts):
        k = int(rng.integers(n))
        x = random_state(rng, N)
        if rng.random() < 0.5:
            s, i = s_lo[k], rng.uniform(0, i_lo[k])
        else:
            s, i = rng.uniform(0, s_lo[k]), i_lo[k]
        x[k], x[n + k] = s, i
        x[3 * n + k] = rng.uniform(0, 0.5) * (N[k] - s - i)
        x[2 * n + k] = N[k] - s - i - x[3 * n + k]
        tr = simulate(p, x, horizon, "schedule", schedule=random_schedule(rng, n, horizon),
                      step=StepSpec(h=scn.step), stop_at_eradication=False)
        certs.append(box_exit_check(tr, k, s_lo[k], i_lo[k], N[k], 1e-9))
    return [Certificate("invariant_box", all(c.passed for c in certs),
                        min(c.margin for c in certs), {"starts": starts})]


def suite_switches(scn: Scenario) -> list[Certificate]:
    """Finite switching, none after eradication, and at least one reactivation."""
    p = scn.params
    tr = simulate(p, scn.x0, scn.horizon, "saturated", scn.gains, scn.sat, step=StepSpec(h=scn.step))
    m, times = count_switches(tr, scn.sat)
    erad = tr.eradication_time
    late = [t for t in times if erad is not None and t > erad]
    react = []
    for k in range(p.n):
        kinds = [e.kind for e in tr.events if e.cls == k]
        if any(a == "switch_off" and b == "switch_on" for a, b in zip(kinds, kinds[1:])):
            react.append(k)
    ok = erad is not None and not late and bool(react) and not tr.meta.get("event_overflow")
    return [Certificate("finite_switches", ok, float(len(react)),
                        {"m": m, "times": times.tolist(), "eradication": erad,
                         "reactivated_classes": react})]


def _class_box(p: ModelParams, cfg, k: int):
    n = p.n
    N = p.populations
    lo = np.zeros(2 * n)
    hi = np.concatenate([N, N])
    lo[k] = cfg.s_lo[k]
    lo[n + k] = cfg.i_lo[k]
    return lo, hi


def _full(p: ModelParams, pts: np.ndarray) -> np.ndarray:
    m, n = pts.shape[0], p.n
    out = np.zeros((m, 4 * n))
    out[:, :2 * n] = pts
    return out


def suite_lipschitz(scn: Scenario, pairs: int = 100_000, seed: int = 3) -> list[Certificate]:
    """Empirical Lipschitz constants of ``q_k``, ``theta_bar_k``, their product and ``theta_sat_k``.

    The unclipped law is sampled as well: on the class boxes it usually sits
    above ``theta_sup``, which leaves ``theta_bar_k`` flat there.
    """
    p = scn.params
    cfg = scn.sat
    g = scn.gains
    cp = packed(g, cfg, p)
    mp = p.packed()
    lc = lipschitz_constants(p, g, cfg)
    n = p.n
    N = p.populations
    rows = []
    ok = True
    worst = math.inf
    for k in range(n):
        sl, sh, il, ih = cfg.s_lo[k], cfg.s_hi[k], cfg.i_lo[k], cfg.i_hi[k]

        def q(pts, k=k):
            return kernels.q_blend_batch(np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]),
                                         sl, sh, il, ih)

        def theta(pts, k=k):
            return kernels.theta_linearizing_batch(_full(p, pts), g.alpha1, g.alpha2, mp)[:, k]

        def tbar(pts, k=k):
            return kernels.theta_bar_batch(_full(p, pts), k, cp, mp)

        def qtbar(pts, k=k):
            return q(pts[:, [k, n + k]]) * tbar(pts)

        def tsat(pts, k=k):
            return kernels.theta_sat_batch(_full(p, pts), cp, mp)[:, k]

        lo, hi = _class_box(p, cfg, k)
        est = {
            "q": lipschitz_estimate(q, [sl, il], [N[k], N[k]], pairs, seed,
                                    boundaries=[(0, sh), (1, ih)]),
            "theta": lipschitz_estimate(theta, lo, hi, pairs, seed + 4),
            "theta_bar": lipschitz_estimate(tbar, lo, hi, pairs, seed + 1),
            "q_theta_bar": lipschitz_estimate(qtbar, lo, hi, pairs, seed + 2,
                                              boundaries=[(k, sh), (n + k, ih)]),
            "theta_sat": lipschitz_estimate(tsat, np.zeros(2 * n), np.concatenate([N, N]), pairs,
                                            seed + 3, boundaries=[(k, sl), (n + k, il), (k, sh), (n + k, ih)]),
        }
        bound = {"q": lc.C[k], "theta": lc.K[k], "theta_bar": lc.K[k], "q_theta_bar": lc.L_max[k],
                 "theta_sat": lc.total_max[k]}
        for name in est:
            r = est[name] / bound[name] if bound[name] > 0 else math.inf
            worst = min(worst, 1.0 - r)
            ok &= est[name] <= bound[name]
        rows.append({"class": k, "empirical": est, "bound": bound})
    return [Certificate("lipschitz", bool(ok), worst, {"pairs": pairs, "classes": rows})]


def lyapunov_quadrature(A: np.ndarray, horizon_factor: float = 60.0) -> np.ndarray:
    """``int_0^inf exp(A^T t) exp(A t) dt`` by adaptive quadrature, truncated far into the decay."""
    rate = float(np.min(np.abs(np.linalg.eigvals(A).real)))
    T = horizon_factor / rate
    val, _ = quad_vec(lambda t: expm(A.T * t) @ expm(A * t), 0.0, T, epsabs=1e-13, epsrel=1e-12)
    return val


def suite_observer(scn: Scenario, transient: float = 1.0) -> list[Certificate]:
    """Observer accuracy, Lyapunov decrease, peak ordering and the Lyapunov solve."""
    p = scn.params
    g = scn.gains
    obs = scn.observer
    ly = solve_lyapunov(obs)
    eps_star = epsilon_star(ly)
    eps = obs.epsilon
    step = StepSpec(h=scn.observer_step, stride=max(1, int(round(scn.step / scn.observer_step))))
    tro = simulate_observer(p, scn.x0, scn.zhat0(), scn.horizon, g, scn.sat, obs, step)
    zs = np.array([to_z(x, p).z for x in tro.states])
    err = np.abs(zs - tro.estimates).max(axis=1)
    j5 = int(np.searchsorted(tro.times, 5.0))
    tol = 1e-3 * float((p.gamma_d * p.populations).max())
    e5 = float(err[min(j5, len(err) - 1)])
    V = lyapunov_V(zs, tro.estimates, p, eps, ly)
    jt = int(np.searchsorted(tro.times, transient))
    rise = float(np.diff(V[jt:]).max()) if V.size - jt > 1 else 0.0
    slack_v = 1e-8 * float(p.populations.sum())
    sat = simulate(p, scn.x0, scn.horizon, "saturated", g, scn.sat, step=StepSpec(h=scn.step))
    opn = simulate(p, scn.x0, scn.horizon, "none", step=StepSpec(h=scn.step))
    pk_o = summarize(tro, p).peak_total_infected
    pk_s = summarize(sat, p).peak_total_infected
    pk_n = summarize(opn, p).peak_total_infected
    A = obs.A0[:3, :3]
    P1 = solve_lyapunov(ObserverConfig(obs.beta[:1], 1.0)).P
    quad = lyapunov_quadrature(A)
    agree = float(np.abs(P1 - quad).max())
    return [
        Certificate("observer_error_5d", e5 <= tol, 1.0 - e5 / tol,
                    {"error": e5, "tol": tol, "epsilon": eps, "epsilon_star": eps_star,
                     "epsilon_ok": eps <= eps_star,
                     "epsilon_star_with_M": epsilon_star(ly, float(phi_lipschitz_bound(p, scn.sat.theta_sup).max()))}),
        Certificate("observer_V_decrease", rise <= slack_v, (slack_v - rise) / slack_v,
                    {"max_increase_after_transient": rise, "transient": transient}),
        Certificate("observer_peak_ordering", pk_s <= pk_o < pk_n, min(pk_o - pk_s, pk_n - pk_o) / pk_n,
                    {"observer": pk_o, "saturated": pk_s, "open_loop": pk_n}),
        Certificate("lyapunov_solve", ly.residual <= 1e-10 and agree <= 1e-6,
                    min(1 - ly.residual / 1e-10, 1 - agree / 1e-6),
                    {"residual": ly.residual, "quadrature_gap": agree, "P_norm_inf": ly.norm_inf}),
    ]


SUITES = {
    "invariance": suite_invariance,
    "linearization": suite_linearization,
    "ordering": suite_ordering,
    "peak": lambda scn: suite_peak_n1(),
    "lemma": suite_lemma,
    "switches": suite_switches,
    "lipschitz": suite_lipschitz,
    "observer": suite_observer,
}


def run_suite(name: str, scn: Scenario) -> list[Certificate]:
    if name == "all":
        return [c for key in SUITES for c in SUITES[key](scn)]
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)} or 'all'")
    return SUITES[name](scn)

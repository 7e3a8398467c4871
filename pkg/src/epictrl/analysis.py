"""Post-hoc metrics and numerical certificates over trajectories.

Every check returns a ``Certificate`` carrying a signed margin (positive when
the property holds) so reports show how close a run came to a violation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .control import LinGains, envelope_constants
from .integrator import PiecewiseConstant, StepSpec, Trajectory, simulate
from .model import ModelParams, lift_f

__all__ = [
    "Certificate",
    "LaSalleReport",
    "PeakTable",
    "RunSummary",
    "box_exit_check",
    "conservation_check",
    "decay_envelope_check",
    "dstar_bound",
    "invariance_check",
    "lasalle_check",
    "linearization_check",
    "lipschitz_estimate",
    "peak_comparison_n1",
    "summarize",
]


@dataclass
class Certificate:
    name: str
    passed: bool
    margin: float
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name} (margin {self.margin:.3g})"


@dataclass
class RunSummary:
    controller: str
    status: str
    peak_total_infected: float
    peak_time: float
    peak_per_class: np.ndarray
    eradication_time: float | None
    final_time: float
    final_dead: np.ndarray
    switch_count: int
    decay_fit: list[dict] | None = None

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, np.ndarray):
                out[k] = v.tolist()
        return out


def summarize(traj: Trajectory, params: ModelParams, gains: LinGains | None = None) -> RunSummary:
    """Peaks as sample maxima; totals divide by ``sum N``, per class by ``N_k``.

    The decay fit is attached for linearizing runs when ``gains`` is given.
    """
    N = params.populations
    I = traj.infected
    total = I.sum(axis=1) / N.sum()
    j = int(np.argmax(total))
    per_class = (I / N).max(axis=0)
    erad = traj.eradication_time
    if erad is None and I.shape[0] and I[0].sum() < 1.0:
        erad = float(traj.times[0])
    switches = sum(1 for e in traj.events if e.kind in ("switch_on", "switch_off"))
    decay = None
    if gains is not None and traj.meta.get("controller") == "linearizing":
        decay = decay_envelope_check(traj, params, gains).detail["classes"]
    return RunSummary(
        controller=str(traj.meta.get("controller", "unknown")),
        status=traj.status,
        peak_total_infected=float(total[j]),
        peak_time=float(traj.times[j]),
        peak_per_class=per_class,
        eradication_time=erad,
        final_time=float(traj.times[-1]),
        final_dead=traj.compartment("d")[-1].copy(),
        switch_count=switches,
        decay_fit=decay,
    )


def dstar_bound(params: ModelParams, gains: LinGains, i0) -> np.ndarray:
    """``gD_k C_k I_k(0) / mu_k``: bound on the final deaths under the linearizing law."""
    C, mu = envelope_constants(gains)
    return params.gamma_d * C * np.asarray(i0, dtype=float) / mu


def invariance_check(traj: Trajectory, params: ModelParams, rtol: float = 1e-6) -> Certificate:
    """Every compartment within ``[-rtol N_k, (1 + rtol) N_k]`` at every sample."""
    N = params.populations
    comp = traj.states.reshape(len(traj), 4, -1)
    low = comp / N
    margin = float(min(low.min() + rtol, rtol - (low.max() - 1.0)))
    return Certificate("invariance_B", margin >= 0, margin / rtol)


def conservation_check(traj: Trajectory, params: ModelParams, rtol: float = 1e-8) -> Certificate:
    N = params.populations
    drift = np.abs(traj.states.reshape(len(traj), 4, -1).sum(axis=1) - N) / N
    worst = float(drift.max())
    return Certificate("conservation", worst < rtol, 1.0 - worst / rtol,
                       {"max_relative_drift": worst})


@dataclass
class LaSalleReport:
    checks: list[Certificate]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failing(self) -> list[Certificate]:
        return [c for c in self.checks if not c.passed]


def _first_violation(values: np.ndarray) -> int | None:
    bad = np.flatnonzero(values < 0)
    return int(bad[0]) if bad.size else None


def lasalle_check(traj: Trajectory, params: ModelParams, atol: float | None = None) -> LaSalleReport:
    """Check the four monotonicity facts behind the attractivity argument.

    (a) ``V = sum(S + I + R)`` non-increasing, (b) ``dV/dt = -sum gD_k I_k``
    by finite differences, (c) each ``S_k`` non-increasing, (d) each ``R_k``
    non-decreasing. ``atol`` absorbs roundoff (default ``1e-12 sum N``).
    """
    N = params.populations
    total = float(N.sum())
    atol = 1e-12 * total if atol is None else atol
    S, I, R = (traj.compartment(c) for c in "sir")
    t = traj.times
    V = (S + I + R).sum(axis=1)
    checks = []

    dV = np.diff(V)
    slack = atol - dV
    idx = _first_violation(slack)
    checks.append(Certificate("V_nonincreasing", idx is None, float(slack.min() / atol) if dV.size else 1.0,
                              {"first_failing_step": idx}))

    if t.size >= 3:
        rate = -(I * params.gamma_d).sum(axis=1)
        num = np.gradient(V, t, edge_order=2)
        # second-order differences err by about H^2/3 |V'''|, and V''' = rate''
        H = np.gradient(t)
        jerk = np.abs(np.gradient(np.gradient(rate, t, edge_order=2), t, edge_order=2))
        tol = 4.0 * H ** 2 / 3.0 * jerk + 10.0 * atol / H
        err = np.abs(num - rate)
        slack_b = tol - err
        idx = _first_violation(slack_b)
        checks.append(Certificate("dV_matches_deaths", idx is None, float(np.min(slack_b / tol)),
                                  {"first_failing_step": idx, "max_error": float(err.max())}))
    else:
        checks.append(Certificate("dV_matches_deaths", True, 1.0, {"note": "fewer than 3 samples"}))

    for name, arr, sign in (("S_nonincreasing", S, -1.0), ("R_nondecreasing", R, 1.0)):
        d = sign * np.diff(arr, axis=0)
        scale = atol + 1e-13 * N
        slack = (d + scale).min(axis=1) if d.size else np.zeros(0)
        idx = _first_violation(slack)
        detail = {"first_failing_step": idx}
        if idx is not None:
            detail["class"] = int(np.argmin(d[idx] + scale))
        checks.append(Certificate(name, idx is None, float(slack.min() / atol) if slack.size else 1.0, detail))
    return LaSalleReport(checks)


def _pairs_box(rng, lo, hi, m):
    a = rng.uniform(lo, hi, size=(m, lo.size))
    b = rng.uniform(lo, hi, size=(m, lo.size))
    return a, b


def lipschitz_estimate(fn: Callable[[np.ndarray], np.ndarray], lo, hi, samples: int = 10_000,
                       seed: int = 0, boundaries: Sequence[tuple[int, float]] = (),
                       local_scale: float = 1e-3) -> float:
    """Empirical Lipschitz constant of ``fn`` on a box, in the max norm.

    ``fn`` maps an ``(m, d)`` array of points to ``m`` values. The sample mixes
    uniform pairs, close pairs (offset ``local_scale`` of the box width), and
    pairs straddling each ``(axis, value)`` boundary.
    """
    if samples < 2:
        raise ValueError("need at least 2 samples")
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    rng = np.random.default_rng(seed)
    width = hi - lo
    groups = 2 + len(boundaries)
    m = max(1, samples // groups)
    A, B = [], []
    a, b = _pairs_box(rng, lo, hi, m)
    A.append(a)
    B.append(b)
    a = rng.uniform(lo, hi, size=(m, lo.size))
    b = np.clip(a + rng.uniform(-1, 1, size=a.shape) * local_scale * width, lo, hi)
    A.append(a)
    B.append(b)
    for axis, value in boundaries:
        a = rng.uniform(lo, hi, size=(m, lo.size))
        b = a + rng.uniform(-1, 1, size=a.shape) * local_scale * width
        off = rng.uniform(0, local_scale, size=m) * width[axis]
        a[:, axis] = value - off
        b[:, axis] = value + rng.uniform(0, local_scale, size=m) * width[axis]
        A.append(np.clip(a, lo, hi))
        B.append(np.clip(b, lo, hi))
    A = np.vstack(A)
    B = np.vstack(B)
    dist = np.max(np.abs(A - B), axis=1)
    keep = dist > 0
    df = np.abs(np.asarray(fn(A), dtype=float) - np.asarray(fn(B), dtype=float))
    ratio = df[keep] / dist[keep]
    return float(ratio.max()) if ratio.size else 0.0


def _analytic_chain(gains: LinGains, k: int, y0: float, v0: float, times: np.ndarray) -> np.ndarray:
    A = np.array([[0.0, 1.0], [-gains.alpha1[k], -gains.alpha2[k]]])
    return np.array([(expm(A * t) @ np.array([y0, v0]))[0] for t in times])


def linearization_check(traj: Trajectory, params: ModelParams, gains: LinGains,
                        rtol: float = 1e-4) -> Certificate:
    """Compare each ``I_k`` with the solution of ``y'' = -a2 y' - a1 y``.

    The initial data are ``(I_k(0), f_k(x0))``; only samples while the run
    stayed in D are compared (the run stops at the first exit).
    """
    n = params.n
    f0 = lift_f(traj.states[0], params)[:n]
    I = traj.infected
    worst = 0.0
    per_class = []
    for k in range(n):
        ya = _analytic_chain(gains, k, I[0, k], f0[k], traj.times - traj.times[0])
        scale = np.maximum(np.abs(ya), 1e-300)
        mask = np.abs(ya) > 0
        rel = np.abs(I[:, k] - ya)[mask] / scale[mask]
        e = float(rel.max()) if rel.size else 0.0
        per_class.append(e)
        worst = max(worst, e)
    return Certificate("linearization", worst < rtol, 1.0 - worst / rtol,
                       {"max_relative_error": per_class, "t_end": float(traj.times[-1]),
                        "status": traj.status})


def decay_envelope_check(traj: Trajectory, params: ModelParams, gains: LinGains,
                         tol: float = 1e-3) -> Certificate:
    """``I_k(t) <= C_k I_k(0) e^{-mu_k t} (1 + tol)`` on every sample.

    Also reports the envelope on the normal-form state, ``|(I_k, f_k)(t)| <=
    C_k |(I_k, f_k)(0)| e^{-mu_k t}``, which holds for classes starting with no
    infected individuals where the first form cannot.
    """
    C, mu = envelope_constants(gains)
    n = params.n
    t = traj.times - traj.times[0]
    I = traj.infected
    fs = np.array([lift_f(x, params)[:n] for x in traj.states])
    classes = []
    worst = math.inf
    for k in range(n):
        decay = np.exp(-mu[k] * t)
        env = C[k] * I[0, k] * decay * (1 + tol)
        slack = env - I[:, k]
        ok = bool(np.all(slack >= 0))
        norm = np.hypot(I[:, k], fs[:, k])
        zenv = C[k] * norm[0] * decay * (1 + tol)
        zok = bool(np.all(norm <= zenv))
        rel = float(np.min(slack / np.maximum(env, 1.0)))
        worst = min(worst, rel)
        classes.append({"class": k, "C": float(C[k]), "mu": float(mu[k]), "satisfied": ok,
                        "margin": rel, "z_form_satisfied": zok})
    return Certificate("decay_envelope", all(c["satisfied"] for c in classes), worst,
                       {"classes": classes})


def box_exit_check(traj: Trajectory, k: int, s_lo: float, i_lo: float, N_k: float,
                   rtol: float = 1e-9) -> Certificate:
    """``(S_k, I_k)`` stays in ``[0, s_lo] x [0, i_lo]`` up to ``rtol N_k``."""
    tol = rtol * N_k
    S = traj.compartment("s")[:, k]
    I = traj.compartment("i")[:, k]
    over = max(float((S - s_lo).max()), float((I - i_lo).max()))
    return Certificate(f"invariant_box_{k}", over <= tol, (tol - over) / tol)


@dataclass
class PeakTable:
    rows: list[dict]

    @property
    def all_reduced(self) -> bool:
        return all(r["reduced"] for r in self.rows if r["profile"] != "zero")

    @property
    def passed(self) -> bool:
        return self.all_reduced and all(r["tm_ok"] and r["identity_ok"] for r in self.rows)


def _peak_record(traj: Trajectory, params: ModelParams, h: float) -> dict:
    lam = params.lam
    alpha = lam * params.C[0, 0]
    gamma = float(params.gamma[0])
    p = float(params.immun_prob[0])
    S = traj.compartment("s")[:, 0]
    I = traj.compartment("i")[:, 0]
    th = traj.controls[:, 0]
    m = int(np.argmax(I))
    I_max = float(I[m])
    s_hat = gamma / alpha
    # theta is constant within a step, so the integral of theta dI / I is exact per step
    integral = float(np.sum(th[:m] * np.log(I[1:m + 1] / I[:m])))
    S0, I0 = float(S[0]), float(I[0])
    predicted = -s_hat + S0 + s_hat * math.log(s_hat / S0) + I0 - p / alpha * integral
    s_dot = float(-(alpha * I[m] + p * th[m]) * S[m])
    return {
        "peak": I_max,
        "t_m": float(traj.times[m]),
        "S_tm": float(S[m]),
        "tm_error": abs(float(S[m]) - s_hat),
        "tm_tol": 2 * h * abs(s_dot),
        "tm_ok": abs(float(S[m]) - s_hat) <= 2 * h * abs(s_dot),
        "identity_residual": abs(predicted - I_max),
        "identity_ok": abs(predicted - I_max) <= 1e-3 * I_max,
    }


def peak_comparison_n1(params: ModelParams, profiles: dict[str, PiecewiseConstant], i0: float,
                       s0: float, t_end: float = 2000.0, h: float = 0.01) -> PeakTable:
    """Peak of ``I`` with and without vaccination for a single class.

    Raises
    ------
    ValueError
        If ``I(0) >= 1`` or ``S(0) > N (gR + gD) / (lam M)`` fails, or a profile
        is not positive at ``t = 0``.
    """
    if params.n != 1:
        raise ValueError("peak comparison is defined for a single class")
    N = float(params.populations[0])
    s_hat = N * float(params.gamma[0]) / (params.lam * float(params.contact[0, 0]))
    if not i0 >= 1:
        raise ValueError(f"precondition I(0) >= 1 violated: I(0)={i0}")
    if not s0 > s_hat:
        raise ValueError(f"precondition S(0) > N(gR+gD)/(lam M) = {s_hat:.6g} violated: S(0)={s0}")
    if s0 + i0 > N:
        raise ValueError("S(0) + I(0) exceeds N")
    x0 = np.array([s0, i0, N - s0 - i0, 0.0])
    step = StepSpec(h=h)
    zero = PiecewiseConstant(np.zeros(1), np.zeros((1, 1)))
    base = simulate(params, x0, t_end, "schedule", schedule=zero, step=step, stop_at_eradication=True)
    ref = _peak_record(base, params, h)
    rows = [dict(profile="zero", reduced=False, **ref)]
    for name, prof in profiles.items():
        if not (prof.times[0] <= 0.0 and prof.values[0, 0] > 0):
            raise ValueError(f"profile {name!r} must be positive on an initial interval")
        tr = simulate(params, x0, t_end, "schedule", schedule=prof, step=step, stop_at_eradication=True)
        rec = _peak_record(tr, params, h)
        rows.append(dict(profile=name, reduced=rec["peak"] < ref["peak"], **rec))
    return PeakTable(rows)

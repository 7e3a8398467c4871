"""Deterministic integration of the plant and of the plant/observer pair.

The fixed-step RK4 loops live in compiled kernels; this module wraps them,
refines logged event times by bisection and packages the result as a
``Trajectory``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from . import kernels
from .control import LinGains, SatConfig, packed
from .model import ModelParams, StateVec, domain_floors

__all__ = [
    "Event",
    "IntegrationError",
    "PiecewiseConstant",
    "StepSpec",
    "Trajectory",
    "eradication_stop",
    "integrate",
    "simulate",
    "simulate_observer",
]

CONTROLLERS = {
    "none": kernels.MODE_NONE,
    "linearizing": kernels.MODE_LINEARIZING,
    "saturated": kernels.MODE_SATURATED,
    "schedule": kernels.MODE_SCHEDULE,
}
_STATUS = {
    kernels.ST_HORIZON: "horizon",
    kernels.ST_ERADICATED: "eradicated",
    kernels.ST_LEFT_DOMAIN: "left_domain",
    kernels.ST_NONFINITE: "nonfinite",
    kernels.ST_EXCURSION: "excursion",
}
_KIND = {
    kernels.EV_SWITCH_OFF: "switch_off",
    kernels.EV_SWITCH_ON: "switch_on",
    kernels.EV_ERADICATION: "eradication",
    kernels.EV_LEFT_DOMAIN: "left_domain",
}
EVENT_TOL = 1e-6


@dataclass(frozen=True)
class StepSpec:
    """Integration settings.

    ``method`` is ``"rk4"`` (fixed step ``h``) or ``"adaptive"`` (RK45 with
    relative tolerance ``tol``, sampled every ``h``). Every ``stride``-th step
    is recorded.
    """

    h: float = 0.01
    method: str = "rk4"
    tol: float = 1e-8
    stride: int = 1

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"step h={self.h} must be positive")
        if self.method not in ("rk4", "adaptive"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    cls: int | None = None

    @property
    def label(self) -> str:
        return self.kind if self.cls is None else f"{self.kind}_{self.cls}"


@dataclass
class PiecewiseConstant:
    """Open-loop input: ``values[j]`` holds from ``times[j]`` to the next breakpoint."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.ascontiguousarray(self.times, dtype=float)
        self.values = np.ascontiguousarray(np.atleast_2d(self.values), dtype=float)
        if self.values.shape[0] != self.times.shape[0]:
            raise ValueError("one value row per breakpoint")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(self.values < 0):
            raise ValueError("input values must be non-negative")

    def __call__(self, t: float) -> np.ndarray:
        return kernels.schedule_value(float(t), self.times, self.values)


@dataclass
class Trajectory:
    """Sampled solution.

    ``states`` rows are flat ``[S, I, R, D]`` vectors, ``controls`` the input
    applied over the step that starts at each sample, ``estimates`` the
    observer state in z coordinates when one was run.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    estimates: np.ndarray | None = None
    events: list[Event] = field(default_factory=list)
    status: str = "horizon"
    clips: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.times.shape[0])

    @property
    def n(self) -> int:
        return self.states.shape[1] // 4

    def state(self, idx: int) -> StateVec:
        return StateVec.from_array(self.states[idx], float(self.times[idx]))

    def compartment(self, name: str) -> np.ndarray:
        j = "sird".index(name.lower())
        n = self.n
        return self.states[:, j * n:(j + 1) * n]

    @property
    def infected(self) -> np.ndarray:
        return self.compartment("i")

    def first_event(self, kind: str) -> Event | None:
        return next((e for e in self.events if e.kind == kind), None)

    @property
    def eradication_time(self) -> float | None:
        ev = self.first_event("eradication")
        return None if ev is None else ev.time


class IntegrationError(RuntimeError):
    """Integration aborted; ``partial`` holds the samples computed so far."""

    def __init__(self, message: str, time: float, component: str | None = None,
                 partial: Trajectory | None = None):
        super().__init__(message)
        self.time = time
        self.component = component
        self.partial = partial


def eradication_stop(state) -> bool:
    """True once fewer than one infected individual remains in total."""
    if isinstance(state, StateVec):
        total = float(np.sum(state.i))
    else:
        x = np.asarray(state, dtype=float)
        total = float(np.sum(x[x.shape[0] // 4:x.shape[0] // 2]))
    return total < 1.0


def _component_name(j: int, n: int) -> str:
    return f"{'SIRD'[j // n]}[{j % n}]"


def _nsteps(t0: float, t_end: float, h: float) -> int:
    return max(0, int(math.ceil((t_end - t0) / h - 1e-9)))


def integrate(rhs: Callable[[float, np.ndarray], np.ndarray], x0, t_end: float,
              step: StepSpec = StepSpec(), t0: float = 0.0) -> Trajectory:
    """Integrate ``x' = rhs(t, x)`` from ``t0`` to ``t_end``.

    Raises
    ------
    IntegrationError
        On a non-finite derivative, naming the time and component.
    """
    x = np.array(x0, dtype=float)

    def f(t, y):
        d = np.asarray(rhs(t, y), dtype=float)
        bad = np.flatnonzero(~np.isfinite(d))
        if bad.size:
            raise IntegrationError(f"non-finite derivative at t={t}, component {bad[0]}",
                                   float(t), str(int(bad[0])))
        return d

    nsteps = _nsteps(t0, t_end, step.h)
    grid = t0 + step.h * np.arange(nsteps + 1)
    keep = np.zeros(nsteps + 1, dtype=bool)
    keep[::step.stride] = True
    keep[-1] = True
    if step.method == "adaptive":
        sol = solve_ivp(f, (t0, grid[-1]), x, method="RK45", t_eval=grid[keep],
                        rtol=step.tol, atol=step.tol * max(1.0, float(np.max(np.abs(x)))))
        states = sol.y.T.copy()
        times = sol.t.copy()
    else:
        h = step.h
        out = [x.copy()]
        for i in range(nsteps):
            t = grid[i]
            k1 = f(t, x)
            k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
            k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
            k4 = f(t + h, x + h * k3)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if keep[i + 1]:
                out.append(x.copy())
        states = np.array(out)
        times = grid[keep]
    return Trajectory(times, states, np.zeros((times.shape[0], 0)),
                      meta={"method": step.method, "h": step.h})


def _bisect(flipped: Callable[[float], bool], h: float) -> float:
    """Smallest sub-step in ``(0, h]`` after which the predicate has flipped."""
    lo, hi = 0.0, h
    if not flipped(hi):
        return hi
    while hi - lo > EVENT_TOL:
        mid = 0.5 * (lo + hi)
        if flipped(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _plant_predicate(kind: str, cls, cp, mp, floors):
    n = mp[1].shape[0]
    if kind in ("switch_on", "switch_off"):
        return lambda x: bool(x[cls] >= cp[3][cls] and x[n + cls] >= cp[5][cls])
    if kind == "eradication":
        return lambda x: bool(x[n:2 * n].sum() < 1.0)
    return lambda x: bool(kernels.in_domain(x, mp[1], floors[0], floors[1]))


def _refine(kind, cls, t, x, h, advance, pred):
    p0 = pred(x)
    return t + _bisect(lambda tau: pred(advance(x, t, tau)) != p0, h)


def _events(raw, h, advance, cp, mp, floors, refine, width):
    ev_t, ev_kind, ev_cls, ev_x = raw
    out = []
    for t, kd, c, X in zip(ev_t, ev_kind, ev_cls, ev_x):
        kind = _KIND[int(kd)]
        cls = None if c < 0 else int(c)
        if refine:
            pred = _plant_predicate(kind, cls, cp, mp, floors)
            t = _refine(kind, cls, float(t), X, h, advance,
                        lambda Y, pred=pred: pred(Y[:width]))
        else:
            t = float(t) + h
        out.append(Event(float(t), kind, cls))
    out.sort(key=lambda e: e.time)
    return out


def _resolve_controller(controller, gains, sat, schedule, params):
    if controller not in CONTROLLERS:
        raise ValueError(f"unknown controller {controller!r}; expected one of {sorted(CONTROLLERS)}")
    if controller in ("linearizing", "saturated") and gains is None:
        raise ValueError(f"controller {controller!r} needs gains")
    if controller == "saturated" and sat is None:
        raise ValueError("controller 'saturated' needs a SatConfig")
    if controller == "schedule" and schedule is None:
        raise ValueError("controller 'schedule' needs a PiecewiseConstant input")
    n = params.n
    if gains is None:
        gains = LinGains(np.ones(n), np.ones(n))
    cp = packed(gains, sat if controller == "saturated" else None, params)
    if schedule is None:
        schedule = PiecewiseConstant(np.zeros(1), np.zeros((1, n)))
    return CONTROLLERS[controller], cp, schedule


def simulate(params: ModelParams, x0, t_end: float, controller: str = "none",
             gains: LinGains | None = None, sat: SatConfig | None = None,
             schedule: PiecewiseConstant | None = None, step: StepSpec = StepSpec(),
             stop_at_eradication: bool = True, track_switches: bool | None = None,
             clip_rtol: float = 1e-9, floors: tuple[float, float] | None = None,
             refine_events: bool = True, event_cap: int = 100_000) -> Trajectory:
    """Closed-loop run of the SIRD plant under one of the feedback laws.

    The linearizing law stops the run at the first step that would leave D
    (status ``"left_domain"``) since the law is undefined beyond it.

    Raises
    ------
    IntegrationError
        On non-finite values or an excursion out of B beyond ``clip_rtol * N_k``.
    """
    mode, cp, sched = _resolve_controller(controller, gains, sat, schedule, params)
    mp = params.packed()
    x0 = x0.as_array() if isinstance(x0, StateVec) else np.ascontiguousarray(x0, dtype=float)
    if floors is None:
        floors = domain_floors(params)
    if track_switches is None:
        track_switches = controller == "saturated"
    if step.method == "adaptive":
        return _simulate_adaptive(params, x0, t_end, mode, cp, sched, step,
                                  stop_at_eradication, floors, controller)
    nsteps = _nsteps(0.0, t_end, step.h)
    res = kernels.run_plant(x0, 0.0, step.h, nsteps, step.stride, mode, mp, cp,
                            sched.times, sched.values, stop_at_eradication, clip_rtol,
                            floors[0], floors[1], track_switches, event_cap)
    ts, xs, ths, status, bad, nclip = res[:6]
    ev_raw = res[6:10]
    overflow = bool(res[10])

    def advance(x, t, tau):
        return kernels.plant_step(x, t, tau, mode, mp, cp, sched.times, sched.values)

    events = _events(ev_raw, step.h, advance, cp, mp, floors, refine_events, 4 * params.n)
    traj = Trajectory(ts, xs, ths, None, events, _STATUS[int(status)], int(nclip),
                      meta={"controller": controller, "h": step.h, "stride": step.stride,
                            "method": "rk4", "switches_tracked": bool(track_switches),
                            "event_overflow": overflow})
    _raise_on_abort(traj, int(status), int(bad), params.n)
    return traj


def _raise_on_abort(traj, status, bad, n):
    if status == kernels.ST_NONFINITE:
        j = -2 - bad
        name = _component_name(j, n) if j < 4 * n else f"zhat[{j - 4 * n}]"
        raise IntegrationError(f"non-finite state at t={traj.times[-1]:.6g} in {name}",
                               float(traj.times[-1]), name, traj)
    if status == kernels.ST_EXCURSION:
        name = _component_name(bad, n)
        raise IntegrationError(f"state left B beyond tolerance at t={traj.times[-1]:.6g} in {name}",
                               float(traj.times[-1]), name, traj)


def _simulate_adaptive(params, x0, t_end, mode, cp, sched, step, stop_erad, floors, controller):
    mp = params.packed()
    n = params.n

    def rhs(t, x):
        return kernels.sird_rhs(x, kernels.control(x, t, mode, mp, cp, sched.times, sched.values), mp)

    def erad(t, x):
        return x[n:2 * n].sum() - 1.0

    erad.terminal = True
    erad.direction = -1

    def left(t, x):
        a = kernels.force(x, mp[1])
        return min(float(np.min(x[:n])) - floors[0], float(np.min(a)) - floors[1])

    left.terminal = True
    left.direction = -1
    evs = []
    if stop_erad:
        evs.append(erad)
    if mode == kernels.MODE_LINEARIZING:
        evs.append(left)
    nsteps = _nsteps(0.0, t_end, step.h)
    grid = step.h * np.arange(nsteps + 1)
    grid = grid[::step.stride]
    sol = solve_ivp(rhs, (0.0, step.h * nsteps), x0, method="RK45", t_eval=grid,
                    rtol=step.tol, atol=step.tol * float(params.populations.min()),
                    events=evs or None)
    ts, xs = sol.t, sol.y.T
    events = []
    status = "horizon"
    for idx, kind in enumerate(["eradication"] * stop_erad
                               + ["left_domain"] * (mode == kernels.MODE_LINEARIZING)):
        if sol.t_events[idx].size:
            te = float(sol.t_events[idx][0])
            events.append(Event(te, kind))
            status = "eradicated" if kind == "eradication" else "left_domain"
            ts = np.append(ts, te)
            xs = np.vstack([xs, sol.y_events[idx][0]])
    ths = np.array([kernels.control(x, t, mode, mp, cp, sched.times, sched.values)
                    for t, x in zip(ts, xs)]) if ts.size else np.zeros((0, n))
    return Trajectory(ts, xs, ths, None, events, status, 0,
                      meta={"controller": controller, "h": step.h, "stride": step.stride,
                            "method": "adaptive", "switches_tracked": False})


def simulate_observer(params: ModelParams, x0, zhat0, t_end: float, gains: LinGains,
                      sat: SatConfig, obs, step: StepSpec = StepSpec(h=0.001, stride=10),
                      stop_at_eradication: bool = True, track_switches: bool = True,
                      clip_rtol: float = 1e-9, refine_events: bool = True,
                      event_cap: int = 100_000) -> Trajectory:
    """Plant driven by the saturated law evaluated on the high-gain estimate.

    The plant runs in (S, I, R, D); the observer runs in z and sees ``y = D``.
    The default step resolves observer poles down to ``-3 / eps`` for
    ``eps >= 0.01``.
    """
    if step.method != "rk4":
        raise ValueError("observer runs support the fixed-step method only")
    mp = params.packed()
    cp = packed(gains, sat, params)
    op = obs.packed(params)
    x0 = x0.as_array() if isinstance(x0, StateVec) else np.ascontiguousarray(x0, dtype=float)
    X0 = np.concatenate([x0, np.ascontiguousarray(zhat0, dtype=float)])
    nsteps = _nsteps(0.0, t_end, step.h)
    res = kernels.run_coupled(X0, 0.0, step.h, nsteps, step.stride, mp, cp, op,
                              stop_at_eradication, clip_rtol, track_switches, event_cap)
    ts, Xs, us, status, bad, nclip = res[:6]
    n = params.n

    def advance(X, t, tau):
        return kernels.coupled_step(X, tau, mp, cp, op)

    events = _events(res[6:10], step.h, advance, cp, mp, domain_floors(params),
                     refine_events, 4 * n)
    traj = Trajectory(ts, Xs[:, :4 * n].copy(), us, Xs[:, 4 * n:].copy(), events,
                      _STATUS[int(status)], int(nclip),
                      meta={"controller": "observer", "h": step.h, "stride": step.stride,
                            "method": "rk4", "switches_tracked": bool(track_switches),
                            "event_overflow": bool(res[10]), "epsilon": obs.epsilon})
    _raise_on_abort(traj, int(status), int(bad), n)
    return traj

"""Command line entry point: ``epictrl run|compare|verify|gains``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._jit import backend
from .analysis import Certificate, conservation_check, invariance_check, summarize
from .control import count_switches, lipschitz_constants
from .integrator import IntegrationError, StepSpec, Trajectory, simulate, simulate_observer
from .observer import epsilon_star, phi_lipschitz_bound, solve_lyapunov
from .report import write_events, write_plots, write_summary, write_trajectory, _clean
from .scenario import CONTROLLER_TYPES, Scenario, ScenarioError, bundled_path, load_scenario

SUITE_NAMES = ("invariance", "lipschitz", "observer", "linearization", "lemma", "peak",
               "switches", "ordering", "all")


def _load(arg: str | None) -> Scenario:
    if arg is None or arg == "bundled":
        return load_scenario(bundled_path())
    path = Path(arg)
    if not path.exists():
        try:
            return load_scenario(bundled_path(arg))
        except ScenarioError:
            raise ScenarioError(f"scenario file not found: {arg}") from None
    return load_scenario(path)


def simulate_scenario(scn: Scenario, controller: str | None = None,
                      horizon: float | None = None) -> Trajectory:
    """Run a scenario under its own controller or an override."""
    ctrl = controller or scn.controller
    t_end = scn.horizon if horizon is None else horizon
    p = scn.params
    if ctrl == "observer":
        stride = max(1, int(round(scn.step / scn.observer_step)))
        return simulate_observer(p, scn.x0, scn.zhat0(), t_end, scn.gains, scn.sat, scn.observer,
                                 StepSpec(h=scn.observer_step, stride=stride))
    return simulate(p, scn.x0, t_end, ctrl, scn.gains, scn.sat if ctrl == "saturated" else None,
                    step=StepSpec(h=scn.step))


def run_certificates(traj: Trajectory, scn: Scenario, controller: str) -> list[Certificate]:
    certs = [invariance_check(traj, scn.params), conservation_check(traj, scn.params)]
    if controller == "linearizing":
        inside = traj.status != "left_domain"
        certs.append(Certificate("stays_in_D", inside, 0.0 if inside else -1.0,
                                 {"status": traj.status, "t_end": float(traj.times[-1])}))
    if controller in ("saturated", "observer"):
        m, _ = count_switches(traj, scn.sat)
        ok = not traj.meta.get("event_overflow", False)
        certs.append(Certificate("finite_switches", ok, float(m), {"m": m}))
    return certs


def _outdir(args, scn: Scenario) -> Path:
    out = Path(args.out) if args.out else (scn.output or Path("runs") / scn.name)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    scn = _load(args.scenario)
    ctrl = args.controller or scn.controller
    out = _outdir(args, scn)
    labels = scn.params.labels
    aborted = None
    try:
        traj = simulate_scenario(scn, ctrl, args.horizon)
    except IntegrationError as exc:
        aborted = {"message": str(exc), "time": exc.time, "component": exc.component}
        traj = exc.partial
    payload = {"scenario": scn.name, "controller": ctrl, "backend": backend(),
               "aborted": aborted is not None}
    if traj is None or len(traj) == 0:
        payload["abort"] = aborted
        write_summary(out / "summary.json", payload)
        print(f"aborted: {aborted['message']}", file=sys.stderr)
        return 2
    write_trajectory(out / "trajectory.csv", traj, labels)
    write_events(out / "events.csv", traj, labels)
    summ = summarize(traj, scn.params, scn.gains)
    payload["summary"] = summ.to_dict()
    if aborted is not None:
        payload["abort"] = aborted
        write_summary(out / "summary.json", payload)
        print(f"aborted at t={aborted['time']:.6g}: {aborted['message']}; partial output in {out}",
              file=sys.stderr)
        return 2
    certs = run_certificates(traj, scn, ctrl)
    payload["certificates"] = [dict(name=c.name, passed=c.passed, margin=c.margin, detail=c.detail)
                               for c in certs]
    if ctrl == "observer":
        payload["epsilon"] = scn.observer.epsilon
    write_summary(out / "summary.json", payload)
    if not args.no_plots:
        write_plots(out, traj, scn.params)
    print(f"{scn.name} / {ctrl}: status {traj.status}, t_end {traj.times[-1]:.6g} d")
    print(f"  peak infected proportion {summ.peak_total_infected:.6g} at t={summ.peak_time:.6g} d")
    if summ.eradication_time is not None:
        print(f"  eradication at t={summ.eradication_time:.6g} d")
    for c in certs:
        print("  " + c.line())
    print(f"  outputs in {out}")
    return 0 if all(c.passed for c in certs) else 1


def cmd_compare(args) -> int:
    scn = _load(args.scenario)
    ctrls = [c.strip() for c in args.controllers.split(",") if c.strip()]
    bad = [c for c in ctrls if c not in CONTROLLER_TYPES]
    if bad:
        raise ScenarioError(f"unknown controllers {bad}; choose from {CONTROLLER_TYPES}")
    rows = []
    for c in ctrls:
        try:
            tr = simulate_scenario(scn, c, args.horizon)
        except IntegrationError as exc:
            rows.append({"controller": c, "status": f"aborted: {exc}"})
            continue
        s = summarize(tr, scn.params)
        rows.append({"controller": c, "status": s.status, "peak": s.peak_total_infected,
                     "peak_time": s.peak_time, "eradication": s.eradication_time,
                     "deaths": float(s.final_dead.sum()), "switches": s.switch_count})
    ranked = sorted((r for r in rows if "peak" in r), key=lambda r: r["peak"])
    if args.json:
        print(json.dumps(_clean({"rows": rows, "peak_order": [r["controller"] for r in ranked]}), indent=2))
        return 0
    print(f"{'controller':<12} {'status':<12} {'peak':>12} {'t_peak':>9} {'eradication':>12} {'deaths':>10}")
    for r in rows:
        if "peak" not in r:
            print(f"{r['controller']:<12} {r['status']}")
            continue
        erad = "-" if r["eradication"] is None else f"{r['eradication']:.2f}"
        print(f"{r['controller']:<12} {r['status']:<12} {r['peak']:>12.6g} {r['peak_time']:>9.2f} "
              f"{erad:>12} {r['deaths']:>10.4g}")
    print("peak order: " + " < ".join(r["controller"] for r in ranked))
    return 0


def cmd_verify(args) -> int:
    from .certify import run_suite

    scn = _load(args.scenario)
    certs = run_suite(args.suite, scn)
    if args.json:
        print(json.dumps(_clean([dict(name=c.name, passed=c.passed, margin=c.margin, detail=c.detail)
                                 for c in certs]), indent=2))
    else:
        for c in certs:
            print(c.line())
    return 0 if all(c.passed for c in certs) else 1


def cmd_gains(args) -> int:
    scn = _load(args.scenario)
    p = scn.params
    g = scn.gains
    ly = solve_lyapunov(scn.observer)
    lc = lipschitz_constants(p, g, scn.sat)
    m = phi_lipschitz_bound(p, scn.sat.theta_sup)
    m_max = float(m.max()) if np.all(np.isfinite(m)) else math.inf
    info = {
        "labels": p.labels,
        "alpha1": g.alpha1, "alpha2": g.alpha2, "margin": scn.margin,
        "beta": scn.observer.beta,
        "P_norm_inf": ly.norm_inf,
        "epsilon_star": epsilon_star(ly),
        "epsilon_star_with_M": epsilon_star(ly, m_max) if math.isfinite(m_max) else 0.0,
        "phi_lipschitz_M": m,
        "epsilon": scn.observer.epsilon,
        "thresholds": {"s_lo": scn.sat.s_lo, "s_hi": scn.sat.s_hi,
                       "i_lo": scn.sat.i_lo, "i_hi": scn.sat.i_hi,
                       "theta_sup": scn.sat.theta_sup, "invariant_ok": scn.sat.invariant_ok},
        "lipschitz": lc.as_dict(),
    }
    if args.json:
        print(json.dumps(_clean(info), indent=2))
        return 0
    np.set_printoptions(precision=6, suppress=False, linewidth=110)
    print(f"classes      {p.labels}")
    print(f"alpha1       {g.alpha1}")
    print(f"alpha2       {g.alpha2}")
    print(f"beta         {scn.observer.beta[0]} (every class)")
    print(f"||P||_inf    {ly.norm_inf:.6g}")
    print(f"eps*         {info['epsilon_star']:.6g}   with M: {info['epsilon_star_with_M']:.6g}"
          f"   in use: {scn.observer.epsilon:.6g}")
    print(f"M (phi)      {m}")
    print(f"S~  / S~~    {scn.sat.s_lo} / {scn.sat.s_hi}")
    print(f"I~  / I~~    {scn.sat.i_lo} / {scn.sat.i_hi}")
    print(f"theta_sup    {scn.sat.theta_sup}")
    for key in ("C", "K", "L", "L_max", "L1", "L2", "L3", "L4", "total", "total_max"):
        print(f"{key:<12} {getattr(lc, key)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="epictrl", description=__doc__)
    ap.add_argument("--version", action="version", version=f"epictrl {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def scenario_arg(p):
        p.add_argument("scenario", nargs="?", default=None,
                       help="scenario TOML file or bundled name (default: the bundled scenario)")

    p = sub.add_parser("run", help="simulate one controller and write outputs")
    scenario_arg(p)
    p.add_argument("--controller", choices=CONTROLLER_TYPES)
    p.add_argument("--out", help="output directory")
    p.add_argument("--horizon", type=float)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="peak table across controllers")
    scenario_arg(p)
    p.add_argument("--controllers", default="none,linearizing,saturated,observer")
    p.add_argument("--horizon", type=float)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="run a property suite and report margins")
    scenario_arg(p)
    p.add_argument("--suite", choices=SUITE_NAMES, default="all")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gains", help="print gains, eps* and the Lipschitz constants")
    scenario_arg(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_gains)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is made at
import time from ``EPICTRL_DISABLE_JIT``. Reported times are the best of
``--repeat`` runs after one warm-up call, which also absorbs compilation.

    python benchmarks/bench_jit.py [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
import epictrl as e
from epictrl import kernels
from epictrl.control import packed
from epictrl.integrator import StepSpec

repeat = int(sys.argv[1])
s = e.load_scenario(e.bundled_path())
p = s.params
cp, mp = packed(s.gains, s.sat, p), p.packed()
xs = np.random.default_rng(0).uniform(0, 1, size=(20000, 4 * p.n)) * np.tile(p.populations, 4)

cases = {
    "saturated_run_400d": lambda: e.simulate(p, s.x0, 400.0, "saturated", s.gains, s.sat),
    "open_loop_run_400d": lambda: e.simulate(p, s.x0, 400.0, "none", stop_at_eradication=False),
    "observer_run_20d": lambda: e.simulate_observer(p, s.x0, s.zhat0(), 20.0, s.gains, s.sat,
                                                    s.observer, StepSpec(h=0.001, stride=10)),
    "theta_sat_batch_20k": lambda: kernels.theta_sat_batch(xs, cp, mp),
}


def timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


out = {"backend": e.backend()}
for name, fn in cases.items():
    first = timed(fn)
    out[name] = {"first_call": first, "best": min(timed(fn) for _ in range(repeat))}
print(json.dumps(out))
"""


def run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("EPICTRL_DISABLE_JIT", None)
    if disable:
        env["EPICTRL_DISABLE_JIT"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)
    jit, ref = run(False, args.repeat), run(True, args.repeat)
    if args.json:
        print(json.dumps({"jit": jit, "numpy": ref}, indent=2))
        return 0
    print(f"{'case':<22} {jit['backend']:>14} {ref['backend']:>12} {'speedup':>9}   first call (jit)")
    for name in (k for k in jit if k != "backend"):
        a, b = jit[name]["best"], ref[name]["best"]
        print(f"{name:<22} {a:>12.4f} s {b:>10.4f} s {b / a:>8.1f}x   {jit[name]['first_call']:.2f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())

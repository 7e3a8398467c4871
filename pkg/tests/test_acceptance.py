"""Acceptance criteria 1-13 on the bundled scenario.

Each test prints one ``CRITERION n PASS|FAIL`` line; the lines are repeated
in the pytest terminal summary. Run as a script to print them directly:
``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE_LINES  # noqa: E402
from epictrl import bundled_path, load_scenario  # noqa: E402
from epictrl import certify  # noqa: E402


@functools.lru_cache(maxsize=None)
def scenario():
    return load_scenario(bundled_path())


@functools.lru_cache(maxsize=None)
def suite(name: str) -> dict:
    return {c.name: c for c in certify.SUITES[name](scenario())}


def report(num: int, title: str, passed: bool, info: str) -> bool:
    line = f"CRITERION {num:>2} {'PASS' if passed else 'FAIL'}  {title}: {info}"
    print(line)
    if line not in ACCEPTANCE_LINES:
        ACCEPTANCE_LINES.append(line)
    return passed


def check_1():
    c = suite("invariance")["invariance"]
    ok = c.passed and c.detail["time_ok"]
    return report(1, "invariance of B", ok,
                  f"{c.detail['runs']} runs in {c.detail['seconds']:.1f} s, tol 1e-6 N_k, margin {c.margin:.3g}")


def check_2():
    c = suite("invariance")["conservation"]
    return report(2, "conservation", c.passed,
                  f"max relative drift {c.detail['max_relative_drift']:.2e} (< 1e-8)")


def check_3():
    c = suite("invariance")["lasalle"]
    return report(3, "LaSalle facts", c.passed,
                  f"failing runs {c.detail['failing_runs']}, min margin {c.margin:.3g}")


def check_4():
    c = suite("linearization")["linearization"]
    return report(4, "linearized chains", c.passed,
                  f"max relative error {max(c.detail['max_relative_error']):.2e} (< 1e-4) "
                  f"while in D, t <= {c.detail['t_end']:.3g} d")


def check_5():
    c = suite("linearization")["nonnegative_input"]
    return report(5, "non-negative input", c.passed,
                  f"min theta {c.detail['min_theta']:.4g} over {c.detail['samples']} states")


def check_6():
    c = suite("linearization")["decay_envelope"]
    bad = [d["class"] for d in c.detail["classes"] if not d["satisfied"]]
    zok = all(d["z_form_satisfied"] for d in c.detail["classes"])
    return report(6, "exponential envelope", c.passed,
                  f"violated for classes {bad} (I_k(0)=0 there); normal-form envelope holds: {zok}")


def check_7():
    s = suite("ordering")
    pk, er = s["peak_ordering"], s["eradication_ordering"]
    peaks = pk.detail["peaks"]
    erad = er.detail["eradication"]
    return report(7, "peak and eradication ordering", pk.passed and er.passed,
                  f"peaks lin {peaks['linearizing']:.3g} < sat {peaks['saturated']:.3g} < open "
                  f"{peaks['none']:.3g}: {pk.passed}; eradication lin {erad['linearizing']} "
                  f"(status {er.detail['status']['linearizing']}) vs open {erad['none']:.4g}: {er.passed}")


def check_8():
    c = suite("peak")["peak_reduction_n1"]
    d = c.detail
    return report(8, "single-class peak reduction", c.passed,
                  f"{d['cells']} cells x {len(d['profiles'])} profiles, reduced {d['reduced']}, "
                  f"S(t_m) {d['tm_ok']}, identity ratio {d['worst_identity_ratio']:.3g}")


def check_9():
    c = suite("lemma")["invariant_box"]
    return report(9, "invariant box", c.passed, f"{c.detail['starts']} starts, margin {c.margin:.3g}")


def check_10():
    c = suite("switches")["finite_switches"]
    d = c.detail
    return report(10, "finite switching", c.passed,
                  f"m = {d['m']}, eradication {d['eradication']:.4g} d, reactivated classes "
                  f"{d['reactivated_classes']}")


def check_11():
    c = suite("lipschitz")["lipschitz"]
    return report(11, "Lipschitz certificates", c.passed,
                  f"{c.detail['pairs']} pairs per function and class, min relative slack {c.margin:.3g}")


def check_12():
    s = suite("observer")
    e, v, p = s["observer_error_5d"], s["observer_V_decrease"], s["observer_peak_ordering"]
    ok = e.passed and v.passed and p.passed and e.detail["epsilon_ok"]
    return report(12, "high-gain observer", ok,
                  f"|z - zhat| at 5 d {e.detail['error']:.2e} (<= {e.detail['tol']:.3g}), "
                  f"eps {e.detail['epsilon']} <= eps* {e.detail['epsilon_star']:.3g}, V rise "
                  f"{v.detail['max_increase_after_transient']:.2e}, peaks sat {p.detail['saturated']:.4g} "
                  f"<= obs {p.detail['observer']:.4g} < open {p.detail['open_loop']:.4g}")


def check_13():
    c = suite("observer")["lyapunov_solve"]
    return report(13, "Lyapunov solve", c.passed,
                  f"residual {c.detail['residual']:.1e}, quadrature gap {c.detail['quadrature_gap']:.1e}")


def test_criterion_01_invariance():
    assert check_1()


def test_criterion_02_conservation():
    assert check_2()


def test_criterion_03_lasalle():
    assert check_3()


def test_criterion_04_linearization():
    assert check_4()


def test_criterion_05_nonnegative_input():
    assert check_5()


def test_criterion_06_exponential_envelope():
    assert check_6()


def test_criterion_07_ordering():
    assert check_7()


def test_criterion_08_peak_reduction():
    assert check_8()


def test_criterion_09_invariant_box():
    assert check_9()


def test_criterion_10_finite_switching():
    assert check_10()


def test_criterion_11_lipschitz():
    assert check_11()


def test_criterion_12_observer():
    assert check_12()


def test_criterion_13_lyapunov():
    assert check_13()


if __name__ == "__main__":
    results = [globals()[f"check_{i}"]() for i in range(1, 14)]
    sys.exit(0 if all(results) else 1)

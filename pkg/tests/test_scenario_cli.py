import json
import shutil

import numpy as np
import pytest

from epictrl import cli
from epictrl.integrator import IntegrationError, StepSpec, simulate
from epictrl.scenario import ScenarioError, bundled_path, load_scenario, read_contact_csv


@pytest.fixture
def scen_dir(tmp_path):
    src = bundled_path().parent
    dst = tmp_path / "scn"
    shutil.copytree(src, dst)
    return dst


def edit(path, old, new):
    text = path.read_text()
    assert old in text
    path.write_text(text.replace(old, new))


def test_bundled_values(scenario):
    p = scenario.params
    assert p.n == 6 and p.lam == 0.5
    np.testing.assert_array_equal(p.gamma_r, [0.3, 0.3, 0.3, 0.1, 0.1, 0.1])
    np.testing.assert_array_equal(p.gamma_d, [0.001, 0.01, 0.01, 0.04, 0.05, 0.15])
    np.testing.assert_array_equal(p.immun_prob, np.ones(6))
    np.testing.assert_array_equal(scenario.i0, [0, 0, 20, 30, 0, 0])
    assert scenario.sat.theta_sup == 0.017
    np.testing.assert_array_equal(scenario.sat.i_lo, np.full(6, 20.0))
    assert scenario.sat.invariant_ok.all()


def test_contact_row_count_mismatch(scen_dir):
    lines = (scen_dir / "contact.csv").read_text().splitlines()
    (scen_dir / "contact.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ScenarioError, match="rows"):
        load_scenario(scen_dir / "scenario.toml")


def test_missing_theta_sup_defaults(scen_dir):
    edit(scen_dir / "scenario.toml", "theta_sup = 0.017\n", "")
    assert load_scenario(scen_dir / "scenario.toml").sat.theta_sup == 0.017


def test_toml_syntax_error_has_line(scen_dir):
    edit(scen_dir / "scenario.toml", "lambda = 0.5", "lambda = = 0.5")
    with pytest.raises(ScenarioError, match="line 11"):
        load_scenario(scen_dir / "scenario.toml")


def test_csv_bad_number_has_line(scen_dir):
    edit(scen_dir / "populations.csv", "75000", "75k")
    with pytest.raises(ScenarioError, match="populations.csv:6"):
        load_scenario(scen_dir / "scenario.toml")


def test_label_mismatch(scen_dir):
    edit(scen_dir / "populations.csv", "90+,6000", "90plus,6000")
    with pytest.raises(ScenarioError, match="labels differ"):
        load_scenario(scen_dir / "scenario.toml")


def test_invalid_parameter_reported(scen_dir):
    edit(scen_dir / "scenario.toml", "lambda = 0.5", "lambda = 1.5")
    with pytest.raises(ScenarioError, match="lambda=1.5"):
        load_scenario(scen_dir / "scenario.toml")


def test_headerless_contact(tmp_path):
    f = tmp_path / "c.csv"
    f.write_text("a,b\n1,2\n3,4\n")
    labels, M = read_contact_csv(f)
    assert labels == ["a", "b"] and M.tolist() == [[1, 2], [3, 4]]


def test_run_open_loop_writes_outputs(tmp_path, scenario):
    out = tmp_path / "none"
    rc = cli.main(["run", "--controller", "none", "--out", str(out), "--horizon", "30", "--no-plots"])
    assert rc == 0
    data = np.genfromtxt(out / "trajectory.csv", delimiter=",", names=True)
    theta_cols = [c for c in data.dtype.names if c.startswith("theta_")]
    assert len(theta_cols) == 6 and all(np.all(data[c] == 0) for c in theta_cols)
    raw = np.loadtxt(out / "trajectory.csv", delimiter=",", skiprows=1)
    ref = simulate(scenario.params, scenario.x0, 30.0, "none", step=StepSpec(h=scenario.step))
    np.testing.assert_array_equal(raw[:, 1:25], ref.states)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["aborted"] is False and summary["controller"] == "none"


def test_run_observer_has_estimates(tmp_path):
    out = tmp_path / "obs"
    rc = cli.main(["run", "--controller", "observer", "--out", str(out), "--horizon", "5"])
    assert rc == 0
    header = (out / "trajectory.csv").read_text().splitlines()[0].split(",")
    assert sum(h.startswith("z2hat_") for h in header) == 6
    for png in ("infected.png", "control.png", "vaccinated.png"):
        assert (out / png).stat().st_size > 0


def test_run_abort_writes_partial(tmp_path, monkeypatch, scenario):
    partial = simulate(scenario.params, scenario.x0, 2.0, "none")

    def boom(*a, **k):
        raise IntegrationError("non-finite state at t=2 in I[3]", 2.0, "I[3]", partial)

    monkeypatch.setattr(cli, "simulate_scenario", boom)
    out = tmp_path / "abort"
    assert cli.main(["run", "--out", str(out), "--no-plots"]) != 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["aborted"] is True and summary["abort"]["component"] == "I[3]"
    assert (out / "trajectory.csv").exists()


def test_run_linearizing_reports_domain_exit(tmp_path):
    rc = cli.main(["run", "--controller", "linearizing", "--out", str(tmp_path / "lin"), "--no-plots"])
    assert rc == 1


def test_compare_orders_peaks(capsys):
    assert cli.main(["compare", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["peak_order"] == ["linearizing", "saturated", "observer", "none"]


def test_compare_table(capsys):
    assert cli.main(["compare", "--controllers", "none,saturated"]) == 0
    text = capsys.readouterr().out
    assert "peak order: saturated < none" in text


def test_gains_json(capsys):
    assert cli.main(["gains", "--json"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["epsilon"] == 0.01
    assert info["epsilon_star"] == pytest.approx(1 / 5.8)
    assert len(info["lipschitz"]["total_max"]) == 6


def test_verify_invariance_suite(capsys):
    assert cli.main(["verify", "--suite", "invariance"]) == 0
    text = capsys.readouterr().out
    assert text.count("PASS") == 3


def test_verify_lipschitz_suite(capsys):
    assert cli.main(["verify", "--suite", "lipschitz"]) == 0


def test_verify_flags_large_epsilon(scen_dir, capsys):
    edit(scen_dir / "scenario.toml", 'epsilon = "auto"', "epsilon = 0.3448")
    assert cli.main(["verify", str(scen_dir / "scenario.toml"), "--suite", "observer", "--json"]) in (0, 1)
    certs = {c["name"]: c for c in json.loads(capsys.readouterr().out)}
    detail = certs["observer_error_5d"]["detail"]
    assert detail["epsilon"] > detail["epsilon_star"] and detail["epsilon_ok"] is False


def test_unknown_scenario_exit_code(capsys):
    assert cli.main(["gains", "no/such/file.toml"]) == 2
    assert "not found" in capsys.readouterr().err

"""Scenario files.

A scenario is a TOML document with the sections ``[scenario]``, ``[model]``,
``[initial]``, ``[controller]``, ``[saturation]`` and ``[observer]``; see
``docs/scenario_format.md``. The contact matrix and the populations live in
CSV files referenced relative to the scenario file.
"""

from __future__ import annotations

import csv
import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .control import LinGains, SatConfig, invariant_thresholds, select_gains
from .model import ModelParams, ParamValidationError, StateVec, validate_params
from .observer import ObserverConfig, epsilon_star, solve_lyapunov, to_z

__all__ = ["Scenario", "ScenarioError", "bundled_path", "load_scenario", "read_contact_csv",
           "read_population_csv"]

CONTROLLER_TYPES = ("none", "linearizing", "saturated", "observer")
DEFAULT_THETA_SUP = 0.017


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario input."""


@dataclass
class Scenario:
    name: str
    params: ModelParams
    i0: np.ndarray
    r0: np.ndarray
    d0: np.ndarray
    controller: str
    margin: float
    sat: SatConfig
    observer: ObserverConfig
    epsilon_auto: bool
    i0_hat: np.ndarray
    horizon: float
    step: float
    observer_step: float
    output: Path | None = None
    path: Path | None = None

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def x0(self) -> StateVec:
        return self.params.initial_state(self.i0, self.r0, self.d0)

    @property
    def gains(self) -> LinGains:
        return select_gains(self.params, self.margin)

    def zhat0(self) -> np.ndarray:
        """Initial estimate: assumed infected ``i0_hat``, measured deaths, ``S = N - I - R - D``."""
        N = self.params.populations
        s = N - self.i0_hat - self.r0 - self.d0
        return to_z(StateVec(np.maximum(s, 0.0), self.i0_hat, self.r0, self.d0), self.params).z

    def with_controller(self, controller: str) -> "Scenario":
        if controller not in CONTROLLER_TYPES:
            raise ScenarioError(f"unknown controller {controller!r}")
        return replace(self, controller=controller)


def bundled_path(name: str = "covid_fr_6class") -> Path:
    """Path to a scenario shipped with the package."""
    p = Path(str(resources.files("epictrl") / "scenarios" / name / "scenario.toml"))
    if not p.exists():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return p


def _data_rows(path: Path):
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            yield lineno, [c.strip() for c in row]


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _number(text: str, path: Path, lineno: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ScenarioError(f"{path}:{lineno}: expected a number, got {text!r}") from None


def read_contact_csv(path) -> tuple[list[str], np.ndarray]:
    """Contact matrix with a header row of class labels.

    Data rows may start with their own label; row ``k`` holds the contacts of
    class ``k`` with every class ``j``.
    """
    path = Path(path)
    rows = list(_data_rows(path))
    if not rows:
        raise ScenarioError(f"{path}: empty contact file")
    _, header = rows[0]
    labelled = len(rows) > 1 and not _is_number(rows[1][1][0])
    # a labelled layout may carry a corner cell above the row labels
    labels = header[1:] if labelled and len(rows[1][1]) == len(header) else header
    n = len(labels)
    data = []
    for lineno, row in rows[1:]:
        cells = row[1:] if labelled else row
        if len(cells) != n:
            raise ScenarioError(f"{path}:{lineno}: expected {n} values, got {len(cells)}")
        data.append([_number(c, path, lineno) for c in cells])
    if len(data) != n:
        raise ScenarioError(f"{path}: contact matrix has {len(data)} rows for {n} labelled classes")
    return labels, np.array(data)


def read_population_csv(path) -> tuple[list[str], np.ndarray]:
    """Two columns ``label, count``; a non-numeric first data row is a header."""
    path = Path(path)
    labels, counts = [], []
    for i, (lineno, row) in enumerate(_data_rows(path)):
        if len(row) != 2:
            raise ScenarioError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
        if i == 0 and not _is_number(row[1]):
            continue
        labels.append(row[0])
        counts.append(_number(row[1], path, lineno))
    if not counts:
        raise ScenarioError(f"{path}: no population rows")
    return labels, np.array(counts)


def _vector(value, n: int, key: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ScenarioError(f"{key}: expected {n} values, got {arr.size}")
    return arr


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ScenarioError(f"[{name}] must be a table")
    return sec


def load_scenario(path) -> Scenario:
    """Parse, resolve and validate a scenario file.

    Raises
    ------
    ScenarioError
        On syntax errors (with line numbers), missing keys or dimension
        mismatches; parameter range violations are listed together.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    base = path.parent
    meta = _section(doc, "scenario")
    model = _section(doc, "model")
    for key in ("lambda", "contact", "populations", "gamma_r", "gamma_d"):
        if key not in model:
            raise ScenarioError(f"[model] is missing '{key}'")

    c_labels, M = read_contact_csv(base / model["contact"])
    p_labels, N = read_population_csv(base / model["populations"])
    n = N.shape[0]
    if M.shape != (n, n):
        raise ScenarioError(f"contact matrix is {M.shape[0]}x{M.shape[1]} but there are {n} populations")
    if c_labels != p_labels:
        raise ScenarioError(f"class labels differ between contact ({c_labels}) and populations ({p_labels})")
    raw = {
        "lambda": model["lambda"],
        "contact": M,
        "populations": N,
        "gamma_r": _vector(model["gamma_r"], n, "gamma_r"),
        "gamma_d": _vector(model["gamma_d"], n, "gamma_d"),
        "immun_prob": _vector(model.get("immun_prob", 1.0), n, "immun_prob"),
        "labels": p_labels,
    }
    ctrl = _section(doc, "controller")
    controller = ctrl.get("type", "none")
    if controller not in CONTROLLER_TYPES:
        raise ScenarioError(f"[controller] type {controller!r} not in {CONTROLLER_TYPES}")
    try:
        params = validate_params(raw, observer=controller == "observer")
    except ParamValidationError as exc:
        raise ScenarioError(f"{path}: invalid parameters: {exc}") from None

    init = _section(doc, "initial")
    if "i0" not in init:
        raise ScenarioError("[initial] is missing 'i0'")
    i0 = _vector(init["i0"], n, "i0")
    r0 = _vector(init.get("r0", 0.0), n, "r0")
    d0 = _vector(init.get("d0", 0.0), n, "d0")
    if np.any(N - i0 - r0 - d0 < 0):
        raise ScenarioError("initial conditions exceed populations (S0 < 0)")

    sat_sec = _section(doc, "saturation")
    theta_sup = float(sat_sec.get("theta_sup", DEFAULT_THETA_SUP))
    i_lo = _vector(sat_sec.get("i_lo", 20.0), n, "i_lo")
    s_lo_raw = sat_sec.get("s_lo", "auto")
    s_lo = invariant_thresholds(params, i_lo) if s_lo_raw == "auto" else _vector(s_lo_raw, n, "s_lo")
    s_hi = _vector(sat_sec["s_hi"], n, "s_hi") if "s_hi" in sat_sec else float(sat_sec.get("s_ratio", 2.0)) * s_lo
    i_hi = _vector(sat_sec["i_hi"], n, "i_hi") if "i_hi" in sat_sec else float(sat_sec.get("i_ratio", 2.0)) * i_lo
    try:
        sat = SatConfig(theta_sup, s_lo, s_hi, i_lo, i_hi)
    except ValueError as exc:
        raise ScenarioError(f"[saturation] {exc}") from None
    errs = sat.check(params)
    if errs:
        raise ScenarioError("[saturation] " + "; ".join(errs))
    sat.invariant_ok = s_lo <= invariant_thresholds(params, i_lo) * (1 + 1e-12)

    obs_sec = _section(doc, "observer")
    beta = np.asarray(obs_sec.get("beta", [6.0, 11.0, 6.0]), dtype=float)
    beta = np.tile(beta, (n, 1)) if beta.ndim == 1 else beta
    eps_raw = obs_sec.get("epsilon", "auto")
    cap = float(obs_sec.get("epsilon_cap", 0.01))
    try:
        obs = ObserverConfig(beta, 1.0 if eps_raw == "auto" else float(eps_raw),
                             bool(obs_sec.get("project", True)))
    except ValueError as exc:
        raise ScenarioError(f"[observer] {exc}") from None
    if eps_raw == "auto":
        obs.epsilon = min(cap, epsilon_star(solve_lyapunov(obs)))
    i0_hat = _vector(obs_sec.get("i0_hat", i0), n, "i0_hat")

    out = meta.get("output")
    return Scenario(
        name=str(meta.get("name", path.stem)),
        params=params,
        i0=i0, r0=r0, d0=d0,
        controller=controller,
        margin=float(ctrl.get("margin", 0.1)),
        sat=sat,
        observer=obs,
        epsilon_auto=eps_raw == "auto",
        i0_hat=i0_hat,
        horizon=float(meta.get("horizon", 400.0)),
        step=float(meta.get("step", 0.01)),
        observer_step=float(obs_sec.get("step", 0.001)),
        output=None if out is None else base / out,
        path=path,
    )

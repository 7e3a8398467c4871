"""Age-structured SIRD dynamics with a per-class vaccination input.

For each age class ``k``::

    dS_k/dt = -lam S_k sum_j C_kj I_j - p_k theta_k S_k
    dI_k/dt =  lam S_k sum_j C_kj I_j - (gR_k + gD_k) I_k
    dR_k/dt =  gR_k I_k + p_k theta_k S_k
    dD_k/dt =  gD_k I_k

with ``C_kj = M_kj / N_j``. Populations are absolute counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels

__all__ = [
    "ModelParams",
    "ParamValidationError",
    "StateVec",
    "contact_normalized",
    "domain_floors",
    "in_set_B",
    "in_set_D",
    "lift_f",
    "sird_rhs",
    "validate_params",
]


class ParamValidationError(ValueError):
    """Raised with the full list of violated parameter invariants."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class ModelParams:
    lam: float
    contact: np.ndarray
    populations: np.ndarray
    gamma_r: np.ndarray
    gamma_d: np.ndarray
    immun_prob: np.ndarray
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.contact = np.ascontiguousarray(self.contact, dtype=float)
        self.populations = np.ascontiguousarray(self.populations, dtype=float)
        self.gamma_r = np.ascontiguousarray(self.gamma_r, dtype=float)
        self.gamma_d = np.ascontiguousarray(self.gamma_d, dtype=float)
        self.immun_prob = np.ascontiguousarray(self.immun_prob, dtype=float)
        self.lam = float(self.lam)
        if not self.labels:
            self.labels = [f"class{k + 1}" for k in range(self.n)]

    @property
    def n(self) -> int:
        return int(self.populations.shape[0])

    @property
    def C(self) -> np.ndarray:
        return contact_normalized(self)

    @property
    def gamma(self) -> np.ndarray:
        """Total removal rate ``gR + gD`` per class."""
        return self.gamma_r + self.gamma_d

    @property
    def Gamma(self) -> float:
        return float(self.gamma.max())

    @property
    def contact_row_sums(self) -> np.ndarray:
        return self.contact.sum(axis=1)

    def packed(self):
        return (self.lam, self.C, self.gamma_r, self.gamma_d, self.immun_prob, self.populations)

    def initial_state(self, i0, r0=None, d0=None) -> "StateVec":
        """State with ``S = N - I - R - D``."""
        zero = np.zeros(self.n)
        i0 = np.asarray(i0, dtype=float)
        r0 = zero if r0 is None else np.asarray(r0, dtype=float)
        d0 = zero if d0 is None else np.asarray(d0, dtype=float)
        s0 = self.populations - i0 - r0 - d0
        if np.any(s0 < 0):
            raise ValueError(f"initial conditions exceed populations: S0 = {s0}")
        return StateVec(s0, i0, r0, d0)


@dataclass
class StateVec:
    s: np.ndarray
    i: np.ndarray
    r: np.ndarray
    d: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        for name in ("s", "i", "r", "d"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def n(self) -> int:
        return int(self.s.shape[0])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.s, self.i, self.r, self.d])

    @classmethod
    def from_array(cls, x, time: float = 0.0) -> "StateVec":
        x = np.asarray(x, dtype=float)
        n = x.shape[0] // 4
        return cls(x[:n].copy(), x[n:2 * n].copy(), x[2 * n:3 * n].copy(), x[3 * n:].copy(), time)


def _as_x(state) -> np.ndarray:
    if isinstance(state, StateVec):
        return state.as_array()
    return np.ascontiguousarray(state, dtype=float)


def validate_params(raw: ModelParams | Mapping, observer: bool = False) -> ModelParams:
    """Check every parameter invariant and return a ``ModelParams``.

    All violations are collected before raising, each naming the field, the
    offending index and the bound.
    """
    if isinstance(raw, ModelParams):
        fields = {
            "lambda": raw.lam,
            "contact": raw.contact,
            "populations": raw.populations,
            "gamma_r": raw.gamma_r,
            "gamma_d": raw.gamma_d,
            "immun_prob": raw.immun_prob,
            "labels": raw.labels,
        }
    else:
        fields = dict(raw)
        if "lam" in fields and "lambda" not in fields:
            fields["lambda"] = fields.pop("lam")

    errors: list[str] = []
    missing = [k for k in ("lambda", "contact", "populations", "gamma_r", "gamma_d", "immun_prob")
               if k not in fields]
    if missing:
        raise ParamValidationError([f"missing field '{k}'" for k in missing])

    lam = float(fields["lambda"])
    N = np.atleast_1d(np.asarray(fields["populations"], dtype=float))
    M = np.atleast_2d(np.asarray(fields["contact"], dtype=float))
    n = N.shape[0]
    vecs = {}
    for name in ("gamma_r", "gamma_d", "immun_prob"):
        v = np.atleast_1d(np.asarray(fields[name], dtype=float))
        if v.shape != (n,):
            errors.append(f"{name}: expected length {n}, got shape {v.shape}")
        vecs[name] = v
    if M.shape != (n, n):
        errors.append(f"contact: expected shape ({n}, {n}), got {M.shape}")
    if errors:
        raise ParamValidationError(errors)

    if not (0.0 < lam <= 1.0):
        errors.append(f"lambda={lam} outside (0, 1]")
    for k in range(n):
        if not N[k] > 0:
            errors.append(f"populations[{k}]={N[k]} must be > 0")
    for name in ("gamma_r", "gamma_d"):
        for k, v in enumerate(vecs[name]):
            if not (0.0 <= v <= 1.0):
                errors.append(f"{name}[{k}]={v} outside [0, 1]")
    for k, v in enumerate(vecs["immun_prob"]):
        if not (0.0 < v <= 1.0):
            errors.append(f"immun_prob[{k}]={v} outside (0, 1]")
    for k in range(n):
        for j in range(n):
            if not (0.0 <= M[k, j] <= N[j]):
                errors.append(f"contact M[{k}][{j}] at ({k},{j}) = {M[k, j]} outside [0, N[{j}]={N[j]}]")
    if observer:
        for k, v in enumerate(vecs["gamma_d"]):
            if not v > 0:
                errors.append(f"gamma_d must be positive for observer mode (gamma_d[{k}]={v})")
    if errors:
        raise ParamValidationError(errors)
    return ModelParams(lam, M, N, vecs["gamma_r"], vecs["gamma_d"], vecs["immun_prob"],
                       list(fields.get("labels") or []))


def contact_normalized(params: ModelParams) -> np.ndarray:
    return params.contact / params.populations[None, :]


def lift_f(state, params: ModelParams) -> np.ndarray:
    """Drift of the (I, S) subsystem: ``(f_1..f_n, f_{n+1}..f_{2n})``."""
    return kernels.lift_f(_as_x(state), params.packed())


def sird_rhs(state, theta, params: ModelParams) -> np.ndarray:
    theta = np.ascontiguousarray(theta, dtype=float)
    if np.any(theta < 0):
        raise ValueError(f"theta must be non-negative, got {theta}")
    return kernels.sird_rhs(_as_x(state), theta, params.packed())


def in_set_B(state, populations, tol: float = 0.0) -> bool:
    """True iff every compartment lies in ``[-tol, N_k + tol]``."""
    x = _as_x(state)
    N = np.asarray(populations, dtype=float)
    comp = x.reshape(4, -1)
    return bool(np.all(comp >= -tol) and np.all(comp <= N[None, :] + tol))


def domain_floors(params: ModelParams) -> tuple[float, float]:
    """Default margins ``(S floor, pressure floor)`` for the region D.

    ``S_k`` is a count, so its margin scales with the populations; the
    pressure ``sum_j C_kj I_j`` peaks at ``sum_j M_kj`` and gets its own scale.
    """
    s_floor = 1e-9 * float(params.populations.min())
    rows = params.contact_row_sums
    a_floor = 1e-12 * float(rows[rows > 0].min()) if np.any(rows > 0) else 1e-300
    return s_floor, a_floor


def in_set_D(state, params: ModelParams, floor: float | None = None) -> bool:
    """Feedback-linearizability region with a strict numerical margin.

    A single ``floor`` applies to both ``S_k`` and ``sum_j C_kj I_j``; by
    default each gets the scale from ``domain_floors``.
    """
    if floor is None:
        s_floor, a_floor = domain_floors(params)
    else:
        s_floor = a_floor = float(floor)
    return bool(kernels.in_domain(_as_x(state), params.C, s_floor, a_floor))

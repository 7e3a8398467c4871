"""Vaccination feedback laws.

Two laws are provided. ``unconstrained_theta`` is the exact linearizing
feedback, which turns each ``I_k`` into the output of a stable second-order
linear system. ``theta_sat`` is the globally defined, amplitude-limited
version that blends the linearizing law in with arctan ramps above the
thresholds ``(S~_k, I~_k)`` and caps it at ``theta_sup``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import kernels
from .model import ModelParams, StateVec, _as_x, domain_floors, in_set_D

__all__ = [
    "DomainError",
    "LinGains",
    "LipschitzConstants",
    "SatConfig",
    "count_switches",
    "envelope_constants",
    "invariant_thresholds",
    "lie_terms",
    "lipschitz_constants",
    "q_blend",
    "select_gains",
    "theta_bar",
    "theta_sat",
    "unconstrained_theta",
]


class DomainError(ValueError):
    """A law was evaluated outside the set where it is defined."""


@dataclass
class LinGains:
    """Pole-placement gains of the linearized chain ``I_k'' = -a2 I_k' - a1 I_k``."""

    alpha1: np.ndarray
    alpha2: np.ndarray

    def __post_init__(self):
        self.alpha1 = np.ascontiguousarray(self.alpha1, dtype=float)
        self.alpha2 = np.ascontiguousarray(self.alpha2, dtype=float)
        if self.alpha1.shape != self.alpha2.shape:
            raise ValueError("alpha1 and alpha2 must have the same length")
        if np.any(self.alpha1 <= 0) or np.any(self.alpha2 <= 0):
            raise ValueError("gains must be positive")

    def satisfies_conditions(self, params: ModelParams) -> np.ndarray:
        """Per-class flag for the sufficient non-negativity conditions."""
        c = params.gamma
        q = params.Gamma + params.contact_row_sums
        return (self.alpha1 > c * q) & np.isclose(self.alpha2, c + q, rtol=1e-12, atol=0.0)


@dataclass
class SatConfig:
    """Geometry of the saturated law.

    ``s_lo < s_hi`` and ``i_lo < i_hi`` bound the ramps of ``q_k``;
    ``theta_sup`` caps the vaccination rate.
    """

    theta_sup: float
    s_lo: np.ndarray
    s_hi: np.ndarray
    i_lo: np.ndarray
    i_hi: np.ndarray
    invariant_ok: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.theta_sup = float(self.theta_sup)
        for name in ("s_lo", "s_hi", "i_lo", "i_hi"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=float))
        if not self.theta_sup > 0:
            raise ValueError(f"theta_sup={self.theta_sup} must be positive")
        bad = [k for k in range(self.s_lo.shape[0])
               if not (0 < self.s_lo[k] < self.s_hi[k] and 0 < self.i_lo[k] < self.i_hi[k])]
        if bad:
            raise ValueError(f"threshold ordering 0 < lo < hi violated for classes {bad}")

    @property
    def n(self) -> int:
        return int(self.s_lo.shape[0])

    def check(self, params: ModelParams) -> list[str]:
        """Violations of the upper bounds ``hi <= N_k``."""
        N = params.populations
        errs = []
        for k in range(self.n):
            if self.s_hi[k] > N[k]:
                errs.append(f"s_hi[{k}]={self.s_hi[k]} exceeds N[{k}]={N[k]}")
            if self.i_hi[k] > N[k]:
                errs.append(f"i_hi[{k}]={self.i_hi[k]} exceeds N[{k}]={N[k]}")
        return errs

    @classmethod
    def auto(cls, params: ModelParams, theta_sup: float = 0.017, i_lo=20.0,
             s_ratio: float = 2.0, i_ratio: float = 2.0) -> "SatConfig":
        """Thresholds that make the class box invariant (equality case).

        ``i_lo`` defaults to 20 individuals per class; the upper ramp ends are
        ``s_ratio`` and ``i_ratio`` times the lower ones.
        """
        i_lo = np.broadcast_to(np.asarray(i_lo, dtype=float), (params.n,)).copy()
        s_lo = invariant_thresholds(params, i_lo)
        cfg = cls(theta_sup, s_lo, s_ratio * s_lo, i_lo, i_ratio * i_lo)
        cfg.invariant_ok = np.ones(params.n, dtype=bool)
        return cfg


def packed(gains: LinGains, cfg: SatConfig | None, params: ModelParams) -> tuple:
    """Control tuple consumed by the kernels."""
    n = params.n
    a_floor = domain_floors(params)[1]
    if cfg is None:
        one = np.ones(n)
        return (gains.alpha1, gains.alpha2, math.inf, one, 2 * one, one, 2 * one, a_floor)
    return (gains.alpha1, gains.alpha2, cfg.theta_sup, cfg.s_lo, cfg.s_hi,
            cfg.i_lo, cfg.i_hi, a_floor)


def lie_terms(state, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """``(L_f^2 h, L_g L_f h)`` of the output ``h_k = I_k``."""
    lf2h, lglfh, _ = kernels.lie_terms(_as_x(state), params.packed())
    return lf2h, lglfh


def select_gains(params: ModelParams, margin: float = 0.1) -> LinGains:
    """Gains meeting the non-negativity conditions, the strict one by ``margin``."""
    if not margin > 0:
        raise ValueError(f"margin={margin} must be positive")
    c = params.gamma
    q = params.Gamma + params.contact_row_sums
    return LinGains(c * q + margin, c + q)


def unconstrained_theta(state, gains: LinGains, params: ModelParams,
                        floor: float | None = None) -> np.ndarray:
    """Exact linearizing feedback.

    Raises
    ------
    DomainError
        If the state is outside D, where ``L_g L_f h`` vanishes.
    """
    x = _as_x(state)
    if not in_set_D(x, params, floor):
        raise DomainError("singular decoupling matrix: state outside D")
    return kernels.theta_linearizing(x, gains.alpha1, gains.alpha2, params.packed())


def q_blend(s_k: float, i_k: float, cfg: SatConfig, k: int) -> float:
    """Arctan blending weight on the B area of class ``k``."""
    if s_k < cfg.s_lo[k] or i_k < cfg.i_lo[k]:
        raise DomainError(
            f"q_blend outside its domain: (s, i)=({s_k}, {i_k}) below "
            f"({cfg.s_lo[k]}, {cfg.i_lo[k]})")
    return float(kernels.q_blend(float(s_k), float(i_k), cfg.s_lo[k], cfg.s_hi[k],
                                 cfg.i_lo[k], cfg.i_hi[k]))


def theta_bar(state, gains: LinGains, params: ModelParams, cfg: SatConfig, k: int) -> float:
    """``min(theta_k, theta_sup)`` on the B area of class ``k``."""
    x = _as_x(state)
    n = params.n
    if x[k] < cfg.s_lo[k] or x[n + k] < cfg.i_lo[k]:
        raise DomainError(f"theta_bar outside the B area of class {k}")
    return float(kernels.theta_bar(x, k, packed(gains, cfg, params), params.packed()))


def theta_sat(state, gains: LinGains, params: ModelParams, cfg: SatConfig) -> np.ndarray:
    """Saturated law, defined on all of B with values in ``[0, theta_sup]``."""
    return kernels.theta_sat(_as_x(state), packed(gains, cfg, params), params.packed())


def invariant_thresholds(params: ModelParams, i_lo) -> np.ndarray:
    """``S~_k = (gR_k + gD_k) I~_k / (lam sum_j M_kj)``."""
    i_lo = np.broadcast_to(np.asarray(i_lo, dtype=float), (params.n,))
    if np.any(i_lo <= 0):
        raise ValueError("i_lo must be positive")
    rows = params.contact_row_sums
    zero = np.flatnonzero(rows <= 0)
    if zero.size:
        raise ValueError(f"zero contact row for classes {zero.tolist()}: "
                         "threshold undefined (class cannot be infected)")
    return params.gamma * i_lo / (params.lam * rows)


def count_switches(traj, cfg: SatConfig) -> tuple[int, np.ndarray]:
    """Transitions of the B-area predicate ``S_k >= S~_k and I_k >= I~_k``.

    Uses the bisection-refined switch events when the trajectory logged them,
    otherwise scans the recorded samples.
    """
    logged = [e for e in traj.events if e.kind in ("switch_on", "switch_off")]
    if traj.meta.get("switches_tracked"):
        times = np.sort(np.array([e.time for e in logged], dtype=float))
        return int(times.size), times
    xs = traj.states
    n = cfg.n
    pred = (xs[:, :n] >= cfg.s_lo) & (xs[:, n:2 * n] >= cfg.i_lo)
    flips = np.nonzero(pred[1:] != pred[:-1])
    times = np.sort(traj.times[1:][flips[0]])
    return int(times.size), times


def _companion(a1: float, a2: float) -> np.ndarray:
    return np.array([[0.0, 1.0], [-a1, -a2]])


def envelope_constants(gains: LinGains, grid: int = 10_000,
                       span: float = 50.0) -> tuple[np.ndarray, np.ndarray]:
    """``(C_k, mu_k)`` of the decay envelope of each linearized chain.

    ``mu_k`` is the slowest decay rate of ``[[0, 1], [-a1, -a2]]`` and
    ``C_k`` the maximum of ``||exp(A t)|| e^{mu t}`` over ``[0, span / mu]``
    (spectral norm).
    """
    n = gains.alpha1.shape[0]
    C = np.empty(n)
    mu = np.empty(n)
    for k in range(n):
        A = _companion(gains.alpha1[k], gains.alpha2[k])
        m = float(np.min(np.abs(np.linalg.eigvals(A).real)))
        ts = np.linspace(0.0, span / m, grid)
        # powers of exp(A dt) are cheaper than one expm per node
        step = expm(A * (ts[1] - ts[0]))
        Es = np.empty((grid, 2, 2))
        Es[0] = np.eye(2)
        for j in range(1, grid):
            Es[j] = Es[j - 1] @ step
        C[k] = float(np.max(np.linalg.norm(Es, 2, axis=(1, 2)) * np.exp(m * ts)))
        mu[k] = m
    return C, mu


@dataclass
class LipschitzConstants:
    """Per-class constants of the saturated law on the max norm.

    ``L_max`` is the max-combination ``max(K, theta_sup C)``;
    ``L`` is the product-rule bound ``K + theta_sup C``.
    """

    C1: np.ndarray
    C2: np.ndarray
    C3: np.ndarray
    C: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    K: np.ndarray
    L: np.ndarray
    L_max: np.ndarray
    L0: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    L3: np.ndarray
    L4: np.ndarray
    total: np.ndarray
    total_max: np.ndarray

    def as_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in self.__dict__.items()}


def linearizing_gradient_bound(params: ModelParams, gains: LinGains,
                               cfg: SatConfig) -> np.ndarray:
    """Upper bound of ``||grad theta_k||_1`` on the B area of class ``k``.

    On that box ``sum_j C_kj I_j >= C_kk I~_k``; every partial derivative of
    the rearranged law ``p theta_k = sum_j C_kj f_j / a_k + (a2 - c) - lam a_k
    + kappa I_k / (lam S_k a_k)`` is bounded termwise. Infinite when
    ``M_kk = 0``.
    """
    lam = params.lam
    C = params.C
    M = params.contact
    N = params.populations
    c = params.gamma
    G = params.Gamma
    m = params.contact_row_sums
    kappa = gains.alpha1 - (gains.alpha2 - c) * c
    out = np.empty(params.n)
    for k in range(params.n):
        if C[k, k] <= 0:
            out[k] = math.inf
            continue
        amin = C[k, k] * cfg.i_lo[k]
        beta = abs(kappa[k]) / lam
        s_lo = cfg.s_lo[k]
        dS = lam * C[k] * m / amin
        dS[k] += beta / (C[k, k] * s_lo ** 2)
        dI = (lam * (M[k] @ C) / amin
              + lam * (M[k] @ m) / amin * C[k] / amin
              + C[k] * (c + G) / amin
              + lam * C[k]
              + beta * C[k] / (C[k, k] * s_lo * amin))
        dI[k] += beta / (s_lo * amin)
        out[k] = (dS.sum() + dI.sum()) / params.immun_prob[k]
    return out


def lipschitz_constants(params: ModelParams, gains: LinGains, cfg: SatConfig) -> LipschitzConstants:
    """Assemble the constants of the Lipschitz argument for ``theta_sat``.

    The zero-slope cases (``C1``, ``K2``, ``L0``) hold for any positive value
    and are reported as 0.
    """
    ts = cfg.theta_sup
    di = cfg.i_hi - cfg.i_lo
    ds = cfg.s_hi - cfg.s_lo
    zero = np.zeros(cfg.n)
    C2 = 4.0 / (math.pi * di)
    C3 = 4.0 / (math.pi * ds)
    C = np.maximum(C2, C3)
    K1 = linearizing_gradient_bound(params, gains, cfg)
    K = K1.copy()
    L = K + ts * C
    L_max = np.maximum(K, ts * C)
    L1 = ts / np.minimum(ds, di)
    L2 = 4.0 * ts / (math.pi * di)
    L3 = 4.0 * ts / (math.pi * ds)
    L4 = np.maximum(L2, L3)
    total = np.max(np.vstack([L, L1, L2, L3, L4]), axis=0)
    total_max = np.max(np.vstack([L_max, L1, L2, L3, L4]), axis=0)
    return LipschitzConstants(zero, C2, C3, C, K1, zero, K, L, L_max, zero,
                              L1, L2, L3, L4, total, total_max)

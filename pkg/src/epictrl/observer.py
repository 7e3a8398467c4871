"""High-gain observer driven by the cumulative death count.

Per class the coordinates ``z = (D_k, gD_k I_k, gD_k f_k)`` form a chain of
integrators ``z1' = z2, z2' = z3, z3' = phi_k(z, u)`` with output ``y_k = z1``.
The observer copies the chain and injects ``beta_i / eps^i`` times the
output error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from . import kernels
from .control import LinGains, SatConfig, packed
from .model import ModelParams, StateVec, _as_x

__all__ = [
    "LyapunovSolution",
    "ObserverConfig",
    "ZState",
    "closed_loop_rhs",
    "epsilon_star",
    "from_z",
    "in_set_Z",
    "lyapunov_V",
    "observer_matrices",
    "output_u",
    "observer_rhs",
    "phi",
    "phi_lipschitz_bound",
    "project_Z",
    "ratio_bound",
    "scaled_error",
    "solve_lyapunov",
    "to_z",
]

DEFAULT_BETA = (6.0, 11.0, 6.0)
Z_TOL = 1e-9


@dataclass
class ZState:
    """Observer coordinates ordered ``(z11, z21, z31, z12, ..., z3n)``."""

    z: np.ndarray

    def __post_init__(self):
        self.z = np.ascontiguousarray(self.z, dtype=float)

    @property
    def blocks(self) -> np.ndarray:
        return self.z.reshape(-1, 3)

    @property
    def z1(self) -> np.ndarray:
        return self.blocks[:, 0]

    @property
    def z2(self) -> np.ndarray:
        return self.blocks[:, 1]

    @property
    def z3(self) -> np.ndarray:
        return self.blocks[:, 2]


def _as_z(z) -> np.ndarray:
    if isinstance(z, ZState):
        return z.z
    return np.ascontiguousarray(z, dtype=float)


def contact_tilde(params: ModelParams) -> np.ndarray:
    """``C~_kj = M_kj / (gD_j N_j)``; requires ``gD > 0``."""
    if np.any(params.gamma_d <= 0):
        raise ValueError("gamma_d must be positive for observer mode")
    return params.C / params.gamma_d[None, :]


def _zfloor(params: ModelParams) -> np.ndarray:
    # sum_j C~_kj gD_j N_j equals the contact row sum
    return 1e-12 * params.contact_row_sums


@dataclass
class ObserverConfig:
    """Observer gains ``beta`` (one Hurwitz triple per class) and ``epsilon``.

    With ``project`` set (the default), the observer evaluates ``phi`` at
    the estimate clamped onto Z, a Lipschitz extension of ``phi`` that agrees
    with it on Z. The estimate itself is never clamped. Without it the ratio
    term is unbounded off Z and the peaking transient reaches ~1e170 before
    the estimate settles.
    """

    beta: np.ndarray
    epsilon: float
    project: bool = True

    def __post_init__(self):
        self.beta = np.ascontiguousarray(np.atleast_2d(self.beta), dtype=float)
        self.epsilon = float(self.epsilon)
        if self.beta.shape[1] != 3:
            raise ValueError(f"beta must be n x 3, got {self.beta.shape}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon={self.epsilon} must be positive")
        b1, b2, b3 = self.beta.T
        bad = np.flatnonzero(~((b1 > 0) & (b3 > 0) & (b1 * b2 > b3)))
        if bad.size:
            raise ValueError(f"s^3 + b1 s^2 + b2 s + b3 is not Hurwitz for classes {bad.tolist()}")

    @classmethod
    def default(cls, n: int, epsilon: float = 0.01, beta=DEFAULT_BETA,
                project: bool = True) -> "ObserverConfig":
        return cls(np.tile(np.asarray(beta, dtype=float), (n, 1)), epsilon, project)

    @property
    def n(self) -> int:
        return int(self.beta.shape[0])

    @property
    def G(self) -> np.ndarray:
        """``3n x n`` injection gain with blocks ``(b1/eps, b2/eps^2, b3/eps^3)``."""
        e = self.epsilon
        G = np.zeros((3 * self.n, self.n))
        for k in range(self.n):
            G[3 * k:3 * k + 3, k] = self.beta[k] / np.array([e, e * e, e ** 3])
        return G

    @property
    def A0(self) -> np.ndarray:
        """Scaled error matrix, block diagonal in ``[[-b1,1,0],[-b2,0,1],[-b3,0,0]]``."""
        A0 = np.zeros((3 * self.n, 3 * self.n))
        for k in range(self.n):
            A0[3 * k:3 * k + 3, 3 * k:3 * k + 3] = _block(self.beta[k])
        return A0

    def D(self, epsilon: float | None = None) -> np.ndarray:
        e = self.epsilon if epsilon is None else float(epsilon)
        return np.diag(np.tile([e * e, e, 1.0], self.n))

    def packed(self, params: ModelParams) -> tuple:
        return (self.beta, self.epsilon, contact_tilde(params), _zfloor(params), Z_TOL,
                bool(self.project))


def _block(b) -> np.ndarray:
    return np.array([[-b[0], 1.0, 0.0], [-b[1], 0.0, 1.0], [-b[2], 0.0, 0.0]])


def observer_matrices(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Chain matrices ``(A, B, H)`` of the transformed plant."""
    A = np.zeros((3 * n, 3 * n))
    B = np.zeros((3 * n, n))
    H = np.zeros((n, 3 * n))
    for k in range(n):
        A[3 * k, 3 * k + 1] = 1.0
        A[3 * k + 1, 3 * k + 2] = 1.0
        B[3 * k + 2, k] = 1.0
        H[k, 3 * k] = 1.0
    return A, B, H


def to_z(state, params: ModelParams) -> ZState:
    return ZState(kernels.to_z(_as_x(state), params.packed()))


def from_z(z, params: ModelParams, s_fallback=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse change of coordinates, returning ``(D, I, S)``.

    ``S_k`` is undefined when ``sum_j C~_kj z2j`` vanishes; ``s_fallback``
    (zeros by default) fills it there. The feedback is zero in that case, so
    the value never reaches the plant.
    """
    s_fb = np.zeros(params.n) if s_fallback is None else np.ascontiguousarray(s_fallback, dtype=float)
    return kernels.from_z(_as_z(z), params.packed(), contact_tilde(params), _zfloor(params), s_fb)


def project_Z(z, params: ModelParams) -> ZState:
    """Clamp ``z1``, ``z2`` into their boxes, then ``z3`` into its ``z2``-dependent interval."""
    return ZState(kernels.project_z(_as_z(z), params.packed(), contact_tilde(params)))


def in_set_Z(z, params: ModelParams, tol: float = Z_TOL) -> bool:
    """Membership in the image of B, each inequality relaxed by ``tol`` (relative)."""
    return bool(kernels.in_z(_as_z(z), params.packed(), contact_tilde(params), tol))


def phi(z, u, params: ModelParams) -> np.ndarray:
    """Drift of ``z3`` in the transformed coordinates."""
    return kernels.phi(_as_z(z), np.ascontiguousarray(u, dtype=float), params.packed(),
                       contact_tilde(params), _zfloor(params))


def ratio_bound(params: ModelParams) -> np.ndarray:
    """Bound ``K_k`` on ``|sum_j C~_kj z3j / sum_j C~_kj z2j|`` over Z.

    Infinite for a class with a zero entry in its contact row.
    """
    Ct = contact_tilde(params)
    M = params.contact
    out = np.empty(params.n)
    for k in range(params.n):
        if np.any(Ct[k] <= 0):
            out[k] = math.inf
            continue
        inner = (Ct / Ct[k][None, :]).sum(axis=1)
        out[k] = params.lam * float(M[k] @ inner) + params.Gamma
    return out


def phi_lipschitz_bound(params: ModelParams, theta_sup: float) -> np.ndarray:
    """``M = (1 + Gamma)[lam sum_j M_kj + theta_sup + K_k + Gamma] + Gamma^2`` per class."""
    G = params.Gamma
    K = ratio_bound(params)
    return (1 + G) * (params.lam * params.contact_row_sums + theta_sup + K + G) + G * G


def output_u(z_hat, params: ModelParams, gains: LinGains, cfg: SatConfig,
             tol: float = Z_TOL) -> np.ndarray:
    """Saturated law on the reconstructed state, zero whenever ``z_hat`` leaves Z."""
    obs = ObserverConfig.default(params.n)
    op = obs.packed(params)[:4] + (tol, True)
    return kernels.output_u(_as_z(z_hat), params.packed(), packed(gains, cfg, params), op)


def observer_rhs(z_hat, y, params: ModelParams, obs: ObserverConfig, gains: LinGains,
                 cfg: SatConfig) -> np.ndarray:
    """``A z_hat + B phi(z_hat, u(z_hat)) + G (y - H z_hat)``."""
    zh = _as_z(z_hat)
    op = obs.packed(params)
    u = kernels.output_u(zh, params.packed(), packed(gains, cfg, params), op)
    return kernels.observer_rhs(zh, np.ascontiguousarray(y, dtype=float), u, params.packed(), op)


def closed_loop_rhs(x, z_hat, params: ModelParams, obs: ObserverConfig, gains: LinGains,
                    cfg: SatConfig) -> tuple[np.ndarray, np.ndarray]:
    """Plant and observer derivatives under the output feedback ``u(z_hat)``."""
    xa = _as_x(x)
    X = np.concatenate([xa, _as_z(z_hat)])
    dX, _ = kernels.coupled_rhs(X, params.packed(), packed(gains, cfg, params), obs.packed(params))
    n = params.n
    return dX[:4 * n], dX[4 * n:]


@dataclass
class LyapunovSolution:
    P: np.ndarray
    residual: float

    @property
    def norm_inf(self) -> float:
        return float(np.max(np.abs(self.P).sum(axis=1)))

    @property
    def min_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.P).min())


def solve_lyapunov(obs: ObserverConfig, tol: float = 1e-10) -> LyapunovSolution:
    """Solve ``P A0 + A0^T P = -I`` block by block.

    Raises
    ------
    ValueError
        If a block of ``A0`` is not Hurwitz, or the residual exceeds ``tol``.
    """
    n = obs.n
    P = np.zeros((3 * n, 3 * n))
    for k in range(n):
        Ak = _block(obs.beta[k])
        if np.max(np.linalg.eigvals(Ak).real) >= 0:
            raise ValueError(f"A0 block {k} is not Hurwitz")
        Pk = solve_continuous_lyapunov(Ak.T, -np.eye(3))
        P[3 * k:3 * k + 3, 3 * k:3 * k + 3] = 0.5 * (Pk + Pk.T)
    A0 = obs.A0
    residual = float(np.max(np.abs(P @ A0 + A0.T @ P + np.eye(3 * n)).sum(axis=1)))
    if residual > tol:
        raise ValueError(f"Lyapunov residual {residual:.3e} above {tol:.1e}")
    sol = LyapunovSolution(P, residual)
    if sol.min_eig <= 0:
        raise ValueError("Lyapunov solution is not positive definite")
    return sol


def epsilon_star(P: LyapunovSolution, m_lip: float | None = None) -> float:
    """Largest admissible ``eps`` with ``eps ||D(eps)|| = 1 / (2 ||P||)``.

    ``||D(eps)|| = 1`` for ``eps <= 1`` under the max norm. Passing the
    Lipschitz constant ``m_lip`` of ``phi`` gives the stricter value that the
    decrease estimate of ``V`` actually requires.
    """
    scale = 2.0 * P.norm_inf * (1.0 if m_lip is None else float(m_lip))
    return min(1.0, 1.0 / scale)


def scaled_error(z, z_hat, epsilon: float) -> np.ndarray:
    """``eta_ik = (z_ik - zhat_ik) / eps^(3 - i)``."""
    e = (np.asarray(z, dtype=float) - np.asarray(z_hat, dtype=float)).reshape(*np.shape(z)[:-1], -1, 3)
    scale = np.array([epsilon ** 2, epsilon, 1.0])
    return (e / scale).reshape(np.shape(z))


def lyapunov_V(z, z_hat, params: ModelParams, epsilon: float, P: LyapunovSolution) -> np.ndarray:
    """``V = sum_k (N_k - z1k) + eta^T P eta``; accepts single states or stacks."""
    z = np.asarray(z, dtype=float)
    eta = scaled_error(z, z_hat, epsilon)
    z1 = z.reshape(*z.shape[:-1], -1, 3)[..., 0]
    quad = np.einsum("...i,ij,...j->...", eta, P.P, eta)
    return (params.populations - z1).sum(axis=-1) + quad

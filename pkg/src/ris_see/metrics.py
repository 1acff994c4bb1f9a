"""Ground-truth evaluation of SINR, secrecy rate, power and SEE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet
from .scenario import ScenarioConfig, circuit_power


@dataclass(frozen=True)
class BeamformingState:
    """Beams ``w`` (K, MB), AN streams ``v`` (K, MB, S) and phases ``theta`` (RN,).

    The AN covariance of user k is ``v[k] @ v[k]^H``; it need not be rank one.
    """

    w: np.ndarray
    v: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        if self.theta.size and not np.allclose(np.abs(self.theta), 1.0, atol=1e-8):
            raise ValueError("theta must be unit modulus")

    @property
    def theta_hat(self) -> np.ndarray:
        return np.append(self.theta, 1.0 + 0j)

    @property
    def W(self) -> np.ndarray:
        return np.einsum("ki,kj->kij", self.w, self.w.conj())

    @property
    def V(self) -> np.ndarray:
        return np.einsum("kis,kjs->kij", self.v, self.v.conj())

    @property
    def Q_hat(self) -> np.ndarray:
        t = self.theta_hat
        return np.outer(t, t.conj())

    @classmethod
    def from_lifted(cls, w: np.ndarray, V: np.ndarray, theta: np.ndarray, tol: float = 1e-12):
        """Build from beams and AN covariances (eigendecomposed into streams)."""
        return cls(np.asarray(w, complex), an_streams(V, tol), np.asarray(theta, complex))

    def with_theta(self, theta) -> "BeamformingState":
        return BeamformingState(self.w, self.v, np.asarray(theta, complex))


def an_streams(V: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Factor each PSD covariance V[k] as v v^H with at most MB columns."""
    K, MB, _ = V.shape
    out = np.zeros((K, MB, MB), complex)
    for k in range(K):
        Vk = (V[k] + V[k].conj().T) / 2
        lam, U = np.linalg.eigh(Vk)
        lam = np.where(lam > tol * max(lam.max(), 0) + 0.0, lam, 0.0)
        out[k] = U * np.sqrt(np.clip(lam, 0, None))
    return out


def effective_rows(H: np.ndarray, theta_hat: np.ndarray) -> np.ndarray:
    """theta_hat^H H for each receiver: (count, MB)."""
    return np.einsum("n,cnm->cm", theta_hat.conj(), H)


def _sinr_rows(a: np.ndarray, w: np.ndarray, v: np.ndarray, noise: float):
    """SINRs of every (receiver row, user) pair: shape (rows, K)."""
    g = np.abs(a @ w.T) ** 2  # (rows, K)
    an = np.sum(np.abs(np.einsum("cm,kms->cks", a, v)) ** 2, axis=(1, 2))
    total = g.sum(axis=1)
    interference = total[:, None] - g + an[:, None]
    return g / (interference + noise)


def compute_sinrs(ch: ChannelSet, state: BeamformingState, k=None, j=None,
                  noise_user: float = 1.0, noise_eve: float = 1.0):
    """User SINRs (K,) and Eve SINRs (K, J); optionally indexed by k and j."""
    th = state.theta_hat
    a_u = effective_rows(ch.H_users, th)
    a_e = effective_rows(ch.H_eves, th)
    g_user = np.diag(_sinr_rows(a_u, state.w, state.v, noise_user)).copy()
    g_eve = _sinr_rows(a_e, state.w, state.v, noise_eve).T.copy()
    K, J = g_eve.shape
    if k is None:
        return g_user, g_eve
    if not 0 <= k < K:
        raise IndexError(f"user index {k} out of range")
    if j is None:
        return g_user[k], g_eve[k]
    if not 0 <= j < J:
        raise IndexError(f"eve index {j} out of range")
    return g_user[k], g_eve[k, j]


def interference_matrix(W: np.ndarray, V: np.ndarray, k: int) -> np.ndarray:
    """L_k = sum_{i != k} W_i + sum_i V_i."""
    return W.sum(axis=0) - W[k] + V.sum(axis=0)


def compute_sinrs_lifted(ch: ChannelSet, W, V, Q_hat, noise_user=1.0, noise_eve=1.0):
    """Trace form of the SINRs, using lifted W, V and Q_hat."""
    K = W.shape[0]
    Hu, He = ch.H_users, ch.H_eves
    J = He.shape[0]
    gu = np.zeros(K)
    ge = np.zeros((K, J))
    for k in range(K):
        L = interference_matrix(W, V, k)
        s = np.real(np.trace(Hu[k] @ W[k] @ Hu[k].conj().T @ Q_hat))
        i = np.real(np.trace(Hu[k] @ L @ Hu[k].conj().T @ Q_hat))
        gu[k] = s / (i + noise_user)
        for j in range(J):
            s = np.real(np.trace(He[j] @ W[k] @ He[j].conj().T @ Q_hat))
            i = np.real(np.trace(He[j] @ L @ He[j].conj().T @ Q_hat))
            ge[k, j] = s / (i + noise_eve)
    return gu, ge


def secrecy_rate(gamma_k, gamma_kj) -> float:
    """[log2(1 + gamma_k) - max_j log2(1 + gamma_kj)]^+ in bits/s/Hz."""
    gk = float(gamma_k)
    gkj = np.atleast_1d(np.asarray(gamma_kj, float))
    if gk < 0 or np.any(gkj < 0):
        raise ValueError("SINRs must be nonnegative")
    eve = np.max(np.log2(1.0 + gkj)) if gkj.size else 0.0
    return max(0.0, float(np.log2(1.0 + gk) - eve))


def secrecy_rates(g_user: np.ndarray, g_eve: np.ndarray) -> np.ndarray:
    return np.array([secrecy_rate(g_user[k], g_eve[k]) for k in range(len(g_user))])


def user_powers(state: BeamformingState) -> np.ndarray:
    """Tr(W_k) + Tr(V_k) in mW."""
    return np.sum(np.abs(state.w) ** 2, axis=1) + np.sum(np.abs(state.v) ** 2, axis=(1, 2))


def see_from_rate(rate: float, tx_power_mw: float, cfg: ScenarioConfig) -> float:
    """Secrecy rate over consumed power; denominator converted to Watts."""
    denom_mw = tx_power_mw / cfg.zeta + circuit_power(cfg)
    return rate / (denom_mw / 1000.0)


def see_values(ch: ChannelSet, state: BeamformingState, cfg: ScenarioConfig,
               noise_user: float | None = None, noise_eve: float | None = None) -> np.ndarray:
    """Per-user SEE in bits/Joule/Hz.

    Noise powers default to the config values; pass 1.0 for noise-normalized channels.
    """
    nu = cfg.noise_user_mw if noise_user is None else noise_user
    ne = cfg.noise_eve_mw if noise_eve is None else noise_eve
    gu, ge = compute_sinrs(ch, state, noise_user=nu, noise_eve=ne)
    rates = secrecy_rates(gu, ge)
    p = user_powers(state)
    return np.array([see_from_rate(rates[k], p[k], cfg) for k in range(len(rates))])


def see_value(ch, state, cfg, k, **noise) -> float:
    return float(see_values(ch, state, cfg, **noise)[k])


def min_see(ch, state, cfg, **noise) -> float:
    return float(np.min(see_values(ch, state, cfg, **noise)))


def bs_selector(b: int, M: int, B: int) -> np.ndarray:
    """Diagonal 0/1 mask picking the antennas of BS ``b``."""
    d = np.zeros(M * B)
    d[b * M:(b + 1) * M] = 1.0
    return np.diag(d)


def per_bs_power(state: BeamformingState, b: int, M: int) -> float:
    """Sum over users of beam and AN power radiated by BS ``b`` (mW)."""
    MB = state.w.shape[1]
    if not 0 <= b < MB // M:
        raise IndexError(f"BS index {b} out of range")
    sl = slice(b * M, (b + 1) * M)
    return float(np.sum(np.abs(state.w[:, sl]) ** 2) + np.sum(np.abs(state.v[:, sl, :]) ** 2))


def per_bs_powers(state: BeamformingState, M: int) -> np.ndarray:
    return np.array([per_bs_power(state, b, M) for b in range(state.w.shape[1] // M)])

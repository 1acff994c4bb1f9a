"""Independent oracles: Monte Carlo outage, quadratic-form identity, complexity counts."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, EveErrorModel, crandn
from .metrics import BeamformingState
from .scenario import ScenarioConfig


@dataclass
class OutageEstimate:
    """Empirical per-(k, j) outage with binomial standard errors."""

    prob: np.ndarray  # (K, J)
    stderr: np.ndarray  # (K, J)
    samples: int

    @property
    def max(self) -> float:
        return float(np.max(self.prob)) if self.prob.size else 0.0


def eve_vectors(ch: ChannelSet, theta: np.ndarray, h_de: np.ndarray, f_e: np.ndarray) -> np.ndarray:
    """Effective Eve vectors h = h_d + G^H diag(theta) f, so Eve receives h^H w."""
    if ch.RN == 0:
        return h_de
    return h_de + (f_e * theta) @ ch.G.conj()


MIN_OUTAGE_SAMPLES = 1000


def mc_outage(state: BeamformingState, ch_est: ChannelSet, err: EveErrorModel, r_re: float,
              samples: int = 10_000, rng: np.random.Generator | None = None,
              noise_eve: float = 1.0, chunk: int = 5000) -> OutageEstimate:
    """Fraction of error draws where log2(1 + gamma_kj) > r_re.

    Errors are drawn around the estimates ``ch_est`` with the covariances
    of ``err``; ``noise_eve`` must be in the units of ``ch_est``.
    """
    if samples < MIN_OUTAGE_SAMPLES:
        raise ValueError(f"samples must be >= {MIN_OUTAGE_SAMPLES}")
    rng = np.random.default_rng() if rng is None else rng
    K = state.w.shape[0]
    J = ch_est.h_de.shape[0]
    thr = 2.0 ** r_re - 1.0
    hits = np.zeros((K, J))
    for j in range(J):
        done = 0
        while done < samples:
            n = min(chunk, samples - done)
            dh = crandn(rng, (n, ch_est.MB)) * err.sigma_d[j]
            df = crandn(rng, (n, ch_est.RN)) * err.sigma_f[j]
            h = eve_vectors(ch_est, state.theta, ch_est.h_de[j] + dh, ch_est.f_e[j] + df)
            sig = np.abs(h.conj() @ state.w.T) ** 2  # (n, K)
            an = np.einsum("nm,kms->nks", h.conj(), state.v)
            an = np.sum(np.abs(an) ** 2, axis=(1, 2))  # (n,)
            total = sig.sum(axis=1)
            for k in range(K):
                interf = total - sig[:, k] + an
                hits[k, j] += np.count_nonzero(sig[:, k] > thr * (interf + noise_eve))
            done += n
    p = hits / samples
    return OutageEstimate(p, np.sqrt(p * (1 - p) / samples), samples)


def quadratic_form_oracle(theta_hat: np.ndarray, H: np.ndarray, w: np.ndarray):
    """(|theta_hat^H H w|^2, theta_hat^H H w w^H H^H theta_hat) computed separately."""
    theta_hat, H, w = np.asarray(theta_hat), np.asarray(H), np.asarray(w)
    if H.ndim != 2 or H.shape != (theta_hat.size, w.size):
        raise ValueError(f"H must be {(theta_hat.size, w.size)}, got {H.shape}")
    direct = abs(np.vdot(theta_hat, H @ w)) ** 2
    W = np.outer(w, w.conj())
    lifted = np.real(theta_hat.conj() @ H @ W @ H.conj().T @ theta_hat)
    return float(direct), float(lifted)


@dataclass
class ComplexityEstimate:
    which: str
    barrier: float  # Delta
    iterations: float  # sqrt(Delta) ln(1/omega)
    per_iteration: float  # n0 n1 + n0^2 n2 + n0^3
    n: tuple

    @property
    def total(self) -> float:
        return self.iterations * self.per_iteration


COMPLEXITY_PROGRAMS = ("P4", "P6", "P4_robust", "P6_robust")


def complexity_estimate(cfg: ScenarioConfig, which: str, omega: float = 1e-7) -> ComplexityEstimate:
    """Interior-point operation count of one subproblem solve."""
    B, K, J, M = cfg.num_bs, cfg.num_users, cfg.num_eves, cfg.num_antennas
    MB, RN = cfg.MB, cfg.RN
    X, X1 = MB + RN, MB + RN + 1
    if which == "P4":
        delta = B + 2 * MB * K + 3 * K + 5 * J * K
        n0 = 2 * K * M ** 2 * B ** 2
        n1 = 6 * K + 2 * B ** 3 * M ** 3 * K + 11 * J * K
        n2 = 2 * K + 2 * M ** 2 * B ** 2 * K + 7 * J * K
    elif which == "P6":
        delta = 2 + 2 * RN + 3 * K + 5 * K * J
        n0 = (RN + 1) ** 2
        n1 = 5 * K + 11 * K * J + (RN + 1) + (RN + 1) ** 3
        n2 = K + 7 * K * J + (RN + 1) + (RN + 1) ** 2
    elif which == "P4_robust":
        delta = B + 3 * K + 2 * MB * K + (10 + 3 * MB + 3 * RN) * K * J
        n0 = 2 * K * M ** 2 * B ** 2
        n1 = (6 * K + 2 * M ** 3 * B ** 3 * K + 12 * K * J + X ** 3 * K * J + 2 * X1 ** 3 * K * J
              + (X ** 2 + X) ** 2 * K * J)
        n2 = 2 * K + 8 * K * J + 2 * K * M ** 2 * B ** 2 + X ** 2 * K * J + 2 * X1 ** 2 * K * J
    elif which == "P6_robust":
        delta = 2 + 2 * RN + 3 * K + (10 + 3 * MB + 3 * RN) * K * J
        n0 = (RN + 1) ** 2
        n1 = ((RN + 1) + (RN + 1) ** 3 + 5 * K + 12 * K * J + X ** 3 * K * J + 2 * X1 ** 3 * K * J
              + (X ** 2 + X) ** 2 * K * J)
        n2 = RN + 1 + (RN + 1) ** 2 + K + 8 * K * J + 2 * X1 ** 2 * K * J + X ** 2 * K * J
    else:
        raise ValueError(f"which must be one of {COMPLEXITY_PROGRAMS}")
    if not 0 < omega < 1:
        raise ValueError("omega must lie in (0, 1)")
    iters = math.sqrt(delta) * math.log(1.0 / omega)
    return ComplexityEstimate(which, float(delta), iters, float(n0 * n1 + n0 ** 2 * n2 + n0 ** 3), (n0, n1, n2))

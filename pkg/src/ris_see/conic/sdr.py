"""Recovering vectors from lifted (relaxed) solutions."""
from __future__ import annotations

from typing import Callable

import numpy as np

DEFAULT_RANK_TOL = 1e-4
DEFAULT_TRIALS = 100


class RandomizationFailure(RuntimeError):
    pass


def _hermitian(H: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    H = np.asarray(H)
    scale = max(1.0, float(np.max(np.abs(H), initial=0.0)))
    if H.ndim != 2 or H.shape[0] != H.shape[1] or np.max(np.abs(H - H.conj().T), initial=0.0) > tol * scale:
        raise ValueError("matrix is not Hermitian")
    return (H + H.conj().T) / 2


def rank_one_ratio(H: np.ndarray) -> float:
    """lambda_2 / lambda_1 (0 for an exact rank-one matrix)."""
    lam = np.linalg.eigvalsh(_hermitian(H))[::-1]
    if lam.size < 2 or lam[0] <= 0:
        return 0.0
    return float(max(lam[1], 0.0) / lam[0])


def principal_vector(H: np.ndarray) -> np.ndarray:
    """sqrt(lambda_1) u_1, phase-normalized (largest-modulus entry real >= 0)."""
    lam, U = np.linalg.eigh(_hermitian(H))
    x = np.sqrt(max(lam[-1], 0.0)) * U[:, -1]
    i = int(np.argmax(np.abs(x)))
    if abs(x[i]) > 0:
        x = x * np.exp(-1j * np.angle(x[i]))
    return x


def extract_rank_one(H: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL):
    """Principal vector if lambda_2/lambda_1 <= rank_tol, else ``None``."""
    if rank_one_ratio(H) > rank_tol:
        return None
    return principal_vector(H)


def project_phases(x: np.ndarray) -> np.ndarray:
    """Map a lifted-phase candidate [theta; t] to unit-modulus theta_hat with t = 1."""
    x = np.asarray(x, complex)
    ang = np.angle(x)
    ang = ang - ang[-1]
    return np.exp(1j * ang)


def scale_to_power(w: np.ndarray, budgets: np.ndarray, M: int) -> np.ndarray:
    """Scale a beam vector down (never up) so each BS block meets its budget."""
    B = budgets.size
    p = np.array([np.sum(np.abs(w[b * M:(b + 1) * M]) ** 2) for b in range(B)])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(p > 0, budgets / p, np.inf)
    s = min(1.0, float(np.min(ratio)))
    return w * np.sqrt(s)


def gaussian_randomize(H: np.ndarray, feasible: Callable[[np.ndarray], bool],
                       objective: Callable[[np.ndarray], float], trials: int = DEFAULT_TRIALS,
                       rng: np.random.Generator | None = None, mode: str = "phase",
                       repair: Callable[[np.ndarray], np.ndarray] | None = None,
                       include_principal: bool = True):
    """Best feasible candidate among draws x ~ CN(0, H).

    ``mode="phase"`` projects each draw to unit modulus with a trailing 1;
    ``mode="beam"`` applies ``repair`` (e.g. per-BS power scaling). The
    principal eigenvector is added as an extra candidate unless disabled.
    Raises :class:`RandomizationFailure` if nothing is feasible.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    H = _hermitian(H)
    lam, U = np.linalg.eigh(H)
    L = U * np.sqrt(np.clip(lam, 0.0, None))
    n = H.shape[0]
    draws = L @ ((rng.standard_normal((n, trials)) + 1j * rng.standard_normal((n, trials))) / np.sqrt(2))
    candidates = [draws[:, t] for t in range(trials)]
    if include_principal:
        candidates.append(principal_vector(H))

    best, best_val = None, -np.inf
    for x in candidates:
        if mode == "phase":
            x = project_phases(x)
        elif repair is not None:
            x = repair(x)
        if not feasible(x):
            continue
        val = objective(x)
        if val > best_val:
            best, best_val = x, val
    if best is None:
        raise RandomizationFailure(f"no feasible candidate in {len(candidates)} draws")
    return best, best_val

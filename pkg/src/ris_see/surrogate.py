"""Fractional-programming and first-order surrogates shared by both algorithms.

Scalar functions evaluate each surrogate; the ``emit_*`` helpers add the
matching convex constraints to a :class:`ConicProgram`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conic import Affine, ConicProgram, concat

LN2 = math.log(2.0)


def _check_nonneg(**vals):
    for name, v in vals.items():
        if np.any(np.asarray(v) < 0):
            raise ValueError(f"{name} must be nonnegative")


def secrecy_surrogate(alpha, beta, beta_hat):
    """Concave lower bound of log2(1+alpha) - log2(1+beta), tight at beta = beta_hat."""
    _check_nonneg(alpha=alpha, beta=beta, beta_hat=beta_hat)
    return np.log2(1.0 + alpha) - np.log2(1.0 + beta_hat) - (beta - beta_hat) / ((1.0 + beta_hat) * LN2)


def log_minorant(alpha, alpha_hat):
    """Lower bound of log2(1+alpha) built from 1/(1+alpha); tight with matching slope at alpha_hat."""
    _check_nonneg(alpha=alpha, alpha_hat=alpha_hat)
    return (np.log(1.0 + alpha_hat) + 1.0 - (1.0 + alpha_hat) / (1.0 + alpha)) / LN2


def rho_update(f_value, denom):
    """Maximizer of 2 rho sqrt(f) - rho^2 denom."""
    if np.any(np.asarray(denom) <= 0):
        raise ValueError("denominator must be positive")
    _check_nonneg(f_value=f_value)
    return np.sqrt(f_value) / denom


def fp_value(f_value, denom, rho):
    """Quadratic transform 2 rho sqrt(f) - rho^2 denom."""
    _check_nonneg(f_value=f_value)
    return 2.0 * rho * np.sqrt(f_value) - rho ** 2 * denom


def bilinear_upper_bound(alpha, delta, alpha_hat, delta_hat):
    """Convex upper bound of alpha*delta; equality iff alpha/alpha_hat = delta/delta_hat."""
    if np.any(np.asarray(alpha_hat) <= 0) or np.any(np.asarray(delta_hat) <= 0):
        raise ValueError("expansion points must be positive")
    return alpha_hat / (2.0 * delta_hat) * delta ** 2 + delta_hat / (2.0 * alpha_hat) * alpha ** 2


def square_lower_bound(varsigma, varsigma_hat):
    """Tangent of varsigma^2 at varsigma_hat."""
    return 2.0 * varsigma_hat * varsigma - varsigma_hat ** 2


@dataclass
class AuxiliaryState:
    """Expansion points and multipliers of one outer iteration.

    Shapes: alpha, delta (K,); the rest (K, J). ``varpi`` is used by the
    robust subproblems only.
    """

    alpha: np.ndarray
    beta: np.ndarray
    delta: np.ndarray
    varsigma: np.ndarray
    chi: np.ndarray
    rho: np.ndarray
    z: float
    varpi: np.ndarray | None = None
    beta_prev: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# conic emitters

# lower floor on expansion points so that divisions stay finite
EXPANSION_FLOOR = 1e-9


def emit_square_le(prog: ConicProgram, terms: list, rhs: Affine, family: str, index=(), census=None):
    """sum_i (c_i x_i)^2 <= rhs as a rotated second-order cone."""
    rhs = Affine.lift(rhs).reshape(())
    u = concat([2.0 * t for t in terms] + [rhs - 1.0])
    prog.soc(rhs + 1.0, u, family=family, index=index, census=census)


def emit_bilinear(prog, alpha, delta, alpha_hat, delta_hat, signal, family, index=()):
    """Bilinear upper bound of alpha*delta kept below ``signal``."""
    a_hat = max(float(alpha_hat), EXPANSION_FLOOR)
    d_hat = max(float(delta_hat), EXPANSION_FLOOR)
    ca = math.sqrt(d_hat / (2.0 * a_hat))
    cd = math.sqrt(a_hat / (2.0 * d_hat))
    emit_square_le(prog, [ca * alpha, cd * delta], signal, family, index, census="soc")


def emit_secrecy_fp(prog: ConicProgram, k: int, alpha, beta_kj, z_k, alpha_hat: float,
                    beta_hat: float, rho: float | None, denom: Affine, t_k, j: int,
                    mode: str = "fp"):
    """Constraint chain for one (k, j) pair of the SEE objective.

    ``t_k`` is the shared variable with t_k (1 + alpha_k) >= 1. In ``fp``
    mode the result is 2 rho g - rho^2 denom >= z with g^2 <= f; in
    ``rate`` mode (secrecy-rate objective) it is f >= z.
    """
    name = f"{k}_{j}"
    f = prog.scalar(f"f_{name}")
    lin = (math.log(1.0 + alpha_hat) + 1.0 - (1.0 + alpha_hat) * t_k) / LN2
    surrogate = lin - math.log2(1.0 + beta_hat) - (beta_kj - beta_hat) / ((1.0 + beta_hat) * LN2)
    prog.ge(surrogate - f, family="C7:surrogate", index=(k, j))
    if mode == "rate":
        prog.ge(f - z_k, family="C7", index=(k, j), census="lmi")
        return
    g = prog.scalar(f"g_{name}", lb=0.0)
    emit_square_le(prog, [g], f, family="C7:sqrt", index=(k, j))
    prog.ge(2.0 * rho * g - rho ** 2 * denom - z_k, family="C7", index=(k, j), census="lmi")


def emit_log_aux(prog: ConicProgram, k: int, alpha) -> Affine:
    """t_k with t_k (1 + alpha_k) >= 1 (rotated cone)."""
    t = prog.scalar(f"t_{k}", lb=0.0)
    one_plus = 1.0 + alpha
    prog.soc(t + one_plus, concat([Affine.lift(2.0), t - one_plus]), family="C7:log", index=(k,))
    return t

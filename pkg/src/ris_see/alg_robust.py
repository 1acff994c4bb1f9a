"""Robust alternating optimization with imperfect Eve CSI.

The outage constraint is handled two ways, both active by default: a
Bernstein-type inequality (BTI) on the Gaussian error, and S-procedure
LMIs over a sphere that holds the error with probability 1 - phi. The
S-procedure chain also upper-bounds the worst-case Eve SINR that enters
the SEE objective.

Error vectors stack the direct and reflected parts,
``x_j = [h_de_j; f_e_j]``, and an Eve channel as seen by the beams is
``S x_j`` with ``S = [I, G^H diag(theta)]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammainc

from .alg_perfect import (
    IterationRecord,
    Options,
    PerfectFormulation,
    alternate,
)
from .channel import ChannelSet, EveErrorModel, noise_normalized
from .conic import Affine, ConicProgram, bmat, concat
from .metrics import BeamformingState, compute_sinrs, interference_matrix, user_powers
from .scenario import ScenarioConfig
from .surrogate import AuxiliaryState, emit_bilinear, emit_log_aux, emit_secrecy_fp

# ---------------------------------------------------------------------------
# building blocks


def build_Dk(W: np.ndarray, V: np.ndarray, k: int, r_re: float) -> np.ndarray:
    """(2^R - 1)(sum_{i != k} W_i + sum_i V_i) - W_k.

    Works for numpy stacks and for lists of affine expressions.
    """
    K = len(W)
    if not 0 <= k < K:
        raise IndexError(f"user index {k} out of range")
    a = 2.0 ** r_re - 1.0
    L = sum(W[i] for i in range(K) if i != k) + sum(V[i] for i in range(K))
    return a * L - W[k]


def sphere_radius(phi: float, dim: int, tol: float = 1e-10) -> float:
    """psi with Pr{||e||^2 <= psi^2} = 1 - phi for e ~ CN(0, I_dim).

    2 ||e||^2 is chi-square with 2 dim degrees of freedom, so psi^2 solves
    P(dim, psi^2) = 1 - phi with P the regularized lower incomplete gamma.
    """
    if not 0 < phi < 1:
        raise ValueError(f"phi must lie in (0, 1), got {phi!r}")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    target = 1.0 - phi
    lo, hi = 0.0, max(1.0, float(dim))
    while gammainc(dim, hi) < target:
        hi *= 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if gammainc(dim, mid) < target:
            lo = mid
        else:
            hi = mid
    return math.sqrt(0.5 * (lo + hi))


def ball_radius_sq(psi: float, sigma_d: float, sigma_f: float, MB: int, RN: int) -> float:
    """psi^2 * (Tr E_d + Tr E_f) / (MB + RN)."""
    return psi ** 2 * (MB * sigma_d ** 2 + RN * sigma_f ** 2) / (MB + RN)


def svd_factors(M: np.ndarray):
    """Singular triplets (x_s, o_s, v_s) of M = sum_s x_s o_s v_s^H."""
    U, s, Vh = np.linalg.svd(M)
    return s, U.T, Vh.conj()


def svd_reformulate(M: np.ndarray, Q_hat):
    """diag(theta)^H M diag(theta), written linearly in the lifted phases.

    With theta_hat = [theta; 1] and Q_hat = theta_hat theta_hat^H this is
    sum_s x_s O_s Q_hat^T V_s with O_s = [diag(o_s), 0] and
    V_s = [diag(v_s), 0]^H. ``Q_hat`` may be an array or an affine expression.
    """
    M = np.asarray(M)
    if np.max(np.abs(M - M.conj().T), initial=0.0) > 1e-9 * max(1.0, np.max(np.abs(M), initial=0.0)):
        raise ValueError("middle matrix must be Hermitian")
    n = M.shape[0]
    x, o, v = svd_factors(M)
    Qt = Q_hat.T
    out = None
    for s in range(x.size):
        if x[s] == 0:
            continue
        O = np.hstack([np.diag(o[s]), np.zeros((n, 1))])
        Vs = np.hstack([np.diag(v[s]), np.zeros((n, 1))]).conj().T
        term = x[s] * (O @ Qt @ Vs)
        out = term if out is None else out + term
    if out is None:
        out = 0.0 * (np.zeros((n, n + 1)) @ Qt @ np.zeros((n + 1, n)))
    return out


def phase_column(Q_hat):
    """theta recovered linearly from the lifted phases: [Q_hat]_{1:RN, RN+1}."""
    n = Q_hat.shape[0]
    return Q_hat[: n - 1, n - 1]


def selector(G: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """S = [I, G^H diag(theta)], mapping [h_d; f] to the effective Eve vector."""
    MB = G.shape[1]
    return np.hstack([np.eye(MB), G.conj().T * theta[None, :]])


def block_sandwich(X, G: np.ndarray, theta=None, Q_hat=None):
    """S^H X S for fixed phases, or the same matrix affine in ``Q_hat``.

    ``X`` may be an array or (with fixed phases) an affine expression.
    """
    if Q_hat is None:
        S = selector(G, np.asarray(theta))
        return S.conj().T @ X @ S
    X = np.asarray(X)
    th = phase_column(Q_hat)
    RN = G.shape[0]
    TR = th.reshape(1, RN) * (X @ G.conj().T)
    BR = svd_reformulate(G @ X @ G.conj().T, Q_hat)
    return bmat([[X, TR], [TR.conj().T, BR]])


BALLS = ("whitened", "isotropic")


@dataclass
class RobustArtifacts:
    """Per-Eve error geometry (normalized units).

    ``ball="whitened"`` bounds the standardized error e (dx = diag(scale) e)
    by ||e||^2 <= psi^2, which holds with probability 1 - phi exactly.
    ``ball="isotropic"`` bounds dx itself by the averaged-variance radius;
    both coincide when the direct and reflected error levels are equal.
    """

    x_tilde: np.ndarray  # (J, MB + RN)
    scale: np.ndarray  # (J, MB + RN) diagonal of diag(sigma_d I, sigma_f I)
    psi: float
    radius_sq: np.ndarray  # (J,) in the coordinates of ``ball_scale``
    ball_scale: np.ndarray  # (J, MB + RN) maps ball coordinates to dx
    phi: float
    r_re: float
    ball: str = "whitened"


def make_artifacts(ch: ChannelSet, err: EveErrorModel, cfg: ScenarioConfig, ball: str = "whitened") -> RobustArtifacts:
    if ball not in BALLS:
        raise ValueError(f"ball must be one of {BALLS}")
    MB, RN = ch.MB, ch.RN
    x = np.hstack([ch.h_de, ch.f_e])
    sd, sf = np.asarray(err.sigma_d), np.asarray(err.sigma_f)
    scale = np.hstack([np.repeat(sd[:, None], MB, 1), np.repeat(sf[:, None], RN, 1)])
    psi = sphere_radius(cfg.phi_outage, MB + RN)
    if ball == "whitened":
        rsq = np.full(x.shape[0], psi ** 2)
        bscale = scale
    else:
        rsq = np.array([ball_radius_sq(psi, sd[j], sf[j], MB, RN) for j in range(x.shape[0])])
        bscale = np.ones_like(scale)
    return RobustArtifacts(x, scale, psi, rsq, bscale, cfg.phi_outage, cfg.rate_redundancy, ball)


# ---------------------------------------------------------------------------
# BTI and S-procedure emitters


def bti_terms(CD, x_tilde, scale, r_re, noise=1.0):
    """A, u, c of the quadratic chance constraint for one (k, j) pair.

    ``CD`` is S^H D_k S (array or affine expression).
    """
    s = np.asarray(scale)
    A = CD * np.outer(s, s)
    u = (CD @ x_tilde) * s
    c = (x_tilde.conj() @ CD @ x_tilde).real + (2.0 ** r_re - 1.0) * noise
    return A, u, c


def bti_margin(A: np.ndarray, u: np.ndarray, c: float, phi: float) -> float:
    """Largest left-hand side of the BTI triple over the slack variables."""
    lam = np.linalg.norm(np.concatenate([A.reshape(-1, order="F"), math.sqrt(2.0) * u]))
    eps = max(0.0, -float(np.linalg.eigvalsh((A + A.conj().T) / 2)[0]))
    return float(np.real(np.trace(A)) - math.sqrt(-2.0 * math.log(phi)) * lam + math.log(phi) * eps + c)


def bti_constraints(prog: ConicProgram, A, u, c, phi: float, k: int, j: int, lam=None, eps=None):
    """Emit the BTI triple with slacks lambda, epsilon >= 0."""
    lam = prog.scalar(f"lambda_{k}_{j}") if lam is None else lam
    eps = prog.scalar(f"epsilon_{k}_{j}") if eps is None else eps
    A = Affine.lift(A)
    n = A.shape[0]
    prog.ge(A.trace().real - math.sqrt(-2.0 * math.log(phi)) * lam + math.log(phi) * eps + c,
            family="C15:lin", index=(k, j), census="lmi")
    prog.soc(lam, concat([A.vec(), math.sqrt(2.0) * Affine.lift(u)]), family="C15:soc", index=(k, j), census="soc")
    prog.lmi(eps * np.eye(n) + A, family="C15:psd", index=(k, j))
    prog.ge(eps, family="C15:eps", index=(k, j), census="lmi")
    return lam, eps


def sprocedure_lmis(C, x_tilde: np.ndarray, radius_sq: float, rhs, mult, side: str, scale=None):
    """S-procedure certificate over dx = diag(scale) e with ||e||^2 <= radius_sq.

    ``side="upper"``: (x+dx)^H C (x+dx) <= rhs for all dx.
    ``side="lower"``: (x+dx)^H C (x+dx) >= rhs for all dx.
    ``mult`` is the nonnegative multiplier; ``scale=None`` means a plain
    ball on dx. Returns the LMI block.
    """
    if radius_sq < 0:
        raise ValueError("radius must be nonnegative")
    C = Affine.lift(C)
    n = C.shape[0]
    s = np.ones(n) if scale is None else np.asarray(scale, float)
    xCx = (x_tilde.conj() @ C @ x_tilde).real
    Cx = (C @ x_tilde) * s
    C = C * np.outer(s, s)
    mult = Affine.lift(mult)
    if side == "upper":
        return bmat([[mult * np.eye(n) - C, -1.0 * Cx.reshape(n, 1)],
                     [-1.0 * Cx.conj().reshape(1, n), -radius_sq * mult - xCx + rhs]])
    if side == "lower":
        return bmat([[mult * np.eye(n) + C, Cx.reshape(n, 1)],
                     [Cx.conj().reshape(1, n), -radius_sq * mult + xCx - rhs]])
    raise ValueError("side must be 'upper' or 'lower'")


# ---------------------------------------------------------------------------
# worst case over the ball


def trs_min(P: np.ndarray, g: np.ndarray, r: float, tol: float = 1e-12):
    """min_{||d|| <= r} d^H P d + 2 Re(g^H d) for Hermitian P.

    Eigen-decomposition plus a bracketed root of the secular equation, including
    the hard case. Returns (d, value).
    """
    P = (P + P.conj().T) / 2
    lam, U = np.linalg.eigh(P)
    gt = U.conj().T @ g
    n = lam.size
    if r <= 0:
        return np.zeros(n, complex), 0.0

    def dnorm(mu):
        return math.sqrt(float(np.sum(np.abs(gt) ** 2 / (lam + mu) ** 2)))

    lmin = lam[0]
    scale = max(1.0, float(np.max(np.abs(lam))))
    # interior solution when P is PSD and the Newton step fits
    if lmin > tol * scale:
        d = -gt / lam
        if np.linalg.norm(d) <= r:
            dd = U @ d
            return dd, float(np.real(dd.conj() @ P @ dd + 2 * np.real(g.conj() @ dd)))
    mu_lo = max(0.0, -lmin)
    small = np.abs(lam + mu_lo) <= 1e-10 * scale
    hard = not np.any(np.abs(gt[small]) > 1e-12 * max(1.0, np.linalg.norm(gt))) if np.any(small) else False
    if hard:
        d = np.zeros(n, complex)
        ok = ~small
        d[ok] = -gt[ok] / (lam[ok] + mu_lo)
        rem = r ** 2 - float(np.sum(np.abs(d) ** 2))
        if rem >= 0:
            d[np.argmax(small)] += math.sqrt(rem)
            dd = U @ d
            return dd, float(np.real(dd.conj() @ P @ dd + 2 * np.real(g.conj() @ dd)))
    hi = mu_lo + max(1.0, np.linalg.norm(gt) / r) + scale
    while dnorm(hi) > r:
        hi = mu_lo + 2 * (hi - mu_lo)
    # ||d(mu)|| decreases on (mu_lo, inf); a tiny offset keeps it finite
    lo = mu_lo + 1e-13 * scale
    mu = lo if dnorm(lo) <= r else brentq(lambda m: dnorm(m) - r, lo, hi, xtol=1e-15 * scale, rtol=1e-14)
    d = -gt / (lam + mu)
    dd = U @ d
    return dd, float(np.real(dd.conj() @ P @ dd + 2 * np.real(g.conj() @ dd)))


def ball_extremes(C: np.ndarray, x: np.ndarray, radius_sq: float, scale=None):
    """(max, min) of (x+d)^H C (x+d) over d = diag(scale) e, ||e||^2 <= radius_sq."""
    r = math.sqrt(max(radius_sq, 0.0))
    s = np.ones(x.size) if scale is None else np.asarray(scale, float)
    base = float(np.real(x.conj() @ C @ x))
    b = (C @ x) * s
    Cs = C * np.outer(s, s)
    _, vmin = trs_min(Cs, b, r)
    _, vneg = trs_min(-Cs, -b, r)
    return base - vneg, base + vmin


# ---------------------------------------------------------------------------
# formulation


class RobustFormulation(PerfectFormulation):
    """Subproblems with BTI and S-procedure constraints on the Eve side."""

    robust = True

    def __init__(self, ch, cfg, opts, err: EveErrorModel, use_bti=True, use_sproc=True, ball="whitened"):
        super().__init__(ch, cfg, opts)
        self.err = err
        self.use_bti = use_bti
        self.use_sproc = use_sproc
        self.art = make_artifacts(ch, err, cfg, ball)
        self.Gm = ch.G

    # worst-case quantities -------------------------------------------------
    def _radius(self, j):
        return float(self.art.radius_sq[j]) if self.use_sproc else 0.0

    def worst_case(self, state: BeamformingState):
        """Per (k, j): (max signal, min interference + 1) over the ball."""
        W, V = state.W, state.V
        S = selector(self.Gm, state.theta) if self.RN else np.eye(self.MB)
        K, J = self.K, self.J
        smax = np.zeros((K, J))
        imin = np.zeros((K, J))
        for k in range(K):
            CW = S.conj().T @ W[k] @ S
            CL = S.conj().T @ interference_matrix(W, V, k) @ S
            for j in range(J):
                x = self.art.x_tilde[j]
                sc = self.art.ball_scale[j]
                smax[k, j] = max(ball_extremes(CW, x, self._radius(j), sc)[0], 0.0)
                imin[k, j] = max(ball_extremes(CL, x, self._radius(j), sc)[1], 0.0) + 1.0
        return smax, imin

    def eve_sinrs(self, state):
        smax, imin = self.worst_case(state)
        return smax / imin

    def bti_margins(self, state: BeamformingState) -> np.ndarray:
        W, V = state.W, state.V
        S = selector(self.Gm, state.theta) if self.RN else np.eye(self.MB)
        out = np.zeros((self.K, self.J))
        for k in range(self.K):
            CD = S.conj().T @ build_Dk(W, V, k, self.art.r_re) @ S
            for j in range(self.J):
                A, u, c = bti_terms(CD, self.art.x_tilde[j], self.art.scale[j], self.art.r_re)
                out[k, j] = bti_margin(A, u, c, self.art.phi)
        return out

    def candidate_ok(self, state):
        if not self.feasible(state):
            return False
        return not self.use_bti or bool(np.all(self.bti_margins(state) >= -1e-7))

    def expansion(self, state, objective):
        aux = super().expansion(state, objective)
        smax, imin = self.worst_case(state)
        beta = smax / imin
        aux.beta = beta
        aux.beta_prev = beta.copy()
        aux.varpi = smax
        aux.chi = imin
        aux.varsigma = np.sqrt(smax)
        aux.rho = self._rho(aux.alpha, beta, user_powers(state), objective)
        return aux

    def annotate(self, rec: IterationRecord, state):
        rec.extra["psi"] = self.art.psi
        rec.extra["bti_margin_min"] = float(np.min(self.bti_margins(state)))

    # start point ------------------------------------------------------------
    def prepare_start(self, state):
        """Shrink the starting beams until the BTI holds."""
        if not self.use_bti:
            return state
        m = self.bti_margins(state)
        if np.all(m >= 0):
            return state
        slack = 2.0 ** self.art.r_re - 1.0
        # margin(s) = s * (m - slack) + slack for a common power scale s
        lin = m - slack
        s = min(1.0, 0.9 * float(np.min(slack / -lin[lin < 0]))) if np.any(lin < 0) else 1.0
        return BeamformingState(state.w * math.sqrt(s), state.v * math.sqrt(s), state.theta)

    # robust Eve chain ---------------------------------------------------------
    def _robust_eve(self, prog, k, j, beta, CW, CL, CD, aux):
        """BTI triple plus the sphere-bounded SINR chain for one (k, j) pair."""
        art = self.art
        x = art.x_tilde[j]
        if self.use_bti:
            A, u, c = bti_terms(CD, x, art.scale[j], art.r_re)
            bti_constraints(prog, A, u, c, art.phi, k, j)
        vs = prog.scalar(f"varsigma_{k}_{j}")
        chi = prog.scalar(f"chi_{k}_{j}")
        varpi = prog.scalar(f"varpi_{k}_{j}")
        kappa = prog.scalar(f"kappa_{k}_{j}", lb=0.0)
        omega = prog.scalar(f"omega_{k}_{j}", lb=0.0)
        vh = float(aux.varsigma[k, j])
        prog.ge(2.0 * vh * vs - vh ** 2 - varpi, family="C17", index=(k, j), census="lmi")
        prog.lmi(bmat([[beta, vs], [vs, chi]]), family="C18", index=(k, j))
        r2, sc = self._radius(j), art.ball_scale[j]
        prog.lmi(sprocedure_lmis(CW, x, r2, varpi, kappa, "upper", sc), family="C19", index=(k, j))
        prog.lmi(sprocedure_lmis(CL, x, r2, chi - 1.0, omega, "lower", sc), family="C20", index=(k, j))

    def _common_vars(self, prog, objective):
        K, J = self.K, self.J
        alpha = prog.scalar("alpha", K, lb=0.0)
        beta = prog.scalar("beta", (K, J), lb=0.0)
        delta = prog.scalar("delta", K)
        zs = self._objective_vars(prog, objective)
        return alpha, beta, delta, zs

    def beam_program(self, state, aux, objective):
        K, J, MB, M = self.K, self.J, self.MB, self.M
        th = state.theta_hat
        S = selector(self.Gm, state.theta) if self.RN else np.eye(MB)
        a_u = np.einsum("n,cnm->cm", th.conj(), self.Hu)
        prog = ConicProgram()
        W = [prog.hermitian(f"W_{k}", MB, family="C5", index=(k,)) for k in range(K)]
        V = [prog.hermitian(f"V_{k}", MB, family="C6", index=(k,)) for k in range(K)]
        alpha, beta, delta, zs = self._common_vars(prog, objective)
        total_W = sum(W[1:], W[0])
        total_V = sum(V[1:], V[0])
        for b in range(self.B):
            sl = slice(b * M, (b + 1) * M)
            prog.ge(self.budgets[b] - (total_W + total_V)[sl, sl].trace().real, family="C1", index=(b,), census="lmi")
        Sh = S.conj().T
        for k in range(K):
            L = total_W - W[k] + total_V
            sig = (a_u[k] @ W[k] @ a_u[k].conj()).real
            intf = (a_u[k] @ L @ a_u[k].conj()).real
            emit_bilinear(prog, alpha[k], delta[k], aux.alpha[k], aux.delta[k], sig, family="C8", index=(k,))
            prog.ge(delta[k] - intf - 1.0, family="C9", index=(k,), census="lmi")
            den = (W[k].trace().real + V[k].trace().real) * (1.0 / (self.cfg.zeta * 1000.0)) + self.pc_mw / 1000.0
            t = emit_log_aux(prog, k, alpha[k])
            CW = Sh @ W[k] @ S
            CL = Sh @ L @ S
            CD = Sh @ build_Dk(W, V, k, self.art.r_re) @ S
            for j in range(J):
                emit_secrecy_fp(prog, k, alpha[k], beta[k, j], zs[k], aux.alpha[k], aux.beta[k, j],
                                aux.rho[k, j], den, t, j, mode=self._fp_mode(objective))
                self._robust_eve(prog, k, j, beta[k, j], CW, CL, CD, aux)
        return prog

    def phase_program(self, state, aux, objective):
        K, J, n = self.K, self.J, self.RN + 1
        W, V = state.W, state.V
        prog = ConicProgram()
        Q = prog.hermitian("Q", n, family="C14")
        for m in range(n):
            prog.eq(Q[m, m] - 1.0, family="C13", index=(m,), census="lmi")
        alpha, beta, delta, zs = self._common_vars(prog, objective)
        powers = user_powers(state)
        for k in range(K):
            L = interference_matrix(W, V, k)
            Hw = self.Hu[k] @ W[k] @ self.Hu[k].conj().T
            Hl = self.Hu[k] @ L @ self.Hu[k].conj().T
            emit_bilinear(prog, alpha[k], delta[k], aux.alpha[k], aux.delta[k], (Hw @ Q).trace().real,
                          family="C8", index=(k,))
            prog.ge(delta[k] - (Hl @ Q).trace().real - 1.0, family="C9", index=(k,), census="lmi")
            den = float(self.denom_w(powers[k]))
            t = emit_log_aux(prog, k, alpha[k])
            CW = block_sandwich(W[k], self.Gm, Q_hat=Q)
            CL = block_sandwich(L, self.Gm, Q_hat=Q)
            CD = block_sandwich(build_Dk(W, V, k, self.art.r_re), self.Gm, Q_hat=Q)
            for j in range(J):
                emit_secrecy_fp(prog, k, alpha[k], beta[k, j], zs[k], aux.alpha[k], aux.beta[k, j],
                                aux.rho[k, j], den, t, j, mode=self._fp_mode(objective))
                self._robust_eve(prog, k, j, beta[k, j], CW, CL, CD, aux)
        return prog


def run_algorithm2(ch: ChannelSet, err: EveErrorModel | None, cfg: ScenarioConfig, opts: Options | None = None,
                   use_bti: bool = True, use_sproc: bool = True, normalized: bool = False,
                   ball: str = "whitened"):
    """Robust max-min SEE from Eve channel estimates.

    ``err`` is in the same units as ``ch``; ``None`` derives it from the
    configured error level. Returns (state, trace) like the perfect-CSI run.
    """
    opts = opts or Options()
    chn = ch if normalized else noise_normalized(ch, cfg)
    if err is None:
        err = EveErrorModel.from_sigma_bar(chn, cfg.sigma_bar)
    elif not normalized:
        err = err.scaled(1.0 / math.sqrt(cfg.noise_eve_mw))
    form = RobustFormulation(chn, cfg, opts, err, use_bti=use_bti, use_sproc=use_sproc, ball=ball)
    return alternate(form, opts)


def build_robust_beamforming_subproblem(ch, err, state, aux, cfg, objective="maxmin_see", **flags) -> ConicProgram:
    """Standalone builder; ``ch`` and ``err`` noise-normalized."""
    form = RobustFormulation(ch, cfg, Options(objective=objective), err, **flags)
    return form.beam_program(state, aux, objective)


def build_robust_phase_subproblem(ch, err, state, aux, cfg, objective="maxmin_see", **flags) -> ConicProgram:
    form = RobustFormulation(ch, cfg, Options(objective=objective), err, **flags)
    return form.phase_program(state, aux, objective)


def robust_expansion_point(ch, err, state, cfg, objective="maxmin_see", **flags) -> AuxiliaryState:
    form = RobustFormulation(ch, cfg, Options(objective=objective), err, **flags)
    return form.expansion(state, objective)

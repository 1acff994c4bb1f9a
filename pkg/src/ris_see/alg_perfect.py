"""Alternating optimization under perfect CSI.

Each outer iteration solves the beamforming subproblem (W, V with the
phases fixed) and then the phase subproblem (lifted phases with W, V
fixed), recovering vectors after each solve. All channels handed to the
builders are noise-normalized, so both noise powers equal 1 inside.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelSet, link_rng, noise_normalized
from .conic import (
    ConicProgram,
    RandomizationFailure,
    SolverError,
    bmat,
    extract_rank_one,
    gaussian_randomize,
    principal_vector,
    project_phases,
    rank_one_ratio,
    solve,
)
from .metrics import BeamformingState, compute_sinrs, effective_rows, interference_matrix, user_powers
from .scenario import ScenarioConfig, circuit_power
from .surrogate import (
    EXPANSION_FLOOR,
    AuxiliaryState,
    emit_bilinear,
    emit_log_aux,
    emit_secrecy_fp,
    rho_update,
)

OBJECTIVES = ("maxmin_see", "sum_see", "maxmin_sr")


@dataclass
class Options:
    tau: float = 1e-3
    max_iters: int = 30
    min_iters: int = 1
    trials: int = 100
    rank_tol: float = 1e-4
    solver_tol: float = 1e-7
    backend: str = "cvxopt"
    objective: str = "maxmin_see"
    phase_one_iters: int = 5
    inner_iters: int = 4
    init_load: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.tau <= 0 or self.max_iters < 1 or self.trials < 1 or self.inner_iters < 1:
            raise ValueError("tau, max_iters, inner_iters and trials must be positive")


@dataclass
class IterationRecord:
    iter: int
    z_p4: float
    z_p6: float
    z: float
    min_see_true: float
    see: list
    status_p4: str
    status_p6: str
    rank_w: float
    rank_q: float
    secs: float
    extra: dict = field(default_factory=dict)


@dataclass
class IterationTrace:
    records: list = field(default_factory=list)
    status: str = "running"
    z0: float = float("nan")
    phase_one: int = 0

    @property
    def z(self) -> np.ndarray:
        return np.array([r.z for r in self.records])

    @property
    def iterations(self) -> int:
        return len(self.records)

    def to_csv(self, extra_columns=()) -> str:
        cols = ["iter", "z_p4", "z_p6", "min_see_true", "status_p4", "status_p6", "secs", *extra_columns]
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(cols)
        for r in self.records:
            row = [r.iter, _fmt(r.z_p4), _fmt(r.z_p6), _fmt(r.min_see_true), r.status_p4, r.status_p6, _fmt(r.secs)]
            row += [_fmt(r.extra.get(c, float("nan"))) for c in extra_columns]
            wr.writerow(row)
        return buf.getvalue()


def _fmt(x) -> str:
    return f"{x:.10g}" if isinstance(x, (float, np.floating, int)) else str(x)


class InfeasibleStart(RuntimeError):
    """No starting point with positive secrecy margins could be found."""


# ---------------------------------------------------------------------------
# problem context


class PerfectFormulation:
    """Builders and metrics for the perfect-CSI subproblems."""

    robust = False

    def __init__(self, ch: ChannelSet, cfg: ScenarioConfig, opts: Options):
        self.ch = ch  # noise-normalized
        self.cfg = cfg
        self.opts = opts
        self.B, self.R, self.K, self.J, self.M, self.N = ch.dims
        self.MB, self.RN = ch.MB, ch.RN
        self.Hu = ch.H_users
        self.He = ch.H_eves
        self.pc_mw = circuit_power(cfg)
        self.budgets = np.full(self.B, cfg.p_max_mw)

    # metrics ------------------------------------------------------------
    def denom_w(self, power_mw):
        """Consumed power in W for a user's transmit power in mW."""
        return (np.asarray(power_mw) / self.cfg.zeta + self.pc_mw) / 1000.0

    def eve_sinrs(self, state: BeamformingState) -> np.ndarray:
        return compute_sinrs(self.ch, state)[1]

    def gaps(self, state: BeamformingState) -> np.ndarray:
        """Per (k, j) rate gaps log2(1 + gamma_k) - log2(1 + gamma_kj)."""
        gu = compute_sinrs(self.ch, state)[0]
        ge = self.eve_sinrs(state)
        return np.log2(1.0 + gu)[:, None] - np.log2(1.0 + ge)

    def see(self, state: BeamformingState) -> np.ndarray:
        rates = np.clip(self.gaps(state).min(axis=1), 0.0, None)
        return rates / self.denom_w(user_powers(state))

    def metric(self, state: BeamformingState, objective: str | None = None) -> float:
        objective = objective or self.opts.objective
        if objective == "maxmin_sr":
            return float(np.min(self.gaps(state)))
        see = self.see(state)
        return float(np.sum(see) if objective == "sum_see" else np.min(see))

    def feasible(self, state: BeamformingState, slack: float = 1e-6) -> bool:
        return bool(np.all(self.bs_powers(state) <= self.budgets * (1 + 1e-9) + slack))

    def bs_powers(self, state: BeamformingState) -> np.ndarray:
        M = self.M
        return np.array([
            np.sum(np.abs(state.w[:, b * M:(b + 1) * M]) ** 2) + np.sum(np.abs(state.v[:, b * M:(b + 1) * M]) ** 2)
            for b in range(self.B)
        ])

    # expansion points ---------------------------------------------------
    def expansion(self, state: BeamformingState, objective: str) -> AuxiliaryState:
        th = state.theta_hat
        a_u = effective_rows(self.Hu, th)
        a_e = effective_rows(self.He, th)
        W, V = state.W, state.V
        K, J = self.K, self.J
        alpha = np.zeros(K)
        delta = np.zeros(K)
        beta = np.zeros((K, J))
        chi = np.zeros((K, J))
        vs = np.zeros((K, J))
        for k in range(K):
            L = interference_matrix(W, V, k)
            s = np.real(a_u[k] @ W[k] @ a_u[k].conj())
            i = np.real(a_u[k] @ L @ a_u[k].conj())
            alpha[k] = s / (i + 1.0)
            delta[k] = i + 1.0
            for j in range(J):
                se = np.real(a_e[j] @ W[k] @ a_e[j].conj())
                ie = np.real(a_e[j] @ L @ a_e[j].conj())
                beta[k, j] = se / (ie + 1.0)
                chi[k, j] = beta[k, j] * ie
                vs[k, j] = math.sqrt(max(chi[k, j], 0.0))
        rho = self._rho(alpha, beta, user_powers(state), objective)
        return AuxiliaryState(alpha, beta, delta, vs, chi, rho, self.metric(state, objective), beta_prev=beta.copy())

    def _rho(self, alpha, beta, powers, objective):
        gap = np.log2(1 + alpha)[:, None] - np.log2(1 + beta)
        if objective == "maxmin_sr":
            return np.zeros_like(gap)
        den = self.denom_w(powers)
        return rho_update(np.clip(gap, 0.0, None), den[:, None])

    # subproblem builders --------------------------------------------------
    def _objective_vars(self, prog: ConicProgram, objective: str):
        if objective == "sum_see":
            z = prog.scalar("z", self.K)
            prog.maximize(z.sum())
            return [z[k] for k in range(self.K)]
        z = prog.scalar("z")
        prog.maximize(z)
        return [z] * self.K

    def _fp_mode(self, objective):
        return "rate" if objective == "maxmin_sr" else "fp"

    def beam_program(self, state: BeamformingState, aux: AuxiliaryState, objective: str) -> ConicProgram:
        """Beamforming and AN subproblem with the phases fixed."""
        K, J, MB, M = self.K, self.J, self.MB, self.M
        th = state.theta_hat
        a_u = effective_rows(self.Hu, th)
        a_e = effective_rows(self.He, th)
        prog = ConicProgram()
        W = [prog.hermitian(f"W_{k}", MB, family="C5", index=(k,)) for k in range(K)]
        V = [prog.hermitian(f"V_{k}", MB, family="C6", index=(k,)) for k in range(K)]
        alpha = prog.scalar("alpha", K, lb=0.0)
        beta = prog.scalar("beta", (K, J), lb=0.0)
        delta = prog.scalar("delta", K)
        vs = prog.scalar("varsigma", (K, J))
        chi = prog.scalar("chi", (K, J))
        zs = self._objective_vars(prog, objective)

        total_W = sum(W[1:], W[0])
        total_V = sum(V[1:], V[0])
        for b in range(self.B):
            sl = slice(b * M, (b + 1) * M)
            load = (total_W + total_V)[sl, sl].trace().real
            prog.ge(self.budgets[b] - load, family="C1", index=(b,), census="lmi")

        for k in range(K):
            L = total_W - W[k] + total_V
            sig = (a_u[k] @ W[k] @ a_u[k].conj()).real
            intf = (a_u[k] @ L @ a_u[k].conj()).real
            emit_bilinear(prog, alpha[k], delta[k], aux.alpha[k], aux.delta[k], sig, family="C8", index=(k,))
            prog.ge(delta[k] - intf - 1.0, family="C9", index=(k,), census="lmi")
            den = (W[k].trace().real + V[k].trace().real) * (1.0 / (self.cfg.zeta * 1000.0)) + self.pc_mw / 1000.0
            t = emit_log_aux(prog, k, alpha[k])
            for j in range(J):
                se = (a_e[j] @ W[k] @ a_e[j].conj()).real
                ie = (a_e[j] @ L @ a_e[j].conj()).real
                emit_secrecy_fp(prog, k, alpha[k], beta[k, j], zs[k], aux.alpha[k], aux.beta[k, j],
                                aux.rho[k, j], den, t, j, mode=self._fp_mode(objective))
                self._eve_chain(prog, k, j, beta[k, j], vs[k, j], chi[k, j], se, ie, aux)
        return prog

    def _eve_chain(self, prog, k, j, beta, vs, chi, se, ie, aux):
        """Eve SINR upper bound: se - beta <= chi <= tangent(vs^2) and vs^2 <= beta * ie."""
        prog.lmi(bmat([[beta, vs], [vs, ie]]), family="C10", index=(k, j))
        prog.ge(2.0 * aux.varsigma[k, j] * vs - aux.varsigma[k, j] ** 2 - chi, family="C11", index=(k, j), census="lmi")
        prog.ge(chi - se + beta, family="C12", index=(k, j), census="lmi")

    def phase_program(self, state: BeamformingState, aux: AuxiliaryState, objective: str) -> ConicProgram:
        """Lifted phase subproblem with beams and AN fixed."""
        K, J, n = self.K, self.J, self.RN + 1
        W, V = state.W, state.V
        prog = ConicProgram()
        Q = prog.hermitian("Q", n, family="C14")
        for m in range(n):
            prog.eq(Q[m, m] - 1.0, family="C13", index=(m,), census="lmi")
        alpha = prog.scalar("alpha", K, lb=0.0)
        beta = prog.scalar("beta", (K, J), lb=0.0)
        delta = prog.scalar("delta", K)
        vs = prog.scalar("varsigma", (K, J))
        chi = prog.scalar("chi", (K, J))
        zs = self._objective_vars(prog, objective)
        powers = user_powers(state)
        for k in range(K):
            L = interference_matrix(W, V, k)
            Hw = self.Hu[k] @ W[k] @ self.Hu[k].conj().T
            Hl = self.Hu[k] @ L @ self.Hu[k].conj().T
            emit_bilinear(prog, alpha[k], delta[k], aux.alpha[k], aux.delta[k], _tr(Hw, Q), family="C8", index=(k,))
            prog.ge(delta[k] - _tr(Hl, Q) - 1.0, family="C9", index=(k,), census="lmi")
            den = float(self.denom_w(powers[k]))
            t = emit_log_aux(prog, k, alpha[k])
            for j in range(J):
                Hew = self.He[j] @ W[k] @ self.He[j].conj().T
                Hel = self.He[j] @ L @ self.He[j].conj().T
                emit_secrecy_fp(prog, k, alpha[k], beta[k, j], zs[k], aux.alpha[k], aux.beta[k, j],
                                aux.rho[k, j], den, t, j, mode=self._fp_mode(objective))
                self._eve_chain(prog, k, j, beta[k, j], vs[k, j], chi[k, j], _tr(Hew, Q), _tr(Hel, Q), aux)
        return prog

    # recovery -------------------------------------------------------------
    def beams_from(self, sol, state: BeamformingState, rng, objective: str):
        """Best feasible beam set drawn from the relaxed W; AN kept as covariance."""
        K, MB = self.K, self.MB
        Ws = [sol.values[f"W_{k}"] for k in range(K)]
        Vs = np.array([sol.values[f"V_{k}"] for k in range(K)])
        base = BeamformingState.from_lifted(np.zeros((K, MB)), Vs, state.theta)
        ratio = max(rank_one_ratio(Wk) for Wk in Ws)
        principal = np.array([principal_vector(Wk) for Wk in Ws])
        cands = [principal]
        if ratio > self.opts.rank_tol:
            chol = []
            for Wk in Ws:
                lam, U = np.linalg.eigh((Wk + Wk.conj().T) / 2)
                chol.append(U * np.sqrt(np.clip(lam, 0, None)))
            for _ in range(self.opts.trials):
                g = (rng.standard_normal((K, MB)) + 1j * rng.standard_normal((K, MB))) / math.sqrt(2)
                cands.append(np.array([chol[k] @ g[k] for k in range(K)]))
        best, best_val = None, -np.inf
        for w in cands:
            cand = self._scale_to_budget(BeamformingState(w, base.v, state.theta))
            if not self.candidate_ok(cand):
                continue
            val = self.metric(cand, objective)
            if val > best_val:
                best, best_val = cand, val
        if best is None:
            raise RandomizationFailure("no feasible beam candidate")
        return best, ratio

    def candidate_ok(self, state: BeamformingState) -> bool:
        return self.feasible(state)

    def _scale_to_budget(self, state: BeamformingState) -> BeamformingState:
        p = self.bs_powers(state)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(p > 0, self.budgets / p, np.inf)
        s = min(1.0, float(np.min(r)))
        if s >= 1.0:
            return state
        s = math.sqrt(s * (1 - 1e-12))
        return BeamformingState(state.w * s, state.v * s, state.theta)

    def phases_from(self, sol, state: BeamformingState, rng, objective: str):
        Q = sol.values["Q"]
        ratio = rank_one_ratio(Q)
        x = extract_rank_one(Q, self.opts.rank_tol)
        if x is not None:
            cand = state.with_theta(project_phases(x)[:-1])
            if self.candidate_ok(cand):
                return cand, ratio
        theta_hat, _ = gaussian_randomize(
            Q,
            feasible=lambda t: self.candidate_ok(state.with_theta(t[:-1])),
            objective=lambda t: self.metric(state.with_theta(t[:-1]), objective),
            trials=self.opts.trials,
            rng=rng,
            mode="phase",
        )
        return state.with_theta(theta_hat[:-1]), ratio

    # initialization -------------------------------------------------------
    def initial_state(self, rng) -> BeamformingState:
        K, MB = self.K, self.MB
        theta = np.exp(1j * rng.uniform(0, 2 * np.pi, self.RN))
        th = np.append(theta, 1.0)
        a_u = effective_rows(self.Hu, th)
        a_e = effective_rows(self.He, th)
        if MB > self.J:
            E = a_e  # Eve j receives a_e[j] @ w
            P = np.eye(MB) - np.linalg.pinv(E) @ E
        else:
            P = np.eye(MB)
        w = np.array([P @ a_u[k].conj() for k in range(K)])
        for k in range(K):
            nrm = np.linalg.norm(w[k])
            if nrm < 1e-12 * max(np.linalg.norm(a_u[k]), 1e-300):
                w[k] = a_u[k].conj()
                nrm = np.linalg.norm(w[k])
            w[k] = w[k] / max(nrm, 1e-300)
        state = BeamformingState(w, np.zeros((K, MB, 1), complex), theta)
        load = self.bs_powers(state)
        s = self.opts.init_load * float(np.min(self.budgets / np.maximum(load, 1e-300)))
        return BeamformingState(w * math.sqrt(s), state.v, theta)

    def prepare_start(self, state: BeamformingState) -> BeamformingState:
        return state

    def annotate(self, rec: IterationRecord, state: BeamformingState) -> None:
        pass


def _tr(Hbar: np.ndarray, Q) -> object:
    """Re Tr(Hbar Q) as an affine expression."""
    return (Hbar @ Q).trace().real


# ---------------------------------------------------------------------------
# alternating loop


def _solve(prog, opts):
    return solve(prog, tol=opts.solver_tol, backend=opts.backend)


def _step(form, state, objective, opts, rng, which):
    """One subproblem solve plus recovery; returns (state, z_relaxed, status, ratio)."""
    aux = form.expansion(state, objective)
    prog = form.beam_program(state, aux, objective) if which == "beam" else form.phase_program(state, aux, objective)
    sol = _solve(prog, opts)
    if not sol.ok:
        return state, float("nan"), sol.status, float("nan")
    try:
        if which == "beam":
            new, ratio = form.beams_from(sol, state, rng, objective)
        else:
            new, ratio = form.phases_from(sol, state, rng, objective)
    except RandomizationFailure:
        return state, sol.objective, "randomization-failure", float("nan")
    # monotone safeguard against lossy recovery
    if form.metric(new, objective) < form.metric(state, objective):
        new = state
    return new, sol.objective, sol.status, ratio


def _subproblem(form, state, objective, opts, rng, which):
    """Re-expand and re-solve one subproblem until its own gain drops below tau."""
    z_rel, status, ratio = float("nan"), "skipped", float("nan")
    for _ in range(opts.inner_iters):
        before = form.metric(state, objective)
        state, z_rel, status, ratio = _step(form, state, objective, opts, rng, which)
        if status not in ("optimal", "inaccurate") or form.metric(state, objective) - before <= opts.tau:
            break
    return state, z_rel, status, ratio


def _phase_one(form, state, opts, rng, trace):
    """Raise every secrecy margin above zero with a few max-min rate passes."""
    margin = 1e-6
    for _ in range(opts.phase_one_iters):
        if np.min(form.gaps(state)) > margin:
            return state
        trace.phase_one += 1
        state, _, _, _ = _step(form, state, "maxmin_sr", opts, rng, "beam")
        if form.RN:
            state, _, _, _ = _step(form, state, "maxmin_sr", opts, rng, "phase")
    if np.min(form.gaps(state)) > margin:
        return state
    raise InfeasibleStart("could not reach positive secrecy margins for every user/Eve pair")


def alternate(form: PerfectFormulation, opts: Options, state: BeamformingState | None = None):
    """Shared outer loop for both algorithms."""
    rng = link_rng(opts.seed, "mc", 99)
    trace = IterationTrace()
    if state is None:
        state = form.initial_state(rng)
    state = form.prepare_start(state)
    objective = opts.objective
    if objective != "maxmin_sr":
        state = _phase_one(form, state, opts, rng, trace)
    z_prev = form.metric(state, objective)
    trace.z0 = z_prev
    trace.status = "max_iters"
    for it in range(1, opts.max_iters + 1):
        t0 = time.perf_counter()
        state, z4, st4, r_w = _subproblem(form, state, objective, opts, rng, "beam")
        if form.RN:
            state, z6, st6, r_q = _subproblem(form, state, objective, opts, rng, "phase")
        else:
            z6, st6, r_q = float("nan"), "skipped", 0.0
        z = form.metric(state, objective)
        see = form.see(state)
        rec = IterationRecord(it, z4, z6, z, float(np.min(see)), see.tolist(), st4, st6, r_w, r_q,
                              time.perf_counter() - t0)
        form.annotate(rec, state)
        trace.records.append(rec)
        failed = st4 not in ("optimal", "inaccurate") and st6 not in ("optimal", "inaccurate", "skipped")
        if failed:
            trace.status = "solver-failure"
            break
        if z - z_prev <= opts.tau:
            trace.status = "converged"
            if it >= opts.min_iters:
                break
        else:
            trace.status = "max_iters"
        z_prev = z
    return state, trace


def run_algorithm1(ch: ChannelSet, cfg: ScenarioConfig, opts: Options | None = None,
                   normalized: bool = False):
    """Max-min SEE under perfect CSI.

    ``ch`` holds physical channels unless ``normalized`` is set. Returns the
    final :class:`BeamformingState` (valid for the normalized channels and
    for the physical ones alike) and the :class:`IterationTrace`.
    """
    opts = opts or Options()
    chn = ch if normalized else noise_normalized(ch, cfg)
    form = PerfectFormulation(chn, cfg, opts)
    return alternate(form, opts)


def build_beamforming_subproblem(ch: ChannelSet, theta_hat, aux: AuxiliaryState, cfg: ScenarioConfig,
                                 objective: str = "maxmin_see", opts: Options | None = None) -> ConicProgram:
    """Standalone builder; ``ch`` must be noise-normalized."""
    form = PerfectFormulation(ch, cfg, opts or Options(objective=objective))
    K, MB = form.K, form.MB
    dummy = BeamformingState(np.zeros((K, MB)), np.zeros((K, MB, 1)), np.asarray(theta_hat)[:-1])
    return form.beam_program(dummy, aux, objective)


def build_phase_subproblem(ch: ChannelSet, state: BeamformingState, aux: AuxiliaryState, cfg: ScenarioConfig,
                           objective: str = "maxmin_see", opts: Options | None = None) -> ConicProgram:
    form = PerfectFormulation(ch, cfg, opts or Options(objective=objective))
    return form.phase_program(state, aux, objective)


def expansion_point(ch: ChannelSet, state: BeamformingState, cfg: ScenarioConfig,
                    objective: str = "maxmin_see") -> AuxiliaryState:
    form = PerfectFormulation(ch, cfg, Options(objective=objective))
    return form.expansion(state, objective)

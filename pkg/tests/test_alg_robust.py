import math

import numpy as np
import pytest
from scipy.stats import chi2

from ris_see.alg_perfect import InfeasibleStart, Options, PerfectFormulation, run_algorithm1
from ris_see.alg_robust import (
    RobustFormulation, ball_extremes, ball_radius_sq, block_sandwich, bti_constraints, bti_margin,
    bti_terms, build_Dk, build_robust_beamforming_subproblem, build_robust_phase_subproblem,
    make_artifacts, phase_column, robust_expansion_point, run_algorithm2, selector, sphere_radius,
    sprocedure_lmis, svd_reformulate, trs_min,
)
from ris_see.channel import EveErrorModel, link_rng, noise_normalized, sample_channels
from ris_see.conic import ConicProgram, solve
from ris_see.metrics import per_bs_powers
from ris_see.validate import mc_outage

from conftest import crand, rand_herm

PHI = 0.1


def uniform_ball(rng, n, r, count, boundary=False):
    """Uniform samples of the complex n-ball of radius r (or its sphere)."""
    g = rng.standard_normal((count, 2 * n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    rad = r if boundary else r * rng.uniform(size=(count, 1)) ** (1.0 / (2 * n))
    g = g * rad
    return g[:, :n] + 1j * g[:, n:]


def quad(C, x, d):
    y = x[None, :] + d
    return np.real(np.einsum("ni,ij,nj->n", y.conj(), C, y))


# ---------------------------------------------------------------------------
# D_k


def test_build_Dk_trivial():
    rng = np.random.default_rng(0)
    W = np.array([rand_herm(rng, 3, psd=True)])
    V = np.zeros_like(W)
    np.testing.assert_allclose(build_Dk(W, V, 0, 0.5), -W[0])
    W2 = np.array([rand_herm(rng, 3, psd=True) for _ in range(2)])
    V2 = np.array([rand_herm(rng, 3, psd=True) for _ in range(2)])
    np.testing.assert_allclose(build_Dk(W2, V2, 1, 0.0), -W2[1])
    with pytest.raises(IndexError):
        build_Dk(W2, V2, 2, 0.5)


def test_build_Dk_rate_threshold():
    rng = np.random.default_rng(1)
    K, n, r_re, noise = 3, 4, 0.5, 0.7
    W = np.array([rand_herm(rng, n, psd=True) for _ in range(K)])
    V = np.array([rand_herm(rng, n, psd=True) * 0.2 for _ in range(K)])
    for k in range(K):
        D = build_Dk(W, V, k, r_re)
        assert np.allclose(D, D.conj().T)
        L = W.sum(0) - W[k] + V.sum(0)
        for _ in range(100):
            h = crand(rng, n) * rng.uniform(0.1, 3)
            gamma = np.real(h.conj() @ W[k] @ h) / (np.real(h.conj() @ L @ h) + noise)
            lhs = np.real(h.conj() @ D @ h) + (2 ** r_re - 1) * noise
            assert (lhs >= 0) == (math.log2(1 + gamma) <= r_re)


# ---------------------------------------------------------------------------
# sphere bounding


def test_sphere_radius_two_dof():
    psi = sphere_radius(PHI, 1)
    assert psi ** 2 == pytest.approx(-math.log(PHI), abs=1e-10)
    assert psi == pytest.approx(math.sqrt(0.5 * -2 * math.log(0.1)), abs=1e-10)
    assert psi == pytest.approx(1.51743, abs=1e-5)


def test_sphere_radius_matches_chi2():
    for dim in (1, 3, 12, 40):
        for phi in (0.01, 0.1, 0.5):
            assert sphere_radius(phi, dim) == pytest.approx(math.sqrt(0.5 * chi2.ppf(1 - phi, 2 * dim)), rel=1e-9)


def test_sphere_radius_limits_and_errors():
    assert sphere_radius(1 - 1e-9, 4) < sphere_radius(0.5, 4) < sphere_radius(0.1, 4)
    assert sphere_radius(1 - 1e-12, 1) < 1e-5
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            sphere_radius(bad, 3)
    with pytest.raises(ValueError):
        sphere_radius(0.1, 0)


def test_sphere_radius_monte_carlo_dim12():
    rng = np.random.default_rng(2)
    norms = np.concatenate([np.linalg.norm(crand(rng, 200_000, 12), axis=1) for _ in range(5)])
    q = np.quantile(norms, 1 - PHI)
    assert abs(sphere_radius(PHI, 12) / q - 1) < 0.01


def test_ball_radius_formula():
    assert ball_radius_sq(2.0, 0.1, 0.1, 4, 8) == pytest.approx(4 * 0.01)
    assert ball_radius_sq(2.0, 0.1, 0.2, 4, 8) == pytest.approx(4 * (4 * 0.01 + 8 * 0.04) / 12)


# ---------------------------------------------------------------------------
# BTI


def min_c_program(A, u, phi=PHI):
    prog = ConicProgram()
    c = prog.scalar("c")
    bti_constraints(prog, A, u, c, phi, 0, 0)
    prog.maximize(-c)
    sol = solve(prog)
    assert sol.status == "optimal"
    return float(sol.values["c"])


def test_bti_trivial():
    assert bti_margin(np.zeros((2, 2)), np.zeros(2), 1.0, PHI) == pytest.approx(1.0)
    prog = ConicProgram()
    lam, eps = bti_constraints(prog, np.zeros((2, 2)), np.zeros(2), 1.0, PHI, 0, 0)
    prog.maximize(-lam - eps)
    sol = solve(prog)
    assert sol.status == "optimal"
    assert abs(sol.objective) < 1e-6


def test_bti_identity_threshold():
    expected = math.sqrt(-2 * math.log(PHI)) * math.sqrt(2) - 2
    assert expected == pytest.approx(1.0350, abs=5e-4)
    assert min_c_program(np.eye(2), np.zeros(2)) == pytest.approx(expected, abs=1e-6)
    assert bti_margin(np.eye(2), np.zeros(2), expected, PHI) == pytest.approx(0.0, abs=1e-12)


def test_bti_program_matches_margin():
    rng = np.random.default_rng(3)
    for _ in range(5):
        A, u = rand_herm(rng, 3), crand(rng, 3)
        assert min_c_program(A, u) == pytest.approx(-bti_margin(A, u, 0.0, PHI), abs=1e-5)


def test_bti_census():
    prog = ConicProgram()
    bti_constraints(prog, np.eye(2), np.zeros(2), 1.0, PHI, 0, 0)
    # linear condition, slack sign and the shifted PSD block; one cone
    assert prog.census() == {"lmi": 3, "soc": 1}


def test_bti_monte_carlo_conservative():
    rng = np.random.default_rng(4)
    n, N = 4, 100_000
    margin = 3 * math.sqrt(PHI * (1 - PHI) / N)
    for _ in range(50):
        A = rand_herm(rng, n) * rng.uniform(0.1, 2)
        u = crand(rng, n) * rng.uniform(0, 2)
        c = -bti_margin(A, u, 0.0, PHI)  # tightest c satisfying the triple
        e = crand(rng, N, n)
        q = np.real(np.einsum("ni,ij,nj->n", e.conj(), A, e)) + 2 * np.real(e @ u.conj()) + c
        assert np.mean(q < 0) <= PHI + margin


def test_bti_terms_expand_quadratic():
    rng = np.random.default_rng(5)
    n = 5
    C, x, s = rand_herm(rng, n), crand(rng, n), rng.uniform(0.1, 1, n)
    A, u, c = bti_terms(C, x, s, 0.5)
    e = crand(rng, n)
    d = s * e
    direct = np.real((x + d).conj() @ C @ (x + d)) + (2 ** 0.5 - 1)
    assert direct == pytest.approx(np.real(e.conj() @ A @ e) + 2 * np.real(u.conj() @ e) + c, rel=1e-12)


# ---------------------------------------------------------------------------
# S-procedure


def sproc_bound(C, x, r2, side, scale=None):
    prog = ConicProgram()
    rhs = prog.scalar("rhs")
    mult = prog.scalar("mult", lb=0.0)
    prog.lmi(sprocedure_lmis(C, x, r2, rhs, mult, side, scale))
    prog.maximize(-rhs if side == "upper" else rhs)
    sol = solve(prog)
    assert sol.status == "optimal"
    return float(sol.values["rhs"])


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("side", ["upper", "lower"])
def test_sprocedure_sampling(seed, side):
    rng = np.random.default_rng(10 + seed)
    n = 4
    C, x = rand_herm(rng, n), crand(rng, n)
    r2 = rng.uniform(0.1, 2)
    rhs = sproc_bound(C, x, r2, side)
    d = np.vstack([uniform_ball(rng, n, math.sqrt(r2), 10_000),
                   uniform_ball(rng, n, math.sqrt(r2), 2_000, boundary=True)])
    q = quad(C, x, d)
    slack = 1e-6 * max(1.0, abs(rhs))
    if side == "upper":
        assert np.all(q <= rhs + slack)
    else:
        assert np.all(q >= rhs - slack)
    # the certificate is tight: it equals the exact extreme over the ball
    hi, lo = ball_extremes(C, x, r2)
    assert rhs == pytest.approx(hi if side == "upper" else lo, abs=1e-5 * max(1, abs(rhs)))


def test_sprocedure_scaled_ball():
    rng = np.random.default_rng(20)
    n = 5
    C, x, s = rand_herm(rng, n), crand(rng, n), rng.uniform(0.05, 1, n)
    r2 = 1.3
    rhs = sproc_bound(C, x, r2, "upper", s)
    d = uniform_ball(rng, n, math.sqrt(r2), 10_000) * s
    assert np.all(quad(C, x, d) <= rhs + 1e-6 * max(1, abs(rhs)))
    assert rhs == pytest.approx(ball_extremes(C, x, r2, s)[0], abs=1e-5 * max(1, abs(rhs)))


def test_sprocedure_degenerate():
    rng = np.random.default_rng(21)
    C, x = rand_herm(rng, 3, psd=True), crand(rng, 3)
    nominal = np.real(x.conj() @ C @ x)
    assert sproc_bound(C, x, 0.0, "upper") == pytest.approx(nominal, abs=1e-6)
    # C = 0 is certified with a zero multiplier for any rhs >= 0
    prog = ConicProgram()
    mult = prog.scalar("mult", lb=0.0)
    prog.lmi(sprocedure_lmis(np.zeros((3, 3)), x, 1.0, 0.0, mult, "upper"))
    prog.maximize(-mult)
    sol = solve(prog)
    assert sol.status == "optimal" and abs(sol.objective) < 1e-6
    with pytest.raises(ValueError):
        sprocedure_lmis(C, x, -1.0, 0.0, 0.0, "upper")
    with pytest.raises(ValueError):
        sprocedure_lmis(C, x, 1.0, 0.0, 0.0, "sideways")


@pytest.mark.parametrize("seed", range(20))
def test_trs_min_against_sampling(seed):
    rng = np.random.default_rng(30 + seed)
    n = 4
    P, g = rand_herm(rng, n), crand(rng, n)
    if seed % 5 == 0:
        g[:] = 0  # hard case
    r = rng.uniform(0.2, 3)
    d, val = trs_min(P, g, r)
    assert np.linalg.norm(d) <= r * (1 + 1e-9)
    assert val == pytest.approx(np.real(d.conj() @ P @ d) + 2 * np.real(g.conj() @ d), abs=1e-9)
    samples = uniform_ball(rng, n, r, 20_000, boundary=seed % 2 == 0)
    vals = np.real(np.einsum("ni,ij,nj->n", samples.conj(), P, samples)) + 2 * np.real(samples @ g.conj())
    assert val <= vals.min() + 1e-9


# ---------------------------------------------------------------------------
# SVD linearization


def test_svd_reformulate_identity():
    th = np.ones(4, complex)
    Q = np.outer(np.append(th, 1), np.append(th, 1).conj())
    np.testing.assert_allclose(svd_reformulate(np.eye(4), Q), np.eye(4), atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_svd_reformulate_exact(seed):
    rng = np.random.default_rng(40 + seed)
    n = 8
    G = crand(rng, n, 4)
    M = G @ rand_herm(rng, 4) @ G.conj().T
    th = np.exp(1j * rng.uniform(0, 2 * np.pi, n))
    Q = np.outer(np.append(th, 1), np.append(th, 1).conj())
    direct = np.diag(th).conj().T @ M @ np.diag(th)
    assert np.max(np.abs(svd_reformulate(M, Q) - direct)) <= 1e-9 * max(1, np.max(np.abs(M)))
    np.testing.assert_allclose(phase_column(Q), th, atol=1e-15)


def test_svd_reformulate_is_affine():
    rng = np.random.default_rng(50)
    M = rand_herm(rng, 3)
    prog = ConicProgram()
    Q = prog.hermitian("Q", 4)
    expr = svd_reformulate(M, Q)
    th = np.append(np.exp(1j * rng.uniform(0, 6, 3)), 1)
    Qv = np.outer(th, th.conj())
    val = expr.value(prog.pack({"Q": Qv}))
    np.testing.assert_allclose(val, svd_reformulate(M, Qv), atol=1e-12)


def test_svd_reformulate_rejects_non_hermitian():
    with pytest.raises(ValueError):
        svd_reformulate(np.array([[0, 1.0], [0, 0]]), np.eye(3))


def test_block_sandwich_exact(chn):
    rng = np.random.default_rng(51)
    X = rand_herm(rng, chn.MB)
    th = np.exp(1j * rng.uniform(0, 6, chn.RN))
    Q = np.outer(np.append(th, 1), np.append(th, 1).conj())
    direct = block_sandwich(X, chn.G, theta=th)
    S = selector(chn.G, th)
    np.testing.assert_allclose(direct, S.conj().T @ X @ S, atol=1e-12)
    lifted = block_sandwich(X, chn.G, Q_hat=Q).const
    assert np.max(np.abs(lifted - direct)) <= 1e-9 * max(1, np.max(np.abs(direct)))
    # the selector maps [h_d; f] to the effective Eve vector
    x = np.hstack([chn.h_de[0], chn.f_e[0]])
    eff = np.einsum("n,nm->m", np.append(th, 1).conj(), chn.H_eves[0]).conj()
    np.testing.assert_allclose(S @ x, eff, atol=1e-12)


# ---------------------------------------------------------------------------
# subproblems


@pytest.fixture(scope="module")
def rform(chn, cfg, err):
    return RobustFormulation(chn, cfg, Options(), err)


@pytest.fixture(scope="module")
def rstart(rform):
    return rform.prepare_start(rform.initial_state(link_rng(0, "mc", 99)))


def test_start_satisfies_bti(rform, rstart):
    assert np.all(rform.bti_margins(rstart) >= 0)
    assert rform.candidate_ok(rstart)


def test_robust_census(rform, rstart):
    aux = rform.expansion(rstart, "maxmin_see")
    # B + 3K + 8KJ and 2 + RN + K + 8KJ LMI-class; K + KJ cone-class
    assert rform.beam_program(rstart, aux, "maxmin_see").census() == {"lmi": 40, "soc": 6}
    assert rform.phase_program(rstart, aux, "maxmin_see").census() == {"lmi": 44, "soc": 6}


def test_standalone_robust_builders(chn, cfg, err, rstart):
    aux = robust_expansion_point(chn, err, rstart, cfg)
    assert build_robust_beamforming_subproblem(chn, err, rstart, aux, cfg).census()["lmi"] == 40
    assert build_robust_phase_subproblem(chn, err, rstart, aux, cfg).census()["lmi"] == 44


def test_worst_case_dominates_nominal(rform, rstart):
    nominal = PerfectFormulation.eve_sinrs(rform, rstart)
    assert np.all(rform.eve_sinrs(rstart) >= nominal - 1e-12)


def test_worst_case_holds_on_ball(rform, rstart):
    """Worst-case SINR bound holds for sampled in-ball errors."""
    rng = np.random.default_rng(60)
    art = rform.art
    beta = rform.eve_sinrs(rstart)
    S = selector(rform.Gm, rstart.theta)
    W, V = rstart.W, rstart.V
    for j in range(rform.J):
        e = uniform_ball(rng, art.x_tilde.shape[1], math.sqrt(art.radius_sq[j]), 2000)
        h = (art.x_tilde[j][None, :] + e * art.ball_scale[j]) @ S.T
        for k in range(rform.K):
            L = W.sum(0) - W[k] + V.sum(0)
            s = np.real(np.einsum("ni,ij,nj->n", h.conj(), W[k], h))
            i = np.real(np.einsum("ni,ij,nj->n", h.conj(), L, h))
            assert np.all(s / (i + 1) <= beta[k, j] * (1 + 1e-9) + 1e-12)


def test_phase_blocks_match_direct(rform, rstart):
    W = rstart.W
    Q = rstart.Q_hat
    S = selector(rform.Gm, rstart.theta)
    lifted = block_sandwich(W[0], rform.Gm, Q_hat=Q).const
    direct = S.conj().T @ W[0] @ S
    assert np.max(np.abs(lifted - direct)) <= 1e-9 * max(1, np.max(np.abs(direct)))


def test_robust_phase_unit_diagonal(rform, rstart):
    sol = solve(rform.phase_program(rstart, rform.expansion(rstart, "maxmin_see"), "maxmin_see"))
    assert sol.ok
    np.testing.assert_allclose(np.real(np.diag(sol.values["Q"])), 1.0, atol=1e-7)


def _cap_program(form, state, aux):
    """Robust beam program at zero error, with the BTI replaced by a hard rate cap."""
    prog = form.beam_program(state, aux, "maxmin_see")
    W = [prog.variables[f"W_{k}"].expr() for k in range(form.K)]
    V = [prog.variables[f"V_{k}"].expr() for k in range(form.K)]
    S = selector(form.Gm, state.theta)
    for k in range(form.K):
        D = build_Dk(W, V, k, form.art.r_re)
        for j in range(form.J):
            h = S @ form.art.x_tilde[j]
            prog.ge((h.conj() @ D @ h).real + (2 ** form.art.r_re - 1), family="cap", index=(k, j))
    return prog


def test_zero_error_reduces_to_rate_cap(chn, cfg, rstart):
    zero = EveErrorModel(np.zeros(cfg.num_eves), np.zeros(cfg.num_eves))
    robust = RobustFormulation(chn, cfg, Options(), zero)
    plain = RobustFormulation(chn, cfg, Options(), zero, use_bti=False, use_sproc=False)
    aux = robust.expansion(rstart, "maxmin_see")
    a = solve(robust.beam_program(rstart, aux, "maxmin_see"))
    b = solve(_cap_program(plain, rstart, aux))
    assert a.ok and b.ok
    assert a.objective == pytest.approx(b.objective, abs=1e-3)


def test_objective_monotone_in_phi(chn, cfg, err, rstart):
    base = RobustFormulation(chn, cfg, Options(), err)
    aux = base.expansion(rstart, "maxmin_see")
    vals = []
    for phi in (0.1, 0.3, 0.9):
        f = RobustFormulation(chn, cfg.replace(phi_outage=phi), Options(), err)
        sol = solve(f.beam_program(rstart, aux, "maxmin_see"))
        assert sol.ok
        vals.append(sol.objective)
    assert vals[0] <= vals[1] + 1e-5 and vals[1] <= vals[2] + 1e-5


def test_artifacts(chn, cfg, err):
    w = make_artifacts(chn, err, cfg)
    iso = make_artifacts(chn, err, cfg, ball="isotropic")
    assert w.psi == pytest.approx(sphere_radius(cfg.phi_outage, chn.MB + chn.RN))
    np.testing.assert_allclose(w.radius_sq, w.psi ** 2)
    for j in range(cfg.num_eves):
        assert iso.radius_sq[j] == pytest.approx(
            ball_radius_sq(w.psi, err.sigma_d[j], err.sigma_f[j], chn.MB, chn.RN))
    with pytest.raises(ValueError):
        make_artifacts(chn, err, cfg, ball="cube")


def test_balls_agree_for_equal_error_levels(chn, cfg):
    err = EveErrorModel(np.full(cfg.num_eves, 0.3), np.full(cfg.num_eves, 0.3))
    w = make_artifacts(chn, err, cfg)
    iso = make_artifacts(chn, err, cfg, ball="isotropic")
    x, C = w.x_tilde[0], np.diag(np.arange(1.0, w.x_tilde.shape[1] + 1))
    a = ball_extremes(C, x, w.radius_sq[0], w.ball_scale[0])
    b = ball_extremes(C, x, iso.radius_sq[0], iso.ball_scale[0])
    np.testing.assert_allclose(a, b, rtol=1e-9)


# ---------------------------------------------------------------------------
# full runs on a small instance


@pytest.fixture(scope="module")
def small_robust(small_cfg):
    ch = sample_channels(small_cfg, 2)
    return ch, run_algorithm2(ch, None, small_cfg)


def test_small_robust_run(small_robust, small_cfg):
    ch, (state, trace) = small_robust
    assert trace.status == "converged"
    assert trace.iterations <= 10
    assert np.all(np.diff(trace.z) >= -1e-5)
    assert np.all(per_bs_powers(state, small_cfg.num_antennas) <= small_cfg.p_max_mw + 1e-6)
    assert np.max(np.abs(np.abs(state.theta) - 1)) <= 1e-9
    assert "psi" in trace.records[0].extra
    assert trace.records[-1].extra["bti_margin_min"] >= -1e-7


def test_small_robust_outage(small_robust, small_cfg):
    ch, (state, _) = small_robust
    chn = noise_normalized(ch, small_cfg)
    err = EveErrorModel.from_sigma_bar(chn, small_cfg.sigma_bar)
    est = mc_outage(state, chn, err, small_cfg.rate_redundancy, 10_000, np.random.default_rng(0))
    assert est.max <= small_cfg.phi_outage + 0.02


def test_robust_below_perfect(small_robust, small_cfg):
    ch, (_, trace) = small_robust
    _, perfect = run_algorithm1(ch, small_cfg)
    assert trace.z[-1] <= perfect.z[-1] + 1e-6


def test_physical_error_units(small_cfg):
    ch = sample_channels(small_cfg, 2)
    chn = noise_normalized(ch, small_cfg)
    err_n = EveErrorModel.from_sigma_bar(chn, small_cfg.sigma_bar)
    err_phys = err_n.scaled(math.sqrt(small_cfg.noise_eve_mw))
    a = run_algorithm2(ch, err_phys, small_cfg, Options(max_iters=1))[1].z
    b = run_algorithm2(chn, err_n, small_cfg, Options(max_iters=1), normalized=True)[1].z
    np.testing.assert_allclose(a, b, rtol=1e-6)


def test_ablation_flags_run(small_cfg):
    ch = sample_channels(small_cfg, 2)
    for flags in ({"use_bti": False}, {"use_sproc": False}):
        _, trace = run_algorithm2(ch, None, small_cfg, Options(max_iters=2), **flags)
        assert trace.iterations >= 1


def test_isotropic_ball_too_conservative(small_cfg):
    # The averaged-variance ball is dominated by the large reflected-link error
    # and leaves no positive worst-case secrecy margin on this instance.
    with pytest.raises(InfeasibleStart):
        run_algorithm2(sample_channels(small_cfg, 2), None, small_cfg, Options(max_iters=2), ball="isotropic")

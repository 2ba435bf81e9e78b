import warnings

import numpy as np
import pytest

from isac_rsma import conic, sca as sca_mod
from isac_rsma.fim import FimConstants, fim_affine_map
from isac_rsma.sca import (
    DegenerateChannels, NonpositiveZeta, NotConverged, ScaConfig, SolverFailed, Subproblem,
    build_subproblem, consistent_slacks, extract_precoders, initialize_state, lmi_scale,
    normalized_config, principal_vector, rank_penalty, run_sca, soc_entropy_constraint,
    taylor_exp_bound,
)
from isac_rsma.signal_model import ArrayConfig, CommChannelSet, TargetSet, generate_rayleigh_channels

CFG = ArrayConfig(n_tx=4, n_rx=5, n_pulses=64, radar_noise_power=10.0, total_power=100.0)
TARGETS = TargetSet.from_degrees([45.0, 30.0], [10.0, 14.0], CFG.carrier_hz)


# ----------------------------------------------------------------- surrogates

def test_taylor_at_zero_is_one_plus_x():
    assert taylor_exp_bound(0.0) == (1.0, 1.0)


def test_taylor_tangent_and_below():
    xs = np.linspace(-10, 10, 1000)
    for p in (-3.0, 0.4, 2.0, 7.5):
        s, b = taylor_exp_bound(p)
        assert s * p + b == pytest.approx(np.exp(p), rel=1e-15)
        assert np.all(s * xs + b <= np.exp(xs) * (1 + 1e-14))


@pytest.mark.parametrize("z0", [0.5, 1.0, 10.0, 0.1, 100.0])
def test_soc_tight_at_expansion_point(z0):
    c = soc_entropy_constraint(z0)
    d, z = np.log(z0), z0
    assert abs(c.lhs(d, z) - c.rhs(d, z)) <= 1e-12 * max(1.0, z0)
    assert c.rhs(d, z) == pytest.approx(z0 + 1.0, rel=1e-14)


def test_soc_rejects_nonpositive_point():
    with pytest.raises(NonpositiveZeta):
        soc_entropy_constraint(0.0)
    with pytest.raises(NonpositiveZeta):
        soc_entropy_constraint(-2.0)


def test_soc_feasible_points_respect_entropy_bound():
    rng = np.random.default_rng(0)
    for z0 in (0.3, 1.0, 8.0):
        c = soc_entropy_constraint(z0)
        d = rng.uniform(-5, 5, 10_000)
        z = rng.uniform(1e-3, 30, 10_000)
        feas = c.lhs(d, z) <= c.rhs(d, z)
        assert feas.sum() > 100
        assert np.all(z[feas] * np.log(z[feas]) >= d[feas] * z[feas] - 1e-9)


def test_principal_vector_phase_convention():
    rng = np.random.default_rng(1)
    G = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    u = principal_vector(G @ G.conj().T)
    i = np.argmax(np.abs(u))
    assert u[i].imag == pytest.approx(0.0, abs=1e-14) and u[i].real > 0
    assert np.linalg.norm(u) == pytest.approx(1.0)


def test_rank_penalty_values():
    w = np.array([1.0, 2j, -1.0])
    W = np.outer(w, w.conj())
    _, pen = rank_penalty(W, [W], -0.1)
    assert pen(W, [W]) == pytest.approx(0.0, abs=1e-12)
    _, pen = rank_penalty(np.eye(2), [], -0.1)
    assert pen(np.eye(2), []) == pytest.approx(-0.1)
    rng = np.random.default_rng(2)
    mats = []
    for _ in range(3):
        G = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        mats.append(G @ G.conj().T)
    _, pen = rank_penalty(mats[0], mats[1:], -0.3)
    want = -0.3 * sum(np.linalg.eigvalsh(M)[:-1].sum() for M in mats)
    assert pen(mats[0], mats[1:]) == pytest.approx(want, rel=1e-12)
    with pytest.raises(ValueError):
        rank_penalty(np.eye(2), [], 0.1)


def test_extract_precoders():
    w = np.array([1.0 + 1j, -0.5, 2j])
    P, gaps = extract_precoders(np.outer(w, w.conj()), [np.outer(w, w.conj())])
    np.testing.assert_allclose(np.outer(P.common, P.common.conj()), np.outer(w, w.conj()), atol=1e-12)
    assert gaps[0] == pytest.approx(0.0, abs=1e-12)
    P, gaps = extract_precoders(np.diag([2.0, 1.0]), [np.diag([2.0, 1.0])])
    np.testing.assert_allclose(P.common, [np.sqrt(2), 0], atol=1e-15)
    assert gaps[0] == pytest.approx(0.5)


def test_extract_reconstruction_bounded_by_gap():
    rng = np.random.default_rng(3)
    for _ in range(20):
        u = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        W = np.outer(u, u.conj()) + 1e-2 * np.outer(v, v.conj())
        P, gaps = extract_precoders(W, [])
        err = np.linalg.norm(W - np.outer(P.common, P.common.conj())) / np.linalg.norm(W)
        assert err <= 2 * gaps[0] + 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        ScaConfig(rho=0.1)
    with pytest.raises(ValueError):
        ScaConfig(mu=-1.0)
    with pytest.raises(ValueError):
        ScaConfig(mode="noma")
    with pytest.raises(ValueError):
        ScaConfig(tol=0.0)


# ------------------------------------------------------------- initial point

def test_initial_state_consistent():
    ch = generate_rayleigh_channels(3, 4, 5)
    for mode in ("rsma", "sdma"):
        st = initialize_state(ch, TARGETS, CFG, mode=mode)
        R = st.covariance
        np.testing.assert_allclose(np.real(np.diag(R)), CFG.total_power / CFG.n_tx, rtol=1e-12)
        for W in [st.Wc_point, *st.Wk_points]:
            assert np.linalg.matrix_rank(W, tol=1e-9 * CFG.total_power) <= 1
        phi, delta, zeta = consistent_slacks(st.Wc_point, st.Wk_points, ch, CFG.comm_noise_power)
        np.testing.assert_allclose(st.delta_points, np.log(st.zeta_points))
        h = ch.channels
        for k in range(3):
            priv = [np.real(h[k].conj() @ W @ h[k]) for W in st.Wk_points]
            common = np.real(h[k].conj() @ st.Wc_point @ h[k])
            noise = CFG.comm_noise_power
            assert np.exp(st.phi_points[0, k]) == pytest.approx(sum(priv) + noise)
            assert np.exp(st.phi_points[1, k]) == pytest.approx(sum(priv) - priv[k] + noise)
            assert st.zeta_points[0, k] == pytest.approx(sum(priv) + common + noise)
            assert st.zeta_points[1, k] == pytest.approx(sum(priv) + noise)
        if mode == "sdma":
            assert not np.any(st.Wc_point)


def test_initial_state_single_antenna_single_user():
    cfg = ArrayConfig(n_tx=1, n_rx=2, n_pulses=8, total_power=9.0)
    ch = CommChannelSet(np.array([[0.6 - 0.8j]]))
    st = initialize_state(ch, TargetSet.from_degrees([0.0], [1.0], cfg.carrier_hz), cfg, mode="sdma")
    P, _ = extract_precoders(st.Wc_point, st.Wk_points)
    assert abs(P.privates[0, 0]) == pytest.approx(3.0)


def test_degenerate_channels_rejected():
    ch = CommChannelSet(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(DegenerateChannels):
        initialize_state(ch, TARGETS, ArrayConfig(n_tx=2))


def test_first_subproblem_feasible():
    for seed in range(20):
        ch = generate_rayleigh_channels(4, 4, seed)
        for mode in ("rsma", "sdma"):
            sca = ScaConfig(mode=mode)
            work = normalized_config(CFG, sca.power_reference / CFG.total_power)
            st = initialize_state(ch, TARGETS, work, mode=mode)
            fmap = fim_affine_map(FimConstants.build(TARGETS, work))
            sub = build_subproblem(st, ch, fmap, work, sca)
            assert conic.solve(sub.problem).ok, (seed, mode)


# ------------------------------------------------------------------- SCA runs

def _assign(sub: Subproblem, values: dict, g: float):
    pb = sub.problem
    for name, var in pb.scalar_vars.items():
        var.value = values["g_hat"] if name == "g_hat" else values[name]
    pb.scalar_vars["g_hat"].value = g / sub.lmi_scale
    for name, (re, lo, _) in pb.hermitian_vars.items():
        X = values[name]
        n = X.shape[0]
        iu, ju = np.triu_indices(n, 1)
        re.value = 0.5 * (X.real + X.real.T)
        lo.value = X.imag[iu, ju] if len(iu) else np.zeros(1)


def _max_violation(sub: Subproblem) -> float:
    worst = 0.0
    for kind in conic.ConicProblem.KINDS:
        for c in sub.problem.constraints[kind]:
            worst = max(worst, float(np.max(c.violation())))
    return worst


@pytest.fixture(scope="module")
def runs():
    out = {}
    for mode in ("rsma", "sdma"):
        ch = generate_rayleigh_channels(3, 4, 21)
        states = []
        res = run_sca(ch, TARGETS, CFG, ScaConfig(mu=1e-3, mode=mode), callback=states.append)
        out[mode] = (ch, res, states)
    return out


@pytest.mark.parametrize("mode", ["rsma", "sdma"])
def test_trace_monotone_and_converged(runs, mode):
    _, res, states = runs[mode]
    assert res.converged and res.iterations <= 50
    assert np.all(np.diff(res.trace) >= -1e-7)
    assert [s.iter for s in states] == list(range(1, res.iterations + 1))


@pytest.mark.parametrize("mode", ["rsma", "sdma"])
def test_previous_iterate_feasible_for_next_subproblem(runs, mode):
    ch, res, states = runs[mode]
    sca = ScaConfig(mu=1e-3, mode=mode)
    norm = sca.power_reference / CFG.total_power
    work = normalized_config(CFG, norm)
    fmap = fim_affine_map(FimConstants.build(TARGETS, work))
    scale = lmi_scale(fmap, work)
    sub = Subproblem(ch, fmap, work, sca, scale)
    for st in states[:-1][:5]:
        sub.update(st)
        _assign(sub, st.solution, st.g)
        assert _max_violation(sub) <= 1e-5 * work.total_power


@pytest.mark.parametrize("mode", ["rsma", "sdma"])
def test_surrogates_tight_at_expansion_point(runs, mode):
    ch, res, states = runs[mode]
    for st in states[:5]:
        for z0 in st.zeta_points.ravel():
            c = soc_entropy_constraint(z0)
            assert c.lhs(np.log(z0), z0) == pytest.approx(c.rhs(np.log(z0), z0), rel=1e-6)
        for p in st.phi_points.ravel():
            s, b = taylor_exp_bound(p)
            assert s * p + b == pytest.approx(np.exp(p), rel=1e-6)


@pytest.mark.parametrize("mode", ["rsma", "sdma"])
def test_solution_properties(runs, mode):
    ch, res, _ = runs[mode]
    R = res.solved_covariance
    target = CFG.total_power / CFG.n_tx
    np.testing.assert_allclose(np.real(np.diag(R)), target, rtol=1e-6)
    fmap = fim_affine_map(FimConstants.build(TARGETS, CFG))
    assert np.linalg.eigvalsh(fmap(R))[0] >= res.g - 1e-5 * max(1.0, abs(res.g))
    assert np.max(res.rank_gaps) <= 1e-3
    assert res.power_residual <= 0.02
    assert res.realized.allocation.sum() <= res.realized.common_rate + 1e-6
    assert res.allocation.sum() <= res.realized.common_rate + 1e-6
    if mode == "sdma":
        assert not np.any(res.precoders.common)
        np.testing.assert_allclose(res.allocation, 0, atol=1e-9)
        np.testing.assert_allclose(res.state.solution["Wc"], 0, atol=1e-9)


def test_rsma_objective_not_below_sdma(runs):
    assert runs["rsma"][1].objective >= runs["sdma"][1].objective - 1e-7


@pytest.mark.parametrize("mode", ["rsma", "sdma"])
def test_mmf_only_matches_single_user_optimum(mode):
    # with mu = 0 and one user the optimum has a closed form: co-phase every
    # antenna at its power budget, giving SNR = (P/N_t) (sum_i |h_i|)^2 / noise
    cfg = ArrayConfig(n_tx=4, n_rx=5, n_pulses=64, radar_noise_power=10.0, total_power=100.0)
    ts = TargetSet.from_degrees([20.0], [10.0], cfg.carrier_hz)
    for seed in range(3):
        ch = generate_rayleigh_channels(1, 4, seed)
        best = np.log2(1 + cfg.total_power / 4 * np.abs(ch.channels[0]).sum() ** 2 / cfg.comm_noise_power)
        res = run_sca(ch, ts, cfg, ScaConfig(mu=0.0, mode=mode, tol=1e-7))
        assert res.mmf == pytest.approx(best, abs=1e-4)
        assert res.realized_mmf == pytest.approx(best, abs=1e-4)


def test_not_converged_warning():
    ch = generate_rayleigh_channels(3, 4, 2)
    with pytest.warns(NotConverged):
        res = run_sca(ch, TARGETS, CFG, ScaConfig(max_iters=2))
    assert not res.converged and res.iterations == 2


def test_solver_failure_reports_iteration(monkeypatch):
    ch = generate_rayleigh_channels(3, 4, 2)
    real_solve = conic.solve
    calls = {"n": 0}

    def flaky(problem, tol=None, **kw):
        calls["n"] += 1
        if calls["n"] > 1:
            return conic.ConicSolution(conic.NUMERICAL_FAILURE)
        return real_solve(problem, tol=tol, **kw)

    monkeypatch.setattr(sca_mod.conic, "solve", flaky)
    with pytest.raises(SolverFailed) as info:
        run_sca(ch, TARGETS, CFG, ScaConfig())
    assert info.value.iteration == 2


def test_power_normalization_does_not_change_design_units():
    ch = generate_rayleigh_channels(3, 4, 4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConverged)
        res = run_sca(ch, TARGETS, CFG, ScaConfig(max_iters=3))
    R = res.precoders.covariance
    assert np.real(np.trace(R)) == pytest.approx(CFG.total_power, rel=0.05)

"""Successive convex approximation for joint MMF-rate / FIM-eigenvalue design.

Each iteration solves a semidefinite subproblem in the lifted variables
W_c = w_c w_c^H and W_k = w_k w_k^H. The nonconvex rate constraints are
replaced by tangent-line bounds of exp(.) and a second-order-cone bound of
zeta*ln(zeta), both tight at the current expansion point, and the rank-one
requirement is moved into the objective as a linearised penalty. The
objective sequence is therefore nondecreasing.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import cvxpy as cp
import numpy as np

from . import conic
from .fim import FimAffineMap, FimConstants, SingularFim, crb_metrics, fim_affine_map, fim_from_covariance
from .rates import PrecoderSet, RateReport, best_report
from .signal_model import ArrayConfig, CommChannelSet, TargetSet

log = logging.getLogger(__name__)

LN2 = np.log(2.0)
MODES = ("rsma", "sdma")


class DegenerateChannels(ValueError):
    pass


class NonpositiveZeta(ValueError):
    pass


class SolverFailed(RuntimeError):
    def __init__(self, iteration: int, status: str):
        super().__init__(f"subproblem at iteration {iteration} returned {status}")
        self.iteration = iteration
        self.status = status


class NotConverged(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ScaConfig:
    mu: float = 1e-3
    rho: float = -0.1
    tol: float = 1e-4
    max_iters: int = 100
    mode: str = "rsma"
    weights: tuple | None = None
    solver_tol: float | None = None
    # total power the subproblems see; rates and FIM are unaffected by the
    # rescaling but the rank penalty is not, so it fixes what rho means
    power_reference: float | None = 30.0

    def __post_init__(self):
        if not self.rho < 0:
            raise ValueError("rho must be negative")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.power_reference is not None and not self.power_reference > 0:
            raise ValueError("power_reference must be positive")
        if self.tol <= 0 or self.max_iters < 1:
            raise ValueError("tol must be positive and max_iters >= 1")


@dataclass
class ScaState:
    """Expansion point of one SCA iteration. Slack arrays are (2, K): row 0 common, row 1 private."""

    iter: int
    Wc_point: np.ndarray
    Wk_points: np.ndarray
    phi_points: np.ndarray
    delta_points: np.ndarray
    zeta_points: np.ndarray
    principal_vecs: np.ndarray
    objective_trace: list = field(default_factory=list)
    allocation: np.ndarray | None = None
    private_bounds: np.ndarray | None = None
    mmf: float = float("nan")
    g: float = float("nan")
    solution: dict | None = field(default=None, repr=False)  # raw subproblem values

    @property
    def covariance(self) -> np.ndarray:
        return self.Wc_point + self.Wk_points.sum(axis=0)


@dataclass
class DesignResult:
    precoders: PrecoderSet
    allocation: np.ndarray
    mmf: float
    g: float
    rank_gaps: np.ndarray
    iterations: int
    trace: list
    converged: bool
    objective: float
    realized: RateReport
    realized_min_eig: float
    realized_crb_avg: float
    power_residual: float
    solved_covariance: np.ndarray
    state: ScaState = field(repr=False, default=None)

    @property
    def realized_mmf(self) -> float:
        return self.realized.mmf


# ----------------------------------------------------------------- surrogates

def taylor_exp_bound(point: float) -> tuple[float, float]:
    """Tangent of exp at ``point`` as (slope, intercept); lies below exp everywhere."""
    e = float(np.exp(point))
    return e, (1.0 - point) * e


@dataclass(frozen=True)
class SocEntropy:
    """Cone ||[2 sqrt(z0), d + z - (1 + ln z0)]|| <= -d + z + (1 + ln z0).

    Feasible (d, z) satisfy z * (1 + ln z0 - d) >= z0, i.e. the tangent of
    z ln z at z0 dominates d z, which implies z ln z >= d z.
    """

    zeta_point: float

    def __post_init__(self):
        if not self.zeta_point > 0:
            raise NonpositiveZeta(f"zeta expansion point must be positive, got {self.zeta_point}")

    @property
    def offset(self) -> float:
        return 1.0 + np.log(self.zeta_point)

    def lhs(self, delta, zeta):
        return np.hypot(2.0 * np.sqrt(self.zeta_point), delta + zeta - self.offset)

    def rhs(self, delta, zeta):
        return -delta + zeta + self.offset

    def cone(self, delta, zeta):
        """(t, x) for the SOC item ||x|| <= t over cvxpy scalars."""
        x = cp.hstack([2.0 * np.sqrt(self.zeta_point), delta + zeta - self.offset])
        return -delta + zeta + self.offset, x


def soc_entropy_constraint(zeta_point: float) -> SocEntropy:
    return SocEntropy(float(zeta_point))


def principal_vector(W) -> np.ndarray:
    """Unit top eigenvector; largest-magnitude entry rotated to be real positive."""
    vals, vecs = np.linalg.eigh(np.asarray(W, dtype=complex))
    u = vecs[:, -1]
    i = int(np.argmax(np.abs(u)))
    if abs(u[i]) > 0:
        u = u * (abs(u[i]) / u[i])
    return u


def rank_penalty(Wc_point, Wk_points, rho: float):
    """Principal vectors of each point and a function evaluating C_rank.

    The returned callable maps (Wc, [W_k]) to
    rho * sum(tr(W) - u^H W u), numeric or cvxpy depending on its inputs.
    """
    if not rho < 0:
        raise ValueError("rho must be negative")
    points = [Wc_point, *Wk_points]
    vecs = np.array([principal_vector(P) for P in points])

    def penalty(Wc, Wks):
        mats = [Wc, *Wks]
        total = 0.0
        for u, X in zip(vecs, mats):
            P = np.outer(u, u.conj())
            if isinstance(X, conic.HermitianExpr):
                total = total + X.trace() - X.inner(P)
            else:
                X = np.asarray(X)
                total = total + np.real(np.trace(X)) - np.real(u.conj() @ X @ u)
        return rho * total

    return vecs, penalty


# ------------------------------------------------------------ initialisation

def _interference_terms(Wc, Wks, channels: CommChannelSet, noise: float):
    """Per user: total private power received, own private power, common power."""
    h = channels.channels
    priv = np.real(np.einsum("ka,iab,kb->ki", h.conj(), Wks, h))  # [k, i] = h_k^H W_i h_k
    common = np.real(np.einsum("ka,ab,kb->k", h.conj(), Wc, h))
    return priv.sum(axis=1), np.diag(priv), common


def consistent_slacks(Wc, Wks, channels, noise):
    """Slack points making the exp/log constraints tight at (Wc, Wks)."""
    tot, own, common = _interference_terms(Wc, Wks, channels, noise)
    phi = np.log(np.vstack([tot + noise, tot - own + noise]))
    zeta = np.vstack([tot + common + noise, tot + noise])
    return phi, np.log(zeta), zeta


def initialize_state(channels: CommChannelSet, targets: TargetSet, cfg: ArrayConfig,
                     seed: int | None = None, mode: str = "rsma") -> ScaState:
    """Matched-filter rank-one start.

    Private directions follow h_k. In RSMA mode they are scaled so the busiest
    antenna sits at P/N_t and the remaining per-antenna power goes to the
    common stream, steered along the dominant left singular vector of
    [h_1..h_K]. In SDMA mode each antenna row is scaled to P/N_t instead.
    Deterministic; ``seed`` is accepted for interface symmetry.
    """
    h = channels.channels
    norms = np.linalg.norm(h, axis=1)
    if np.any(norms < 1e-12):
        raise DegenerateChannels("a user channel is numerically zero")
    target_diag = cfg.total_power / cfg.n_tx
    dirs = h / norms[:, None]
    load = (np.abs(dirs) ** 2).sum(axis=0)
    if mode == "rsma":
        w = np.sqrt(target_diag / load.max()) * dirs
    else:
        # no common stream to absorb the residual: scale each antenna instead
        w = np.sqrt(target_diag / load)[None, :] * dirs
    Wks = np.einsum("ka,kb->kab", w, w.conj())
    residual = np.clip(target_diag - np.real(np.einsum("kaa->a", Wks)), 0.0, None)
    if mode == "rsma":
        u = np.linalg.svd(h.T)[0][:, 0]
        wc = np.sqrt(residual) * np.exp(1j * np.angle(u))
    else:
        wc = np.zeros(cfg.n_tx, dtype=complex)
    Wc = np.outer(wc, wc.conj())
    phi, delta, zeta = consistent_slacks(Wc, Wks, channels, cfg.comm_noise_power)
    vecs = np.array([principal_vector(P) for P in [Wc, *Wks]])
    return ScaState(0, Wc, Wks, phi, delta, zeta, vecs)


# ---------------------------------------------------------------- subproblem

def lmi_scale(fim_map: FimAffineMap, cfg: ArrayConfig) -> float:
    """Geometric mean of the extreme FIM eigenvalues at isotropic transmission.

    The LMI rows and g are divided by this; angle and Doppler entries differ by
    several orders of magnitude and the solver is sensitive to the choice.
    """
    ev = np.linalg.eigvalsh(fim_map(np.eye(cfg.n_tx) * cfg.total_power / cfg.n_tx))
    if ev[-1] <= 0:
        return 1.0
    return float(np.sqrt(ev[-1] * ev[0])) if ev[0] > 0 else float(ev[-1])


class Subproblem:
    """Convex subproblem around an expansion point.

    The problem structure depends only on channels, targets and config; the
    expansion point (Taylor points, cone offsets, principal eigenvectors) is
    fed through parameters by :meth:`update`, so one compiled problem serves a
    whole SCA run.
    """

    def __init__(self, channels: CommChannelSet, fim_map: FimAffineMap, cfg: ArrayConfig,
                 sca: ScaConfig, scale: float):
        K, nt = channels.k_users, cfg.n_tx
        noise = cfg.comm_noise_power
        self.sca, self.lmi_scale, self.k_users = sca, scale, K
        pb = self.problem = conic.ConicProblem()

        c = pb.scalar("c", (K,))
        Wc = pb.hermitian("Wc", nt)
        Wks = [pb.hermitian(f"W{k}", nt) for k in range(K)]
        r = pb.scalar("r", (K,))
        rm = pb.scalar("rm")
        g_hat = pb.scalar("g_hat")  # g / scale
        phi = pb.scalar("phi", (2, K))
        delta = pb.scalar("delta", (2, K))
        zeta = pb.scalar("zeta", (2, K))

        self.slope = pb.parameter("taylor_slope", (2, K))
        self.intercept = pb.parameter("taylor_intercept", (2, K))
        self.cone_root = pb.parameter("cone_root", (2, K))  # 2 sqrt(zeta_t)
        self.cone_offset = pb.parameter("cone_offset", (2, K))  # 1 + ln zeta_t
        self.proj = [(pb.parameter(f"proj{i}.re", (nt, nt)), pb.parameter(f"proj{i}.im", (nt, nt)))
                     for i in range(K + 1)]

        R = Wc
        for X in Wks:
            R = R + X

        # F(R) >= g I, row-scaled for conditioning
        d = fim_map.dim
        G = fim_map.linear_operator() / scale
        vecR = cp.hstack([cp.vec(R.re, order="C"), cp.vec(R.im, order="C")])
        F = cp.reshape(G @ vecR, (d, d), order="C")
        pb.add_psd(0.5 * (F + F.T) - g_hat * np.eye(d))

        pb.add_eq(R.diag(), np.full(nt, cfg.total_power / nt))
        for X in Wks:
            pb.add_hermitian_psd(X)
        if sca.mode == "rsma":
            # in SDMA these are pinned to zero below; a cone with an empty
            # interior only slows the interior-point solver down
            pb.add_ineq(0.0, c)
            pb.add_hermitian_psd(Wc)
        pb.add_ineq(rm, c + r)
        if sca.mode == "rsma":
            pb.add_ineq(cp.sum(c) * LN2, delta[0] - phi[0])
        pb.add_ineq(r * LN2, delta[1] - phi[1])

        streams = (0, 1) if sca.mode == "rsma" else (1,)
        for k in range(K):
            Hk = channels.gram(k)
            recv = [X.inner(Hk) for X in Wks]
            total = sum(recv)
            interf = {0: total + noise, 1: total - recv[k] + noise}
            upper = {0: total + Wc.inner(Hk) + noise, 1: total + noise}
            for s in streams:
                # tangent of exp at phi_t bounds the interference-plus-noise
                pb.add_ineq(interf[s], self.slope[s, k] * phi[s, k] + self.intercept[s, k])
                pb.add_ineq(zeta[s, k], upper[s])
                d_, z_ = delta[s, k], zeta[s, k]
                off = self.cone_offset[s, k]
                pb.add_soc(-d_ + z_ + off, cp.hstack([self.cone_root[s, k], d_ + z_ - off]))

        if sca.mode == "sdma":
            pb.add_eq(Wc.re, np.zeros((nt, nt)))
            pb.add_eq(pb.hermitian_vars["Wc"][1], 0.0)
            pb.add_eq(c, np.zeros(K))
            # unused common-stream slacks are pinned to the expansion point
            self.pins = [pb.parameter(f"pin_{n}", (K,)) for n in ("phi", "delta", "zeta")]
            for var, par in zip((phi[0], delta[0], zeta[0]), self.pins):
                pb.add_eq(var, par)

        penalty = 0.0
        for X, (pre, pim) in zip([Wc, *Wks], self.proj):
            penalty = penalty + X.trace() - X.inner_parts(pre, pim)
        pb.maximize(rm + sca.mu * scale * g_hat + sca.rho * penalty)
        self.vecs = None

    def update(self, state: ScaState) -> "Subproblem":
        if np.any(state.zeta_points <= 0):
            raise NonpositiveZeta("zeta expansion points must be positive")
        slope, icpt = np.vectorize(taylor_exp_bound)(state.phi_points)
        self.slope.value, self.intercept.value = slope, icpt
        self.cone_root.value = 2.0 * np.sqrt(state.zeta_points)
        self.cone_offset.value = 1.0 + np.log(state.zeta_points)
        self.vecs, self.penalty = rank_penalty(state.Wc_point, state.Wk_points, self.sca.rho)
        for u, (pre, pim) in zip(self.vecs, self.proj):
            P = np.outer(u, u.conj())
            pre.value, pim.value = P.real, P.imag
        if self.sca.mode == "sdma":
            for par, val in zip(self.pins, (state.phi_points, state.delta_points, state.zeta_points)):
                par.value = val[0]
        return self

    def objective(self, values: dict) -> float:
        """Subproblem objective re-evaluated from primal values."""
        Wks = [values[f"W{k}"] for k in range(self.k_users)]
        return float(values["rm"] + self.sca.mu * self.lmi_scale * values["g_hat"]
                     + self.penalty(values["Wc"], Wks))


def build_subproblem(state: ScaState, channels: CommChannelSet, fim_map: FimAffineMap,
                     cfg: ArrayConfig, sca: ScaConfig, scale: float | None = None) -> Subproblem:
    scale = lmi_scale(fim_map, cfg) if scale is None else scale
    return Subproblem(channels, fim_map, cfg, sca, scale).update(state)


# ------------------------------------------------------------------- driver

def extract_precoders(Wc, Wk_list):
    """Principal-eigenvector rank-one factors and lambda_2/lambda_1 per matrix."""
    vecs, gaps = [], []
    for W in [Wc, *Wk_list]:
        vals, v = np.linalg.eigh(np.asarray(W, dtype=complex))
        lam1 = max(vals[-1], 0.0)
        u = principal_vector(W)
        vecs.append(np.sqrt(lam1) * u)
        gaps.append(max(vals[-2], 0.0) / lam1 if (lam1 > 0 and len(vals) > 1) else 0.0)
    return PrecoderSet(vecs[0], np.array(vecs[1:])), np.array(gaps)


def _solve_subproblem(state, channels, fim_map, cfg, sca, scale, cache: dict):
    """Solve one subproblem, retrying with other LMI scalings and looser tolerance."""
    tol = conic.default_tolerance() if sca.solver_tol is None else sca.solver_tol
    attempts = [(scale, tol), (scale / 30.0, tol), (scale * 30.0, tol),
                (scale, 100.0 * tol), (scale / 30.0, 100.0 * tol)]
    status = ""
    for s, t in attempts:
        if s not in cache:
            cache[s] = Subproblem(channels, fim_map, cfg, sca, s)
        sub = cache[s].update(state)
        sol = conic.solve(sub.problem, tol=t)
        if sol.ok:
            return sub, sol
        status = sol.status
        log.info("iteration %d: %s with scale %.3g tol %.0e, retrying", state.iter + 1, status, s, t)
    raise SolverFailed(state.iter + 1, status)


def _step(state: ScaState, channels, fim_map, cfg, sca, scale, cache=None):
    sub, sol = _solve_subproblem(state, channels, fim_map, cfg, sca, scale,
                                 {} if cache is None else cache)
    v = sol.values
    K = channels.k_users
    Wks = np.array([v[f"W{k}"] for k in range(K)])
    Wc = np.zeros_like(v["Wc"]) if sca.mode == "sdma" else v["Wc"]
    opt = sub.objective(v)
    new = ScaState(
        iter=state.iter + 1, Wc_point=Wc, Wk_points=Wks,
        phi_points=v["phi"], delta_points=v["delta"],
        zeta_points=np.maximum(v["zeta"], 1e-12),
        principal_vecs=np.array([principal_vector(P) for P in [Wc, *Wks]]),
        objective_trace=state.objective_trace + [opt],
        allocation=np.maximum(v["c"], 0.0), private_bounds=v["r"],
        mmf=float(v["rm"]), g=float(v["g_hat"] * sub.lmi_scale), solution=v,
    )
    return new, sub


def run_sca(channels: CommChannelSet, targets: TargetSet, cfg: ArrayConfig,
            sca: ScaConfig | None = None, seed: int | None = None,
            state: ScaState | None = None, callback=None) -> DesignResult:
    """Iterate subproblems until |Opt[t] - Opt[t-1]| < tol or max_iters.

    Iterates run in normalized power units (see ``ScaConfig.power_reference``);
    a supplied ``state`` must be in those units. The result is in ``cfg`` units.
    """
    sca = sca or ScaConfig()
    norm = 1.0 if sca.power_reference is None else sca.power_reference / cfg.total_power
    work = normalized_config(cfg, norm)
    consts = FimConstants.build(targets, work)
    fim_map = fim_affine_map(consts)
    scale = lmi_scale(fim_map, work)
    state = state or initialize_state(channels, targets, work, seed, mode=sca.mode)
    converged = False
    cache: dict = {}
    for _ in range(sca.max_iters):
        state, _ = _step(state, channels, fim_map, work, sca, scale, cache)
        if callback is not None:
            callback(state)
        tr = state.objective_trace
        log.debug("iter %d objective %.10g", state.iter, tr[-1])
        if len(tr) >= 2 and abs(tr[-1] - tr[-2]) < sca.tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"SCA hit max_iters={sca.max_iters} without converging", NotConverged)
    return finalize(state, channels, FimConstants.build(targets, cfg), cfg, sca, converged, norm)


def normalized_config(cfg: ArrayConfig, norm: float) -> ArrayConfig:
    """Same scenario with every power (transmit and both noises) multiplied by ``norm``."""
    return replace(cfg, total_power=cfg.total_power * norm,
                   comm_noise_power=cfg.comm_noise_power * norm,
                   radar_noise_power=cfg.radar_noise_power * norm)


def finalize(state: ScaState, channels, consts: FimConstants, cfg: ArrayConfig,
             sca: ScaConfig, converged: bool, norm: float = 1.0) -> DesignResult:
    precoders, gaps = extract_precoders(state.Wc_point / norm, state.Wk_points / norm)
    if sca.mode == "sdma":
        precoders = PrecoderSet.sdma(precoders.privates)
    report = best_report(precoders, channels, cfg.comm_noise_power)
    R = precoders.covariance
    fim = fim_from_covariance(R, consts)
    try:
        crb_avg = crb_metrics(fim, sca.weights).avg_trace_per_target
    except SingularFim:
        crb_avg = float("inf")
    target = cfg.total_power / cfg.n_tx
    residual = float(np.max(np.abs(np.real(np.diag(R)) - target)) / target)
    return DesignResult(
        precoders=precoders, allocation=state.allocation, mmf=state.mmf, g=state.g,
        rank_gaps=gaps, iterations=state.iter, trace=list(state.objective_trace),
        converged=converged, objective=state.objective_trace[-1], realized=report,
        realized_min_eig=fim.min_eigenvalue, realized_crb_avg=crb_avg,
        power_residual=residual, solved_covariance=state.covariance / norm, state=state,
    )

"""Experiment configuration and Monte Carlo runners writing CSV results."""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import warnings
from pathlib import Path
from typing import Literal

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .capon import CaponGrid, alpha_map, find_peaks, write_map_csv
from .fim import SingularFim
from .radar import generate_symbols, synthesize_echo
from .sca import NotConverged, ScaConfig, SolverFailed, run_sca
from .signal_model import ArrayConfig, TargetSet, generate_rayleigh_channels

log = logging.getLogger(__name__)

SCENARIOS = ("tradeoff_targets", "tradeoff_angles", "capon_demo", "convergence")
FAILURE_LIMIT = 0.10
MONOTONE_SLACK = 1e-7

# numbered target catalog: (angle deg, velocity m/s)
TARGET_CATALOG = {
    1: (45.0, 10.0), 2: (30.0, 14.0), 3: (15.0, 18.0),
    4: (0.0, 10.0), 5: (34.0, 10.0), 6: (18.0, 10.0), 7: (9.0, 10.0),
}


class ParseError(ValueError):
    pass


class ExcessFailures(RuntimeError):
    pass


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def db_to_ratio(db: float) -> float:
    return 10.0 ** (db / 10.0)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TargetSpec(_Strict):
    angle_deg: float
    velocity_mps: float
    reflection_re: float = 1.0
    reflection_im: float = 0.0


class ArraySection(_Strict):
    n_tx: int = Field(4, ge=1)
    n_rx: int = Field(9, ge=1)
    n_pulses: int = Field(1024, ge=1)
    carrier_hz: float = Field(3e9, gt=0)
    symbol_period_s: float = Field(1e-4, gt=0)
    power_dbm: float = 20.0
    comm_noise_dbm: float = 0.0
    snr_radar_db: float = -20.0
    reflection_magnitude: float = Field(1.0, gt=0)


class ScaSection(_Strict):
    rho: float = Field(-0.1, lt=0)
    tol: float = Field(1e-4, gt=0)
    max_iters: int = Field(100, ge=1)
    power_reference: float | None = Field(30.0, gt=0)


class CaponSection(_Strict):
    angle_step_deg: float = Field(0.5, gt=0)
    velocity_step_mps: float = Field(0.25, gt=0)
    angle_min_deg: float = -90.0
    angle_max_deg: float = 90.0
    velocity_min_mps: float = 0.0
    velocity_max_mps: float = 20.0
    loading: float | None = Field(None, ge=0)
    noise_trials: int = Field(1, ge=1)


class ExperimentConfig(_Strict):
    scenario: Literal["tradeoff_targets", "tradeoff_angles", "capon_demo", "convergence"]
    array: ArraySection = ArraySection()
    users: int = Field(4, ge=1)
    target_presets: dict[str, list[int | TargetSpec]]
    mu_grid: list[float] = [1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1]
    n_channel_draws: int = Field(10, ge=1)
    base_seed: int = 0
    mode_list: list[Literal["rsma", "sdma"]] = ["rsma", "sdma"]
    output_dir: str = "results"
    sca: ScaSection = ScaSection()
    capon: CaponSection = CaponSection()

    @field_validator("mu_grid")
    @classmethod
    def _mu_grid(cls, v):
        if not v:
            raise ValueError("mu_grid must be nonempty")
        if any(m < 0 for m in v):
            raise ValueError("mu values must be nonnegative")
        return v

    @field_validator("mode_list")
    @classmethod
    def _modes(cls, v):
        if not v or len(set(v)) != len(v):
            raise ValueError("mode_list must be a nonempty list without repeats")
        return v

    @model_validator(mode="after")
    def _presets(self):
        if not self.target_presets:
            raise ValueError("target_presets must name at least one preset")
        for name, items in self.target_presets.items():
            if not items:
                raise ValueError(f"preset {name!r} is empty")
            for it in items:
                if isinstance(it, int) and it not in TARGET_CATALOG:
                    raise ValueError(f"preset {name!r} references unknown target {it}")
        return self

    # linear-scale views
    def array_config(self) -> ArrayConfig:
        a = self.array
        P = dbm_to_mw(a.power_dbm)
        return ArrayConfig(
            n_tx=a.n_tx, n_rx=a.n_rx, carrier_hz=a.carrier_hz, symbol_period_s=a.symbol_period_s,
            n_pulses=a.n_pulses, comm_noise_power=dbm_to_mw(a.comm_noise_dbm),
            radar_noise_power=a.reflection_magnitude * P / db_to_ratio(a.snr_radar_db),
            total_power=P)

    def targets(self, preset: str) -> TargetSet:
        specs = []
        for it in self.target_presets[preset]:
            if isinstance(it, int):
                ang, vel = TARGET_CATALOG[it]
                specs.append((ang, vel, self.array.reflection_magnitude + 0j))
            else:
                specs.append((it.angle_deg, it.velocity_mps, complex(it.reflection_re, it.reflection_im)))
        ang, vel, refl = zip(*specs)
        return TargetSet.from_degrees(ang, vel, self.array.carrier_hz, refl)

    def sca_config(self, mu: float, mode: str) -> ScaConfig:
        s = self.sca
        return ScaConfig(mu=mu, rho=s.rho, tol=s.tol, max_iters=s.max_iters, mode=mode,
                         power_reference=s.power_reference)

    def digest(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        msgs = []
        for e in exc.errors():
            loc = ".".join(str(p) for p in e["loc"]) or "<root>"
            msgs.append(f"{loc}: {e['msg']}")
        raise ParseError(f"{path}: " + "; ".join(msgs)) from exc


# ----------------------------------------------------------------------- seeds

def channel_seed(base_seed: int, draw: int) -> int:
    # channels depend on the draw only, so every mode and mu sees the same users
    return int(np.random.SeedSequence([base_seed, 0, draw]).generate_state(1)[0])


def cell_seed(base_seed: int, mode: str, mu_index: int, draw: int) -> int:
    tag = ("rsma", "sdma").index(mode) + 1
    return int(np.random.SeedSequence([base_seed, tag, mu_index, draw]).generate_state(1)[0])


# ------------------------------------------------------------------------ CSV

def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header: list[str], rows, cfg: ExperimentConfig) -> Path:
    """CSV with a leading ``#`` line carrying the config hash and a timestamp."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    buf = io.StringIO()
    buf.write(f"# config_sha256={cfg.digest()} generated={stamp}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r[h]) for h in header])
    path.write_text(buf.getvalue())
    return path


# ------------------------------------------------------------------ tradeoff

TRADEOFF_COLUMNS = ["preset", "mode", "mu", "seed", "draw", "mmf_bits", "crb_avg_trace",
                    "min_fim_eig", "power_residual", "mmf_surrogate", "g_surrogate",
                    "objective", "iterations", "converged", "rank_gap_max"]


def _tradeoff_cell(cfg: ExperimentConfig, preset: str, mode: str, mu_index: int, draw: int) -> dict:
    mu = cfg.mu_grid[mu_index]
    arr = cfg.array_config()
    channels = generate_rayleigh_channels(cfg.users, arr.n_tx, channel_seed(cfg.base_seed, draw))
    seed = cell_seed(cfg.base_seed, mode, mu_index, draw)
    base = dict(preset=preset, mode=mode, mu=mu, seed=seed, draw=draw)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotConverged)
            res = run_sca(channels, cfg.targets(preset), arr, cfg.sca_config(mu, mode), seed=seed)
    except (SolverFailed, SingularFim, np.linalg.LinAlgError) as exc:
        log.warning("cell preset=%s mode=%s mu=%g draw=%d seed=%d failed: %s",
                    preset, mode, mu, draw, seed, exc)
        return dict(base, failed=str(exc))
    return dict(base, mmf_bits=res.realized_mmf, crb_avg_trace=res.realized_crb_avg,
                min_fim_eig=res.realized_min_eig, power_residual=res.power_residual,
                mmf_surrogate=res.mmf, g_surrogate=res.g, objective=res.objective,
                iterations=res.iterations, converged=int(res.converged),
                rank_gap_max=float(np.max(res.rank_gaps)))


def _check_failures(rows: list[dict]):
    failed = sum("failed" in r for r in rows)
    if rows and failed / len(rows) > FAILURE_LIMIT:
        raise ExcessFailures(f"{failed} of {len(rows)} runs failed (limit {FAILURE_LIMIT:.0%})")


def tradeoff_rows(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    cells = [(p, m, i, d) for p in cfg.target_presets for m in cfg.mode_list
             for i in range(len(cfg.mu_grid)) for d in range(cfg.n_channel_draws)]
    rows = Parallel(n_jobs=jobs)(delayed(_tradeoff_cell)(cfg, *c) for c in cells)
    _check_failures(rows)
    return [r for r in rows if "failed" not in r]


SUMMARY_COLUMNS = ["preset", "mode", "mu", "runs", "mmf_bits", "crb_avg_trace"]


def summarize(rows: list[dict]) -> list[dict]:
    """Average realized metrics per (preset, mode, mu), keeping first-seen order."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["preset"], r["mode"], r["mu"]), []).append(r)
    out = []
    for (preset, mode, mu), rs in groups.items():
        out.append(dict(preset=preset, mode=mode, mu=mu, runs=len(rs),
                        mmf_bits=float(np.mean([r["mmf_bits"] for r in rs])),
                        crb_avg_trace=float(np.mean([r["crb_avg_trace"] for r in rs]))))
    return out


def run_tradeoff(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> dict[str, Path]:
    out = Path(out_dir or cfg.output_dir)
    rows = tradeoff_rows(cfg, jobs)
    return {
        "runs": write_csv(out / f"{cfg.scenario}.csv", TRADEOFF_COLUMNS, rows, cfg),
        "summary": write_csv(out / f"{cfg.scenario}_summary.csv", SUMMARY_COLUMNS, summarize(rows), cfg),
    }


# --------------------------------------------------------------- convergence

CONVERGENCE_COLUMNS = ["preset", "mode", "mu", "draw", "iteration", "objective",
                       "mmf_surrogate", "g_surrogate"]


def _convergence_cell(cfg: ExperimentConfig, preset: str, mode: str, draw: int) -> list[dict]:
    mu = cfg.mu_grid[0]
    arr = cfg.array_config()
    channels = generate_rayleigh_channels(cfg.users, arr.n_tx, channel_seed(cfg.base_seed, draw))
    rows: list[dict] = []

    def record(state):
        rows.append(dict(preset=preset, mode=mode, mu=mu, draw=draw, iteration=state.iter,
                         objective=state.objective_trace[-1], mmf_surrogate=state.mmf,
                         g_surrogate=state.g))

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotConverged)
            run_sca(channels, cfg.targets(preset), arr, cfg.sca_config(mu, mode),
                    seed=cell_seed(cfg.base_seed, mode, 0, draw), callback=record)
    except (SolverFailed, SingularFim, np.linalg.LinAlgError) as exc:
        log.warning("convergence run mode=%s draw=%d failed: %s", mode, draw, exc)
        return [dict(failed=str(exc))]
    trace = np.array([r["objective"] for r in rows])
    if np.any(np.diff(trace) < -MONOTONE_SLACK):
        log.warning("objective decreased in mode=%s draw=%d (min step %.3g)",
                    mode, draw, np.diff(trace).min())
    return rows


def run_convergence(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> dict[str, Path]:
    out = Path(out_dir or cfg.output_dir)
    cells = [(p, m, d) for p in cfg.target_presets for m in cfg.mode_list
             for d in range(cfg.n_channel_draws)]
    per_cell = Parallel(n_jobs=jobs)(delayed(_convergence_cell)(cfg, *c) for c in cells)
    _check_failures([rs[0] for rs in per_cell])
    rows = [r for rs in per_cell for r in rs if "failed" not in r]
    return {"trace": write_csv(out / "convergence.csv", CONVERGENCE_COLUMNS, rows, cfg)}


# ---------------------------------------------------------------------- capon

PEAK_COLUMNS = ["trial", "noise_seed", "rank", "angle_deg", "velocity_mps", "magnitude_sq"]


def capon_grid(cfg: ExperimentConfig) -> CaponGrid:
    c = cfg.capon
    return CaponGrid.from_steps(c.angle_step_deg, c.velocity_step_mps,
                                (c.angle_min_deg, c.angle_max_deg),
                                (c.velocity_min_mps, c.velocity_max_mps), c.loading)


def run_capon_demo(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> dict[str, Path]:
    out = Path(out_dir or cfg.output_dir)
    arr = cfg.array_config()
    preset = next(iter(cfg.target_presets))
    targets = cfg.targets(preset)
    mode = cfg.mode_list[0]
    mu = cfg.mu_grid[0]
    channels = generate_rayleigh_channels(cfg.users, arr.n_tx, channel_seed(cfg.base_seed, 0))
    seed = cell_seed(cfg.base_seed, mode, 0, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConverged)
        design = run_sca(channels, targets, arr, cfg.sca_config(mu, mode), seed=seed)
    symbols = generate_symbols(cfg.users, arr.n_pulses, seed)
    grid = capon_grid(cfg)
    R_x = design.precoders.covariance
    ss = np.random.SeedSequence([cfg.base_seed, 99])
    noise_seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(cfg.capon.noise_trials)]

    def trial(t, ns):
        echo = synthesize_echo(design.precoders, symbols, targets, arr, ns)
        emap = alpha_map(echo, R_x, grid, arr)
        return emap, find_peaks(emap, len(targets))

    results = Parallel(n_jobs=jobs, prefer="threads")(
        delayed(trial)(t, ns) for t, ns in enumerate(noise_seeds))
    rows = []
    for t, (ns, (_, peaks)) in enumerate(zip(noise_seeds, results)):
        for rank, p in enumerate(peaks):
            rows.append(dict(trial=t, noise_seed=ns, rank=rank, angle_deg=math.degrees(p.angle_rad),
                             velocity_mps=p.velocity_mps, magnitude_sq=p.magnitude_sq))
    out.mkdir(parents=True, exist_ok=True)
    map_path = out / "capon_map.csv"
    write_map_csv(map_path, results[0][0])
    return {"peaks": write_csv(out / "capon_peaks.csv", PEAK_COLUMNS, rows, cfg), "map": map_path}


RUNNERS = {
    "tradeoff_targets": run_tradeoff,
    "tradeoff_angles": run_tradeoff,
    "capon_demo": run_capon_demo,
    "convergence": run_convergence,
}


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> dict[str, Path]:
    return RUNNERS[cfg.scenario](cfg, out_dir, jobs)

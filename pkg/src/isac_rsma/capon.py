"""Capon (MVDR) beamforming and joint angle/velocity reflection estimation."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from .radar import EchoBlock, empirical_covariance
from .signal_model import ArrayConfig, doppler_frequency, steering_matrix

MAX_CONDITION = 1e12


class SingularCovariance(np.linalg.LinAlgError):
    pass


class InsufficientPeaks(ValueError):
    pass


@dataclass(frozen=True)
class CaponGrid:
    angles_rad: np.ndarray
    velocities_mps: np.ndarray
    loading: float | None = None  # None -> 1e-6 tr(R_y) / N_r

    def __post_init__(self):
        for name in ("angles_rad", "velocities_mps"):
            ax = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if ax.ndim != 1 or ax.size == 0 or np.any(np.diff(ax) <= 0):
                raise ValueError(f"{name} must be a nonempty strictly increasing vector")
            object.__setattr__(self, name, ax)
        if self.loading is not None and self.loading < 0:
            raise ValueError("loading must be nonnegative")

    @classmethod
    def from_steps(cls, angle_step_deg=0.5, velocity_step_mps=0.25, angle_span_deg=(-90.0, 90.0),
                   velocity_span_mps=(0.0, 20.0), loading=None):
        a0, a1 = angle_span_deg
        v0, v1 = velocity_span_mps
        na = int(round((a1 - a0) / angle_step_deg)) + 1
        nv = int(round((v1 - v0) / velocity_step_mps)) + 1
        return cls(np.deg2rad(np.linspace(a0, a1, na)), np.linspace(v0, v1, nv), loading)


@dataclass(frozen=True)
class EstimateMap:
    magnitude_sq: np.ndarray  # (n_angles, n_velocities); invalid cells hold 0
    beampattern: np.ndarray  # p(theta) on the angle axis
    valid: np.ndarray  # per-angle flag, False where p(theta) vanishes
    grid: CaponGrid


@dataclass(frozen=True)
class Peak:
    angle_rad: float
    velocity_mps: float
    magnitude_sq: float
    index: tuple[int, int]


def default_loading(R_y) -> float:
    R_y = np.asarray(R_y)
    return 1e-6 * float(np.real(np.trace(R_y))) / R_y.shape[0]


def _loaded_inverse(R_y, loading: float) -> np.ndarray:
    R = np.asarray(R_y, dtype=complex) + loading * np.eye(R_y.shape[0])
    if np.linalg.cond(R) > MAX_CONDITION:
        raise SingularCovariance("received covariance too ill-conditioned even with loading")
    return np.linalg.inv(R)


def capon_weights(R_y, angle: float, loading: float | None = None) -> np.ndarray:
    """w = (R+eps I)^-1 b / (b^H (R+eps I)^-1 b), unit gain toward ``angle``."""
    R_y = np.asarray(R_y, dtype=complex)
    eps = default_loading(R_y) if loading is None else loading
    Ri = _loaded_inverse(R_y, eps)
    b = steering_matrix(angle, R_y.shape[0])[:, 0]
    Rb = Ri @ b
    return Rb / (b.conj() @ Rb)


def beampattern(R_x, angles_rad) -> np.ndarray:
    """p(theta) = a^T R_x a^*."""
    R_x = np.asarray(R_x, dtype=complex)
    A = steering_matrix(angles_rad, R_x.shape[0])
    return np.real(np.einsum("im,ij,jm->m", A, R_x, A.conj()))


def alpha_map(echo: EchoBlock, R_x, grid: CaponGrid, cfg: ArrayConfig) -> EstimateMap:
    """|alpha_hat(theta, v)|^2 of the sample Capon estimator on every grid cell."""
    Y, X = echo.received, echo.transmitted
    N = Y.shape[1]
    R_y = empirical_covariance(echo)
    eps = default_loading(R_y) if grid.loading is None else grid.loading
    Ri = _loaded_inverse(R_y, eps)

    B = steering_matrix(grid.angles_rad, cfg.n_rx)
    A = steering_matrix(grid.angles_rad, cfg.n_tx)
    RiB = Ri @ B
    denom = np.real(np.einsum("im,im->m", B.conj(), RiB))
    P = (RiB.conj().T @ Y) / denom[:, None]  # w_p^H y[n], (angles, N)
    Q = (A.T @ X).conj()  # x[n]^H a^*(theta)
    n = np.arange(1, N + 1)
    fd = np.array([doppler_frequency(v, cfg.carrier_hz) for v in grid.velocities_mps])
    D = np.exp(-2j * np.pi * np.outer(fd, n) * cfg.symbol_period_s)  # (velocities, N)

    p = beampattern(R_x, grid.angles_rad)
    scale = float(np.real(np.trace(np.asarray(R_x))))
    valid = p > 1e-12 * scale if scale > 0 else np.zeros_like(p, dtype=bool)
    alpha = (P * Q) @ D.T
    mag = np.zeros(alpha.shape)
    mag[valid] = np.abs(alpha[valid] / (p[valid, None] * N)) ** 2
    return EstimateMap(mag, np.maximum(p, 0.0), valid, grid)


def find_peaks(emap: EstimateMap, m_targets: int) -> list[Peak]:
    """The ``m_targets`` largest cells exceeding all of their 8 neighbours."""
    if m_targets < 1:
        raise ValueError("m_targets must be positive")
    Z = np.where(emap.valid[:, None], emap.magnitude_sq, -np.inf)
    fp = np.ones((3, 3), dtype=bool)
    fp[1, 1] = False
    neigh = maximum_filter(Z, footprint=fp, mode="constant", cval=-np.inf)
    ii, jj = np.nonzero((Z > neigh) & np.isfinite(Z))
    if len(ii) < m_targets:
        raise InsufficientPeaks(f"found {len(ii)} local maxima, need {m_targets}")
    # descending magnitude; ties by lowest (angle, velocity) index
    order = np.lexsort((jj, ii, -Z[ii, jj]))[:m_targets]
    g = emap.grid
    return [Peak(float(g.angles_rad[ii[o]]), float(g.velocities_mps[jj[o]]),
                 float(Z[ii[o], jj[o]]), (int(ii[o]), int(jj[o]))) for o in order]


def write_map_csv(path, emap: EstimateMap) -> None:
    """Header row of velocities, first column angles (degrees), cells |alpha_hat|^2."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["angle_deg"] + [f"{v:.6g}" for v in emap.grid.velocities_mps])
        for a, row in zip(np.rad2deg(emap.grid.angles_rad), emap.magnitude_sq):
            w.writerow([f"{a:.6g}"] + [f"{x:.10e}" for x in row])

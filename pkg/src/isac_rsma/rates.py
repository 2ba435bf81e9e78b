"""Achievable rates of 1-layer rate splitting (and SDMA with the common stream off).

All rates are in bits per channel use.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signal_model import CommChannelSet


class InfeasibleAllocation(ValueError):
    """Common-rate allocation exceeds what every user can decode."""


@dataclass(frozen=True)
class PrecoderSet:
    common: np.ndarray  # (N_t,)
    privates: np.ndarray  # (K, N_t), row k is w_k

    def __post_init__(self):
        object.__setattr__(self, "common", np.asarray(self.common, dtype=complex))
        object.__setattr__(self, "privates", np.atleast_2d(np.asarray(self.privates, dtype=complex)))

    @classmethod
    def sdma(cls, privates):
        privates = np.atleast_2d(np.asarray(privates, dtype=complex))
        return cls(np.zeros(privates.shape[1], dtype=complex), privates)

    @property
    def matrix(self) -> np.ndarray:
        """W = [w_c, w_1, ..., w_K], shape (N_t, K+1)."""
        return np.column_stack([self.common, self.privates.T])

    @property
    def covariance(self) -> np.ndarray:
        W = self.matrix
        return W @ W.conj().T

    @property
    def is_sdma(self) -> bool:
        return not np.any(self.common)

    @property
    def k_users(self) -> int:
        return self.privates.shape[0]


@dataclass(frozen=True)
class RateReport:
    common_rates: np.ndarray
    private_rates: np.ndarray
    allocation: np.ndarray
    totals: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "totals", self.allocation + self.private_rates)

    @property
    def common_rate(self) -> float:
        return float(np.min(self.common_rates))

    @property
    def mmf(self) -> float:
        return float(np.min(self.totals))


def _gains(precoders: PrecoderSet, channels: CommChannelSet):
    h = channels.channels
    common = np.abs(h.conj() @ precoders.common) ** 2  # |h_k^H w_c|^2
    cross = np.abs(h.conj() @ precoders.privates.T) ** 2  # [k, i] = |h_k^H w_i|^2
    return common, cross


def rate_common(k: int, precoders: PrecoderSet, channels: CommChannelSet, noise: float) -> float:
    if not noise > 0:
        raise ValueError("noise must be positive")
    common, cross = _gains(precoders, channels)
    return float(np.log2(1.0 + common[k] / (cross[k].sum() + noise)))


def rate_private(k: int, precoders: PrecoderSet, channels: CommChannelSet, noise: float) -> float:
    # common stream is removed by SIC before private decoding
    if not noise > 0:
        raise ValueError("noise must be positive")
    _, cross = _gains(precoders, channels)
    interference = cross[k].sum() - cross[k, k]
    return float(np.log2(1.0 + cross[k, k] / (interference + noise)))


def all_rates(precoders: PrecoderSet, channels: CommChannelSet, noise: float):
    """Vectorised (common_rates, private_rates) for every user."""
    common, cross = _gains(precoders, channels)
    total_private = cross.sum(axis=1)
    own = np.diag(cross)
    rc = np.log2(1.0 + common / (total_private + noise))
    rp = np.log2(1.0 + own / (total_private - own + noise))
    return rc, rp


def rate_report(precoders: PrecoderSet, channels: CommChannelSet, allocation, noise: float) -> RateReport:
    allocation = np.asarray(allocation, dtype=float)
    if np.any(allocation < 0):
        raise ValueError("allocation entries must be nonnegative")
    rc, rp = all_rates(precoders, channels, noise)
    if allocation.sum() > rc.min() + 1e-9:
        raise InfeasibleAllocation(
            f"sum of common allocations {allocation.sum():.6g} exceeds common rate {rc.min():.6g}")
    return RateReport(rc, rp, allocation)


def mmf_allocation(common_rate: float, private_rates) -> np.ndarray:
    """Split ``common_rate`` to maximise min_k (C_k + R_p,k) by water-filling."""
    rp = np.asarray(private_rates, dtype=float)
    budget = max(float(common_rate), 0.0)
    order = np.sort(rp)
    level = order[0] + budget
    for m in range(1, len(order) + 1):
        level = (budget + order[:m].sum()) / m
        if m == len(order) or level <= order[m]:
            break
    alloc = np.maximum(level - rp, 0.0)
    # keep sum(alloc) <= budget despite rounding
    s = alloc.sum()
    if s > budget > 0:
        alloc *= budget / s
    elif budget == 0:
        alloc[:] = 0.0
    return alloc


def best_report(precoders: PrecoderSet, channels: CommChannelSet, noise: float) -> RateReport:
    """Rate report with the MMF-optimal common-rate split for fixed precoders."""
    rc, rp = all_rates(precoders, channels, noise)
    alloc = mmf_allocation(rc.min(), rp) if not precoders.is_sdma else np.zeros_like(rp)
    return RateReport(rc, rp, alloc)

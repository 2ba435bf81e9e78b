"""Transmit symbol blocks and multi-target radar echoes."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .rates import PrecoderSet
from .signal_model import ArrayConfig, TargetSet, steering_matrix

ECHO_MAGIC = b"ISEB"
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class SymbolBlock:
    symbols: np.ndarray  # (K+1, N), row 0 is the common stream
    seed: int | None = None

    @property
    def n_pulses(self) -> int:
        return self.symbols.shape[1]


@dataclass(frozen=True)
class EchoBlock:
    received: np.ndarray  # (N_r, N)
    transmitted: np.ndarray  # (N_t, N)
    noise_seed: int | None = None

    @property
    def n_pulses(self) -> int:
        return self.received.shape[1]


def generate_symbols(k_users: int, n_pulses: int, seed: int) -> SymbolBlock:
    """i.i.d. QPSK symbols, every entry of modulus one."""
    if k_users < 0 or n_pulses < 1:
        raise ValueError("k_users must be >= 0 and n_pulses >= 1")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, 4, size=(k_users + 1, n_pulses))
    return SymbolBlock(np.exp(1j * (np.pi / 4 + np.pi / 2 * idx)), seed)


def _noise(shape, power: float, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((2, *shape))
    return np.sqrt(power / 2.0) * (g[0] + 1j * g[1])


def _check(precoders: PrecoderSet, symbols: SymbolBlock, cfg: ArrayConfig):
    W, S = precoders.matrix, symbols.symbols
    if W.shape[0] != cfg.n_tx:
        raise ValueError(f"precoders have {W.shape[0]} rows, array has {cfg.n_tx} antennas")
    if S.shape[0] != W.shape[1]:
        raise ValueError(f"{S.shape[0]} symbol streams for {W.shape[1]} precoders")
    return W @ S


def echo_noise_free(X, targets: TargetSet, cfg: ArrayConfig) -> np.ndarray:
    """Stacked form B U E[n] A^T x[n] for every pulse n = 1..N."""
    X = np.asarray(X, dtype=complex)
    A = steering_matrix(targets.angles, cfg.n_tx)
    B = steering_matrix(targets.angles, cfg.n_rx)
    n = np.arange(1, X.shape[1] + 1)
    E = np.exp(2j * np.pi * np.outer(targets.dopplers, n) * cfg.symbol_period_s)  # (M, N)
    return B @ (targets.reflections[:, None] * E * (A.T @ X))


def echo_noise_free_loop(X, targets: TargetSet, cfg: ArrayConfig) -> np.ndarray:
    """Target-by-target, pulse-by-pulse version of :func:`echo_noise_free`."""
    X = np.asarray(X, dtype=complex)
    T = cfg.symbol_period_s
    Y = np.zeros((cfg.n_rx, X.shape[1]), dtype=complex)
    for col in range(X.shape[1]):
        n = col + 1
        for t in targets:
            a = steering_matrix(t.angle_rad, cfg.n_tx)[:, 0]
            b = steering_matrix(t.angle_rad, cfg.n_rx)[:, 0]
            Y[:, col] += t.reflection * np.exp(2j * np.pi * t.doppler_hz * n * T) * b * (a @ X[:, col])
    return Y


def synthesize_echo(precoders: PrecoderSet, symbols: SymbolBlock, targets: TargetSet,
                    cfg: ArrayConfig, noise_seed: int | None) -> EchoBlock:
    X = _check(precoders, symbols, cfg)
    Y = echo_noise_free(X, targets, cfg)
    Y = Y + _noise(Y.shape, cfg.radar_noise_power, noise_seed)
    return EchoBlock(Y, X, noise_seed)


def empirical_covariance(block: EchoBlock | np.ndarray) -> np.ndarray:
    """(1/N) sum_n y[n] y[n]^H."""
    Y = np.asarray(getattr(block, "received", block), dtype=complex)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[1] < 1:
        raise ValueError("need at least one snapshot")
    R = Y @ Y.conj().T / Y.shape[1]
    return 0.5 * (R + R.conj().T)


def transmit_covariance(X) -> np.ndarray:
    X = np.asarray(X, dtype=complex)
    R = X @ X.conj().T / X.shape[1]
    return 0.5 * (R + R.conj().T)


def write_echo(path, block: EchoBlock) -> None:
    """Binary dump: header (magic, N_r, N_t, N) then X and Y_s as complex64, little-endian."""
    n_r, n = block.received.shape
    n_t = block.transmitted.shape[0]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(ECHO_MAGIC, n_r, n_t, n))
        fh.write(np.ascontiguousarray(block.transmitted, dtype="<c8").tobytes())
        fh.write(np.ascontiguousarray(block.received, dtype="<c8").tobytes())


def read_echo(path) -> EchoBlock:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("file too short for echo header")
    magic, n_r, n_t, n = _HEADER.unpack_from(raw)
    if magic != ECHO_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    body = np.frombuffer(raw, dtype="<c8", offset=_HEADER.size)
    if body.size != (n_r + n_t) * n:
        raise ValueError("payload size does not match header")
    X = body[: n_t * n].reshape(n_t, n).astype(complex)
    Y = body[n_t * n:].reshape(n_r, n).astype(complex)
    return EchoBlock(Y, X)

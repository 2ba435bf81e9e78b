"""Array geometry, steering vectors, Doppler shifts and Rayleigh channels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact SI value


@dataclass(frozen=True)
class ArrayConfig:
    """Physical constants of the scene. Powers are linear (mW)."""

    n_tx: int = 4
    n_rx: int = 9
    carrier_hz: float = 3e9
    symbol_period_s: float = 1e-4
    n_pulses: int = 1024
    comm_noise_power: float = 1.0
    radar_noise_power: float = 1e4
    total_power: float = 100.0

    def __post_init__(self):
        for name in ("n_tx", "n_rx", "n_pulses"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("carrier_hz", "symbol_period_s", "comm_noise_power",
                     "radar_noise_power", "total_power"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def doppler_frequency(velocity_mps: float, carrier_hz: float) -> float:
    """Two-way Doppler shift ``2 v f_c / c`` in Hz."""
    if not carrier_hz > 0:
        raise ValueError("carrier_hz must be positive")
    return 2.0 * velocity_mps * carrier_hz / SPEED_OF_LIGHT


@dataclass(frozen=True)
class Target:
    angle_rad: float
    reflection: complex
    velocity_mps: float
    doppler_hz: float

    @classmethod
    def moving(cls, angle_rad, velocity_mps, carrier_hz, reflection=1.0 + 0j):
        return cls(float(angle_rad), complex(reflection), float(velocity_mps),
                   doppler_frequency(velocity_mps, carrier_hz))


@dataclass(frozen=True)
class TargetSet:
    """Ordered targets; the order indexes every M x M block downstream."""

    targets: tuple[Target, ...]

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if len(self.targets) < 1:
            raise ValueError("need at least one target")

    def __len__(self):
        return len(self.targets)

    def __iter__(self):
        return iter(self.targets)

    @property
    def angles(self) -> np.ndarray:
        return np.array([t.angle_rad for t in self.targets])

    @property
    def reflections(self) -> np.ndarray:
        return np.array([t.reflection for t in self.targets], dtype=complex)

    @property
    def dopplers(self) -> np.ndarray:
        return np.array([t.doppler_hz for t in self.targets])

    @property
    def velocities(self) -> np.ndarray:
        return np.array([t.velocity_mps for t in self.targets])

    @classmethod
    def from_degrees(cls, angles_deg, velocities_mps, carrier_hz, reflections=None):
        if reflections is None:
            reflections = [1.0] * len(angles_deg)
        return cls(tuple(
            Target.moving(np.deg2rad(a), v, carrier_hz, r)
            for a, v, r in zip(angles_deg, velocities_mps, reflections)))


@dataclass(frozen=True)
class CommChannelSet:
    channels: np.ndarray = field(repr=False)  # (K, N_t), row k is h_k
    seed: int | None = None

    @property
    def k_users(self) -> int:
        return self.channels.shape[0]

    @property
    def n_tx(self) -> int:
        return self.channels.shape[1]

    def gram(self, k: int) -> np.ndarray:
        """H_k = h_k h_k^H."""
        h = self.channels[k]
        return np.outer(h, h.conj())


def tx_steering(angle_rad: float, n_elems: int) -> np.ndarray:
    """Half-wavelength ULA response, entry i is exp(j pi i sin(theta))."""
    i = np.arange(n_elems)
    return np.exp(1j * np.pi * i * np.sin(angle_rad))


# receive array uses the identical half-wavelength geometry
rx_steering = tx_steering


def steering_derivative(angle_rad: float, n_elems: int) -> np.ndarray:
    """Elementwise d/dtheta of :func:`tx_steering`."""
    i = np.arange(n_elems)
    return 1j * np.pi * i * np.cos(angle_rad) * np.exp(1j * np.pi * i * np.sin(angle_rad))


def steering_matrix(angles_rad, n_elems: int) -> np.ndarray:
    """Columns are steering vectors, shape (n_elems, len(angles))."""
    angles = np.atleast_1d(np.asarray(angles_rad, dtype=float))
    i = np.arange(n_elems)[:, None]
    return np.exp(1j * np.pi * i * np.sin(angles)[None, :])


def steering_derivative_matrix(angles_rad, n_elems: int) -> np.ndarray:
    angles = np.atleast_1d(np.asarray(angles_rad, dtype=float))
    i = np.arange(n_elems)[:, None]
    return 1j * np.pi * i * np.cos(angles)[None, :] * np.exp(1j * np.pi * i * np.sin(angles)[None, :])


def generate_rayleigh_channels(k_users: int, n_tx: int, seed: int) -> CommChannelSet:
    """i.i.d. CN(0, 1) entries, reproducible per seed."""
    if k_users < 1 or n_tx < 1:
        raise ValueError("k_users and n_tx must be positive")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((2, k_users, n_tx))
    return CommChannelSet((g[0] + 1j * g[1]) / np.sqrt(2.0), seed)

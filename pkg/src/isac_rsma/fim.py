"""Multi-target Fisher information for angle, reflection coefficient and Doppler.

Parameters are ordered by kind: all angles, all Re(alpha), all Im(alpha), all
Doppler frequencies, giving a real symmetric 4M x 4M matrix that is linear in
the transmit covariance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal_model import (
    ArrayConfig,
    TargetSet,
    steering_derivative_matrix,
    steering_matrix,
)


class SingularFim(np.linalg.LinAlgError):
    """FIM is numerically singular; some target parameter is unidentifiable."""


@dataclass(frozen=True)
class SigmaTriplet:
    sigma1: np.ndarray
    sigma2: np.ndarray
    sigma3: np.ndarray


def sigma_matrices(dopplers, n_pulses: int, symbol_period: float) -> SigmaTriplet:
    """Doppler-difference sums over pulses n = 1..N."""
    f = np.asarray(dopplers, dtype=float)
    n = np.arange(1, n_pulses + 1, dtype=float)
    diff = f[None, :] - f[:, None]  # [i, j] = F_Dj - F_Di
    phase = np.exp(2j * np.pi * diff[:, :, None] * n * symbol_period)
    w = 2 * np.pi * n * symbol_period
    return SigmaTriplet(phase.sum(-1), (phase * w).sum(-1), (phase * w**2).sum(-1))


@dataclass(frozen=True)
class FimConstants:
    A: np.ndarray
    B: np.ndarray
    A_dot: np.ndarray
    B_dot: np.ndarray
    U: np.ndarray
    sigma: SigmaTriplet
    inv_noise: float

    @classmethod
    def build(cls, targets: TargetSet, cfg: ArrayConfig) -> "FimConstants":
        th = targets.angles
        return cls(
            A=steering_matrix(th, cfg.n_tx),
            B=steering_matrix(th, cfg.n_rx),
            A_dot=steering_derivative_matrix(th, cfg.n_tx),
            B_dot=steering_derivative_matrix(th, cfg.n_rx),
            U=np.diag(targets.reflections),
            sigma=sigma_matrices(targets.dopplers, cfg.n_pulses, cfg.symbol_period_s),
            inv_noise=1.0 / cfg.radar_noise_power,
        )

    @property
    def n_targets(self) -> int:
        return self.A.shape[1]

    @property
    def n_tx(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class Fim:
    matrix: np.ndarray

    @property
    def n_targets(self) -> int:
        return self.matrix.shape[0] // 4

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])


def fim_blocks(cov, consts: FimConstants) -> dict[str, np.ndarray]:
    cov = np.asarray(cov, dtype=complex)
    nt = consts.n_tx
    if cov.ndim != 2 or cov.shape != (nt, nt):
        raise ValueError(f"covariance must be {nt}x{nt}, got {cov.shape}")
    A, B, Ad, Bd, U = consts.A, consts.B, consts.A_dot, consts.B_dot, consts.U
    q = consts.inv_noise
    Uc = U.conj()
    Rc = cov.conj()
    s1, s2, s3 = consts.sigma.sigma1, consts.sigma.sigma2, consts.sigma.sigma3

    BdBd = q * Bd.conj().T @ Bd
    BdB = q * Bd.conj().T @ B
    BBd = q * B.conj().T @ Bd
    BB = q * B.conj().T @ B

    ARA = A.conj().T @ Rc @ A
    ARAd = A.conj().T @ Rc @ Ad
    AdRA = Ad.conj().T @ Rc @ A
    AdRAd = Ad.conj().T @ Rc @ Ad

    F11 = (BdBd * (Uc @ ARA @ U) + BdB * (Uc @ ARAd @ U)
           + BBd * (Uc @ AdRA @ U) + BB * (Uc @ AdRAd @ U)) * s1
    F12 = (BdB * (Uc @ ARA) + BB * (Uc @ AdRA)) * s1
    F14 = (BdB * (Uc @ ARA @ U) + BB * (Uc @ AdRA @ U)) * s2
    F22 = BB * ARA * s1
    F24 = BB * (ARA @ U) * s2
    F44 = BB * (Uc @ ARA @ U) * s3
    return {"F11": F11, "F12": F12, "F14": F14, "F22": F22, "F24": F24, "F44": F44}


def assemble_fim(blocks: dict[str, np.ndarray], n_targets: int | None = None) -> Fim:
    F11, F12, F14 = blocks["F11"], blocks["F12"], blocks["F14"]
    F22, F24, F44 = blocks["F22"], blocks["F24"], blocks["F44"]
    if n_targets is not None and F11.shape != (n_targets, n_targets):
        raise ValueError("block size does not match target count")
    re, im = np.real, np.imag
    upper = [
        [re(F11), re(F12), -im(F12), -im(F14)],
        [None, re(F22), -im(F22), -im(F24)],
        [None, None, re(F22), re(F24)],
        [None, None, None, re(F44)],
    ]
    for i in range(4):
        for j in range(i):
            upper[i][j] = upper[j][i].T
    F = 2.0 * np.block(upper)
    # diagonal blocks are symmetric in exact arithmetic; force it bitwise
    F = 0.5 * (F + F.T)
    return Fim(F)


def fim_from_covariance(cov, consts: FimConstants) -> Fim:
    return assemble_fim(fim_blocks(cov, consts))


def hermitian_basis(n: int) -> np.ndarray:
    """Orthonormal basis (under Re tr(X^H Y)) of n x n Hermitian matrices.

    Order: E_ii for each i, then for each i < j the symmetric element
    (E_ij + E_ji)/sqrt(2) followed by j(E_ij - E_ji)/sqrt(2).
    """
    basis = []
    for i in range(n):
        E = np.zeros((n, n), dtype=complex)
        E[i, i] = 1.0
        basis.append(E)
    s = 1.0 / np.sqrt(2.0)
    for i in range(n):
        for j in range(i + 1, n):
            E = np.zeros((n, n), dtype=complex)
            E[i, j] = E[j, i] = s
            basis.append(E)
            E = np.zeros((n, n), dtype=complex)
            E[i, j] = 1j * s
            E[j, i] = -1j * s
            basis.append(E)
    return np.array(basis)


def hermitian_coordinates(R) -> np.ndarray:
    """Coordinates of Hermitian R in :func:`hermitian_basis`."""
    R = np.asarray(R, dtype=complex)
    n = R.shape[0]
    iu, ju = np.triu_indices(n, 1)
    off = np.empty(2 * len(iu))
    off[0::2] = np.sqrt(2.0) * R[iu, ju].real
    off[1::2] = np.sqrt(2.0) * R[iu, ju].imag
    return np.concatenate([np.diag(R).real, off])


def coordinate_operator(n: int) -> np.ndarray:
    """Real matrix L with coords = L @ concat(vec(Re R), vec(Im R)), row-major vec."""
    iu, ju = np.triu_indices(n, 1)
    L = np.zeros((n * n, 2 * n * n))
    for i in range(n):
        L[i, i * n + i] = 1.0
    for p, (i, j) in enumerate(zip(iu, ju)):
        L[n + 2 * p, i * n + j] = np.sqrt(2.0)
        L[n + 2 * p + 1, n * n + i * n + j] = np.sqrt(2.0)
    return L


@dataclass(frozen=True)
class FimAffineMap:
    """F(R) = sum_b coords_b(R) * coefficients[b]; the constant term is zero."""

    coefficients: np.ndarray  # (n_tx**2, 4M, 4M)
    n_tx: int

    @property
    def dim(self) -> int:
        return self.coefficients.shape[1]

    def __call__(self, R) -> np.ndarray:
        return np.tensordot(hermitian_coordinates(R), self.coefficients, axes=1)

    def linear_operator(self) -> np.ndarray:
        """G with vec(F) = G @ concat(vec(Re R), vec(Im R)) (row-major)."""
        d = self.dim
        C = self.coefficients.reshape(len(self.coefficients), d * d).T
        return C @ coordinate_operator(self.n_tx)


def fim_affine_map(consts: FimConstants, n_tx: int | None = None) -> FimAffineMap:
    n_tx = consts.n_tx if n_tx is None else n_tx
    coeffs = np.array([fim_from_covariance(E, consts).matrix for E in hermitian_basis(n_tx)])
    return FimAffineMap(coeffs, n_tx)


@dataclass(frozen=True)
class CrbMetrics:
    weighted_trace: float
    avg_trace_per_target: float
    min_eigenvalue: float


def crb_metrics(fim: Fim | np.ndarray, weights=None) -> CrbMetrics:
    F = fim.matrix if isinstance(fim, Fim) else np.asarray(fim, dtype=float)
    d = F.shape[0]
    w = np.ones(d) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (d,) or np.any(w < 0):
        raise ValueError("weights must be a nonnegative vector of length 4M")
    sv = np.linalg.svd(F, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0] or sv[0] == 0:
        raise SingularFim(f"FIM condition number exceeds 1e12 (smallest singular value {sv[-1]:.3g})")
    crb = np.linalg.inv(F)
    diag = np.diag(crb)
    return CrbMetrics(
        weighted_trace=float(w @ diag),
        avg_trace_per_target=float(diag.sum() / (d // 4)),
        min_eigenvalue=float(np.linalg.eigvalsh(F)[0]),
    )


def fim_oracle(precoder, symbols, targets: TargetSet, cfg: ArrayConfig) -> Fim:
    """FIM straight from its definition, 2 Re sum_n dv[n]^H Q^{-1} dv[n].

    ``v[n] = B U E[n] A^T x[n]`` with ``x[n] = W s[n]`` for the supplied symbol
    block; partial derivatives are analytic. ``symbols`` is a (K+1) x N array or
    an object carrying one in ``.symbols``.
    """
    S = np.asarray(getattr(symbols, "symbols", symbols), dtype=complex)
    X = precoder.matrix @ S
    M = len(targets)
    th, alpha, fd = targets.angles, targets.reflections, targets.dopplers
    A = steering_matrix(th, cfg.n_tx)
    B = steering_matrix(th, cfg.n_rx)
    Ad = steering_derivative_matrix(th, cfg.n_tx)
    Bd = steering_derivative_matrix(th, cfg.n_rx)
    T = cfg.symbol_period_s
    q = 1.0 / cfg.radar_noise_power
    F = np.zeros((4 * M, 4 * M))
    for col in range(X.shape[1]):
        n = col + 1
        x = X[:, col]
        J = np.empty((cfg.n_rx, 4 * M), dtype=complex)
        for m in range(M):
            e = np.exp(2j * np.pi * fd[m] * n * T)
            ax = A[:, m] @ x
            base = e * B[:, m] * ax  # d v / d alpha_m (real part)
            J[:, m] = alpha[m] * e * (Bd[:, m] * ax + B[:, m] * (Ad[:, m] @ x))
            J[:, M + m] = base
            J[:, 2 * M + m] = 1j * base
            J[:, 3 * M + m] = alpha[m] * 2j * np.pi * n * T * base
        F += 2.0 * q * np.real(J.conj().T @ J)
    return Fim(0.5 * (F + F.T))

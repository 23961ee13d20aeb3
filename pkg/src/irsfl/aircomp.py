"""Analog gradient aggregation over the uplink.

Implements the pre-/post-processing of both transmission schemes, the noisy
superposition itself, and the closed-form bias/MSE expressions the
optimizers minimize. Transmitted symbols are real sequences carried on the
complex baseband; the receiver keeps the real part after beamforming.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelState, IrsPhases, effective_channels
from .errors import DegenerateInputError, DomainError


@dataclass
class RoundDesign:
    """Decision variables of one round: transmit factors b (K,), receive
    beamformer m (M,), and the IRS phase configuration."""

    b: np.ndarray
    m: np.ndarray
    phases: IrsPhases

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=complex)
        self.m = np.asarray(self.m, dtype=complex)
        if not (np.isfinite(self.b).all() and np.isfinite(self.m).all()):
            raise DomainError("design variables must be finite")

    def alignment(self, state: ChannelState) -> np.ndarray:
        """Per-device alignment coefficients m^H h_tilde_k b_k (target 1)."""
        h = effective_channels(state, self.phases)
        return (self.m.conj() @ h) * self.b


@dataclass(frozen=True)
class GradientStats:
    """Per-device gradient means and population variances over the d entries."""

    xi: np.ndarray
    iota_sq: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))
        object.__setattr__(self, "iota_sq", np.asarray(self.iota_sq, dtype=float))
        if np.any(self.iota_sq < 0):
            raise DomainError("variances must be nonnegative")

    @property
    def iota_sum(self) -> float:
        return float(np.sum(self.iota_sq))


@dataclass(frozen=True)
class NoiseModel:
    """Receiver noise power per antenna per symbol, watts."""

    sigma_z_sq: float

    def __post_init__(self):
        if self.sigma_z_sq < 0:
            raise DomainError("noise power must be nonnegative")


def normalize_offline(g_k: np.ndarray, gamma: float) -> np.ndarray:
    """s_k = g_k / sqrt(gamma), gamma the squared-norm bound estimate."""
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    return np.asarray(g_k, dtype=float) / np.sqrt(gamma)


def denormalize_offline(s_hat: np.ndarray, gamma: float, k_count: int) -> np.ndarray:
    """g_hat = (sqrt(gamma) / K) * s_hat; exact inverse of the sum of
    normalize_offline outputs divided by K."""
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    if k_count < 1:
        raise DomainError("k_count must be >= 1")
    return np.sqrt(gamma) / k_count * np.asarray(s_hat, dtype=float)


def compute_stats(gradients: np.ndarray) -> GradientStats:
    """Row-wise mean and population variance of the (K, d) gradient matrix."""
    g = np.atleast_2d(np.asarray(gradients, dtype=float))
    if g.shape[1] < 1:
        raise DomainError("gradients must have at least one entry")
    return GradientStats(g.mean(axis=1), g.var(axis=1))


def normalize_online(g_k: np.ndarray, stats: GradientStats,
                     k_count: int) -> np.ndarray:
    """s_k = (g_k - mean of xi) / ((1/K) sqrt(sum iota^2))."""
    total = stats.iota_sum
    if total <= 0:
        raise DegenerateInputError("zero gradient variance; skip transmission")
    shift = float(np.mean(stats.xi))
    return (np.asarray(g_k, dtype=float) - shift) / (np.sqrt(total) / k_count)


def denormalize_online(s_hat: np.ndarray, stats: GradientStats,
                       k_count: int) -> np.ndarray:
    """g_hat = (1/K) ((sqrt(sum iota^2)/K) s_hat + sum xi)."""
    total = stats.iota_sum
    if total <= 0:
        raise DegenerateInputError("zero gradient variance; skip transmission")
    return (np.sqrt(total) / k_count * np.asarray(s_hat, dtype=float)
            + float(np.sum(stats.xi))) / k_count


def simulate_uplink(symbols: np.ndarray, design: RoundDesign,
                    state: ChannelState, noise: NoiseModel,
                    rng_seed: int | np.random.Generator = 0
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Superimpose the (K, d) symbol rows through the channel and beamform.

    Returns the real part of the received sequence s_hat and the realized
    aggregation error eps_s = s_hat - sum_k s_k. Noise is i.i.d.
    CN(0, sigma_z^2) per antenna per symbol, deterministic under the seed.
    """
    s = np.atleast_2d(np.asarray(symbols, dtype=float))
    k, d = s.shape
    if k != state.num_devices:
        raise DomainError("symbol rows must match device count")
    rng = (rng_seed if isinstance(rng_seed, np.random.Generator)
           else np.random.default_rng(rng_seed))
    coeff = design.alignment(state)  # m^H h_k b_k, shape (K,)
    received = coeff @ s.astype(complex)
    if noise.sigma_z_sq > 0:
        z = (rng.standard_normal((state.num_antennas, d)) +
             1j * rng.standard_normal((state.num_antennas, d))
             ) * np.sqrt(noise.sigma_z_sq / 2.0)
        received = received + design.m.conj() @ z
    s_hat = received.real
    return s_hat, s_hat - s.sum(axis=0)


def expected_uplink_mse(symbols: np.ndarray, design: RoundDesign,
                        state: ChannelState, noise: NoiseModel) -> float:
    """Exact E[||eps_s||^2] / d over the noise for fixed symbols and the
    real-part receiver; the independent check for simulate_uplink."""
    s = np.atleast_2d(np.asarray(symbols, dtype=float))
    d = s.shape[1]
    coeff = design.alignment(state)
    misalign = (coeff - 1.0).real @ s
    noise_var = float(np.vdot(design.m, design.m).real) * noise.sigma_z_sq / 2.0
    return float(misalign @ misalign) / d + noise_var


def error_terms_offline(design: RoundDesign, state: ChannelState, gamma: float,
                        noise: NoiseModel, d: int) -> tuple[float, float]:
    """Closed-form (bias^2, MSE) of the offline scheme's gradient error.

    bias^2 = |(1/K) sum (m^H h_k b_k - 1)|^2 gamma;
    MSE    = ((1/K^2) sum |m^H h_k b_k - 1|^2
              + (1/K^2) ||m||^2 d sigma_z^2) gamma.
    """
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    c = design.alignment(state) - 1.0
    k = c.shape[0]
    m_sq = float(np.vdot(design.m, design.m).real)
    bias_sq = abs(np.sum(c) / k) ** 2 * gamma
    mse = (float(np.sum(np.abs(c) ** 2)) / k ** 2
           + m_sq * d * noise.sigma_z_sq / k ** 2) * gamma
    return bias_sq, mse


def error_terms_online(design: RoundDesign, state: ChannelState,
                       stats: GradientStats, noise: NoiseModel, d: int) -> float:
    """Closed-form MSE of the online scheme; its bias is identically zero.

    MSE = (d sum iota^2 / K^4) (sum |m^H h_k b_k - 1|^2 + ||m||^2 sigma_z^2).
    """
    total = stats.iota_sum
    if total == 0.0:
        return 0.0
    c = design.alignment(state) - 1.0
    k = c.shape[0]
    m_sq = float(np.vdot(design.m, design.m).real)
    return (d * total / k ** 4) * (float(np.sum(np.abs(c) ** 2))
                                   + m_sq * noise.sigma_z_sq)


def estimate_gamma(gradients: np.ndarray, margin: float = 0.1) -> float:
    """Norm-bound estimate (1 + margin) * max_k ||g_k||^2 used by the offline
    scheme; computed at the first round of a period and reused within it."""
    g = np.atleast_2d(np.asarray(gradients, dtype=float))
    top = float(np.max(np.sum(g * g, axis=1)))
    if top <= 0:
        raise DegenerateInputError("all gradients zero; nothing to transmit")
    return (1.0 + margin) * top

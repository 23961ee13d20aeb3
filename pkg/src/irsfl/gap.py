"""Convergence-gap weights and bound assembly.

The optimality gap after T rounds is bounded by a contraction of the
initial gap plus a weighted sum of per-round error terms. Rounds closer to
the horizon carry strictly larger weights, which is the formal content of
the later-is-better behaviour of the long-term designs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .aircomp import NoiseModel, RoundDesign, error_terms_offline
from .channel import ChannelState
from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class GapWeights:
    """Learning constants and round bookkeeping.

    mu: PL constant, lipschitz: smoothness constant L, alpha: learning rate;
    total_rounds = num_periods * period_len.
    """

    mu: float
    alpha: float
    lipschitz: float
    total_rounds: int
    period_len: int
    num_periods: int

    def __post_init__(self):
        if self.mu <= 0 or self.lipschitz <= 0:
            raise ConfigError("mu and L must be positive")
        if not (0 < self.alpha <= 1.0 / self.mu and self.alpha <= 1.0 / self.lipschitz):
            raise ConfigError("alpha must satisfy 0 < alpha <= min(1/mu, 1/L)")
        if self.total_rounds != self.num_periods * self.period_len:
            raise ConfigError("total_rounds must equal num_periods * period_len")

    @property
    def contraction(self) -> float:
        return 1.0 - self.mu * self.alpha


def omega(t: int, horizon: int, w: GapWeights) -> tuple[float, float]:
    """Weights of round t's bias^2 and MSE terms toward the gap at `horizon`:
    omega1 = (1-mu a)^(horizon-t) a(1-L a)/2, omega2 = (1-mu a)^(horizon-t) L a^2/2.
    """
    if t > horizon:
        raise DomainError("t must not exceed the horizon")
    decay = w.contraction ** (horizon - t)
    w1 = decay * w.alpha * (1.0 - w.lipschitz * w.alpha) / 2.0
    w2 = decay * w.lipschitz * w.alpha ** 2 / 2.0
    return w1, w2


def period_rounds(r: int, w: GapWeights) -> range:
    """Absolute round indices of period r (1-based): (r-1)*rho+1 .. r*rho."""
    if not 1 <= r <= w.num_periods:
        raise DomainError("period index out of range")
    return range((r - 1) * w.period_len + 1, r * w.period_len + 1)


def lambda_period(r: int, designs: Sequence[RoundDesign],
                  states: Sequence[ChannelState], gammas: Sequence[float],
                  noise: NoiseModel, w: GapWeights, d: int) -> float:
    """Design-dependent part of the per-period error sum:
    sum_t omega1 * bias^2 + omega2 * MSE, weighted toward the period end.

    The E||g_bar||^2 term is design-independent and reported separately.
    """
    rounds = period_rounds(r, w)
    if not (len(designs) == len(states) == len(gammas) == w.period_len):
        raise DomainError("need one design/state/gamma per round of the period")
    horizon = r * w.period_len
    total = 0.0
    for t, design, state, gamma in zip(rounds, designs, states, gammas):
        w1, w2 = omega(t, horizon, w)
        bias_sq, mse = error_terms_offline(design, state, gamma, noise, d)
        total += w1 * bias_sq + w2 * mse
    return total


def gap_bound(initial_gap: float, lambda_values: Sequence[float],
              w: GapWeights) -> float:
    """Ultimate gap bound: (1-mu a)^T initial + sum_r (1-mu a)^((R-r) rho) Lambda_r."""
    if len(lambda_values) != w.num_periods:
        raise DomainError("need one lambda value per period")
    c = w.contraction
    total = c ** w.total_rounds * initial_gap
    for r, lam in enumerate(lambda_values, start=1):
        total += c ** ((w.num_periods - r) * w.period_len) * lam
    return total


def gap_bound_varying_rate(initial_gap: float, alphas: Sequence[float],
                           bias_sqs: Sequence[float], mses: Sequence[float],
                           gbar_sqs: Sequence[float], mu: float,
                           lipschitz: float) -> float:
    """Literal per-round recursion of the gap bound with time-varying rates:
    G <- (1 - mu a_t) G + a_t(1 - L a_t)/2 bias_t + L a_t^2/2 (mse_t + gbar_t).

    Reduces exactly to gap_bound when all rates are equal.
    """
    if not (len(alphas) == len(bias_sqs) == len(mses) == len(gbar_sqs)):
        raise DomainError("per-round sequences must have equal length")
    bound = float(initial_gap)
    for a, bias_sq, mse, gbar_sq in zip(alphas, bias_sqs, mses, gbar_sqs):
        if not 0 <= a <= min(1.0 / mu, 1.0 / lipschitz):
            raise DomainError("learning rate outside the admissible range")
        bound = ((1.0 - mu * a) * bound
                 + a * (1.0 - lipschitz * a) / 2.0 * bias_sq
                 + lipschitz * a ** 2 / 2.0 * (mse + gbar_sq))
    return bound

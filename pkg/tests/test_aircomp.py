"""Analog aggregation: normalization round trips, Monte-Carlo noise
consistency, and the closed-form error terms."""

import numpy as np
import pytest

from irsfl import (ChannelState, GradientStats, IrsPhases, NoiseModel,
                   RoundDesign, compute_stats, denormalize_offline,
                   denormalize_online, error_terms_offline, error_terms_online,
                   estimate_gamma, normalize_offline, normalize_online,
                   simulate_uplink)
from irsfl.aircomp import expected_uplink_mse
from irsfl.errors import DegenerateInputError, DomainError


def _random_state(rng, m=3, n=4, k=3):
    return ChannelState(
        rng.standard_normal((m, k)) + 1j * rng.standard_normal((m, k)),
        rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k)),
        rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))


def _aligned_design(state, rng):
    """Design with m^H h_k b_k = 1 for every k."""
    phases = IrsPhases(rng.uniform(0, 2 * np.pi, state.num_elements))
    m = rng.standard_normal(state.num_antennas) + 1j * rng.standard_normal(
        state.num_antennas)
    from irsfl import effective_channels
    hbar = m.conj() @ effective_channels(state, phases)
    b = 1.0 / hbar
    return RoundDesign(b, m, phases)


def test_offline_normalize_round_trip():
    rng = np.random.default_rng(0)
    k, d = 4, 16
    g = rng.standard_normal((k, d))
    gamma = estimate_gamma(g)
    s = np.stack([normalize_offline(g[j], gamma) for j in range(k)])
    g_hat = denormalize_offline(s.sum(axis=0), gamma, k)
    assert np.max(np.abs(g_hat - g.mean(axis=0))) < 1e-10 * np.max(np.abs(g))


def test_online_normalize_round_trip():
    rng = np.random.default_rng(1)
    k, d = 5, 20
    g = rng.standard_normal((k, d))
    stats = compute_stats(g)
    s = np.stack([normalize_online(g[j], stats, k) for j in range(k)])
    g_hat = denormalize_online(s.sum(axis=0), stats, k)
    assert np.max(np.abs(g_hat - g.mean(axis=0))) < 1e-10 * np.max(np.abs(g))


def test_compute_stats_matches_numpy():
    rng = np.random.default_rng(2)
    g = rng.standard_normal((3, 10))
    stats = compute_stats(g)
    assert np.allclose(stats.xi, g.mean(axis=1))
    assert np.allclose(stats.iota_sq, g.var(axis=1))
    assert stats.iota_sum == pytest.approx(float(g.var(axis=1).sum()))


def test_estimate_gamma_bounds_norms():
    rng = np.random.default_rng(3)
    g = rng.standard_normal((4, 12))
    gamma = estimate_gamma(g, margin=0.1)
    norms = np.sum(g ** 2, axis=1)
    assert gamma == pytest.approx(1.1 * norms.max())
    assert np.all(norms <= gamma)
    with pytest.raises(DegenerateInputError):
        estimate_gamma(np.zeros((2, 3)))


def test_normalization_input_validation():
    g = np.ones(4)
    with pytest.raises(DomainError):
        normalize_offline(g, 0.0)
    with pytest.raises(DomainError):
        denormalize_offline(g, -1.0, 2)
    zero_stats = GradientStats(np.zeros(2), np.zeros(2))
    with pytest.raises(DegenerateInputError):
        normalize_online(g, zero_stats, 2)
    with pytest.raises(DegenerateInputError):
        denormalize_online(g, zero_stats, 2)
    with pytest.raises(DomainError):
        GradientStats(np.zeros(2), np.array([-1.0, 0.0]))


def test_noiseless_aligned_uplink_is_exact():
    rng = np.random.default_rng(4)
    state = _random_state(rng)
    design = _aligned_design(state, rng)
    s = rng.standard_normal((state.num_devices, 8))
    s_hat, eps = simulate_uplink(s, design, state, NoiseModel(0.0))
    assert np.max(np.abs(eps)) < 1e-10
    assert np.allclose(s_hat, s.sum(axis=0))


def test_uplink_deterministic_under_seed():
    rng = np.random.default_rng(5)
    state = _random_state(rng)
    design = _aligned_design(state, rng)
    s = rng.standard_normal((state.num_devices, 8))
    noise = NoiseModel(0.01)
    a, _ = simulate_uplink(s, design, state, noise, rng_seed=123)
    b, _ = simulate_uplink(s, design, state, noise, rng_seed=123)
    assert np.array_equal(a, b)
    c, _ = simulate_uplink(s, design, state, noise, rng_seed=124)
    assert not np.array_equal(a, c)


def test_uplink_monte_carlo_matches_expected_mse():
    # empirical E||eps||^2/d over many draws vs. the closed form
    rng = np.random.default_rng(6)
    state = _random_state(rng)
    phases = IrsPhases(rng.uniform(0, 2 * np.pi, state.num_elements))
    m = rng.standard_normal(state.num_antennas) + 1j * rng.standard_normal(
        state.num_antennas)
    b = rng.standard_normal(state.num_devices) + 1j * rng.standard_normal(
        state.num_devices)
    design = RoundDesign(0.2 * b, m, phases)
    noise = NoiseModel(0.05)
    d = 32
    s = rng.standard_normal((state.num_devices, d))
    expected = expected_uplink_mse(s, design, state, noise)
    draws = np.random.default_rng(99)
    total = 0.0
    n_draws = 10_000
    for _ in range(n_draws):
        _, eps = simulate_uplink(s, design, state, noise, rng_seed=draws)
        total += float(eps @ eps) / d
    assert total / n_draws == pytest.approx(expected, rel=0.05)


def test_error_terms_offline_expansion_oracle():
    # independent term-by-term expansion of the bias^2 / MSE closed forms
    rng = np.random.default_rng(7)
    for _ in range(50):
        state = _random_state(rng)
        phases = IrsPhases(rng.uniform(0, 2 * np.pi, state.num_elements))
        m = rng.standard_normal(state.num_antennas) + 1j * rng.standard_normal(
            state.num_antennas)
        b = rng.standard_normal(state.num_devices) + 1j * rng.standard_normal(
            state.num_devices)
        design = RoundDesign(b, m, phases)
        gamma = float(rng.uniform(0.5, 3.0))
        noise = NoiseModel(float(rng.uniform(0.0, 0.1)))
        d = int(rng.integers(1, 50))
        k = state.num_devices
        coeff = design.alignment(state)
        bias_oracle = abs(sum(coeff[j] - 1 for j in range(k)) / k) ** 2 * gamma
        mse_oracle = gamma * (sum(abs(coeff[j] - 1) ** 2 for j in range(k))
                              + float(np.vdot(m, m).real) * d * noise.sigma_z_sq
                              ) / k ** 2
        bias_sq, mse = error_terms_offline(design, state, gamma, noise, d)
        assert bias_sq == pytest.approx(bias_oracle, rel=1e-12, abs=1e-18)
        assert mse == pytest.approx(mse_oracle, rel=1e-12)


def test_error_terms_online_expansion_oracle():
    rng = np.random.default_rng(8)
    for _ in range(50):
        state = _random_state(rng)
        phases = IrsPhases(rng.uniform(0, 2 * np.pi, state.num_elements))
        m = rng.standard_normal(state.num_antennas) + 1j * rng.standard_normal(
            state.num_antennas)
        b = rng.standard_normal(state.num_devices) + 1j * rng.standard_normal(
            state.num_devices)
        design = RoundDesign(b, m, phases)
        stats = compute_stats(rng.standard_normal((state.num_devices, 12)))
        noise = NoiseModel(float(rng.uniform(0.0, 0.1)))
        d = int(rng.integers(1, 50))
        k = state.num_devices
        coeff = design.alignment(state)
        oracle = (d * stats.iota_sum / k ** 4) * (
            sum(abs(coeff[j] - 1) ** 2 for j in range(k))
            + float(np.vdot(m, m).real) * noise.sigma_z_sq)
        assert error_terms_online(design, state, stats, noise, d) == \
            pytest.approx(oracle, rel=1e-12)


def test_error_terms_trivial_cases():
    rng = np.random.default_rng(9)
    state = _random_state(rng)
    design = _aligned_design(state, rng)
    # perfect alignment, no noise: both terms vanish
    bias_sq, mse = error_terms_offline(design, state, 1.0, NoiseModel(0.0), 10)
    assert bias_sq < 1e-20 and mse < 1e-20
    # zero gradient energy: online MSE is zero regardless of the design
    zero_stats = GradientStats(np.ones(state.num_devices),
                               np.zeros(state.num_devices))
    assert error_terms_online(design, state, zero_stats, NoiseModel(1.0), 10) == 0.0


def test_offline_bias_cancels_for_signed_sum():
    # bias depends only on the sum of misalignments, not on their sizes
    rng = np.random.default_rng(10)
    state = _random_state(rng, k=2)
    phases = IrsPhases(rng.uniform(0, 2 * np.pi, state.num_elements))
    m = rng.standard_normal(state.num_antennas) + 1j * rng.standard_normal(
        state.num_antennas)
    from irsfl import effective_channels
    hbar = m.conj() @ effective_channels(state, phases)
    # c_0 - 1 = +0.3, c_1 - 1 = -0.3: individual misalignments, zero sum
    b = np.array([1.3, 0.7]) / hbar
    design = RoundDesign(b, m, phases)
    bias_sq, mse = error_terms_offline(design, state, 1.0, NoiseModel(0.0), 10)
    assert bias_sq < 1e-24
    assert mse > 1e-6


def test_online_error_formula_bounds_idealized_symbols():
    # The online design metric assumes the normalized symbols are i.i.d.
    # zero-mean unit-variance across devices and counts the full complex
    # noise power, while the simulated receiver keeps only the real part.
    # Under that symbol model the metric is therefore a strict upper bound
    # on the realized MSE, tight up to the noise-detection factor.
    rng = np.random.default_rng(11)
    state = _random_state(rng)
    design = _aligned_design(state, rng)
    design = RoundDesign(design.b * 1.1, design.m, design.phases)
    k, d = state.num_devices, 24
    stats = GradientStats(np.zeros(k), rng.uniform(0.5, 1.5, k))
    noise = NoiseModel(0.02)
    bound = error_terms_online(design, state, stats, noise, d)
    scale_sq = stats.iota_sum / k ** 4
    draws = np.random.default_rng(77)
    total = 0.0
    n_draws = 10_000
    for _ in range(n_draws):
        s = draws.standard_normal((k, d))
        s_hat, _ = simulate_uplink(s, design, state, noise, rng_seed=draws)
        total += scale_sq * float(np.sum((s_hat - s.sum(axis=0)) ** 2))
    realized = total / n_draws
    assert realized <= bound * 1.02
    # exact expectation under the symbol model: same signal term, noise
    # halved by real-part detection
    coeff = design.alignment(state)
    m_sq = float(np.vdot(design.m, design.m).real)
    exact = d * scale_sq * (float(np.sum(np.abs(coeff - 1.0) ** 2))
                            + 0.5 * m_sq * noise.sigma_z_sq)
    assert realized == pytest.approx(exact, rel=0.05)


def test_offline_error_formula_dominates_realized_mse():
    # bias^2 + MSE evaluated at the per-draw gamma upper-bounds the realized
    # aggregation error for zero-mean gradients drawn fresh each round
    rng = np.random.default_rng(12)
    state = _random_state(rng)
    design = _aligned_design(state, rng)
    design = RoundDesign(design.b * 1.15, design.m, design.phases)
    k, d = state.num_devices, 24
    noise = NoiseModel(0.02)
    draws = np.random.default_rng(78)
    total_real = 0.0
    total_bound = 0.0
    n_draws = 4_000
    for _ in range(n_draws):
        g = draws.standard_normal((k, d))
        gamma = estimate_gamma(g)
        s = np.stack([normalize_offline(g[j], gamma) for j in range(k)])
        s_hat, _ = simulate_uplink(s, design, state, noise, rng_seed=draws)
        err = denormalize_offline(s_hat, gamma, k) - g.mean(axis=0)
        total_real += float(err @ err)
        bias_sq, mse = error_terms_offline(design, state, gamma, noise, d)
        total_bound += bias_sq + mse
    assert total_real / n_draws <= total_bound / n_draws * 1.02
    assert total_real / n_draws >= 0.05 * total_bound / n_draws

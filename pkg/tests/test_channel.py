"""Channel generation: oracles, statistics, and determinism."""

import numpy as np
import pytest

from irsfl import (ChannelState, Geometry, IrsPhases, PathLossParams,
                   channel_from_json, channel_to_json, default_geometry,
                   effective_channel, effective_channels, path_loss,
                   phase_grid, sample_channels, snap_to_grid)
from irsfl.errors import DomainError


def test_path_loss_reference_point():
    params = PathLossParams(t0_db=-30.0, d0=1.0)
    assert path_loss(1.0, 3.5, params) == pytest.approx(1e-3, rel=1e-12)
    assert path_loss(10.0, 2.0, params) == pytest.approx(1e-5, rel=1e-12)


def test_path_loss_rejects_bad_inputs():
    params = PathLossParams()
    with pytest.raises(DomainError):
        path_loss(0.0, 3.5, params)
    with pytest.raises(DomainError):
        PathLossParams(exponent_bs_device=1.5)
    with pytest.raises(DomainError):
        PathLossParams(d0=0.0)


def test_default_geometry_layout():
    geom = default_geometry(8, cluster_radius=20.0, rng_seed=0)
    assert geom.num_devices == 8
    assert np.allclose(geom.bs_position, [0.0, 0.0, 30.0])
    assert np.allclose(geom.irs_position, [0.0, 50.0, 20.0])
    radii = np.linalg.norm(geom.device_positions - np.array([50.0, 40.0, 0.0]),
                           axis=1)
    assert np.all(radii <= 20.0 + 1e-9)


def test_sample_channels_deterministic():
    geom = default_geometry(4, rng_seed=1)
    params = PathLossParams()
    a = sample_channels(geom, params, 3, 5, rng_seed=42)
    b = sample_channels(geom, params, 3, 5, rng_seed=42)
    assert np.array_equal(a.h_d, b.h_d)
    assert np.array_equal(a.h_r, b.h_r)
    assert np.array_equal(a.g, b.g)
    c = sample_channels(geom, params, 3, 5, rng_seed=43)
    assert not np.array_equal(a.h_d, c.h_d)


def test_direct_link_power_matches_path_loss():
    # Monte-Carlo second moment of one direct link: E|h|^2 = path loss.
    geom = Geometry([0.0, 0.0, 30.0], [0.0, 50.0, 20.0], [[50.0, 40.0, 0.0]])
    params = PathLossParams()
    d = float(np.linalg.norm(geom.device_positions[0] - geom.bs_position))
    expected = path_loss(d, params.exponent_bs_device, params)
    rng = np.random.default_rng(7)
    samples = [abs(sample_channels(geom, params, 1, 0, rng_seed=rng).h_d[0, 0]) ** 2
               for _ in range(10_000)]
    assert np.mean(samples) == pytest.approx(expected, rel=0.05)


def test_rician_link_power_matches_path_loss():
    geom = Geometry([0.0, 0.0, 30.0], [0.0, 50.0, 20.0], [[50.0, 40.0, 0.0]])
    params = PathLossParams()
    d = float(np.linalg.norm(geom.device_positions[0] - geom.irs_position))
    expected = path_loss(d, params.exponent_irs_device, params)
    rng = np.random.default_rng(11)
    samples = [abs(sample_channels(geom, params, 1, 1, rician_k=2.0,
                                   rng_seed=rng).h_r[0, 0]) ** 2
               for _ in range(10_000)]
    # unit-modulus LoS + unit-power scatter mix preserves the second moment
    assert np.mean(samples) == pytest.approx(expected, rel=0.05)


def test_rician_k_zero_is_pure_scatter():
    # With rician_k = 0 the LoS weight vanishes: the sampled matrix equals
    # the scatter part alone, which is circularly symmetric (mean ~ 0).
    geom = Geometry([0.0, 0.0, 30.0], [0.0, 50.0, 20.0], [[50.0, 40.0, 0.0]])
    params = PathLossParams()
    rng = np.random.default_rng(3)
    vals = [sample_channels(geom, params, 1, 1, rician_k=0.0,
                            rng_seed=rng).h_r[0, 0] for _ in range(10_000)]
    mean = np.mean(vals)
    scale = np.sqrt(np.mean(np.abs(vals) ** 2))
    assert abs(mean) < 0.05 * scale
    # positive rician_k shifts the mean toward the deterministic LoS term
    rng = np.random.default_rng(3)
    vals_k = [sample_channels(geom, params, 1, 1, rician_k=10.0,
                              rng_seed=rng).h_r[0, 0] for _ in range(2_000)]
    assert abs(np.mean(vals_k)) > 0.5 * scale


def test_effective_channel_matrix_oracle():
    # dense matrix-product oracle for h_d + G diag(e^{j theta}) h_r
    rng = np.random.default_rng(5)
    for _ in range(20):
        m, n, k = 3, 4, 2
        state = ChannelState(
            rng.standard_normal((m, k)) + 1j * rng.standard_normal((m, k)),
            rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k)),
            rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))
        phases = IrsPhases(rng.uniform(0, 2 * np.pi, n))
        theta_mat = np.diag(np.exp(1j * phases.theta))
        for j in range(k):
            oracle = state.h_d[:, j] + state.g @ theta_mat @ state.h_r[:, j]
            got = effective_channel(state, phases, j)
            assert np.max(np.abs(got - oracle)) < 1e-12
        stacked = effective_channels(state, phases)
        for j in range(k):
            # batched matmul may differ from the per-device product in the
            # last floating-point bit
            assert np.allclose(stacked[:, j],
                               effective_channel(state, phases, j),
                               rtol=0, atol=1e-12)


def test_effective_channel_rank_one_decomposition():
    # linearity in each reflection coefficient
    rng = np.random.default_rng(9)
    m, n, k = 3, 4, 2
    state = ChannelState(
        rng.standard_normal((m, k)) + 1j * rng.standard_normal((m, k)),
        rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k)),
        rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))
    theta = rng.uniform(0, 2 * np.pi, n)
    for j in range(k):
        total = state.h_d[:, j].copy()
        for i in range(n):
            total = total + np.exp(1j * theta[i]) * state.g[:, i] * state.h_r[i, j]
        got = effective_channel(state, IrsPhases(theta), j)
        assert np.max(np.abs(got - total)) < 1e-12


def test_effective_channel_trivial_cases():
    rng = np.random.default_rng(1)
    m, n, k = 2, 3, 2
    state = ChannelState(
        rng.standard_normal((m, k)) + 1j * rng.standard_normal((m, k)),
        rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k)),
        rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))
    # zero phases: identity reflection
    got = effective_channel(state, IrsPhases(np.zeros(n)), 0)
    assert np.allclose(got, state.h_d[:, 0] + state.g @ state.h_r[:, 0])
    # no IRS: direct channel only
    bare = state.without_irs()
    assert np.array_equal(effective_channels(bare, IrsPhases(np.zeros(0))),
                          state.h_d)
    with pytest.raises(DomainError):
        effective_channel(state, IrsPhases(np.zeros(n)), 5)


def test_phase_quantization_grid_membership():
    rng = np.random.default_rng(4)
    for bits in (1, 2, 3, 4):
        grid = phase_grid(bits)
        assert len(grid) == 2 ** bits
        theta = rng.uniform(-10, 10, size=32)
        snapped = snap_to_grid(theta, bits)
        # bit-exact grid membership
        assert all(any(s == g for g in grid) for s in snapped)
        phases = IrsPhases(theta, quant_bits=bits)
        assert all(any(s == g for g in grid) for s in phases.theta)
        # idempotent
        assert np.array_equal(snap_to_grid(snapped, bits), snapped)


def test_snap_to_grid_nearest():
    bits = 2  # grid {0, pi/2, pi, 3pi/2}
    assert snap_to_grid(np.array([0.1]), bits)[0] == 0.0
    assert snap_to_grid(np.array([np.pi / 2 - 0.1]), bits)[0] == np.pi / 2
    assert snap_to_grid(np.array([2 * np.pi - 0.1]), bits)[0] == 0.0


def test_phase_range_invariant():
    phases = IrsPhases(np.array([-0.5, 7.0, 2 * np.pi]))
    assert np.all(phases.theta >= 0.0)
    assert np.all(phases.theta < 2 * np.pi)
    assert np.allclose(np.abs(phases.coefficients()), 1.0)


def test_channel_json_round_trip():
    rng = np.random.default_rng(6)
    m, n, k = 3, 4, 2
    state = ChannelState(
        rng.standard_normal((m, k)) + 1j * rng.standard_normal((m, k)),
        rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k)),
        rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))
    back = channel_from_json(channel_to_json(state))
    assert np.array_equal(back.h_d, state.h_d)
    assert np.array_equal(back.h_r, state.h_r)
    assert np.array_equal(back.g, state.g)
    # no-IRS snapshot survives the round trip as well
    bare = state.without_irs()
    back = channel_from_json(channel_to_json(bare))
    assert back.num_elements == 0
    assert np.array_equal(back.h_d, bare.h_d)


def test_channel_dimension_validation():
    with pytest.raises(DomainError):
        ChannelState(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros((2, 4)))
    with pytest.raises(DomainError):
        ChannelState(np.full((1, 1), np.nan), np.zeros((1, 1)), np.zeros((1, 1)))

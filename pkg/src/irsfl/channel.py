"""Wireless channel generation for the IRS-assisted uplink.

Direct device-to-BS links undergo Rayleigh fading; the device-to-IRS and
IRS-to-BS links undergo Rician fading with a deterministic unit-modulus
line-of-sight component. Path loss follows the standard reference-distance
power law. All quantities are linear scale (watts / amplitude); dB values
are converted at the configuration boundary only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class Geometry:
    """Node positions in meters (3-vectors)."""

    bs_position: np.ndarray
    irs_position: np.ndarray
    device_positions: np.ndarray  # shape (K, 3)

    def __post_init__(self):
        bs = np.asarray(self.bs_position, dtype=float)
        irs = np.asarray(self.irs_position, dtype=float)
        dev = np.atleast_2d(np.asarray(self.device_positions, dtype=float))
        if bs.shape != (3,) or irs.shape != (3,) or dev.shape[1] != 3:
            raise DomainError("positions must be 3-vectors")
        if dev.shape[0] < 1:
            raise DomainError("need at least one device")
        if not (np.isfinite(bs).all() and np.isfinite(irs).all() and np.isfinite(dev).all()):
            raise DomainError("positions must be finite")
        object.__setattr__(self, "bs_position", bs)
        object.__setattr__(self, "irs_position", irs)
        object.__setattr__(self, "device_positions", dev)

    @property
    def num_devices(self) -> int:
        return self.device_positions.shape[0]


def default_geometry(num_devices: int, cluster_radius: float = 20.0,
                     rng_seed: int = 0) -> Geometry:
    """BS at (0,0,30), IRS at (0,50,20), devices uniform in a disk of the
    given radius centered at (50,40,0)."""
    rng = np.random.default_rng(rng_seed)
    r = cluster_radius * np.sqrt(rng.uniform(size=num_devices))
    phi = rng.uniform(0.0, 2 * np.pi, size=num_devices)
    dev = np.stack([50.0 + r * np.cos(phi), 40.0 + r * np.sin(phi),
                    np.zeros(num_devices)], axis=1)
    return Geometry(np.array([0.0, 0.0, 30.0]), np.array([0.0, 50.0, 20.0]), dev)


@dataclass(frozen=True)
class PathLossParams:
    """Reference-distance power-law parameters (t0_db in dB, d0 in meters)."""

    t0_db: float = -30.0
    d0: float = 1.0
    exponent_bs_device: float = 3.5
    exponent_bs_irs: float = 2.2
    exponent_irs_device: float = 2.5

    def __post_init__(self):
        if self.d0 <= 0:
            raise DomainError("d0 must be positive")
        for e in (self.exponent_bs_device, self.exponent_bs_irs,
                  self.exponent_irs_device):
            if e < 2.0:
                raise DomainError("path loss exponents must be >= 2")


def path_loss(distance: float, exponent: float, params: PathLossParams) -> float:
    """Linear power gain T0 * (d/d0)^(-exponent)."""
    if distance <= 0:
        raise DomainError("distance must be positive")
    t0 = 10.0 ** (params.t0_db / 10.0)
    return t0 * (distance / params.d0) ** (-exponent)


@dataclass
class ChannelState:
    """Channel matrices of one communication round.

    h_d: (M, K) direct device->BS, one column per device.
    h_r: (N, K) device->IRS.
    g:   (M, N) IRS->BS.
    """

    h_d: np.ndarray
    h_r: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        self.h_d = np.asarray(self.h_d, dtype=complex)
        self.h_r = np.asarray(self.h_r, dtype=complex)
        self.g = np.asarray(self.g, dtype=complex)
        m, k = self.h_d.shape
        n = self.h_r.shape[0]
        if self.h_r.shape != (n, k) or self.g.shape != (m, n):
            raise DomainError("inconsistent channel dimensions")
        for a in (self.h_d, self.h_r, self.g):
            if a.size and not np.isfinite(a).all():
                raise DomainError("channel entries must be finite")

    @property
    def num_antennas(self) -> int:
        return self.h_d.shape[0]

    @property
    def num_elements(self) -> int:
        return self.h_r.shape[0]

    @property
    def num_devices(self) -> int:
        return self.h_d.shape[1]

    def without_irs(self) -> "ChannelState":
        """Copy with the reflected path removed (pure direct links)."""
        m, k = self.h_d.shape
        return ChannelState(self.h_d.copy(),
                            np.zeros((0, k), dtype=complex),
                            np.zeros((m, 0), dtype=complex))


@dataclass
class IrsPhases:
    """Per-element phase shifts in [0, 2pi); amplitude coefficients are 1.

    When quant_bits is set every phase lies on the uniform grid
    S = {0, dtheta, ..., (2^bits - 1) dtheta}, dtheta = 2pi / 2^bits.
    """

    theta: np.ndarray
    quant_bits: int | None = None

    def __post_init__(self):
        self.theta = np.mod(np.asarray(self.theta, dtype=float), 2 * np.pi)
        if self.quant_bits is not None:
            if self.quant_bits < 1:
                raise DomainError("quant_bits must be >= 1")
            self.theta = snap_to_grid(self.theta, self.quant_bits)

    @property
    def num_elements(self) -> int:
        return self.theta.shape[0]

    def coefficients(self) -> np.ndarray:
        """Unit-modulus reflection coefficients e^{j theta}."""
        return np.exp(1j * self.theta)


def phase_grid(quant_bits: int) -> np.ndarray:
    levels = 2 ** quant_bits
    return 2 * np.pi * np.arange(levels) / levels


def snap_to_grid(theta: np.ndarray, quant_bits: int) -> np.ndarray:
    """Nearest grid point of the 2^bits-level uniform quantizer (bit-exact
    members of the grid)."""
    levels = 2 ** quant_bits
    idx = np.rint(np.mod(theta, 2 * np.pi) * levels / (2 * np.pi)).astype(int) % levels
    return 2 * np.pi * idx / levels


def _los_ramp(rows: int, cols: int) -> np.ndarray:
    """Deterministic unit-modulus line-of-sight matrix: a fixed phase ramp
    over element indices (geometry-free)."""
    r = np.arange(rows)[:, None]
    c = np.arange(cols)[None, :]
    return np.exp(1j * np.pi * (0.37 * r + 0.73 * c + 0.11 * r * c))


def _rician(rows: int, cols: int, gains: np.ndarray, rician_k: float,
            rng: np.random.Generator) -> np.ndarray:
    """Rician matrix with per-column linear power gains. rician_k = 0 reduces
    to Rayleigh."""
    scatter = (rng.standard_normal((rows, cols)) +
               1j * rng.standard_normal((rows, cols))) / np.sqrt(2.0)
    los = _los_ramp(rows, cols)
    mix = (np.sqrt(rician_k / (1.0 + rician_k)) * los +
           np.sqrt(1.0 / (1.0 + rician_k)) * scatter)
    return np.sqrt(gains)[None, :] * mix


def sample_channels(geometry: Geometry, params: PathLossParams,
                    m_antennas: int, n_elements: int,
                    rician_k: float = 2.0,
                    rng_seed: int | np.random.Generator = 0) -> ChannelState:
    """Draw one round of channels.

    Direct links: i.i.d. CN(0, pathloss). IRS links: Rician with linear
    K-factor `rician_k` (power ratio of the line-of-sight component),
    scaled to the link path loss. Deterministic for a fixed seed.
    """
    if m_antennas < 1 or n_elements < 0:
        raise DomainError("need M >= 1 and N >= 0")
    if rician_k < 0:
        raise DomainError("rician_k must be >= 0")
    rng = (rng_seed if isinstance(rng_seed, np.random.Generator)
           else np.random.default_rng(rng_seed))
    k = geometry.num_devices

    d_bs_dev = np.linalg.norm(geometry.device_positions - geometry.bs_position,
                              axis=1)
    d_irs_dev = np.linalg.norm(geometry.device_positions - geometry.irs_position,
                               axis=1)
    d_bs_irs = float(np.linalg.norm(geometry.bs_position - geometry.irs_position))

    pl_dev = np.array([path_loss(d, params.exponent_bs_device, params)
                       for d in d_bs_dev])
    pl_irs_dev = np.array([path_loss(d, params.exponent_irs_device, params)
                           for d in d_irs_dev])
    pl_bs_irs = path_loss(d_bs_irs, params.exponent_bs_irs, params)

    h_d = (np.sqrt(pl_dev)[None, :] *
           (rng.standard_normal((m_antennas, k)) +
            1j * rng.standard_normal((m_antennas, k))) / np.sqrt(2.0))
    h_r = _rician(n_elements, k, pl_irs_dev, rician_k, rng)
    g = _rician(m_antennas, n_elements,
                np.full(n_elements, pl_bs_irs), rician_k, rng)
    return ChannelState(h_d, h_r, g)


def effective_channel(state: ChannelState, phases: IrsPhases,
                      device_index: int) -> np.ndarray:
    """Superimposed channel h_d,k + G diag(e^{j theta}) h_r,k."""
    if not 0 <= device_index < state.num_devices:
        raise DomainError("device index out of range")
    direct = state.h_d[:, device_index]
    if state.num_elements == 0:
        return direct.copy()
    if phases.num_elements != state.num_elements:
        raise DomainError("phase vector length mismatch")
    return direct + state.g @ (phases.coefficients() * state.h_r[:, device_index])


def effective_channels(state: ChannelState, phases: IrsPhases) -> np.ndarray:
    """All effective channels stacked as columns, shape (M, K)."""
    if state.num_elements == 0:
        return state.h_d.copy()
    return state.h_d + state.g @ (phases.coefficients()[:, None] * state.h_r)


def _complex_to_pairs(a: np.ndarray) -> list:
    return np.stack([a.real, a.imag], axis=-1).tolist()


def _pairs_to_complex(pairs) -> np.ndarray:
    a = np.asarray(pairs, dtype=float)
    return a[..., 0] + 1j * a[..., 1]


def channel_to_json(state: ChannelState) -> str:
    """Serialize to the documented JSON layout (real/imag pairs, row-major)."""
    return json.dumps({
        "h_d": _complex_to_pairs(state.h_d),
        "h_r": _complex_to_pairs(state.h_r),
        "g": _complex_to_pairs(state.g),
    })


def channel_from_json(text: str) -> ChannelState:
    obj = json.loads(text)
    m = len(obj["h_d"])
    k = len(obj["h_d"][0]) if m else 0
    h_r = _pairs_to_complex(obj["h_r"]) if obj["h_r"] else np.zeros((0, k), complex)
    g = _pairs_to_complex(obj["g"]) if obj["g"] and obj["g"][0] else np.zeros((m, 0), complex)
    return ChannelState(_pairs_to_complex(obj["h_d"]), h_r, g)

"""Scenario configuration: flat key=value files with a typed schema.

Decibel quantities are only accepted through keys with an explicit _db /
_dbm suffix and are converted to linear watts exactly once, here. Unknown
keys are rejected outright.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError

SCHEMES = ("optimal", "offline", "online", "isolated", "no_irs")
POWER_ORDERS = ("proposed", "descending", "equal")
CHANNEL_MODES = ("iid", "static")
TASK_KINDS = ("least_squares", "logistic")
V_MODES = ("fixed", "varying")


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


@dataclass
class ScenarioConfig:
    """Fully validated experiment scenario (linear units internally)."""

    num_devices: int = 10
    num_antennas: int = 4
    num_elements: int = 16
    quant_bits: int | None = None  # None = continuous phases
    total_rounds: int = 60
    num_periods: int = 6
    period_len: int = 10
    model_dim: int = 100
    p_max_dbm: float = 20.0
    p_avg_dbm: float = 17.0
    noise_dbm: float = -80.0
    scheme: str = "offline"
    power_order: str = "proposed"
    channel_mode: str = "iid"
    v_mode: str = "varying"
    v_fixed: float = 90.0
    v_coeff: float = 20.0
    queue_init_fraction: float = 0.2
    seeds: tuple[int, ...] = (0,)
    task_kind: str = "least_squares"
    samples_per_device: int = 200
    batch_size: int = 64
    alpha: float = 0.005
    regularizer: float = 0.1
    t0_db: float = -30.0
    d0: float = 1.0
    exponent_bs_device: float = 3.5
    exponent_bs_irs: float = 2.2
    exponent_irs_device: float = 2.5
    cluster_radius: float = 20.0
    rician_k: float = 2.0
    gamma_margin: float = 0.1
    bcd_max_iters: int = 60
    bcd_rel_tol: float = 1e-8
    phase_sweeps_max: int = 30
    nearest_rounding: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        c = self
        if c.total_rounds != c.num_periods * c.period_len:
            raise ConfigError(
                f"total_rounds ({c.total_rounds}) must equal num_periods *"
                f" period_len ({c.num_periods} * {c.period_len})")
        if c.num_devices < 1 or c.num_antennas < 1 or c.num_elements < 0:
            raise ConfigError("need num_devices, num_antennas >= 1 and num_elements >= 0")
        if c.quant_bits is not None and not 1 <= c.quant_bits <= 8:
            raise ConfigError("quant_bits must lie in 1..8 (or none for continuous)")
        if c.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if c.power_order not in POWER_ORDERS:
            raise ConfigError(f"power_order must be one of {POWER_ORDERS}")
        if c.channel_mode not in CHANNEL_MODES:
            raise ConfigError(f"channel_mode must be one of {CHANNEL_MODES}")
        if c.v_mode not in V_MODES:
            raise ConfigError(f"v_mode must be one of {V_MODES}")
        if c.task_kind not in TASK_KINDS:
            raise ConfigError(f"task_kind must be one of {TASK_KINDS}")
        if not c.seeds:
            raise ConfigError("need at least one seed")
        if c.batch_size < 1 or c.batch_size > c.samples_per_device:
            raise ConfigError("batch_size must lie in 1..samples_per_device")
        if c.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if c.regularizer < 0:
            raise ConfigError("regularizer must be nonnegative")
        if c.model_dim < 1:
            raise ConfigError("model_dim must be >= 1")
        if c.queue_init_fraction < 0 or c.gamma_margin < 0:
            raise ConfigError("fractions must be nonnegative")
        if c.v_fixed < 0 or c.v_coeff < 0:
            raise ConfigError("importance weights must be nonnegative")

    @property
    def p_max(self) -> float:
        return dbm_to_watts(self.p_max_dbm)

    @property
    def p_avg(self) -> float:
        return dbm_to_watts(self.p_avg_dbm)

    @property
    def sigma_z_sq(self) -> float:
        return dbm_to_watts(self.noise_dbm)


_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False,
                "yes": True, "no": False}


def _parse_value(key: str, raw: str):
    """Coerce a raw string to the field's declared type."""
    hints = {f.name: f.type for f in fields(ScenarioConfig)}
    hint = hints[key]
    raw = raw.strip()
    if key == "quant_bits":
        if raw.lower() in ("none", "continuous"):
            return None
        return _as_int(key, raw)
    if key == "seeds":
        try:
            return tuple(int(x) for x in raw.split(",") if x.strip() != "")
        except ValueError as exc:
            raise ConfigError(f"{key}: expected comma-separated integers, got {raw!r}") from exc
    if hint == "bool":
        if raw.lower() not in _BOOL_VALUES:
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
        return _BOOL_VALUES[raw.lower()]
    if hint == "int":
        return _as_int(key, raw)
    if hint == "float":
        try:
            v = float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc
        if not np.isfinite(v):
            raise ConfigError(f"{key}: value must be finite")
        return v
    return raw  # str fields


def _as_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc


def parse_config_text(text: str) -> ScenarioConfig:
    """Parse `key = value` lines; '#' starts a comment; blank lines ignored."""
    known = {f.name for f in fields(ScenarioConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {body!r}")
        key, raw = body.split("=", 1)
        key = key.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    return ScenarioConfig(**values)


def parse_config(path: str | Path) -> ScenarioConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text())


def with_overrides(cfg: ScenarioConfig, **kwargs) -> ScenarioConfig:
    """Copy with field overrides, revalidated."""
    return replace(cfg, **kwargs)

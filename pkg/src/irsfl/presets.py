"""Desk-scale scenario presets emitting plot-ready CSV data.

Each preset writes one CSV per figure/table plus a manifest recording every
parameter and seed, so a run is fully reconstructible. All outputs are
deterministic for a fixed seed list (byte-identical on repetition).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .aircomp import NoiseModel
from .bcd import BcdSettings, PowerBudget, solve_p1_period
from .channel import PathLossParams, default_geometry, sample_channels
from .config import ScenarioConfig, with_overrides
from .errors import ConfigError
from .flsim import ExperimentTrace, run_experiment
from .gap import GapWeights

PRESET_NAMES = ("fig2_convergence", "fig3_offline_rho", "fig3_online_V",
                "fig3_power_trace", "table1_rho_grid", "table2_power_order",
                "fig6_vs_N", "fig6_vs_K")

# desk-scale base scenario; paper-scale (K=20, N=40, T=100) via overrides
_BASE = dict(num_devices=10, num_antennas=4, num_elements=16,
             total_rounds=20, num_periods=2, period_len=10, model_dim=60,
             samples_per_device=120, batch_size=64, noise_dbm=-60.0)


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _write_csv(path: Path, header: tuple[str, ...], rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _write_manifest(out_dir: Path, name: str, configs: dict, seeds) -> None:
    payload = {"preset": name, "seeds": list(seeds), "configs": configs}
    digest = hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()).hexdigest()
    payload["config_hash"] = digest
    (out_dir / f"{name}_manifest.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _cfg(**over) -> ScenarioConfig:
    merged = dict(_BASE)
    merged.update(over)
    return ScenarioConfig(**merged)


def _trace_rows(tag: str, trace: ExperimentTrace):
    for row in trace.rows():
        yield (tag, trace.seed) + row


_CURVE_HEADER = ("curve", "seed") + ExperimentTrace.CSV_COLUMNS


def _preset_fig2(out_dir: Path, seeds) -> list[Path]:
    """BCD objective traces of the per-period solver: no-IRS, 1-bit, 3-bit,
    and continuous phases on one period of channels."""
    k, m, n, rho = 10, 4, 16, 5
    geom = default_geometry(k, rng_seed=[seeds[0], 7])
    params = PathLossParams()
    noise = NoiseModel(10.0 ** (-80.0 / 10.0) * 1e-3)
    budget = PowerBudget(np.full(k, 0.1), np.full(k, 10.0 ** 1.7 * 1e-3), 100)
    w = GapWeights(0.2, 0.005, 10.0, rho, rho, 1)
    rows = []
    configs = {}
    for variant, bits, elements in (("no_irs", None, 0), ("delta1", 1, n),
                                    ("delta3", 3, n), ("continuous", None, n)):
        states = [sample_channels(geom, params, m, elements,
                                  rng_seed=np.random.default_rng([seeds[0], 11, t]))
                  for t in range(1, rho + 1)]
        settings = BcdSettings(quant_bits=bits, init_seed=seeds[0])
        period = solve_p1_period(states, [1.0] * rho, w, budget, settings, noise)
        configs[variant] = {"quant_bits": bits, "num_elements": elements,
                            "num_devices": k, "num_antennas": m, "period_len": rho}
        rows += [(variant, it, obj) for it, obj in enumerate(period.objective_trace)]
    path = out_dir / "fig2_convergence.csv"
    _write_csv(path, ("variant", "iter", "objective"), rows)
    _write_manifest(out_dir, "fig2_convergence", configs, seeds[:1])
    return [path]


def _run_curves(out_dir: Path, name: str, curve_cfgs: dict[str, ScenarioConfig],
                seeds) -> list[Path]:
    rows = []
    configs = {}
    for tag, cfg in curve_cfgs.items():
        configs[tag] = asdict(cfg)
        for seed in seeds:
            rows += list(_trace_rows(tag, run_experiment(cfg, seed)))
    path = out_dir / f"{name}.csv"
    _write_csv(path, _CURVE_HEADER, rows)
    _write_manifest(out_dir, name, configs, seeds)
    return [path]


def _preset_fig3_offline_rho(out_dir: Path, seeds) -> list[Path]:
    curves = {
        "optimal": _cfg(scheme="optimal"),
        "offline_rho10": _cfg(scheme="offline", period_len=10, num_periods=2),
        "offline_rho4": _cfg(scheme="offline", period_len=4, num_periods=5),
        "isolated": _cfg(scheme="isolated"),
        "no_irs": _cfg(scheme="no_irs"),
    }
    return _run_curves(out_dir, "fig3_offline_rho", curves, seeds)


def _preset_fig3_online_v(out_dir: Path, seeds) -> list[Path]:
    small = dict(num_devices=5, num_elements=8)
    curves = {
        "online_V20": _cfg(scheme="online", v_mode="fixed", v_fixed=20.0, **small),
        "online_V90": _cfg(scheme="online", v_mode="fixed", v_fixed=90.0, **small),
        "online_varying": _cfg(scheme="online", v_mode="varying", **small),
    }
    return _run_curves(out_dir, "fig3_online_V", curves, seeds)


def _preset_fig3_power_trace(out_dir: Path, seeds) -> list[Path]:
    cfg = _cfg(scheme="online", v_mode="varying", channel_mode="static",
               num_devices=5, num_elements=8, total_rounds=40,
               num_periods=4, period_len=10)
    rows = []
    for seed in seeds:
        tr = run_experiment(cfg, seed)
        for t in range(len(tr)):
            rows.append((seed, t + 1, float(np.sum(tr.powers[t])),
                         float(np.sum(tr.queues[t])), tr.v_values[t]))
    path = out_dir / "fig3_power_trace.csv"
    _write_csv(path, ("seed", "round", "total_power", "total_queue", "v"), rows)
    _write_manifest(out_dir, "fig3_power_trace", {"online": asdict(cfg)}, seeds)
    return [path]


def _preset_table1(out_dir: Path, seeds) -> list[Path]:
    rows = []
    configs = {}
    for rho, big_r in ((1, 20), (4, 5), (10, 2)):
        cfg = _cfg(scheme="offline", period_len=rho, num_periods=big_r)
        configs[f"rho{rho}"] = asdict(cfg)
        finals = [run_experiment(cfg, s).final_loss() for s in seeds]
        for s, v in zip(seeds, finals):
            rows.append((rho, s, v))
        rows.append((rho, "mean", float(np.mean(finals))))
    path = out_dir / "table1_rho_grid.csv"
    _write_csv(path, ("rho", "seed", "final_loss"), rows)
    _write_manifest(out_dir, "table1_rho_grid", configs, seeds)
    return [path]


def _preset_table2(out_dir: Path, seeds) -> list[Path]:
    rows = []
    configs = {}
    for scheme in ("offline", "online"):
        for order in ("proposed", "descending", "equal"):
            cfg = _cfg(scheme=scheme, power_order=order,
                       num_devices=5, num_elements=8)
            configs[f"{scheme}_{order}"] = asdict(cfg)
            finals = [run_experiment(cfg, s).final_loss() for s in seeds]
            rows.append((scheme, order, float(np.mean(finals))))
    path = out_dir / "table2_power_order.csv"
    _write_csv(path, ("scheme", "power_order", "mean_final_loss"), rows)
    _write_manifest(out_dir, "table2_power_order", configs, seeds)
    return [path]


def _preset_fig6_vs_n(out_dir: Path, seeds) -> list[Path]:
    rows = []
    configs = {}
    for n in (0, 8, 16):
        cfg = _cfg(scheme="offline", num_elements=n)
        configs[f"N{n}"] = asdict(cfg)
        finals = [run_experiment(cfg, s).final_loss() for s in seeds]
        rows.append((n, float(np.mean(finals))))
    path = out_dir / "fig6_vs_N.csv"
    _write_csv(path, ("num_elements", "mean_final_loss"), rows)
    _write_manifest(out_dir, "fig6_vs_N", configs, seeds)
    return [path]


def _preset_fig6_vs_k(out_dir: Path, seeds) -> list[Path]:
    rows = []
    configs = {}
    for k in (5, 10):
        cfg = _cfg(scheme="offline", num_devices=k)
        configs[f"K{k}"] = asdict(cfg)
        finals = [run_experiment(cfg, s).final_loss() for s in seeds]
        rows.append((k, float(np.mean(finals))))
    path = out_dir / "fig6_vs_K.csv"
    _write_csv(path, ("num_devices", "mean_final_loss"), rows)
    _write_manifest(out_dir, "fig6_vs_K", configs, seeds)
    return [path]


_PRESETS = {
    "fig2_convergence": _preset_fig2,
    "fig3_offline_rho": _preset_fig3_offline_rho,
    "fig3_online_V": _preset_fig3_online_v,
    "fig3_power_trace": _preset_fig3_power_trace,
    "table1_rho_grid": _preset_table1,
    "table2_power_order": _preset_table2,
    "fig6_vs_N": _preset_fig6_vs_n,
    "fig6_vs_K": _preset_fig6_vs_k,
}


def run_preset(name: str, out_dir: str | Path, seeds=(0,)) -> list[Path]:
    """Execute a named preset; returns the written artifact paths."""
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return _PRESETS[name](out, tuple(int(s) for s in seeds))


def emit_summary(traces: list[ExperimentTrace]) -> dict:
    """Cross-seed summary of final losses and gaps (std error null for a
    single trace)."""
    if not traces:
        raise ConfigError("need at least one trace")
    finals = np.array([t.final_loss() for t in traces])
    gaps = np.array([t.gaps[-1] for t in traces])
    n = len(traces)

    def se(x):
        return None if n < 2 else float(np.std(x, ddof=1) / np.sqrt(n))

    return {
        "num_traces": n,
        "schemes": sorted({t.scheme for t in traces}),
        "seeds": [t.seed for t in traces],
        "final_loss_mean": float(np.mean(finals)),
        "final_loss_stderr": se(finals),
        "final_gap_mean": float(np.mean(gaps)),
        "final_gap_stderr": se(gaps),
        "per_trace_final_loss": finals.tolist(),
    }

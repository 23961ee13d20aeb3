"""IRS-assisted over-the-air federated learning simulator.

Core pieces: channel generation (`channel`), analog aggregation and its
error model (`aircomp`), convergence-gap weights (`gap`), offline/online
transceiver optimization (`bcd`), queue-based online control (`lyapunov`),
the learning loop (`flsim`), and configuration/presets/CLI plumbing
(`config`, `presets`, `cli`).
"""

from .aircomp import (GradientStats, NoiseModel, RoundDesign, compute_stats,
                      denormalize_offline, denormalize_online, error_terms_offline,
                      error_terms_online, estimate_gamma, normalize_offline,
                      normalize_online, simulate_uplink)
from .bcd import (BcdSettings, PeriodDesign, PowerBudget, RoundSolution,
                  align_phase, power_alloc_offline, power_alloc_online,
                  receiver_offline, receiver_online, refine_phases,
                  solve_p1_period, solve_p2_round)
from .channel import (ChannelState, Geometry, IrsPhases, PathLossParams,
                      channel_from_json, channel_to_json, default_geometry,
                      effective_channel, effective_channels, path_loss,
                      phase_grid, sample_channels, snap_to_grid)
from .config import ScenarioConfig, parse_config, parse_config_text, with_overrides
from .errors import ConfigError, DegenerateInputError, DomainError, IrsflError
from .flsim import (ExperimentTrace, LearningTask, global_step, local_gradient,
                    loss, make_task, run_experiment, solve_w_star, task_constants)
from .gap import (GapWeights, gap_bound, gap_bound_varying_rate, lambda_period,
                  omega, period_rounds)
from .lyapunov import (EnergyQueues, OnlineTrace, Theorem2Report, VSchedule,
                       init_queues, omniscient_gap_values, queue_update,
                       run_online_controller, theorem2_check, v_value)

__version__ = "1.0.0"

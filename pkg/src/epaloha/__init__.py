"""Multichannel slotted ALOHA with a preamble-based exploration phase."""

from .analytic import (
    FixedPointResult,
    ThroughputCurve,
    delay_outage,
    eta_sa_blind,
    eta_sa_known,
    feedback_bits,
    max_throughput_ratio,
    mean_delay,
    min_pool_size,
    n_ep_approx,
    n_ep_cond,
    n_ep_lower_poisson,
    n_ep_oracle,
    n_ep_upper,
    n_ma,
    n_ma_poisson,
    overhead_factor,
    preamble_no_collision_prob,
    psi,
    psi_max,
    q_ep_asymptotic,
    q_ma,
    s_bar,
    solve_lambda_ep,
    solve_lambda_ma,
)
from .config import (
    EstimationMode,
    ExplorationOutcome,
    Feedback,
    SlotResult,
    SteadyStateStats,
    SystemConfig,
    TrafficConfig,
    load_config,
    validate,
)
from .mac import (
    Scheme,
    decode_feedback,
    encode_feedback,
    make_feedback,
    run_dtp,
    run_exploration,
    simulate_fast_retrial,
    simulate_single_shot,
)
from .phy import (
    PreambleCounter,
    PreamblePool,
    build_alltop_pool,
    collision_stats,
    estimate_counts,
    estimate_support,
    synthesize_channel,
)

__version__ = "0.1.0"

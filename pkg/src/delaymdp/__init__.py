"""Goal-oriented sampling and remote decision-making under random delay.

Build a lifted decision process over delivery epochs from a controlled
Markov source and a finite-support delay law, solve it for the optimal
sampling/decision policy with or without a sampling-frequency constraint,
and cross-validate everything against a slot-level simulator.
"""

__version__ = "0.1.0"

from .baselines import (
    SamplingRule,
    aoi_optimal_beta,
    longterm_primal_policy,
    myopic_policy,
    sampling_rule_wait,
)
from .constrained import (
    ConstrainedReport,
    InfeasibleRateError,
    MixturePolicy,
    OccupancyPolicy,
    occupancy_to_policy,
    quick_blp,
    sampling_threshold,
    sensitivity_derivative,
    three_layer_solve,
)
from .lifted import (
    EpochAction,
    LiftedMdp,
    LiftedState,
    build_lifted,
    check_unichain_sufficient,
    cost_bounds,
    default_z_max,
)
from .lp import LinearProgram, LpSolution, LpStatus, solve_lp
from .model import (
    BENCHMARK_PRIMAL,
    DecisionRule,
    DelayDistribution,
    ModelError,
    PrimalMdp,
    StationaryError,
    delay_moments,
    make_delay,
    stationary_distribution,
    validate_primal,
)
from .sim import SimConfig, SimStats, simulate_epochs, simulate_uniform_queue
from .unconstrained import (
    DeterministicPolicy,
    IterationTrace,
    PolicyEvaluation,
    SolverConfig,
    SolverError,
    bisec_tau_rvi,
    evaluate_policy,
    extract_policy,
    f_limits,
    fpbi,
    one_pdsi,
    rvi,
    tau_rvi,
)

__all__ = [
    "BENCHMARK_PRIMAL",
    "ConstrainedReport",
    "DecisionRule",
    "DelayDistribution",
    "DeterministicPolicy",
    "EpochAction",
    "InfeasibleRateError",
    "IterationTrace",
    "LiftedMdp",
    "LiftedState",
    "LinearProgram",
    "LpSolution",
    "LpStatus",
    "MixturePolicy",
    "ModelError",
    "OccupancyPolicy",
    "PolicyEvaluation",
    "PrimalMdp",
    "SamplingRule",
    "SimConfig",
    "SimStats",
    "SolverConfig",
    "SolverError",
    "StationaryError",
    "aoi_optimal_beta",
    "bisec_tau_rvi",
    "build_lifted",
    "check_unichain_sufficient",
    "cost_bounds",
    "default_z_max",
    "delay_moments",
    "evaluate_policy",
    "extract_policy",
    "f_limits",
    "fpbi",
    "longterm_primal_policy",
    "make_delay",
    "myopic_policy",
    "occupancy_to_policy",
    "one_pdsi",
    "quick_blp",
    "rvi",
    "sampling_rule_wait",
    "sampling_threshold",
    "sensitivity_derivative",
    "simulate_epochs",
    "simulate_uniform_queue",
    "solve_lp",
    "stationary_distribution",
    "tau_rvi",
    "three_layer_solve",
    "validate_primal",
]

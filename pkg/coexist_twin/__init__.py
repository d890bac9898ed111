"""
Coexist Twin Library

A Python library for simulating URLLC traffic and n-sync distributed learning
sharing a cellular deployment, and for learning which devices should take part in
each learning iteration.

Features:
- TTI-level radio simulation with strict URLLC priority, HARQ and RLC AM/UM
- Survival-time availability and n-sync training-delay metrics
- Convergence bounds with Monte Carlo validation
- Soft actor-critic device selection on a self-contained network
- Baselines, experiment plans and plot-ready result tables
"""

__version__ = "0.1.0"

from .errors import CoexistError, ConfigError, DomainError, OrderingError, PlanError, ProtocolError, RegimeError
from .scenario import (
    AgentHyperparams, Direction, Flow, LearningTaskConfig, PRESETS, RadioParams, RewardWeights,
    ScenarioConfig, UrllcProfile, derive_rng, load_scenario, save_scenario, scenario_from_dict,
)
from .channel import ChannelModel, LinkGeometry, LinkState, los_probability, sinr_db
from .link import per_from_sinr, select_mcs
from .ran_sim import DeliveryEvent, RanEngine
from .metrics import (
    AvailabilityRecord, IterationOutcome, NetworkEvent, WindowStats, availability_estimate,
    requirement_satisfied, sensitivity_curve, training_delay, update_network_state, window_stats,
)
from .dist_learn import LearningTask, ModelState, global_update, initial_model, local_update, run_protocol
from .bounds import (
    ConvergenceParams, fl_gap_bound, kmin_fl_proportional, kmin_nonconvex, kmin_strongly_convex,
    validate_bound_empirically,
)
from .replay import PrioritizedReplayBuffer, Transition
from .sac import SacAgent, critic_target, sample_action, train_step
from .environment import CoexistenceEnv, StateEncoder, ToyCoexistenceEnv, compute_reward, map_action
from .agent import Trainer, run_episode, train_agent
from .harness import ExperimentPlan, ResultSet, run_plan, summarize

__all__ = [
    # Errors
    "CoexistError",
    "ConfigError",
    "DomainError",
    "OrderingError",
    "PlanError",
    "ProtocolError",
    "RegimeError",

    # Scenario
    "AgentHyperparams",
    "Direction",
    "Flow",
    "LearningTaskConfig",
    "PRESETS",
    "RadioParams",
    "RewardWeights",
    "ScenarioConfig",
    "UrllcProfile",
    "derive_rng",
    "load_scenario",
    "save_scenario",
    "scenario_from_dict",

    # Radio
    "ChannelModel",
    "LinkGeometry",
    "LinkState",
    "los_probability",
    "sinr_db",
    "per_from_sinr",
    "select_mcs",
    "DeliveryEvent",
    "RanEngine",

    # Metrics
    "AvailabilityRecord",
    "IterationOutcome",
    "NetworkEvent",
    "WindowStats",
    "availability_estimate",
    "requirement_satisfied",
    "sensitivity_curve",
    "training_delay",
    "update_network_state",
    "window_stats",

    # Distributed learning and bounds
    "LearningTask",
    "ModelState",
    "global_update",
    "initial_model",
    "local_update",
    "run_protocol",
    "ConvergenceParams",
    "fl_gap_bound",
    "kmin_fl_proportional",
    "kmin_nonconvex",
    "kmin_strongly_convex",
    "validate_bound_empirically",

    # Agent
    "PrioritizedReplayBuffer",
    "Transition",
    "SacAgent",
    "critic_target",
    "sample_action",
    "train_step",
    "CoexistenceEnv",
    "StateEncoder",
    "ToyCoexistenceEnv",
    "compute_reward",
    "map_action",
    "Trainer",
    "run_episode",
    "train_agent",

    # Harness
    "ExperimentPlan",
    "ResultSet",
    "run_plan",
    "summarize",
]

"""
Environment module for Coexist Twin.

Contains the device-selection MDP: state encoding of the window statistics, the
action-to-selection mapping, the reward, the simulator-backed environment and an
analytic toy environment with the same interface.
"""

from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np

from .dist_learn import LearningTask, ModelState, initial_model, run_protocol
from .errors import ConfigError
from .metrics import IterationOutcome, WindowStats, window_stats
from .ran_sim import RanEngine
from .scenario import Direction, Flow, ScenarioConfig, derive_rng

logger = logging.getLogger(__name__)

SINR_RANGE_DB = (-20.0, 60.0)
URLLC_BUFFER_PACKETS = 8
"""URLLC buffers are normalized by this many packets of the device's size."""


def map_action(action: Sequence[float], n: int) -> np.ndarray:
    """
    Selection vector for a continuous action.

    Every device with a nonnegative entry is selected when there are at least n of
    them; otherwise every device whose entry reaches the n-th largest one. Ties at
    the threshold may select more than n devices.

    Raises:
        ValueError: n outside [1, N]
    """
    a = np.asarray(action, dtype=float).ravel()
    if not 1 <= n <= a.size:
        raise ValueError(f"n must be in [1, {a.size}], got {n}")
    nonnegative = a >= 0.0
    if np.count_nonzero(nonnegative) >= n:
        return nonnegative.astype(int)
    threshold = np.sort(a)[::-1][n - 1]
    return (a >= threshold).astype(int)


def compute_reward(alphas: Union[Mapping[Any, float], Sequence[float]], d_ai: float,
                   config: ScenarioConfig) -> float:
    """
    upsilon exp(zeta min(min(alpha - alpha_req), 0)) + (1 - upsilon)(T_max - d_AI) / T_max.

    d_AI is clipped to [0, T_max]. A deployment without URLLC devices earns the full
    URLLC term.
    """
    values = list(alphas.values()) if isinstance(alphas, Mapping) else list(alphas)
    weights = config.reward_weights
    worst_gap = min((alpha - config.availability_req for alpha in values), default=0.0)
    urllc_term = weights.upsilon * math.exp(weights.zeta * min(worst_gap, 0.0))
    t_max = config.t_max_seconds
    d = min(max(d_ai, 0.0), t_max)
    return urllc_term + (1.0 - weights.upsilon) * (t_max - d) / t_max


def _unit(value: float, scale: float) -> float:
    return min(1.0, max(0.0, value / scale)) if scale > 0 else 0.0


def _sinr_unit(value: float) -> float:
    lo, hi = SINR_RANGE_DB
    return min(1.0, max(0.0, (value - lo) / (hi - lo)))


def _present(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


class StateEncoder:
    """
    Flat [0, 1] state vector from window statistics.

    Layout per URLLC device: cell one-hot, then per direction PER, mean downtime,
    buffer, SINR p1/p5/median, delay median/p95/p99 and three presence bits (PER,
    SINR, delay). Per AI device: selected flag, DL and UL delays with presence bits,
    then per direction buffer, SINR p5/median/p95 and a SINR presence bit. Per gNB:
    mean RBs per flow and direction. Missing statistics encode as 0 with their
    presence bit cleared.
    """

    URLLC_PER_DIRECTION = 12
    AI_FIXED = 5
    AI_PER_DIRECTION = 5

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.gnb_count = config.gnb_count
        self.dimension = (
            config.urllc_count * (self.gnb_count + 2 * self.URLLC_PER_DIRECTION)
            + config.big_n * (self.AI_FIXED + 2 * self.AI_PER_DIRECTION)
            + self.gnb_count * 2 * len(Flow)
        )

    def normalization(self) -> Dict[str, Any]:
        """Constants used by encode, for run manifests."""
        return {
            "sinr_range_db": list(SINR_RANGE_DB),
            "ai_delay_scale_s": self.config.t_max_seconds,
            "urllc_delay_scale_s": {d.value: self.config.delay_bounds[d] for d in Direction},
            "downtime_scale_s": self.config.t_max_seconds,
            "urllc_buffer_packets": URLLC_BUFFER_PACKETS,
            "ai_buffer_scale_bytes": self.config.ai_message_bytes,
            "rb_scale": self.config.radio.rb_count,
        }

    def encode(self, stats: WindowStats) -> np.ndarray:
        cfg = self.config
        out: List[float] = []
        for u, profile in enumerate(cfg.urllc_devices):
            cell = stats.urllc[(u, Direction.UL)].cell
            out.extend(1.0 if g == cell else 0.0 for g in range(self.gnb_count))
            for direction in Direction:
                s = stats.urllc[(u, direction)]
                packet = profile.ul_bytes if direction is Direction.UL else profile.dl_bytes
                bound = cfg.delay_bounds[direction]
                per_ok = _present(s.per)
                sinr_ok = _present(s.sinr_p1, s.sinr_p5, s.sinr_median)
                delay_ok = _present(s.delay_median, s.delay_p95, s.delay_p99)
                out.extend([
                    s.per if per_ok else 0.0,
                    _unit(s.mean_downtime_s, cfg.t_max_seconds),
                    _unit(s.buffer_bytes, URLLC_BUFFER_PACKETS * packet),
                ])
                out.extend(_sinr_unit(v) if sinr_ok else 0.0 for v in (s.sinr_p1, s.sinr_p5, s.sinr_median))
                out.extend(_unit(v, bound) if delay_ok else 0.0
                           for v in (s.delay_median, s.delay_p95, s.delay_p99))
                out.extend([float(per_ok), float(sinr_ok), float(delay_ok)])
        for i in range(cfg.big_n):
            first = stats.ai[(i, Direction.DL)]
            dl_ok, ul_ok = _present(first.downlink_s), _present(first.uplink_s)
            out.extend([
                float(first.selected),
                _unit(first.downlink_s, cfg.t_max_seconds) if dl_ok else 0.0,
                _unit(first.uplink_s, cfg.t_max_seconds) if ul_ok else 0.0,
                float(dl_ok),
                float(ul_ok),
            ])
            for direction in Direction:
                s = stats.ai[(i, direction)]
                sinr_ok = _present(s.sinr_p5, s.sinr_median, s.sinr_p95)
                out.append(_unit(s.buffer_bytes, cfg.ai_message_bytes))
                out.extend(_sinr_unit(v) if sinr_ok else 0.0 for v in (s.sinr_p5, s.sinr_median, s.sinr_p95))
                out.append(float(sinr_ok))
        for g in range(self.gnb_count):
            for flow in Flow:
                for direction in Direction:
                    out.append(_unit(stats.mean_rbs[(g, flow, direction)], cfg.radio.rb_count))
        state = np.asarray(out, dtype=float)
        if state.size != self.dimension:
            raise RuntimeError(f"encoded {state.size} entries, expected {self.dimension}")
        return state


@dataclass
class StepResult:
    """Environment response to one action."""
    state: np.ndarray
    reward: float
    done: bool
    not_done: float
    info: Dict[str, Any] = field(default_factory=dict)


@dataclass
class AvailabilitySample:
    iteration: int
    device: int
    direction: Direction
    start_s: float
    end_s: float
    availability: float


class CoexistenceEnv:
    """
    Simulator-backed device-selection MDP.

    reset builds a fresh engine, task and model for the seed and runs one
    iteration with n random devices to produce the first state. Each step maps the
    action to a selection, runs one n-sync iteration over the network, closes the
    measurement window and returns the encoded next state and the reward. The
    terminal flag not_done is 0 only when the model has converged; episodes that
    hit the length limit end with not_done = 1.

    Args:
        config: Scenario
        verbose: Log each iteration at DEBUG level
        trace: Keep the engine's per-TTI allocation trace
    """

    def __init__(self, config: ScenarioConfig, verbose: bool = False, trace: bool = False):
        self.config = config
        self.verbose = verbose
        self.trace = trace
        self.encoder = StateEncoder(config)
        self.engine: Optional[RanEngine] = None
        self.task: Optional[LearningTask] = None
        self.model: Optional[ModelState] = None
        self.iterations = 0
        self.outcomes: List[IterationOutcome] = []
        self.availability: List[AvailabilitySample] = []
        self.rewards: List[float] = []
        self.state: Optional[np.ndarray] = None

    @property
    def state_dim(self) -> int:
        return self.encoder.dimension

    @property
    def action_dim(self) -> int:
        return self.config.big_n

    @property
    def episode_length(self) -> int:
        return self.config.episode_length

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        if seed is not None:
            self.config = self.config.with_seed(seed)
        cfg = self.config
        self.engine = RanEngine(cfg, verbose=self.verbose, trace=self.trace)
        self.task = LearningTask.from_config(cfg.learning, cfg.big_n, derive_rng(cfg, "task"))
        self.model = initial_model(self.task, derive_rng(cfg, "initial-model"))
        self._noise_rng = derive_rng(cfg, "gradient-noise")
        self.iterations = 0
        self.outcomes = []
        self.availability = []
        self.rewards = []

        selection = np.zeros(cfg.big_n, dtype=int)
        chosen = derive_rng(cfg, "initial-selection").choice(cfg.big_n, size=cfg.n, replace=False)
        selection[chosen] = 1
        outcome, self.model = run_protocol(self.engine, selection, self.model, self.task, self._noise_rng)
        self.state, _, _ = self._observe(outcome)
        return self.state

    def _observe(self, outcome: IterationOutcome) -> Tuple[np.ndarray, WindowStats, Dict[Tuple[int, Direction], float]]:
        engine = self.engine
        log = engine.close_window()
        for i in range(self.config.big_n):
            log.ai_selected[i] = i in outcome.selected
        for i in outcome.selected:
            log.ai_downlink_s[i] = outcome.downlink_s[i]
            log.ai_uplink_s[i] = outcome.uplink_s[i]
        stats = window_stats(log, self.config.urllc_count, self.config.big_n, self.config.gnb_count)
        alphas = engine.availability_window(log.start_s, log.end_s)
        return self.encoder.encode(stats), stats, alphas

    def step(self, action: Sequence[float]) -> StepResult:
        if self.engine is None or self.model is None or self.task is None:
            raise RuntimeError("call reset() before step()")
        selection = map_action(action, self.config.n)
        outcome, self.model = run_protocol(self.engine, selection, self.model, self.task, self._noise_rng)
        state, stats, alphas = self._observe(outcome)
        reward = compute_reward(alphas, outcome.training_delay_s, self.config)
        self.iterations += 1
        for (u, direction), alpha in sorted(alphas.items(), key=lambda item: (item[0][0], item[0][1].value)):
            self.availability.append(
                AvailabilitySample(self.iterations, u, direction, stats.start_s, stats.end_s, alpha))
        self.outcomes.append(outcome)
        self.rewards.append(reward)
        converged = self.model.converged
        done = converged or self.iterations >= self.config.episode_length
        if self.verbose:
            logger.debug("iteration %d: m=%d d_ai=%.3fs reward=%.4f converged=%s",
                         self.iterations, outcome.m, outcome.training_delay_s, reward, converged)
        self.state = state
        return StepResult(
            state=state,
            reward=reward,
            done=done,
            not_done=0.0 if converged else 1.0,
            info={"outcome": outcome, "alphas": alphas, "selection": selection, "converged": converged},
        )


class ToyCoexistenceEnv:
    """
    Analytic, deterministic stand-in for the simulator with the same interface.

    Every device i needs base_delays[i] + congestion * m seconds for its update
    when m devices are selected. Devices listed in `interferers` sit behind a
    heavily loaded cell: each one selected costs the URLLC device `availability_hit`
    of availability. The state is the last selection, the last normalized training
    delay and the last availability gap.

    Args:
        config: Scenario supplying n, N, T_max, alpha_req, reward weights, episode length
        base_delays: Per-device update delay without congestion
        interferers: Devices behind the high-interference cell
    """

    def __init__(
        self,
        config: ScenarioConfig,
        base_delays: Sequence[float] = (2.0, 2.5, 3.0, 3.5, 0.5, 0.7),
        interferers: Sequence[int] = (4, 5),
        congestion_s: float = 0.3,
        baseline_availability: float = 0.995,
        availability_hit: float = 0.02,
        server_processing_s: float = 0.1,
    ):
        if len(base_delays) != config.big_n:
            raise ConfigError(
                f"base_delays must list N={config.big_n} values, got {len(base_delays)}", "base_delays")
        self.config = config
        self.base_delays = np.asarray(base_delays, dtype=float)
        self.interferers = tuple(interferers)
        self.congestion_s = congestion_s
        self.baseline_availability = baseline_availability
        self.availability_hit = availability_hit
        self.server_processing_s = server_processing_s
        self.iterations = 0
        self.state = np.zeros(self.state_dim)
        self.rewards: List[float] = []

    @property
    def state_dim(self) -> int:
        return self.config.big_n + 2

    @property
    def action_dim(self) -> int:
        return self.config.big_n

    @property
    def episode_length(self) -> int:
        return self.config.episode_length

    def evaluate(self, selection: Sequence[int]) -> Tuple[float, float, float]:
        """(reward, training delay, availability) of one selection."""
        chosen = np.flatnonzero(np.asarray(selection))
        m = len(chosen)
        totals = np.sort(self.base_delays[chosen] + self.congestion_s * m)
        d_ai = min(totals[self.config.n - 1] + self.server_processing_s, self.config.t_max_seconds)
        hits = sum(1 for i in chosen if i in self.interferers)
        alpha = min(1.0, max(0.0, self.baseline_availability - self.availability_hit * hits))
        return compute_reward([alpha], d_ai, self.config), d_ai, alpha

    def _encode(self, selection: Sequence[int], d_ai: float, alpha: float) -> np.ndarray:
        gap = alpha - self.config.availability_req
        return np.concatenate([
            np.asarray(selection, dtype=float),
            [d_ai / self.config.t_max_seconds, min(1.0, max(0.0, 0.5 + 10.0 * gap))],
        ])

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        self.iterations = 0
        self.rewards = []
        self.state = np.zeros(self.state_dim)
        return self.state

    def step(self, action: Sequence[float]) -> StepResult:
        selection = map_action(action, self.config.n)
        reward, d_ai, alpha = self.evaluate(selection)
        self.iterations += 1
        self.rewards.append(reward)
        self.state = self._encode(selection, d_ai, alpha)
        return StepResult(
            state=self.state,
            reward=reward,
            done=self.iterations >= self.config.episode_length,
            not_done=1.0,
            info={"selection": selection, "training_delay_s": d_ai, "alphas": {0: alpha}},
        )

    def feasible_selections(self) -> List[Tuple[int, ...]]:
        """Every subset of at least n devices."""
        big_n = self.config.big_n
        return [c for size in range(self.config.n, big_n + 1) for c in combinations(range(big_n), size)]

    def best_fixed_selection(self) -> Tuple[Tuple[int, ...], float]:
        """Exhaustive search over feasible selections; ties go to the first in enumeration order."""
        best: Tuple[Tuple[int, ...], float] = ((), -math.inf)
        for subset in self.feasible_selections():
            selection = np.zeros(self.config.big_n, dtype=int)
            selection[list(subset)] = 1
            reward = self.evaluate(selection)[0]
            if reward > best[1]:
                best = (subset, reward)
        return best

    def random_policy_reward(self, rng: np.random.Generator, samples: int = 10_000) -> float:
        """Mean reward of actions drawn uniformly from [-1, 1]^N."""
        actions = rng.uniform(-1.0, 1.0, size=(samples, self.config.big_n))
        return float(np.mean([self.evaluate(map_action(a, self.config.n))[0] for a in actions]))

"""
Scenario module for Coexist Twin.

Holds the complete experiment description (deployment, traffic, radio numerology,
learning task, agent hyperparameters, seeds), its JSON loader, the global
identifiers shared by every subsystem and the deterministic RNG hierarchy.
"""

from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Type, TypeVar, Union
import json
import logging
import zlib

import numpy as np

from .errors import ConfigError

logger = logging.getLogger(__name__)

Point3D = Tuple[float, float, float]
T = TypeVar("T")

SPEED_30_KMH = 30.0 / 3.6


class Direction(Enum):
    """Link direction."""
    UL = "UL"
    DL = "DL"


class Flow(Enum):
    """QoS flow; URLLC always has strict priority over AI."""
    URLLC = "URLLC"
    AI = "AI"


@dataclass(frozen=True)
class DirectionPair:
    """A value per link direction (survival times, delay bounds, retx limits)."""
    ul: float
    dl: float

    def __getitem__(self, direction: Direction) -> float:
        return self.ul if direction is Direction.UL else self.dl


@dataclass(frozen=True)
class UrllcProfile:
    """
    Periodic UL/DL URLLC traffic source with 1D back-and-forth mobility.

    Attributes:
        initial_position: Anchor point of the movement (m)
        speed_mps: 1D speed (30 km/h in the factory benchmarks)
        direction_policy: "fixed" uses direction_deg, "random" draws a heading per seed
        direction_deg: Heading in the horizontal plane when the policy is fixed
        placement: "fixed" keeps initial_position, "random" redraws it per seed
        packet_period_s: Period of both UL and DL packets
        ul_bytes: UL packet size
        dl_bytes: DL packet size
    """
    initial_position: Point3D
    speed_mps: float = SPEED_30_KMH
    direction_policy: str = "random"
    direction_deg: float = 0.0
    placement: str = "fixed"
    packet_period_s: float = 0.006
    ul_bytes: int = 64
    dl_bytes: int = 80

    def __post_init__(self) -> None:
        if self.packet_period_s <= 0:
            raise ConfigError(
                f"packet_period_s must be positive, got {self.packet_period_s}",
                "packet_period_s",
            )
        for name in ("ul_bytes", "dl_bytes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}", name)
        if self.speed_mps < 0:
            raise ConfigError(f"speed_mps cannot be negative, got {self.speed_mps}", "speed_mps")
        if self.direction_policy not in ("fixed", "random"):
            raise ConfigError(
                f"direction_policy must be one of: fixed, random, got {self.direction_policy}",
                "direction_policy",
            )
        if self.placement not in ("fixed", "random"):
            raise ConfigError(
                f"placement must be one of: fixed, random, got {self.placement}", "placement"
            )


@dataclass(frozen=True)
class RewardWeights:
    """Weights of the reward: upsilon splits URLLC vs AI terms, zeta sharpens the penalty."""
    upsilon: float = 0.5
    zeta: float = 100.0


@dataclass(frozen=True)
class RadioParams:
    """
    Radio numerology and link abstraction constants not covered by the top level.

    The noise figure and the combining gain are declared link-budget abstractions
    with no measured counterpart.
    """
    carrier_ghz: float = 2.6
    rb_count: int = 106
    subcarrier_spacing_hz: float = 30e3
    gnb_height_m: float = 8.0
    device_height_m: float = 1.5
    clutter_height_m: float = 6.0
    clutter_size_m: float = 2.0
    clutter_density: float = 0.6
    shadowing_std_los_db: float = 4.3
    shadowing_std_nlos_db: float = 4.0
    noise_figure_db: float = 9.0
    combining_gain_db: float = 3.0
    fast_fading: bool = True
    position_grid_m: float = 0.5
    movement_span_m: float = 2.0
    max_harq_urllc: DirectionPair = DirectionPair(ul=3, dl=2)
    max_harq_ai: DirectionPair = DirectionPair(ul=10, dl=10)
    max_rlc_retx_ai: int = 8
    processing_offset_ttis: int = 1
    harq_feedback_ttis: int = 1
    target_bler: float = 0.1
    pf_smoothing: float = 0.05
    sinr_filter: float = 0.2

    def __post_init__(self) -> None:
        if self.rb_count <= 0:
            raise ConfigError(f"rb_count must be positive, got {self.rb_count}", "rb_count")
        if not 0.0 < self.clutter_density < 1.0:
            raise ConfigError(
                f"clutter_density must be in (0, 1), got {self.clutter_density}",
                "clutter_density",
            )
        if self.gnb_height_m <= self.device_height_m:
            raise ConfigError("gnb_height_m must exceed device_height_m", "gnb_height_m")
        if not 0.0 < self.target_bler < 1.0:
            raise ConfigError(f"target_bler must be in (0, 1), got {self.target_bler}", "target_bler")
        if self.position_grid_m <= 0:
            raise ConfigError("position_grid_m must be positive", "position_grid_m")
        if self.max_rlc_retx_ai < 0:
            raise ConfigError("max_rlc_retx_ai cannot be negative", "max_rlc_retx_ai")


@dataclass(frozen=True)
class LearningTaskConfig:
    """
    Synthetic distributed-learning task run over the network.

    Attributes:
        kind: "quadratic" (strongly convex), "nonconvex" (cosine well) or "fl"
        dimension: Model dimension d
        curvature_min: Strong-convexity constant mu (smallest Hessian eigenvalue)
        curvature_max: Smoothness L (largest Hessian eigenvalue)
        well_depth: Amplitude of the cosine term for the nonconvex task
        data_spread: Standard deviation of the per-device minimizers b_i
        sigma2: Gradient noise energy E||e||^2
        learning_rate: Fixed step size (DGD) or local step size (FL)
        lr_schedule: "constant" or "diminishing" (FL only)
        local_epochs: E, local SGD steps per FL round
        epsilon: Accuracy defining convergence
        compute_median_s: Median device compute delay
        compute_sigma: Log-standard deviation of device compute delay
        server_processing_s: Constant server processing delay
    """
    kind: str = "quadratic"
    dimension: int = 10
    curvature_min: float = 1.0
    curvature_max: float = 1.0
    well_depth: float = 2.0
    data_spread: float = 1.0
    sigma2: float = 1.0
    learning_rate: float = 0.1
    lr_schedule: str = "constant"
    local_epochs: int = 1
    epsilon: float = 0.05
    compute_median_s: float = 0.05
    compute_sigma: float = 0.5
    server_processing_s: float = 0.01

    def __post_init__(self) -> None:
        if self.kind not in ("quadratic", "nonconvex", "fl"):
            raise ConfigError(
                f"kind must be one of: quadratic, nonconvex, fl, got {self.kind}", "kind"
            )
        if self.dimension <= 0:
            raise ConfigError(f"dimension must be positive, got {self.dimension}", "dimension")
        if not 0 < self.curvature_min <= self.curvature_max:
            raise ConfigError("0 < curvature_min <= curvature_max violated", "curvature_min")
        if self.sigma2 < 0:
            raise ConfigError(f"sigma2 cannot be negative, got {self.sigma2}", "sigma2")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}", "learning_rate")
        if self.lr_schedule not in ("constant", "diminishing"):
            raise ConfigError("lr_schedule must be one of: constant, diminishing", "lr_schedule")
        if self.local_epochs < 1:
            raise ConfigError(f"local_epochs must be >= 1, got {self.local_epochs}", "local_epochs")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}", "epsilon")
        if self.compute_median_s < 0 or self.server_processing_s < 0:
            raise ConfigError("compute delays cannot be negative", "compute_median_s")


@dataclass(frozen=True)
class AgentHyperparams:
    """
    Soft actor-critic hyperparameters.

    Defaults: lambda=0.1, |B_mb|=200, 10^6 replay, 128x128 hidden layers,
    alpha/beta=0.6/0.4, lr 3e-4, nu=0.002.
    """
    discount: float = 0.1
    minibatch_size: int = 200
    replay_capacity: int = 1_000_000
    hidden_sizes: Tuple[int, ...] = (128, 128)
    priority_alpha: float = 0.6
    priority_beta: float = 0.4
    prioritized: bool = True
    learning_rate: float = 3e-4
    soft_update: float = 0.002
    temperature_mode: str = "auto"
    initial_temperature: float = 0.2
    target_entropy: Optional[float] = None
    min_buffer_fill: int = 200
    train_every: int = 200
    gradient_steps: int = 200
    grad_clip: float = 10.0
    log_std_min: float = -20.0
    log_std_max: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.discount <= 1.0:
            raise ConfigError(f"discount must be in [0, 1], got {self.discount}", "discount")
        if not 0.0 < self.soft_update <= 1.0:
            raise ConfigError(f"soft_update must be in (0, 1], got {self.soft_update}", "soft_update")
        for name in ("minibatch_size", "replay_capacity", "min_buffer_fill", "train_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}", name)
        if self.gradient_steps < 0:
            raise ConfigError("gradient_steps cannot be negative", "gradient_steps")
        if not self.hidden_sizes or any(width <= 0 for width in self.hidden_sizes):
            raise ConfigError("hidden_sizes must be non-empty positive widths", "hidden_sizes")
        if self.temperature_mode not in ("auto", "fixed"):
            raise ConfigError("temperature_mode must be one of: auto, fixed", "temperature_mode")
        if self.initial_temperature <= 0:
            raise ConfigError("initial_temperature must be positive", "initial_temperature")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive", "learning_rate")


def _default_gnbs() -> List[Point3D]:
    return [(10.0, 10.0, 8.0), (30.0, 10.0, 8.0), (10.0, 30.0, 8.0), (30.0, 30.0, 8.0)]


@dataclass(frozen=True)
class ScenarioConfig:
    """
    Full experiment description. Immutable once loaded.

    Defaults describe the factory-hall benchmark; see docs/config_schema.md for
    the JSON form.
    """
    urllc_devices: Tuple[UrllcProfile, ...]
    ai_device_count: int = 50
    required_updates: int = 15
    gnb_positions: Tuple[Point3D, ...] = field(default_factory=lambda: tuple(_default_gnbs()))
    hall_size_m: Point3D = (40.0, 40.0, 10.0)
    ai_positions: Optional[Tuple[Point3D, ...]] = None
    bandwidth_hz: float = 40e6
    tti_seconds: float = 0.5e-3
    ul_tx_power_w: float = 0.2
    dl_tx_power_w: float = 0.5
    t_max_seconds: float = 10.0
    episode_length: int = 50
    reward_weights: RewardWeights = RewardWeights()
    availability_req: float = 0.99
    sensitivity: float = 0.1
    survival_time_s: DirectionPair = DirectionPair(ul=0.006, dl=0.006)
    delay_bounds: DirectionPair = DirectionPair(ul=0.006, dl=0.004)
    ai_message_bytes: int = 2_000_000
    slicing_fraction: float = 0.0
    ai_traffic_enabled: bool = True
    rng_seed: int = 0
    radio: RadioParams = RadioParams()
    learning: LearningTaskConfig = LearningTaskConfig()
    agent: AgentHyperparams = AgentHyperparams()

    def __post_init__(self) -> None:
        self._validate_parameters()

    def _validate_parameters(self) -> None:
        """Check every invariant, naming the offending field."""
        n, big_n = self.required_updates, self.ai_device_count
        if big_n < 1:
            raise ConfigError(f"N must be >= 1, got {big_n}", "ai_device_count")
        if n < 1:
            raise ConfigError(f"n must be ≥ 1, got {n}", "required_updates")
        if n > big_n:
            raise ConfigError(f"n ≤ N violated: n={n}, N={big_n}", "required_updates")
        if self.t_max_seconds <= 0:
            raise ConfigError(f"t_max_seconds must be positive, got {self.t_max_seconds}", "t_max_seconds")
        if self.episode_length < 1:
            raise ConfigError(f"episode_length must be >= 1, got {self.episode_length}", "episode_length")
        if self.rng_seed < 0:
            raise ConfigError(f"rng_seed must be >= 0, got {self.rng_seed}", "rng_seed")
        if not 0.0 <= self.reward_weights.upsilon <= 1.0:
            raise ConfigError(
                f"upsilon must be in [0, 1], got {self.reward_weights.upsilon}", "reward_weights.upsilon"
            )
        if self.reward_weights.zeta <= 0:
            raise ConfigError(f"zeta must be positive, got {self.reward_weights.zeta}", "reward_weights.zeta")
        if not 0.0 < self.availability_req <= 1.0:
            raise ConfigError(
                f"availability_req must be in (0, 1], got {self.availability_req}", "availability_req"
            )
        if not 0.0 < self.sensitivity < 1.0:
            raise ConfigError(f"sensitivity must be in (0, 1), got {self.sensitivity}", "sensitivity")
        for name in ("survival_time_s", "delay_bounds"):
            pair = getattr(self, name)
            if pair.ul <= 0 or pair.dl <= 0:
                raise ConfigError(f"{name} must be positive per direction, got {pair}", name)
        for name in ("bandwidth_hz", "tti_seconds", "ul_tx_power_w", "dl_tx_power_w", "ai_message_bytes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}", name)
        if not 0.0 <= self.slicing_fraction <= 1.0:
            raise ConfigError(
                f"slicing_fraction must be in [0, 1], got {self.slicing_fraction}", "slicing_fraction"
            )
        if not self.gnb_positions:
            raise ConfigError("gnb_positions must not be empty", "gnb_positions")
        for i, pos in enumerate(self.gnb_positions):
            self._check_inside(pos, f"gnb_positions[{i}]")
        for i, profile in enumerate(self.urllc_devices):
            self._check_inside(profile.initial_position, f"urllc_devices[{i}].initial_position")
        if self.ai_positions is not None:
            if len(self.ai_positions) != big_n:
                raise ConfigError(
                    f"ai_positions must list N={big_n} points, got {len(self.ai_positions)}", "ai_positions"
                )
            for i, pos in enumerate(self.ai_positions):
                self._check_inside(pos, f"ai_positions[{i}]")

    def _check_inside(self, pos: Sequence[float], name: str) -> None:
        if len(pos) != 3:
            raise ConfigError(f"{name} must be a 3D point, got {pos}", name)
        if not all(0.0 <= coord <= bound for coord, bound in zip(pos, self.hall_size_m)):
            raise ConfigError(f"{name} {tuple(pos)} lies outside the hall {self.hall_size_m}", name)

    @property
    def n(self) -> int:
        return self.required_updates

    @property
    def big_n(self) -> int:
        return self.ai_device_count

    @property
    def urllc_count(self) -> int:
        return len(self.urllc_devices)

    @property
    def gnb_count(self) -> int:
        return len(self.gnb_positions)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        """Same scenario with another root seed."""
        return replace(self, rng_seed=int(seed))

    def to_dict(self) -> Dict[str, Any]:
        """Convert to plain JSON-compatible data."""
        return _to_plain(asdict(self))


def _to_plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {key: _to_plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_plain(item) for item in value]
    return value


def _build(cls: Type[T], data: Any, path: str) -> T:
    """Build a (possibly nested) frozen dataclass from JSON data, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object, got {type(data).__name__}", path)
    known = {f.name: f for f in fields(cls)}  # type: ignore[arg-type]
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {path or 'config'}", f"{path}.{unknown[0]}".lstrip("."))
    kwargs: Dict[str, Any] = {}
    for name, value in data.items():
        kwargs[name] = _convert(name, value, f"{path}.{name}".lstrip("."))
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}", path) from exc


_NESTED: Dict[str, type] = {}


def _convert(name: str, value: Any, path: str) -> Any:
    if name in _NESTED and value is not None:
        target = _NESTED[name]
        if target is UrllcProfile:
            if not isinstance(value, list):
                raise ConfigError(f"{path} must be a list", path)
            return tuple(_build(UrllcProfile, item, f"{path}[{i}]") for i, item in enumerate(value))
        return _build(target, value, path)
    if name in ("gnb_positions", "ai_positions") and value is not None:
        return tuple(tuple(float(c) for c in point) for point in value)
    if name in ("hall_size_m", "initial_position"):
        return tuple(float(c) for c in value)
    if name == "hidden_sizes":
        return tuple(int(width) for width in value)
    return value


_NESTED.update(
    {
        "urllc_devices": UrllcProfile,
        "reward_weights": RewardWeights,
        "survival_time_s": DirectionPair,
        "delay_bounds": DirectionPair,
        "radio": RadioParams,
        "learning": LearningTaskConfig,
        "agent": AgentHyperparams,
        "max_harq_urllc": DirectionPair,
        "max_harq_ai": DirectionPair,
    }
)


def scenario_from_dict(data: Dict[str, Any]) -> ScenarioConfig:
    """Validate plain data into a ScenarioConfig."""
    if "urllc_devices" not in data:
        raise ConfigError("urllc_devices is required", "urllc_devices")
    return _build(ScenarioConfig, data, "")


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    """
    Load and validate a JSON scenario file.

    Raises:
        ConfigError: Malformed JSON, unknown keys or a violated invariant
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    config = scenario_from_dict(data)
    logger.info("loaded scenario %s (N=%d, n=%d, %d URLLC devices)", path,
                config.big_n, config.n, config.urllc_count)
    return config


def save_scenario(config: ScenarioConfig, path: Union[str, Path]) -> None:
    """Write a scenario as indented JSON; load_scenario reads it back unchanged."""
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def derive_rng(config: Union[ScenarioConfig, int], stream_label: str) -> np.random.Generator:
    """
    Deterministic labeled child stream of the root seed.

    The label is hashed with crc32 (Python's hash() is salted per process), so the
    same (seed, label) gives the same stream in every run and every worker.
    """
    seed = config.rng_seed if isinstance(config, ScenarioConfig) else int(config)
    label_key = zlib.crc32(stream_label.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([seed, label_key]))


# --- presets ---------------------------------------------------------------

SEMI_RANDOM_POSITIONS: Tuple[Point3D, ...] = (
    (5.0, 5.0, 1.5), (15.0, 6.0, 1.5), (26.0, 4.0, 1.5), (35.0, 8.0, 1.5),
    (6.0, 18.0, 1.5), (20.0, 20.0, 1.5), (33.0, 22.0, 1.5), (8.0, 34.0, 1.5),
    (22.0, 36.0, 1.5), (36.0, 35.0, 1.5),
)


def semi_random_urllc(count: int = 10) -> Tuple[UrllcProfile, ...]:
    """Fixed anchors, heading drawn per seed."""
    anchors = [SEMI_RANDOM_POSITIONS[i % len(SEMI_RANDOM_POSITIONS)] for i in range(count)]
    return tuple(UrllcProfile(initial_position=pos) for pos in anchors)


def random_urllc(count: int = 20) -> Tuple[UrllcProfile, ...]:
    """Anchors and headings both drawn per seed."""
    return tuple(
        UrllcProfile(initial_position=(20.0, 20.0, 1.5), placement="random") for _ in range(count)
    )


def factory_semi_random_scenario(seed: int = 0) -> ScenarioConfig:
    """Full factory scale: N=50, n=15, 10 semi-random URLLC devices, 50-iteration episodes."""
    return ScenarioConfig(urllc_devices=semi_random_urllc(10), rng_seed=seed)


def factory_random_scenario(seed: int = 0) -> ScenarioConfig:
    """Full factory scale with 20 URLLC devices placed at random per seed."""
    return ScenarioConfig(urllc_devices=random_urllc(20), rng_seed=seed)


def desk_scenario(seed: int = 0) -> ScenarioConfig:
    """Desk-scale defaults: 4 gNBs, 10 URLLC devices, N=12, n=4, 20-iteration episodes."""
    return ScenarioConfig(
        urllc_devices=semi_random_urllc(10),
        ai_device_count=12,
        required_updates=4,
        episode_length=20,
        rng_seed=seed,
        agent=AgentHyperparams(min_buffer_fill=200, train_every=20, gradient_steps=20),
    )


def toy_scenario(seed: int = 0) -> ScenarioConfig:
    """Scenario backing the analytic toy environment: N=6, n=2, two URLLC devices."""
    return ScenarioConfig(
        urllc_devices=semi_random_urllc(2),
        ai_device_count=6,
        required_updates=2,
        episode_length=10,
        rng_seed=seed,
        agent=AgentHyperparams(
            hidden_sizes=(64, 64),
            minibatch_size=64,
            min_buffer_fill=256,
            train_every=1,
            gradient_steps=1,
            learning_rate=1e-3,
            soft_update=0.01,
        ),
    )


PRESETS = {
    "desk": desk_scenario,
    "factory_semi_random": factory_semi_random_scenario,
    "factory_random": factory_random_scenario,
    "toy": toy_scenario,
}

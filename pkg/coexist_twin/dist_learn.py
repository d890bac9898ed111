"""
Distributed learning module for Coexist Twin.

Contains the synthetic learning tasks, the per-device local computation, the
central node's global update and the n-sync protocol that runs one iteration
over the simulated radio network.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple
import heapq
import logging
import math

import numpy as np

from .errors import ProtocolError
from .metrics import IterationOutcome, training_delay
from .rlc import PacketOutcome
from .scenario import Direction, Flow, LearningTaskConfig

logger = logging.getLogger(__name__)


@dataclass
class LearningTask:
    """
    Synthetic objective f(w) = (1/N) sum_i f_i(w) split over N devices.

    quadratic and fl: f_i(w) = 1/2 (w - b_i)^T H (w - b_i) with diagonal H spanning
    [mu, L]. nonconvex: f_i(w) = 1/2 ||w - b_i||^2 + a sum_j cos(w_j), smooth with
    L = 1 + a and nonconvex whenever a > 1.

    Attributes:
        kind: "quadratic", "nonconvex" or "fl"
        targets: Per-device data b_i, shape (N, d)
        curvature: Diagonal of H, shape (d,)
        sigma2: Gradient-noise energy E||e||^2
        learning_rate: Fixed step size (or local step size for a constant FL schedule)
        lr_schedule: "constant" or "diminishing"
        local_epochs: E, local steps per FL round
        epsilon: Accuracy defining convergence
        well_depth: Amplitude a of the cosine term
        compute_median_s: Median device compute delay
        compute_sigma: Log-standard deviation of the compute delay
        server_processing_s: Server processing delay d^pr
        kappa: Offset of the diminishing schedule
    """
    kind: str
    targets: np.ndarray
    curvature: np.ndarray
    sigma2: float = 1.0
    learning_rate: float = 0.1
    lr_schedule: str = "constant"
    local_epochs: int = 1
    epsilon: float = 0.05
    well_depth: float = 0.0
    compute_median_s: float = 0.05
    compute_sigma: float = 0.5
    server_processing_s: float = 0.01
    kappa: float = 0.0
    _optimum: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        self.curvature = np.asarray(self.curvature, dtype=float)
        if self.kind not in ("quadratic", "nonconvex", "fl"):
            raise ValueError(f"kind must be one of: quadratic, nonconvex, fl, got {self.kind}")
        if self.curvature.shape != (self.dimension,):
            raise ValueError(f"curvature must have shape ({self.dimension},), got {self.curvature.shape}")
        if np.any(self.curvature <= 0):
            raise ValueError("curvature entries must be positive")
        if self.sigma2 < 0:
            raise ValueError(f"sigma2 cannot be negative, got {self.sigma2}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.kind == "nonconvex":
            self.curvature = np.ones(self.dimension)

    @classmethod
    def from_config(cls, config: LearningTaskConfig, device_count: int, rng: np.random.Generator) -> "LearningTask":
        """Draw per-device data b_i ~ N(0, spread^2 I)."""
        d = config.dimension
        targets = rng.normal(0.0, config.data_spread, size=(device_count, d))
        curvature = np.linspace(config.curvature_min, config.curvature_max, d)
        return cls(
            kind=config.kind,
            targets=targets,
            curvature=curvature,
            sigma2=config.sigma2,
            learning_rate=config.learning_rate,
            lr_schedule=config.lr_schedule,
            local_epochs=config.local_epochs,
            epsilon=config.epsilon,
            well_depth=config.well_depth if config.kind == "nonconvex" else 0.0,
            compute_median_s=config.compute_median_s,
            compute_sigma=config.compute_sigma,
            server_processing_s=config.server_processing_s,
        )

    # --- geometry ------------------------------------------------------------

    @property
    def dimension(self) -> int:
        return int(self.targets.shape[1])

    @property
    def device_count(self) -> int:
        return int(self.targets.shape[0])

    @property
    def smoothness(self) -> float:
        """L."""
        if self.kind == "nonconvex":
            return 1.0 + self.well_depth
        return float(self.curvature.max())

    @property
    def strong_convexity(self) -> Optional[float]:
        """mu, or None for the nonconvex task."""
        if self.kind == "nonconvex":
            return None
        return float(self.curvature.min())

    @property
    def mean_target(self) -> np.ndarray:
        return self.targets.mean(axis=0)

    def local_objective(self, device: int, w: np.ndarray) -> float:
        diff = w - self.targets[device]
        value = 0.5 * float(np.dot(self.curvature * diff, diff))
        if self.kind == "nonconvex":
            value += self.well_depth * float(np.sum(np.cos(w)))
        return value

    def objective(self, w: np.ndarray) -> float:
        """f(w), the device average."""
        diff = w[None, :] - self.targets
        value = 0.5 * float(np.mean(np.sum(self.curvature * diff * diff, axis=1)))
        if self.kind == "nonconvex":
            value += self.well_depth * float(np.sum(np.cos(w)))
        return value

    def gradient(self, device: int, w: np.ndarray) -> np.ndarray:
        """Exact local gradient of f_i."""
        grad = self.curvature * (w - self.targets[device])
        if self.kind == "nonconvex":
            grad = grad - self.well_depth * np.sin(w)
        return grad

    def full_gradient(self, w: np.ndarray) -> np.ndarray:
        """Gradient of f; works on a single vector or a batch of row vectors."""
        grad = self.curvature * (w - self.mean_target)
        if self.kind == "nonconvex":
            grad = grad - self.well_depth * np.sin(w)
        return grad

    def subset_gradient(self, w: np.ndarray, members: np.ndarray) -> np.ndarray:
        """Mean exact gradient over device subsets; w is (S, d) and members is (S, n)."""
        grad = self.curvature * (w - self.targets[members].mean(axis=1))
        if self.kind == "nonconvex":
            grad = grad - self.well_depth * np.sin(w)
        return grad

    @property
    def optimum(self) -> np.ndarray:
        """w*, the global minimizer of f."""
        if self._optimum is None:
            if self.kind == "nonconvex":
                self._optimum = np.array([_cosine_well_min(m, self.well_depth) for m in self.mean_target])
            else:
                self._optimum = self.mean_target.copy()
        return self._optimum

    @property
    def optimal_value(self) -> float:
        """f* (f_inf for the nonconvex task)."""
        return self.objective(self.optimum)

    def heterogeneity(self) -> float:
        """Mean ||grad f_i - grad f||^2, the same at every w."""
        spread = self.curvature * (self.targets - self.mean_target)
        return float(np.mean(np.sum(spread * spread, axis=1)))

    def effective_sigma2(self) -> float:
        """Noise energy of one device's gradient around the full gradient."""
        return self.sigma2 + self.heterogeneity()

    def gradient_bound(self, w1: np.ndarray) -> float:
        """G^2 estimate over the ball the iterates stay in when started at w1."""
        radius = 1.5 * float(np.linalg.norm(w1 - self.optimum)) + math.sqrt(self.sigma2)
        spread = float(np.max(np.linalg.norm(self.targets - self.optimum, axis=1)))
        return (self.smoothness * (radius + spread)) ** 2 + self.sigma2

    # --- schedule and noise --------------------------------------------------

    def learning_rate_at(self, k: int, local_step: int = 0) -> float:
        """Step size of iteration k (1-based); the diminishing schedule is 2 / (mu (xi + k + kappa))."""
        if self.lr_schedule == "constant":
            return self.learning_rate
        mu = self.strong_convexity or 1.0
        xi = max(8.0 * self.smoothness / mu, float(self.local_epochs))
        return 2.0 / (mu * (xi + k + self.kappa + local_step))

    def noise(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        """Isotropic Gaussian with E||e||^2 = sigma2."""
        scale = math.sqrt(self.sigma2 / self.dimension)
        shape = (self.dimension,) if size is None else (size, self.dimension)
        if scale == 0.0:
            return np.zeros(shape)
        return rng.normal(0.0, scale, size=shape)

    def converged(self, w: np.ndarray) -> bool:
        """f-gap <= epsilon, or squared gradient norm <= epsilon for the nonconvex task."""
        if self.kind == "nonconvex":
            grad = self.full_gradient(w)
            return float(np.dot(grad, grad)) <= self.epsilon
        return self.objective(w) - self.optimal_value <= self.epsilon

    def get_summary(self) -> Dict[str, float]:
        return {
            "kind": self.kind,
            "dimension": self.dimension,
            "devices": self.device_count,
            "L": self.smoothness,
            "mu": self.strong_convexity if self.strong_convexity is not None else float("nan"),
            "sigma2": self.sigma2,
            "learning_rate": self.learning_rate,
        }


def _cosine_well_min(m: float, a: float) -> float:
    """argmin_x 1/2 (x - m)^2 + a cos(x) by grid search plus Newton polish."""
    grid = np.linspace(m - a - math.pi, m + a + math.pi, 20001)
    x = float(grid[np.argmin(0.5 * (grid - m) ** 2 + a * np.cos(grid))])
    for _ in range(20):
        second = 1.0 - a * math.cos(x)
        if second <= 0:
            break
        x -= (x - m - a * math.sin(x)) / second
    return x


@dataclass
class ModelState:
    """
    Global model held by the central node.

    Attributes:
        w: Parameters w_k
        k: Iteration counter (1-based; w_1 is the initial model)
        converged: Convergence flag driving the terminal indicator
    """
    w: np.ndarray
    k: int = 1
    converged: bool = False

    def copy(self) -> "ModelState":
        return replace(self, w=self.w.copy())


def local_update(w: np.ndarray, task: LearningTask, device: int, rng: np.random.Generator,
                 k: int = 1) -> np.ndarray:
    """
    Local computation C_i of one device.

    DGD tasks return the noisy gradient; the FL task returns the model after E
    local noisy gradient steps.
    """
    if task.kind != "fl":
        return task.gradient(device, w) + task.noise(rng)
    local = w.copy()
    for step in range(task.local_epochs):
        eta = task.learning_rate_at(k, step)
        local = local - eta * (task.gradient(device, local) + task.noise(rng))
    return local


def global_update(messages: Sequence[np.ndarray], model: ModelState, task: LearningTask, n: int) -> ModelState:
    """
    Central-node update A from exactly n messages.

    Raises:
        ProtocolError: The number of messages is not n
    """
    if len(messages) != n:
        raise ProtocolError(f"global update needs exactly n={n} messages, got {len(messages)}")
    stacked = np.stack(messages)
    if task.kind == "fl":
        w_next = stacked.mean(axis=0)
    else:
        w_next = model.w - (task.learning_rate_at(model.k) / n) * stacked.sum(axis=0)
    return ModelState(w=w_next, k=model.k + 1, converged=task.converged(w_next))


def initial_model(task: LearningTask, rng: np.random.Generator, distance: float = 3.0) -> ModelState:
    """w_1 at a fixed distance from the optimum along a random direction."""
    direction = rng.normal(size=task.dimension)
    direction /= np.linalg.norm(direction)
    w1 = task.optimum + distance * direction
    return ModelState(w=w1, k=1, converged=task.converged(w1))


def run_protocol(engine, selection: Sequence[int], model: ModelState, task: LearningTask,
                 rng: np.random.Generator) -> Tuple[IterationOutcome, ModelState]:
    """
    Run one n-sync iteration over the radio engine.

    The global model goes down to every selected device; each device computes for a
    lognormal time after its DL delivery and sends its update back. The first n
    updates that arrive early enough for the server to finish by T_max form the
    global update; otherwise the iteration times out and the model is unchanged.
    Ties in arrival time go to the lower device id. The engine is advanced to the
    end of the iteration and leftover AI packets of the iteration are dropped.

    Args:
        engine: RanEngine to drive
        selection: 0/1 selection vector pi^u_k of length N
        model: Current global model
        task: Learning task
        rng: Stream for gradient noise

    Returns:
        (IterationOutcome, updated model)

    Raises:
        ProtocolError: Fewer than n devices selected
    """
    config = engine.config
    n, t_max = config.n, config.t_max_seconds
    if len(selection) != config.big_n:
        raise ProtocolError(f"selection must have length N={config.big_n}, got {len(selection)}")
    selected = tuple(i for i, s in enumerate(selection) if s)
    if len(selected) < n:
        raise ProtocolError(f"selection of {len(selected)} devices is smaller than n={n}")

    d_pr = task.server_processing_s
    t_k = engine.now_s
    cutoff = t_k + t_max - d_pr
    tag = model.k
    size = config.ai_message_bytes
    for device in selected:
        engine.enqueue_ai(device, Direction.DL, size, tag=tag, created_at_s=t_k)

    inf = float("inf")
    downlink: Dict[int, float] = {i: inf for i in selected}
    compute: Dict[int, float] = {i: inf for i in selected}
    uplink: Dict[int, float] = {i: inf for i in selected}
    arrivals: List[Tuple[float, int]] = []
    computing: List[Tuple[float, int]] = []
    log_median = math.log(max(task.compute_median_s, 1e-9))

    def in_time() -> int:
        return sum(1 for t, _ in arrivals if t <= cutoff)

    while in_time() < n and engine.now_s <= cutoff:
        while computing and computing[0][0] <= engine.now_s:
            done, device = heapq.heappop(computing)
            engine.enqueue_ai(device, Direction.UL, size, tag=tag, created_at_s=done)
        for event in engine.step_tti():
            if event.flow is not Flow.AI or event.tag != tag or event.outcome is not PacketOutcome.DELIVERED:
                continue
            if event.direction is Direction.DL:
                downlink[event.device] = event.time_s - t_k
                delay = float(engine.compute_rng.lognormal(log_median, task.compute_sigma))
                compute[event.device] = delay
                heapq.heappush(computing, (event.time_s + delay, event.device))
            else:
                uplink[event.device] = event.time_s - t_k - downlink[event.device] - compute[event.device]
                arrivals.append((event.time_s, event.device))

    totals = {i: inf for i in selected}
    for t, device in arrivals:
        totals[device] = t - t_k
    d_ai = training_delay([totals[i] for i in selected], d_pr, n, t_max)
    ordered = sorted(arrivals)
    timeout = in_time() < n
    first_n = () if timeout else tuple(device for _, device in ordered[:n])

    engine.run_until(t_k + d_ai)
    engine.cancel_ai(tag)

    if timeout:
        updated = replace(model.copy(), k=model.k + 1)
        logger.debug("iteration %d timed out with %d/%d updates", model.k, in_time(), n)
    else:
        messages = [local_update(model.w, task, device, rng, model.k) for device in first_n]
        updated = global_update(messages, model, task, n)

    outcome = IterationOutcome(
        iteration=model.k,
        start_s=t_k,
        selected=selected,
        downlink_s=downlink,
        compute_s=compute,
        uplink_s=uplink,
        server_processing_s=d_pr,
        training_delay_s=d_ai,
        first_n=first_n,
        timeout=timeout,
        totals=totals,
    )
    return outcome, updated

"""
Oracle module for Coexist Twin.

Fast reference checks that compare the library against independent brute-force
computations. `selftest` runs them all in-process; the CLI and the test suite both
use it.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple
import logging
import math
import time

import numpy as np

from .bounds import ConvergenceParams, FEDERATED, NONCONVEX, STRONGLY_CONVEX, sweep
from .environment import compute_reward, map_action
from .metrics import (
    AvailabilityRecord, NetworkEvent, availability_estimate, training_delay, training_delay_bruteforce,
    update_network_state,
)
from .nn import MLP
from .sac import SacAgent
from .scenario import AgentHyperparams, Direction, RewardWeights, ScenarioConfig, UrllcProfile

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OracleResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


# --- training delay ---------------------------------------------------------

def check_training_delay(instances: int = 1000, seed: int = 0) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(instances):
        m = int(rng.integers(1, 9))
        n = int(rng.integers(1, m + 1))
        totals = list(rng.exponential(1.0, size=m))
        if rng.random() < 0.2:
            totals[int(rng.integers(0, m))] = math.inf
        d_pr, t_max = float(rng.uniform(0, 0.2)), float(rng.uniform(1.0, 4.0))
        if training_delay(totals, d_pr, n, t_max) != training_delay_bruteforce(totals, d_pr, n, t_max):
            mismatches += 1
    return mismatches == 0, f"{instances} instances, {mismatches} mismatches"


# --- availability -----------------------------------------------------------

def grid_availability(events: Sequence[NetworkEvent], survival_s: float, t1: float, dt: float = 1e-6) -> float:
    """Time average of Y over [0, t1] evaluated on a dt grid from the raw event list."""
    if not events:
        return 1.0
    times = np.array([e.time_s for e in events])
    states = np.array([1 if e.on_time else 0 for e in events])
    run_start = np.empty(len(events))
    current = math.nan
    for j, event in enumerate(events):
        if event.on_time:
            current = math.nan
        elif math.isnan(current):
            current = event.time_s
        run_start[j] = current
    grid = (np.arange(int(round(t1 / dt))) + 0.5) * dt
    idx = np.searchsorted(times, grid, side="right") - 1
    x = np.where(idx >= 0, states[np.maximum(idx, 0)], 1)
    down_for = np.where(x == 0, grid - run_start[np.maximum(idx, 0)], 0.0)
    y = ~((x == 0) & (down_for >= survival_s))
    return float(np.mean(y))


def _incremental_availability(events: Sequence[NetworkEvent], survival_s: float, t1: float) -> float:
    record = AvailabilityRecord(0, Direction.UL, survival_s)
    for event in events:
        update_network_state(record, event)
    return availability_estimate(record, 0.0, t1)


def check_availability(timelines: int = 500, seed: int = 1) -> Tuple[bool, str]:
    survival, t1, dt = 0.006, 0.1, 1e-6
    short = [NetworkEvent(0.010, False), NetworkEvent(0.014, True)]
    long = [NetworkEvent(0.010, False), NetworkEvent(0.020, True)]
    hand = (_incremental_availability(short, survival, t1) == 1.0
            and abs(_incremental_availability(long, survival, t1) - 0.96) < 1e-12)
    rng = np.random.default_rng(seed)
    worst = 0.0
    failures = 0
    for _ in range(timelines):
        count = int(rng.integers(0, 30))
        times = np.sort(rng.uniform(0.0, t1, size=count))
        events = [NetworkEvent(float(t), bool(rng.random() < 0.5)) for t in times]
        exact = _incremental_availability(events, survival, t1)
        grid = grid_availability(events, survival, t1, dt)
        tolerance = 2.0 * dt * (count + 1) / t1
        error = abs(exact - grid)
        worst = max(worst, error)
        failures += error > tolerance
    return hand and failures == 0, f"hand cases {'ok' if hand else 'FAILED'}, {timelines} timelines, worst error {worst:.2e}"


# --- action mapping and reward ---------------------------------------------

def check_map_action(samples: int = 100_000, big_n: int = 8, seed: int = 2) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    violations = 0
    branches = {"nonnegative": 0, "top-n": 0}
    for _ in range(samples):
        n = int(rng.integers(1, big_n + 1))
        action = rng.uniform(-1.0, 1.0, size=big_n)
        selection = map_action(action, n)
        violations += int(selection.sum() < n)
        branches["nonnegative" if np.count_nonzero(action >= 0) >= n else "top-n"] += 1
    ok = violations == 0 and all(branches.values())
    return ok, f"{samples} actions, {violations} violations, branches {branches}"


def check_reward_examples() -> Tuple[bool, str]:
    config = ScenarioConfig(urllc_devices=(UrllcProfile(initial_position=(1.0, 1.0, 1.5)),),
                            reward_weights=RewardWeights(upsilon=0.5, zeta=100.0))
    values = (
        compute_reward([0.995, 1.0], config.t_max_seconds, config),
        compute_reward([0.995, 1.0], 0.0, config),
        compute_reward([config.availability_req - 0.01, 1.0], 5.0, config),
    )
    expected = (0.5, 1.0, 0.5 * math.exp(-1.0) + 0.25)
    ok = all(abs(v - e) < 1e-4 for v, e in zip(values, expected)) and abs(values[2] - 0.4339) < 1e-4
    return ok, "rewards " + ", ".join(f"{v:.4f}" for v in values)


# --- iteration bounds -------------------------------------------------------

def check_kmin_monotonicity() -> Tuple[bool, str]:
    ns = list(range(1, 51))
    bases = {
        STRONGLY_CONVEX: ConvergenceParams(regime=STRONGLY_CONVEX, epsilon=0.05, w_a=4.5, z_a=0.05, b=1.0 / 0.9),
        NONCONVEX: ConvergenceParams(regime=NONCONVEX, epsilon=0.05, w_b=60.0, z_b=0.1),
        FEDERATED: ConvergenceParams(regime=FEDERATED, epsilon=0.05, g2=1.0, sigma2=1.0, big_n=50, local_epochs=2),
    }
    monotone = True
    for regime, base in bases.items():
        values = [row["kmin"] for row in sweep(regime, base, "n", ns)]
        finite = [v for v in values if math.isfinite(v)]
        monotone &= all(b <= a + 1e-12 for a, b in zip(finite, finite[1:]))
    ratio_base = ConvergenceParams(regime=FEDERATED, epsilon=1.0, g2=1.0, sigma2=0.0, big_n=10**9, local_epochs=1)
    one = sweep(FEDERATED, ratio_base, "n", [1])[0]["kmin"]
    large = sweep(FEDERATED, ratio_base, "n", [10**9])[0]["kmin"]
    ratio = one / large
    ok = monotone and abs(ratio - 4.0 / 3.0) < 1e-6
    return ok, f"monotone={monotone}, ratio={ratio:.9f}"


# --- SAC gradients ----------------------------------------------------------

def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / (||a|| + ||n||), zero when both vanish."""
    scale = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(analytic - numeric)) / scale


def finite_difference(net: MLP, loss: Callable[[], float], coordinates: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of loss() with respect to the chosen flat parameters of net."""
    flat = net.get_flat()
    out = np.empty(len(coordinates))
    for j, c in enumerate(coordinates):
        bumped = flat.copy()
        bumped[c] += h
        net.set_flat(bumped)
        up = loss()
        bumped[c] -= 2.0 * h
        net.set_flat(bumped)
        down = loss()
        out[j] = (up - down) / (2.0 * h)
    net.set_flat(flat)
    return out


def small_agent(seed: int, state_dim: int = 3, action_dim: int = 2, hidden: Tuple[int, ...] = (8, 8)) -> SacAgent:
    """A tiny agent with widened output layers and random biases, sized for finite-difference checks."""
    rng = np.random.default_rng(seed)
    hyper = AgentHyperparams(hidden_sizes=hidden, minibatch_size=4, min_buffer_fill=1, initial_temperature=0.3)
    agent = SacAgent(state_dim, action_dim, hyper, rng, np.random.default_rng(seed + 1))
    agent.actor = MLP([state_dim, *hidden, 2 * action_dim], rng, output_init=0.3)
    agent.critics = [MLP([state_dim + action_dim, *hidden, 1], rng, output_init=0.5) for _ in range(2)]
    # nonzero biases keep hidden pre-activations off the ReLU kink at 0
    for net in (agent.actor, *agent.critics):
        net.biases = [rng.normal(0.0, 0.1, size=b.shape) for b in net.biases]
    return agent


def gradient_errors(seed: int, batch: int = 5, coordinates: int = 40) -> Dict[str, float]:
    """Relative errors of both critic gradients and the actor gradient against central differences."""
    agent = small_agent(seed)
    rng = np.random.default_rng(seed + 100)
    states = rng.random((batch, agent.state_dim))
    actions = rng.uniform(-1.0, 1.0, (batch, agent.action_dim))
    targets = rng.normal(size=batch)
    weights = rng.uniform(0.2, 1.0, size=batch)
    chi = rng.standard_normal((batch, agent.action_dim))
    errors: Dict[str, float] = {}
    for i, critic in enumerate(agent.critics):
        _, grads, _ = agent.critic_loss_and_grads(i, states, actions, targets, weights)
        analytic = np.concatenate([g.ravel() for g in grads])
        coords = rng.choice(analytic.size, size=min(coordinates, analytic.size), replace=False)
        numeric = finite_difference(
            critic, lambda: agent.critic_loss_and_grads(i, states, actions, targets, weights)[0], coords)
        errors[f"critic{i}"] = relative_error(analytic[coords], numeric)
    _, grads, _ = agent.actor_loss_and_grads(states, chi)
    analytic = np.concatenate([g.ravel() for g in grads])
    coords = rng.choice(analytic.size, size=min(coordinates, analytic.size), replace=False)
    numeric = finite_difference(agent.actor, lambda: agent.actor_loss_and_grads(states, chi)[0], coords)
    errors["actor"] = relative_error(analytic[coords], numeric)
    return errors


def check_sac_gradients(networks: int = 10, tolerance: float = 1e-4) -> Tuple[bool, str]:
    worst = 0.0
    for seed in range(networks):
        worst = max(worst, max(gradient_errors(seed).values()))
    return worst < tolerance, f"{networks} networks, worst relative error {worst:.2e}"


ORACLES: Dict[str, Callable[[], Tuple[bool, str]]] = {
    "training-delay": check_training_delay,
    "availability": check_availability,
    "map-action": check_map_action,
    "reward": check_reward_examples,
    "kmin": check_kmin_monotonicity,
    "sac-gradients": check_sac_gradients,
}


def selftest(names: Sequence[str] = ()) -> List[OracleResult]:
    """Run the named oracles (all by default)."""
    results = []
    for name in names or ORACLES:
        start = time.perf_counter()
        try:
            passed, detail = ORACLES[name]()
        except Exception as exc:  # an oracle that crashes is a failed oracle
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        result = OracleResult(name, passed, detail, time.perf_counter() - start)
        logger.info("%s", result)
        results.append(result)
    return results

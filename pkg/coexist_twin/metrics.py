"""
Metrics module for Coexist Twin.

URLLC network/application state timelines and availability, distributed-AI
iteration training delay, and the per-window statistics that feed the agent.
"""

from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Tuple
import logging
import math

import numpy as np
import pandas as pd

from .errors import DomainError, OrderingError
from .scenario import Direction, Flow

logger = logging.getLogger(__name__)

ABSENT = math.nan
"""Sentinel for a statistic with no empirical measurement in the window."""


@dataclass(frozen=True)
class NetworkEvent:
    """Outcome instant of one URLLC packet: delivery (on_time) or deadline (late/lost)."""
    time_s: float
    on_time: bool


@dataclass
class AvailabilityRecord:
    """
    Network state X and application state Y of one URLLC device in one direction.

    X is piecewise constant: it drops to 0 at a failed packet's deadline and returns
    to 1 at the next on-time delivery. Y is 0 exactly when X has been 0 for the whole
    trailing survival time. X is 1 before the first packet.

    Attributes:
        device: URLLC device index
        direction: UL or DL
        survival_time_s: T_sv
        start_s: Beginning of the timeline
        x_state: Current X value
        last_event_s: Time of the latest event applied
        bursts: X=0 intervals as [start, end]; end is None while the burst is open
        x_downtime_s: Total X=0 time of closed bursts
        y_downtime_s: Total Y=0 time of closed bursts
    """
    device: int
    direction: Direction
    survival_time_s: float
    start_s: float = 0.0
    x_state: int = 1
    last_event_s: float = 0.0
    bursts: List[List[Optional[float]]] = field(default_factory=list)
    x_downtime_s: float = 0.0
    y_downtime_s: float = 0.0

    def __post_init__(self) -> None:
        if self.survival_time_s < 0:
            raise ValueError(f"survival_time_s cannot be negative, got {self.survival_time_s}")
        self.last_event_s = max(self.last_event_s, self.start_s)

    def y_down_intervals(self, t0: float, t1: float) -> List[Tuple[float, float]]:
        """Y=0 intervals clipped to [t0, t1]; an open burst is extended to t1."""
        out = []
        for start, end in self.bursts:
            y_start = start + self.survival_time_s
            y_end = t1 if end is None else end
            lo, hi = max(y_start, t0), min(y_end, t1)
            if hi > lo:
                out.append((lo, hi))
        return out

    def y_downtime(self, t0: float, t1: float) -> float:
        return sum(hi - lo for lo, hi in self.y_down_intervals(t0, t1))

    def x_downtime(self, t0: float, t1: float) -> float:
        total = 0.0
        for start, end in self.bursts:
            lo, hi = max(start, t0), min(t1 if end is None else end, t1)
            total += max(0.0, hi - lo)
        return total

    def y_at(self, t: float) -> int:
        """Application state at time t."""
        for start, end in self.bursts:
            if start + self.survival_time_s <= t and (end is None or t < end):
                return 0
        return 1


def update_network_state(record: AvailabilityRecord, event: NetworkEvent) -> AvailabilityRecord:
    """
    Apply one packet outcome to the X/Y timelines.

    Raises:
        OrderingError: The event is older than the last one applied
    """
    if event.time_s < record.last_event_s:
        raise OrderingError(
            f"event at {event.time_s:.6f}s precedes last event at {record.last_event_s:.6f}s "
            f"(device {record.device} {record.direction.value})"
        )
    record.last_event_s = event.time_s
    if not event.on_time and record.x_state == 1:
        record.x_state = 0
        record.bursts.append([event.time_s, None])
    elif event.on_time and record.x_state == 0:
        record.x_state = 1
        burst = record.bursts[-1]
        burst[1] = event.time_s
        length = event.time_s - burst[0]
        record.x_downtime_s += length
        record.y_downtime_s += max(0.0, length - record.survival_time_s)
    return record


def availability_estimate(record: AvailabilityRecord, t0: float, t1: float) -> float:
    """Time average of Y over [t0, t1]."""
    if not t1 > t0:
        raise DomainError(f"empty availability window [{t0}, {t1}]")
    return min(1.0, max(0.0, 1.0 - record.y_downtime(t0, t1) / (t1 - t0)))


@dataclass(frozen=True)
class RequirementVerdict:
    """Per-device requirement check and the fleet conjunction."""
    per_device: Dict[Hashable, bool]
    violation_probability: Dict[Hashable, float]
    fleet: bool


def requirement_satisfied(
    samples: Mapping[Hashable, Sequence[float]], alpha_req: float, gamma: float
) -> RequirementVerdict:
    """Empirical Pr{alpha <= alpha_req} <= gamma, per device."""
    per_device: Dict[Hashable, bool] = {}
    probability: Dict[Hashable, float] = {}
    for key, values in samples.items():
        if len(values) == 0:
            raise ValueError(f"device {key} has no availability samples")
        arr = np.asarray(values, dtype=float)
        probability[key] = float(np.count_nonzero(arr <= alpha_req)) / arr.size
        per_device[key] = probability[key] <= gamma
    return RequirementVerdict(per_device, probability, all(per_device.values()))


def sensitivity_curve(samples: Mapping[Hashable, Sequence[float]], alpha_req: float) -> Dict[Hashable, float]:
    """Smallest sensitivity gamma each device satisfies at alpha_req."""
    return {
        key: float(np.count_nonzero(np.asarray(values, dtype=float) <= alpha_req)) / len(values)
        for key, values in samples.items()
        if len(values) > 0
    }


def training_delay(per_device_totals: Sequence[float], d_pr: float, n: int, t_max: float) -> float:
    """
    Iteration training delay seen by the central node.

    The n-th smallest per-device total (DL + compute + UL) plus server processing,
    capped at the timeout.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if len(per_device_totals) < n:
        raise ValueError(f"need at least n={n} per-device totals, got {len(per_device_totals)}")
    nth = sorted(per_device_totals)[n - 1]
    return min(nth + d_pr, t_max)


def training_delay_bruteforce(per_device_totals: Sequence[float], d_pr: float, n: int, t_max: float) -> float:
    """Min over n-subsets of the subset max; reference for training_delay."""
    best = min(max(subset) for subset in combinations(per_device_totals, n))
    return min(best + d_pr, t_max)


@dataclass
class IterationOutcome:
    """
    One distributed-learning iteration as seen by the central node.

    Attributes:
        iteration: k
        start_s: Time the global model was released
        selected: Selected devices (N_{m,k})
        downlink_s: Per selected device DL delay (inf if never delivered)
        compute_s: Per selected device compute delay (inf if it never started)
        uplink_s: Per selected device UL delay (inf if never delivered)
        server_processing_s: d^pr_k
        training_delay_s: d^AI_k
        first_n: Devices whose updates formed the global update (N_{n,k})
        timeout: True when fewer than n updates arrived in time (d^AI_k = T_max)
        totals: Per selected device arrival time of its update relative to start_s
    """
    iteration: int
    start_s: float
    selected: Tuple[int, ...]
    downlink_s: Dict[int, float]
    compute_s: Dict[int, float]
    uplink_s: Dict[int, float]
    server_processing_s: float
    training_delay_s: float
    first_n: Tuple[int, ...]
    timeout: bool
    totals: Dict[int, float] = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.selected)

    def total(self, device: int) -> float:
        """d^D + d^pr + d^U of one selected device (inf if its update never arrived)."""
        if device in self.totals:
            return self.totals[device]
        return self.downlink_s[device] + self.compute_s[device] + self.uplink_s[device]


# --- window statistics ------------------------------------------------------

def nearest_rank(sorted_values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p*n)-th smallest sample (ABSENT if empty)."""
    n = len(sorted_values)
    if n == 0:
        return ABSENT
    rank = max(1, math.ceil(p * n - 1e-12))
    return float(sorted_values[min(rank, n) - 1])


@dataclass
class WindowLog:
    """Raw samples collected by the engine over one window."""
    start_s: float
    end_s: float = 0.0
    urllc_packets: Dict[Tuple[int, Direction], int] = field(default_factory=dict)
    urllc_errors: Dict[Tuple[int, Direction], int] = field(default_factory=dict)
    urllc_sinr: Dict[Tuple[int, Direction], List[float]] = field(default_factory=dict)
    urllc_delay: Dict[Tuple[int, Direction], List[float]] = field(default_factory=dict)
    urllc_buffer: Dict[Tuple[int, Direction], int] = field(default_factory=dict)
    urllc_cell: Dict[int, int] = field(default_factory=dict)
    downtime_intervals: Dict[Tuple[int, Direction], List[Tuple[float, float]]] = field(default_factory=dict)
    ai_sinr: Dict[Tuple[int, Direction], List[float]] = field(default_factory=dict)
    ai_buffer: Dict[Tuple[int, Direction], int] = field(default_factory=dict)
    ai_selected: Dict[int, bool] = field(default_factory=dict)
    ai_downlink_s: Dict[int, float] = field(default_factory=dict)
    ai_uplink_s: Dict[int, float] = field(default_factory=dict)
    rb_allocated: Dict[Tuple[int, Flow, Direction], int] = field(default_factory=dict)
    slots: int = 0

    def add_sample(self, table: Dict, key: Hashable, value: float) -> None:
        table.setdefault(key, []).append(value)

    def count(self, table: Dict, key: Hashable, amount: int = 1) -> None:
        table[key] = table.get(key, 0) + amount


@dataclass(frozen=True)
class UrllcWindowStats:
    per: float
    mean_downtime_s: float
    buffer_bytes: float
    cell: int
    sinr_p1: float
    sinr_p5: float
    sinr_median: float
    delay_median: float
    delay_p95: float
    delay_p99: float


@dataclass(frozen=True)
class AiWindowStats:
    selected: bool
    downlink_s: float
    uplink_s: float
    buffer_bytes: float
    sinr_p5: float
    sinr_median: float
    sinr_p95: float


@dataclass(frozen=True)
class WindowStats:
    """Distribution summaries over the window preceding a decision."""
    start_s: float
    end_s: float
    urllc: Dict[Tuple[int, Direction], UrllcWindowStats]
    ai: Dict[Tuple[int, Direction], AiWindowStats]
    mean_rbs: Dict[Tuple[int, Flow, Direction], float]


def window_stats(
    log: WindowLog,
    urllc_count: int,
    ai_count: int,
    gnb_count: int,
) -> WindowStats:
    """
    Summarize a closed window.

    Percentiles are nearest-rank; anything without samples gets ABSENT.
    """
    urllc: Dict[Tuple[int, Direction], UrllcWindowStats] = {}
    for u in range(urllc_count):
        for direction in Direction:
            key = (u, direction)
            packets = log.urllc_packets.get(key, 0)
            sinr = sorted(log.urllc_sinr.get(key, []))
            delay = sorted(log.urllc_delay.get(key, []))
            downs = log.downtime_intervals.get(key, [])
            urllc[key] = UrllcWindowStats(
                per=log.urllc_errors.get(key, 0) / packets if packets else ABSENT,
                mean_downtime_s=float(np.mean([hi - lo for lo, hi in downs])) if downs else 0.0,
                buffer_bytes=float(log.urllc_buffer.get(key, 0)),
                cell=log.urllc_cell.get(u, 0),
                sinr_p1=nearest_rank(sinr, 0.01),
                sinr_p5=nearest_rank(sinr, 0.05),
                sinr_median=nearest_rank(sinr, 0.5),
                delay_median=nearest_rank(delay, 0.5),
                delay_p95=nearest_rank(delay, 0.95),
                delay_p99=nearest_rank(delay, 0.99),
            )
    ai: Dict[Tuple[int, Direction], AiWindowStats] = {}
    for i in range(ai_count):
        for direction in Direction:
            key = (i, direction)
            sinr = sorted(log.ai_sinr.get(key, []))
            ai[key] = AiWindowStats(
                selected=log.ai_selected.get(i, False),
                downlink_s=_finite_or_absent(log.ai_downlink_s.get(i)),
                uplink_s=_finite_or_absent(log.ai_uplink_s.get(i)),
                buffer_bytes=float(log.ai_buffer.get(key, 0)),
                sinr_p5=nearest_rank(sinr, 0.05),
                sinr_median=nearest_rank(sinr, 0.5),
                sinr_p95=nearest_rank(sinr, 0.95),
            )
    slots = max(log.slots, 1)
    mean_rbs = {
        (g, flow, direction): log.rb_allocated.get((g, flow, direction), 0) / slots
        for g in range(gnb_count)
        for flow in Flow
        for direction in Direction
    }
    return WindowStats(log.start_s, log.end_s, urllc, ai, mean_rbs)


def _finite_or_absent(value: Optional[float]) -> float:
    if value is None or not math.isfinite(value):
        return ABSENT
    return float(value)


# --- per-episode dump -------------------------------------------------------

AVAILABILITY_COLUMNS = ["run", "iteration", "device", "direction", "window_start_s", "window_end_s", "availability"]
ITERATION_COLUMNS = ["run", "iteration", "start_s", "m", "training_delay_s", "timeout", "selected", "first_n"]


def availability_frame(rows: Iterable[Tuple[int, int, int, Direction, float, float, float]]) -> pd.DataFrame:
    """One row per (device, direction) availability sample."""
    frame = pd.DataFrame(
        [(run, k, u, d.value, t0, t1, alpha) for run, k, u, d, t0, t1, alpha in rows],
        columns=AVAILABILITY_COLUMNS,
    )
    return frame


def iteration_frame(run: int, outcomes: Iterable[IterationOutcome]) -> pd.DataFrame:
    """One row per iteration with the achieved training delay."""
    return pd.DataFrame(
        [
            (run, o.iteration, o.start_s, o.m, o.training_delay_s, int(o.timeout),
             " ".join(map(str, o.selected)), " ".join(map(str, o.first_n)))
            for o in outcomes
        ],
        columns=ITERATION_COLUMNS,
    )


def dump_episode_metrics(directory: Path, availability: pd.DataFrame, iterations: pd.DataFrame) -> None:
    """Write availability.csv and iterations.csv into `directory`."""
    directory.mkdir(parents=True, exist_ok=True)
    availability.to_csv(directory / "availability.csv", index=False, float_format="%.9g")
    iterations.to_csv(directory / "iterations.csv", index=False, float_format="%.9g")
    logger.debug("wrote metrics for %d iterations to %s", len(iterations), directory)

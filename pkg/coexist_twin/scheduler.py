"""
Scheduler module for Coexist Twin.

Per-cell resource-block budgets and the per-flow scheduling policies: round robin
for URLLC uplink, longest head-of-line wait for URLLC downlink and proportional
fair for the distributed-AI flow. Strict priority between flows is enforced by the
engine, which always runs the URLLC pass of a pool before its AI pass.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence
import logging

from .link import McsEntry, rbs_for_bytes
from .scenario import Direction, Flow

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Candidate:
    """A device with data to send in one pool this TTI."""
    device: int
    buffered_bytes: int
    mcs: McsEntry
    head_wait_s: float = 0.0


@dataclass(frozen=True)
class Allocation:
    """RBs granted to one device and the transport-block size they carry."""
    device: int
    rbs: int
    block_bytes: int


@dataclass
class CellScheduleState:
    """
    Scheduling state of one resource pool of one cell in one direction.

    Attributes:
        cell: gNB index
        direction: UL or DL
        budget: RBs available per TTI
        used: RBs allocated in the current TTI
        allocated: RBs allocated in the current TTI per flow
        rr_cursor: Next device id in the round-robin order
        pf_average: Smoothed served bits per TTI per AI device
        pf_smoothing: EMA weight of the latest TTI
    """
    cell: int
    direction: Direction
    budget: int
    used: int = 0
    allocated: Dict[Flow, int] = field(default_factory=lambda: {Flow.URLLC: 0, Flow.AI: 0})
    rr_cursor: int = 0
    pf_average: Dict[int, float] = field(default_factory=dict)
    pf_smoothing: float = 0.05

    def __post_init__(self) -> None:
        if self.budget < 0:
            raise ValueError(f"budget cannot be negative, got {self.budget}")
        if not 0.0 < self.pf_smoothing <= 1.0:
            raise ValueError(f"pf_smoothing must be in (0, 1], got {self.pf_smoothing}")

    @property
    def remaining(self) -> int:
        return self.budget - self.used

    @property
    def occupancy(self) -> float:
        """Fraction of the budget in use this TTI."""
        return self.used / self.budget if self.budget else 0.0

    def begin_tti(self) -> None:
        self.used = 0
        for flow in self.allocated:
            self.allocated[flow] = 0

    def take(self, flow: Flow, rbs: int) -> None:
        if rbs > self.remaining:
            raise ValueError(f"cell {self.cell} {self.direction.value}: {rbs} RBs exceed remaining {self.remaining}")
        self.used += rbs
        self.allocated[flow] += rbs

    def update_pf(self, served_bits: Dict[int, int], devices: Iterable[int]) -> None:
        """Fold this TTI's served bits into the averages of every device of the cell."""
        beta = self.pf_smoothing
        for device in devices:
            previous = self.pf_average.get(device, 0.0)
            self.pf_average[device] = (1.0 - beta) * previous + beta * served_bits.get(device, 0)


def _fill(state: CellScheduleState, flow: Flow, ordered: Sequence[Candidate]) -> List[Allocation]:
    """One transport block per device, in order, until the budget is spent."""
    allocations: List[Allocation] = []
    for cand in ordered:
        if state.remaining <= 0:
            break
        if cand.buffered_bytes <= 0:
            continue
        rbs = min(rbs_for_bytes(cand.buffered_bytes, cand.mcs), state.remaining)
        block = min(cand.buffered_bytes, rbs * cand.mcs.bits_per_rb // 8)
        if block <= 0:
            continue
        state.take(flow, rbs)
        allocations.append(Allocation(cand.device, rbs, block))
    return allocations


def round_robin(state: CellScheduleState, candidates: Sequence[Candidate], flow: Flow = Flow.URLLC) -> List[Allocation]:
    """Serve devices in id order starting at the cursor; the cursor moves past the last one served."""
    ordered = sorted(candidates, key=lambda c: c.device)
    start = next((i for i, c in enumerate(ordered) if c.device >= state.rr_cursor), 0)
    ordered = ordered[start:] + ordered[:start]
    allocations = _fill(state, flow, ordered)
    if allocations:
        state.rr_cursor = allocations[-1].device + 1
    return allocations


def longest_wait_first(state: CellScheduleState, candidates: Sequence[Candidate], flow: Flow = Flow.URLLC) -> List[Allocation]:
    """Longest head-of-line wait first, ties to the lower device id."""
    ordered = sorted(candidates, key=lambda c: (-c.head_wait_s, c.device))
    return _fill(state, flow, ordered)


def pf_metric(state: CellScheduleState, cand: Candidate) -> float:
    """Achievable bits per RB over the smoothed served rate."""
    return cand.mcs.bits_per_rb / max(state.pf_average.get(cand.device, 0.0), 1.0)


def proportional_fair(state: CellScheduleState, candidates: Sequence[Candidate], flow: Flow = Flow.AI) -> List[Allocation]:
    """Highest proportional-fair metric first, ties to the lower device id."""
    ordered = sorted(candidates, key=lambda c: (-pf_metric(state, c), c.device))
    return _fill(state, flow, ordered)


URLLC_POLICY = {Direction.UL: round_robin, Direction.DL: longest_wait_first}

"""
RLC module for Coexist Twin.

Contains packets, per-owner RLC buffers (UM for URLLC, AM for distributed AI) and
the HARQ processes holding transport blocks awaiting retransmission.
"""

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Deque, Iterator, List, Optional, Tuple

from .link import McsEntry
from .scenario import Direction, Flow


class RlcMode(Enum):
    """RLC operating mode."""
    AM = "AM"
    UM = "UM"


class PacketOutcome(Enum):
    """Terminal state of a packet."""
    DELIVERED = "delivered"
    LATE = "late"
    EXPIRED = "expired"
    LOST = "lost"
    CANCELLED = "cancelled"


@dataclass
class Packet:
    """
    One RLC SDU.

    Attributes:
        id: Engine-wide packet id
        flow: URLLC or AI
        direction: UL or DL
        device: Index of the device within its flow
        size_bytes: SDU size
        created_at_s: Arrival time at the RLC buffer
        delay_bound_s: URLLC delay bound (None for AI)
        remaining_bytes: Bytes waiting in the buffer (not yet in a transport block)
        in_flight_bytes: Bytes carried by transport blocks awaiting their outcome
        delivered_bytes: Bytes acknowledged at the receiver
        rlc_retx: RLC-level retransmissions used (AM only)
        outcome: Terminal state, None while pending
        completed_at_s: Delivery instant at the receiver
        tag: Caller data (the learning iteration for AI packets)
    """
    id: int
    flow: Flow
    direction: Direction
    device: int
    size_bytes: int
    created_at_s: float
    delay_bound_s: Optional[float] = None
    remaining_bytes: int = -1
    in_flight_bytes: int = 0
    delivered_bytes: int = 0
    rlc_retx: int = 0
    outcome: Optional[PacketOutcome] = None
    completed_at_s: Optional[float] = None
    tag: Any = None

    def __post_init__(self) -> None:
        if self.size_bytes <= 0:
            raise ValueError(f"size_bytes must be positive, got {self.size_bytes}")
        if self.remaining_bytes < 0:
            self.remaining_bytes = self.size_bytes
        if not 0 <= self.remaining_bytes <= self.size_bytes:
            raise ValueError(f"remaining_bytes must be in [0, {self.size_bytes}], got {self.remaining_bytes}")

    @property
    def deadline_s(self) -> float:
        if self.delay_bound_s is None:
            return float("inf")
        return self.created_at_s + self.delay_bound_s

    @property
    def pending(self) -> bool:
        return self.outcome is None

    @property
    def complete(self) -> bool:
        return self.delivered_bytes == self.size_bytes


class RlcBuffer:
    """
    FIFO RLC transmit buffer of one owner (device for UL, gNB side for DL).

    UM buffers never retransmit; AM buffers put failed bytes back at the head of the
    queue until the packet has used max_retx RLC retransmissions.
    """

    def __init__(self, mode: RlcMode, direction: Direction, owner: int, max_retx: int = 0):
        if max_retx < 0:
            raise ValueError(f"max_retx cannot be negative, got {max_retx}")
        self.mode = mode
        self.direction = direction
        self.owner = owner
        self.max_retx = max_retx if mode is RlcMode.AM else 0
        self._queue: Deque[Packet] = deque()

    def __len__(self) -> int:
        return len(self._queue)

    def __iter__(self) -> Iterator[Packet]:
        return iter(self._queue)

    @property
    def buffered_bytes(self) -> int:
        return sum(p.remaining_bytes for p in self._queue)

    def head(self) -> Optional[Packet]:
        return self._queue[0] if self._queue else None

    def head_wait(self, now_s: float) -> float:
        """Head-of-line waiting time (0 for an empty buffer)."""
        return now_s - self._queue[0].created_at_s if self._queue else 0.0

    def enqueue(self, packet: Packet) -> None:
        self._queue.append(packet)

    def pull(self, nbytes: int) -> List[Tuple[Packet, int]]:
        """Segment up to nbytes from the head; returns (packet, bytes) segments."""
        segments: List[Tuple[Packet, int]] = []
        while nbytes > 0 and self._queue:
            packet = self._queue[0]
            take = min(nbytes, packet.remaining_bytes)
            packet.remaining_bytes -= take
            packet.in_flight_bytes += take
            segments.append((packet, take))
            nbytes -= take
            if packet.remaining_bytes == 0:
                self._queue.popleft()
        return segments

    def requeue(self, packet: Packet, nbytes: int) -> bool:
        """
        Put bytes of a failed transport block back at the head (AM only).

        Returns:
            False when the packet has exhausted its RLC retransmissions
        """
        if self.mode is not RlcMode.AM:
            raise ValueError("UM buffers never retransmit")
        packet.in_flight_bytes -= nbytes
        if packet.rlc_retx >= self.max_retx:
            return False
        packet.rlc_retx += 1
        packet.remaining_bytes += nbytes
        if not self._queue or self._queue[0] is not packet:
            self._queue.appendleft(packet)
        return True

    def remove(self, packet: Packet) -> None:
        try:
            self._queue.remove(packet)
        except ValueError:
            pass

    def remove_where(self, predicate) -> List[Packet]:
        removed = [p for p in self._queue if predicate(p)]
        if removed:
            self._queue = deque(p for p in self._queue if not predicate(p))
        return removed


@dataclass
class HarqProcess:
    """
    A transport block waiting for (or undergoing) HARQ retransmission.

    Attributes:
        flow: Flow of the data
        direction: Link direction
        device: Device index within its flow
        cell: Serving gNB
        segments: (packet, bytes) carried by the block
        rbs: Resource blocks the block occupies
        mcs: Rate chosen at the first transmission
        attempts: Transmissions made so far
        max_attempts: HARQ transmission limit
        ready_at_s: Earliest retransmission opportunity
    """
    flow: Flow
    direction: Direction
    device: int
    cell: int
    segments: List[Tuple[Packet, int]]
    rbs: int
    mcs: McsEntry
    attempts: int = 0
    max_attempts: int = 1
    ready_at_s: float = 0.0

    @property
    def block_bytes(self) -> int:
        return sum(nbytes for _, nbytes in self.segments)

    @property
    def exhausted(self) -> bool:
        return self.attempts >= self.max_attempts


@dataclass
class FlowCounters:
    """Byte bookkeeping of one flow; generated == delivered + dropped once drained."""
    generated_bytes: int = 0
    delivered_bytes: int = 0
    dropped_bytes: int = 0
    packets: int = 0
    outcomes: dict = field(default_factory=lambda: {o: 0 for o in PacketOutcome})

    def settle(self, packet: Packet, outcome: PacketOutcome) -> None:
        self.outcomes[outcome] += 1
        if outcome is not PacketOutcome.DELIVERED and outcome is not PacketOutcome.LATE:
            self.dropped_bytes += packet.size_bytes - packet.delivered_bytes

    @property
    def outstanding_bytes(self) -> int:
        return self.generated_bytes - self.delivered_bytes - self.dropped_bytes

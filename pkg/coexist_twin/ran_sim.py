"""
Radio access simulation module for Coexist Twin.

Contains the TTI-resolution discrete-event engine: periodic URLLC traffic with
1D mobility, RLC buffers, strict-priority scheduling of URLLC over AI per resource
pool, SINR-driven transport-block outcomes, HARQ and RLC AM retransmissions, and
the ordered feed of URLLC packet outcomes into the availability records.
"""

from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Tuple
import heapq
import logging
import math

import numpy as np
import pandas as pd

from .channel import ChannelModel, LinkState, sinr_db
from .errors import ProtocolError
from .link import per_from_sinr, select_mcs
from .metrics import (
    AvailabilityRecord, NetworkEvent, WindowLog, availability_estimate, update_network_state
)
from .rlc import FlowCounters, HarqProcess, Packet, PacketOutcome, RlcBuffer, RlcMode
from .scenario import Direction, Flow, Point3D, ScenarioConfig, UrllcProfile, derive_rng
from .scheduler import URLLC_POLICY, Candidate, CellScheduleState, proportional_fair

logger = logging.getLogger(__name__)

EPS_S = 1e-12
SHARED_POOL = "shared"


@dataclass(frozen=True)
class DeliveryEvent:
    """
    Outcome of one packet.

    Attributes:
        time_s: Delivery instant, or the deadline for a failed URLLC packet
        flow: URLLC or AI
        direction: UL or DL
        device: Device index within its flow
        packet_id: Engine packet id
        outcome: Terminal packet state
        created_at_s: Packet arrival time
        tag: Caller data attached at enqueue
    """
    time_s: float
    flow: Flow
    direction: Direction
    device: int
    packet_id: int
    outcome: PacketOutcome
    created_at_s: float
    tag: Any = None

    @property
    def on_time(self) -> bool:
        return self.outcome is PacketOutcome.DELIVERED

    @property
    def delay_s(self) -> float:
        return self.time_s - self.created_at_s

    def __str__(self) -> str:
        return (f"t={self.time_s * 1e3:.1f}ms {self.flow.value}/{self.direction.value} "
                f"dev={self.device} pkt={self.packet_id} ({self.outcome.value})")


class UrllcDevice:
    """A URLLC device moving back and forth along a fixed heading."""

    def __init__(self, index: int, profile: UrllcProfile, anchor: Point3D, heading_rad: float,
                 span_m: float, hall: Point3D):
        self.index = index
        self.profile = profile
        self.anchor = np.asarray(anchor, dtype=float)
        self.heading = np.array([math.cos(heading_rad), math.sin(heading_rad), 0.0])
        self.span_m = span_m
        self.hall = np.asarray(hall, dtype=float)
        self.cell = 0

    def position(self, t: float) -> Tuple[float, float, float]:
        """Triangular motion over [-span/2, span/2] around the anchor."""
        if self.span_m <= 0 or self.profile.speed_mps <= 0:
            offset = 0.0
        else:
            phase = (self.profile.speed_mps * t) % (2.0 * self.span_m)
            offset = (phase if phase <= self.span_m else 2.0 * self.span_m - phase) - self.span_m / 2.0
        pos = np.clip(self.anchor + offset * self.heading, 0.0, self.hall)
        return float(pos[0]), float(pos[1]), float(pos[2])


@dataclass
class AiDevice:
    index: int
    position: Point3D
    cell: int = 0


class RanEngine:
    """
    TTI-resolution radio access simulator for one run.

    One engine is single threaded and owns its channel cache, buffers, HARQ
    processes and availability records. Packets are generated at TTI boundaries;
    a transport block scheduled at time t is delivered at t + TTI + the processing
    offset.

    Args:
        config: Scenario to simulate
        verbose: Log engine activity at DEBUG level
        trace: Keep a per-TTI allocation trace (see write_trace)
    """

    def __init__(self, config: ScenarioConfig, verbose: bool = False, trace: bool = False):
        self.config = config
        self.radio = config.radio
        self.verbose = verbose
        if verbose:
            logger.setLevel(logging.DEBUG)
        self.tti_s = config.tti_seconds
        self.tti_index = 0
        self.delivery_lag_s = self.tti_s * (1 + self.radio.processing_offset_ttis)
        self.rb_bandwidth_hz = config.bandwidth_hz / self.radio.rb_count

        self.channel = ChannelModel(self.radio, config.gnb_positions,
                                    derive_rng(config, "channel"), derive_rng(config, "fading"))
        self._traffic_rng = derive_rng(config, "traffic")
        self._outcome_rng = derive_rng(config, "outcome")
        self.compute_rng = derive_rng(config, "compute")

        self.urllc_devices = self._place_urllc(derive_rng(config, "placement"), derive_rng(config, "mobility"))
        self.ai_devices = self._place_ai(derive_rng(config, "ai-placement"))
        self._associate()

        self._pools: Dict[Tuple[int, Direction, Flow], CellScheduleState] = {}
        self._pool_share: Dict[Flow, float] = {}
        self._build_pools()

        self.urllc_buffers: Dict[Tuple[int, Direction], RlcBuffer] = {
            (u, d): RlcBuffer(RlcMode.UM, d, u) for u in range(config.urllc_count) for d in Direction
        }
        self.ai_buffers: Dict[Tuple[int, Direction], RlcBuffer] = {
            (i, d): RlcBuffer(RlcMode.AM, d, i, self.radio.max_rlc_retx_ai)
            for i in range(config.big_n) for d in Direction
        }
        self._harq: List[HarqProcess] = []
        self._urllc_pending: Dict[int, Packet] = {}
        self._ai_pending: Dict[int, Packet] = {}
        self._next_packet_id = 0

        period_ttis = [max(1, int(round(p.packet_period_s / self.tti_s))) for p in config.urllc_devices]
        self._urllc_period_ttis = period_ttis
        self._urllc_phase_ttis = {
            (u, d): int(self._traffic_rng.integers(0, period_ttis[u]))
            for u in range(config.urllc_count) for d in Direction
        }

        self.sinr_estimate: Dict[Tuple[Flow, int, Direction], float] = {}
        self._init_estimates()

        self.availability: Dict[Tuple[int, Direction], AvailabilityRecord] = {
            (u, d): AvailabilityRecord(u, d, config.survival_time_s[d])
            for u in range(config.urllc_count) for d in Direction
        }
        self._outcomes: List[Tuple[float, int, Tuple[int, Direction], NetworkEvent]] = []
        self._emitted: List[Tuple[float, int, DeliveryEvent]] = []
        self._emitted_seq = 0
        self._outcome_seq = 0
        self.counters: Dict[Flow, FlowCounters] = {Flow.URLLC: FlowCounters(), Flow.AI: FlowCounters()}
        self._log = WindowLog(start_s=0.0)
        self.trace_enabled = trace
        self._trace_rows: List[Tuple] = []

        logger.debug("engine ready: %d URLLC, %d AI devices, %d cells, pools=%s",
                     config.urllc_count, config.big_n, config.gnb_count,
                     sorted(flow.value for flow in self._pool_share))

    # --- setup ---------------------------------------------------------------

    def _place_urllc(self, placement_rng: np.random.Generator, mobility_rng: np.random.Generator) -> List[UrllcDevice]:
        hall = self.config.hall_size_m
        devices = []
        for u, profile in enumerate(self.config.urllc_devices):
            anchor = profile.initial_position
            if profile.placement == "random":
                x, y = placement_rng.uniform(1.0, hall[0] - 1.0), placement_rng.uniform(1.0, hall[1] - 1.0)
                anchor = (float(x), float(y), self.radio.device_height_m)
            if profile.direction_policy == "random":
                heading = float(mobility_rng.uniform(0.0, 2.0 * math.pi))
            else:
                heading = math.radians(profile.direction_deg)
            devices.append(UrllcDevice(u, profile, anchor, heading, self.radio.movement_span_m, hall))
        return devices

    def _place_ai(self, rng: np.random.Generator) -> List[AiDevice]:
        hall = self.config.hall_size_m
        if self.config.ai_positions is not None:
            return [AiDevice(i, tuple(p)) for i, p in enumerate(self.config.ai_positions)]
        return [
            AiDevice(i, (float(rng.uniform(0.0, hall[0])), float(rng.uniform(0.0, hall[1])),
                         self.radio.device_height_m))
            for i in range(self.config.big_n)
        ]

    def _associate(self) -> None:
        for dev in self.urllc_devices:
            dev.cell = self.channel.strongest_gnb(("U", dev.index), dev.position(0.0))
        for dev in self.ai_devices:
            dev.cell = self.channel.strongest_gnb(("A", dev.index), dev.position)
        self._urllc_by_cell = {g: [d.index for d in self.urllc_devices if d.cell == g]
                               for g in range(self.config.gnb_count)}
        self._ai_by_cell = {g: [d.index for d in self.ai_devices if d.cell == g]
                            for g in range(self.config.gnb_count)}

    def _build_pools(self) -> None:
        fraction = self.config.slicing_fraction
        rb = self.radio.rb_count
        for g in range(self.config.gnb_count):
            for d in Direction:
                if fraction > 0.0:
                    urllc = CellScheduleState(g, d, int(math.floor(fraction * rb + EPS_S)),
                                              pf_smoothing=self.radio.pf_smoothing)
                    ai = CellScheduleState(g, d, int(math.floor((1.0 - fraction) * rb + EPS_S)),
                                           pf_smoothing=self.radio.pf_smoothing)
                else:
                    urllc = ai = CellScheduleState(g, d, rb, pf_smoothing=self.radio.pf_smoothing)
                self._pools[(g, d, Flow.URLLC)] = urllc
                self._pools[(g, d, Flow.AI)] = ai
        if fraction > 0.0:
            self._pool_share = {Flow.URLLC: fraction, Flow.AI: 1.0 - fraction}
        else:
            self._pool_share = {Flow.URLLC: 1.0, Flow.AI: 1.0}

    def _pool_id(self, flow: Flow) -> str:
        return flow.value if self.config.slicing_fraction > 0.0 else SHARED_POOL

    def pool(self, cell: int, direction: Direction, flow: Flow) -> CellScheduleState:
        return self._pools[(cell, direction, flow)]

    def _dl_power(self, flow: Flow) -> float:
        return self.config.dl_tx_power_w * self._pool_share[flow]

    def _pool_bandwidth(self, flow: Flow) -> float:
        return self.config.bandwidth_hz * self._pool_share[flow]

    def _init_estimates(self) -> None:
        """DL estimates assume fully loaded neighbours, UL estimates assume none."""
        for flow, devices in ((Flow.URLLC, self.urllc_devices), (Flow.AI, self.ai_devices)):
            for dev in devices:
                key = self._device_key(flow, dev.index)
                pos = self._position(flow, dev.index, 0.0)
                wanted = self.channel.link(key, pos, dev.cell)
                interferers = [
                    (self.channel.link(key, pos, g), self._dl_power(flow))
                    for g in range(self.config.gnb_count) if g != dev.cell
                ]
                self.sinr_estimate[(flow, dev.index, Direction.DL)] = sinr_db(
                    wanted, self._dl_power(flow), interferers, self._pool_bandwidth(flow),
                    self.radio.noise_figure_db, self.radio.combining_gain_db)
                self.sinr_estimate[(flow, dev.index, Direction.UL)] = sinr_db(
                    wanted, self.config.ul_tx_power_w, [], self._pool_bandwidth(flow),
                    self.radio.noise_figure_db, self.radio.combining_gain_db)

    # --- state access --------------------------------------------------------

    @property
    def now_s(self) -> float:
        return self.tti_index * self.tti_s

    @staticmethod
    def _device_key(flow: Flow, device: int) -> Tuple[str, int]:
        return ("U" if flow is Flow.URLLC else "A", device)

    def _position(self, flow: Flow, device: int, t: float) -> Tuple[float, float, float]:
        if flow is Flow.URLLC:
            return self.urllc_devices[device].position(t)
        return self.ai_devices[device].position

    def _cell(self, flow: Flow, device: int) -> int:
        return (self.urllc_devices if flow is Flow.URLLC else self.ai_devices)[device].cell

    def link(self, flow: Flow, device: int, gnb: int, t: Optional[float] = None) -> LinkState:
        pos = self._position(flow, device, self.now_s if t is None else t)
        return self.channel.link(self._device_key(flow, device), pos, gnb)

    def _buffer(self, flow: Flow, device: int, direction: Direction) -> RlcBuffer:
        table = self.urllc_buffers if flow is Flow.URLLC else self.ai_buffers
        return table[(device, direction)]

    def _new_packet(self, flow: Flow, direction: Direction, device: int, size: int,
                    created_at: float, bound: Optional[float], tag: Any = None) -> Packet:
        packet = Packet(self._next_packet_id, flow, direction, device, size, created_at, bound, tag=tag)
        self._next_packet_id += 1
        self.counters[flow].generated_bytes += size
        self.counters[flow].packets += 1
        return packet

    # --- protocol hooks ------------------------------------------------------

    def enqueue_ai(self, device: int, direction: Direction, size_bytes: int, tag: Any = None,
                   created_at_s: Optional[float] = None) -> Packet:
        """Queue a distributed-AI message (DL at the gNB, UL at the device)."""
        if not self.config.ai_traffic_enabled:
            raise ProtocolError("AI traffic is disabled in this scenario")
        if not 0 <= device < self.config.big_n:
            raise ProtocolError(f"AI device {device} out of range [0, {self.config.big_n})")
        created = self.now_s if created_at_s is None else created_at_s
        packet = self._new_packet(Flow.AI, direction, device, size_bytes, created, None, tag)
        self.ai_buffers[(device, direction)].enqueue(packet)
        self._ai_pending[packet.id] = packet
        return packet

    def cancel_ai(self, tag: Any) -> int:
        """Drop every pending AI packet carrying `tag`; returns the number dropped."""
        stale = [p for p in self._ai_pending.values() if p.tag == tag]
        for packet in stale:
            self._drop(packet, PacketOutcome.CANCELLED, self.now_s, None)
        if stale:
            logger.debug("cancelled %d stale AI packets of iteration %s", len(stale), tag)
        return len(stale)

    # --- one TTI -------------------------------------------------------------

    def step_tti(self) -> List[DeliveryEvent]:
        """
        Advance the engine by one TTI.

        Returns:
            Outcome events whose time falls before the end of this TTI; outcomes decided
            now but stamped later (delivery lag, future deadlines) come out of a later step
        """
        now = self.now_s
        events: List[DeliveryEvent] = []
        self._generate_urllc(now)
        self._expire_urllc(now, events)

        for state in self._unique_pools():
            state.begin_tti()

        grants: List[Tuple[HarqProcess, bool]] = []
        for direction in Direction:
            for cell in range(self.config.gnb_count):
                grants.extend(self._schedule(cell, direction, now))

        self._resolve(grants, now, events)
        self._account_tti(now, grants)
        self._release(now + self.tti_s - EPS_S)
        self.tti_index += 1
        return self._emit(events, self.now_s)

    def _emit(self, events: List[DeliveryEvent], horizon_s: float) -> List[DeliveryEvent]:
        """Queue new outcomes and hand out, in time order, those reached by the horizon."""
        for event in events:
            heapq.heappush(self._emitted, (event.time_s, self._emitted_seq, event))
            self._emitted_seq += 1
        ready: List[DeliveryEvent] = []
        while self._emitted and self._emitted[0][0] <= horizon_s + EPS_S:
            ready.append(heapq.heappop(self._emitted)[2])
        return ready

    def run_until(self, t_s: float) -> List[DeliveryEvent]:
        """Step until now_s >= t_s; returns all events emitted."""
        events: List[DeliveryEvent] = []
        while self.now_s < t_s - EPS_S:
            events.extend(self.step_tti())
        return events

    def _unique_pools(self) -> List[CellScheduleState]:
        seen: Dict[int, CellScheduleState] = {}
        for state in self._pools.values():
            seen.setdefault(id(state), state)
        return list(seen.values())

    def _generate_urllc(self, now: float) -> None:
        for dev in self.urllc_devices:
            period = self._urllc_period_ttis[dev.index]
            for direction in Direction:
                if (self.tti_index - self._urllc_phase_ttis[(dev.index, direction)]) % period:
                    continue
                size = dev.profile.ul_bytes if direction is Direction.UL else dev.profile.dl_bytes
                packet = self._new_packet(Flow.URLLC, direction, dev.index, size, now,
                                          self.config.delay_bounds[direction])
                self.urllc_buffers[(dev.index, direction)].enqueue(packet)
                self._urllc_pending[packet.id] = packet

    def _expire_urllc(self, now: float, events: List[DeliveryEvent]) -> None:
        """Fail every URLLC packet that can no longer be delivered before its deadline."""
        if not self._urllc_pending:
            return
        waiting: Dict[int, float] = {}
        for proc in self._harq:
            if proc.flow is Flow.URLLC:
                earliest = max(now, proc.ready_at_s) + self.delivery_lag_s
                for packet, _ in proc.segments:
                    waiting[packet.id] = max(waiting.get(packet.id, 0.0), earliest)
        for packet in list(self._urllc_pending.values()):
            earliest = waiting.get(packet.id, 0.0)
            if packet.remaining_bytes > 0:
                earliest = max(earliest, now + self.delivery_lag_s)
            if earliest > packet.deadline_s + EPS_S:
                self._drop(packet, PacketOutcome.EXPIRED, packet.deadline_s, events)

    def _harq_ready(self, cell: int, direction: Direction, flow: Flow, now: float) -> List[HarqProcess]:
        ready = [h for h in self._harq
                 if h.cell == cell and h.direction is direction and h.flow is flow and h.ready_at_s <= now + EPS_S]
        return sorted(ready, key=lambda h: (h.ready_at_s, h.device))

    def _schedule(self, cell: int, direction: Direction, now: float) -> List[Tuple[HarqProcess, bool]]:
        grants: List[Tuple[HarqProcess, bool]] = []
        for flow in (Flow.URLLC, Flow.AI):
            state = self.pool(cell, direction, flow)
            for proc in self._harq_ready(cell, direction, flow, now):
                if proc.rbs <= state.remaining:
                    state.take(flow, proc.rbs)
                    self._harq.remove(proc)
                    grants.append((proc, True))
            devices = self._urllc_by_cell[cell] if flow is Flow.URLLC else self._ai_by_cell[cell]
            candidates = []
            for device in devices:
                buf = self._buffer(flow, device, direction)
                if buf.buffered_bytes > 0:
                    mcs = select_mcs(self.sinr_estimate[(flow, device, direction)], self.radio.target_bler)
                    candidates.append(Candidate(device, buf.buffered_bytes, mcs, buf.head_wait(now)))
            if not candidates:
                continue
            policy = URLLC_POLICY[direction] if flow is Flow.URLLC else proportional_fair
            for alloc in policy(state, candidates, flow):
                cand = next(c for c in candidates if c.device == alloc.device)
                segments = self._buffer(flow, alloc.device, direction).pull(alloc.block_bytes)
                limits = self.radio.max_harq_urllc if flow is Flow.URLLC else self.radio.max_harq_ai
                proc = HarqProcess(flow, direction, alloc.device, cell, segments, alloc.rbs, cand.mcs,
                                   max_attempts=int(limits[direction]), ready_at_s=now)
                grants.append((proc, False))
        return grants

    def _grant_sinr(self, proc: HarqProcess, grants: List[Tuple[HarqProcess, bool]], now: float) -> float:
        """SINR without fast fading, given everything co-scheduled this TTI."""
        key = self._device_key(proc.flow, proc.device)
        pos = self._position(proc.flow, proc.device, now)
        wanted = self.channel.link(key, pos, proc.cell)
        pool_id = self._pool_id(proc.flow)
        radio = self.radio
        if proc.direction is Direction.DL:
            interferers = []
            for g in range(self.config.gnb_count):
                if g == proc.cell:
                    continue
                occupancy = self.pool(g, Direction.DL, proc.flow).occupancy
                if occupancy > 0.0:
                    interferers.append((self.channel.link(key, pos, g), self._dl_power(proc.flow) * occupancy))
            return sinr_db(wanted, self._dl_power(proc.flow), interferers, self._pool_bandwidth(proc.flow),
                           radio.noise_figure_db, radio.combining_gain_db)
        interferers = []
        for other, _ in grants:
            if (other.direction is not Direction.UL or other.cell == proc.cell
                    or self._pool_id(other.flow) != pool_id):
                continue
            budget = self.pool(other.cell, Direction.UL, other.flow).budget
            other_link = self.channel.link(self._device_key(other.flow, other.device),
                                           self._position(other.flow, other.device, now), proc.cell)
            interferers.append((other_link, self.config.ul_tx_power_w * min(1.0, proc.rbs / max(budget, 1))))
        return sinr_db(wanted, self.config.ul_tx_power_w, interferers, proc.rbs * self.rb_bandwidth_hz,
                       radio.noise_figure_db, radio.combining_gain_db)

    def _resolve(self, grants: List[Tuple[HarqProcess, bool]], now: float, events: List[DeliveryEvent]) -> None:
        alpha = self.radio.sinr_filter
        for proc, _ in grants:
            average = self._grant_sinr(proc, grants, now)
            fading = max(self.channel.fading_gain(), 1e-12)
            realized = average + 10.0 * math.log10(fading) if math.isfinite(average) else average
            key = (proc.flow, proc.device, proc.direction)
            if math.isfinite(average):
                self.sinr_estimate[key] = (1.0 - alpha) * self.sinr_estimate[key] + alpha * average
            self.link(proc.flow, proc.device, proc.cell, now).last_sinr_db[proc.direction] = realized
            table = self._log.urllc_sinr if proc.flow is Flow.URLLC else self._log.ai_sinr
            if math.isfinite(realized):
                self._log.add_sample(table, (proc.device, proc.direction), realized)

            per = per_from_sinr(realized, proc.block_bytes, proc.mcs)
            proc.attempts += 1
            if self._outcome_rng.random() >= per:
                self._deliver(proc, now, events)
            else:
                self._fail(proc, now, events)

    def _deliver(self, proc: HarqProcess, now: float, events: List[DeliveryEvent]) -> None:
        t_delivered = now + self.delivery_lag_s
        counters = self.counters[proc.flow]
        for packet, nbytes in proc.segments:
            if not packet.pending:
                continue
            packet.in_flight_bytes -= nbytes
            packet.delivered_bytes += nbytes
            counters.delivered_bytes += nbytes
            if packet.complete:
                on_time = t_delivered <= packet.deadline_s + EPS_S
                outcome = PacketOutcome.DELIVERED if on_time else PacketOutcome.LATE
                self._finish(packet, outcome, t_delivered if on_time else packet.deadline_s, events)

    def _fail(self, proc: HarqProcess, now: float, events: List[DeliveryEvent]) -> None:
        proc.segments = [(p, b) for p, b in proc.segments if p.pending]
        if not proc.segments:
            return
        if not proc.exhausted:
            proc.ready_at_s = now + self.tti_s * (1 + self.radio.harq_feedback_ttis)
            self._harq.append(proc)
            return
        if proc.flow is Flow.URLLC:
            for packet, _ in proc.segments:
                if packet.pending:
                    self._drop(packet, PacketOutcome.LOST, packet.deadline_s, events)
            return
        for packet, nbytes in reversed(proc.segments):
            if not packet.pending:
                continue
            if not self.ai_buffers[(packet.device, packet.direction)].requeue(packet, nbytes):
                self._drop(packet, PacketOutcome.LOST, now + self.delivery_lag_s, events)

    def _drop(self, packet: Packet, outcome: PacketOutcome, time_s: float,
              events: Optional[List[DeliveryEvent]]) -> None:
        """Terminate a pending packet: purge it from its buffer and any HARQ process."""
        self._buffer(packet.flow, packet.device, packet.direction).remove(packet)
        kept = []
        for proc in self._harq:
            proc.segments = [(p, b) for p, b in proc.segments if p is not packet]
            if proc.segments:
                kept.append(proc)
        self._harq = kept
        packet.remaining_bytes = 0
        packet.in_flight_bytes = 0
        self._finish(packet, outcome, time_s, events)

    def _finish(self, packet: Packet, outcome: PacketOutcome, time_s: float,
                events: Optional[List[DeliveryEvent]]) -> None:
        packet.outcome = outcome
        packet.completed_at_s = time_s
        self.counters[packet.flow].settle(packet, outcome)
        event = DeliveryEvent(time_s, packet.flow, packet.direction, packet.device, packet.id,
                              outcome, packet.created_at_s, packet.tag)
        if packet.flow is Flow.URLLC:
            self._urllc_pending.pop(packet.id, None)
            key = (packet.device, packet.direction)
            self._log.count(self._log.urllc_packets, key)
            if event.on_time:
                self._log.add_sample(self._log.urllc_delay, key, event.delay_s)
            else:
                self._log.count(self._log.urllc_errors, key)
            heapq.heappush(self._outcomes, (time_s, self._outcome_seq, key, NetworkEvent(time_s, event.on_time)))
            self._outcome_seq += 1
        else:
            self._ai_pending.pop(packet.id, None)
        if events is not None:
            events.append(event)
        if self.verbose:
            logger.debug("%s", event)

    def _account_tti(self, now: float, grants: List[Tuple[HarqProcess, bool]]) -> None:
        log = self._log
        log.slots += 1
        for g in range(self.config.gnb_count):
            for d in Direction:
                urllc_rbs = self.pool(g, d, Flow.URLLC).allocated[Flow.URLLC]
                ai_rbs = self.pool(g, d, Flow.AI).allocated[Flow.AI]
                log.count(log.rb_allocated, (g, Flow.URLLC, d), urllc_rbs)
                log.count(log.rb_allocated, (g, Flow.AI, d), ai_rbs)
                if self.trace_enabled:
                    self._trace_rows.append((
                        round(now, 9), g, d.value, urllc_rbs, ai_rbs,
                        self.pool(g, d, Flow.URLLC).budget, self.pool(g, d, Flow.AI).budget,
                    ))
        served: Dict[Tuple[int, Direction], Dict[int, int]] = {}
        for proc, _ in grants:
            if proc.flow is Flow.AI:
                served.setdefault((proc.cell, proc.direction), {})
                bits = proc.rbs * proc.mcs.bits_per_rb
                served[(proc.cell, proc.direction)][proc.device] = bits
        for g in range(self.config.gnb_count):
            for d in Direction:
                self.pool(g, d, Flow.AI).update_pf(served.get((g, d), {}), self._ai_by_cell[g])

    def _release(self, horizon_s: float) -> None:
        """Apply every URLLC outcome up to the horizon to the availability records, in time order."""
        while self._outcomes and self._outcomes[0][0] <= horizon_s:
            _, _, key, event = heapq.heappop(self._outcomes)
            update_network_state(self.availability[key], event)

    # --- windows and outputs -------------------------------------------------

    def close_window(self) -> WindowLog:
        """Close the current measurement window and start the next one at now_s."""
        now = self.now_s
        log = self._log
        log.end_s = now
        for (u, d), buf in self.urllc_buffers.items():
            log.urllc_buffer[(u, d)] = buf.buffered_bytes
        for dev in self.urllc_devices:
            log.urllc_cell[dev.index] = dev.cell
        for (i, d), buf in self.ai_buffers.items():
            log.ai_buffer[(i, d)] = buf.buffered_bytes
        for key, record in self.availability.items():
            log.downtime_intervals[key] = [
                (max(start + record.survival_time_s, log.start_s), end)
                for start, end in record.bursts
                if end is not None and log.start_s < end <= now and end > start + record.survival_time_s
            ]
        self._log = WindowLog(start_s=now)
        return log

    def availability_window(self, t0: float, t1: float) -> Dict[Tuple[int, Direction], float]:
        """alpha-hat of every URLLC device and direction over [t0, t1]."""
        return {key: availability_estimate(record, t0, t1) for key, record in self.availability.items()}

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self._trace_rows, columns=[
            "time_s", "cell", "direction", "urllc_rbs", "ai_rbs", "urllc_budget", "ai_budget"])

    def write_trace(self, path) -> None:
        """Per-TTI allocation trace as CSV."""
        self.trace_frame().to_csv(path, index=False, float_format="%.6f")

    def get_summary(self) -> Dict[str, Any]:
        return {
            "now_s": self.now_s,
            "ttis": self.tti_index,
            "cached_links": self.channel.cached_links,
            "urllc_generated_bytes": self.counters[Flow.URLLC].generated_bytes,
            "urllc_delivered_bytes": self.counters[Flow.URLLC].delivered_bytes,
            "ai_generated_bytes": self.counters[Flow.AI].generated_bytes,
            "ai_delivered_bytes": self.counters[Flow.AI].delivered_bytes,
            "pending_harq": len(self._harq),
        }

    def ai_cell_members(self) -> Dict[int, List[int]]:
        return {g: list(devices) for g, devices in self._ai_by_cell.items()}

    def urllc_positions(self, t: Optional[float] = None) -> Iterable[Tuple[float, float, float]]:
        t = self.now_s if t is None else t
        return [dev.position(t) for dev in self.urllc_devices]

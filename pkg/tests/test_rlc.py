"""
Unit tests for the RLC module.
"""

import pytest

from coexist_twin.rlc import FlowCounters, Packet, PacketOutcome, RlcBuffer, RlcMode
from coexist_twin.scenario import Direction, Flow


def packet(pid, size=100, created=0.0, bound=None, flow=Flow.AI):
    return Packet(id=pid, flow=flow, direction=Direction.DL, device=0, size_bytes=size,
                  created_at_s=created, delay_bound_s=bound)


class TestPacket:
    """Test cases for the Packet class."""

    def test_defaults(self):
        """Test that a new packet has all bytes remaining."""
        p = packet(1, size=64, created=0.5, bound=0.004, flow=Flow.URLLC)
        assert p.remaining_bytes == 64
        assert p.pending
        assert not p.complete
        assert p.deadline_s == pytest.approx(0.504)

    def test_ai_has_no_deadline(self):
        """Test that AI packets never expire."""
        assert packet(1).deadline_s == float("inf")

    def test_invalid_size(self):
        """Test size validation."""
        with pytest.raises(ValueError, match="size_bytes must be positive"):
            packet(1, size=0)


class TestRlcBuffer:
    """Test cases for the RlcBuffer class."""

    def test_pull_segments_head(self):
        """Test that pulling segments packets in FIFO order."""
        buffer = RlcBuffer(RlcMode.AM, Direction.DL, owner=0, max_retx=8)
        first, second = packet(1, 100), packet(2, 100)
        buffer.enqueue(first)
        buffer.enqueue(second)
        segments = buffer.pull(150)
        assert [(p.id, n) for p, n in segments] == [(1, 100), (2, 50)]
        assert len(buffer) == 1
        assert buffer.buffered_bytes == 50
        assert second.in_flight_bytes == 50

    def test_head_wait(self):
        """Test head-of-line waiting time."""
        buffer = RlcBuffer(RlcMode.UM, Direction.DL, owner=0)
        assert buffer.head_wait(1.0) == 0.0
        buffer.enqueue(packet(1, created=0.25))
        assert buffer.head_wait(1.0) == pytest.approx(0.75)

    def test_um_never_retransmits(self):
        """Test that UM buffers refuse to requeue."""
        buffer = RlcBuffer(RlcMode.UM, Direction.UL, owner=3, max_retx=5)
        assert buffer.max_retx == 0
        p = packet(1)
        buffer.enqueue(p)
        buffer.pull(100)
        with pytest.raises(ValueError, match="UM buffers never retransmit"):
            buffer.requeue(p, 100)

    def test_am_requeue_until_exhausted(self):
        """Test that AM retransmissions stop after max_retx."""
        buffer = RlcBuffer(RlcMode.AM, Direction.UL, owner=0, max_retx=2)
        p = packet(1, size=40)
        buffer.enqueue(p)
        for expected in (1, 2):
            buffer.pull(40)
            assert buffer.requeue(p, 40)
            assert p.rlc_retx == expected
            assert buffer.head() is p
            assert p.remaining_bytes == 40
        buffer.pull(40)
        assert not buffer.requeue(p, 40)
        assert p.rlc_retx == 2
        assert len(buffer) == 0

    def test_requeue_keeps_partial_head(self):
        """Test that a partially pulled head is not queued twice."""
        buffer = RlcBuffer(RlcMode.AM, Direction.DL, owner=0, max_retx=8)
        p = packet(1, size=100)
        buffer.enqueue(p)
        buffer.pull(30)
        buffer.requeue(p, 30)
        assert len(buffer) == 1
        assert p.remaining_bytes == 100

    def test_remove_where(self):
        """Test predicate-based removal."""
        buffer = RlcBuffer(RlcMode.UM, Direction.DL, owner=0)
        for pid in range(4):
            buffer.enqueue(packet(pid, created=0.001 * pid))
        removed = buffer.remove_where(lambda p: p.created_at_s < 0.0015)
        assert [p.id for p in removed] == [0, 1]
        assert [p.id for p in buffer] == [2, 3]

    def test_negative_retx(self):
        """Test max_retx validation."""
        with pytest.raises(ValueError, match="max_retx cannot be negative"):
            RlcBuffer(RlcMode.AM, Direction.DL, owner=0, max_retx=-1)


class TestFlowCounters:
    """Test cases for byte conservation bookkeeping."""

    def test_settle(self):
        """Test that dropped bytes close the balance."""
        counters = FlowCounters(generated_bytes=300)
        delivered = packet(1, size=100)
        delivered.delivered_bytes = 100
        counters.delivered_bytes += 100
        counters.settle(delivered, PacketOutcome.DELIVERED)
        lost = packet(2, size=200)
        lost.delivered_bytes = 50
        counters.delivered_bytes += 50
        counters.settle(lost, PacketOutcome.LOST)
        assert counters.dropped_bytes == 150
        assert counters.outstanding_bytes == 0
        assert counters.outcomes[PacketOutcome.LOST] == 1

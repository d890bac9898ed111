"""
Unit tests for the scheduler module.
"""

import pytest

from coexist_twin.link import MCS_TABLE
from coexist_twin.scenario import Direction, Flow
from coexist_twin.scheduler import (
    Candidate, CellScheduleState, longest_wait_first, pf_metric, proportional_fair, round_robin,
)

LOW, HIGH = MCS_TABLE[0], MCS_TABLE[-1]


def state(budget=106):
    return CellScheduleState(cell=0, direction=Direction.UL, budget=budget)


class TestCellScheduleState:
    """Test cases for the CellScheduleState class."""

    def test_take_and_reset(self):
        """Test per-flow RB counters and the TTI reset."""
        s = state(10)
        s.take(Flow.URLLC, 4)
        s.take(Flow.AI, 6)
        assert s.remaining == 0
        assert s.occupancy == 1.0
        assert s.allocated == {Flow.URLLC: 4, Flow.AI: 6}
        s.begin_tti()
        assert s.used == 0
        assert s.allocated[Flow.AI] == 0

    def test_over_budget(self):
        """Test that allocations beyond the budget are refused."""
        s = state(5)
        with pytest.raises(ValueError, match="exceed remaining"):
            s.take(Flow.AI, 6)

    def test_validation(self):
        """Test budget and smoothing validation."""
        with pytest.raises(ValueError, match="budget cannot be negative"):
            state(-1)
        with pytest.raises(ValueError, match="pf_smoothing must be in"):
            CellScheduleState(cell=0, direction=Direction.DL, budget=10, pf_smoothing=0.0)

    def test_pf_average(self):
        """Test exponential smoothing of served bits."""
        s = state()
        s.update_pf({1: 1000}, [1, 2])
        assert s.pf_average[1] == pytest.approx(50.0)
        assert s.pf_average[2] == 0.0


class TestPolicies:
    """Test cases for the scheduling policies."""

    def test_round_robin_rotates(self):
        """Test that the cursor moves past the last device served."""
        s = state(budget=20)
        candidates = [Candidate(d, 80, LOW) for d in range(3)]
        first = round_robin(s, candidates)
        assert [a.device for a in first] == [0]
        assert s.rr_cursor == 1
        s.begin_tti()
        second = round_robin(s, candidates)
        assert [a.device for a in second] == [1]
        s.begin_tti()
        round_robin(s, candidates)
        s.begin_tti()
        assert [a.device for a in round_robin(s, candidates)] == [0]

    def test_longest_wait_first(self):
        """Test ordering by head-of-line wait with ties to the lower id."""
        s = state(budget=20)
        candidates = [Candidate(0, 80, LOW, 0.001), Candidate(1, 80, LOW, 0.003), Candidate(2, 80, LOW, 0.003)]
        allocations = longest_wait_first(s, candidates)
        assert [a.device for a in allocations] == [1]

    def test_block_limited_by_buffer(self):
        """Test one transport block per device sized to its buffer."""
        s = state()
        allocations = longest_wait_first(s, [Candidate(0, 64, HIGH), Candidate(1, 80, HIGH)])
        assert [(a.device, a.rbs, a.block_bytes) for a in allocations] == [(0, 1, 64), (1, 1, 80)]
        assert s.used == 2

    def test_truncated_by_budget(self):
        """Test that the last block is cut to the remaining RBs."""
        s = state(budget=3)
        allocations = proportional_fair(s, [Candidate(0, 10_000, LOW)])
        assert allocations[0].rbs == 3
        assert allocations[0].block_bytes == 3 * LOW.bits_per_rb // 8
        assert s.allocated[Flow.AI] == 3

    def test_proportional_fair_prefers_starved(self):
        """Test that a device with a low served rate goes first."""
        s = state(budget=1)
        s.pf_average = {0: 5000.0, 1: 10.0}
        allocations = proportional_fair(s, [Candidate(0, 1000, HIGH), Candidate(1, 1000, HIGH)])
        assert [a.device for a in allocations] == [1]
        assert pf_metric(s, Candidate(2, 1, HIGH)) == HIGH.bits_per_rb

    def test_empty_candidates_skipped(self):
        """Test that devices with nothing buffered get no RBs."""
        s = state()
        assert round_robin(s, [Candidate(0, 0, LOW)]) == []
        assert s.rr_cursor == 0

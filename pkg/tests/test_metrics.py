"""
Unit tests for the metrics module.
"""

import math

import numpy as np
import pytest

from coexist_twin.errors import DomainError, OrderingError
from coexist_twin.metrics import (
    ABSENT, AvailabilityRecord, IterationOutcome, NetworkEvent, WindowLog, availability_estimate,
    availability_frame, iteration_frame, nearest_rank, requirement_satisfied, sensitivity_curve,
    training_delay, training_delay_bruteforce, update_network_state, window_stats,
)
from coexist_twin.scenario import Direction, Flow


def replay(events, survival_s=0.006):
    record = AvailabilityRecord(0, Direction.DL, survival_s)
    for time_s, on_time in events:
        update_network_state(record, NetworkEvent(time_s, on_time))
    return record


class TestAvailability:
    """Test cases for the X/Y timelines and the availability estimate."""

    def test_all_on_time(self):
        """Test that a device with only on-time packets is always available."""
        record = replay([(0.006 * k, True) for k in range(1, 17)])
        assert record.x_state == 1
        assert record.y_at(0.05) == 1
        assert availability_estimate(record, 0.0, 0.1) == 1.0

    def test_short_burst_is_absorbed(self):
        """Test that a 4 ms outage shorter than the survival time keeps Y at 1."""
        record = replay([(0.010, False), (0.014, True)])
        assert availability_estimate(record, 0.0, 0.1) == 1.0
        assert record.x_downtime_s == pytest.approx(0.004)
        assert record.y_downtime_s == 0.0

    def test_long_burst(self):
        """Test that a 10 ms outage yields Y=0 on [t0+6 ms, t0+10 ms]."""
        record = replay([(0.010, False), (0.020, True)])
        assert record.y_at(0.015) == 1
        assert record.y_at(0.017) == 0
        assert record.y_at(0.020) == 1
        assert availability_estimate(record, 0.0, 0.1) == pytest.approx(0.96)
        assert record.y_downtime_s == pytest.approx(0.004)

    def test_open_burst_extends_to_window_end(self):
        """Test that an unfinished outage counts until the end of the window."""
        record = replay([(0.090, False)])
        assert record.y_down_intervals(0.0, 0.1) == [(pytest.approx(0.096), 0.1)]
        assert availability_estimate(record, 0.0, 0.1) == pytest.approx(0.96)

    def test_repeated_failures_do_not_restart_burst(self):
        """Test that consecutive failures extend one burst."""
        record = replay([(0.010, False), (0.016, False), (0.022, True)])
        assert len(record.bursts) == 1
        assert record.x_downtime_s == pytest.approx(0.012)

    def test_y_downtime_never_exceeds_x_downtime(self):
        """Test Y-downtime equals the sum of max(0, burst - T_sv)."""
        rng = np.random.default_rng(3)
        times = np.sort(rng.uniform(0.0, 1.0, size=200))
        record = replay([(float(t), bool(rng.random() < 0.6)) for t in times])
        expected = sum(max(0.0, end - start - 0.006) for start, end in record.bursts if end is not None)
        assert record.y_downtime_s == pytest.approx(expected)
        assert record.y_downtime_s <= record.x_downtime_s

    def test_out_of_order_event(self):
        """Test that an event older than the previous one is rejected."""
        record = replay([(0.02, True)])
        with pytest.raises(OrderingError):
            update_network_state(record, NetworkEvent(0.01, False))

    def test_empty_window(self):
        """Test that a zero-length window is a domain error."""
        with pytest.raises(DomainError, match="empty availability window"):
            availability_estimate(replay([]), 0.5, 0.5)

    def test_negative_survival_time(self):
        """Test survival time validation."""
        with pytest.raises(ValueError, match="survival_time_s cannot be negative"):
            AvailabilityRecord(0, Direction.UL, -1.0)


class TestRequirement:
    """Test cases for the availability requirement check."""

    def test_all_available(self):
        """Test that perfect samples satisfy the requirement."""
        verdict = requirement_satisfied({0: [1.0] * 100}, 0.99, 0.1)
        assert verdict.per_device[0]
        assert verdict.fleet

    def test_violated(self):
        """Test that 20 of 100 bad samples violate a 0.1 sensitivity."""
        samples = {0: [0.9] * 20 + [1.0] * 80, 1: [1.0] * 100}
        verdict = requirement_satisfied(samples, 0.99, 0.1)
        assert not verdict.per_device[0]
        assert verdict.per_device[1]
        assert not verdict.fleet
        assert verdict.violation_probability[0] == pytest.approx(0.2)

    def test_barely_satisfied(self):
        """Test that 1 of 100 bad samples satisfies a 0.012 sensitivity."""
        verdict = requirement_satisfied({"a": [0.5] + [1.0] * 99}, 0.99, 0.012)
        assert verdict.fleet

    def test_no_samples(self):
        """Test that a device without samples is rejected."""
        with pytest.raises(ValueError, match="no availability samples"):
            requirement_satisfied({0: []}, 0.99, 0.1)

    def test_sensitivity_curve(self):
        """Test the smallest satisfiable sensitivity per device."""
        curve = sensitivity_curve({0: [0.5, 1.0, 1.0, 1.0], 1: []}, 0.99)
        assert curve == {0: 0.25}


class TestTrainingDelay:
    """Test cases for the n-sync iteration training delay."""

    def test_second_fastest(self):
        """Test totals [3, 1, 5], n=2, d_pr=0.5 -> 3.5."""
        assert training_delay([3.0, 1.0, 5.0], 0.5, 2, 10.0) == pytest.approx(3.5)

    def test_single_device(self):
        """Test a single device without server processing."""
        assert training_delay([4.0], 0.0, 1, 10.0) == 4.0

    def test_capped_at_timeout(self):
        """Test that the delay never exceeds T_max."""
        assert training_delay([9.0, 9.8, 9.9], 0.5, 2, 10.0) == 10.0

    def test_unreachable_device(self):
        """Test that infinite totals lead to a timeout."""
        assert training_delay([1.0, math.inf], 0.1, 2, 10.0) == 10.0

    def test_too_few_totals(self):
        """Test that m < n is an argument error."""
        with pytest.raises(ValueError, match="need at least n=3"):
            training_delay([1.0, 2.0], 0.0, 3, 10.0)

    def test_matches_bruteforce(self):
        """Test the order statistic against the min-over-subsets form."""
        rng = np.random.default_rng(11)
        for _ in range(300):
            m = int(rng.integers(1, 9))
            n = int(rng.integers(1, m + 1))
            totals = list(rng.exponential(2.0, size=m))
            assert training_delay(totals, 0.1, n, 5.0) == training_delay_bruteforce(totals, 0.1, n, 5.0)

    def test_adding_candidates_never_increases_delay(self):
        """Test that appending totals cannot increase the n-th order statistic."""
        rng = np.random.default_rng(12)
        totals = list(rng.uniform(0.0, 5.0, size=4))
        before = training_delay(totals, 0.0, 3, 10.0)
        after = training_delay(totals + [float(rng.uniform(0.0, 5.0))], 0.0, 3, 10.0)
        assert after <= before


class TestWindowStats:
    """Test cases for window summaries."""

    def test_nearest_rank(self):
        """Test nearest-rank percentiles on 100 sorted samples."""
        values = list(range(1, 101))
        assert nearest_rank(values, 0.01) == 1
        assert nearest_rank(values, 0.05) == 5
        assert nearest_rank(values, 0.5) == 50
        assert nearest_rank(values, 0.99) == 99
        assert math.isnan(nearest_rank([], 0.5))

    def test_constant_delay_stream(self):
        """Test that a constant stream has equal median and tail percentiles."""
        log = WindowLog(start_s=0.0, end_s=1.0, slots=4)
        for _ in range(50):
            log.add_sample(log.urllc_delay, (0, Direction.UL), 0.002)
        stats = window_stats(log, urllc_count=1, ai_count=0, gnb_count=1)
        entry = stats.urllc[(0, Direction.UL)]
        assert entry.delay_median == entry.delay_p95 == entry.delay_p99 == 0.002

    def test_absent_measurements(self):
        """Test that an unselected AI device gets the sentinel."""
        log = WindowLog(start_s=0.0, end_s=1.0)
        stats = window_stats(log, urllc_count=1, ai_count=2, gnb_count=1)
        entry = stats.ai[(1, Direction.DL)]
        assert not entry.selected
        assert math.isnan(entry.downlink_s)
        assert math.isnan(entry.sinr_median)
        assert math.isnan(stats.urllc[(0, Direction.DL)].per)
        assert math.isnan(ABSENT)

    def test_per_and_rbs(self):
        """Test PER counting and mean RBs per slot."""
        log = WindowLog(start_s=0.0, end_s=1.0, slots=10)
        log.count(log.urllc_packets, (0, Direction.DL), 10)
        log.count(log.urllc_errors, (0, Direction.DL), 2)
        log.count(log.rb_allocated, (0, Flow.AI, Direction.UL), 50)
        log.downtime_intervals[(0, Direction.DL)] = [(0.1, 0.2), (0.5, 0.8)]
        stats = window_stats(log, urllc_count=1, ai_count=0, gnb_count=1)
        assert stats.urllc[(0, Direction.DL)].per == pytest.approx(0.2)
        assert stats.urllc[(0, Direction.DL)].mean_downtime_s == pytest.approx(0.2)
        assert stats.mean_rbs[(0, Flow.AI, Direction.UL)] == 5.0
        assert stats.mean_rbs[(0, Flow.URLLC, Direction.UL)] == 0.0

    def test_percentiles_ordered(self):
        """Test p1 <= p5 <= median for random SINR samples."""
        log = WindowLog(start_s=0.0, end_s=1.0)
        for value in np.random.default_rng(5).normal(10.0, 5.0, size=333):
            log.add_sample(log.urllc_sinr, (0, Direction.UL), float(value))
        entry = window_stats(log, 1, 0, 1).urllc[(0, Direction.UL)]
        assert entry.sinr_p1 <= entry.sinr_p5 <= entry.sinr_median


class TestFrames:
    """Test cases for the per-episode tables."""

    def test_iteration_frame(self):
        """Test one row per iteration with selection strings."""
        outcome = IterationOutcome(
            iteration=1, start_s=0.0, selected=(0, 2, 3), downlink_s={}, compute_s={}, uplink_s={},
            server_processing_s=0.01, training_delay_s=2.5, first_n=(2, 3), timeout=False,
        )
        frame = iteration_frame(4, [outcome])
        assert list(frame["m"]) == [3]
        assert frame.loc[0, "selected"] == "0 2 3"
        assert frame.loc[0, "first_n"] == "2 3"
        assert frame.loc[0, "run"] == 4

    def test_availability_frame(self):
        """Test direction values are written as text."""
        frame = availability_frame([(0, 1, 2, Direction.UL, 0.0, 1.0, 0.99)])
        assert frame.loc[0, "direction"] == Direction.UL.value
        assert frame.loc[0, "availability"] == 0.99

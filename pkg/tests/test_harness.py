"""
Unit tests for the experiment harness.
"""

from dataclasses import replace
import json

import numpy as np
import pandas as pd
import pytest

from coexist_twin.bounds import STRONGLY_CONVEX
from coexist_twin.errors import PlanError
from coexist_twin.harness import (
    REPETITION_STRIDE, ExperimentPlan, ResultSet, availability_cdf, comparison_table, five_number_summary,
    m_pmf, parse_mode, run_plan, selection_ratio, summarize,
)
from coexist_twin.scenario import toy_scenario


@pytest.fixture
def config():
    return replace(toy_scenario(0), ai_message_bytes=20_000, t_max_seconds=0.4, episode_length=2)


@pytest.fixture
def perfect_channel(monkeypatch):
    monkeypatch.setattr("coexist_twin.ran_sim.per_from_sinr", lambda sinr, size, mcs=None: 0.0)


def selections_frame():
    rows = [
        ("mixedServ[3]", 0, 1, 0, 1), ("mixedServ[3]", 0, 1, 1, 1), ("mixedServ[3]", 0, 1, 2, 0),
        ("mixedServ[3]", 0, 2, 0, 1), ("mixedServ[3]", 0, 2, 1, 0), ("mixedServ[3]", 0, 2, 2, 0),
    ]
    return pd.DataFrame(rows, columns=["mode", "run", "iteration", "device", "selected"])


class TestExperimentPlan:
    """Test cases for the ExperimentPlan class."""

    def test_parse_mode(self):
        """Test mode labels with and without m."""
        assert parse_mode("mixedServ[15]") == ("mixedServ", 15)
        assert parse_mode("singleURLLC") == ("singleURLLC", None)
        with pytest.raises(PlanError, match="mode must be one of"):
            parse_mode("greedy")
        with pytest.raises(PlanError):
            parse_mode("slicing[x]")

    def test_mode_label(self):
        """Test that m written in the mode is picked up."""
        plan = ExperimentPlan(mode="slicing[3]")
        assert plan.mode == "slicing"
        assert plan.m == 3
        assert plan.label == "slicing[3]"
        assert ExperimentPlan(mode="dRlAgent-train").label == "dRlAgent-train"

    def test_validation(self):
        """Test plan-level errors."""
        with pytest.raises(PlanError, match="disagrees"):
            ExperimentPlan(mode="mixedServ[3]", m=4)
        with pytest.raises(PlanError, match="repetitions"):
            ExperimentPlan(mode="singleURLLC", repetitions=0)
        with pytest.raises(PlanError, match="seeds"):
            ExperimentPlan(mode="singleURLLC", seeds=())
        with pytest.raises(PlanError, match="workers"):
            ExperimentPlan(mode="singleURLLC", workers=0)

    def test_validate_against_scenario(self, config):
        """Test errors that depend on the scenario."""
        with pytest.raises(PlanError, match="needs m"):
            ExperimentPlan(mode="mixedServ").validate(config)
        with pytest.raises(PlanError, match=r"m must be in \[n, N\]"):
            ExperimentPlan(mode="mixedServ[1]").validate(config)
        with pytest.raises(PlanError, match="needs a checkpoint"):
            ExperimentPlan(mode="dRlAgent-eval").validate(config)
        ExperimentPlan(mode="mixedServ[6]").validate(config)

    def test_run_seeds(self):
        """Test that repetitions shift the seeds by a fixed stride."""
        plan = ExperimentPlan(mode="singleURLLC", seeds=(0, 1), repetitions=2)
        assert plan.run_seeds() == [0, 1, REPETITION_STRIDE, REPETITION_STRIDE + 1]

    def test_mode_scenarios(self, config):
        """Test the scenario changes each baseline makes."""
        assert not ExperimentPlan(mode="singleURLLC").scenario(config).ai_traffic_enabled
        assert ExperimentPlan(mode="slicing[3]").scenario(config).slicing_fraction == 0.25
        assert ExperimentPlan(mode="mixedServ[3]").scenario(config) == config


class TestAggregation:
    """Test cases for the plot-ready tables."""

    def test_five_number_summary(self):
        """Test quartiles of 1..5."""
        assert five_number_summary([1, 2, 3, 4, 5]) == (1.0, 2.0, 3.0, 4.0, 5.0)
        with pytest.raises(ValueError, match="empty"):
            five_number_summary([])

    def test_selection_ratio(self):
        """Test per-device selection frequencies."""
        ratio = selection_ratio(selections_frame())
        assert list(ratio["ratio"]) == [1.0, 0.5, 0.0]

    def test_m_pmf(self):
        """Test the PMF of m_k."""
        pmf = m_pmf(selections_frame())
        assert dict(zip(pmf["m"], pmf["probability"])) == {1: 0.5, 2: 0.5}
        assert pmf["probability"].sum() == pytest.approx(1.0)

    def test_availability_cdf(self):
        """Test the empirical CDF of availability samples."""
        frame = pd.DataFrame({"mode": ["a"] * 4, "availability": [1.0, 0.9, 1.0, 0.95]})
        cdf = availability_cdf(frame)
        assert list(cdf["availability"]) == [0.9, 0.95, 1.0]
        assert list(cdf["cdf"]) == [0.25, 0.5, 1.0]

    def test_comparison_table(self):
        """Test the median delay reduction versus a reference mode."""
        iterations = pd.DataFrame({
            "mode": ["dRlAgent-eval"] * 3 + ["mixedServ[6]"] * 3,
            "training_delay_s": [1.0, 2.0, 3.0, 3.0, 4.0, 5.0],
        })
        table = comparison_table(iterations, reference="mixedServ[6]").set_index("mode")
        assert table.loc["dRlAgent-eval", "median_reduction"] == pytest.approx(0.5)
        assert table.loc["mixedServ[6]", "median_reduction"] == 0.0
        assert comparison_table(iterations)["median_reduction"].isna().all()

    def test_summarize_empty(self):
        """Test that an empty result set cannot be summarized."""
        with pytest.raises(ValueError, match="empty result set"):
            summarize(ResultSet())

    def test_merge(self):
        """Test concatenating result sets."""
        part = ResultSet(selections=selections_frame())
        merged = ResultSet.merge([part, part, ResultSet()])
        assert len(merged.selections) == 12
        assert len(merged.availability) == 0


class TestRunPlan:
    """Test cases for executing plans."""

    def test_single_urllc(self, config, tmp_path):
        """Test URLLC-only windows and the written outputs."""
        plan = ExperimentPlan(mode="singleURLLC", window_s=0.05, out=tmp_path)
        results = run_plan(plan, config)
        assert len(results.window_availability) == config.episode_length * config.urllc_count * 2
        assert len(results.availability) == config.urllc_count * 2
        assert results.availability["availability"].between(0.0, 1.0).all()
        assert set(results.availability["mode"]) == {"singleURLLC"}
        assert (tmp_path / "availability.csv").exists()
        assert (tmp_path / "window_availability.csv").exists()
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["plan"]["mode"] == "singleURLLC"
        assert manifest["run_seeds"] == [0]
        assert manifest["config"]["ai_traffic_enabled"] is False
        assert "sinr_range_db" in manifest["state_normalization"]

    def test_one_availability_sample_per_run(self, config):
        """Test that each run contributes one sample per device and direction, spanning all its windows."""
        scenario = replace(config, episode_length=3)
        results = run_plan(ExperimentPlan(mode="singleURLLC", seeds=(0, 1), window_s=0.05), scenario)
        sizes = results.availability.groupby(["run", "device", "direction"]).size()
        assert len(sizes) == 2 * scenario.urllc_count * 2
        assert (sizes == 1).all()
        assert (results.availability["window_start_s"] == 0.0).all()
        assert results.availability["window_end_s"].to_numpy() == pytest.approx(0.15)
        assert (results.availability["iteration"] == 3).all()
        assert len(results.window_availability) == 2 * 3 * scenario.urllc_count * 2

    def test_run_availability_bounds_windows(self, config, perfect_channel):
        """Test that a clean run has full availability in every window and overall."""
        results = run_plan(ExperimentPlan(mode="singleURLLC", window_s=0.05), replace(config, episode_length=2))
        assert (results.window_availability["availability"] == 1.0).all()
        assert (results.availability["availability"] == 1.0).all()

    def test_mixed_service(self, config, tmp_path):
        """Test a random-subset baseline episode."""
        plan = ExperimentPlan(mode="mixedServ[3]", out=tmp_path)
        results = run_plan(plan, replace(config, episode_length=1))
        assert len(results.iterations) == 1
        assert results.iterations["m"].iloc[0] == 3
        assert len(results.selections) == config.big_n
        assert results.selections["selected"].sum() == 3
        assert len(results.rewards) == 1
        assert len(results.availability) == config.urllc_count * 2
        assert len(results.window_availability) == config.urllc_count * 2
        tables = summarize(results, tmp_path / "summary")
        assert (tmp_path / "summary" / "delay_summary.csv").exists()
        assert tables["m_pmf"]["probability"].sum() == pytest.approx(1.0)

    def test_bounds_mode(self, config):
        """Test the Monte Carlo bound rows."""
        plan = ExperimentPlan(mode="bounds", seeds=(0, 1), regime=STRONGLY_CONVEX, bound_iterations=10)
        results = run_plan(plan, config)
        assert len(results.bounds) == 2 * 10
        assert set(results.bounds["n"]) == {1, config.n}
        assert np.all(np.isfinite(results.bounds["empirical"]))
        assert (results.bounds["bound"] > 0).all()

    @pytest.mark.slow
    def test_parallel_matches_serial(self, config):
        """Test that worker processes do not change the results."""
        serial = run_plan(ExperimentPlan(mode="mixedServ[3]", seeds=(0, 1)), config)
        parallel = run_plan(ExperimentPlan(mode="mixedServ[3]", seeds=(0, 1), workers=2), config)
        pd.testing.assert_frame_equal(serial.iterations, parallel.iterations)
        pd.testing.assert_frame_equal(serial.availability, parallel.availability)

    def test_outputs_are_byte_identical(self, config, tmp_path):
        """Test that repeating a run reproduces its CSV files exactly."""
        for name in ("first", "second"):
            run_plan(ExperimentPlan(mode="mixedServ[3]", out=tmp_path / name), replace(config, episode_length=1))
        for csv in ("availability.csv", "window_availability.csv", "iterations.csv", "selections.csv",
                    "rewards.csv"):
            assert (tmp_path / "first" / csv).read_bytes() == (tmp_path / "second" / csv).read_bytes()

    @pytest.mark.slow
    def test_baseline_trends(self, config):
        """Test that selecting everyone is slower than selecting n, and that AI load costs availability."""
        scenario = replace(config, ai_message_bytes=200_000, t_max_seconds=2.0, episode_length=3)
        seeds = (0, 1, 2, 3)
        few = run_plan(ExperimentPlan(mode=f"mixedServ[{scenario.n}]", seeds=seeds), scenario)
        many = run_plan(ExperimentPlan(mode=f"mixedServ[{scenario.big_n}]", seeds=seeds), scenario)
        alone = run_plan(ExperimentPlan(mode="singleURLLC", seeds=seeds, window_s=2.0), scenario)
        assert few.iterations["training_delay_s"].median() <= many.iterations["training_delay_s"].median()
        assert alone.availability["availability"].mean() >= many.availability["availability"].mean()

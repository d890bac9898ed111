"""
Unit tests for the scenario module.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from coexist_twin.errors import ConfigError
from coexist_twin.scenario import (
    PRESETS, AgentHyperparams, Direction, DirectionPair, LearningTaskConfig, RadioParams, RewardWeights,
    ScenarioConfig, UrllcProfile, derive_rng, desk_scenario, load_scenario, save_scenario,
    scenario_from_dict, toy_scenario,
)


def minimal(**overrides):
    data = {"urllc_devices": [{"initial_position": [5.0, 5.0, 1.5]}]}
    data.update(overrides)
    return data


class TestScenarioConfig:
    """Test cases for the ScenarioConfig class."""

    def test_defaults(self):
        """Test the factory-hall defaults."""
        config = ScenarioConfig(urllc_devices=(UrllcProfile(initial_position=(1.0, 1.0, 1.5)),))
        assert config.big_n == 50
        assert config.n == 15
        assert config.t_max_seconds == 10.0
        assert config.reward_weights == RewardWeights(0.5, 100.0)
        assert config.survival_time_s[Direction.UL] == 0.006
        assert config.delay_bounds[Direction.DL] == 0.004
        assert config.gnb_count == 4
        assert config.radio.rb_count == 106

    def test_n_zero(self):
        """Test that n=0 names the offending field."""
        with pytest.raises(ConfigError, match="n must be ≥ 1") as info:
            scenario_from_dict(minimal(required_updates=0))
        assert info.value.field == "required_updates"

    def test_n_above_big_n(self):
        """Test that n > N is rejected."""
        with pytest.raises(ConfigError, match="n ≤ N violated"):
            scenario_from_dict(minimal(ai_device_count=15, required_updates=16))

    def test_negative_seed(self):
        """Test that a negative master seed is a configuration error."""
        with pytest.raises(ConfigError, match="rng_seed must be >= 0") as info:
            scenario_from_dict(minimal(rng_seed=-1))
        assert info.value.field == "rng_seed"
        assert scenario_from_dict(minimal(rng_seed=0)).rng_seed == 0

    def test_position_outside_hall(self):
        """Test that devices must lie inside the hall."""
        with pytest.raises(ConfigError, match="outside the hall"):
            scenario_from_dict({"urllc_devices": [{"initial_position": [50.0, 5.0, 1.5]}]})

    def test_upsilon_range(self):
        """Test reward weight validation."""
        with pytest.raises(ConfigError, match="upsilon must be in"):
            scenario_from_dict(minimal(reward_weights={"upsilon": 1.5}))

    def test_delay_bound_positive(self):
        """Test per-direction delay bound validation."""
        with pytest.raises(ConfigError, match="delay_bounds must be positive"):
            scenario_from_dict(minimal(delay_bounds={"ul": 0.006, "dl": 0.0}))

    def test_unknown_key(self):
        """Test that unknown keys are rejected, also in nested objects."""
        with pytest.raises(ConfigError, match="unknown key"):
            scenario_from_dict(minimal(colour="red"))
        with pytest.raises(ConfigError, match="unknown key") as info:
            scenario_from_dict(minimal(agent={"discount": 0.1, "gamma": 0.9}))
        assert info.value.field == "agent.gamma"

    def test_missing_devices(self):
        """Test that urllc_devices is required."""
        with pytest.raises(ConfigError, match="urllc_devices is required"):
            scenario_from_dict({"ai_device_count": 5})

    def test_nested_validation(self):
        """Test that nested dataclasses validate on load."""
        with pytest.raises(ConfigError, match="packet_period_s must be positive"):
            scenario_from_dict({"urllc_devices": [{"initial_position": [1, 1, 1], "packet_period_s": 0}]})
        with pytest.raises(ConfigError, match="soft_update must be in"):
            scenario_from_dict(minimal(agent={"soft_update": 0.0}))
        with pytest.raises(ConfigError, match="kind must be one of"):
            scenario_from_dict(minimal(learning={"kind": "cubic"}))

    def test_with_seed(self):
        """Test replacing the root seed."""
        config = desk_scenario(3).with_seed(9)
        assert config.rng_seed == 9
        assert config.big_n == 12


class TestScenarioFiles:
    """Test cases for loading and saving JSON scenarios."""

    def test_load_minimal(self, tmp_path):
        """Test loading a minimal file with N=50, n=15."""
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(minimal(ai_device_count=50, required_updates=15)))
        config = load_scenario(path)
        assert config.big_n == 50
        assert config.n == 15
        assert config.urllc_devices[0].initial_position == (5.0, 5.0, 1.5)

    def test_malformed_file(self, tmp_path):
        """Test that a parse error surfaces as a ConfigError."""
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="cannot parse"):
            load_scenario(path)

    def test_round_trip(self, tmp_path):
        """Test that save then load yields an equal scenario."""
        original = ScenarioConfig(
            urllc_devices=(UrllcProfile(initial_position=(3.0, 4.0, 1.5), direction_policy="fixed"),),
            ai_device_count=8,
            required_updates=3,
            ai_positions=tuple((float(i), 2.0, 1.5) for i in range(8)),
            radio=RadioParams(noise_figure_db=7.0),
            learning=LearningTaskConfig(kind="fl", local_epochs=3),
            agent=AgentHyperparams(hidden_sizes=(32, 16), target_entropy=-4.0),
            survival_time_s=DirectionPair(ul=0.008, dl=0.006),
            rng_seed=42,
        )
        path = tmp_path / "scenario.json"
        save_scenario(original, path)
        assert load_scenario(path) == original

    def test_presets_round_trip(self, tmp_path):
        """Test that every preset survives serialization."""
        for name, factory in PRESETS.items():
            config = factory(1)
            path = tmp_path / f"{name}.json"
            save_scenario(config, path)
            assert load_scenario(path) == config

    def test_documented_example(self):
        """Test that the example file in docs/ loads."""
        path = Path(__file__).resolve().parent.parent / "docs" / "example_scenario.json"
        config = load_scenario(path)
        assert (config.n, config.big_n, config.urllc_count) == (4, 12, 3)
        assert config.urllc_devices[1].direction_policy == "fixed"
        assert config.learning.sigma2 == 0.5


class TestDeriveRng:
    """Test cases for the labeled RNG hierarchy."""

    def test_same_label_same_stream(self):
        """Test determinism of a (seed, label) pair."""
        a = derive_rng(7, "channel").random(100)
        b = derive_rng(7, "channel").random(100)
        np.testing.assert_array_equal(a, b)

    def test_label_separation(self):
        """Test that labels give different streams."""
        assert derive_rng(7, "channel").random() != derive_rng(7, "traffic").random()

    def test_seed_separation(self):
        """Test that seeds give different streams."""
        assert derive_rng(7, "x").random() != derive_rng(8, "x").random()

    def test_config_seed(self):
        """Test that a config and its bare seed derive the same stream."""
        config = toy_scenario(5)
        assert derive_rng(config, "replay").random() == derive_rng(5, "replay").random()

"""
Unit tests for the agent module.
"""

from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from coexist_twin.agent import (
    TRAINING_COLUMNS, RandomSubsetPolicy, Trainer, UniformActionPolicy, evaluate_agent, load_agent,
    run_episode, selection_counts, train_agent,
)
from coexist_twin.environment import CoexistenceEnv, ToyCoexistenceEnv
from coexist_twin.scenario import AgentHyperparams, toy_scenario

SMALL_AGENT = AgentHyperparams(hidden_sizes=(16, 16), minibatch_size=8, min_buffer_fill=8, train_every=1,
                               gradient_steps=1, replay_capacity=1000)


@pytest.fixture
def env():
    return ToyCoexistenceEnv(replace(toy_scenario(0), agent=SMALL_AGENT))


@pytest.fixture
def trainer(env):
    return Trainer.create(env.state_dim, env.action_dim, env.config.agent, seed=0)


class TestPolicies:
    """Test cases for the baseline policies."""

    def test_random_subset(self):
        """Test that exactly m devices get a positive action."""
        policy = RandomSubsetPolicy(6, 3, np.random.default_rng(0))
        for _ in range(20):
            action, _ = policy.act(np.zeros(8))
            assert np.count_nonzero(action > 0) == 3

    def test_random_subset_bounds(self):
        """Test m validation."""
        with pytest.raises(ValueError, match="m must be in"):
            RandomSubsetPolicy(6, 7, np.random.default_rng(0))

    def test_uniform_actions(self):
        """Test the uniform action range."""
        action, _ = UniformActionPolicy(6, np.random.default_rng(0)).act(np.zeros(8))
        assert action.shape == (6,)
        assert np.all(np.abs(action) <= 1.0)


class TestRunEpisode:
    """Test cases for the episode loop."""

    def test_evaluate_stores_nothing(self, env, trainer):
        """Test that evaluation leaves the buffer and the agent alone."""
        trace = run_episode(env, trainer.agent, "evaluate")
        assert trace.iterations == env.episode_length
        assert trace.stored == 0
        assert len(trainer.buffer) == 0
        assert trainer.agent.train_steps == 0
        assert not trace.converged

    def test_train_stores_every_transition(self, env, trainer):
        """Test that every iteration is stored and training starts once the buffer is filled."""
        trace = run_episode(env, trainer.agent, "train", trainer)
        assert trace.stored == trace.iterations == env.episode_length
        assert len(trainer.buffer) == env.episode_length
        assert trainer.agent.train_steps == env.episode_length - SMALL_AGENT.min_buffer_fill + 1
        assert sum(report is not None for report in trace.losses) == trainer.agent.train_steps

    def test_mode_errors(self, env, trainer):
        """Test mode validation."""
        with pytest.raises(ValueError, match="mode must be one of"):
            run_episode(env, trainer.agent, "explore")
        with pytest.raises(ValueError, match="needs a trainer"):
            run_episode(env, trainer.agent, "train")

    def test_selection_counts(self, env):
        """Test the histogram of selected devices per iteration."""
        policy = RandomSubsetPolicy(6, 3, np.random.default_rng(1))
        traces = [run_episode(env, policy) for _ in range(2)]
        assert selection_counts(traces) == {3: 2 * env.episode_length}

    def test_train_every(self, env):
        """Test that gradient steps follow the training cadence."""
        hyper = replace(SMALL_AGENT, train_every=5, gradient_steps=3, min_buffer_fill=1)
        trainer = Trainer.create(env.state_dim, env.action_dim, hyper, seed=0)
        run_episode(env, trainer.agent, "train", trainer)
        assert trainer.agent.train_steps == (env.episode_length // 5) * 3


class TestTraining:
    """Test cases for the training loop and checkpoints."""

    def test_train_agent_outputs(self, env, trainer, tmp_path):
        """Test the training curve and the checkpoint files."""
        traces, curve = train_agent(env, trainer, [0, 1], tmp_path, checkpoint_every=1)
        assert len(traces) == 2
        assert list(curve.columns) == TRAINING_COLUMNS
        assert len(curve) == 2 * env.episode_length
        assert list(curve["iteration"]) == list(range(1, 2 * env.episode_length + 1))
        written = pd.read_csv(tmp_path / "training.csv")
        assert len(written) == len(curve)
        assert written["critic_loss"].isna().sum() == 0
        for name in ("episode_1.npz", "episode_2.npz", "final.npz"):
            assert (tmp_path / "checkpoints" / name).exists()

    def test_load_agent(self, env, trainer, tmp_path):
        """Test that a saved agent evaluates like the original."""
        train_agent(env, trainer, [0], tmp_path)
        agent = load_agent(tmp_path / "checkpoints" / "final.npz", env.state_dim, env.action_dim,
                           env.config.agent, seed=3)
        assert agent.actor.distance(trainer.agent.actor) == 0.0
        original = evaluate_agent(env, trainer.agent, [0])
        restored = evaluate_agent(env, agent, [0])
        assert original[0].rewards == restored[0].rewards

    def test_no_output_directory(self, env, trainer):
        """Test training purely in memory."""
        traces, curve = train_agent(env, trainer, [0])
        assert len(curve) == traces[0].iterations

    @pytest.mark.slow
    def test_learns_toy_selection(self):
        """Test that 20k training iterations get close to the best fixed selection."""
        env = ToyCoexistenceEnv(toy_scenario(0))
        trainer = Trainer.create(env.state_dim, env.action_dim, env.config.agent, seed=0)
        train_agent(env, trainer, list(range(2000)))
        evaluation = evaluate_agent(env, trainer.agent, range(5))
        learned = float(np.mean([t.mean_reward for t in evaluation]))
        baseline = env.random_policy_reward(np.random.default_rng(0))
        assert learned >= 0.9 * env.best_fixed_selection()[1]
        assert learned >= 1.2 * baseline

    @pytest.mark.slow
    def test_trains_on_network_simulation(self):
        """Test that SAC trains end to end on the simulator-backed environment."""
        config = replace(toy_scenario(0), agent=SMALL_AGENT, ai_message_bytes=20_000, t_max_seconds=0.4,
                         episode_length=4)
        env = CoexistenceEnv(config)
        trainer = Trainer.create(env.state_dim, env.action_dim, config.agent, seed=0)
        before = trainer.agent.actor.get_flat()
        traces, curve = train_agent(env, trainer, list(range(12)))
        assert sum(t.stored for t in traces) == len(curve) == len(trainer.buffer)
        assert trainer.last_loss is not None
        assert all(np.isfinite(v) for v in trainer.last_loss.to_dict().values())
        assert np.isfinite(curve["critic_loss"].iloc[-1])
        assert not np.allclose(before, trainer.agent.actor.get_flat())

        evaluation = evaluate_agent(env, trainer.agent, [100, 101])
        for trace in evaluation:
            assert np.all(np.isfinite(trace.rewards))
            assert all(int(s.sum()) >= config.n for s in trace.selections)

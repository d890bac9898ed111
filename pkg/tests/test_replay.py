"""
Unit tests for the replay module.
"""

import numpy as np
import pytest

from coexist_twin.replay import PrioritizedReplayBuffer, SumTree, Transition


def transition(value, state_dim=2, action_dim=3):
    return Transition(np.full(state_dim, value), np.full(action_dim, value), value,
                      np.full(state_dim, value + 1.0), 1.0)


def buffer_of(count, capacity=100, **kwargs):
    buf = PrioritizedReplayBuffer(capacity, 2, 3, np.random.default_rng(0), **kwargs)
    for i in range(count):
        buf.add(transition(float(i)))
    return buf


class TestSumTree:
    """Test cases for the SumTree class."""

    def test_total_and_lookup(self):
        """Test sums and prefix lookups."""
        tree = SumTree(4)
        for i, value in enumerate([1.0, 2.0, 0.0, 3.0]):
            tree.update(i, value)
        assert tree.total == 6.0
        assert tree.get(0.5) == 0
        assert tree.get(2.5) == 1
        assert tree.get(3.5) == 3
        assert tree.get(5.9) == 3

    def test_any_size_is_proportional(self):
        """Test that lookups follow the leaf values for a size that is not a power of two."""
        values = np.array([1.0, 2.0, 0.0, 3.0, 4.0])
        tree = SumTree(5)
        for i, value in enumerate(values):
            tree.update(i, value)
        assert tree.total == 10.0
        draws = np.random.default_rng(0).uniform(0.0, tree.total, size=20_000)
        counts = np.bincount([tree.get(c) for c in draws], minlength=5)
        assert counts[2] == 0
        np.testing.assert_allclose(counts / counts.sum(), values / values.sum(), atol=0.01)

    def test_update_replaces(self):
        """Test that updating a leaf replaces its value."""
        tree = SumTree(3)
        tree.update(1, 5.0)
        tree.update(1, 2.0)
        assert tree.total == 2.0

    def test_invalid_size(self):
        """Test size validation."""
        with pytest.raises(ValueError, match="size must be >= 1"):
            SumTree(0)


class TestPrioritizedReplayBuffer:
    """Test cases for the PrioritizedReplayBuffer class."""

    def test_add_and_sample(self):
        """Test that sampled rows are consistent transitions."""
        buf = buffer_of(10)
        batch = buf.sample(8)
        assert len(batch) == 8
        np.testing.assert_array_equal(batch.states[:, 0], batch.rewards)
        np.testing.assert_array_equal(batch.next_states[:, 0], batch.rewards + 1.0)
        assert np.all(batch.not_done == 1.0)

    def test_ring_overwrite(self):
        """Test that the oldest transition is overwritten at capacity."""
        buf = buffer_of(7, capacity=5)
        assert len(buf) == 5
        assert buf._rewards[0] == 5.0
        assert buf._rewards[1] == 6.0

    def test_storage_growth(self):
        """Test storage beyond the initial allocation."""
        buf = buffer_of(1500, capacity=3000)
        assert len(buf) == 1500
        assert buf._rewards[1499] == 1499.0

    def test_empty(self):
        """Test that an empty buffer cannot be sampled."""
        with pytest.raises(ValueError, match="empty replay buffer"):
            buffer_of(0).sample(4)

    def test_sampling_follows_priorities(self):
        """Test that sampling frequencies follow priority^alpha."""
        buf = buffer_of(4, alpha=0.6, eps=0.0)
        buf.update_priorities([0, 1, 2, 3], [1.0, 2.0, 3.0, 4.0])
        expected = np.array([1.0, 2.0, 3.0, 4.0]) ** 0.6
        expected /= expected.sum()
        np.testing.assert_allclose(buf.probabilities(), expected)
        counts = np.zeros(4)
        for _ in range(1000):
            counts += np.bincount(buf.sample(32).indices, minlength=4)
        np.testing.assert_allclose(counts / counts.sum(), expected, atol=0.01)

    def test_importance_weights(self):
        """Test weights (N P_i)^-beta normalized by their maximum."""
        buf = buffer_of(3, alpha=1.0, beta=0.5, eps=0.0)
        buf.update_priorities([0, 1, 2], [1.0, 2.0, 4.0])
        weights = buf._weights(np.array([0, 1, 2]))
        np.testing.assert_allclose(weights, [1.0, 2.0 ** -0.5, 4.0 ** -0.5])
        assert buf.sample(16).weights.max() <= 1.0

    def test_new_transitions_get_max_priority(self):
        """Test that fresh transitions enter at the largest priority seen."""
        buf = buffer_of(2, alpha=1.0, eps=0.0)
        buf.update_priorities([0], [5.0])
        buf.add(transition(9.0))
        assert buf.tree.leaves[2] == pytest.approx(5.0)

    def test_uniform_mode(self):
        """Test that uniform replay has unit weights."""
        buf = buffer_of(10, prioritized=False)
        batch = buf.sample(64)
        assert np.all(batch.weights == 1.0)
        assert batch.indices.max() < 10

"""
Replay module for Coexist Twin.

Sum tree and the prioritized replay buffer feeding the SAC learner. Priorities are
|TD error| + eps raised to alpha; sampling is stratified over the priority mass and
every sample carries the importance weight (N P(i))^-beta / max_j (N P(j))^-beta.
"""

from dataclasses import dataclass
from typing import Optional, Sequence
import logging

import numpy as np

logger = logging.getLogger(__name__)


class SumTree:
    """
    Array-backed binary tree whose parents hold the sum of their children.

    Leaves live at indices [size - 1, 2 size - 1); works for any size >= 1.
    """

    def __init__(self, size: int):
        if size < 1:
            raise ValueError(f"size must be >= 1, got {size}")
        self.size = size
        self.nodes = np.zeros(2 * size - 1)

    @property
    def total(self) -> float:
        return float(self.nodes[0])

    @property
    def leaves(self) -> np.ndarray:
        return self.nodes[self.size - 1:]

    def update(self, data_idx: int, value: float) -> None:
        idx = data_idx + self.size - 1
        change = value - self.nodes[idx]
        self.nodes[idx] = value
        while idx > 0:
            idx = (idx - 1) // 2
            self.nodes[idx] += change

    def get(self, cumsum: float) -> int:
        """Data index whose cumulative-priority interval contains cumsum."""
        idx = 0
        last = len(self.nodes)
        while 2 * idx + 1 < last:
            left = 2 * idx + 1
            if cumsum <= self.nodes[left] or self.nodes[left + 1] <= 0.0:
                idx = left
            else:
                cumsum -= self.nodes[left]
                idx = left + 1
        return idx - self.size + 1

    def __repr__(self) -> str:
        return f"SumTree(size={self.size}, total={self.total:.6g})"


@dataclass
class Transition:
    """One (s, a, r, s', I) record."""
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    not_done: float


@dataclass
class Batch:
    indices: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    not_done: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


class PrioritizedReplayBuffer:
    """
    Ring buffer of transitions with proportional prioritization.

    With prioritized=False it samples uniformly and all weights are 1.

    Args:
        capacity: Maximum number of transitions
        state_dim: State vector length
        action_dim: Action vector length
        rng: Sampling stream
        alpha: Priority exponent
        beta: Importance-sampling exponent
        eps: Added to |TD error| so that no transition starves
        prioritized: Proportional prioritization or uniform replay
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int, rng: np.random.Generator,
                 alpha: float = 0.6, beta: float = 0.4, eps: float = 1e-6, prioritized: bool = True):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.rng = rng
        self.alpha = alpha
        self.beta = beta
        self.eps = eps
        self.prioritized = prioritized
        self.tree = SumTree(capacity)
        self.max_priority = 1.0
        self.count = 0
        self.real_size = 0
        allocated = min(capacity, 1024)
        self._states = np.zeros((allocated, state_dim))
        self._actions = np.zeros((allocated, action_dim))
        self._rewards = np.zeros(allocated)
        self._next_states = np.zeros((allocated, state_dim))
        self._not_done = np.zeros(allocated)

    def __len__(self) -> int:
        return self.real_size

    def _ensure(self, index: int) -> None:
        """Grow storage by doubling, up to capacity."""
        allocated = len(self._rewards)
        if index < allocated:
            return
        new = min(self.capacity, max(2 * allocated, index + 1))
        grow = new - allocated
        self._states = np.concatenate([self._states, np.zeros((grow, self.state_dim))])
        self._actions = np.concatenate([self._actions, np.zeros((grow, self.action_dim))])
        self._rewards = np.concatenate([self._rewards, np.zeros(grow)])
        self._next_states = np.concatenate([self._next_states, np.zeros((grow, self.state_dim))])
        self._not_done = np.concatenate([self._not_done, np.zeros(grow)])

    def add(self, transition: Transition) -> int:
        """Store with the current maximum priority; returns the slot used."""
        index = self.count
        self._ensure(index)
        self._states[index] = transition.state
        self._actions[index] = transition.action
        self._rewards[index] = transition.reward
        self._next_states[index] = transition.next_state
        self._not_done[index] = transition.not_done
        self.tree.update(index, self.max_priority ** self.alpha)
        self.count = (self.count + 1) % self.capacity
        self.real_size = min(self.capacity, self.real_size + 1)
        return index

    def sample(self, batch_size: int) -> Batch:
        if self.real_size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        if not self.prioritized:
            indices = self.rng.integers(0, self.real_size, size=batch_size)
            weights = np.ones(batch_size)
        else:
            indices = self._sample_proportional(batch_size)
            weights = self._weights(indices)
        return Batch(
            indices=indices,
            states=self._states[indices],
            actions=self._actions[indices],
            rewards=self._rewards[indices],
            next_states=self._next_states[indices],
            not_done=self._not_done[indices],
            weights=weights,
        )

    def _sample_proportional(self, batch_size: int) -> np.ndarray:
        total = self.tree.total
        segment = total / batch_size
        targets = (np.arange(batch_size) + self.rng.random(batch_size)) * segment
        indices = np.array([self.tree.get(min(t, total)) for t in targets], dtype=int)
        return np.minimum(indices, self.real_size - 1)

    def probabilities(self, indices: Optional[Sequence[int]] = None) -> np.ndarray:
        leaves = self.tree.leaves[: self.real_size]
        probs = leaves / leaves.sum()
        return probs if indices is None else probs[np.asarray(indices)]

    def _weights(self, indices: np.ndarray) -> np.ndarray:
        leaves = self.tree.leaves[: self.real_size]
        total = leaves.sum()
        p_min = leaves.min() / total
        max_weight = (p_min * self.real_size) ** (-self.beta)
        p_sample = leaves[indices] / total
        return (p_sample * self.real_size) ** (-self.beta) / max_weight

    def update_priorities(self, indices: Sequence[int], td_errors: Sequence[float]) -> None:
        priorities = np.abs(np.asarray(td_errors, dtype=float)) + self.eps
        for index, priority in zip(np.asarray(indices), priorities):
            self.tree.update(int(index), float(priority) ** self.alpha)
        self.max_priority = max(self.max_priority, float(priorities.max(initial=0.0)))

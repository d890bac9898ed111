"""
Neural network module for Coexist Twin.

A small fully connected network with rectified-linear hidden layers and hand-written
reverse-mode gradients, plus the Adam optimizer with global-norm clipping. Inputs
are row batches of shape (batch, features); everything is float64.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple
import logging

import numpy as np

logger = logging.getLogger(__name__)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(z: np.ndarray) -> np.ndarray:
    return (z > 0.0).astype(float)


class MLP:
    """
    Feed-forward network input -> hidden ... -> output.

    forward returns the output and the activations needed by backward, so several
    forward passes can be in flight at once.

    Args:
        sizes: Layer widths including input and output
        rng: Initialization stream
        output_init: Half-width of the uniform init of the last layer
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, output_init: float = 3e-3):
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError(f"sizes must list at least two positive widths, got {list(sizes)}")
        self.sizes = tuple(int(s) for s in sizes)
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if i == len(self.sizes) - 2:
                W = rng.uniform(-output_init, output_init, size=(fan_in, fan_out))
            else:
                W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            self.weights.append(W)
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> List[np.ndarray]:
        """Weights and biases interleaved: [W0, b0, W1, b1, ...]."""
        out: List[np.ndarray] = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        """Output and the memory for backward (layer inputs and pre-activations)."""
        a = np.atleast_2d(x)
        memory = [a]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            if i < last:
                memory.append(z)
                a = relu(z)
                memory.append(a)
            else:
                a = z
        return a, memory

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, dy: np.ndarray, memory: List[np.ndarray]) -> Tuple[List[np.ndarray], np.ndarray]:
        """
        Gradients of sum(dy * output) with respect to every parameter and the input.

        Returns:
            (grads aligned with params, gradient with respect to the input batch)
        """
        grads: List[np.ndarray] = [np.empty(0)] * (2 * len(self.weights))
        delta = np.atleast_2d(dy)
        for i in range(len(self.weights) - 1, -1, -1):
            a_in = memory[2 * i]
            grads[2 * i] = a_in.T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
            if i > 0:
                delta = delta * relu_grad(memory[2 * i - 1])
        return grads, delta

    def copy(self) -> "MLP":
        clone = MLP.__new__(MLP)
        clone.sizes = self.sizes
        clone.weights = [W.copy() for W in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def soft_update_from(self, online: "MLP", nu: float) -> None:
        """theta_target <- nu * theta_online + (1 - nu) * theta_target, in place."""
        for target, source in zip(self.params, online.params):
            target *= 1.0 - nu
            target += nu * source

    def distance(self, other: "MLP") -> float:
        return float(np.sqrt(sum(np.sum((p - q) ** 2) for p, q in zip(self.params, other.params))))

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for p in self.params:
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size

    def state_dict(self, prefix: str) -> Dict[str, np.ndarray]:
        state = {f"{prefix}.sizes": np.asarray(self.sizes)}
        for i, p in enumerate(self.params):
            state[f"{prefix}.{i}"] = p
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], prefix: str) -> None:
        sizes = tuple(int(s) for s in state[f"{prefix}.sizes"])
        if sizes != self.sizes:
            raise ValueError(f"{prefix}: checkpoint layer sizes {sizes} do not match {self.sizes}")
        for i, p in enumerate(self.params):
            p[...] = state[f"{prefix}.{i}"]


def clip_by_global_norm(grads: List[np.ndarray], max_norm: float) -> Tuple[List[np.ndarray], float]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads, norm


@dataclass
class Adam:
    """Adaptive moment estimation over a fixed list of parameter arrays."""
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float = 10.0
    t: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> float:
        """Descend one step in place; returns the pre-clip gradient norm."""
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        grads, norm = clip_by_global_norm(grads, self.max_grad_norm)
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
        return norm

    def state_dict(self, prefix: str) -> Dict[str, np.ndarray]:
        state = {f"{prefix}.t": np.asarray(self.t)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            state[f"{prefix}.m{i}"] = m
            state[f"{prefix}.v{i}"] = v
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], prefix: str, params: List[np.ndarray]) -> None:
        self.t = int(state[f"{prefix}.t"])
        if self.t == 0:
            self.m, self.v = [], []
            return
        self.m = [state[f"{prefix}.m{i}"].copy() for i in range(len(params))]
        self.v = [state[f"{prefix}.v{i}"].copy() for i in range(len(params))]

"""
Soft actor-critic module for Coexist Twin.

Twin critics with target copies, a squashed-Gaussian actor with a target copy,
automatic or fixed entropy temperature, and prioritized replay with importance
weights on the critic loss. All gradients are computed by hand on top of nn.MLP.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union
import logging
import math

import numpy as np

from .nn import MLP, Adam
from .replay import PrioritizedReplayBuffer
from .scenario import AgentHyperparams

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)


def log1m_tanh2(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2) without cancellation for large |u|."""
    return 2.0 * (LOG_2 - u - np.logaddexp(0.0, -2.0 * u))


def squashed_log_prob(u: np.ndarray, chi: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """log pi(tanh(u)) for u = mean + std * chi, summed over action components."""
    return np.sum(-0.5 * chi * chi - log_std - 0.5 * LOG_2PI - log1m_tanh2(u), axis=1)


def policy_stats(actor: MLP, states: np.ndarray, log_std_min: float, log_std_max: float):
    """Mean, clamped log-std, raw log-std and forward memory of the actor."""
    out, memory = actor.forward(states)
    half = out.shape[1] // 2
    raw = out[:, half:]
    return out[:, :half], np.clip(raw, log_std_min, log_std_max), raw, memory


def sample_action(actor: MLP, states: np.ndarray, mode: str, rng: Optional[np.random.Generator] = None,
                  log_std_min: float = -20.0, log_std_max: float = 2.0,
                  chi: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw actions from the squashed Gaussian policy.

    Args:
        actor: Policy network (outputs mean and log-std per action component)
        states: (batch, state_dim) or a single state
        mode: "stochastic" or "deterministic"
        rng: Exploration stream (stochastic mode without chi)
        chi: Standard-normal draws to use instead of rng

    Returns:
        (actions in (-1, 1), log-probabilities per row)
    """
    mean, log_std, _, _ = policy_stats(actor, np.atleast_2d(states), log_std_min, log_std_max)
    if mode == "deterministic":
        chi = np.zeros_like(mean)
    elif mode == "stochastic":
        if chi is None:
            if rng is None:
                raise ValueError("stochastic sampling needs an rng or chi")
            chi = rng.standard_normal(mean.shape)
    else:
        raise ValueError(f"mode must be one of: stochastic, deterministic, got {mode}")
    u = mean + np.exp(log_std) * chi
    return np.tanh(u), squashed_log_prob(u, chi, log_std)


@dataclass
class LossReport:
    """Losses of one gradient step."""
    critic_loss: float
    actor_loss: float
    entropy: float
    temperature: float
    temperature_loss: float = 0.0

    def to_dict(self) -> Dict[str, float]:
        return {
            "critic_loss": self.critic_loss,
            "actor_loss": self.actor_loss,
            "entropy": self.entropy,
            "temperature": self.temperature,
        }


class SacAgent:
    """
    Soft actor-critic learner for the device-selection MDP.

    Args:
        state_dim: State vector length
        action_dim: N, one output per AI device
        hyper: Agent hyperparameters
        init_rng: Weight initialization stream
        explore_rng: Action sampling stream
        verbose: Log training steps at DEBUG level
    """

    def __init__(self, state_dim: int, action_dim: int, hyper: AgentHyperparams,
                 init_rng: np.random.Generator, explore_rng: np.random.Generator, verbose: bool = False):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.hyper = hyper
        self.explore_rng = explore_rng
        self.verbose = verbose
        hidden = list(hyper.hidden_sizes)
        self.actor = MLP([state_dim] + hidden + [2 * action_dim], init_rng)
        self.critics = [MLP([state_dim + action_dim] + hidden + [1], init_rng) for _ in range(2)]
        self.actor_target = self.actor.copy()
        self.critic_targets = [c.copy() for c in self.critics]
        self.actor_opt = Adam(lr=hyper.learning_rate, max_grad_norm=hyper.grad_clip)
        self.critic_opts = [Adam(lr=hyper.learning_rate, max_grad_norm=hyper.grad_clip) for _ in range(2)]
        self.log_temperature = np.array([math.log(hyper.initial_temperature)])
        self.temperature_opt = Adam(lr=hyper.learning_rate, max_grad_norm=0.0)
        self.target_entropy = float(-action_dim if hyper.target_entropy is None else hyper.target_entropy)
        self.train_steps = 0

    @property
    def temperature(self) -> float:
        """psi."""
        return float(math.exp(self.log_temperature[0]))

    def act(self, state: np.ndarray, mode: str = "stochastic") -> Tuple[np.ndarray, float]:
        actions, log_prob = sample_action(self.actor, state, mode, self.explore_rng,
                                          self.hyper.log_std_min, self.hyper.log_std_max)
        return actions[0], float(log_prob[0])

    def q_values(self, states: np.ndarray, actions: np.ndarray, target: bool = False) -> List[np.ndarray]:
        nets = self.critic_targets if target else self.critics
        sa = np.hstack([np.atleast_2d(states), np.atleast_2d(actions)])
        return [net(sa)[:, 0] for net in nets]

    # --- losses --------------------------------------------------------------

    def critic_loss_and_grads(self, index: int, states: np.ndarray, actions: np.ndarray,
                              targets: np.ndarray, weights: np.ndarray) -> Tuple[float, List[np.ndarray], np.ndarray]:
        """1/2 mean(w (Q_i(s, a) - y)^2), its parameter gradients and the TD errors."""
        critic = self.critics[index]
        q, memory = critic.forward(np.hstack([states, actions]))
        td = q[:, 0] - targets
        batch = len(targets)
        loss = 0.5 * float(np.mean(weights * td * td))
        grads, _ = critic.backward((weights * td / batch)[:, None], memory)
        return loss, grads, td

    def actor_loss_and_grads(self, states: np.ndarray, chi: np.ndarray) -> Tuple[float, List[np.ndarray], np.ndarray]:
        """
        mean(psi log pi(a|s) - min_i Q_i(s, a)) with reparameterized a = tanh(mean + std chi).

        Returns:
            (loss, actor parameter gradients, log-probabilities)
        """
        h = self.hyper
        psi = self.temperature
        mean, log_std, raw, memory = policy_stats(self.actor, states, h.log_std_min, h.log_std_max)
        std = np.exp(log_std)
        u = mean + std * chi
        a = np.tanh(u)
        log_prob = squashed_log_prob(u, chi, log_std)
        sa = np.hstack([states, a])
        q1, mem1 = self.critics[0].forward(sa)
        q2, mem2 = self.critics[1].forward(sa)
        use_first = (q1[:, 0] <= q2[:, 0])[:, None].astype(float)
        q_min = np.where(use_first[:, 0] > 0, q1[:, 0], q2[:, 0])
        loss = float(np.mean(psi * log_prob - q_min))

        _, dsa1 = self.critics[0].backward(use_first, mem1)
        _, dsa2 = self.critics[1].backward(1.0 - use_first, mem2)
        dq_da = (dsa1 + dsa2)[:, self.state_dim:]
        batch = len(states)
        dq_du = dq_da * (1.0 - a * a)
        d_mean = (psi * 2.0 * a - dq_du) / batch
        d_log_std = (psi * (-1.0 + 2.0 * a * std * chi) - dq_du * std * chi) / batch
        inside = ((raw >= h.log_std_min) & (raw <= h.log_std_max)).astype(float)
        grads, _ = self.actor.backward(np.hstack([d_mean, d_log_std * inside]), memory)
        return loss, grads, log_prob

    # --- updates -------------------------------------------------------------

    def soft_update(self) -> None:
        nu = self.hyper.soft_update
        for target, online in zip(self.critic_targets, self.critics):
            target.soft_update_from(online, nu)
        self.actor_target.soft_update_from(self.actor, nu)

    def update_temperature(self, log_prob: np.ndarray) -> float:
        """Gradient step on log psi toward the target entropy; returns the temperature loss."""
        if self.hyper.temperature_mode != "auto":
            return 0.0
        gap = log_prob + self.target_entropy
        loss = -float(np.mean(self.log_temperature[0] * gap))
        self.temperature_opt.step([self.log_temperature], [np.array([-float(np.mean(gap))])])
        return loss

    # --- checkpoints ---------------------------------------------------------

    def state_dict(self) -> Dict[str, np.ndarray]:
        state: Dict[str, np.ndarray] = {
            "version": np.asarray(CHECKPOINT_VERSION),
            "state_dim": np.asarray(self.state_dim),
            "action_dim": np.asarray(self.action_dim),
            "log_temperature": self.log_temperature.copy(),
            "train_steps": np.asarray(self.train_steps),
        }
        state.update(self.actor.state_dict("actor"))
        state.update(self.actor_target.state_dict("actor_target"))
        state.update(self.actor_opt.state_dict("actor_opt"))
        state.update(self.temperature_opt.state_dict("temperature_opt"))
        for i in range(2):
            state.update(self.critics[i].state_dict(f"critic{i}"))
            state.update(self.critic_targets[i].state_dict(f"critic_target{i}"))
            state.update(self.critic_opts[i].state_dict(f"critic_opt{i}"))
        return state

    def save(self, path: Union[str, Path]) -> Path:
        """Write a versioned .npz checkpoint."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as handle:
            np.savez(handle, **self.state_dict())
        logger.info("saved checkpoint %s (%d train steps)", path, self.train_steps)
        return path

    def load(self, path: Union[str, Path]) -> None:
        with np.load(Path(path)) as data:
            state = {key: data[key] for key in data.files}
        version = int(state.get("version", -1))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")
        dims = (int(state["state_dim"]), int(state["action_dim"]))
        if dims != (self.state_dim, self.action_dim):
            raise ValueError(f"checkpoint dimensions {dims} do not match {(self.state_dim, self.action_dim)}")
        self.actor.load_state_dict(state, "actor")
        self.actor_target.load_state_dict(state, "actor_target")
        self.actor_opt.load_state_dict(state, "actor_opt", self.actor.params)
        self.temperature_opt.load_state_dict(state, "temperature_opt", [self.log_temperature])
        for i in range(2):
            self.critics[i].load_state_dict(state, f"critic{i}")
            self.critic_targets[i].load_state_dict(state, f"critic_target{i}")
            self.critic_opts[i].load_state_dict(state, f"critic_opt{i}", self.critics[i].params)
        self.log_temperature[...] = state["log_temperature"]
        self.train_steps = int(state["train_steps"])


def critic_target(rewards: np.ndarray, next_states: np.ndarray, not_done: np.ndarray, agent: SacAgent,
                  chi: Optional[np.ndarray] = None) -> np.ndarray:
    """r + I lambda (min_i Q~_i(s', a~) - psi log pi(a~|s')) with a~ from the target actor."""
    rewards = np.asarray(rewards, dtype=float)
    h = agent.hyper
    next_actions, log_prob = sample_action(agent.actor_target, next_states, "stochastic", agent.explore_rng,
                                           h.log_std_min, h.log_std_max, chi=chi)
    q1, q2 = agent.q_values(next_states, next_actions, target=True)
    soft_value = np.minimum(q1, q2) - agent.temperature * log_prob
    return rewards + np.asarray(not_done, dtype=float) * h.discount * soft_value


def train_step(buffer: PrioritizedReplayBuffer, agent: SacAgent) -> Optional[LossReport]:
    """
    One SAC gradient step on a minibatch from the replay buffer.

    Returns:
        The loss report, or None when the buffer holds fewer than the minimum fill
    """
    h = agent.hyper
    if len(buffer) < h.min_buffer_fill:
        logger.info("replay holds %d < %d transitions; skipping train step", len(buffer), h.min_buffer_fill)
        return None
    batch = buffer.sample(h.minibatch_size)
    targets = critic_target(batch.rewards, batch.next_states, batch.not_done, agent)

    critic_losses = []
    td_errors = []
    for i in range(2):
        loss, grads, td = agent.critic_loss_and_grads(i, batch.states, batch.actions, targets, batch.weights)
        agent.critic_opts[i].step(agent.critics[i].params, grads)
        critic_losses.append(loss)
        td_errors.append(np.abs(td))
    buffer.update_priorities(batch.indices, 0.5 * (td_errors[0] + td_errors[1]))

    chi = agent.explore_rng.standard_normal((len(batch), agent.action_dim))
    actor_loss, actor_grads, log_prob = agent.actor_loss_and_grads(batch.states, chi)
    agent.actor_opt.step(agent.actor.params, actor_grads)
    temperature_loss = agent.update_temperature(log_prob)
    agent.soft_update()
    agent.train_steps += 1

    report = LossReport(
        critic_loss=float(np.mean(critic_losses)),
        actor_loss=actor_loss,
        entropy=-float(np.mean(log_prob)),
        temperature=agent.temperature,
        temperature_loss=temperature_loss,
    )
    if agent.verbose:
        logger.debug("train step %d: %s", agent.train_steps, report.to_dict())
    return report

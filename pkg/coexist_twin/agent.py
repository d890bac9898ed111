"""
Agent module for Coexist Twin.

Contains the episode loop that drives an environment with a policy, the SAC
training loop with its training-curve CSV and checkpoints, and the trivial
policies used as baselines.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Tuple, Union
import logging
import math

import numpy as np
import pandas as pd

from .replay import PrioritizedReplayBuffer, Transition
from .sac import LossReport, SacAgent, train_step
from .scenario import AgentHyperparams, derive_rng

logger = logging.getLogger(__name__)

TRAINING_COLUMNS = ["episode", "iteration", "reward", "critic_loss", "actor_loss", "entropy", "psi"]
MODES = ("train", "evaluate")


class Policy(Protocol):
    def act(self, state: np.ndarray, mode: str = "stochastic") -> Tuple[np.ndarray, float]:
        ...


class RandomSubsetPolicy:
    """Selects m devices uniformly at random every iteration (m_k = m)."""

    def __init__(self, big_n: int, m: int, rng: np.random.Generator):
        if not 1 <= m <= big_n:
            raise ValueError(f"m must be in [1, {big_n}], got {m}")
        self.big_n = big_n
        self.m = m
        self.rng = rng

    def act(self, state: np.ndarray, mode: str = "stochastic") -> Tuple[np.ndarray, float]:
        action = -np.ones(self.big_n)
        action[self.rng.choice(self.big_n, size=self.m, replace=False)] = 1.0
        return action, 0.0


class UniformActionPolicy:
    """Actions drawn uniformly from [-1, 1]^N."""

    def __init__(self, big_n: int, rng: np.random.Generator):
        self.big_n = big_n
        self.rng = rng

    def act(self, state: np.ndarray, mode: str = "stochastic") -> Tuple[np.ndarray, float]:
        return self.rng.uniform(-1.0, 1.0, size=self.big_n), 0.0


@dataclass
class EpisodeTrace:
    """
    Record of one episode.

    Attributes:
        episode: Episode index
        mode: "train" or "evaluate"
        rewards: r_{k+1} per iteration
        selections: Selection vectors per iteration
        losses: Reports of the train steps run during the episode
        stored: Transitions written to the replay buffer
        converged: The episode ended on convergence
    """
    episode: int
    mode: str
    rewards: List[float] = field(default_factory=list)
    selections: List[np.ndarray] = field(default_factory=list)
    losses: List[Optional[LossReport]] = field(default_factory=list)
    stored: int = 0
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.rewards)

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards)) if self.rewards else math.nan


class Trainer:
    """
    Owns the learner, its replay buffer and the training cadence.

    Gradient steps run every train_every environment iterations (counted across
    episodes) once the buffer holds min_buffer_fill transitions.
    """

    def __init__(self, agent: SacAgent, buffer: PrioritizedReplayBuffer):
        self.agent = agent
        self.buffer = buffer
        self.env_steps = 0
        self.last_loss: Optional[LossReport] = None

    @classmethod
    def create(cls, state_dim: int, action_dim: int, hyper: AgentHyperparams, seed: int,
               verbose: bool = False) -> "Trainer":
        agent = SacAgent(state_dim, action_dim, hyper, derive_rng(seed, "agent-init"),
                         derive_rng(seed, "agent-explore"), verbose=verbose)
        buffer = PrioritizedReplayBuffer(
            hyper.replay_capacity, state_dim, action_dim, derive_rng(seed, "replay"),
            alpha=hyper.priority_alpha, beta=hyper.priority_beta, prioritized=hyper.prioritized,
        )
        return cls(agent, buffer)

    def observe(self, transition: Transition) -> List[Optional[LossReport]]:
        """Store one transition and run the gradient steps due at this iteration."""
        self.buffer.add(transition)
        self.env_steps += 1
        hyper = self.agent.hyper
        reports: List[Optional[LossReport]] = []
        if self.env_steps % hyper.train_every == 0 and len(self.buffer) >= hyper.min_buffer_fill:
            for _ in range(hyper.gradient_steps):
                report = train_step(self.buffer, self.agent)
                reports.append(report)
                if report is not None:
                    self.last_loss = report
        return reports


def run_episode(env, policy: Policy, mode: str = "evaluate", trainer: Optional[Trainer] = None,
                seed: Optional[int] = None, episode: int = 0) -> EpisodeTrace:
    """
    Drive one episode.

    In train mode actions are sampled stochastically, every transition goes to the
    trainer's buffer and the trainer runs its cadence. In evaluate mode actions are
    deterministic and nothing is stored.

    Raises:
        ValueError: Unknown mode, or train mode without a trainer
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of: {', '.join(MODES)}, got {mode}")
    if mode == "train" and trainer is None:
        raise ValueError("train mode needs a trainer")
    trace = EpisodeTrace(episode=episode, mode=mode)
    state = env.reset(seed)
    sampling = "stochastic" if mode == "train" else "deterministic"
    for _ in range(env.episode_length):
        action, _ = policy.act(state, sampling)
        result = env.step(action)
        trace.rewards.append(result.reward)
        trace.selections.append(np.asarray(result.info["selection"]))
        if mode == "train":
            trace.losses.extend(trainer.observe(
                Transition(state, np.asarray(action, dtype=float), result.reward, result.state, result.not_done)))
            trace.stored += 1
        state = result.state
        if result.done:
            trace.converged = result.not_done == 0.0
            break
    logger.info("episode %d (%s): %d iterations, mean reward %.4f%s", episode, mode, trace.iterations,
                trace.mean_reward, ", converged" if trace.converged else "")
    return trace


def _loss_fields(report: Optional[LossReport]) -> Tuple[float, float, float, float]:
    if report is None:
        return math.nan, math.nan, math.nan, math.nan
    return report.critic_loss, report.actor_loss, report.entropy, report.temperature


def train_agent(env, trainer: Trainer, seeds: Sequence[int], out_dir: Optional[Path] = None,
                checkpoint_every: int = 0) -> Tuple[List[EpisodeTrace], pd.DataFrame]:
    """
    Train over one episode per seed.

    Writes training.csv (one row per environment iteration, losses of the latest
    gradient step) and, every checkpoint_every episodes, checkpoints/episode_<i>.npz
    plus checkpoints/final.npz when out_dir is given.
    """
    traces: List[EpisodeTrace] = []
    rows = []
    iteration = 0
    for episode, seed in enumerate(seeds):
        trace = run_episode(env, trainer.agent, "train", trainer, seed=seed, episode=episode)
        traces.append(trace)
        for reward in trace.rewards:
            iteration += 1
            rows.append((episode, iteration, reward) + _loss_fields(trainer.last_loss))
        if out_dir is not None and checkpoint_every > 0 and (episode + 1) % checkpoint_every == 0:
            trainer.agent.save(Path(out_dir) / "checkpoints" / f"episode_{episode + 1}.npz")
    curve = pd.DataFrame(rows, columns=TRAINING_COLUMNS)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        curve.to_csv(out / "training.csv", index=False, float_format="%.9g")
        trainer.agent.save(out / "checkpoints" / "final.npz")
    return traces, curve


def evaluate_agent(env, agent: SacAgent, seeds: Iterable[int]) -> List[EpisodeTrace]:
    """Deterministic episodes, one per seed; the agent is not updated."""
    return [run_episode(env, agent, "evaluate", seed=seed, episode=i) for i, seed in enumerate(seeds)]


def load_agent(path: Union[str, Path], state_dim: int, action_dim: int, hyper: AgentHyperparams,
               seed: int = 0) -> SacAgent:
    agent = SacAgent(state_dim, action_dim, hyper, derive_rng(seed, "agent-init"),
                     derive_rng(seed, "agent-explore"))
    agent.load(path)
    return agent


def selection_counts(traces: Iterable[EpisodeTrace]) -> Dict[int, int]:
    """Histogram of m_k over all iterations of the traces."""
    counts: Dict[int, int] = {}
    for trace in traces:
        for selection in trace.selections:
            m = int(np.sum(selection))
            counts[m] = counts.get(m, 0) + 1
    return counts

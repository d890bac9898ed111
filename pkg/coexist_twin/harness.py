"""
Harness module for Coexist Twin.

Contains experiment plans, the baseline and agent runners, per-seed parallel
execution, result aggregation into plot-ready tables and the run manifest.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple
import json
import logging
import re

import numpy as np
import pandas as pd

from . import __version__
from .agent import RandomSubsetPolicy, Trainer, load_agent, run_episode, train_agent
from .bounds import REGIME_KIND, STRONGLY_CONVEX, validate_bound_empirically
from .dist_learn import LearningTask
from .environment import CoexistenceEnv, StateEncoder
from .errors import PlanError
from .metrics import AVAILABILITY_COLUMNS, ITERATION_COLUMNS, availability_frame, iteration_frame
from .ran_sim import RanEngine
from .scenario import ScenarioConfig, derive_rng

logger = logging.getLogger(__name__)

BASE_MODES = ("singleURLLC", "mixedServ", "slicing", "dRlAgent-train", "dRlAgent-eval", "bounds")
SLICING_FRACTION = 0.25
REPETITION_STRIDE = 100_000
SELECTION_COLUMNS = ["mode", "run", "iteration", "device", "selected"]
REWARD_COLUMNS = ["mode", "run", "iteration", "reward"]
BOUND_COLUMNS = ["mode", "regime", "n", "iteration", "empirical", "bound"]

_MODE_PATTERN = re.compile(r"^(?P<base>[A-Za-z-]+)(?:\[(?P<m>\d+)\])?$")


def parse_mode(text: str) -> Tuple[str, Optional[int]]:
    """Split "mixedServ[15]" into ("mixedServ", 15)."""
    match = _MODE_PATTERN.match(text.strip())
    if match is None or match.group("base") not in BASE_MODES:
        raise PlanError(f"mode must be one of: {', '.join(BASE_MODES)} (with [m] for baselines), got {text}")
    m = match.group("m")
    return match.group("base"), None if m is None else int(m)


@dataclass(frozen=True)
class ExperimentPlan:
    """
    What to run and where to put it.

    Attributes:
        mode: One of BASE_MODES, optionally written with its m ("slicing[15]")
        seeds: Root seeds, one run per (seed, repetition)
        m: Devices requested per iteration for mixedServ and slicing
        repetitions: Runs per seed
        out: Output directory (None keeps everything in memory)
        workers: Parallel processes for per-seed runs
        checkpoint: Agent checkpoint for dRlAgent-eval
        checkpoint_every: Episodes between training checkpoints
        window_s: Measurement window of singleURLLC runs
        regime: Bound regime for the bounds mode
        bound_iterations: K of the bounds mode
        trace: Write per-TTI allocation traces
    """
    mode: str
    seeds: Tuple[int, ...] = (0,)
    m: Optional[int] = None
    repetitions: int = 1
    out: Optional[Path] = None
    workers: int = 1
    checkpoint: Optional[Path] = None
    checkpoint_every: int = 0
    window_s: float = 1.0
    regime: int = STRONGLY_CONVEX
    bound_iterations: int = 100
    trace: bool = False

    def __post_init__(self) -> None:
        base, m = parse_mode(self.mode)
        if m is not None:
            if self.m is not None and self.m != m:
                raise PlanError(f"mode {self.mode} disagrees with m={self.m}")
            object.__setattr__(self, "m", m)
        object.__setattr__(self, "mode", base)
        if self.repetitions < 1:
            raise PlanError(f"repetitions must be >= 1, got {self.repetitions}")
        if not self.seeds:
            raise PlanError("seeds must not be empty")
        if self.workers < 1:
            raise PlanError(f"workers must be >= 1, got {self.workers}")
        if self.window_s <= 0:
            raise PlanError(f"window_s must be positive, got {self.window_s}")

    @property
    def label(self) -> str:
        return f"{self.mode}[{self.m}]" if self.mode in ("mixedServ", "slicing") else self.mode

    def run_seeds(self) -> List[int]:
        """Scenario seed of every run."""
        return [seed + rep * REPETITION_STRIDE for rep in range(self.repetitions) for seed in self.seeds]

    def validate(self, config: ScenarioConfig) -> None:
        """
        Raises:
            PlanError: The plan cannot run against this scenario
        """
        if self.mode in ("mixedServ", "slicing"):
            if self.m is None:
                raise PlanError(f"{self.mode} needs m")
            if not config.n <= self.m <= config.big_n:
                raise PlanError(f"m must be in [n, N] = [{config.n}, {config.big_n}], got {self.m}")
        if self.mode == "dRlAgent-eval" and self.checkpoint is None:
            raise PlanError("dRlAgent-eval needs a checkpoint")
        if self.mode == "bounds" and self.regime not in REGIME_KIND:
            raise PlanError(f"regime must be 1, 2 or 3, got {self.regime}")

    def scenario(self, config: ScenarioConfig) -> ScenarioConfig:
        """The scenario as this mode runs it."""
        if self.mode == "singleURLLC":
            return replace(config, ai_traffic_enabled=False)
        if self.mode == "slicing":
            return replace(config, slicing_fraction=SLICING_FRACTION)
        return config

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.label,
            "seeds": list(self.seeds),
            "m": self.m,
            "repetitions": self.repetitions,
            "workers": self.workers,
            "checkpoint": None if self.checkpoint is None else str(self.checkpoint),
            "checkpoint_every": self.checkpoint_every,
            "window_s": self.window_s,
            "regime": self.regime,
            "bound_iterations": self.bound_iterations,
        }


@dataclass
class ResultSet:
    """
    Samples of one or more plans, each row tagged with its mode label.

    Attributes:
        availability: AVAILABILITY_COLUMNS plus mode, one alpha-hat per (run, device, direction)
            over the whole measured span [t_1, t_K]; `iteration` holds K
        window_availability: Per-iteration-window alpha-hat, same columns (diagnostic)
        iterations: ITERATION_COLUMNS plus mode
        selections: SELECTION_COLUMNS
        rewards: REWARD_COLUMNS
        bounds: BOUND_COLUMNS (bounds mode)
        training: Training curve (dRlAgent-train)
    """
    availability: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=["mode"] + AVAILABILITY_COLUMNS))
    window_availability: pd.DataFrame = field(
        default_factory=lambda: pd.DataFrame(columns=["mode"] + AVAILABILITY_COLUMNS))
    iterations: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=["mode"] + ITERATION_COLUMNS))
    selections: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=SELECTION_COLUMNS))
    rewards: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=REWARD_COLUMNS))
    bounds: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=BOUND_COLUMNS))
    training: Optional[pd.DataFrame] = None

    @property
    def empty(self) -> bool:
        return all(len(frame) == 0 for frame in (self.availability, self.iterations, self.rewards, self.bounds))

    @classmethod
    def merge(cls, parts: Sequence["ResultSet"]) -> "ResultSet":
        def cat(name: str) -> pd.DataFrame:
            frames = [getattr(p, name) for p in parts if len(getattr(p, name))]
            if not frames:
                return getattr(cls(), name)
            return pd.concat(frames, ignore_index=True)

        training = [p.training for p in parts if p.training is not None]
        return cls(cat("availability"), cat("window_availability"), cat("iterations"), cat("selections"),
                   cat("rewards"), cat("bounds"), training[0] if training else None)

    def write(self, directory: Path) -> None:
        """
        availability.csv, window_availability.csv, iterations.csv, selections.csv,
        rewards.csv (and bounds.csv when present).
        """
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("availability", "window_availability", "iterations", "selections", "rewards", "bounds"):
            frame = getattr(self, name)
            if name == "bounds" and len(frame) == 0:
                continue
            frame.to_csv(directory / f"{name}.csv", index=False, float_format="%.9g")


@dataclass(frozen=True)
class RunJob:
    """One per-seed run handed to a worker."""
    mode: str
    label: str
    config: ScenarioConfig
    run: int
    m: Optional[int]
    window_s: float
    checkpoint: Optional[str]
    trace_path: Optional[str]


def _labelled(label: str, rows) -> pd.DataFrame:
    frame = availability_frame(rows)
    frame.insert(0, "mode", label)
    return frame


def _run_availability(label: str, run: int, engine: RanEngine, t0: float, t1: float,
                      iterations: int) -> pd.DataFrame:
    """One alpha-hat per URLLC device and direction over the whole span [t0, t1] of a run."""
    alphas = engine.availability_window(t0, t1)
    return _labelled(label, [
        (run, iterations, u, direction, t0, t1, alpha)
        for (u, direction), alpha in sorted(alphas.items(), key=lambda item: (item[0][0], item[0][1].value))
    ])


def _episode_frames(label: str, run: int, env: CoexistenceEnv) -> ResultSet:
    windows = _labelled(label, (
        (run, s.iteration, s.device, s.direction, s.start_s, s.end_s, s.availability) for s in env.availability))
    if env.availability and env.engine is not None:
        t0 = min(s.start_s for s in env.availability)
        t1 = max(s.end_s for s in env.availability)
        availability = _run_availability(label, run, env.engine, t0, t1, len(env.outcomes))
    else:
        availability = _labelled(label, [])
    iterations = iteration_frame(run, env.outcomes)
    iterations["iteration"] = range(1, len(iterations) + 1)
    iterations.insert(0, "mode", label)
    selections = pd.DataFrame(
        [(label, run, k, i, int(i in o.selected))
         for k, o in enumerate(env.outcomes, start=1) for i in range(env.config.big_n)],
        columns=SELECTION_COLUMNS,
    )
    rewards = pd.DataFrame([(label, run, k, r) for k, r in enumerate(env.rewards, start=1)],
                           columns=REWARD_COLUMNS)
    return ResultSet(availability=availability, window_availability=windows, iterations=iterations,
                     selections=selections, rewards=rewards)


def _run_single_urllc(job: RunJob) -> ResultSet:
    engine = RanEngine(job.config, trace=job.trace_path is not None)
    rows = []
    start_s = engine.now_s
    for k in range(1, job.config.episode_length + 1):
        engine.run_until(engine.now_s + job.window_s)
        log = engine.close_window()
        for (u, direction), alpha in sorted(engine.availability_window(log.start_s, log.end_s).items(),
                                            key=lambda item: (item[0][0], item[0][1].value)):
            rows.append((job.run, k, u, direction, log.start_s, log.end_s, alpha))
    if job.trace_path is not None:
        engine.write_trace(job.trace_path)
    availability = _run_availability(job.label, job.run, engine, start_s, engine.now_s, job.config.episode_length)
    return ResultSet(availability=availability, window_availability=_labelled(job.label, rows))


def run_job(job: RunJob) -> ResultSet:
    """Execute one run; module level so worker processes can unpickle it."""
    if job.mode == "singleURLLC":
        return _run_single_urllc(job)
    env = CoexistenceEnv(job.config, trace=job.trace_path is not None)
    if job.mode in ("mixedServ", "slicing"):
        policy = RandomSubsetPolicy(job.config.big_n, job.m, derive_rng(job.config, "baseline-selection"))
    elif job.mode == "dRlAgent-eval":
        policy = load_agent(job.checkpoint, env.state_dim, env.action_dim, job.config.agent, job.config.rng_seed)
    else:
        raise PlanError(f"mode {job.mode} does not run per seed")
    run_episode(env, policy, "evaluate", seed=job.config.rng_seed, episode=job.run)
    if job.trace_path is not None and env.engine is not None:
        env.engine.write_trace(job.trace_path)
    return _episode_frames(job.label, job.run, env)


def _jobs(plan: ExperimentPlan, config: ScenarioConfig) -> List[RunJob]:
    scenario = plan.scenario(config)
    jobs = []
    for run, seed in enumerate(plan.run_seeds()):
        trace = None
        if plan.trace and plan.out is not None:
            trace = str(Path(plan.out) / "traces" / f"run_{run}.csv")
        jobs.append(RunJob(plan.mode, plan.label, scenario.with_seed(seed), run, plan.m, plan.window_s,
                           None if plan.checkpoint is None else str(plan.checkpoint), trace))
    if plan.trace and plan.out is not None:
        (Path(plan.out) / "traces").mkdir(parents=True, exist_ok=True)
    return jobs


def _run_training(plan: ExperimentPlan, config: ScenarioConfig) -> ResultSet:
    env = CoexistenceEnv(config)
    trainer = Trainer.create(env.state_dim, env.action_dim, config.agent, config.rng_seed)
    traces, curve = train_agent(env, trainer, plan.run_seeds(), plan.out, plan.checkpoint_every)
    rewards = pd.DataFrame(
        [(plan.label, t.episode, k, r) for t in traces for k, r in enumerate(t.rewards, start=1)],
        columns=REWARD_COLUMNS,
    )
    selections = pd.DataFrame(
        [(plan.label, t.episode, k, i, int(s[i]))
         for t in traces for k, s in enumerate(t.selections, start=1) for i in range(len(s))],
        columns=SELECTION_COLUMNS,
    )
    return ResultSet(selections=selections, rewards=rewards, training=curve)


def _run_bounds(plan: ExperimentPlan, config: ScenarioConfig) -> ResultSet:
    kind = REGIME_KIND[plan.regime]
    task_config = replace(config.learning, kind=kind)
    task = LearningTask.from_config(task_config, config.big_n, derive_rng(config, "task"))
    beta1 = 1.0 if plan.regime == STRONGLY_CONVEX else 0.0
    rows = []
    for n in sorted({1, config.n}):
        report = validate_bound_empirically(task, plan.regime, plan.run_seeds(), plan.bound_iterations, n, beta1)
        rows.extend((plan.label, plan.regime, n, int(k), e, b)
                    for k, e, b in zip(report.iterations, report.empirical, report.bound))
    return ResultSet(bounds=pd.DataFrame(rows, columns=BOUND_COLUMNS))


def run_plan(plan: ExperimentPlan, config: ScenarioConfig) -> ResultSet:
    """
    Execute a plan against a scenario.

    Per-seed runs are independent; with workers > 1 they run in separate processes
    and the results are reduced in run order, so the output does not depend on the
    parallelism.

    Raises:
        PlanError: The plan does not fit the scenario
    """
    plan.validate(config)
    logger.info("running %s over %d run(s)", plan.label, len(plan.run_seeds()))
    if plan.mode == "dRlAgent-train":
        results = _run_training(plan, config)
    elif plan.mode == "bounds":
        results = _run_bounds(plan, config)
    else:
        jobs = _jobs(plan, config)
        if plan.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=plan.workers) as pool:
                parts = list(pool.map(run_job, jobs))
        else:
            parts = [run_job(job) for job in jobs]
        results = ResultSet.merge(parts)
    if plan.out is not None:
        out = Path(plan.out)
        results.write(out)
        write_manifest(out, plan, config)
    return results


# --- aggregation ------------------------------------------------------------

FIVE_NUMBER_COLUMNS = ["mode", "count", "min", "q25", "median", "q75", "max"]


def five_number_summary(values: Sequence[float]) -> Tuple[float, float, float, float, float]:
    """Minimum, 25th percentile, median, 75th percentile and maximum (linear interpolation)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("five-number summary of an empty sample")
    q = np.percentile(arr, [0, 25, 50, 75, 100])
    return float(q[0]), float(q[1]), float(q[2]), float(q[3]), float(q[4])


def availability_cdf(availability: pd.DataFrame) -> pd.DataFrame:
    """Empirical CDF points per mode: every distinct alpha and Pr{alpha-hat <= alpha}."""
    rows = []
    for mode, group in availability.groupby("mode", sort=True):
        values = np.sort(group["availability"].to_numpy(dtype=float))
        distinct = np.unique(values)
        counts = np.searchsorted(values, distinct, side="right")
        rows.extend((mode, float(a), c / len(values)) for a, c in zip(distinct, counts))
    return pd.DataFrame(rows, columns=["mode", "availability", "cdf"])


def delay_summary(iterations: pd.DataFrame) -> pd.DataFrame:
    rows = []
    for mode, group in iterations.groupby("mode", sort=True):
        values = group["training_delay_s"].to_numpy(dtype=float)
        rows.append((mode, len(values)) + five_number_summary(values))
    return pd.DataFrame(rows, columns=FIVE_NUMBER_COLUMNS)


def selection_ratio(selections: pd.DataFrame) -> pd.DataFrame:
    """Fraction of iterations in which each device was selected."""
    if len(selections) == 0:
        return pd.DataFrame(columns=["mode", "device", "ratio"])
    frame = selections.assign(selected=selections["selected"].astype(float))
    ratio = frame.groupby(["mode", "device"], sort=True)["selected"].mean().reset_index()
    return ratio.rename(columns={"selected": "ratio"})


def m_pmf(selections: pd.DataFrame) -> pd.DataFrame:
    """Empirical PMF of m_k per mode."""
    if len(selections) == 0:
        return pd.DataFrame(columns=["mode", "m", "probability"])
    per_iteration = selections.groupby(["mode", "run", "iteration"], sort=True)["selected"].sum().reset_index()
    rows = []
    for mode, group in per_iteration.groupby("mode", sort=True):
        counts = group["selected"].astype(int).value_counts().sort_index()
        total = counts.sum()
        rows.extend((mode, int(m), c / total) for m, c in counts.items())
    return pd.DataFrame(rows, columns=["mode", "m", "probability"])


def comparison_table(iterations: pd.DataFrame, reference: Optional[str] = None) -> pd.DataFrame:
    """Median and max training delay per mode and the median reduction versus the reference mode."""
    summary = delay_summary(iterations)
    table = summary[["mode", "median", "max"]].copy()
    if reference is None or reference not in set(table["mode"]):
        table["median_reduction"] = np.nan
        return table
    ref = float(table.loc[table["mode"] == reference, "median"].iloc[0])
    table["median_reduction"] = 1.0 - table["median"] / ref if ref > 0 else np.nan
    return table


def summarize(results: ResultSet, out: Optional[Path] = None, reference: Optional[str] = None) -> Dict[str, pd.DataFrame]:
    """
    Plot-ready tables: availability CDF, delay five-number summaries, selection
    ratios, the m_k PMF and the baseline comparison.

    Raises:
        ValueError: The result set holds no samples
    """
    if results.empty:
        raise ValueError("cannot summarize an empty result set")
    tables = {
        "availability_cdf": availability_cdf(results.availability),
        "delay_summary": delay_summary(results.iterations),
        "selection_ratio": selection_ratio(results.selections),
        "m_pmf": m_pmf(results.selections),
        "comparison": comparison_table(results.iterations, reference),
    }
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for name, table in tables.items():
            table.to_csv(out / f"{name}.csv", index=False, float_format="%.9g")
    return tables


def manifest(plan: ExperimentPlan, config: ScenarioConfig) -> Dict[str, Any]:
    """Resolved configuration, seeds, code version and state normalization of a run."""
    return {
        "version": __version__,
        "plan": plan.to_dict(),
        "run_seeds": plan.run_seeds(),
        "config": plan.scenario(config).to_dict(),
        "state_normalization": StateEncoder(config).normalization(),
    }


def write_manifest(out: Path, plan: ExperimentPlan, config: ScenarioConfig) -> Path:
    path = Path(out) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest(plan, config), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


"""
Command-line interface for Coexist Twin.

Subcommands: simulate, train, evaluate, bounds and selftest. Exit code 0 on
success, 1 when a check fails, 2 on a configuration or plan error.
"""

from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence
import argparse
import logging
import math
import sys

import numpy as np
import pandas as pd

from .agent import Trainer, train_agent
from .bounds import REGIME_KIND, STRONGLY_CONVEX, ConvergenceParams, sweep
from .dist_learn import LearningTask
from .environment import ToyCoexistenceEnv
from .errors import CoexistError, PlanError
from .harness import ExperimentPlan, run_plan, summarize
from .oracles import ORACLES, selftest
from .scenario import PRESETS, ScenarioConfig, derive_rng, load_scenario, toy_scenario

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"
EXIT_OK, EXIT_FAILED, EXIT_ERROR = 0, 1, 2


def parse_seeds(text: str) -> List[int]:
    """"3" -> [3], "0..4" -> [0, 1, 2, 3, 4], "1,5,9" -> [1, 5, 9]."""
    text = text.strip()
    if ".." in text:
        lo, hi = (int(part) for part in text.split("..", 1))
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty seed range {text}")
        return list(range(lo, hi + 1))
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid seeds {text!r}") from exc


def parse_sweep(text: str):
    """"n=1:20:1" -> ("n", [1, 2, ..., 20])."""
    try:
        name, spec = text.split("=", 1)
        lo, hi, step = (float(part) for part in spec.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"sweep must look like param=lo:hi:step, got {text!r}") from exc
    if step <= 0 or hi < lo:
        raise argparse.ArgumentTypeError(f"sweep range {spec} is empty")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return name.strip(), [lo + i * step for i in range(count)]


def resolve_config(text: str) -> ScenarioConfig:
    """A preset name or a path to a JSON scenario."""
    if text in PRESETS:
        return PRESETS[text]()
    return load_scenario(Path(text))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coexist-twin", description="URLLC and distributed-learning coexistence")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, needs_out: bool = True) -> None:
        p.add_argument("--config", default="desk", help=f"preset ({', '.join(PRESETS)}) or JSON path")
        p.add_argument("--seeds", type=parse_seeds, default=[0], help="seed, a..b range or comma list")
        p.add_argument("--repetitions", type=int, default=1)
        p.add_argument("--workers", type=int, default=1)
        if needs_out:
            p.add_argument("--out", type=Path, required=True)

    simulate = sub.add_parser("simulate", help="run a baseline mode")
    simulate.add_argument("--mode", required=True, help="singleURLLC, mixedServ[m] or slicing[m]")
    simulate.add_argument("--window", type=float, default=1.0, help="singleURLLC window length (s)")
    simulate.add_argument("--trace", action="store_true", help="write per-TTI allocation traces")
    common(simulate)

    train = sub.add_parser("train", help="train the device-selection agent")
    train.add_argument("--checkpoint-every", type=int, default=10)
    train.add_argument("--toy", action="store_true", help="train on the analytic toy environment")
    train.add_argument("--episodes", type=int, default=0, help="toy episodes (default: one per seed)")
    common(train)

    evaluate = sub.add_parser("evaluate", help="evaluate a trained agent")
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    common(evaluate)

    bounds = sub.add_parser("bounds", help="sweep a convergence calculator")
    bounds.add_argument("--regime", type=int, choices=sorted(REGIME_KIND), default=STRONGLY_CONVEX)
    bounds.add_argument("--sweep", type=parse_sweep, required=True)
    bounds.add_argument("--beta1", type=float, default=None, help="default 1 for regime 1, 0 otherwise")
    bounds.add_argument("--validate", type=int, default=0, help="also run a Monte Carlo check over K iterations")
    common(bounds, needs_out=False)
    bounds.add_argument("--out", type=Path, default=None)

    check = sub.add_parser("selftest", help="run the oracle suite")
    check.add_argument("--only", action="append", choices=sorted(ORACLES), default=[])
    return parser


def cmd_simulate(args: argparse.Namespace) -> int:
    config = resolve_config(args.config)
    plan = ExperimentPlan(mode=args.mode, seeds=tuple(args.seeds), repetitions=args.repetitions, out=args.out,
                          workers=args.workers, window_s=args.window, trace=args.trace)
    if plan.mode not in ("singleURLLC", "mixedServ", "slicing"):
        raise PlanError(f"simulate runs baselines only, got {plan.mode}")
    results = run_plan(plan, config)
    summarize(results, args.out / "summary")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    if args.toy:
        config = toy_scenario(args.seeds[0])
        env = ToyCoexistenceEnv(config)
        trainer = Trainer.create(env.state_dim, env.action_dim, config.agent, config.rng_seed)
        episodes = args.episodes or len(args.seeds)
        traces, _ = train_agent(env, trainer, list(range(episodes)), args.out, args.checkpoint_every)
        best = env.best_fixed_selection()
        logger.info("toy: last-episode mean reward %.4f, best fixed %s -> %.4f",
                    traces[-1].mean_reward, best[0], best[1])
        return EXIT_OK
    config = resolve_config(args.config)
    plan = ExperimentPlan(mode="dRlAgent-train", seeds=tuple(args.seeds), repetitions=args.repetitions,
                          out=args.out, checkpoint_every=args.checkpoint_every)
    run_plan(plan, config)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = resolve_config(args.config)
    plan = ExperimentPlan(mode="dRlAgent-eval", seeds=tuple(args.seeds), repetitions=args.repetitions,
                          out=args.out, workers=args.workers, checkpoint=args.checkpoint)
    results = run_plan(plan, config)
    summarize(results, args.out / "summary")
    return EXIT_OK


def cmd_bounds(args: argparse.Namespace) -> int:
    config = resolve_config(args.config)
    regime = args.regime
    task_config = replace(config.learning, kind=REGIME_KIND[regime])
    task = LearningTask.from_config(task_config, config.big_n, derive_rng(config, "task"))
    beta1 = args.beta1 if args.beta1 is not None else (1.0 if regime == STRONGLY_CONVEX else 0.0)
    w1 = task.optimum + 3.0 * np.ones(task.dimension) / math.sqrt(task.dimension)
    base = ConvergenceParams.from_task(task, regime, beta1, config.n, w1)
    name, values = args.sweep
    table = pd.DataFrame(sweep(regime, base, name, values))
    print(table.to_string(index=False))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        table.to_csv(args.out / "bounds_sweep.csv", index=False, float_format="%.9g")
    if args.validate > 0:
        plan = ExperimentPlan(mode="bounds", seeds=tuple(args.seeds), repetitions=args.repetitions, out=args.out,
                              regime=regime, bound_iterations=args.validate)
        results = run_plan(plan, replace(config, learning=task_config))
        worst = (results.bounds["bound"] * 1.05 - results.bounds["empirical"]).min()
        logger.info("bound check worst margin %.6g", worst)
        return EXIT_OK if worst >= 0 else EXIT_FAILED
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    results = selftest(args.only)
    for result in results:
        print(result)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "bounds": cmd_bounds,
    "selftest": cmd_selftest,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        return COMMANDS[args.command](args)
    except CoexistError as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands: simulate (heuristic baselines), train, eval (saved checkpoint),
sweep (demand x capacity grid), oracle (exhaustive lower bound on tiny
instances). All errors exit 1 with a message on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from . import harness
from .policies import POLICY_KINDS


def _parse_seeds(text: str) -> Tuple[int, ...]:
    seeds = tuple(int(part) for part in text.split(",") if part.strip() != "")
    if not seeds:
        raise ValueError("seeds must be a non-empty comma-separated list")
    return seeds


def _print_row(row: dict) -> None:
    print(" ".join(f"{key}={value}" for key, value in row.items()))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vertiflow",
        description="air taxi dispatch simulator: baselines, training, evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a baseline policy and export metrics")
    sim.add_argument("--policy", choices=POLICY_KINDS,
                     help="override the configured policy")
    sim.add_argument("--config", help="yaml run config")
    sim.add_argument("--seeds", help="comma-separated episode seeds")
    sim.add_argument("--out", help="export directory")

    tr = sub.add_parser("train", help="train the learned policy")
    tr.add_argument("--config", help="yaml run config")
    tr.add_argument("--updates", type=int, help="override the update budget")
    tr.add_argument("--checkpoint", required=True,
                    help="directory for net.npz and train_log.jsonl")

    ev = sub.add_parser("eval", help="greedy evaluation of a saved checkpoint")
    ev.add_argument("--checkpoint", required=True,
                    help="checkpoint file or its directory")
    ev.add_argument("--config", help="yaml run config")
    ev.add_argument("--seeds", help="comma-separated episode seeds")
    ev.add_argument("--out", help="export directory")

    sw = sub.add_parser("sweep", help="demand x capacity grid for one policy")
    sw.add_argument("--config", help="yaml run config")
    sw.add_argument("--policy", choices=POLICY_KINDS,
                    help="override the configured policy")
    sw.add_argument("--out", required=True, help="directory for summary.csv")

    orc = sub.add_parser("oracle",
                         help="check heuristics against the exhaustive optimum")
    orc.add_argument("--config", help="yaml run config (<= 6 passengers)")
    orc.add_argument("--n", type=int, default=50, help="number of instances")

    return parser


def _cmd_simulate(args) -> int:
    rc = harness.load_config(args.config)
    kind = args.policy or rc.policy
    if kind == "learned":
        raise ValueError("simulate runs heuristic baselines; "
                         "use eval with a checkpoint for the learned policy")
    seeds = _parse_seeds(args.seeds) if args.seeds else rc.seeds
    out_dir = args.out or rc.out_dir
    rc = dataclasses.replace(rc, policy=kind, seeds=seeds)
    metrics, _ = harness.simulate(rc, out_dir=out_dir)
    _print_row(harness.aggregate(metrics))
    print(f"exported {len(metrics)} episodes to {out_dir}")
    return 0


def _cmd_train(args) -> int:
    rc = harness.load_config(args.config)
    updates = args.updates if args.updates is not None else rc.updates
    _, history = harness.train_policy(rc, updates, args.checkpoint)
    last = history[-1]
    print(f"trained {updates} updates; final mean_return={last['mean_return']} "
          f"att_estimate={last['att_estimate']}")
    print(f"checkpoint written to {Path(args.checkpoint) / 'net.npz'}")
    return 0


def _cmd_eval(args) -> int:
    rc = harness.load_config(args.config)
    seeds = _parse_seeds(args.seeds) if args.seeds else rc.seeds
    out_dir = args.out or rc.out_dir
    metrics, _ = harness.evaluate_checkpoint(args.checkpoint, rc.env, seeds,
                                             out_dir=out_dir)
    _print_row(harness.aggregate(metrics))
    print(f"exported {len(metrics)} episodes to {out_dir}")
    return 0


def _cmd_sweep(args) -> int:
    rc = harness.load_config(args.config)
    kind = args.policy or rc.policy
    if kind == "learned":
        raise ValueError("sweep runs heuristic baselines; "
                         "use eval with a checkpoint for the learned policy")
    rows = harness.sweep(rc.env, kind, rc.seeds,
                         passengers=rc.sweep_passengers,
                         seat_options=rc.sweep_seats,
                         policy_opts=rc.policy_opts)
    harness.write_rows(rows, Path(args.out) / "summary.csv")
    for row in rows:
        _print_row(row)
    return 0


def _cmd_oracle(args) -> int:
    from .env import MobilityEnv, brute_force_best_assignment
    from .policies import make_policy

    rc = harness.load_config(args.config)
    if rc.env.total_passengers > 6:
        raise ValueError("the oracle enumerates every assignment and is limited "
                         f"to 6 passengers; config has {rc.env.total_passengers}")
    kinds = ("spf", "sttf", "qtti")
    violations = 0
    for seed in range(args.n):
        bound, _ = brute_force_best_assignment(rc.env, seed)
        costs = {}
        for kind in kinds:
            m, _ = harness.run_episode(rc.env, make_policy(kind, seed=seed), seed)
            costs[kind] = sum(m.totals)
            if costs[kind] < bound - 1e-9:
                violations += 1
        line = " ".join(f"{k}={costs[k]:.3f}" for k in kinds)
        print(f"seed {seed}: oracle={bound:.3f} {line}")
    if violations:
        raise RuntimeError(
            f"{violations} heuristic runs beat the exhaustive oracle bound")
    print(f"oracle bound respected on {args.n} instances")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "oracle": _cmd_oracle,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, TypeError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

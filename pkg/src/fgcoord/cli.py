"""Command-line entry point.

Subcommands:
  train    <config.ini> [--resume CKPT] [--output-dir DIR]
  eval     <checkpoint> [--episodes N] [--seed S] [--dump-structures PATH]
  oracle   <config.ini> [--episodes N]
  selftest

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .runner import evaluate_checkpoint, oracle_summary, selftest, train_run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fgcoord",
        description="Cooperative multi-agent value decomposition over "
                    "sampled factor graphs, with message-passing action "
                    "selection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the training loop")
    p_train.add_argument("config", help="INI configuration file")
    p_train.add_argument("--resume", metavar="CKPT", default=None,
                         help="continue from a saved checkpoint")
    p_train.add_argument("--output-dir", default=None,
                         help="override the configured output directory")

    p_eval = sub.add_parser("eval", help="evaluate a saved model greedily")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--episodes", type=int, default=10)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--dump-structures", metavar="PATH", default=None,
                        help="write the sampled coordination graph per step")

    p_oracle = sub.add_parser(
        "oracle", help="print the exhaustive optimum or a random baseline")
    p_oracle.add_argument("config")
    p_oracle.add_argument("--episodes", type=int, default=20)

    sub.add_parser("selftest", help="run the built-in invariant checks")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            config = load_config(args.config)
            output_dir = train_run(config, args.output_dir, args.resume)
            print(f"training complete: {output_dir}")
        elif args.command == "eval":
            summary = evaluate_checkpoint(args.checkpoint, args.episodes,
                                          args.dump_structures, args.seed)
            print(f"episodes={summary['episodes']}")
            if summary["returns"]:
                print(f"mean_return={summary['mean']:.6g}")
                print(f"median_return={summary['median']:.6g}")
        elif args.command == "oracle":
            config = load_config(args.config)
            summary = oracle_summary(config, args.episodes)
            if summary["kind"] == "exhaustive":
                joint = ",".join(str(a) for a in summary["action"])
                print(f"optimal_action={joint}")
                print(f"optimal_value={summary['value']:.6g}")
            else:
                print(f"random_baseline_mean={summary['mean']:.6g}")
                print(f"random_baseline_median={summary['median']:.6g}")
        elif args.command == "selftest":
            failures = 0
            for name, passed in selftest():
                print(f"{'PASS' if passed else 'FAIL'}  {name}")
                failures += 0 if passed else 1
            return 2 if failures else 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (CheckpointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

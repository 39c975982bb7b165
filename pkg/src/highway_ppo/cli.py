"""Command-line entry point: ``highway-ppo {train,eval,baseline,adapt}``."""
from __future__ import annotations

import argparse
import logging
import sys

from .checkpoint import CheckpointError
from .harness import (ALGOS, UsageError, load_config, run_adaptability, run_evaluation,
                      run_training)
from .ppo import TrainingDiverged

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="highway-ppo",
                                     description="Highway driving PPO / CEM experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, algo=True):
        if algo:
            p.add_argument("--algo", choices=ALGOS)
        p.add_argument("--scenario", help="preset name (default, adapt1, adapt2)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--out", help="output directory")

    common(sub.add_parser("train", help="train PPO or CEM"))
    ev = sub.add_parser("eval", help="greedy evaluation of a checkpoint or the reference")
    common(ev)
    ev.add_argument("--checkpoint")
    ev.add_argument("--episodes", type=int)
    base = sub.add_parser("baseline", help="evaluate the scripted IDM+MOBIL ego")
    common(base, algo=False)
    base.add_argument("--episodes", type=int)
    ad = sub.add_parser("adapt", help="evaluate a checkpoint on both adaptability presets")
    common(ad)
    ad.add_argument("--checkpoint")
    ad.add_argument("--episodes", type=int, default=10)
    return parser


def _config(args):
    cfg = load_config(args.config)
    for name in ("scenario", "seed", "out", "algo"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if args.command in ("eval", "baseline") and args.episodes is not None:
        cfg.episodes = args.episodes
    if args.command == "baseline":
        cfg.algo = "reference"
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "train":
            res = run_training(cfg)
            print(f"wrote {res.checkpoint} and {res.curve}")
        elif args.command in ("eval", "baseline"):
            s = run_evaluation(cfg, getattr(args, "checkpoint", None))
            print(f"episodes={s.episodes} collision_rate={s.collision_rate:.4f} "
                  f"success_rate={s.success_rate:.4f} mean_return={s.mean_return:.3f}")
        else:
            if args.episodes <= 0:
                raise UsageError("episodes must be positive")
            series = run_adaptability(cfg, args.checkpoint, args.episodes)
            for name, values in series.items():
                print(f"{name}: mean_return={sum(values) / len(values):.3f}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, TrainingDiverged, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

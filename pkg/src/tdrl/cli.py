"""Command line entry point: ``tdrl train | verify-theory | compare | export``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from .config import load_config
from .errors import TdrlError
from .runlog import read_metrics

log = logging.getLogger("tdrl")


def _default_root():
    return Path(os.environ.get("TDRL_OUT", "runs"))


def cmd_train(args):
    from .training import Trainer

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    run_dir = Path(args.out) if args.out else _default_root() / f"{cfg.env}-{cfg.strategy}-seed{cfg.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    if (run_dir / "metrics.csv").exists():
        (run_dir / "metrics.csv").unlink()
    (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    start = time.perf_counter()
    trainer = Trainer(cfg, run_dir)
    trainer.run()
    trainer.save(run_dir / "checkpoints" / "final")
    report = trainer.evaluate()
    report["wall_seconds"] = round(time.perf_counter() - start, 1)
    (run_dir / "verdicts").mkdir(exist_ok=True)
    (run_dir / "verdicts" / "eval.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"run directory: {run_dir}")
    _print_eval(report)
    return 0


def _print_eval(report):
    print(f"evaluation over {report['episodes']} episodes")
    for name, rate in report["pass_rates"].items():
        print(f"  {name:<20} pass rate {rate:.3f}")
    print(f"  {'all pass-fail':<20} pass rate {report['all_pass_rate']:.3f}")
    for name, value in report["indicative_means"].items():
        print(f"  {name:<20} mean {value:.4f}")


def cmd_verify(args):
    from .oracle import verify_theory

    start = time.perf_counter()
    verdict = verify_theory(instances=args.instances, seed=args.seed)
    elapsed = time.perf_counter() - start
    print(f"verified {args.instances} random grid-chain instances in {elapsed:.2f}s")
    print(f"  likelihood-ratio monotonicity : {verdict['lemma1']} "
          f"({verdict['lemma1_violations']} violations)")
    print(f"  policy-distance contraction   : {verdict['theorem1']} "
          f"({verdict['theorem1_violations']} violations)")
    print(f"  first instance: d1 = {verdict['d1']:.6f}, d2 = {verdict['d2']:.6f}")
    out = Path(args.out) if args.out else _default_root()
    (out / "verdicts").mkdir(parents=True, exist_ok=True)
    path = out / "verdicts" / "verify_theory.json"
    path.write_text(json.dumps(verdict, indent=2) + "\n")
    print(f"verdict written to {path}")
    return 0 if verdict["lemma1"] == "pass" and verdict["theorem1"] == "pass" else 1


def cmd_compare(args):
    from .training import Trainer

    cfg_path = Path(args.config)
    cfg = load_config(cfg_path)
    ckpt = Path(args.checkpoint) if args.checkpoint else cfg_path.parent / "checkpoints" / "final"
    trainer = Trainer.load(ckpt)
    if trainer.config.env != cfg.env:
        raise TdrlError(f"checkpoint was trained on {trainer.config.env!r}, config names {cfg.env!r}")
    _print_eval(trainer.evaluate(args.episodes))
    return 0


def cmd_export(args):
    run = Path(args.run)
    path = run / "metrics.csv"
    if not path.exists():
        raise FileNotFoundError(f"no metrics.csv in {run}")
    rows = read_metrics(path)
    fh = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    finally:
        if args.output:
            fh.close()
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="tdrl", description="Test-driven reinforcement learning")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the training loop from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory (default: $TDRL_OUT/<env>-<strategy>-seed<N>)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify-theory", help="exact-enumeration checks on random grid chains")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compare", help="roll out a checkpointed policy and report test results")
    p.add_argument("--config", required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--checkpoint", help="checkpoint directory (default: <config dir>/checkpoints/final)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("export", help="export training curves")
    p.add_argument("--run", required=True)
    p.add_argument("--format", choices=["csv"], default="csv")
    p.add_argument("--output")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TdrlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``gazetrack pretrain|run|dump-surface``."""

import argparse
import logging
import sys

from .config import ExperimentConfig, load_config
from .errors import ConfigInvalid, TrainingDiverged

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CELL_FAILURES = 3
EXIT_TRAINING = 4


def _parser():
    p = argparse.ArgumentParser(prog="gazetrack", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML experiment file (defaults apply when omitted)")
        sp.add_argument("--out", help="output directory (overrides experiment.output_dir)")
        sp.add_argument("--seed", type=int, help="run only this seed (overrides experiment.seeds)")
        return sp

    common(sub.add_parser("pretrain", help="train and save the appearance and identity models"))
    run = common(sub.add_parser("run", help="run the policy-comparison grid"))
    run.add_argument("--policy", action="append", help="restrict the grid to this policy (repeatable)")
    dump = common(sub.add_parser("dump-surface", help="write a BayesOpt reward surface for one sequence"))
    dump.add_argument("--glyph", type=int, help="glyph id (default: first configured glyph)")
    dump.add_argument("--size", type=int, default=64, help="grid resolution per axis")
    return p


def _load(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    policies = getattr(args, "policy", None)
    return cfg.with_overrides(seed=args.seed, policies=policies, output_dir=args.out)


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    from . import harness

    try:
        cfg = _load(args)
    except ConfigInvalid as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "pretrain":
            harness.pretrain_models(cfg)
            print(f"models written to {cfg.models_dir}")
            return EXIT_OK
        if args.command == "run":
            report = harness.run_experiment(cfg)
            print(f"results written to {report.output_dir} in {report.wall_clock:.1f} s")
            if report.failures:
                for f in report.failures:
                    print(f"failed cell {f}", file=sys.stderr)
                return EXIT_CELL_FAILURES
            return EXIT_OK
        if args.command == "dump-surface":
            stem = harness.dump_surface(cfg, glyph=args.glyph, n=args.size)
            print(f"surface written to {stem}.csv and {stem}.pgm")
            return EXIT_OK
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Exit codes: 0 on success, 1 on validation/usage errors, 2 when a run
diverged.  Seed precedence: --seed flag > ACLLFT_SEED environment
variable > config file.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ExperimentConfig, apply_overrides, load_config
from .errors import DivergenceError, ValidationError
from . import harness

SEED_ENV_VAR = "ACLLFT_SEED"


class _UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract is exit 1
        raise _UsageError(f"{message}\n\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="spectx",
                     description="Adaptive context-length experiments")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", help="path to a key=value config file")
        p.add_argument("--seed", type=int, help="override the config seed list")
        p.add_argument("--out", help="override the output directory")

    p_train = sub.add_parser("train", help="train on the configured environment")
    common(p_train)
    p_train.add_argument("--tag", help="run tag (subdirectory name)")
    p_train.add_argument("--fixed-length", type=int,
                         help="train a fixed-context baseline at this length")
    p_train.add_argument("--episodes", type=int, help="override trainer.episodes")
    p_train.add_argument("--force", action="store_true",
                         help="overwrite an existing run with the same config hash")

    p_eval = sub.add_parser("eval", help="evaluate a trained checkpoint")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, default=30)

    p_spec = sub.add_parser("spectral-demo", help="decompose a CSV of feature columns")
    common(p_spec)
    p_spec.add_argument("--input", required=True, help="CSV, one column per feature")
    p_spec.add_argument("--level", type=int, default=1, help="low-pass cutoff level m")
    p_spec.add_argument("--mode", choices=["literal", "exact"], default="exact")

    p_thm = sub.add_parser("theorem-check",
                           help="fixed vs adaptive cumulative-loss benchmark")
    common(p_thm)

    p_cmp = sub.add_parser("compare-fixed",
                           help="post-convergence table: adaptive vs fixed lengths")
    common(p_cmp)
    p_cmp.add_argument("--lengths", default="0,1,2,4",
                       help="comma-separated fixed lengths to include")
    p_cmp.add_argument("--window", type=float, default=0.2,
                       help="trailing fraction of eval points to average")

    p_case = sub.add_parser("case-log", help="emit the per-step decision log")
    common(p_case)
    p_case.add_argument("--checkpoint", required=True)
    p_case.add_argument("--episodes", type=int, default=5)
    p_case.add_argument("--log", help="output CSV path (default <out>/case_log.csv)")
    return parser


def _resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seeds"] = str(args.seed)
    elif os.environ.get(SEED_ENV_VAR):
        overrides["seeds"] = os.environ[SEED_ENV_VAR]
    if getattr(args, "tag", None):
        overrides["run_tag"] = args.tag
    if getattr(args, "episodes", None) is not None and args.command == "train":
        overrides["trainer.episodes"] = str(args.episodes)
    if getattr(args, "fixed_length", None) is not None:
        overrides["central.fixed_length"] = str(args.fixed_length)
        if "run_tag" not in overrides:
            overrides["run_tag"] = f"fixed_{args.fixed_length}"
    config = apply_overrides(config, overrides)
    config.validate()
    return config


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError(parser.format_usage())
        config = _resolve_config(args)
        if args.command == "train":
            manifest = harness.train_run(config, force=args.force)
            print(f"trained seeds {manifest['seeds']} -> {harness.run_dir(config)}")
        elif args.command == "eval":
            summary = harness.eval_run(config, args.checkpoint, args.episodes,
                                       seed=config.seeds[0])
            print(f"eval mean_return={summary['mean_return']:.6g} "
                  f"std={summary['std_return']:.6g} "
                  f"length_entropy={summary['length_entropy']:.6g}")
        elif args.command == "spectral-demo":
            summary = harness.spectral_demo(args.input, args.level, args.mode,
                                            config.out_dir)
            print(f"decomposed t={summary['t']} mode={summary['mode']} "
                  f"residual={summary['residual_indices']} "
                  f"reconstruction_error={summary['reconstruction_error']:.3e}")
        elif args.command == "theorem-check":
            summary = harness.theorem_check(config, config.out_dir)
            print(f"theorem-check gap_at_T={summary['gap_at_T']:.6g} "
                  f"(outputs in {config.out_dir})")
        elif args.command == "compare-fixed":
            lengths = [int(x) for x in args.lengths.split(",") if x.strip()]
            header, rows = harness.compare_fixed(config, lengths, args.window)
            print(",".join(header))
            for row in rows:
                print(",".join(str(row[col]) for col in header))
        elif args.command == "case-log":
            log_path = args.log or os.path.join(config.out_dir, "case_log.csv")
            os.makedirs(os.path.dirname(log_path) or ".", exist_ok=True)
            harness.case_log(config, args.checkpoint, args.episodes,
                             seed=config.seeds[0], out_path=log_path)
            print(f"decision log -> {log_path}")
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

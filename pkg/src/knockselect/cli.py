"""Command-line entry point: ``knockselect {select,ablate,eval}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import DataError, SplitSpec, split
from .evaluation import comparator_masks, compare, default_models, mean_ranks, write_comparison_csv, write_json
from .nn import NumericalError
from .pipeline import (
    FINAL_MASK_RULES, ConfigError, RunError, config_from, load_for, read_config_file, run_ablation_suite,
    run_select,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _add_run_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run")
    g.add_argument("--config", help="flat key = value file; command-line flags win")
    g.add_argument("--data", help="CSV file with a header row")
    g.add_argument("--task", choices=["c", "r"])
    g.add_argument("--target", help="target column name (omit for a purely unsupervised run)")
    g.add_argument("--episodes", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--eps1", type=float, help="uniform random exploration share")
    g.add_argument("--eps2", type=float, help="pseudo-label exploration share")
    g.add_argument("--eps-decay", type=float)
    g.add_argument("--tau", type=float, help="knockoff penalty decay")
    g.add_argument("--threshold", choices=["mean", "median"])
    g.add_argument("--reward-variant", choices=["compare", "reconstruct-original"])
    g.add_argument("--rmr-reduction", choices=["sum", "mean"])
    g.add_argument("--final-mask", choices=list(FINAL_MASK_RULES))
    g.add_argument("--out", help="output directory for reports")
    flags = p.add_argument_group("switches")
    for name, help_text in [
        ("no-pretrain", "skip the pseudo-label warm start"),
        ("no-knockoff-reward", "drop the knockoff-label penalty"),
        ("no-greedy-guidance", "no pseudo-label branch in exploration"),
        ("no-matrix-reward", "drop the representation-gap reward"),
        ("random-reward", "replace the whole reward with U(-1, 1)"),
        ("rmr-every-episode", "representation-gap reward at episode end only"),
        ("full-retrain", "retrain subset autoencoders from scratch"),
        ("shuffle-order", "shuffle the feature visit order each episode"),
        ("compare-random-reward", "add a random-reward run as a comparator"),
        ("trace", "write per-step reward and action logs"),
        ("dump-knockoffs", "write the knockoff matrix and labels"),
        ("dump-encodings", "write autoencoder codes of visited subsets"),
    ]:
        flags.add_argument(f"--{name}", action="store_true", default=None, help=help_text)
    flags.add_argument("--no-eval", dest="evaluate", action="store_false", default=None,
                       help="skip downstream evaluation")


def _config(args, **extra):
    base = read_config_file(args.config) if args.config else {}
    keys = ["data", "task", "target", "episodes", "seed", "eps1", "eps2", "eps_decay", "tau", "threshold",
            "reward_variant", "rmr_reduction", "final_mask", "out", "no_pretrain", "no_knockoff_reward",
            "no_greedy_guidance", "no_matrix_reward", "random_reward", "rmr_every_episode", "full_retrain",
            "shuffle_order", "compare_random_reward", "trace", "dump_knockoffs", "dump_encodings", "evaluate"]
    return config_from(base, **{k: getattr(args, k) for k in keys}, **extra)


def _print_report(report: dict) -> None:
    names = report["dataset"]["feature_names"]
    print(f"selected {sum(report['mask'])}/{len(names)} features ({report['mask_source']}): "
          + ", ".join(report["selected_features"]))
    for row in report.get("comparison", []):
        print(f"  {row['model']:<20} {row['method']:<14} {row['value']:.6g}  rank {row['rank']}")
    if "mean_ranks" in report:
        print("  mean ranks: " + ", ".join(f"{k}={v:.2f}" for k, v in report["mean_ranks"].items()))


def cmd_select(args) -> int:
    report = run_select(_config(args))
    _print_report(report)
    return EXIT_OK


def cmd_ablate(args) -> int:
    axes = [a for a in args.axes.split(",") if a]
    suite = run_ablation_suite(_config(args), axes, seeds=args.seeds, workers=args.workers)
    for row in suite["table"]:
        mean = "n/a" if row["mean"] is None else f"{row['mean']:.6g}"
        print(f"{row['variant']:<50} mean {mean}  size {row['mean_size']:.1f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read report {args.report}: {exc}") from None
    cfg = config_from(report["config"])
    if cfg.target is None:
        raise ConfigError("the report's run had no target column; nothing to evaluate")
    ds = load_for(cfg)
    if report.get("data_hash") and ds.source_hash != report["data_hash"]:
        print("warning: data file changed since the report was written", file=sys.stderr)
    train, test = split(ds, SplitSpec(cfg.train_fraction, cfg.seed))
    masks = comparator_masks(ds.d, [np.array(report["mask"], dtype=bool)], n_random=cfg.n_random, seed=cfg.seed)
    results = compare(train, test, masks, default_models(ds.task), seed=cfg.seed)
    out = {"report": str(args.report), "comparison": [r.to_dict() for r in results],
           "mean_ranks": mean_ranks(results)}
    _print_report({**report, **out})
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_json(out, Path(args.out) / "evaluation.json")
        write_comparison_csv(results, Path(args.out) / "evaluation.csv", Path(cfg.data).stem)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="knockselect", description="Knockoff-guided unsupervised feature selection.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("select", help="run one selection and evaluate it")
    _add_run_options(s)
    s.set_defaults(func=cmd_select)
    a = sub.add_parser("ablate", help="run a grid of ablation variants over several seeds")
    _add_run_options(a)
    a.add_argument("--axes", required=True,
                   help="comma list: eps, reward_variant, threshold, no_pretrain, no_knockoff_reward, ...")
    a.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    a.add_argument("--workers", type=int, default=1)
    a.set_defaults(func=cmd_ablate)
    e = sub.add_parser("eval", help="re-run downstream evaluation for a saved report")
    e.add_argument("--report", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)
    return p


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, RunError):
        return exit_code_for(exc.cause)
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, FileNotFoundError)):
        return EXIT_DATA
    if isinstance(exc, (NumericalError, np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERIC
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (RunError, ConfigError, DataError, NumericalError, np.linalg.LinAlgError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())

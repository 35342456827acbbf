"""Command-line interface for gp-ada."""

import argparse
import csv
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

from gp_ada import __version__
from gp_ada.bench import BENCH_STRATEGIES, run_bench, write_bench
from gp_ada.config import CONFIG_KEYS, RunConfig, parse_config, parse_overrides
from gp_ada.data import Dataset, generate_synthetic, load_dataset, save_dataset, split_pools
from gp_ada.errors import CheckpointError, ConfigError, GpAdaError
from gp_ada.kernel_gp import compute_pv, write_pv_csv
from gp_ada.loop import AdaptationLoop, RoundMetrics, evaluate, write_metrics
from gp_ada.model import ModelState, load_checkpoint, save_checkpoint
from gp_ada.report import plot_accuracy
from gp_ada.utils import configure_logging, get_output_dir

logger = logging.getLogger(__name__)

SWEEP_HEADER = ["value", "final_accuracy", "budget_spent", "plcs_total"]
_NON_NUMERIC_KEYS = {"strategy", "out", "dataset", "eval_split", "sentry", "committee_sigma"}


def _overrides(args: argparse.Namespace) -> Dict[str, str]:
    overrides = parse_overrides(args.set or [])
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    if args.strategy is not None:
        overrides["strategy"] = args.strategy
    return overrides


def _config(args: argparse.Namespace, extra: Optional[Dict[str, str]] = None) -> RunConfig:
    overrides = _overrides(args)
    overrides.update(extra or {})
    return parse_config(args.config, overrides)


def load_run_dataset(config: RunConfig) -> Dataset:
    """Dataset named by the config, loaded from CSV or generated."""
    if config.dataset_path is not None:
        return load_dataset(config.dataset_path)
    return generate_synthetic(config.synthetic)


def _checked_model(path: str, dataset: Dataset) -> ModelState:
    model = load_checkpoint(path)
    if model.num_classes != dataset.num_classes or model.dim != dataset.dim:
        raise CheckpointError(
            f"{path}: model is {model.num_classes}x{model.dim}, "
            f"dataset needs {dataset.num_classes}x{dataset.dim}"
        )
    return model


def run_experiment(config: RunConfig) -> List[RoundMetrics]:
    """Run one adaptation experiment and write its metrics and checkpoint."""
    dataset = load_run_dataset(config)
    loop = AdaptationLoop(config.loop, dataset)
    metrics = loop.run()

    out_dir = get_output_dir(config.out_dir)
    metrics_path = os.path.join(out_dir, f"metrics_{config.strategy}.csv")
    model_path = os.path.join(out_dir, f"model_{config.strategy}.csv")
    write_metrics(metrics, metrics_path)
    save_checkpoint(loop.model, model_path)
    print(f"Wrote {metrics_path}")
    print(f"Wrote {model_path}")
    return metrics


def cmd_synth(args: argparse.Namespace) -> None:
    config = _config(args)
    if config.synthetic is None:
        raise ConfigError("synth needs synthetic settings, not a dataset path")
    dataset = generate_synthetic(config.synthetic)
    path = os.path.join(get_output_dir(config.out_dir), "dataset.csv")
    save_dataset(dataset, path)
    print(f"Wrote {path}")


def cmd_run(args: argparse.Namespace) -> None:
    metrics = run_experiment(_config(args))
    final = metrics[-1]
    print(f"Final target accuracy: {final.target_accuracy:.4f} (budget spent {final.budget_spent})")


def cmd_gp_probe(args: argparse.Namespace) -> None:
    config = _config(args)
    dataset = load_run_dataset(config)
    model = _checked_model(args.checkpoint, dataset) if args.checkpoint else None
    loop = AdaptationLoop(config.loop, dataset, model=model)
    if model is None:
        loop.warm_up()
    labels, _ = loop.predict(sorted(loop.pool.target_unlabeled_ids))
    pv = compute_pv(loop.pool, dataset, labels, config.loop.jitter)
    path = os.path.join(get_output_dir(config.out_dir), "gp_probe.csv")
    write_pv_csv(pv, labels, path)
    print(f"Wrote {path}")


def cmd_eval(args: argparse.Namespace) -> None:
    config = _config(args)
    dataset = load_run_dataset(config)
    model = _checked_model(args.checkpoint, dataset)
    pool = split_pools(
        dataset,
        config.loop.budget_fraction,
        config.loop.rounds,
        holdout_fraction=config.loop.holdout_fraction,
        seed=config.seed,
    )
    accuracy = evaluate(model, dataset, config.loop.eval_split, pool)
    print(f"{config.loop.eval_split.value} accuracy: {accuracy:.4f}")


def cmd_bench(args: argparse.Namespace) -> None:
    config = _config(args)
    rows = run_bench(
        num_unlabeled=args.num_unlabeled,
        dim=args.dim,
        num_classes=args.classes,
        rounds=args.rounds,
        strategies=BENCH_STRATEGIES,
        budget_fraction=config.loop.budget_fraction,
        seed=config.seed,
    )
    path = os.path.join(get_output_dir(config.out_dir), "bench.csv")
    write_bench(rows, path)
    print(f"Wrote {path}")


def cmd_report(args: argparse.Namespace) -> None:
    config = _config(args)
    path = os.path.join(get_output_dir(config.out_dir), "accuracy.svg")
    plot_accuracy(args.metrics, path)
    print(f"Wrote {path}")


def cmd_sweep(args: argparse.Namespace) -> None:
    if args.param not in CONFIG_KEYS or args.param in _NON_NUMERIC_KEYS:
        raise ConfigError(f"cannot sweep {args.param!r}; pick a numeric config key")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values needs at least one value")

    base = _config(args)
    rows = []
    for value in values:
        config = _config(args, {args.param: value})
        metrics = run_experiment(config)
        final = metrics[-1]
        rows.append(
            [value, repr(final.target_accuracy), final.budget_spent, sum(m.plcs_count for m in metrics)]
        )
        logger.info("Sweep %s=%s: accuracy %.4f", args.param, value, final.target_accuracy)

    path = os.path.join(get_output_dir(base.out_dir), f"sweep_{args.param}.csv")
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        writer.writerows(rows)
    print(f"Wrote {path}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="run seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--strategy", help="query strategy, e.g. gpas_plcs_ucs or random")
    common.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)"
    )
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug")

    parser = argparse.ArgumentParser(
        prog="gp-ada", description="Active domain adaptation with class-wise Gaussian Processes."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset CSV")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", parents=[common], help="run warm-up and all sampling rounds")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gp-probe", parents=[common], help="write per-sample posterior variances")
    p.add_argument("--checkpoint", help="model checkpoint; warm-up training runs if omitted")
    p.set_defaults(func=cmd_gp_probe)

    p = sub.add_parser("eval", parents=[common], help="print the accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="time selection rounds per strategy")
    p.add_argument("--num-unlabeled", type=int, default=5000)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--rounds", type=int, default=3)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", parents=[common], help="plot accuracy over rounds as SVG")
    p.add_argument("metrics", nargs="+", help="RoundMetrics CSV files")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", parents=[common], help="rerun over values of one config key")
    p.add_argument("--param", required=True, help="numeric config key to vary")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        args.func(args)
    except (GpAdaError, OSError) as e:
        print(f"gp-ada: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

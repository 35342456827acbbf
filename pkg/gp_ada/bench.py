"""Query-time benchmark of the selection strategies."""

import csv
import logging
import math
from dataclasses import dataclass
from typing import List, Sequence

from gp_ada.data import Dataset, SyntheticSpec, generate_synthetic
from gp_ada.loop import AdaptationLoop, EvalSplit, LoopConfig

logger = logging.getLogger(__name__)

BENCH_HEADER = ["strategy", "round", "num_unlabeled", "selection_ms"]
BENCH_STRATEGIES = ("gpas", "gpas_plcs", "entropy", "random")


@dataclass
class BenchRow:
    strategy: str
    round: int
    num_unlabeled: int
    selection_ms: float


def bench_dataset(num_unlabeled: int, dim: int, num_classes: int, seed: int = 0) -> Dataset:
    """Synthetic dataset whose target pool holds at least ``num_unlabeled`` samples."""
    spec = SyntheticSpec(
        num_classes=num_classes,
        dim=dim,
        per_class_per_domain=math.ceil(num_unlabeled / num_classes),
        seed=seed,
    )
    spec.validate()
    return generate_synthetic(spec)


def run_bench(
    num_unlabeled: int = 5000,
    dim: int = 64,
    num_classes: int = 10,
    rounds: int = 3,
    strategies: Sequence[str] = BENCH_STRATEGIES,
    budget_fraction: float = 0.05,
    seed: int = 0,
) -> List[BenchRow]:
    """Time ``rounds`` selection rounds of each strategy on one synthetic dataset.

    Only harvesting and querying are timed; no training runs between rounds,
    so every strategy sees the same initial head.
    """
    dataset = bench_dataset(num_unlabeled, dim, num_classes, seed)
    rows = []
    for strategy in strategies:
        config = LoopConfig(
            rounds=rounds,
            budget_fraction=budget_fraction,
            warmup_epochs=0,
            seed=seed,
            strategy=strategy,
            holdout_fraction=0.0,
            eval_split=EvalSplit.TARGET_ALL,
        )
        loop = AdaptationLoop(config, dataset)
        for r in range(1, rounds + 1):
            pool_size = len(loop.pool.target_unlabeled_ids)
            _, _, _, selection_ms = loop.sample(r)
            rows.append(BenchRow(strategy, r, pool_size, selection_ms))
            logger.info("%s round %d: %d unlabeled, %.1f ms", strategy, r, pool_size, selection_ms)
    return rows


def write_bench(rows: Sequence[BenchRow], path: str) -> None:
    """Write benchmark rows as CSV."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(BENCH_HEADER)
        for row in rows:
            writer.writerow([row.strategy, row.round, row.num_unlabeled, f"{row.selection_ms:.3f}"])
    logger.info("Wrote %d benchmark rows to %s", len(rows), path)

"""Round-based active domain adaptation: warm-up, harvesting, querying and training."""

import csv
import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from gp_ada.baselines import entropy_select, random_select
from gp_ada.data import Dataset, Domain, PoolState, split_pools
from gp_ada.errors import ConfigError, EvaluationError, MetricsFormatError
from gp_ada.kernel_gp import DEFAULT_JITTER, PosteriorVarianceVector, compute_pv
from gp_ada.model import (
    ModelState,
    OptimizerConfig,
    committee_consistency,
    default_committee_sigma,
    init_model,
    pseudo_labels,
    sgd_step,
    total_loss,
)
from gp_ada.sampling import (
    ClassUncertaintyState,
    QuerySelection,
    class_balanced_resample,
    gpas_select,
    plcs_select,
    ucs_resample,
    ucs_update,
)
from gp_ada.utils import (
    STREAM_COMMITTEE,
    STREAM_QUERY,
    STREAM_RESAMPLE,
    STREAM_SHUFFLE,
    make_rng,
)

logger = logging.getLogger(__name__)

METRICS_HEADER = [
    "round",
    "queried_ids",
    "plcs_count",
    "budget_spent",
    "target_accuracy",
    "mean_pv",
    "selection_ms",
    "train_loss",
]


class EvalSplit(str, Enum):
    TARGET_ALL = "target_all"
    TARGET_EVAL = "target_eval"


@dataclass(frozen=True)
class StrategyPlan:
    """Which query rule runs and whether PLCS and UCS are switched on."""

    query: str
    use_plcs: bool
    use_ucs: bool


STRATEGIES: Dict[str, StrategyPlan] = {
    "gpas_plcs_ucs": StrategyPlan("gpas", use_plcs=True, use_ucs=True),
    "gpas_ucs": StrategyPlan("gpas", use_plcs=False, use_ucs=True),
    "gpas": StrategyPlan("gpas", use_plcs=False, use_ucs=False),
    "random": StrategyPlan("random", use_plcs=False, use_ucs=False),
    "entropy": StrategyPlan("entropy", use_plcs=False, use_ucs=False),
    "uda": StrategyPlan("none", use_plcs=False, use_ucs=False),
    "gpas_plcs": StrategyPlan("gpas", use_plcs=True, use_ucs=False),
    "random_plcs": StrategyPlan("random", use_plcs=True, use_ucs=False),
    "entropy_plcs": StrategyPlan("entropy", use_plcs=True, use_ucs=False),
}


def resolve_strategy(name: str) -> StrategyPlan:
    try:
        return STRATEGIES[name]
    except KeyError:
        raise ConfigError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}") from None


@dataclass(frozen=True)
class CommitteeConfig:
    """Perturbation committee; sigma None means 0.1 · mean feature norm / √d."""

    size: int = 3
    sigma: Optional[float] = None


@dataclass(frozen=True)
class LoopConfig:
    """Inputs of the adaptation loop.

    The per-round budget b is derived from ``budget_fraction`` and ``rounds``
    (see PoolState.round_budget).
    """

    rounds: int = 5
    budget_fraction: float = 0.05
    kappa_start: float = 1.0
    kappa_step: float = 1.0
    warmup_epochs: int = 5
    epochs_per_round: int = 3
    alpha: float = 0.9
    lam: float = 1.0
    jitter: float = DEFAULT_JITTER
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    committee: CommitteeConfig = field(default_factory=CommitteeConfig)
    seed: int = 0
    strategy: str = "gpas_plcs_ucs"
    sentry: bool = True
    holdout_fraction: float = 0.2
    eval_split: EvalSplit = EvalSplit.TARGET_EVAL

    def validate(self) -> None:
        """Raise ConfigError if any field is out of range."""
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")
        if self.epochs_per_round < 1:
            raise ConfigError("epochs_per_round must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha {self.alpha} outside [0, 1]")
        if not 0.0 <= self.kappa_start <= 100.0 or not 0.0 <= self.kappa_step <= 100.0:
            raise ConfigError("kappa_start and kappa_step must be in [0, 100]")
        if not self.jitter > 0:
            raise ConfigError("jitter must be > 0")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.committee.size < 1 or self.committee.size % 2 == 0:
            raise ConfigError("committee_size must be odd and >= 1")
        if self.committee.sigma is not None and self.committee.sigma < 0:
            raise ConfigError("committee_sigma must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if EvalSplit(self.eval_split) is EvalSplit.TARGET_EVAL and not self.holdout_fraction > 0:
            raise ConfigError("eval_split=target_eval needs holdout_fraction > 0")
        self.optimizer.validate()
        resolve_strategy(self.strategy)


@dataclass
class RoundMetrics:
    """Measurements of one sampling round."""

    round: int
    queried_ids: List[int]
    plcs_count: int
    budget_spent: int
    target_accuracy: float
    mean_pv: float
    selection_ms: float
    train_loss: float

    def to_row(self) -> List[str]:
        return [
            str(self.round),
            ";".join(str(i) for i in self.queried_ids),
            str(self.plcs_count),
            str(self.budget_spent),
            repr(float(self.target_accuracy)),
            repr(float(self.mean_pv)),
            f"{self.selection_ms:.3f}",
            repr(float(self.train_loss)),
        ]


def write_metrics(metrics: Sequence[RoundMetrics], path: str) -> None:
    """Write RoundMetrics as CSV."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for m in metrics:
            writer.writerow(m.to_row())
    logger.info("Wrote %d rounds of metrics to %s", len(metrics), path)


def read_metrics(path: str) -> List[RoundMetrics]:
    """Read a RoundMetrics CSV.

    Raises:
        MetricsFormatError: On a wrong header or an unparsable field.
    """
    try:
        with open(path, newline="", encoding="utf-8") as f:
            text = f.read()
    except UnicodeDecodeError:
        raise MetricsFormatError(f"{path}: not valid UTF-8 text") from None
    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    if header != METRICS_HEADER:
        raise MetricsFormatError(f"{path}: header must be {','.join(METRICS_HEADER)}")
    metrics = []
    for line, row in enumerate(reader, start=2):
        if len(row) != len(METRICS_HEADER):
            raise MetricsFormatError(f"{path}:{line}: expected {len(METRICS_HEADER)} fields")
        try:
            metrics.append(
                RoundMetrics(
                    round=int(row[0]),
                    queried_ids=[int(i) for i in row[1].split(";") if i],
                    plcs_count=int(row[2]),
                    budget_spent=int(row[3]),
                    target_accuracy=float(row[4]),
                    mean_pv=float(row[5]),
                    selection_ms=float(row[6]),
                    train_loss=float(row[7]),
                )
            )
        except ValueError as e:
            raise MetricsFormatError(f"{path}:{line}: {e}") from None
    return metrics


def query_oracle(pool: PoolState, dataset: Dataset, ids: Sequence[int]) -> Dict[int, int]:
    """Reveal true labels of unlabeled target ids and charge them to the budget.

    Raises:
        PoolError: If an id is not in the unlabeled pool.
        BudgetError: If the query would overrun the budget.
    """
    ids = list(ids)
    pool.mark_queried(ids)
    return {i: int(label) for i, label in zip(ids, dataset.labels(ids))}


def evaluate(
    model: ModelState,
    dataset: Dataset,
    split: EvalSplit = EvalSplit.TARGET_ALL,
    pool: Optional[PoolState] = None,
) -> float:
    """Fraction of correct argmax predictions on a target split.

    Raises:
        EvaluationError: If the split is empty.
    """
    if model.dim != dataset.dim or model.num_classes != dataset.num_classes:
        raise ValueError("model shape does not match dataset")
    if EvalSplit(split) is EvalSplit.TARGET_ALL:
        ids = dataset.ids(Domain.TARGET)
    else:
        ids = sorted(pool.holdout_ids) if pool is not None else []
    if not ids:
        raise EvaluationError(f"split {EvalSplit(split).value} is empty")
    predicted, _ = pseudo_labels(model, dataset.features(ids))
    return float(np.mean(predicted == dataset.labels(ids)))


class AdaptationLoop:
    """Runs warm-up and sampling rounds over one dataset, owning pool and model state."""

    def __init__(self, config: LoopConfig, dataset: Dataset, model: Optional[ModelState] = None):
        """Initialize the loop.

        Args:
            config: Loop configuration.
            dataset: Source and target records.
            model: Starting head; Xavier-initialised from the seed if omitted.
        """
        config.validate()
        self.config = config
        self.dataset = dataset
        self.plan = resolve_strategy(config.strategy)
        self.pool = split_pools(
            dataset,
            config.budget_fraction,
            config.rounds,
            holdout_fraction=config.holdout_fraction,
            seed=config.seed,
        )
        self.model = model or init_model(dataset.num_classes, dataset.dim, config.seed)
        self.uncertainty = ClassUncertaintyState.initial(dataset.num_classes, config.alpha)
        self.sigma = (
            config.committee.sigma
            if config.committee.sigma is not None
            else default_committee_sigma(dataset.feature_matrix)
        )

    def predict(self, ids: Sequence[int]) -> Tuple[Dict[int, int], Dict[int, float]]:
        """Pseudo-labels and confidences of ids under the current head."""
        ids = list(ids)
        if not ids:
            return {}, {}
        classes, confidence = pseudo_labels(self.model, self.dataset.features(ids))
        return (
            {i: int(c) for i, c in zip(ids, classes)},
            {i: float(p) for i, p in zip(ids, confidence)},
        )

    def _labeled_streams(self, rng: np.random.Generator) -> Tuple[Tuple[np.ndarray, np.ndarray], ...]:
        """Shuffled (features, labels) of the source set and of the labeled target set.

        Labeled target rows are queried ids with their true labels followed by
        harvested ids with their stored pseudo-labels.
        """
        source_ids = sorted(self.pool.source_ids)
        queried_ids = sorted(self.pool.target_queried_ids)
        plcs_ids = sorted(self.pool.target_plcs_labels)
        streams = []
        for ids, labels in (
            (source_ids, self.dataset.labels(source_ids)),
            (
                queried_ids + plcs_ids,
                np.concatenate(
                    [
                        self.dataset.labels(queried_ids),
                        np.array([self.pool.target_plcs_labels[i] for i in plcs_ids], dtype=np.int64),
                    ]
                ),
            ),
        ):
            order = rng.permutation(len(ids))
            streams.append((self.dataset.features(ids)[order], np.asarray(labels, dtype=np.int64)[order]))
        return tuple(streams)

    def _target_epoch_list(self, round_index: int, epoch: int) -> List[int]:
        target_ids = sorted(self.pool.target_unlabeled_ids)
        if not target_ids:
            return []
        labels, _ = self.predict(target_ids)
        rng = make_rng(self.config.seed, STREAM_RESAMPLE, round_index, epoch)
        if self.plan.use_ucs:
            pv = compute_pv(self.pool, self.dataset, labels, self.config.jitter)
            self.uncertainty = ucs_update(self.uncertainty, pv, labels)
            return ucs_resample(target_ids, labels, self.uncertainty, rng, balance_classes=True)
        return class_balanced_resample(target_ids, labels, rng)

    def train_epoch(self, round_index: int, epoch: int) -> float:
        """One pass of supervised + consistency-entropy training; returns the mean loss.

        Every step takes one batch from the source set and, once target labels
        exist, one batch from the labeled target set; both go into the
        cross-entropy term.
        """
        cfg = self.config
        batch = cfg.optimizer.batch_size
        lam = cfg.lam if cfg.sentry else 0.0
        target_list = self._target_epoch_list(round_index, epoch) if lam > 0 else []

        streams = self._labeled_streams(make_rng(cfg.seed, STREAM_SHUFFLE, round_index, epoch))
        target_X = self.dataset.features(target_list)

        steps = math.ceil(max(len(target_list), *(len(y) for _, y in streams)) / batch)
        committee_rng = make_rng(cfg.seed, STREAM_COMMITTEE, round_index, epoch)
        losses = []
        for step in range(steps):
            window = np.arange(step * batch, (step + 1) * batch)
            filled = [(X[window % len(y)], y[window % len(y)]) for X, y in streams if len(y)]
            Xl = np.concatenate([X for X, _ in filled]) if filled else streams[0][0]
            yl = np.concatenate([y for _, y in filled]) if filled else streams[0][1]
            if len(target_list):
                Xu = target_X[window % len(target_list)]
                consistent, _ = committee_consistency(
                    self.model, Xu, cfg.committee.size, self.sigma, committee_rng
                )
            else:
                Xu, consistent = np.zeros((0, self.dataset.dim)), []
            result = total_loss(
                self.model,
                Xl,
                yl,
                Xu,
                consistent,
                lam=lam,
                sigma=self.sigma,
                seed=int(committee_rng.integers(2**31)),
            )
            self.model = sgd_step(self.model, result.gradients, cfg.optimizer)
            losses.append(result.value)

        mean_loss = float(np.mean(losses)) if losses else 0.0
        logger.debug("Round %d epoch %d: loss %.6f over %d steps", round_index, epoch, mean_loss, steps)
        return mean_loss

    def warm_up(self) -> None:
        """Source + consistency training before the first round."""
        for epoch in range(self.config.warmup_epochs):
            self.train_epoch(0, epoch)

    def kappa(self, round_index: int) -> float:
        """κ at a 1-based round: kappa_start + (r−1)·kappa_step, capped at 100."""
        return min(100.0, self.config.kappa_start + (round_index - 1) * self.config.kappa_step)

    def harvest(self, round_index: int) -> int:
        """Move the most confident κ% per pseudo-class into the pseudo-labeled set."""
        labels, confidence = self.predict(sorted(self.pool.target_ids))
        self.pool.refresh_pseudo_labels(labels)
        base_counts = Counter(labels.values())
        candidates = {
            i: (labels[i], confidence[i]) for i in sorted(self.pool.target_unlabeled_ids)
        }
        selection = plcs_select(candidates, self.kappa(round_index), base_counts)
        self.pool.add_pseudo_labeled(selection.labels())
        return len(selection)

    def select(self, round_index: int, b: int) -> Tuple[QuerySelection, Optional[PosteriorVarianceVector]]:
        """Choose this round's query set with the configured rule."""
        candidates = sorted(self.pool.target_unlabeled_ids)
        if self.plan.query == "gpas":
            labels, _ = self.predict(candidates)
            pv = compute_pv(self.pool, self.dataset, labels, self.config.jitter)
            return gpas_select(pv, b), pv
        if self.plan.query == "random":
            rng = make_rng(self.config.seed, STREAM_QUERY, round_index)
            return random_select(candidates, b, rng), None
        if self.plan.query == "entropy":
            return entropy_select(self.model, self.dataset, candidates, b), None
        return QuerySelection(ids=[], pv_values=[]), None

    def sample(self, round_index: int) -> Tuple[QuerySelection, Optional[PosteriorVarianceVector], int, float]:
        """Harvest and query one round without training.

        Returns:
            The query selection, the posterior variances it used (if any),
            the number of harvested samples and the selection time in ms.
        """
        started = time.perf_counter()
        plcs_count = self.harvest(round_index) if self.plan.use_plcs else 0
        b = self.pool.round_budget(round_index) if self.plan.query != "none" else 0
        selection, pv = self.select(round_index, b)
        selection_ms = (time.perf_counter() - started) * 1000.0

        if len(selection) < b:
            logger.warning("Round %d: only %d candidates for a budget of %d", round_index, len(selection), b)
        query_oracle(self.pool, self.dataset, selection.ids)
        self.pool.check_invariants(self.dataset)
        return selection, pv, plcs_count, selection_ms

    def run_round(self, round_index: int) -> RoundMetrics:
        """Harvest, query, train and measure one round."""
        selection, pv, plcs_count, selection_ms = self.sample(round_index)

        losses = [self.train_epoch(round_index, e) for e in range(self.config.epochs_per_round)]
        accuracy = evaluate(self.model, self.dataset, self.config.eval_split, self.pool)
        mean_pv = float(pv.pv.mean()) if pv is not None and len(pv) else math.nan

        metrics = RoundMetrics(
            round=round_index,
            queried_ids=list(selection.ids),
            plcs_count=plcs_count,
            budget_spent=self.pool.budget_spent,
            target_accuracy=accuracy,
            mean_pv=mean_pv,
            selection_ms=selection_ms,
            train_loss=float(np.mean(losses)),
        )
        logger.info(
            "Round %d: kappa %g, %d harvested, %d queried (spent %d/%d), accuracy %.4f, selection %.1f ms",
            round_index,
            self.kappa(round_index),
            plcs_count,
            len(selection),
            self.pool.budget_spent,
            self.pool.budget_total,
            accuracy,
            selection_ms,
        )
        return metrics

    def run(self) -> List[RoundMetrics]:
        """Warm up, then run every round."""
        self.warm_up()
        return [self.run_round(r) for r in range(1, self.config.rounds + 1)]


def run_ada(config: LoopConfig, dataset: Dataset) -> List[RoundMetrics]:
    """Run the full adaptation loop and return per-round metrics."""
    return AdaptationLoop(config, dataset).run()

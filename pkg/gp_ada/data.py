"""Dataset ingestion, pool partition and synthetic domain-shift data."""

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, List, Sequence, Set

import numpy as np

from gp_ada.errors import BudgetError, ConfigError, DatasetError, DatasetParseError, PoolError
from gp_ada.utils import STREAM_SPLIT, make_rng

logger = logging.getLogger(__name__)

HEADER_PREFIX = ["id", "domain", "label"]


class Domain(str, Enum):
    """Which domain a record comes from."""

    SOURCE = "source"
    TARGET = "target"


@dataclass(frozen=True)
class FeatureRecord:
    """One sample: id, domain tag, ground-truth class and feature vector."""

    id: int
    domain: Domain
    true_label: int
    features: np.ndarray


@dataclass
class Dataset:
    """Source and target records sharing one feature dimensionality."""

    records: List[FeatureRecord]
    num_classes: int
    dim: int

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Check the dataset invariants.

        Raises:
            DatasetError: If any invariant is violated.
        """
        if self.num_classes < 2:
            raise DatasetError(f"need at least 2 classes, got {self.num_classes}")
        if self.dim < 1:
            raise DatasetError(f"need at least 1 feature dimension, got {self.dim}")

        seen: Set[int] = set()
        source_classes: Set[int] = set()
        for record in self.records:
            if record.id < 0:
                raise DatasetError(f"record id {record.id} is negative")
            if record.id in seen:
                raise DatasetError(f"duplicate record id {record.id}")
            seen.add(record.id)
            if not 0 <= record.true_label < self.num_classes:
                raise DatasetError(
                    f"record {record.id} has label {record.true_label} outside [0, {self.num_classes})"
                )
            if record.features.shape != (self.dim,):
                raise DatasetError(
                    f"record {record.id} has {record.features.size} features, expected {self.dim}"
                )
            if not np.all(np.isfinite(record.features)):
                raise DatasetError(f"record {record.id} has non-finite features")
            if not np.linalg.norm(record.features) > 0:
                raise DatasetError(f"record {record.id} has a zero-norm feature vector")
            if record.domain is Domain.SOURCE:
                source_classes.add(record.true_label)

        missing = sorted(set(range(self.num_classes)) - source_classes)
        if missing:
            raise DatasetError(f"no source records for classes {missing}")

    @cached_property
    def _row_of(self) -> Dict[int, int]:
        return {record.id: row for row, record in enumerate(self.records)}

    @cached_property
    def feature_matrix(self) -> np.ndarray:
        """All features stacked in record order, shape (N, d)."""
        if not self.records:
            return np.zeros((0, self.dim))
        return np.vstack([record.features for record in self.records])

    @cached_property
    def label_vector(self) -> np.ndarray:
        """All ground-truth labels in record order."""
        return np.array([record.true_label for record in self.records], dtype=np.int64)

    def ids(self, domain: Domain) -> List[int]:
        """Ids of one domain in ascending order."""
        return sorted(record.id for record in self.records if record.domain is domain)

    def record(self, record_id: int) -> FeatureRecord:
        """Look up a record by id."""
        return self.records[self._row_of[record_id]]

    def features(self, ids: Sequence[int]) -> np.ndarray:
        """Feature rows for ids, in the given order, shape (len(ids), d)."""
        rows = [self._row_of[i] for i in ids]
        return self.feature_matrix[rows] if rows else np.zeros((0, self.dim))

    def labels(self, ids: Sequence[int]) -> np.ndarray:
        """Ground-truth labels for ids; callers other than the oracle must not peek at target labels."""
        rows = [self._row_of[i] for i in ids]
        return self.label_vector[rows] if rows else np.zeros(0, dtype=np.int64)


@dataclass
class PoolState:
    """The evolving partition of a dataset into source, labeled target and unlabeled target.

    Target records held out for evaluation are kept in ``holdout_ids`` and never
    enter any pool.
    """

    source_ids: Set[int]
    target_queried_ids: Set[int]
    target_plcs_labels: Dict[int, int]
    target_unlabeled_ids: Set[int]
    budget_total: int
    rounds: int
    holdout_ids: Set[int] = field(default_factory=set)
    budget_spent: int = 0

    @property
    def target_plcs_ids(self) -> Set[int]:
        """Ids harvested by confident pseudo-labeling."""
        return set(self.target_plcs_labels)

    @property
    def target_ids(self) -> Set[int]:
        """Every target id taking part in adaptation."""
        return self.target_queried_ids | self.target_plcs_ids | self.target_unlabeled_ids

    def round_budget(self, round_index: int) -> int:
        """Number of queries allowed in a 1-based round; the final round takes the remainder."""
        if not 1 <= round_index <= self.rounds:
            raise ValueError(f"round {round_index} outside 1..{self.rounds}")
        per_round = self.budget_total // self.rounds
        if round_index == self.rounds:
            return self.budget_total - per_round * (self.rounds - 1)
        return per_round

    def add_pseudo_labeled(self, labels: Dict[int, int]) -> None:
        """Move unlabeled ids into the pseudo-labeled set; the budget ledger is untouched."""
        outside = sorted(set(labels) - self.target_unlabeled_ids)
        if outside:
            raise PoolError(f"ids {outside[:5]} are not in the unlabeled target pool")
        for record_id, label in labels.items():
            self.target_unlabeled_ids.discard(record_id)
            self.target_plcs_labels[record_id] = int(label)

    def refresh_pseudo_labels(self, labels: Dict[int, int]) -> None:
        """Overwrite stored pseudo-labels of already harvested ids."""
        for record_id in self.target_plcs_labels:
            if record_id in labels:
                self.target_plcs_labels[record_id] = int(labels[record_id])

    def mark_queried(self, ids: Sequence[int]) -> None:
        """Move unlabeled ids into the queried set and charge the budget.

        Raises:
            PoolError: If an id is not currently unlabeled or repeats.
            BudgetError: If the query would overrun the budget.
        """
        if len(set(ids)) != len(ids):
            raise PoolError("query contains repeated ids")
        not_unlabeled = [i for i in ids if i not in self.target_unlabeled_ids]
        if not_unlabeled:
            raise PoolError(f"ids {sorted(not_unlabeled)[:5]} are not in the unlabeled target pool")
        if self.budget_spent + len(ids) > self.budget_total:
            raise BudgetError(
                f"query of {len(ids)} exceeds budget: spent {self.budget_spent} of {self.budget_total}"
            )
        for record_id in ids:
            self.target_unlabeled_ids.remove(record_id)
            self.target_queried_ids.add(record_id)
        self.budget_spent += len(ids)

    def check_invariants(self, dataset: Dataset) -> None:
        """Verify disjointness, coverage and ledger consistency.

        Raises:
            PoolError: If the partition or ledger is inconsistent.
        """
        groups = [
            self.target_queried_ids,
            self.target_plcs_ids,
            self.target_unlabeled_ids,
            self.holdout_ids,
        ]
        total = sum(len(g) for g in groups)
        union = set().union(*groups)
        if total != len(union):
            raise PoolError("target id sets overlap")
        if union != set(dataset.ids(Domain.TARGET)):
            raise PoolError("target id sets do not cover the target records")
        if self.source_ids != set(dataset.ids(Domain.SOURCE)):
            raise PoolError("source ids do not match the source records")
        if self.budget_spent != len(self.target_queried_ids):
            raise PoolError("budget ledger disagrees with the queried set")
        if self.budget_spent > self.budget_total:
            raise BudgetError("budget overrun")


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic Gaussian source/target generator."""

    num_classes: int = 5
    dim: int = 16
    per_class_per_domain: int = 200
    shift_magnitude: float = 6.0
    rotation_angle: float = 0.5
    noise_sigma: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        """Raise ConfigError if the spec is unusable."""
        if self.num_classes < 2:
            raise ConfigError("synthetic num_classes must be >= 2")
        if self.dim < 1:
            raise ConfigError("synthetic dim must be >= 1")
        if self.per_class_per_domain < 1:
            raise ConfigError("synthetic per_class_per_domain must be >= 1")
        if self.shift_magnitude < 0:
            raise ConfigError("synthetic shift_magnitude must be >= 0")
        if not self.noise_sigma > 0:
            raise ConfigError("synthetic noise_sigma must be > 0")
        if self.seed < 0:
            raise ConfigError("synthetic seed must be non-negative")


def _parse_row(row: List[str], line: int, path: str, dim: int) -> FeatureRecord:
    if len(row) != dim + 3:
        raise DatasetParseError(
            f"row has {max(len(row) - 3, 0)} features, header declares {dim}", path, line
        )
    try:
        record_id = int(row[0])
    except ValueError:
        raise DatasetParseError(f"id {row[0]!r} is not an integer", path, line) from None
    if record_id < 0:
        raise DatasetParseError(f"id {record_id} is negative", path, line)
    try:
        domain = Domain(row[1])
    except ValueError:
        raise DatasetParseError(f"domain {row[1]!r} is not source or target", path, line) from None
    try:
        label = int(row[2])
    except ValueError:
        raise DatasetParseError(f"label {row[2]!r} is not an integer", path, line) from None
    if label < 0:
        raise DatasetParseError(f"label {label} is negative", path, line)
    try:
        features = np.array([float(value) for value in row[3:]], dtype=np.float64)
    except ValueError:
        raise DatasetParseError("non-numeric feature value", path, line) from None
    if not np.all(np.isfinite(features)):
        raise DatasetParseError("non-finite feature value", path, line)
    if not np.linalg.norm(features) > 0:
        raise DatasetParseError("zero-norm feature vector", path, line)
    return FeatureRecord(id=record_id, domain=domain, true_label=label, features=features)


def _decoded_lines(path: str) -> List[str]:
    with open(path, "rb") as f:
        raw_lines = f.read().splitlines()
    lines = []
    for line, raw in enumerate(raw_lines, start=1):
        try:
            lines.append(raw.decode("utf-8"))
        except UnicodeDecodeError:
            raise DatasetParseError("not valid UTF-8 text", path, line) from None
    return lines


def load_dataset(path: str) -> Dataset:
    """Load a dataset CSV.

    Args:
        path: File with header ``id,domain,label,f0,...,f{d-1}``.

    Returns:
        Dataset with records in file order; C is one more than the largest label.

    Raises:
        DatasetParseError: For a missing file or any malformed row.
        DatasetError: If the parsed records violate a dataset invariant.
    """
    if not os.path.isfile(path):
        raise DatasetParseError("file not found", path)

    reader = csv.reader(_decoded_lines(path))
    header = next(reader, None)
    if header is None:
        raise DatasetParseError("file is empty", path, 1)
    dim = len(header) - 3
    expected = HEADER_PREFIX + [f"f{k}" for k in range(dim)]
    if dim < 1 or header != expected:
        raise DatasetParseError("header must be id,domain,label,f0,...,f{d-1}", path, 1)

    records = []
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        records.append(_parse_row(row, line, path, dim))

    if not records:
        raise DatasetParseError("no records", path)

    num_classes = 1 + max(record.true_label for record in records)
    dataset = Dataset(records=records, num_classes=num_classes, dim=dim)
    logger.info(
        "Loaded %d records (%d source, %d target), C=%d, d=%d from %s",
        len(records),
        len(dataset.ids(Domain.SOURCE)),
        len(dataset.ids(Domain.TARGET)),
        num_classes,
        dim,
        path,
    )
    return dataset


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write a dataset in the CSV format read by load_dataset."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HEADER_PREFIX + [f"f{k}" for k in range(dataset.dim)])
        for record in dataset.records:
            writer.writerow(
                [record.id, record.domain.value, record.true_label]
                + [repr(float(value)) for value in record.features]
            )
    logger.info("Wrote %d records to %s", len(dataset.records), path)


def _rotation(dim: int, angle: float) -> np.ndarray:
    rotation = np.eye(dim)
    if dim >= 2:
        c, s = math.cos(angle), math.sin(angle)
        rotation[:2, :2] = [[c, -s], [s, c]]
    return rotation


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Generate a Gaussian class-mixture with a rotated and translated target domain.

    Source class c is centred at m_c; target class c at R(angle)·m_c + shift·u_c
    with a seeded unit direction u_c. The rotation acts on the first two
    dimensions and is the identity when d is 1.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    C, d, n = spec.num_classes, spec.dim, spec.per_class_per_domain

    source_means = rng.standard_normal((C, d))
    directions = rng.standard_normal((C, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    target_means = source_means @ _rotation(d, spec.rotation_angle).T
    target_means += spec.shift_magnitude * directions

    records = []
    next_id = 0
    for domain, means in ((Domain.SOURCE, source_means), (Domain.TARGET, target_means)):
        for c in range(C):
            samples = means[c] + spec.noise_sigma * rng.standard_normal((n, d))
            for row in samples:
                records.append(FeatureRecord(id=next_id, domain=domain, true_label=c, features=row))
                next_id += 1

    dataset = Dataset(records=records, num_classes=C, dim=d)
    logger.info("Generated synthetic dataset: C=%d, d=%d, %d per class per domain", C, d, n)
    return dataset


def split_pools(
    dataset: Dataset,
    budget_fraction: float,
    rounds: int,
    holdout_fraction: float = 0.0,
    seed: int = 0,
) -> PoolState:
    """Put every adaptation target id into the unlabeled pool and size the budget.

    Args:
        dataset: Source and target records.
        budget_fraction: Share of the adaptation target pool that may be queried.
        rounds: Number of sampling rounds sharing the budget.
        holdout_fraction: Share of target records set aside for evaluation only.
        seed: Seed for choosing the held-out records.

    Returns:
        Fresh PoolState.

    Raises:
        ConfigError: For out-of-range arguments or a zero per-round budget.
    """
    if not 0.0 <= budget_fraction <= 1.0:
        raise ConfigError(f"budget_fraction {budget_fraction} outside [0, 1]")
    if rounds < 1:
        raise ConfigError(f"rounds must be >= 1, got {rounds}")
    if not 0.0 <= holdout_fraction < 1.0:
        raise ConfigError(f"holdout_fraction {holdout_fraction} outside [0, 1)")

    target_ids = dataset.ids(Domain.TARGET)
    holdout: Set[int] = set()
    num_holdout = int(math.floor(holdout_fraction * len(target_ids) + 1e-9))
    if num_holdout:
        order = make_rng(seed, STREAM_SPLIT).permutation(len(target_ids))
        holdout = {target_ids[k] for k in order[:num_holdout]}
    pool_ids = [i for i in target_ids if i not in holdout]

    budget_total = int(math.floor(budget_fraction * len(pool_ids) + 1e-9))
    if budget_fraction > 0 and budget_total < rounds:
        raise ConfigError(
            f"budget of {budget_total} queries cannot cover {rounds} rounds "
            f"({len(pool_ids)} target samples, fraction {budget_fraction})"
        )

    pool = PoolState(
        source_ids=set(dataset.ids(Domain.SOURCE)),
        target_queried_ids=set(),
        target_plcs_labels={},
        target_unlabeled_ids=set(pool_ids),
        budget_total=budget_total,
        rounds=rounds,
        holdout_ids=holdout,
    )
    logger.info(
        "Split pools: %d source, %d target, %d held out, budget %d (%d per round)",
        len(pool.source_ids),
        len(pool_ids),
        len(holdout),
        budget_total,
        budget_total // rounds,
    )
    return pool


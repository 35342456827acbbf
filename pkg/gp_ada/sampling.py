"""Confident harvesting, variance-based querying and uncertainty-balanced resampling."""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from gp_ada.kernel_gp import PosteriorVarianceVector

logger = logging.getLogger(__name__)


@dataclass
class ConfidentSelection:
    """Per-class (id, pseudo_label, confidence) triples chosen by PLCS."""

    per_class: Dict[int, List[Tuple[int, int, float]]]
    kappa_used: float

    def labels(self) -> Dict[int, int]:
        """Map of every selected id to its pseudo-label."""
        return {i: label for picks in self.per_class.values() for i, label, _ in picks}

    def __len__(self) -> int:
        return sum(len(picks) for picks in self.per_class.values())


@dataclass
class QuerySelection:
    """Ids picked for annotation, best first, with their scores."""

    ids: List[int]
    pv_values: List[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class ClassUncertaintyState:
    """Per-class EMA of mean posterior variance.

    ``observed[c]`` is False until class c has had members once; the first
    observation initialises U to that epoch's average. A state built from an
    explicit ``u`` counts every class as observed; ``initial`` starts none.
    """

    u: np.ndarray
    alpha: float
    epoch: int = 0
    observed: Optional[np.ndarray] = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.observed is None:
            self.observed = np.ones(self.u.shape[0], dtype=bool)
        self.observed = np.asarray(self.observed, dtype=bool)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha {self.alpha} outside [0, 1]")

    @classmethod
    def initial(cls, num_classes: int, alpha: float) -> "ClassUncertaintyState":
        return cls(u=np.zeros(num_classes), alpha=alpha, observed=np.zeros(num_classes, dtype=bool))


def top_by_score(ids: Sequence[int], scores: Sequence[float], k: int) -> List[int]:
    """Positions of the k highest scores; equal scores go to the smaller id."""
    ids_arr = np.asarray(ids, dtype=np.int64)
    scores_arr = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((ids_arr, -scores_arr))
    return [int(p) for p in order[:k]]


def plcs_select(
    confidences: Mapping[int, Tuple[int, float]],
    kappa: float,
    base_counts: Mapping[int, int],
) -> ConfidentSelection:
    """Select the most confident κ% of each pseudo-class.

    Args:
        confidences: id → (pseudo_label, confidence) over the current unlabeled pool.
        kappa: Percentage in [0, 100].
        base_counts: Per-class count the percentage is taken against.

    Returns:
        For each class, ceil(κ/100·base) ids by descending confidence, capped
        at the members available.
    """
    if not 0.0 <= kappa <= 100.0:
        raise ValueError(f"kappa {kappa} outside [0, 100]")

    members: Dict[int, List[int]] = {}
    for record_id in sorted(confidences):
        label = int(confidences[record_id][0])
        members.setdefault(label, []).append(record_id)

    per_class: Dict[int, List[Tuple[int, int, float]]] = {}
    for c in sorted(set(members) | set(base_counts)):
        ids = members.get(c, [])
        quota = math.ceil(kappa * base_counts.get(c, 0) / 100.0)
        take = min(quota, len(ids))
        scores = [confidences[i][1] for i in ids]
        per_class[c] = [(ids[p], c, float(scores[p])) for p in top_by_score(ids, scores, take)]
    return ConfidentSelection(per_class=per_class, kappa_used=kappa)


def gpas_select(pv: PosteriorVarianceVector, b: int) -> QuerySelection:
    """Take the b samples with the largest posterior variance, largest first."""
    if b < 0:
        raise ValueError(f"b must be non-negative, got {b}")
    positions = top_by_score(pv.ids, pv.pv, min(b, len(pv.ids)))
    return QuerySelection(
        ids=[pv.ids[p] for p in positions],
        pv_values=[float(pv.pv[p]) for p in positions],
    )


def class_average_pv(
    pv: PosteriorVarianceVector, pseudo_labels: Mapping[int, int], num_classes: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Mean variance per pseudo-class and the member count of each class."""
    sums = np.zeros(num_classes)
    counts = np.zeros(num_classes, dtype=np.int64)
    for record_id, value in zip(pv.ids, pv.pv):
        c = int(pseudo_labels[record_id])
        sums[c] += value
        counts[c] += 1
    averages = np.divide(sums, counts, out=np.zeros(num_classes), where=counts > 0)
    return averages, counts


def ucs_update(
    state: ClassUncertaintyState,
    pv: PosteriorVarianceVector,
    pseudo_labels: Mapping[int, int],
) -> ClassUncertaintyState:
    """One EMA step: U_n = α·U_{n−1} + (1−α)·AV_n for classes with members."""
    averages, counts = class_average_pv(pv, pseudo_labels, state.u.shape[0])
    u = state.u.copy()
    observed = state.observed.copy()
    present = counts > 0
    first = present & ~observed
    again = present & observed
    u[first] = averages[first]
    u[again] = state.alpha * state.u[again] + (1.0 - state.alpha) * averages[again]
    observed |= present
    return ClassUncertaintyState(u=u, alpha=state.alpha, epoch=state.epoch + 1, observed=observed)


def _weighted_draw(ids: Sequence[int], weights: np.ndarray, seed) -> List[int]:
    if len(ids) == 0:
        return []
    total = weights.sum()
    if not total > 0:
        weights = np.ones(len(ids))
        total = float(len(ids))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    picks = rng.choice(len(ids), size=len(ids), replace=True, p=weights / total)
    return [int(ids[p]) for p in picks]


def _class_sizes(target_training_ids: Sequence[int], pseudo_labels: Mapping[int, int]) -> np.ndarray:
    """Size of each id's pseudo-class within the list, aligned with the ids."""
    labels = [int(pseudo_labels[i]) for i in target_training_ids]
    sizes = Counter(labels)
    return np.array([sizes[c] for c in labels], dtype=np.float64)


def ucs_resample(
    target_training_ids: Sequence[int],
    pseudo_labels: Mapping[int, int],
    state: ClassUncertaintyState,
    seed,
    balance_classes: bool = False,
) -> List[int]:
    """Draw a same-size multiset of ids weighted by their class uncertainty.

    Each id weighs U of its pseudo-class. With ``balance_classes`` the weight
    is also divided by the class size, so a whole class is drawn in proportion
    to its U rather than to U times its size. All-zero weights fall back to
    uniform.
    """
    weights = np.array(
        [state.u[int(pseudo_labels[i])] for i in target_training_ids], dtype=np.float64
    )
    if balance_classes and len(weights):
        weights /= _class_sizes(target_training_ids, pseudo_labels)
    return _weighted_draw(target_training_ids, weights, seed)


def class_balanced_resample(
    target_training_ids: Sequence[int],
    pseudo_labels: Mapping[int, int],
    seed,
) -> List[int]:
    """Draw a same-size multiset where every pseudo-class is equally likely."""
    if not len(target_training_ids):
        return []
    weights = 1.0 / _class_sizes(target_training_ids, pseudo_labels)
    return _weighted_draw(target_training_ids, weights, seed)

"""Random and entropy query strategies used as ablation baselines."""

from typing import Sequence

import numpy as np

from gp_ada.data import Dataset
from gp_ada.model import ModelState, entropy, predict_proba
from gp_ada.sampling import QuerySelection, top_by_score


def random_select(candidate_ids: Sequence[int], b: int, rng: np.random.Generator) -> QuerySelection:
    """Pick min(b, |candidates|) ids uniformly without replacement."""
    if b < 0:
        raise ValueError(f"b must be non-negative, got {b}")
    ids = sorted(candidate_ids)
    take = min(b, len(ids))
    picks = rng.choice(len(ids), size=take, replace=False) if take else []
    return QuerySelection(ids=[ids[p] for p in picks], pv_values=[0.0] * take)


def entropy_select(
    model: ModelState, dataset: Dataset, candidate_ids: Sequence[int], b: int
) -> QuerySelection:
    """Pick the b ids with the highest predictive entropy; ties go to the smaller id."""
    if b < 0:
        raise ValueError(f"b must be non-negative, got {b}")
    ids = sorted(candidate_ids)
    if not ids:
        return QuerySelection(ids=[], pv_values=[])
    scores = np.atleast_1d(entropy(predict_proba(model, dataset.features(ids))))
    positions = top_by_score(ids, scores, min(b, len(ids)))
    return QuerySelection(
        ids=[ids[p] for p in positions],
        pv_values=[float(scores[p]) for p in positions],
    )

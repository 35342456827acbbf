"""Normalized linear kernel and class-wise Gaussian Process posteriors."""

import csv
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy import linalg

from gp_ada.data import Dataset, PoolState
from gp_ada.errors import FactorizationError

logger = logging.getLogger(__name__)

DEFAULT_JITTER = 1e-4
MAX_JITTER = 1e-1


@dataclass
class KernelMatrix:
    """Kernel entries with the sample ids indexing each axis."""

    entries: np.ndarray
    row_ids: List[int]
    col_ids: List[int]


@dataclass
class ClassPartition:
    """Labeled and unlabeled features of one class, with row ids."""

    labeled_features: np.ndarray
    labeled_ids: List[int]
    unlabeled_features: np.ndarray
    unlabeled_ids: List[int]


@dataclass
class ClassGpPosterior:
    """Posterior of one class's GP over its unlabeled members.

    ``covariance`` is None when only the diagonal was requested; ``diagonal``
    is always present and unclamped.
    """

    class_id: Optional[int]
    mean: np.ndarray
    covariance: Optional[np.ndarray]
    diagonal: np.ndarray
    member_ids: List[int]
    jitter_used: float


@dataclass
class PosteriorVarianceVector:
    """Clamped posterior variances aligned with sample ids."""

    pv: np.ndarray
    ids: List[int]

    def __len__(self) -> int:
        return len(self.ids)

    def as_dict(self) -> Dict[int, float]:
        return {i: float(v) for i, v in zip(self.ids, self.pv)}


def _unit_rows(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D feature matrix, got shape {X.shape}")
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cosine kernel is undefined for zero-norm rows")
    return X / norms


def _cosine(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape[1:] != Q.shape[1:]:
        raise ValueError(f"dimensionality mismatch: {P.shape[1:]} vs {Q.shape[1:]}")
    if P.shape[0] == 0 or Q.shape[0] == 0:
        return np.zeros((P.shape[0], Q.shape[0]))
    return np.clip(_unit_rows(P) @ _unit_rows(Q).T, -1.0, 1.0)


def cosine_kernel(
    P: np.ndarray,
    Q: np.ndarray,
    row_ids: Optional[Sequence[int]] = None,
    col_ids: Optional[Sequence[int]] = None,
) -> KernelMatrix:
    """Compute K(P, Q)[j, k] = P_j·Q_k / (‖P_j‖‖Q_k‖).

    Args:
        P: (n, d) features.
        Q: (m, d) features.
        row_ids: Ids of P's rows; defaults to 0..n-1.
        col_ids: Ids of Q's rows; defaults to 0..m-1.

    Returns:
        KernelMatrix of shape (n, m).

    Raises:
        ValueError: On dimensionality mismatch or a zero-norm row.
    """
    entries = _cosine(P, Q)
    rows = list(row_ids) if row_ids is not None else list(range(entries.shape[0]))
    cols = list(col_ids) if col_ids is not None else list(range(entries.shape[1]))
    return KernelMatrix(entries=entries, row_ids=rows, col_ids=cols)


def class_partition(
    pool: PoolState,
    dataset: Dataset,
    pseudo_labels: Mapping[int, int],
) -> Dict[int, ClassPartition]:
    """Split labeled and unlabeled features by class.

    Labeled samples are source, queried target (true labels) and harvested
    target (stored pseudo-labels). Unlabeled target samples are grouped by
    ``pseudo_labels``. Every class 0..C-1 appears in the result, possibly empty.
    """
    missing = [i for i in pool.target_unlabeled_ids if i not in pseudo_labels]
    if missing:
        raise ValueError(f"no pseudo-label for unlabeled ids {sorted(missing)[:5]}")

    labeled: Dict[int, List[int]] = {c: [] for c in range(dataset.num_classes)}
    true_ids = sorted(pool.source_ids | pool.target_queried_ids)
    for record_id, label in zip(true_ids, dataset.labels(true_ids)):
        labeled[int(label)].append(record_id)
    for record_id in sorted(pool.target_plcs_labels):
        labeled[pool.target_plcs_labels[record_id]].append(record_id)

    unlabeled: Dict[int, List[int]] = {c: [] for c in range(dataset.num_classes)}
    for record_id in sorted(pool.target_unlabeled_ids):
        unlabeled[int(pseudo_labels[record_id])].append(record_id)

    partitions = {}
    for c in range(dataset.num_classes):
        labeled_ids = sorted(labeled[c])
        partitions[c] = ClassPartition(
            labeled_features=dataset.features(labeled_ids),
            labeled_ids=labeled_ids,
            unlabeled_features=dataset.features(unlabeled[c]),
            unlabeled_ids=unlabeled[c],
        )
    return partitions


def _factorize(K_ll: np.ndarray, jitter: float, class_id: Optional[int]):
    current = jitter
    while True:
        try:
            factor = linalg.cho_factor(K_ll + current * np.eye(K_ll.shape[0]), lower=True)
            if current != jitter:
                logger.warning("Class %s needed jitter %g to factorize", class_id, current)
            return factor, current
        except linalg.LinAlgError:
            logger.debug("Class %s: factorization failed at jitter %g", class_id, current)
            if current >= MAX_JITTER * (1 - 1e-9):
                raise FactorizationError(class_id, current) from None
            current = min(current * 10, MAX_JITTER)


def gp_posterior(
    F_u: np.ndarray,
    F_l: np.ndarray,
    jitter: float = DEFAULT_JITTER,
    class_id: Optional[int] = None,
    member_ids: Optional[Sequence[int]] = None,
    full_covariance: bool = True,
) -> ClassGpPosterior:
    """Condition a class GP on its labeled features.

    With A = K(F_l, F_l) + jitter·I the mean is K(F_u, F_l)·A⁻¹·F_l and the
    covariance K(F_u, F_u) − K(F_u, F_l)·A⁻¹·K(F_l, F_u). Solves go through a
    Cholesky factor; jitter is raised ×10 up to 0.1 if factorization fails.

    Args:
        F_u: (N_u, d) unlabeled features.
        F_l: (N_l, d) labeled features, N_l ≥ 1.
        jitter: Initial diagonal regularizer, > 0.
        class_id: Class index, used in error messages.
        member_ids: Ids of F_u's rows.
        full_covariance: If False only the covariance diagonal is computed.

    Raises:
        ValueError: If F_l is empty or jitter is not positive.
        FactorizationError: If the factorization fails at the largest jitter.
    """
    F_u = np.asarray(F_u, dtype=np.float64)
    F_l = np.asarray(F_l, dtype=np.float64)
    if F_l.shape[0] == 0:
        raise ValueError("gp_posterior needs at least one labeled feature")
    if not jitter > 0:
        raise ValueError(f"jitter must be positive, got {jitter}")
    ids = list(member_ids) if member_ids is not None else list(range(F_u.shape[0]))
    if F_u.shape[0] == 0:
        return ClassGpPosterior(
            class_id=class_id,
            mean=np.zeros((0, F_l.shape[1])),
            covariance=np.zeros((0, 0)) if full_covariance else None,
            diagonal=np.zeros(0),
            member_ids=ids,
            jitter_used=jitter,
        )

    K_ll = _cosine(F_l, F_l)
    K_ul = _cosine(F_u, F_l)
    factor, used = _factorize(K_ll, jitter, class_id)

    mean = K_ul @ linalg.cho_solve(factor, F_l)
    solved = linalg.cho_solve(factor, K_ul.T)  # A⁻¹·K(F_l, F_u)

    if full_covariance:
        covariance = _cosine(F_u, F_u) - K_ul @ solved
        covariance = 0.5 * (covariance + covariance.T)
        diagonal = np.diag(covariance).copy()
    else:
        covariance = None
        # K(x, x) is 1 for every nonzero x
        diagonal = 1.0 - np.einsum("ij,ji->i", K_ul, solved)

    logger.debug("Class %s GP: %d labeled, %d unlabeled", class_id, F_l.shape[0], F_u.shape[0])
    return ClassGpPosterior(
        class_id=class_id,
        mean=mean,
        covariance=covariance,
        diagonal=diagonal,
        member_ids=ids,
        jitter_used=used,
    )


def prior_posterior(
    F_u: np.ndarray,
    class_id: Optional[int] = None,
    member_ids: Optional[Sequence[int]] = None,
    full_covariance: bool = True,
) -> ClassGpPosterior:
    """Posterior of a class with no labeled members: the zero-mean prior itself."""
    F_u = np.asarray(F_u, dtype=np.float64)
    ids = list(member_ids) if member_ids is not None else list(range(F_u.shape[0]))
    covariance = _cosine(F_u, F_u) if full_covariance else None
    return ClassGpPosterior(
        class_id=class_id,
        mean=np.zeros_like(F_u),
        covariance=covariance,
        diagonal=np.ones(F_u.shape[0]),
        member_ids=ids,
        jitter_used=0.0,
    )


def posterior_variance(posterior: ClassGpPosterior) -> PosteriorVarianceVector:
    """Diagonal of the posterior covariance, clamped at zero."""
    return PosteriorVarianceVector(
        pv=np.maximum(np.asarray(posterior.diagonal, dtype=np.float64), 0.0),
        ids=list(posterior.member_ids),
    )


def assemble_pv(per_class: Mapping[int, PosteriorVarianceVector]) -> PosteriorVarianceVector:
    """Concatenate per-class variances in ascending class order.

    Raises:
        ValueError: If an id appears in more than one class.
    """
    pv_parts = []
    ids: List[int] = []
    seen = set()
    for c in sorted(per_class):
        part = per_class[c]
        duplicated = seen.intersection(part.ids)
        if duplicated:
            raise ValueError(f"ids {sorted(duplicated)[:5]} appear in more than one class")
        seen.update(part.ids)
        pv_parts.append(np.asarray(part.pv, dtype=np.float64))
        ids.extend(part.ids)
    pv = np.concatenate(pv_parts) if pv_parts else np.zeros(0)
    return PosteriorVarianceVector(pv=pv, ids=ids)


def class_posteriors(
    partitions: Mapping[int, ClassPartition],
    jitter: float = DEFAULT_JITTER,
    full_covariance: bool = False,
) -> Dict[int, ClassGpPosterior]:
    """Build every class's posterior, in class order."""
    posteriors = {}
    for c in sorted(partitions):
        part = partitions[c]
        if part.labeled_features.shape[0] == 0:
            posteriors[c] = prior_posterior(
                part.unlabeled_features, c, part.unlabeled_ids, full_covariance
            )
        else:
            posteriors[c] = gp_posterior(
                part.unlabeled_features,
                part.labeled_features,
                jitter=jitter,
                class_id=c,
                member_ids=part.unlabeled_ids,
                full_covariance=full_covariance,
            )
    return posteriors


def compute_pv(
    pool: PoolState,
    dataset: Dataset,
    pseudo_labels: Mapping[int, int],
    jitter: float = DEFAULT_JITTER,
) -> PosteriorVarianceVector:
    """Posterior variance of every unlabeled target sample under class-wise GPs."""
    partitions = class_partition(pool, dataset, pseudo_labels)
    posteriors = class_posteriors(partitions, jitter=jitter, full_covariance=False)
    return assemble_pv({c: posterior_variance(p) for c, p in posteriors.items()})


def write_pv_csv(
    pv: PosteriorVarianceVector, pseudo_labels: Mapping[int, int], path: str
) -> None:
    """Write ``id,pseudo_label,posterior_variance`` rows sorted by id."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id", "pseudo_label", "posterior_variance"])
        for record_id, value in sorted(zip(pv.ids, pv.pv)):
            writer.writerow([record_id, int(pseudo_labels[record_id]), repr(float(value))])
    logger.info("Wrote %d posterior variances to %s", len(pv), path)

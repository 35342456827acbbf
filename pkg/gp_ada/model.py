"""Linear softmax head, its losses and the momentum SGD optimizer."""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import entr, log_softmax, softmax

from gp_ada.errors import CheckpointError, ConfigError, TrainingDivergenceError
from gp_ada.utils import STREAM_INIT, make_rng

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "format=gp-ada-model-v1"


@dataclass
class ModelState:
    """Weights (C, d), bias (C,) and their momentum buffers."""

    weights: np.ndarray
    bias: np.ndarray
    weight_velocity: np.ndarray
    bias_velocity: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def from_parameters(cls, weights: np.ndarray, bias: np.ndarray) -> "ModelState":
        weights = np.array(weights, dtype=np.float64)
        bias = np.array(bias, dtype=np.float64)
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise ValueError(f"inconsistent shapes: weights {weights.shape}, bias {bias.shape}")
        return cls(weights, bias, np.zeros_like(weights), np.zeros_like(bias))


@dataclass
class Gradients:
    """Gradient of a scalar loss with respect to the head parameters."""

    weights: np.ndarray
    bias: np.ndarray

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients(self.weights + other.weights, self.bias + other.bias)

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(factor * self.weights, factor * self.bias)


@dataclass
class LossResult:
    """Loss value and its gradient."""

    value: float
    gradients: Gradients


@dataclass(frozen=True)
class OptimizerConfig:
    """SGD hyperparameters."""

    learning_rate: float = 0.002
    momentum: float = 0.9
    weight_decay: float = 0.005
    batch_size: int = 16

    def validate(self) -> None:
        """Raise ConfigError if a hyperparameter is out of range."""
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not self.weight_decay >= 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


class Verdict(str, Enum):
    CONSISTENT = "consistent"
    INCONSISTENT = "inconsistent"


@dataclass
class ConsistencyVerdict:
    """Committee vote on whether a sample's prediction survives perturbation."""

    id: int
    verdict: Verdict
    committee_votes: List[int]


def zero_model(num_classes: int, dim: int) -> ModelState:
    """All-zero head."""
    return ModelState.from_parameters(np.zeros((num_classes, dim)), np.zeros(num_classes))


def init_model(num_classes: int, dim: int, seed: int = 0) -> ModelState:
    """Xavier-uniform weights and a zero bias."""
    limit = math.sqrt(6.0 / (num_classes + dim))
    weights = make_rng(seed, STREAM_INIT).uniform(-limit, limit, size=(num_classes, dim))
    return ModelState.from_parameters(weights, np.zeros(num_classes))


def _as_batch(model: ModelState, features: np.ndarray) -> Tuple[np.ndarray, bool]:
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise ValueError(f"feature shape {np.shape(features)} does not match model dim {model.dim}")
    return X, single


def logits(model: ModelState, features: np.ndarray) -> np.ndarray:
    """W·x + b for a vector or each row of a matrix."""
    X, single = _as_batch(model, features)
    z = X @ model.weights.T + model.bias
    return z[0] if single else z


def predict_proba(model: ModelState, features: np.ndarray) -> np.ndarray:
    """Softmax of the logits (max-logit subtracted), for a vector or a matrix of rows."""
    return softmax(logits(model, features), axis=-1)


def pseudo_label(probs: np.ndarray) -> Tuple[int, float]:
    """Argmax class (ties to the smaller index) and its probability."""
    probs = np.asarray(probs, dtype=np.float64)
    c = int(np.argmax(probs))
    return c, float(probs[c])


def pseudo_labels(model: ModelState, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised pseudo_label over the rows of a feature matrix."""
    probs = predict_proba(model, np.atleast_2d(features))
    classes = np.argmax(probs, axis=1)
    return classes, probs[np.arange(len(classes)), classes]


def entropy(probs: np.ndarray) -> Union[float, np.ndarray]:
    """Entropy in nats along the last axis, with 0·log 0 = 0."""
    h = entr(np.asarray(probs, dtype=np.float64)).sum(axis=-1)
    return float(h) if np.ndim(h) == 0 else h


def default_committee_sigma(features: np.ndarray) -> float:
    """0.1 · mean feature norm / √d."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return 0.1 * float(np.linalg.norm(X, axis=1).mean()) / math.sqrt(X.shape[1])


def committee_consistency(
    model: ModelState,
    features: np.ndarray,
    committee_size: int,
    sigma: float,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """Vote each row's clean prediction against k perturbed copies.

    Returns:
        Boolean consistency per row and the (n, k) matrix of committee votes.
    """
    if committee_size < 1 or committee_size % 2 == 0:
        raise ValueError(f"committee size must be odd and >= 1, got {committee_size}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    X, _ = _as_batch(model, features)
    clean = np.argmax(X @ model.weights.T + model.bias, axis=1)
    noise = sigma * rng.standard_normal((X.shape[0], committee_size, X.shape[1]))
    votes = np.argmax((X[:, None, :] + noise) @ model.weights.T + model.bias, axis=2)
    agree = (votes == clean[:, None]).sum(axis=1)
    return 2 * agree > committee_size, votes


def sentry_verdict(
    model: ModelState,
    features: np.ndarray,
    committee_size: int = 3,
    sigma: Optional[float] = None,
    seed: int = 0,
    record_id: int = -1,
) -> ConsistencyVerdict:
    """Consistency verdict of one sample under seeded Gaussian perturbations.

    ``sigma=None`` uses default_committee_sigma of the sample itself.
    """
    if sigma is None:
        sigma = default_committee_sigma(features)
    consistent, votes = committee_consistency(
        model, np.asarray(features)[None, :], committee_size, sigma, np.random.default_rng(seed)
    )
    return ConsistencyVerdict(
        id=record_id,
        verdict=Verdict.CONSISTENT if consistent[0] else Verdict.INCONSISTENT,
        committee_votes=[int(v) for v in votes[0]],
    )


def _signs(verdicts: Sequence[Union[ConsistencyVerdict, Verdict, bool]]) -> np.ndarray:
    signs = []
    for v in verdicts:
        if isinstance(v, ConsistencyVerdict):
            v = v.verdict
        if isinstance(v, Verdict):
            v = v is Verdict.CONSISTENT
        signs.append(1.0 if v else -1.0)
    return np.array(signs)


def sentry_loss(
    model: ModelState,
    features: np.ndarray,
    verdicts,
    sigma: float = 0.0,
    seed: int = 0,
) -> LossResult:
    """Consistency-entropy loss: +H on consistent samples, −H on inconsistent ones.

    Each sample is scored on one fresh perturbation x̃ = x + σ·ε with ε drawn
    from ``seed``; the loss is the mean over samples.

    Args:
        model: Current head.
        features: A vector or an (m, d) matrix.
        verdicts: One verdict (or a sequence of m) as ConsistencyVerdict, Verdict or bool.
        sigma: Perturbation scale.
        seed: Seed of the perturbation.
    """
    X, single = _as_batch(model, features)
    if single and not isinstance(verdicts, (list, tuple)):
        verdicts = [verdicts]
    signs = _signs(verdicts)
    if len(signs) != X.shape[0]:
        raise ValueError(f"{len(signs)} verdicts for {X.shape[0]} samples")
    if X.shape[0] == 0:
        return LossResult(0.0, Gradients(np.zeros_like(model.weights), np.zeros_like(model.bias)))

    X_tilde = X + sigma * np.random.default_rng(seed).standard_normal(X.shape)
    z = X_tilde @ model.weights.T + model.bias
    log_p = log_softmax(z, axis=1)
    p = np.exp(log_p)
    h = entr(p).sum(axis=1)

    m = X.shape[0]
    # dH/dz_j = -p_j (log p_j + H)
    dz = (signs / m)[:, None] * (-p * (log_p + h[:, None]))
    return LossResult(
        value=float(np.dot(signs, h) / m),
        gradients=Gradients(dz.T @ X_tilde, dz.sum(axis=0)),
    )


def cross_entropy_loss(model: ModelState, features: np.ndarray, labels: Sequence[int]) -> LossResult:
    """Mean cross-entropy of integer labels; an empty batch gives 0.

    Raises:
        ValueError: If a label is outside [0, C).
    """
    X = np.asarray(features, dtype=np.float64)
    if X.size == 0:
        X = X.reshape(0, model.dim)
    X, _ = _as_batch(model, np.atleast_2d(X))
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"{y.shape[0]} labels for {X.shape[0]} samples")
    if X.shape[0] == 0:
        return LossResult(0.0, Gradients(np.zeros_like(model.weights), np.zeros_like(model.bias)))
    if np.any(y < 0) or np.any(y >= model.num_classes):
        raise ValueError(f"labels must be in [0, {model.num_classes})")

    n = X.shape[0]
    log_p = log_softmax(X @ model.weights.T + model.bias, axis=1)
    dz = np.exp(log_p)
    dz[np.arange(n), y] -= 1.0
    dz /= n
    return LossResult(
        value=float(-log_p[np.arange(n), y].mean()),
        gradients=Gradients(dz.T @ X, dz.sum(axis=0)),
    )


def total_loss(
    model: ModelState,
    labeled_features: np.ndarray,
    labeled_labels: Sequence[int],
    unlabeled_features: np.ndarray,
    verdicts,
    lam: float = 1.0,
    sigma: float = 0.0,
    seed: int = 0,
) -> LossResult:
    """Supervised cross-entropy plus λ times the consistency-entropy loss."""
    supervised = cross_entropy_loss(model, labeled_features, labeled_labels)
    if lam == 0 or np.size(unlabeled_features) == 0:
        return supervised
    consistency = sentry_loss(model, unlabeled_features, list(verdicts), sigma=sigma, seed=seed)
    return LossResult(
        value=supervised.value + lam * consistency.value,
        gradients=supervised.gradients + consistency.gradients.scaled(lam),
    )


def sgd_step(model: ModelState, gradients: Gradients, config: OptimizerConfig) -> ModelState:
    """One momentum SGD step with L2 weight decay.

    v ← momentum·v + grad + weight_decay·param; param ← param − lr·v.

    Raises:
        TrainingDivergenceError: If a gradient or updated parameter is non-finite.
    """
    if gradients.weights.shape != model.weights.shape or gradients.bias.shape != model.bias.shape:
        raise ValueError("gradient shapes do not match the model")
    if not (np.all(np.isfinite(gradients.weights)) and np.all(np.isfinite(gradients.bias))):
        raise TrainingDivergenceError("non-finite gradient")

    weight_velocity = (
        config.momentum * model.weight_velocity + gradients.weights + config.weight_decay * model.weights
    )
    bias_velocity = config.momentum * model.bias_velocity + gradients.bias + config.weight_decay * model.bias
    weights = model.weights - config.learning_rate * weight_velocity
    bias = model.bias - config.learning_rate * bias_velocity
    if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
        raise TrainingDivergenceError("parameters became non-finite")
    return ModelState(weights, bias, weight_velocity, bias_velocity)


def save_checkpoint(model: ModelState, path: str) -> None:
    """Write weights (row-major) then bias; momentum is not saved."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"C={model.num_classes},d={model.dim}\n")
        f.write(CHECKPOINT_FORMAT + "\n")
        f.write(",".join(repr(float(v)) for v in model.weights.ravel()) + "\n")
        f.write(",".join(repr(float(v)) for v in model.bias) + "\n")
    logger.info("Wrote checkpoint %s", path)


def load_checkpoint(path: str) -> ModelState:
    """Read a checkpoint written by save_checkpoint.

    Raises:
        CheckpointError: If the file is malformed.
    """
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except UnicodeDecodeError:
        raise CheckpointError(f"{path}: not valid UTF-8 text") from None
    if len(lines) != 4 or lines[1] != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    try:
        sizes = dict(part.split("=", 1) for part in lines[0].split(","))
        C, d = int(sizes["C"]), int(sizes["d"])
        weights = np.array([float(v) for v in lines[2].split(",")])
        bias = np.array([float(v) for v in lines[3].split(",")])
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: {e}") from None
    if weights.size != C * d or bias.size != C:
        raise CheckpointError(f"{path}: expected {C}x{d} weights and {C} biases")
    return ModelState.from_parameters(weights.reshape(C, d), bias)

"""Flat ``key=value`` run configuration with flag overrides."""

import logging
import os
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Mapping, Optional

from dotenv import dotenv_values

from gp_ada.data import SyntheticSpec
from gp_ada.errors import ConfigError
from gp_ada.loop import CommitteeConfig, EvalSplit, LoopConfig
from gp_ada.model import OptimizerConfig

logger = logging.getLogger(__name__)


def _int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def _float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def _bool(key: str, value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected true or false, got {value!r}")


def _sigma(key: str, value: str) -> Optional[float]:
    if value.strip().lower() == "auto":
        return None
    return _float(key, value)


def _split(key: str, value: str) -> EvalSplit:
    try:
        return EvalSplit(value.strip())
    except ValueError:
        choices = ", ".join(s.value for s in EvalSplit)
        raise ConfigError(f"{key}: expected one of {choices}, got {value!r}") from None


def _text(key: str, value: str) -> str:
    if not value.strip():
        raise ConfigError(f"{key}: empty value")
    return value.strip()


_PARSERS: Dict[str, Callable[[str, str], object]] = {
    "rounds": _int,
    "budget_fraction": _float,
    "kappa_start": _float,
    "kappa_step": _float,
    "warmup_epochs": _int,
    "epochs_per_round": _int,
    "alpha": _float,
    "lambda": _float,
    "jitter": _float,
    "learning_rate": _float,
    "momentum": _float,
    "weight_decay": _float,
    "batch_size": _int,
    "committee_size": _int,
    "committee_sigma": _sigma,
    "sentry": _bool,
    "holdout_fraction": _float,
    "eval_split": _split,
    "seed": _int,
    "strategy": _text,
    "out": _text,
    "dataset": _text,
    "synth_num_classes": _int,
    "synth_dim": _int,
    "synth_per_class": _int,
    "synth_shift": _float,
    "synth_rotation": _float,
    "synth_noise": _float,
    "synth_seed": _int,
}

CONFIG_KEYS = tuple(_PARSERS)


@dataclass(frozen=True)
class RunConfig:
    """Everything one command needs: loop settings, data source and output directory.

    Exactly one of ``dataset_path`` and ``synthetic`` is set.
    """

    loop: LoopConfig
    dataset_path: Optional[str]
    synthetic: Optional[SyntheticSpec]
    out_dir: str = "."

    @property
    def strategy(self) -> str:
        return self.loop.strategy

    @property
    def seed(self) -> int:
        return self.loop.seed


def parse_overrides(pairs: Iterable[str]) -> Dict[str, str]:
    """Turn ``key=value`` strings from ``--set`` into a dict."""
    overrides = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {pair!r} is not key=value")
        overrides[key.strip()] = value.strip()
    return overrides


def read_config_file(path: str) -> Dict[str, str]:
    """Raw values of a config file; ``#`` comments and blank lines are skipped."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = dotenv_values(path, interpolate=False, encoding="utf-8")
    except UnicodeDecodeError:
        raise ConfigError(f"{path}: not valid UTF-8 text") from None
    values = {}
    for key, value in raw.items():
        if value is None:
            raise ConfigError(f"{path}: key {key!r} has no value")
        values[key] = value
    return values


def parse_config(path: Optional[str] = None, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Build a validated RunConfig from a config file and flag overrides.

    Args:
        path: Config file, or None for defaults only.
        overrides: key → raw value; these win over the file.

    Raises:
        ConfigError: On an unknown key, an unparsable or out-of-range value,
            or both ``dataset`` and ``synth_*`` keys being set.
    """
    raw: Dict[str, str] = read_config_file(path) if path is not None else {}
    raw.update(overrides or {})

    unknown = sorted(set(raw) - set(_PARSERS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    values = {key: _PARSERS[key](key, value) for key, value in raw.items()}

    synth_keys = sorted(k for k in values if k.startswith("synth_"))
    if "dataset" in values and synth_keys:
        raise ConfigError(f"dataset conflicts with synthetic settings {', '.join(synth_keys)}")

    seed = values.get("seed", 0)
    loop = LoopConfig(
        rounds=values.get("rounds", 5),
        budget_fraction=values.get("budget_fraction", 0.05),
        kappa_start=values.get("kappa_start", 1.0),
        kappa_step=values.get("kappa_step", 1.0),
        warmup_epochs=values.get("warmup_epochs", 5),
        epochs_per_round=values.get("epochs_per_round", 3),
        alpha=values.get("alpha", 0.9),
        lam=values.get("lambda", 1.0),
        jitter=values.get("jitter", 1e-4),
        optimizer=OptimizerConfig(
            learning_rate=values.get("learning_rate", 0.002),
            momentum=values.get("momentum", 0.9),
            weight_decay=values.get("weight_decay", 0.005),
            batch_size=values.get("batch_size", 16),
        ),
        committee=CommitteeConfig(
            size=values.get("committee_size", 3),
            sigma=values.get("committee_sigma"),
        ),
        seed=seed,
        strategy=values.get("strategy", "gpas_plcs_ucs"),
        sentry=values.get("sentry", True),
        holdout_fraction=values.get("holdout_fraction", 0.2),
        eval_split=values.get("eval_split", EvalSplit.TARGET_EVAL),
    )
    loop.validate()
    if not 0.0 <= loop.budget_fraction <= 1.0:
        raise ConfigError(f"budget_fraction {loop.budget_fraction} outside [0, 1]")
    if not 0.0 <= loop.holdout_fraction < 1.0:
        raise ConfigError(f"holdout_fraction {loop.holdout_fraction} outside [0, 1)")

    synthetic = None
    if "dataset" not in values:
        synthetic = SyntheticSpec(
            num_classes=values.get("synth_num_classes", 5),
            dim=values.get("synth_dim", 16),
            per_class_per_domain=values.get("synth_per_class", 200),
            shift_magnitude=values.get("synth_shift", 6.0),
            rotation_angle=values.get("synth_rotation", 0.5),
            noise_sigma=values.get("synth_noise", 1.0),
            seed=values.get("synth_seed", seed),
        )
        synthetic.validate()

    config = RunConfig(
        loop=loop,
        dataset_path=values.get("dataset"),
        synthetic=synthetic,
        out_dir=values.get("out", "."),
    )
    logger.debug("Parsed config: %s", config)
    return config

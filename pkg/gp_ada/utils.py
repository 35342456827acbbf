"""Utility functions for gp-ada."""

import logging
import os
from typing import Sequence

import numpy as np

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Independent random streams derived from one run seed.
STREAM_SPLIT = 1
STREAM_INIT = 2
STREAM_SHUFFLE = 3
STREAM_COMMITTEE = 4
STREAM_RESAMPLE = 5
STREAM_QUERY = 6


def configure_logging(verbosity: int = 0) -> None:
    """Configure the root logger for command-line use.

    Args:
        verbosity: 0 for warnings, 1 for info, 2 or more for debug.
    """
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def get_output_dir(path: str) -> str:
    """Get an output directory, creating it if it doesn't exist.

    Args:
        path: Directory path.

    Returns:
        The same path.
    """
    os.makedirs(path, exist_ok=True)
    return path


def make_rng(seed: int, stream: int, *keys: int) -> np.random.Generator:
    """Build a generator for one purpose of one run.

    Streams and keys (round, epoch, step) are mixed into the seed so that
    draws for one purpose never depend on how many draws another made.
    """
    entropy: Sequence[int] = (int(seed), int(stream), *(int(k) for k in keys))
    return np.random.default_rng(list(entropy))

"""Accuracy-over-rounds chart from RoundMetrics files."""

import logging
import os
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from gp_ada.errors import MetricsFormatError  # noqa: E402
from gp_ada.loop import RoundMetrics, read_metrics  # noqa: E402

logger = logging.getLogger(__name__)


def series_name(path: str) -> str:
    """Legend label and SVG group id suffix for a metrics file: its stem."""
    return os.path.splitext(os.path.basename(path))[0]


def load_series(paths: Sequence[str]) -> Dict[str, List[RoundMetrics]]:
    """Read every metrics file, keyed by series name.

    Raises:
        MetricsFormatError: If no files are given, a file has no rows, or a
            file is malformed.
    """
    if not paths:
        raise MetricsFormatError("report needs at least one metrics file")
    series = {}
    for path in paths:
        metrics = read_metrics(path)
        if not metrics:
            raise MetricsFormatError(f"{path}: no rounds")
        series[series_name(path)] = metrics
    return series


def plot_accuracy(paths: Sequence[str], out_path: str, title: str = "Target accuracy over rounds") -> str:
    """Draw one line per metrics file and save a standalone SVG.

    Each line is a Line2D with gid ``series-<stem>``. In the SVG its group holds
    one clipped ``<path>`` with a vertex per round and one marker ``<use>`` per
    round; matplotlib has no ``<polyline>`` output.

    Returns:
        ``out_path``.
    """
    series = load_series(paths)
    # Stable output for identical inputs.
    plt.rcParams["svg.hashsalt"] = "gp-ada"

    fig, ax = plt.subplots(figsize=(7, 4.5))
    colors = plt.cm.tab10.colors
    try:
        for i, (name, metrics) in enumerate(series.items()):
            rounds = [m.round for m in metrics]
            accuracy = [100.0 * m.target_accuracy for m in metrics]
            ax.plot(
                rounds,
                accuracy,
                marker="o",
                label=name,
                color=colors[i % len(colors)],
                linewidth=2,
                gid=f"series-{name}",
            )
        ax.set_xlabel("Round")
        ax.set_ylabel("Target accuracy (%)")
        ax.set_title(title)
        ax.legend(loc="lower right")
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(out_path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)

    logger.info("Wrote accuracy chart for %d series to %s", len(series), out_path)
    return out_path

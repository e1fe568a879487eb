"""Static figure rendering for CLI reports.

Everything draws through the Agg backend into SVG files with hashed ids and
no embedded dates, so rerunning a command reproduces the figure byte for
byte.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .stats import SizeDistribution  # noqa: E402

plt.rcParams["svg.hashsalt"] = "scaleadv"


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return path


def save_mass_histogram(path, dists: Mapping[str, SizeDistribution],
                        title: str = "instance volume distribution",
                        xlabel: str = "volume [m$^3$]") -> Path:
    """Step-plot one or more histograms that share an x axis."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for label, dist in dists.items():
        ax.stairs(dist.masses, dist.bin_edges, label=label, fill=len(dists) == 1, alpha=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("mass")
    ax.set_title(title)
    if len(dists) > 1:
        ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def save_scale_histogram(path, scales: Sequence[float], title: str = "applied scale factors") -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.hist(list(scales), bins=40, color="#4878d0")
    ax.set_xlabel("scale factor")
    ax.set_ylabel("instances")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def save_pr_curve(path, recalls: Sequence[float], precisions: Sequence[float], ap: float,
                  title: str = "precision vs recall") -> Path:
    fig, ax = plt.subplots(figsize=(5.4, 5.0))
    ax.plot(list(recalls), list(precisions), drawstyle="steps-post", color="#d65f5f")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_title(f"{title} (AP {ap:.2f})")
    ax.grid(alpha=0.3)
    return _save(fig, path)

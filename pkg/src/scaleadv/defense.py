"""Dataset defense: rescale instances so sizes cover a uniform range.

Training data prepared this way stops encoding a tight size prior, which is
what the scaling attacks exploit.  Each source instance is replicated at
k_scales pre-scales spread over [1 - sigma, 1 + sigma]; the pooled volumes
are then mapped through an inverse-CDF transform onto
Uniform((1 - sigma) * mean, (1 + sigma) * mean), one scale plan per replica.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .attacks import FLAG_ATTACKED, PlanEntry, ScalePlan, apply_scale_plan
from .dataset_io import Frame, FrameRecord, iter_class_annotations, write_frame, write_manifest
from .errors import EmptyDatasetError
from .stats import EmpiricalCDF, Uniform, icdf_map


@dataclass(frozen=True)
class DefenseConfig:
    """sigma bounds the uniform volume range; k_scales replicas per frame."""

    sigma: float
    k_scales: int = 5
    seed: int = 0
    mean_size: float | None = None  # dataset mean volume when None

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and 0.0 < self.sigma < 1.0):
            raise ValueError(f"sigma must be in (0, 1), got {self.sigma}")
        if self.k_scales < 1:
            raise ValueError(f"k_scales must be at least 1, got {self.k_scales}")
        if self.mean_size is not None and self.mean_size <= 0:
            raise ValueError(f"mean_size must be positive, got {self.mean_size}")


def pre_scales(config: DefenseConfig) -> np.ndarray:
    """k_scales factors spread evenly over [1 - sigma, 1 + sigma]; k=1 gives [1]."""
    if config.k_scales == 1:
        return np.array([1.0])
    return np.linspace(1.0 - config.sigma, 1.0 + config.sigma, config.k_scales)


def defense_plan(frames: Sequence[Frame], config: DefenseConfig,
                 classes: Sequence[str] | None = None) -> list[ScalePlan]:
    """One ScalePlan per replica mapping pooled volumes onto the uniform target.

    The pooled population holds every instance volume at every pre-scale
    (k * n values); its empirical CDF feeds the inverse-CDF map onto
    Uniform((1 - sigma) * mean, (1 + sigma) * mean).  Quantile order is
    preserved, so equal volumes land on equal targets.
    """
    items = list(iter_class_annotations(frames, classes))
    if not items:
        raise EmptyDatasetError("defense needs at least one annotation")
    volumes = np.array([ann.box.volume for _, _, ann in items])
    mean = config.mean_size if config.mean_size is not None else float(volumes.mean())
    factors = pre_scales(config)
    pooled = (volumes[None, :] * factors[:, None] ** 3).ravel()
    source = EmpiricalCDF(pooled)
    target = Uniform((1.0 - config.sigma) * mean, (1.0 + config.sigma) * mean)

    plans = []
    for replica, factor in enumerate(factors):
        mapped = icdf_map(volumes * factor**3, source, target)
        scales = np.cbrt(np.asarray(mapped) / volumes)
        entries = {
            (frame.id, idx): PlanEntry(float(s), FLAG_ATTACKED)
            for (frame, idx, _), s in zip(items, scales)
        }
        plans.append(ScalePlan(
            "defense",
            entries,
            {"sigma": config.sigma, "k_scales": config.k_scales, "replica": replica,
             "pre_scale": float(factor), "mean_size": mean},
            config.seed,
        ))
    return plans


def materialize_defense(frames: Sequence[Frame], plans: Sequence[ScalePlan], out_dir,
                        workers: int = 1) -> Path:
    """Write every replica of every frame as a KITTI-layout dataset.

    Frame ids get a `_<replica>` suffix, so k_scales plans over n frames
    produce k * n outputs listed in the returned manifest.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for replica, plan in enumerate(plans):
        for frame in apply_scale_plan(frames, plan):
            jobs.append(Frame(f"{frame.id}_{replica}", frame.cloud, frame.annotations, frame.calib))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda f: write_frame(f, out_dir), jobs))
    else:
        records = [write_frame(frame, out_dir) for frame in jobs]
    return write_manifest(records, out_dir / "manifest.txt")

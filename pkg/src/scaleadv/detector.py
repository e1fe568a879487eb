"""Black-box detector adapters: mocks for pipeline tests and a subprocess bridge.

The subprocess protocol, per batch:

1. the adapter writes each cloud to ``<workdir>/batch_<n>/cloud/<frame_id>.bin``
   and a request manifest with one ``<frame_id> <cloud_path>`` line per frame;
2. it invokes the configured command with the manifest path appended as the
   final argument (also exported as ``SCALEADV_REQUEST_MANIFEST``);
3. the command writes one ``<manifest_dir>/pred/<frame_id>.txt`` per requested
   frame: KITTI label lines plus a trailing confidence score, with the pose
   fields (x y z and rotation) already in the sensor frame.

Timeouts, nonzero exits, missing reply files, and malformed rows all raise
:class:`~scaleadv.errors.DetectorError` naming the frame that failed.
"""

from __future__ import annotations

import math
import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset_io import Frame, iter_class_annotations
from .errors import DetectorError, EmptyDatasetError
from .geometry import Box3D

DEFAULT_MEAN_DIMS = (3.9, 1.6, 1.56)  # rough car-class l/w/h prior, meters


@dataclass(frozen=True)
class Detection:
    """One predicted instance: sensor-frame box, confidence, class name."""

    box: Box3D
    score: float
    cls: str

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if not self.cls or any(ch.isspace() for ch in self.cls):
            raise ValueError(f"class name must be nonempty without whitespace, got {self.cls!r}")


class DetectorAdapter:
    """Base adapter: one frame in, detections ordered by descending score out."""

    name = "base"

    def detect(self, frame: Frame) -> list[Detection]:
        raise NotImplementedError

    def detect_batch(self, frames: Sequence[Frame]) -> list[list[Detection]]:
        return [self.detect(f) for f in frames]


class OracleDetector(DetectorAdapter):
    """Replays the frame's own annotations as detections with score 1."""

    name = "oracle"

    def detect(self, frame: Frame) -> list[Detection]:
        return [Detection(ann.box, 1.0, ann.cls) for ann in frame.annotations]


class SizePriorDetector(DetectorAdapter):
    """True pose and heading, dimensions pulled toward a fixed prior.

    Predicted dims are (1 - pull) * observed + pull * mean_dims per axis, so
    pull=0 is the oracle and pull=1 answers the prior regardless of the scene.
    Emulates a detector whose size estimates are anchored to its training
    distribution.
    """

    name = "size-prior"

    def __init__(self, pull: float = 1.0, mean_dims: Sequence[float] = DEFAULT_MEAN_DIMS):
        if not (math.isfinite(pull) and 0.0 <= pull <= 1.0):
            raise ValueError(f"pull must be in [0, 1], got {pull}")
        mean_dims = tuple(float(v) for v in mean_dims)
        if len(mean_dims) != 3 or any(v <= 0 for v in mean_dims):
            raise ValueError(f"mean_dims must be three positive values, got {mean_dims}")
        self.pull = float(pull)
        self.mean_dims = mean_dims

    def detect(self, frame: Frame) -> list[Detection]:
        out = []
        for ann in frame.annotations:
            box = ann.box
            l, w, h = (
                (1 - self.pull) * obs + self.pull * mean
                for obs, mean in zip((box.l, box.w, box.h), self.mean_dims)
            )
            out.append(Detection(Box3D(box.cx, box.cy, box.cz, l, w, h, box.yaw), 1.0, ann.cls))
        return out

    @classmethod
    def from_dataset(cls, frames: Sequence[Frame], base_pull: float = 1.0,
                     reference_width: float | None = None,
                     classes: Sequence[str] | None = None) -> "SizePriorDetector":
        """Calibrate the prior to a dataset.

        mean_dims becomes the per-axis mean over the selected annotations.
        With ``reference_width`` given, the pull is reduced by the ratio of
        that width to the dataset's own volume-support width, emulating a
        detector whose training data covered a wider range of sizes.
        """
        dims = np.array([(a.box.l, a.box.w, a.box.h) for _, _, a in iter_class_annotations(frames, classes)])
        if dims.size == 0:
            raise EmptyDatasetError("cannot calibrate a size prior on zero annotations")
        mean_dims = dims.mean(axis=0)
        pull = base_pull
        if reference_width is not None:
            width = size_support_width(dims.prod(axis=1))
            pull = base_pull * min(1.0, reference_width / max(width, 1e-12))
        return cls(pull, tuple(mean_dims))


def size_support_width(volumes) -> float:
    """Robust relative width of a volume sample: 2.5-97.5 percentile span over mean."""
    volumes = np.asarray(volumes, dtype=np.float64).ravel()
    if volumes.size == 0:
        raise ValueError("need at least one volume")
    lo, hi = np.quantile(volumes, [0.025, 0.975])
    return float((hi - lo) / volumes.mean())


class ExternalDetector(DetectorAdapter):
    """Bridges a detector living behind a shell command via the file protocol."""

    name = "external"

    def __init__(self, command: str, workdir=None, timeout: float = 300.0):
        self.argv = shlex.split(command)
        if not self.argv:
            raise ValueError("external detector command is empty")
        if workdir is None:
            workdir = os.environ.get("SCALEADV_WORKDIR") or tempfile.mkdtemp(prefix="scaleadv-detector-")
        self.workdir = Path(workdir)
        self.timeout = float(timeout)
        self._batch = 0

    def detect(self, frame: Frame) -> list[Detection]:
        return self.detect_batch([frame])[0]

    def detect_batch(self, frames: Sequence[Frame]) -> list[list[Detection]]:
        if not frames:
            return []
        batch_dir = self.workdir / f"batch_{self._batch:05d}"
        self._batch += 1
        cloud_dir = batch_dir / "cloud"
        cloud_dir.mkdir(parents=True, exist_ok=True)
        lines = []
        for frame in frames:
            cloud_path = cloud_dir / f"{frame.id}.bin"
            frame.cloud.points.astype("<f4").tofile(cloud_path)
            lines.append(f"{frame.id} {cloud_path.resolve()}")
        manifest = batch_dir / "request.txt"
        manifest.write_text("\n".join(lines) + "\n")

        env = dict(os.environ, SCALEADV_REQUEST_MANIFEST=str(manifest.resolve()))
        try:
            proc = subprocess.run(
                self.argv + [str(manifest.resolve())],
                env=env,
                capture_output=True,
                text=True,
                timeout=self.timeout,
            )
        except subprocess.TimeoutExpired as exc:
            raise DetectorError(f"detector command timed out after {self.timeout}s: {self.argv[0]}") from exc
        except OSError as exc:
            raise DetectorError(f"cannot run detector command {self.argv[0]!r}: {exc}") from exc
        if proc.returncode != 0:
            tail = (proc.stderr or proc.stdout or "").strip().splitlines()[-3:]
            raise DetectorError(f"detector command exited with {proc.returncode}: " + " | ".join(tail))
        return [self._read_predictions(batch_dir / "pred" / f"{frame.id}.txt", frame.id) for frame in frames]

    @staticmethod
    def _read_predictions(path: Path, frame_id: str) -> list[Detection]:
        if not path.is_file():
            raise DetectorError(f"frame {frame_id}: detector wrote no prediction file at {path}")
        detections = []
        for lineno, line in enumerate(path.read_text().splitlines()):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 16:
                raise DetectorError(f"frame {frame_id}: prediction line {lineno + 1} has {len(fields)} fields, expected 16")
            try:
                h, w, l = (float(v) for v in fields[8:11])
                x, y, z = (float(v) for v in fields[11:14])
                yaw = float(fields[14])
                score = float(fields[15])
                detections.append(Detection(Box3D(x, y, z, l, w, h, yaw), score, fields[0]))
            except ValueError as exc:
                raise DetectorError(f"frame {frame_id}: prediction line {lineno + 1} is malformed ({exc})") from exc
        detections.sort(key=lambda d: -d.score)
        return detections


def detector_from_spec(spec: str, workdir=None, timeout: float = 300.0) -> DetectorAdapter:
    """Build an adapter from a config string.

    Recognized forms::

        oracle
        size-prior:pull=0.5,mean=3.9x1.6x1.56
        external:python bridge.py --labels /data/label_2
    """
    kind, _, rest = spec.partition(":")
    kind = kind.strip()
    if kind == "oracle":
        return OracleDetector()
    if kind == "size-prior":
        pull, mean_dims = 1.0, DEFAULT_MEAN_DIMS
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, _, value = item.partition("=")
            if key in ("pull", "lambda"):
                pull = float(value)
            elif key == "mean":
                mean_dims = tuple(float(v) for v in value.split("x"))
            else:
                raise ValueError(f"unknown size-prior parameter {key!r}")
        return SizePriorDetector(pull, mean_dims)
    if kind == "external":
        if not rest.strip():
            raise ValueError("external detector spec needs a command, e.g. external:python bridge.py")
        return ExternalDetector(rest, workdir=workdir, timeout=timeout)
    raise ValueError(f"unknown detector spec {spec!r}")

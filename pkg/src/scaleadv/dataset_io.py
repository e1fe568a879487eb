"""KITTI-layout dataset I/O.

Clouds are little-endian float32 x/y/z/intensity quadruplets.  Label files
carry camera-frame boxes (`type trunc occl alpha bbox*4 h w l x y z ry`); on
load they are converted into sensor-frame :class:`~scaleadv.geometry.Box3D`
anchored at the bottom-face center, and written back out through the inverse
conversion so a load->write->load round trip is drift-free to well under the
label text precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EmptyDatasetError, ParseError
from .geometry import Box3D, PointCloud, wrap_angle
from .stats import SizeDistribution, build_histogram

# trunc occl alpha bbox_left bbox_top bbox_right bbox_bottom
DEFAULT_EXTRAS = ("0.00", "0", "0.00", "0.00", "0.00", "0.00", "0.00")

_FLOAT_FMT = "%.6f"  # label text precision; bounds round-trip drift well under 1e-5


@dataclass
class Annotation:
    """One labeled instance: sensor-frame box, class name, label-file position.

    extras carries the truncation/occlusion/alpha/bbox fields verbatim so a
    rewritten label keeps whatever the source said there.
    """

    box: Box3D
    cls: str
    source_index: int = 0
    extras: tuple[str, ...] = DEFAULT_EXTRAS

    def __post_init__(self):
        if not self.cls or any(ch.isspace() for ch in self.cls):
            raise ValueError(f"class name must be nonempty without whitespace, got {self.cls!r}")
        if len(self.extras) != 7:
            raise ValueError(f"expected 7 extra label fields, got {len(self.extras)}")


class FrameRecord(NamedTuple):
    frame_id: str
    cloud_path: Path
    label_path: Path
    calib_path: Path


@dataclass(frozen=True)
class Calibration:
    """Rectification matrix and the rigid sensor-to-camera transform.

    rect is 3x3, velo_to_cam is 3x4; both rotation blocks must be orthonormal
    within 1e-3.  raw_lines, when present, reproduces the source calib file
    verbatim on write.
    """

    rect: np.ndarray
    velo_to_cam: np.ndarray
    raw_lines: tuple[str, ...] | None = None

    def __post_init__(self):
        rect = np.asarray(self.rect, dtype=np.float64)
        tr = np.asarray(self.velo_to_cam, dtype=np.float64)
        if rect.shape != (3, 3):
            raise ValueError(f"rect must be 3x3, got {rect.shape}")
        if tr.shape != (3, 4):
            raise ValueError(f"velo_to_cam must be 3x4, got {tr.shape}")
        for name, rot in (("rect", rect), ("velo_to_cam rotation", tr[:, :3])):
            err = np.abs(rot.T @ rot - np.eye(3)).max()
            if not math.isfinite(err) or err > 1e-3:
                raise ValueError(f"{name} is not orthonormal (max deviation {err:.2e})")
        object.__setattr__(self, "rect", rect)
        object.__setattr__(self, "velo_to_cam", tr)

    @classmethod
    def identity(cls) -> "Calibration":
        return cls(np.eye(3), np.hstack([np.eye(3), np.zeros((3, 1))]))

    @classmethod
    def from_file(cls, path) -> "Calibration":
        path = Path(path)
        entries = {}
        lines = []
        try:
            text = path.read_text()
        except OSError as exc:
            raise ParseError(f"{path}: cannot read calibration ({exc})") from exc
        for raw in text.splitlines():
            lines.append(raw)
            if ":" not in raw:
                continue
            key, _, rest = raw.partition(":")
            try:
                entries[key.strip()] = np.array([float(v) for v in rest.split()])
            except ValueError:
                continue  # non-numeric lines are carried through untouched
        rect = entries.get("R0_rect", entries.get("R_rect"))
        tr = entries.get("Tr_velo_to_cam")
        if rect is None or rect.size != 9:
            raise ParseError(f"{path}: missing or malformed R0_rect")
        if tr is None or tr.size != 12:
            raise ParseError(f"{path}: missing or malformed Tr_velo_to_cam")
        try:
            return cls(rect.reshape(3, 3), tr.reshape(3, 4), tuple(lines))
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc

    def file_text(self) -> str:
        if self.raw_lines is not None:
            return "\n".join(self.raw_lines) + "\n"
        rect = " ".join(repr(float(v)) for v in self.rect.ravel())
        tr = " ".join(repr(float(v)) for v in self.velo_to_cam.ravel())
        return f"R0_rect: {rect}\nTr_velo_to_cam: {tr}\n"

    def sensor_to_cam(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ (self.rect @ self.velo_to_cam[:, :3]).T + self.rect @ self.velo_to_cam[:, 3]

    def cam_to_sensor(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        unrect = points @ np.linalg.inv(self.rect).T
        rot_inv = np.linalg.inv(self.velo_to_cam[:, :3])
        return (unrect - self.velo_to_cam[:, 3]) @ rot_inv.T


def yaw_cam_to_sensor(ry: float) -> float:
    return wrap_angle(-float(ry) - math.pi / 2)


def yaw_sensor_to_cam(yaw: float) -> float:
    return wrap_angle(-float(yaw) - math.pi / 2)


@dataclass
class Frame:
    """One dataset frame: id, cloud, annotations, calibration."""

    id: str
    cloud: PointCloud
    annotations: list[Annotation]
    calib: Calibration = field(default_factory=Calibration.identity)

    def __post_init__(self):
        if not self.id or any(ch.isspace() for ch in self.id):
            raise ValueError(f"frame id must be nonempty without whitespace, got {self.id!r}")


def load_cloud(path) -> PointCloud:
    path = Path(path)
    try:
        raw = np.fromfile(path, dtype="<f4")
    except OSError as exc:
        raise ParseError(f"{path}: cannot read cloud ({exc})") from exc
    if raw.size % 4 != 0:
        raise ParseError(f"{path}: cloud payload is {raw.size * 4} bytes, not a multiple of 16")
    return PointCloud(raw.reshape(-1, 4))


def parse_label_line(fields: Sequence[str], calib: Calibration, *, where: str) -> tuple[Annotation, float | None]:
    """One parsed label row -> (annotation, trailing score or None)."""
    if len(fields) not in (15, 16):
        raise ParseError(f"{where}: expected 15 or 16 fields, got {len(fields)}")
    try:
        h, w, l = (float(v) for v in fields[8:11])
        loc_cam = np.array([float(v) for v in fields[11:14]])
        ry = float(fields[14])
        score = float(fields[15]) if len(fields) == 16 else None
    except ValueError as exc:
        raise ParseError(f"{where}: non-numeric field ({exc})") from exc
    cx, cy, cz = calib.cam_to_sensor(loc_cam)
    try:
        box = Box3D(cx, cy, cz, l, w, h, yaw_cam_to_sensor(ry))
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from exc
    return Annotation(box, fields[0]), score


def load_labels(path, calib: Calibration) -> list[Annotation]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read labels ({exc})") from exc
    annotations = []
    for lineno, line in enumerate(text.splitlines()):
        fields = line.split()
        if not fields:
            continue
        if fields[0] == "DontCare":
            continue
        ann, _ = parse_label_line(fields, calib, where=f"{path}:{lineno + 1}")
        ann.source_index = lineno
        ann.extras = tuple(fields[1:8])
        annotations.append(ann)
    return annotations


def load_frame(cloud_path, label_path, calib_path, frame_id: str | None = None) -> Frame:
    """Load one KITTI-style frame; DontCare rows are dropped."""
    cloud_path = Path(cloud_path)
    calib = Calibration.from_file(calib_path)
    return Frame(
        id=frame_id or cloud_path.stem,
        cloud=load_cloud(cloud_path),
        annotations=load_labels(label_path, calib),
        calib=calib,
    )


def format_label_line(ann: Annotation, calib: Calibration, score: float | None = None) -> str:
    box = ann.box
    x, y, z = calib.sensor_to_cam([box.cx, box.cy, box.cz])
    fields = [ann.cls, *ann.extras]
    fields += [_FLOAT_FMT % v for v in (box.h, box.w, box.l, x, y, z)]
    fields.append(_FLOAT_FMT % yaw_sensor_to_cam(box.yaw))
    if score is not None:
        fields.append(_FLOAT_FMT % score)
    return " ".join(fields)


def write_frame(frame: Frame, out_dir) -> FrameRecord:
    """Write a frame as KITTI velodyne/label_2/calib files under out_dir."""
    out_dir = Path(out_dir)
    cloud_path = out_dir / "velodyne" / f"{frame.id}.bin"
    label_path = out_dir / "label_2" / f"{frame.id}.txt"
    calib_path = out_dir / "calib" / f"{frame.id}.txt"
    for p in (cloud_path, label_path, calib_path):
        p.parent.mkdir(parents=True, exist_ok=True)
    frame.cloud.points.astype("<f4").tofile(cloud_path)
    lines = [format_label_line(ann, frame.calib) for ann in frame.annotations]
    label_path.write_text("\n".join(lines) + ("\n" if lines else ""))
    calib_path.write_text(frame.calib.file_text())
    return FrameRecord(frame.id, cloud_path, label_path, calib_path)


def write_manifest(records: Sequence[FrameRecord], path) -> Path:
    """One line per frame: `frame_id cloud_path label_path calib_path`.

    Paths are stored relative to the manifest's directory when possible.
    """
    path = Path(path)
    base = path.resolve().parent
    lines = []
    for rec in records:
        paths = []
        for p in (rec.cloud_path, rec.label_path, rec.calib_path):
            p = Path(p)
            try:
                paths.append(p.resolve().relative_to(base).as_posix())
            except ValueError:
                paths.append(str(p.resolve()))
        lines.append(" ".join([rec.frame_id, *paths]))
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return path


def read_manifest(path) -> list[FrameRecord]:
    """Parse a dataset manifest; relative paths resolve against its directory."""
    path = Path(path)
    base = path.resolve().parent
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read manifest ({exc})") from exc
    records = []
    for lineno, line in enumerate(text.splitlines()):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 4:
            raise ParseError(f"{path}:{lineno + 1}: expected `frame_id cloud label calib`, got {len(fields)} fields")
        paths = [Path(f) if Path(f).is_absolute() else base / f for f in fields[1:]]
        records.append(FrameRecord(fields[0], *paths))
    return records


def load_dataset(manifest_path, workers: int = 1) -> list[Frame]:
    """Load every frame listed in a manifest, preserving manifest order."""
    records = read_manifest(manifest_path)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda r: load_frame(r.cloud_path, r.label_path, r.calib_path, r.frame_id), records))
    return [load_frame(r.cloud_path, r.label_path, r.calib_path, r.frame_id) for r in records]


def iter_class_annotations(frames: Sequence[Frame], classes: Sequence[str] | None = None):
    """Yield (frame, annotation_index, annotation) for the selected classes."""
    wanted = set(classes) if classes else None
    for frame in frames:
        for idx, ann in enumerate(frame.annotations):
            if wanted is None or ann.cls in wanted:
                yield frame, idx, ann


def dataset_size_distribution(frames: Sequence[Frame], classes: Sequence[str] | None = None,
                              k: int = 50, value_range: tuple[float, float] | None = None) -> SizeDistribution:
    """Histogram of instance volumes over the selected classes."""
    volumes = [ann.box.volume for _, _, ann in iter_class_annotations(frames, classes)]
    if not volumes:
        raise EmptyDatasetError(f"no annotations matching classes {sorted(classes) if classes else 'any'}")
    return build_histogram(volumes, k, value_range)

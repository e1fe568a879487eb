"""Shared test utilities: independent oracles and synthetic dataset builders.

The oracles here deliberately avoid the library's own code paths: box
membership uses half-plane tests instead of inverse rotation, IoU is
estimated by Monte-Carlo sampling, and average precision is recomputed from
explicit precision/recall points.
"""

from __future__ import annotations

import math
import shlex
import sys
from pathlib import Path

import numpy as np

from scaleadv import (
    Annotation,
    Box3D,
    Calibration,
    Frame,
    PointCloud,
    iou_3d,
    write_frame,
    write_manifest,
)

CAR_DIMS = (3.9, 1.6, 1.56)  # l, w, h


# ---------------------------------------------------------------------------
# independent geometry oracle


def oracle_bev_corners(box: Box3D) -> np.ndarray:
    hl, hw = box.l / 2, box.w / 2
    base = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return base @ rot.T + [box.cx, box.cy]


def oracle_inside(box: Box3D, pts: np.ndarray) -> np.ndarray:
    """Half-plane membership test, boundary inclusive."""
    corners = oracle_bev_corners(box)
    ok = (pts[:, 2] >= box.cz) & (pts[:, 2] <= box.cz + box.h)
    for i in range(4):
        ax, ay = corners[i]
        bx, by = corners[(i + 1) % 4]
        ok &= (bx - ax) * (pts[:, 1] - ay) - (by - ay) * (pts[:, 0] - ax) >= 0
    return ok


def mc_iou(a: Box3D, b: Box3D, n: int = 1_000_000, seed: int = 0) -> float:
    """Monte-Carlo IoU over the boxes' shared bounding volume."""
    corners = np.vstack([
        np.hstack([oracle_bev_corners(a), np.array([[a.cz]] * 4)]),
        np.hstack([oracle_bev_corners(a), np.array([[a.cz + a.h]] * 4)]),
        np.hstack([oracle_bev_corners(b), np.array([[b.cz]] * 4)]),
        np.hstack([oracle_bev_corners(b), np.array([[b.cz + b.h]] * 4)]),
    ])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(n, 3))
    in_a = oracle_inside(a, pts)
    in_b = oracle_inside(b, pts)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union


def random_box_pair(rng: np.random.Generator) -> tuple[Box3D, Box3D]:
    """Mostly-overlapping random pairs (tight bounding volumes keep the
    Monte-Carlo variance well under the comparison tolerance), with a slice
    of guaranteed-disjoint ones."""
    a = Box3D(
        rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-1, 1),
        rng.uniform(1.0, 4.0), rng.uniform(0.8, 3.0), rng.uniform(0.8, 2.5),
        rng.uniform(-math.pi, math.pi),
    )
    if rng.random() < 0.15:
        b = Box3D(a.cx + 25.0, a.cy - 10.0, a.cz, a.l, a.w, a.h, a.yaw)
    else:
        b = Box3D(
            a.cx + rng.uniform(-0.6, 0.6) * a.l, a.cy + rng.uniform(-0.6, 0.6) * a.w,
            a.cz + rng.uniform(-0.5, 0.5) * a.h,
            a.l * rng.uniform(0.6, 1.5), a.w * rng.uniform(0.6, 1.5), a.h * rng.uniform(0.6, 1.5),
            a.yaw + rng.uniform(-0.7, 0.7),
        )
    return a, b


# ---------------------------------------------------------------------------
# independent average-precision oracle


def ap_oracle(frame_pairs, iou_thr: float = 0.7, points: int = 40) -> float:
    """AP recomputed from explicit PR points with its own ranking loop."""
    events = []
    for frame_idx, (dets, _) in enumerate(frame_pairs):
        for det in dets:
            events.append((det.score, frame_idx, det))
    events.sort(key=lambda item: -item[0])
    claimed = [[False] * len(anns) for _, anns in frame_pairs]
    npos = sum(len(anns) for _, anns in frame_pairs)
    precisions, recalls = [], []
    tp = 0
    for rank, (_, frame_idx, det) in enumerate(events, start=1):
        anns = frame_pairs[frame_idx][1]
        best_j, best_iou = -1, 0.0
        for j, ann in enumerate(anns):
            if claimed[frame_idx][j] or ann.cls != det.cls:
                continue
            value = iou_3d(det.box, ann.box)
            if value >= iou_thr and value > best_iou:
                best_j, best_iou = j, value
        if best_j >= 0:
            claimed[frame_idx][best_j] = True
            tp += 1
        precisions.append(tp / rank)
        recalls.append(tp / npos)
    if points == 40:
        positions = [i / 40 for i in range(1, 41)]
    else:
        positions = [i / 10 for i in range(11)]
    total = 0.0
    for r in positions:
        best = 0.0
        for rec, prec in zip(recalls, precisions):
            if rec >= r - 1e-12:
                best = max(best, prec)
        total += best
    return 100.0 * total / len(positions)


# ---------------------------------------------------------------------------
# synthetic datasets


def fill_box(rng: np.random.Generator, box: Box3D, count: int, margin: float = 0.9) -> np.ndarray:
    """Points sampled inside a box (in its own frame, then posed)."""
    u = rng.uniform(-margin * box.l / 2, margin * box.l / 2, count)
    v = rng.uniform(-margin * box.w / 2, margin * box.w / 2, count)
    z = rng.uniform((1 - margin) * box.h / 2, margin * box.h, count)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    x = box.cx + c * u - s * v
    y = box.cy + s * u + c * v
    return np.column_stack([x, y, box.cz + z, rng.uniform(0, 1, count)])


def make_frame(frame_id: str, boxes, cls="Car", points_per_box: int = 40,
               seed: int = 0, calib: Calibration | None = None,
               background: int = 0) -> Frame:
    """Frame with the given boxes, each filled with seeded interior points."""
    rng = np.random.default_rng(seed)
    classes = [cls] * len(boxes) if isinstance(cls, str) else list(cls)
    chunks = [fill_box(rng, box, points_per_box) for box in boxes] if points_per_box else []
    if background:
        bg = np.column_stack([
            rng.uniform(60, 90, background), rng.uniform(60, 90, background),
            rng.uniform(-2, 2, background), rng.uniform(0, 1, background),
        ])
        chunks.append(bg)
    points = np.vstack(chunks) if chunks else np.empty((0, 4))
    # quantize like an on-disk cloud so write->load comparisons are exact
    points = points.astype("<f4").astype(np.float64)
    annotations = [Annotation(box, c, source_index=i) for i, (box, c) in enumerate(zip(boxes, classes))]
    return Frame(frame_id, PointCloud(points), annotations, calib or Calibration.identity())


def spaced_boxes(dims_list, spacing: float = 15.0, yaw: float = 0.3) -> list[Box3D]:
    """Well-separated boxes on a line, safe for scale round trips up to x2."""
    return [
        Box3D(10.0 + i * spacing, 3.0 * (i % 2), -1.0, l, w, h, yaw * ((i % 3) - 1))
        for i, (l, w, h) in enumerate(dims_list)
    ]


def car_boxes(volumes, spacing: float = 15.0) -> list[Box3D]:
    """Car-proportioned boxes with the requested volumes."""
    base = np.prod(CAR_DIMS)
    dims = [tuple(d * (v / base) ** (1 / 3) for d in CAR_DIMS) for v in np.atleast_1d(volumes)]
    return spaced_boxes(dims, spacing)


def volume_frames(volumes, per_frame: int = 50, points_per_box: int = 0,
                  prefix: str = "f") -> list[Frame]:
    """Many-annotation dataset for distribution-level tests; clouds optional."""
    volumes = np.asarray(volumes, dtype=np.float64)
    frames = []
    for start in range(0, volumes.size, per_frame):
        chunk = volumes[start:start + per_frame]
        boxes = car_boxes(chunk, spacing=10.0)
        frames.append(make_frame(f"{prefix}{start // per_frame:05d}", boxes,
                                 points_per_box=points_per_box, seed=start + 1))
    return frames


def tilted_calibration() -> Calibration:
    """Non-identity calibration: axis permutation plus a small rectification."""
    tr = np.array([
        [0.0, -1.0, 0.0, 0.02],
        [0.0, 0.0, -1.0, -0.06],
        [1.0, 0.0, 0.0, 0.27],
    ])
    angle = 0.01
    c, s = math.cos(angle), math.sin(angle)
    rect = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Calibration(rect, tr)


def write_dataset(frames, root: Path) -> Path:
    """Materialize frames as a KITTI tree and return the manifest path."""
    root = Path(root)
    records = [write_frame(frame, root) for frame in frames]
    return write_manifest(records, root / "manifest.txt")


# ---------------------------------------------------------------------------
# subprocess detector bridges

# Replays prediction files prepared by the test (TEST_PRED_DIR/<fid>.txt),
# verifying the request side of the protocol along the way: env/argv manifest
# agreement and 16-byte cloud records.  Point counts land in counts.txt.
ECHO_BRIDGE = """\
import os, sys
from pathlib import Path

manifest = Path(sys.argv[-1])
if os.environ.get("SCALEADV_REQUEST_MANIFEST") != str(manifest):
    sys.stderr.write("manifest env/argv mismatch\\n")
    sys.exit(4)
pred = manifest.parent / "pred"
pred.mkdir(exist_ok=True)
src = Path(os.environ["TEST_PRED_DIR"])
counts = []
for line in manifest.read_text().splitlines():
    fid, cloud = line.split(" ", 1)
    blob = Path(cloud).read_bytes()
    if len(blob) % 16:
        sys.stderr.write(f"{fid}: ragged cloud\\n")
        sys.exit(7)
    counts.append(f"{fid} {len(blob) // 16}")
    reply = src / f"{fid}.txt"
    (pred / f"{fid}.txt").write_text(reply.read_text() if reply.exists() else "")
(manifest.parent / "counts.txt").write_text("\\n".join(counts) + "\\n")
"""

# Predicts one car per non-empty cloud at the centroid of its points, so
# tests can confirm the cloud bytes themselves reach the command intact.
CENTROID_BRIDGE = """\
import os, sys
import numpy as np
from pathlib import Path

manifest = Path(sys.argv[-1])
pred = manifest.parent / "pred"
pred.mkdir(exist_ok=True)
l, w, h = (float(v) for v in os.environ.get("TEST_DIMS", "3.9x1.6x1.56").split("x"))
for line in manifest.read_text().splitlines():
    fid, cloud = line.split(" ", 1)
    pts = np.fromfile(cloud, dtype="<f4").reshape(-1, 4)
    out = pred / f"{fid}.txt"
    if len(pts) == 0:
        out.write_text("")
        continue
    cx, cy, cz = pts[:, :3].mean(axis=0)
    out.write_text(f"Car 0 0 0 0 0 0 0 {h} {w} {l} {cx} {cy} {cz - h / 2} 0.0 0.9\\n")
"""


def write_script(path: Path, body: str) -> str:
    """Drop a python script and return a shell command that runs it."""
    path = Path(path)
    path.write_text(body)
    return f"{shlex.quote(sys.executable)} {shlex.quote(str(path))}"


def prediction_line(ann, score: float = 1.0) -> str:
    """Protocol reply row for an annotation: sensor-frame pose plus a score."""
    box = ann.box
    vals = " ".join(repr(float(v)) for v in (box.h, box.w, box.l, box.cx, box.cy, box.cz, box.yaw))
    return f"{ann.cls} 0 0 0 0 0 0 0 {vals} {score}"

"""Oriented 3D boxes, point membership, instance scaling, and exact box IoU.

Everything lives in a right-handed sensor frame: x forward, y left, z up.
Boxes are anchored at the center of their bottom face so that ground-aligned
objects keep their footprint when scaled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_DEGENERATE_AREA = 1e-12  # m^2; BEV overlaps thinner than this count as no overlap


def wrap_angle(angle: float) -> float:
    """Wrap an angle in radians to (-pi, pi]."""
    wrapped = math.remainder(float(angle), math.tau)
    if wrapped <= -math.pi:
        wrapped += math.tau
    return wrapped


@dataclass(frozen=True)
class Box3D:
    """Axis-aligned-up oriented box: bottom-face center, dimensions, heading.

    l runs along the heading, w across it, h up.  yaw is the heading angle
    about +z and is normalized to (-pi, pi] on construction.
    """

    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float = 0.0

    def __post_init__(self):
        values = [self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw]
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"box parameters must be finite, got {values}")
        if self.l <= 0 or self.w <= 0 or self.h <= 0:
            raise ValueError(f"box dimensions must be positive, got l={self.l} w={self.w} h={self.h}")
        for name, value in zip(("cx", "cy", "cz", "l", "w", "h"), values):
            object.__setattr__(self, name, float(value))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    @property
    def bottom_center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    def scaled(self, scale: float) -> "Box3D":
        """Same pose, all three dimensions multiplied by ``scale``."""
        if not (math.isfinite(scale) and scale > 0):
            raise ValueError(f"scale must be a positive finite number, got {scale}")
        return Box3D(self.cx, self.cy, self.cz, self.l * scale, self.w * scale, self.h * scale, self.yaw)


@dataclass(frozen=True)
class PointCloud:
    """(N, 4) float array of x, y, z, intensity in the sensor frame."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"point cloud must have shape (N, 4), got {pts.shape}")
        if pts.size and not np.isfinite(pts[:, :3]).all():
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def __len__(self) -> int:
        return self.points.shape[0]


def points_in_box(cloud: PointCloud, box: Box3D) -> np.ndarray:
    """Indices of cloud points inside the box, boundary inclusive."""
    if len(cloud) == 0:
        return np.empty(0, dtype=np.intp)
    d = cloud.xyz - box.bottom_center
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    u = c * d[:, 0] + s * d[:, 1]
    v = -s * d[:, 0] + c * d[:, 1]
    inside = (
        (np.abs(u) <= box.l / 2)
        & (np.abs(v) <= box.w / 2)
        & (d[:, 2] >= 0.0)
        & (d[:, 2] <= box.h)
    )
    return np.flatnonzero(inside)


def scale_instance(cloud: PointCloud, box: Box3D, scale: float) -> tuple[PointCloud, Box3D]:
    """Scale one instance about the box's bottom center.

    Membership is evaluated on the input cloud before anything moves, so a
    shrink does not re-capture points and a grow does not pull in bystanders.
    Points outside the box are untouched.
    """
    if not (math.isfinite(scale) and scale > 0):
        raise ValueError(f"scale must be a positive finite number, got {scale}")
    idx = points_in_box(cloud, box)
    pts = cloud.points.copy()
    if idx.size:
        anchor = box.bottom_center
        pts[idx, :3] = anchor + scale * (pts[idx, :3] - anchor)
    return PointCloud(pts), box.scaled(scale)


def box_corners(box: Box3D) -> np.ndarray:
    """(8, 3) corner array: bottom face counterclockwise from above, then top.

    Corner 0 sits at (+l/2, +w/2) in the box frame; corner i+4 is corner i
    lifted by h.
    """
    hl, hw = box.l / 2, box.w / 2
    footprint = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    bev = footprint @ rot.T + [box.cx, box.cy]
    corners = np.empty((8, 3))
    corners[:4, :2] = bev
    corners[4:, :2] = bev
    corners[:4, 2] = box.cz
    corners[4:, 2] = box.cz + box.h
    return corners


def box_from_corners(corners: np.ndarray) -> Box3D:
    """Inverse of :func:`box_corners` for corner arrays in its layout."""
    corners = np.asarray(corners, dtype=np.float64)
    if corners.shape != (8, 3):
        raise ValueError(f"expected (8, 3) corners, got {corners.shape}")
    bottom = corners[:4]
    center = bottom[:, :2].mean(axis=0)
    front_mid = (bottom[0, :2] + bottom[3, :2]) / 2
    heading = front_mid - center
    yaw = math.atan2(heading[1], heading[0])
    l = float(np.linalg.norm(bottom[0, :2] - bottom[1, :2]))
    w = float(np.linalg.norm(bottom[0, :2] - bottom[3, :2]))
    cz = float(bottom[:, 2].mean())
    h = float(corners[4:, 2].mean() - cz)
    return Box3D(float(center[0]), float(center[1]), cz, l, w, h, yaw)


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> list[tuple[float, float]]:
    """Intersection of two convex CCW polygons (Sutherland-Hodgman).

    The inside test is inclusive (cross >= 0) so shared edges and identical
    polygons clip to themselves exactly.
    """
    output = [tuple(p) for p in subject]
    for i in range(len(clip)):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % len(clip)]
        ex, ey = bx - ax, by - ay
        polygon = output
        output = []
        px, py = polygon[-1]
        p_in = ex * (py - ay) - ey * (px - ax) >= 0
        for qx, qy in polygon:
            q_in = ex * (qy - ay) - ey * (qx - ax) >= 0
            if q_in != p_in:
                output.append(_edge_intersection(px, py, qx, qy, ax, ay, bx, by))
            if q_in:
                output.append((qx, qy))
            px, py, p_in = qx, qy, q_in
    return output


def _edge_intersection(px, py, qx, qy, ax, ay, bx, by):
    """Intersection of segment p-q with the infinite line a-b."""
    dx, dy = qx - px, qy - py
    ex, ey = bx - ax, by - ay
    den = dx * ey - dy * ex
    if abs(den) < 1e-30:  # parallel within noise; caller straddles, pick an endpoint
        return (qx, qy)
    t = ((ax - px) * ey - (ay - py) * ex) / den
    return (px + t * dx, py + t * dy)


def _bev_footprint(box: Box3D) -> np.ndarray:
    return box_corners(box)[:4, :2]


def _polygon_area(vertices) -> float:
    """Shoelace area; shared between intersection and union so they cancel."""
    if len(vertices) < 3:
        return 0.0
    area = 0.0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        area += x0 * y1 - x1 * y0
    return abs(area) / 2


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Exact IoU of two oriented boxes sharing the up axis.

    BEV rotated-rectangle intersection via convex clipping times the vertical
    overlap; intersections thinner than 1e-12 m^2 in BEV count as zero.  Box
    volumes in the union come from the same footprint polygons through the
    same area routine, so identical boxes land on exactly 1.
    """
    overlap_z = min(a.cz + a.h, b.cz + b.h) - max(a.cz, b.cz)
    if overlap_z <= 0:
        return 0.0
    fa, fb = _bev_footprint(a), _bev_footprint(b)
    area = _polygon_area(_clip_polygon(fa, fb))
    if area < _DEGENERATE_AREA:
        return 0.0
    inter = area * overlap_z
    union = _polygon_area(list(map(tuple, fa))) * a.h + _polygon_area(list(map(tuple, fb))) * b.h - inter
    return float(min(max(inter / union, 0.0), 1.0))

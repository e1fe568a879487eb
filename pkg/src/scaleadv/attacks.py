"""Scaling attacks on annotated LiDAR frames.

Three ways to pick per-instance scale factors:

* model-aware: smallest |sigma| on a symmetric grid that makes the target
  detector lose the instance after its predictions are scaled back;
* distribution-aware: deviate the dataset's size histogram to a requested
  JS divergence, then transport every instance volume onto the deviated
  histogram through an inverse-CDF map;
* blind: one constant factor for everything.

All three emit a :class:`ScalePlan`, a plain-text artifact that
:func:`apply_scale_plan` replays onto frames deterministically.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize

from .dataset_io import Frame, iter_class_annotations
from .detector import Detection, DetectorAdapter
from .errors import EmptyDatasetError, NoSolutionError, ParseError, PlanError
from .geometry import Box3D, PointCloud, iou_3d, points_in_box, scale_instance
from .stats import (
    EmpiricalCDF,
    SizeDistribution,
    build_histogram,
    icdf_map,
    js_divergence_masses,
    sample_from_histogram,
)

FLAG_ATTACKED = "attacked"
FLAG_UNATTACKED = "unattacked"
_FLAGS = (FLAG_ATTACKED, FLAG_UNATTACKED)

_PLAN_MAGIC = "# scaleadv-plan v1"

MASS_EPS = 1e-6  # strict (0, 1) interval constraints realized as [eps, 1 - eps]


class PlanEntry(NamedTuple):
    scale: float
    flag: str


@dataclass
class ScalePlan:
    """Per-instance scale factors keyed by (frame id, annotation index)."""

    attack: str
    entries: dict[tuple[str, int], PlanEntry]
    params: dict
    seed: int | None = None

    def __post_init__(self):
        normalized = {}
        for (fid, idx), entry in self.entries.items():
            scale = float(entry.scale)
            if not (math.isfinite(scale) and scale > 0):
                raise ValueError(f"plan entry ({fid}, {idx}) has non-positive scale {scale}")
            if idx < 0:
                raise ValueError(f"plan entry ({fid}, {idx}) has negative annotation index")
            if entry.flag not in _FLAGS:
                raise ValueError(f"plan entry ({fid}, {idx}) has unknown flag {entry.flag!r}")
            normalized[(fid, idx)] = PlanEntry(scale, entry.flag)
        self.entries = normalized

    @property
    def mean_abs_sigma(self) -> float:
        """Mean |scale - 1| over every entry, unattacked ones included."""
        if not self.entries:
            return 0.0
        return float(np.mean([abs(e.scale - 1.0) for e in self.entries.values()]))

    def scale_for(self, frame_id: str, index: int) -> float:
        entry = self.entries.get((frame_id, index))
        return entry.scale if entry is not None else 1.0

    def save(self, path) -> Path:
        """Write the plan: header lines, then `frame_id index scale flag` rows."""
        path = Path(path)
        lines = [_PLAN_MAGIC, f"# attack: {self.attack}"]
        lines.append(f"# seed: {'none' if self.seed is None else self.seed}")
        lines.append(f"# mean_abs_sigma: {self.mean_abs_sigma!r}")
        for key in sorted(self.params):
            value = self.params[key]
            lines.append(f"# param {key}: {value!r}" if isinstance(value, float) else f"# param {key}: {value}")
        for (fid, idx), entry in sorted(self.entries.items()):
            lines.append(f"{fid} {idx} {entry.scale!r} {entry.flag}")
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "ScalePlan":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ParseError(f"{path}: cannot read plan ({exc})") from exc
        lines = text.splitlines()
        if not lines or lines[0].strip() != _PLAN_MAGIC:
            raise ParseError(f"{path}: not a scale plan (missing `{_PLAN_MAGIC}` header)")
        attack, seed, params, entries = None, None, {}, {}
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                key, _, value = body.partition(":")
                key, value = key.strip(), value.strip()
                if key == "attack":
                    attack = value
                elif key == "seed":
                    seed = None if value == "none" else int(value)
                elif key.startswith("param "):
                    params[key[len("param "):].strip()] = _parse_scalar(value)
                continue
            fields = line.split()
            if len(fields) != 4:
                raise ParseError(f"{path}:{lineno}: expected `frame_id index scale flag`, got {len(fields)} fields")
            try:
                idx, scale = int(fields[1]), float(fields[2])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            if fields[3] not in _FLAGS:
                raise ParseError(f"{path}:{lineno}: unknown flag {fields[3]!r}")
            entries[(fields[0], idx)] = PlanEntry(scale, fields[3])
        if attack is None:
            raise ParseError(f"{path}: plan header is missing the attack name")
        try:
            return cls(attack, entries, params, seed)
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc


def _parse_scalar(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    return value


def attack_loss(detections: Sequence[Detection], annotation, thr: float = 0.7) -> int:
    """0/1 loss: 1 when no same-class detection reaches IoU >= thr with the box."""
    if not (0.0 < thr < 1.0):
        raise ValueError(f"IoU threshold must be in (0, 1), got {thr}")
    best = 0.0
    for det in detections:
        if det.cls != annotation.cls:
            continue
        best = max(best, iou_3d(det.box, annotation.box))
    return 1 if best < thr else 0


def _frame_with_scaled_instance(frame: Frame, index: int, scale: float, frame_id: str) -> Frame:
    cloud, box = scale_instance(frame.cloud, frame.annotations[index].box, scale)
    annotations = list(frame.annotations)
    annotations[index] = replace(annotations[index], box=box)
    return Frame(frame_id, cloud, annotations, frame.calib)


def _rescaled_detections(detections: Sequence[Detection], scale: float) -> list[Detection]:
    out = []
    for det in detections:
        box = det.box
        out.append(Detection(Box3D(box.cx, box.cy, box.cz, box.l / scale, box.w / scale,
                                   box.h / scale, box.yaw), det.score, det.cls))
    return out


def sigma_grid(sigma_m: float, step: float) -> list[float]:
    """0, -step, +step, ..., -sigma_m, +sigma_m; step must divide sigma_m."""
    if not (0.0 < sigma_m < 1.0):
        raise ValueError(f"sigma_m must be in (0, 1), got {sigma_m}")
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    n = round(sigma_m / step)
    if n < 1 or abs(sigma_m / step - n) > 1e-6:
        raise ValueError(f"step {step} does not divide sigma_m {sigma_m}")
    grid = [0.0]
    for i in range(1, n + 1):
        grid += [-i * step, i * step]
    return grid


def model_aware_attack(frames: Sequence[Frame], detector: DetectorAdapter, sigma_m: float,
                       step: float = 0.01, thr: float = 0.7,
                       classes: Sequence[str] | None = None) -> ScalePlan:
    """Per-instance search for the smallest scale change the detector misses.

    Each candidate scales one instance (its points and box), runs the
    detector on the modified frame, scales the predicted dimensions back by
    the same factor, and scores the 0/1 loss against the original
    annotation.  The first grid factor (in |sigma| order, negative first)
    with loss 1 wins; instances surviving the whole grid keep scale 1 and
    are flagged unattacked.
    """
    if not (0.0 < thr < 1.0):
        raise ValueError(f"IoU threshold must be in (0, 1), got {thr}")
    grid = sigma_grid(sigma_m, step)
    entries = {}
    for frame, idx, ann in iter_class_annotations(frames, classes):
        candidates = [
            _frame_with_scaled_instance(frame, idx, 1.0 + sigma, f"{frame.id}__g{j}")
            for j, sigma in enumerate(grid)
        ]
        predictions = detector.detect_batch(candidates)
        chosen = None
        for sigma, preds in zip(grid, predictions):
            if attack_loss(_rescaled_detections(preds, 1.0 + sigma), ann, thr) == 1:
                chosen = sigma
                break
        if chosen is None:
            entries[(frame.id, idx)] = PlanEntry(1.0, FLAG_UNATTACKED)
        else:
            entries[(frame.id, idx)] = PlanEntry(1.0 + chosen, FLAG_ATTACKED)
    return ScalePlan("model-aware", entries, {"sigma_m": sigma_m, "step": step, "thr": thr})


@dataclass(frozen=True)
class BinDeviation:
    """Solver output: per-bin mass deviations and the divergence they reach."""

    deltas: np.ndarray
    achieved_js: float


def solve_bin_deviations(dist: SizeDistribution, phi: float, tol: float = 1e-3) -> BinDeviation:
    """Find small per-bin deviations with JS(b, b + delta) = phi.

    The deviations sum to zero and keep every deviated mass inside
    [1e-6, 1 - 1e-6].  Deterministic bisections along the mixture paths
    toward "all mass in one bin" (the lightest and the heaviest) provide
    feasible starts whose divergence already matches phi; an SLSQP polish
    from each start shrinks the total moved mass while holding the
    constraints, and the cheapest valid answer wins.  Two starts because
    the constraint set splits into branches the local polish cannot cross.
    Unreachable phi raises :class:`NoSolutionError` carrying the best
    achievable value.
    """
    if not (0.0 <= phi < 1.0):
        raise ValueError(f"phi must be in [0, 1), got {phi}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    b = dist.masses
    k = b.size
    if phi == 0.0:
        return BinDeviation(np.zeros(k), 0.0)

    # Feasible interior copy of b; one single-bin extreme per search path.
    b_hat = np.maximum(b, 2 * MASS_EPS)
    b_hat = b_hat / b_hat.sum()
    candidates = []
    best_achievable = 0.0
    for target in {int(np.argmin(b)), int(np.argmax(b))}:
        extreme = np.full(k, 2 * MASS_EPS)
        extreme[target] = 1.0 - 2 * MASS_EPS * (k - 1)

        def js_at(t: float) -> float:
            return js_divergence_masses(b, (1 - t) * b_hat + t * extreme)

        top = js_at(1.0)
        best_achievable = max(best_achievable, top)
        if top < phi - tol:
            continue  # this direction cannot reach phi
        lo_t, hi_t = 0.0, 1.0
        for _ in range(80):  # JS is convex along the path, so one upcrossing
            mid = (lo_t + hi_t) / 2
            if js_at(mid) < phi:
                lo_t = mid
            else:
                hi_t = mid
        delta0 = _repair_deltas((1 - hi_t) * b_hat + hi_t * extreme - b, b, k)
        if _deltas_valid(delta0, b, phi, tol):
            candidates.append(delta0)
        polished = _slsqp_polish(delta0, b, k, phi)
        if polished is not None and _deltas_valid(polished, b, phi, tol):
            candidates.append(polished)

    if not candidates:
        raise NoSolutionError(
            f"divergence {phi} is unreachable for this histogram (best achievable {best_achievable:.6f})",
            best_achievable)
    delta = min(candidates, key=lambda d: np.abs(d).sum())
    return BinDeviation(delta, js_divergence_masses(b, b + delta))


def _slsqp_polish(delta0: np.ndarray, b: np.ndarray, k: int, phi: float) -> np.ndarray | None:
    """Minimize total moved mass from a feasible start; None when it fails."""
    u_lo = np.maximum(0.0, MASS_EPS - b)
    u_hi = np.maximum(u_lo, 1.0 - MASS_EPS - b)
    v_lo = np.maximum(0.0, b - (1.0 - MASS_EPS))
    v_hi = np.maximum(v_lo, b - MASS_EPS)
    bounds = list(zip(np.concatenate([u_lo, v_lo]), np.concatenate([u_hi, v_hi])))
    x0 = np.concatenate([
        np.clip(np.maximum(delta0, 0.0), u_lo, u_hi),
        np.clip(np.maximum(-delta0, 0.0), v_lo, v_hi),
    ])

    def js_of(x):
        return js_divergence_masses(b, b + x[:k] - x[k:])

    def js_jac(x):
        q = b + x[:k] - x[k:]
        grad = 0.5 * np.log2(np.maximum(q, 1e-300) / ((b + q) / 2))
        return np.concatenate([grad, -grad])

    with warnings.catch_warnings():
        # scipy clips SLSQP trial points to the bounds itself; the repair
        # below re-establishes the exact constraints either way
        warnings.filterwarnings("ignore", message="Values in x were outside bounds",
                                category=RuntimeWarning)
        result = minimize(
            lambda x: x.sum(),
            x0,
            jac=lambda x: np.ones(2 * k),
            bounds=bounds,
            constraints=[
                {"type": "eq", "fun": lambda x: x[:k].sum() - x[k:].sum(),
                 "jac": lambda x: np.concatenate([np.ones(k), -np.ones(k)])},
                {"type": "eq", "fun": lambda x: js_of(x) - phi, "jac": js_jac},
            ],
            method="SLSQP",
            options={"maxiter": 400, "ftol": 1e-12},
        )
    if not result.success:
        return None
    return _repair_deltas(result.x[:k] - result.x[k:], b, k)


def _repair_deltas(delta: np.ndarray, b: np.ndarray, k: int) -> np.ndarray:
    delta = delta - delta.sum() / k
    delta = np.clip(b + delta, MASS_EPS, 1.0 - MASS_EPS) - b
    return delta - delta.sum() / k


def _deltas_valid(delta: np.ndarray, b: np.ndarray, phi: float, tol: float) -> bool:
    q = b + delta
    return (
        abs(delta.sum()) <= 1e-9
        and q.min() > 0.0
        and q.max() < 1.0
        and abs(js_divergence_masses(b, q) - phi) <= tol
    )


def distribution_aware_attack(frames: Sequence[Frame], phi: float, bins: int = 50,
                              seed: int = 0, tol: float = 1e-3,
                              classes: Sequence[str] | None = None) -> ScalePlan:
    """Scale instances so their volume histogram deviates from the dataset's.

    The deviated histogram comes from :func:`solve_bin_deviations`; sampling
    it yields an adversarial volume population, and each instance moves to
    the volume at its own quantile there (equal-quantile transport).  Scale
    factors are cube roots of the volume ratios.
    """
    if not (0.0 <= phi < 1.0):
        raise ValueError(f"phi must be in [0, 1), got {phi}")
    items = list(iter_class_annotations(frames, classes))
    if not items:
        raise EmptyDatasetError("distribution-aware attack needs at least one annotation")
    params = {"phi": phi, "bins": bins, "tol": tol}
    if phi == 0.0:
        entries = {(f.id, idx): PlanEntry(1.0, FLAG_ATTACKED) for f, idx, _ in items}
        return ScalePlan("distribution-aware", entries, params, seed)
    volumes = np.array([ann.box.volume for _, _, ann in items])
    hist = build_histogram(volumes, bins)
    deviation = solve_bin_deviations(hist, phi, tol)
    deviated_masses = hist.masses + deviation.deltas
    deviated = SizeDistribution(hist.bin_edges, deviated_masses / deviated_masses.sum())
    adversarial = sample_from_histogram(deviated, volumes.size, seed)
    mapped = icdf_map(volumes, EmpiricalCDF(volumes), EmpiricalCDF(adversarial))
    scales = np.cbrt(mapped / volumes)
    params["achieved_js"] = deviation.achieved_js
    entries = {
        (f.id, idx): PlanEntry(float(s), FLAG_ATTACKED)
        for (f, idx, _), s in zip(items, scales)
    }
    return ScalePlan("distribution-aware", entries, params, seed)


def blind_attack(frames: Sequence[Frame], sigma_b: float,
                 classes: Sequence[str] | None = None) -> ScalePlan:
    """One constant factor 1 + sigma_b for every selected instance."""
    if not math.isfinite(sigma_b) or sigma_b <= -1.0:
        raise ValueError(f"sigma_b must be a finite value > -1, got {sigma_b}")
    entries = {
        (f.id, idx): PlanEntry(1.0 + sigma_b, FLAG_ATTACKED)
        for f, idx, _ in iter_class_annotations(frames, classes)
    }
    return ScalePlan("blind", entries, {"sigma_b": sigma_b})


def apply_scale_plan(frames: Sequence[Frame], plan: ScalePlan) -> list[Frame]:
    """Replay a plan onto frames, returning modified copies.

    Membership is frozen on the unmodified cloud; instances claim points in
    annotation order, so a point sitting in two boxes moves with the first.
    Annotations without a plan entry keep scale 1.  Entries pointing at
    annotations the dataset does not have raise :class:`PlanError`.
    """
    by_frame: dict[str, dict[int, PlanEntry]] = {}
    for (fid, idx), entry in plan.entries.items():
        by_frame.setdefault(fid, {})[idx] = entry
    known = {frame.id for frame in frames}
    for fid in by_frame:
        if fid not in known:
            raise PlanError(f"plan references unknown frame {fid!r}")

    out = []
    contested = 0
    for frame in frames:
        frame_entries = by_frame.get(frame.id, {})
        for idx in frame_entries:
            if idx >= len(frame.annotations):
                raise PlanError(f"plan references annotation {idx} of frame {frame.id!r}, "
                                f"which has {len(frame.annotations)}")
        points = frame.cloud.points.copy()
        claimed = np.zeros(len(points), dtype=bool)
        annotations = list(frame.annotations)
        for idx, ann in enumerate(frame.annotations):
            inside = points_in_box(frame.cloud, ann.box)
            owned = inside[~claimed[inside]]
            contested += inside.size - owned.size
            claimed[inside] = True
            entry = frame_entries.get(idx)
            if entry is None or entry.scale == 1.0:
                continue
            anchor = ann.box.bottom_center
            points[owned, :3] = anchor + entry.scale * (points[owned, :3] - anchor)
            annotations[idx] = replace(ann, box=ann.box.scaled(entry.scale))
        out.append(Frame(frame.id, PointCloud(points), annotations, frame.calib))
    if contested:
        warnings.warn(f"{contested} points sat inside more than one box; first claim won", stacklevel=2)
    return out


def verify_plan(frames: Sequence[Frame], plan: ScalePlan, detector: DetectorAdapter | None = None,
                sample: int = 8, seed: int = 0) -> dict:
    """Check a plan against a dataset; returns {ok, violations, checked}.

    Structural checks always run: entries resolve to annotations, scales are
    positive, blind plans are constant, model-aware scales respect the
    sigma_m bound.  Given a detector, a seeded sample of model-aware entries
    is re-verified behaviorally: attacked entries must still defeat the
    detector at the recorded scale, unattacked ones must survive the whole
    grid.
    """
    violations = []
    checked = 0
    frame_map = {frame.id: frame for frame in frames}
    for (fid, idx), entry in sorted(plan.entries.items()):
        if fid not in frame_map:
            violations.append(f"entry ({fid}, {idx}): unknown frame")
        elif idx >= len(frame_map[fid].annotations):
            violations.append(f"entry ({fid}, {idx}): frame has {len(frame_map[fid].annotations)} annotations")

    if plan.attack == "blind" and plan.entries:
        expected = 1.0 + plan.params["sigma_b"] if "sigma_b" in plan.params else \
            next(iter(plan.entries.values())).scale
        for (fid, idx), entry in sorted(plan.entries.items()):
            if abs(entry.scale - expected) > 1e-12:
                violations.append(f"entry ({fid}, {idx}): blind scale {entry.scale} != {expected}")

    if plan.attack == "model-aware":
        sigma_m = plan.params.get("sigma_m")
        for (fid, idx), entry in sorted(plan.entries.items()):
            if sigma_m is not None and abs(entry.scale - 1.0) > sigma_m + 1e-9:
                violations.append(f"entry ({fid}, {idx}): scale {entry.scale} outside 1±{sigma_m}")
            if entry.flag == FLAG_UNATTACKED and entry.scale != 1.0:
                violations.append(f"entry ({fid}, {idx}): unattacked entry with scale {entry.scale}")
        if detector is not None and not violations:
            checked = _verify_model_aware(frame_map, plan, detector, sample, seed, violations)

    return {"ok": not violations, "violations": violations, "entries": len(plan.entries),
            "behavioral_checked": checked}


def _verify_model_aware(frame_map, plan: ScalePlan, detector: DetectorAdapter,
                        sample: int, seed: int, violations: list) -> int:
    rng = np.random.default_rng(seed)
    thr = plan.params.get("thr", 0.7)
    grid = sigma_grid(plan.params["sigma_m"], plan.params["step"]) \
        if "sigma_m" in plan.params and "step" in plan.params else None
    resolvable = [(key, entry) for key, entry in sorted(plan.entries.items()) if key[0] in frame_map]
    attacked = [(k, e) for k, e in resolvable if e.flag == FLAG_ATTACKED]
    unattacked = [(k, e) for k, e in resolvable if e.flag == FLAG_UNATTACKED]
    checked = 0

    def pick(items):
        if len(items) <= sample:
            return items
        return [items[i] for i in rng.choice(len(items), size=sample, replace=False)]

    for (fid, idx), entry in pick(attacked):
        frame = frame_map[fid]
        candidate = _frame_with_scaled_instance(frame, idx, entry.scale, f"{fid}__verify")
        preds = _rescaled_detections(detector.detect(candidate), entry.scale)
        checked += 1
        if attack_loss(preds, frame.annotations[idx], thr) != 1:
            violations.append(f"entry ({fid}, {idx}): recorded scale {entry.scale} no longer defeats the detector")

    for (fid, idx), entry in pick(unattacked):
        if grid is None:
            break
        frame = frame_map[fid]
        checked += 1
        for sigma in grid:
            candidate = _frame_with_scaled_instance(frame, idx, 1.0 + sigma, f"{fid}__verify")
            preds = _rescaled_detections(detector.detect(candidate), 1.0 + sigma)
            if attack_loss(preds, frame.annotations[idx], thr) == 1:
                violations.append(f"entry ({fid}, {idx}): unattacked instance is defeated at sigma {sigma}")
                break
    return checked

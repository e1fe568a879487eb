"""Detection evaluation: greedy IoU matching, Recall, attack success rate, AP.

Matching follows the usual detection convention: detections are visited in
descending score order and each claims the unclaimed same-class annotation
with the highest IoU at or above the threshold.  An annotation counts as
detected when something claimed it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset_io import Annotation, Frame
from .detector import Detection, DetectorAdapter
from .errors import EmptyDatasetError
from .geometry import iou_3d


@dataclass
class AnnotationMatch:
    """Outcome for one annotation: claimed or not, and by what."""

    frame_id: str
    index: int
    cls: str
    matched: bool
    iou: float = 0.0     # IoU with the claiming detection (best seen if unclaimed)
    score: float = 0.0   # score of the claiming detection


@dataclass
class MatchResult:
    frame_id: str
    matches: list[AnnotationMatch]
    detections_total: int


def _ranked(detections: Sequence[Detection]) -> list[Detection]:
    order = np.argsort([-d.score for d in detections], kind="stable")
    return [detections[i] for i in order]


def match_frame(detections: Sequence[Detection], annotations: Sequence[Annotation],
                iou_thr: float = 0.7, frame_id: str = "",
                indices: Sequence[int] | None = None) -> MatchResult:
    """Greedy one-to-one matching of detections to annotations.

    ``indices`` optionally carries the annotations' original positions in
    their frame, so class-filtered views keep stable identities.
    """
    if not (0.0 < iou_thr <= 1.0):
        raise ValueError(f"IoU threshold must be in (0, 1], got {iou_thr}")
    if indices is None:
        indices = range(len(annotations))
    matches = [AnnotationMatch(frame_id, idx, ann.cls, False)
               for idx, ann in zip(indices, annotations)]
    claimed = [False] * len(annotations)
    for det in _ranked(detections):
        best_i, best_iou = -1, 0.0
        for i, ann in enumerate(annotations):
            if ann.cls != det.cls:
                continue
            iou = iou_3d(det.box, ann.box)
            if not claimed[i]:
                matches[i].iou = max(matches[i].iou, iou)
            if not claimed[i] and iou >= iou_thr and iou > best_iou:
                best_i, best_iou = i, iou
        if best_i >= 0:
            claimed[best_i] = True
            matches[best_i].matched = True
            matches[best_i].iou = best_iou
            matches[best_i].score = det.score
    return MatchResult(frame_id, matches, len(detections))


def recall(results: Sequence[MatchResult]) -> float:
    """Percentage of annotations claimed by a detection."""
    total = sum(len(r.matches) for r in results)
    if total == 0:
        raise EmptyDatasetError("recall is undefined over zero annotations")
    hit = sum(m.matched for r in results for m in r.matches)
    return 100.0 * hit / total


def asr(before: Sequence[MatchResult], after: Sequence[MatchResult],
        denominator: str = "detected") -> float:
    """Attack success rate: share of instances the attack removed.

    ``before`` and ``after`` must describe the same annotation universe.
    The default denominator counts instances the detector found before the
    attack; ``denominator="all"`` uses every annotation.
    """
    if denominator not in ("detected", "all"):
        raise ValueError(f"denominator must be 'detected' or 'all', got {denominator!r}")
    key = lambda results: [(r.frame_id, len(r.matches)) for r in results]
    if key(before) != key(after):
        raise ValueError("before/after results cover different annotation universes")
    flips = 0
    was_detected = 0
    total = 0
    for rb, ra in zip(before, after):
        for mb, ma in zip(rb.matches, ra.matches):
            total += 1
            if mb.matched:
                was_detected += 1
                if not ma.matched:
                    flips += 1
    den = was_detected if denominator == "detected" else total
    if den == 0:
        raise EmptyDatasetError("attack success rate is undefined: nothing was detected before the attack")
    return 100.0 * flips / den


def pr_curve(frame_pairs: Sequence[tuple[Sequence[Detection], Sequence[Annotation]]],
             iou_thr: float = 0.7) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall after each detection in global descending-score order."""
    if not (0.0 < iou_thr <= 1.0):
        raise ValueError(f"IoU threshold must be in (0, 1], got {iou_thr}")
    npos = sum(len(anns) for _, anns in frame_pairs)
    if npos == 0:
        raise EmptyDatasetError("average precision is undefined over zero annotations")
    pool = []
    for frame_idx, (dets, _) in enumerate(frame_pairs):
        for det in dets:
            pool.append((det.score, frame_idx, det))
    order = np.argsort([-score for score, _, _ in pool], kind="stable")
    claimed = [np.zeros(len(anns), dtype=bool) for _, anns in frame_pairs]
    tp = np.zeros(len(pool))
    for rank, i in enumerate(order):
        _, frame_idx, det = pool[i]
        anns = frame_pairs[frame_idx][1]
        best_i, best_iou = -1, 0.0
        for j, ann in enumerate(anns):
            if claimed[frame_idx][j] or ann.cls != det.cls:
                continue
            iou = iou_3d(det.box, ann.box)
            if iou >= iou_thr and iou > best_iou:
                best_i, best_iou = j, iou
        if best_i >= 0:
            claimed[frame_idx][best_i] = True
            tp[rank] = 1.0
    cum_tp = np.cumsum(tp)
    ranks = np.arange(1, len(pool) + 1)
    precision = cum_tp / ranks if len(pool) else np.empty(0)
    rec = cum_tp / npos if len(pool) else np.empty(0)
    return rec, precision


def ap_from_curve(recalls: np.ndarray, precisions: np.ndarray, points: int = 40) -> float:
    """Interpolated AP over evenly spaced recall positions, as a percentage.

    points=40 samples 1/40 .. 1 (the R40 convention); points=11 samples
    0, 0.1, .., 1.  Interpolated precision at r is the best precision at any
    recall >= r, zero when r is never reached.
    """
    if points == 40:
        positions = np.linspace(1.0 / 40.0, 1.0, 40)
    elif points == 11:
        positions = np.linspace(0.0, 1.0, 11)
    else:
        raise ValueError(f"points must be 40 or 11, got {points}")
    total = 0.0
    for r in positions:
        at_least = precisions[recalls >= r - 1e-12]
        total += float(at_least.max()) if at_least.size else 0.0
    return 100.0 * total / positions.size


def ap_40(frame_pairs: Sequence[tuple[Sequence[Detection], Sequence[Annotation]]],
          iou_thr: float = 0.7, points: int = 40) -> float:
    """Average precision at the given IoU threshold; zero detections give 0."""
    recalls, precisions = pr_curve(frame_pairs, iou_thr)
    if recalls.size == 0:
        return 0.0
    return ap_from_curve(recalls, precisions, points)


def _filter_class(frame: Frame, classes: Sequence[str] | None):
    if classes is None:
        return list(range(len(frame.annotations))), list(frame.annotations)
    wanted = set(classes)
    pairs = [(i, a) for i, a in enumerate(frame.annotations) if a.cls in wanted]
    return [i for i, _ in pairs], [a for _, a in pairs]


def evaluate_detector(detector: DetectorAdapter, frames: Sequence[Frame],
                      iou_thr: float = 0.7, classes: Sequence[str] | None = None,
                      ap_points: int = 40) -> dict:
    """Run a detector over frames and collect Recall, AP, and match results."""
    wanted = set(classes) if classes else None
    results = []
    pairs = []
    for frame, dets in zip(frames, detector.detect_batch(frames)):
        if wanted is not None:
            dets = [d for d in dets if d.cls in wanted]
        indices, annotations = _filter_class(frame, classes)
        results.append(match_frame(dets, annotations, iou_thr, frame.id, indices))
        pairs.append((dets, annotations))
    return {
        "recall": recall(results),
        "ap": ap_40(pairs, iou_thr, ap_points),
        "results": results,
        "pairs": pairs,
    }

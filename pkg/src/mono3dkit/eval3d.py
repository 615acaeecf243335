"""KITTI-protocol 3D detection evaluation.

Exact rotated-box IoU on the ground plane (convex polygon clipping), its
3D extension through the vertical slab overlap, average precision at 40
recall points, and the predicted-height diagnostic.  All functions are
pure; multi-image evaluation merges per-image match flags and equals the
sequential result exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInputError
from .pseudolabel import Box3D

__all__ = [
    "MatchConfig",
    "EvalFrame",
    "EvalResult",
    "HeightStats",
    "bev_iou",
    "iou3d",
    "box2d_iou",
    "ap_r40",
    "ap_r40_frames",
    "height_histogram",
    "matches_difficulty",
    "DIFFICULTY_NAMES",
]

# Intersection polygons below this area (m^2) are treated as empty.
_AREA_EPS = 1e-12
# Boundary tolerance for the point-left-of-edge test during clipping.
_EDGE_EPS = 1e-9

METRICS = ("3d", "bev", "bbox2d")

# Standard KITTI difficulty gates: min 2D bbox height (px), max occlusion
# state, max truncation, indexed easy/moderate/hard.
DIFFICULTY_NAMES = ("easy", "moderate", "hard")
_MIN_HEIGHT = (40.0, 25.0, 25.0)
_MAX_OCCLUSION = (0, 1, 2)
_MAX_TRUNCATION = (0.15, 0.30, 0.50)


@dataclass(frozen=True)
class MatchConfig:
    """Matching rule for AP: IoU threshold, metric, recall sampling."""

    iou_threshold: float
    metric: str = "3d"
    recall_points: int = 40

    def __post_init__(self):
        if not (0 < self.iou_threshold <= 1):
            raise ValueError(f"iou_threshold {self.iou_threshold} outside (0, 1]")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.recall_points < 1:
            raise ValueError(f"recall_points must be >= 1, got {self.recall_points}")


@dataclass(frozen=True)
class EvalFrame:
    """Predictions and ground truth of one image.

    bbox arrays (N, 4) as (left, top, right, bottom) are required only for
    the bbox2d metric.  gt_ignored marks ground-truth boxes outside the
    difficulty under evaluation: they do not count toward recall, and a
    prediction overlapping one is removed from the ranking instead of
    becoming a false positive.
    """

    preds: Sequence[Box3D]
    gts: Sequence[Box3D]
    pred_bboxes: Optional[np.ndarray] = None
    gt_bboxes: Optional[np.ndarray] = None
    gt_ignored: Optional[np.ndarray] = None


@dataclass
class EvalResult:
    ap: float
    recall_grid: list
    interpolated_precision: list
    curve: list
    matched: int
    false_positives: int
    ignored_predictions: int
    num_gt: int
    num_predictions: int
    notes: tuple = ()


def matches_difficulty(bbox_height: float, occluded: int, truncated: float, level: int) -> bool:
    """True if a ground-truth box qualifies at KITTI difficulty `level`
    (0 easy, 1 moderate, 2 hard)."""
    if level not in (0, 1, 2):
        raise ValueError(f"difficulty level must be 0, 1 or 2, got {level}")
    return (
        bbox_height >= _MIN_HEIGHT[level]
        and occluded <= _MAX_OCCLUSION[level]
        and truncated <= _MAX_TRUNCATION[level]
    )


def _bev_corners(box: Box3D) -> np.ndarray:
    """Ground-plane footprint corners (x, z), counter-clockwise."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hl, hw = box.l / 2.0, box.w / 2.0
    local = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    return np.array([(box.x + lx * c + lz * s, box.z - lx * s + lz * c) for lx, lz in local])


def _polygon_area(points) -> float:
    if len(points) < 3:
        return 0.0
    arr = np.asarray(points, dtype=float)
    x, y = arr[:, 0], arr[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, 1)) - np.dot(y, np.roll(x, 1))))


def _clip_polygon(subject, clip):
    """Sutherland-Hodgman clip of a convex polygon by a convex CCW polygon.

    Points on a clip edge count as inside, so clipping a polygon against
    itself returns the polygon.
    """
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i - 1]
        bx, by = clip[i]
        ex, ey = bx - ax, by - ay
        current = output
        output = []
        sx, sy = current[-1]
        s_in = ex * (sy - ay) - ey * (sx - ax) >= -_EDGE_EPS
        for px, py in current:
            p_in = ex * (py - ay) - ey * (px - ax) >= -_EDGE_EPS
            if p_in != s_in:
                d1 = ex * (sy - ay) - ey * (sx - ax)
                d2 = ex * (py - ay) - ey * (px - ax)
                denom = d1 - d2
                if abs(denom) > 1e-30:
                    t = d1 / denom
                    output.append((sx + t * (px - sx), sy + t * (py - sy)))
            if p_in:
                output.append((px, py))
            sx, sy, s_in = px, py, p_in
    return output


def _bev_intersection(a: Box3D, b: Box3D) -> float:
    inter = _polygon_area(_clip_polygon(_bev_corners(a), _bev_corners(b)))
    return 0.0 if inter < _AREA_EPS else inter


def bev_iou(a: Box3D, b: Box3D) -> float:
    """IoU of the two yaw-rotated ground-plane rectangles."""
    inter = _bev_intersection(a, b)
    union = a.w * a.l + b.w * b.l - inter
    if union <= _AREA_EPS:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def iou3d(a: Box3D, b: Box3D) -> float:
    """Volumetric IoU: ground-plane intersection times vertical overlap.

    Boxes span [y - h, y] vertically (bottom-center convention, Y down).
    """
    overlap = min(a.y, b.y) - max(a.y - a.h, b.y - b.h)
    if overlap <= 0:
        return 0.0
    inter = _bev_intersection(a, b) * overlap
    union = a.w * a.l * a.h + b.w * b.l * b.h - inter
    if union <= _AREA_EPS:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def box2d_iou(a, b) -> float:
    """Axis-aligned IoU of two (left, top, right, bottom) boxes."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def _frame_iou_fn(frame: EvalFrame, metric: str):
    if metric == "3d":
        return lambda i, j: iou3d(frame.preds[i], frame.gts[j])
    if metric == "bev":
        return lambda i, j: bev_iou(frame.preds[i], frame.gts[j])
    if frame.pred_bboxes is None or frame.gt_bboxes is None:
        raise ValueError("bbox2d metric needs pred_bboxes and gt_bboxes on every frame")
    return lambda i, j: box2d_iou(frame.pred_bboxes[i], frame.gt_bboxes[j])


def _match_frame(frame: EvalFrame, cfg: MatchConfig):
    """Greedy score-descending matching of one frame.

    Returns (flags, num_valid_gt) where flags is a score-ordered list of
    (score, outcome) with outcome 1 = true positive, 0 = false positive,
    -1 = removed from the ranking (overlaps an ignored ground truth).
    Each ground truth is matched at most once; ties in score keep input
    order; IoU ties pick the lowest ground-truth index.
    """
    ignored = (
        np.zeros(len(frame.gts), dtype=bool)
        if frame.gt_ignored is None
        else np.asarray(frame.gt_ignored, dtype=bool)
    )
    if ignored.shape != (len(frame.gts),):
        raise ValueError(f"gt_ignored must have length {len(frame.gts)}")
    classes = {b.class_id for b in frame.preds} | {b.class_id for b in frame.gts}
    if len(classes) > 1:
        raise ValueError(f"ap_r40 evaluates one class at a time, got {sorted(classes)}")

    iou_fn = _frame_iou_fn(frame, cfg.metric)
    order = sorted(range(len(frame.preds)), key=lambda i: -frame.preds[i].score)
    taken = [False] * len(frame.gts)
    flags = []
    for i in order:
        best_valid, best_valid_j = -1.0, -1
        best_ign, best_ign_j = -1.0, -1
        for j in range(len(frame.gts)):
            if taken[j]:
                continue
            v = iou_fn(i, j)
            if ignored[j]:
                if v > best_ign:
                    best_ign, best_ign_j = v, j
            elif v > best_valid:
                best_valid, best_valid_j = v, j
        if best_valid_j >= 0 and best_valid >= cfg.iou_threshold:
            taken[best_valid_j] = True
            flags.append((frame.preds[i].score, 1))
        elif best_ign_j >= 0 and best_ign >= cfg.iou_threshold:
            taken[best_ign_j] = True
            flags.append((frame.preds[i].score, -1))
        else:
            flags.append((frame.preds[i].score, 0))
    return flags, int(len(frame.gts) - ignored.sum())


def ap_r40_frames(frames: Sequence[EvalFrame], cfg: MatchConfig) -> EvalResult:
    """Average precision over a set of frames, one class.

    Matching is per frame; the (score, outcome) flags are pooled, ranked
    by descending score, and precision is interpolated (max precision at
    recall >= r) at cfg.recall_points evenly spaced recall values.  AP is
    their mean, in percent.  Sharding by frame and merging flags gives
    exactly the sequential result.
    """
    all_flags = []
    num_gt = 0
    num_preds = 0
    for frame in frames:
        flags, n_valid = _match_frame(frame, cfg)
        all_flags.extend(flags)
        num_gt += n_valid
        num_preds += len(frame.preds)
    all_flags.sort(key=lambda sf: -sf[0])
    ranked = [outcome for _, outcome in all_flags if outcome >= 0]
    n_ignored = len(all_flags) - len(ranked)

    grid = [(i + 1) / cfg.recall_points for i in range(cfg.recall_points)]
    notes = ()
    if num_gt == 0:
        # Conventions: nothing to find and nothing claimed is a perfect
        # score; claiming detections against empty ground truth is zero.
        if num_preds == 0:
            ap, interp = 100.0, [1.0] * cfg.recall_points
            notes = ("empty-ground-truth-and-predictions",)
        else:
            ap, interp = 0.0, [0.0] * cfg.recall_points
            notes = ("empty-ground-truth",)
        return EvalResult(
            ap=ap,
            recall_grid=grid,
            interpolated_precision=interp,
            curve=[],
            matched=0,
            false_positives=sum(1 for f in ranked if f == 0),
            ignored_predictions=n_ignored,
            num_gt=0,
            num_predictions=num_preds,
            notes=notes,
        )

    tp = 0
    fp = 0
    curve = []
    for outcome in ranked:
        if outcome == 1:
            tp += 1
        else:
            fp += 1
        curve.append((tp / num_gt, tp / (tp + fp)))

    interp = []
    for r in grid:
        best = 0.0
        for recall, precision in curve:
            if recall >= r and precision > best:
                best = precision
        interp.append(best)
    ap = 100.0 * sum(interp) / cfg.recall_points
    return EvalResult(
        ap=ap,
        recall_grid=grid,
        interpolated_precision=interp,
        curve=curve,
        matched=tp,
        false_positives=fp,
        ignored_predictions=n_ignored,
        num_gt=num_gt,
        num_predictions=num_preds,
        notes=notes,
    )


def ap_r40(
    preds: Sequence[Box3D],
    gts: Sequence[Box3D],
    cfg: MatchConfig,
    *,
    pred_bboxes=None,
    gt_bboxes=None,
    gt_ignored=None,
) -> EvalResult:
    """Single-frame convenience wrapper around :func:`ap_r40_frames`."""
    frame = EvalFrame(
        preds=list(preds),
        gts=list(gts),
        pred_bboxes=pred_bboxes,
        gt_bboxes=gt_bboxes,
        gt_ignored=gt_ignored,
    )
    return ap_r40_frames([frame], cfg)


@dataclass
class HeightStats:
    counts: np.ndarray
    edges: np.ndarray
    mean: float
    median: float
    variance: float
    count: int

    def bin_centers(self) -> np.ndarray:
        return (self.edges[:-1] + self.edges[1:]) / 2.0


def height_histogram(preds: Sequence[Box3D], bin_width: float) -> HeightStats:
    """Histogram plus summary statistics of predicted box heights.

    Bins are half-open [lo, hi) with edges at multiples of bin_width, so a
    fixed bin_width reproduces identical binning across runs.  Variance is
    the population variance.  Useful as a plausibility check: person
    heights should cluster near typical adult stature.
    """
    if bin_width <= 0:
        raise ValueError(f"bin_width must be > 0, got {bin_width}")
    if len(preds) == 0:
        raise EmptyInputError("height_histogram needs at least one box")
    heights = np.array([b.h for b in preds], dtype=float)
    first = math.floor(heights.min() / bin_width)
    last = math.floor(heights.max() / bin_width)
    edges = (np.arange(first, last + 2)) * bin_width
    counts = np.zeros(last - first + 1, dtype=int)
    idx = np.floor(heights / bin_width).astype(int) - first
    for i in idx:
        counts[i] += 1
    return HeightStats(
        counts=counts,
        edges=edges,
        mean=float(heights.mean()),
        median=float(np.median(heights)),
        variance=float(heights.var()),
        count=int(heights.size),
    )

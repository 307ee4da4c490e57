"""Localization and detection metrics, plus the slot behavior taxonomy.

Boxes are (x0, y0, x1, y1) in pixels with exclusive right/bottom edges.
Frame identity is an opaque hashable key so per-video and cross-dataset
aggregation use the same code paths. All IoU-style thresholds compare
strictly (an overlap of exactly 0.5 does not count).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Box:
    x0: float
    y0: float
    x1: float
    y1: float
    frame: Hashable = None
    label: str | None = None
    score: float = 0.0
    slot: int | None = None

    @property
    def area(self) -> float:
        return max(0.0, self.x1 - self.x0) * max(0.0, self.y1 - self.y0)


def intersection_area(a: Box, b: Box) -> float:
    w = min(a.x1, b.x1) - max(a.x0, b.x0)
    h = min(a.y1, b.y1) - max(a.y0, b.y0)
    return max(0.0, w) * max(0.0, h)


def iou(a: Box, b: Box) -> float:
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def mask_to_boxes(assignment: np.ndarray, slot: int, patch_size: int) -> list[Box | None]:
    """Per-frame tight pixel box of one slot's patches; None where it owns nothing."""
    out: list[Box | None] = []
    p = patch_size
    for t in range(assignment.shape[0]):
        rr, cc = np.nonzero(assignment[t] == slot)
        if rr.size == 0:
            out.append(None)
            continue
        out.append(
            Box(
                x0=float(cc.min()) * p,
                y0=float(rr.min()) * p,
                x1=float(cc.max() + 1) * p,
                y1=float(rr.max() + 1) * p,
                frame=t,
                slot=slot,
            )
        )
    return out


# ---------------------------------------------------------------------------
# frame-level localization


def corloc(
    preds_by_frame: Sequence[Sequence[Box]],
    gts_by_frame: Sequence[Sequence[Box]],
    threshold: float = 0.5,
    video_ids: Sequence[Hashable] | None = None,
) -> float:
    """Fraction of annotated frames with at least one pred-gt pair above threshold.

    Frames without ground truth are skipped. With ``video_ids`` (one id per
    frame) the unit of aggregation becomes the video: a video counts as hit
    when any of its annotated frames is hit.
    """
    if len(preds_by_frame) != len(gts_by_frame):
        raise ValueError("pred and gt frame lists differ in length")
    if video_ids is not None and len(video_ids) != len(gts_by_frame):
        raise ValueError("video_ids must align with the frame lists")
    hits: dict[Hashable, bool] = {}
    seen: dict[Hashable, bool] = {}
    for f, (preds, gts) in enumerate(zip(preds_by_frame, gts_by_frame)):
        if not gts:
            continue
        key = video_ids[f] if video_ids is not None else f
        seen[key] = True
        frame_hit = any(iou(p, g) > threshold for p in preds for g in gts)
        hits[key] = hits.get(key, False) or frame_hit
    if not seen:
        return 0.0
    return sum(hits.values()) / len(seen)


def decrate(
    preds_by_frame: Sequence[Sequence[Box]],
    gts_by_frame: Sequence[Sequence[Box]],
    threshold: float = 0.5,
) -> float:
    """Fraction of ground-truth objects matched one-to-one above threshold.

    Matching is greedy per frame in descending IoU order; each predicted box
    covers at most one object and vice versa.
    """
    if len(preds_by_frame) != len(gts_by_frame):
        raise ValueError("pred and gt frame lists differ in length")
    matched = 0
    total = 0
    for preds, gts in zip(preds_by_frame, gts_by_frame):
        total += len(gts)
        if not preds or not gts:
            continue
        pairs = [
            (iou(p, g), pi, gi)
            for pi, p in enumerate(preds)
            for gi, g in enumerate(gts)
        ]
        pairs.sort(key=lambda x: (-x[0], x[1], x[2]))
        used_p: set[int] = set()
        used_g: set[int] = set()
        for ov, pi, gi in pairs:
            if ov <= threshold:
                break
            if pi in used_p or gi in used_g:
                continue
            used_p.add(pi)
            used_g.add(gi)
            matched += 1
    return matched / total if total else 0.0


# ---------------------------------------------------------------------------
# detection


def _average_precision(tp_flags: list[bool], num_gt: int) -> float:
    """All-point interpolated AP from ranked true-positive flags."""
    if num_gt == 0:
        return 0.0
    tp = np.cumsum([1.0 if f else 0.0 for f in tp_flags])
    fp = np.cumsum([0.0 if f else 1.0 for f in tp_flags])
    recall = tp / num_gt
    precision = tp / np.maximum(tp + fp, 1e-12)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def map50(
    pred_boxes: Sequence[Box], gt_boxes: Sequence[Box], threshold: float = 0.5
) -> tuple[float, dict[str, float]]:
    """Mean average precision over the ground-truth classes at one IoU threshold.

    Predictions are ranked by score per class and matched greedily within
    their frame; predictions whose label never occurs in the ground truth
    are dropped with a warning. Returns (mAP, per-class AP).
    """
    gt_classes = sorted({g.label for g in gt_boxes if g.label is not None})
    unknown = {p.label for p in pred_boxes if p.label not in gt_classes}
    if unknown:
        logger.warning("dropping predictions with unknown classes: %s", sorted(str(u) for u in unknown))
    per_class: dict[str, float] = {}
    for cls in gt_classes:
        gts = [g for g in gt_boxes if g.label == cls]
        preds = sorted(
            (p for p in pred_boxes if p.label == cls),
            key=lambda p: -p.score,
        )
        gt_by_frame: dict[Hashable, list[int]] = {}
        for gi, g in enumerate(gts):
            gt_by_frame.setdefault(g.frame, []).append(gi)
        taken: set[int] = set()
        flags: list[bool] = []
        for p in preds:
            best_iou, best_gi = 0.0, -1
            for gi in gt_by_frame.get(p.frame, []):
                if gi in taken:
                    continue
                ov = iou(p, gts[gi])
                if ov > best_iou:
                    best_iou, best_gi = ov, gi
            if best_gi >= 0 and best_iou > threshold:
                taken.add(best_gi)
                flags.append(True)
            else:
                flags.append(False)
        per_class[cls] = _average_precision(flags, len(gts))
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return mean, per_class


# ---------------------------------------------------------------------------
# slot behavior taxonomy

SLOT_TYPES = ("SO", "PO", "GO", "BG")


def classify_slot(pred: Box, gts: Sequence[Box], tau1: float = 0.5, tau2: float = 0.5) -> str:
    """Single-frame slot behavior: SO, PO, GO, or BG.

    Rules apply in order. A box is a single object when some gt overlaps it
    with IoU above tau1, or when exactly one gt is mostly covered by it;
    a part when the box itself is mostly inside some gt; a group when it
    mostly covers two or more gts; background otherwise.
    """
    if any(iou(pred, g) > tau1 for g in gts):
        return "SO"
    covered = [g for g in gts if g.area > 0 and intersection_area(pred, g) / g.area > tau2]
    if len(covered) == 1:
        return "SO"
    if pred.area > 0 and any(intersection_area(pred, g) / pred.area > tau2 for g in gts):
        return "PO"
    if len(covered) >= 2:
        return "GO"
    return "BG"


def slot_type(
    boxes_by_frame: Sequence[Box | None],
    gts_by_frame: Sequence[Sequence[Box]],
    tau1: float = 0.5,
    tau2: float = 0.5,
) -> str:
    """Majority single-frame behavior of one slot; ties prefer the more specific type.

    A slot with no box in any frame is background.
    """
    counts = {k: 0 for k in SLOT_TYPES}
    for box, gts in zip(boxes_by_frame, gts_by_frame):
        if box is None:
            continue
        counts[classify_slot(box, gts, tau1, tau2)] += 1
    if not any(counts.values()):
        return "BG"
    best = max(counts.values())
    for k in SLOT_TYPES:  # preference order on ties
        if counts[k] == best:
            return k
    return "BG"


def slot_type_stats(types: Sequence[str]) -> dict[str, float]:
    """Percentage of slots per behavior type; sums to 100 when any slots exist."""
    out = {k: 0.0 for k in SLOT_TYPES}
    if not types:
        return out
    for t in types:
        if t not in out:
            raise ValueError(f"unknown slot type {t!r}")
        out[t] += 1
    return {k: 100.0 * v / len(types) for k, v in out.items()}


# ---------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    num_videos: int
    num_frames: int
    num_gt_boxes: int
    corloc: float
    decrate: float
    map50: float
    ap_per_class: dict[str, float] = field(default_factory=dict)
    slot_type_pcts: dict[str, float] = field(default_factory=dict)
    corloc_per_video: float | None = None

    def to_dict(self) -> dict:
        return {
            "num_videos": self.num_videos,
            "num_frames": self.num_frames,
            "num_gt_boxes": self.num_gt_boxes,
            "corloc": self.corloc,
            "decrate": self.decrate,
            "map50": self.map50,
            "ap_per_class": dict(self.ap_per_class),
            "slot_type_pcts": dict(self.slot_type_pcts),
            "corloc_per_video": self.corloc_per_video,
        }

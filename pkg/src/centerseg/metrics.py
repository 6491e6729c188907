"""Detection / segmentation AP and leaf-challenge metrics.

Matching is greedy over detections in descending global score order: a
detection claims its best-IOU unmatched ground truth in the same image
when that IOU reaches the threshold, else it is a false positive;
unmatched ground truths are false negatives. AP is the exact area under
the stepwise precision-recall curve after the precision envelope is made
monotone from the right (VOC2010 all-point interpolation). "IOU greater
than a threshold" is implemented as >= alpha, the standard convention.

Pooling is associative: evaluating image shards separately and merging
gives the same AP as a single pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .codec import BBox
from .segmentation import InstanceMask

__all__ = [
    "MatchResult",
    "PRCurve",
    "APResult",
    "AP_THRESHOLDS",
    "box_iou",
    "mask_iou",
    "match_detections",
    "pr_curve",
    "ap_at",
    "ap_sweep",
    "leaf_metrics",
    "LeafMetrics",
]

AP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class MatchResult:
    """Greedy matching outcome at one IOU threshold.

    entries holds (score, image_id, detection_index, is_tp) in match
    order (descending score, ties by image id then detection index);
    gt_matched maps image id to a per-GT matched flag array.
    """

    alpha: float
    entries: tuple[tuple[float, str, int, bool], ...]
    n_gt: int
    gt_matched: dict[str, np.ndarray]

    @property
    def tp(self) -> int:
        return sum(1 for e in self.entries if e[3])

    @property
    def fp(self) -> int:
        return sum(1 for e in self.entries if not e[3])

    @property
    def fn(self) -> int:
        return self.n_gt - self.tp

    def merged_with(self, other: "MatchResult") -> "MatchResult":
        """Pool two shards evaluated at the same threshold."""
        if self.alpha != other.alpha:
            raise ValueError("cannot merge matches at different thresholds")
        entries = sorted(
            self.entries + other.entries, key=lambda e: (-e[0], e[1], e[2])
        )
        return MatchResult(
            self.alpha,
            tuple(entries),
            self.n_gt + other.n_gt,
            {**self.gt_matched, **other.gt_matched},
        )


@dataclass(frozen=True)
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class APResult:
    per_threshold: dict[float, float]
    mean_ap: float


def box_iou(a: BBox, b: BBox) -> float:
    """Axis-aligned intersection-over-union of two center-format boxes."""
    ax0, ax1 = a.cu - a.w / 2.0, a.cu + a.w / 2.0
    ay0, ay1 = a.cv - a.h / 2.0, a.cv + a.h / 2.0
    bx0, bx1 = b.cu - b.w / 2.0, b.cu + b.w / 2.0
    by0, by1 = b.cv - b.h / 2.0, b.cv + b.h / 2.0
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def _mask_array(m) -> np.ndarray:
    arr = m.mask if isinstance(m, InstanceMask) else np.asarray(m)
    return arr.astype(bool)


def mask_iou(a, b) -> float:
    """Pixel IOU of two binary masks; 0 when the union is empty."""
    ma, mb = _mask_array(a), _mask_array(b)
    if ma.shape != mb.shape:
        raise ValueError(f"mask extents differ: {ma.shape} vs {mb.shape}")
    union = np.logical_or(ma, mb).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(ma, mb).sum() / union)


def match_detections(
    dets_by_image: Mapping[str, Sequence[tuple[float, object]]],
    gts_by_image: Mapping[str, Sequence[object]],
    alpha: float,
    iou_fn: Callable[[object, object], float],
) -> MatchResult:
    """Greedily match scored predictions against per-image ground truth.

    dets_by_image maps image id to (score, payload) pairs, gts_by_image to
    payload lists; iou_fn compares a prediction payload with a GT payload.
    """
    order = []
    for image_id, dets in dets_by_image.items():
        for det_idx, (score, _payload) in enumerate(dets):
            order.append((-float(score), str(image_id), det_idx))
    order.sort()

    gt_matched = {
        str(image_id): np.zeros(len(gts), dtype=bool) for image_id, gts in gts_by_image.items()
    }
    entries = []
    for neg_score, image_id, det_idx in order:
        payload = dets_by_image[image_id][det_idx][1]
        gts = gts_by_image.get(image_id, ())
        matched = gt_matched.get(image_id)
        best_iou, best_gt = 0.0, -1
        for gt_idx, gt in enumerate(gts):
            if matched[gt_idx]:
                continue
            iou = iou_fn(payload, gt)
            if iou > best_iou:
                best_iou, best_gt = iou, gt_idx
        is_tp = best_gt >= 0 and best_iou >= alpha
        if is_tp:
            matched[best_gt] = True
        entries.append((-neg_score, image_id, det_idx, is_tp))

    n_gt = sum(len(gts) for gts in gts_by_image.values())
    return MatchResult(alpha, tuple(entries), n_gt, gt_matched)


def pr_curve(match: MatchResult) -> PRCurve:
    """Cumulative precision/recall along the score-ranked detections."""
    if match.n_gt == 0:
        raise ValueError("precision-recall undefined with zero ground truths")
    tp_flags = np.array([e[3] for e in match.entries], dtype=np.float64)
    tp_cum = np.cumsum(tp_flags)
    fp_cum = np.cumsum(1.0 - tp_flags)
    denom = tp_cum + fp_cum
    precision = np.divide(tp_cum, denom, out=np.zeros_like(tp_cum), where=denom > 0)
    recall = tp_cum / match.n_gt
    return PRCurve(recall, precision, match.tp, match.fp, match.fn)


def ap_at(match: MatchResult) -> float:
    """Area under the stepwise PR curve with the right-to-left precision
    envelope (VOC2010 all-point interpolation)."""
    curve = pr_curve(match)
    if curve.recall.size == 0:
        return 0.0
    mrec = np.concatenate(([0.0], curve.recall, [curve.recall[-1]]))
    mpre = np.concatenate(([0.0], curve.precision, [0.0]))
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def ap_sweep(
    dets_by_image: Mapping[str, Sequence[tuple[float, object]]],
    gts_by_image: Mapping[str, Sequence[object]],
    iou_fn: Callable[[object, object], float],
) -> APResult:
    """AP at the 10 thresholds 0.50, 0.55, ..., 0.95 and their mean."""
    per = {}
    for alpha in AP_THRESHOLDS:
        per[alpha] = ap_at(match_detections(dets_by_image, gts_by_image, alpha, iou_fn))
    return APResult(per, float(np.mean(list(per.values()))))


@dataclass(frozen=True)
class LeafMetrics:
    best_dice: float
    diff_fg: int
    abs_diff_fg: int
    fg_bg_dice: float


def _dice(a: np.ndarray, b: np.ndarray) -> float:
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / total)


def _best_dice_dir(src: list[np.ndarray], dst: list[np.ndarray]) -> float:
    if not src:
        return 1.0 if not dst else 0.0
    if not dst:
        return 0.0
    return float(np.mean([max(_dice(s, d) for d in dst) for s in src]))


def leaf_metrics(pred_instances, gt_instances) -> LeafMetrics:
    """Leaf-challenge metrics for one image.

    bestDice is symmetric best Dice: the GT-to-prediction best-match mean
    averaged with the prediction-to-GT direction. diffFG is the object
    count difference (pred - GT), absDiffFG its absolute value, FgBgDice
    the Dice of the foreground unions.
    """
    preds = [_mask_array(m) for m in pred_instances]
    gts = [_mask_array(m) for m in gt_instances]
    for m in preds + gts:
        if gts and m.shape != gts[0].shape:
            raise ValueError("instance extents differ")
    best = 0.5 * (_best_dice_dir(gts, preds) + _best_dice_dir(preds, gts))
    diff = len(preds) - len(gts)
    if preds:
        fg_pred = np.logical_or.reduce(preds)
    else:
        fg_pred = np.zeros_like(gts[0]) if gts else np.zeros((1, 1), bool)
    if gts:
        fg_gt = np.logical_or.reduce(gts)
    else:
        fg_gt = np.zeros_like(fg_pred)
    return LeafMetrics(best, diff, abs(diff), _dice(fg_pred, fg_gt))

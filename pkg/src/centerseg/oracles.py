"""Brute-force reference implementations used only to check other modules.

Nothing here shares helper code with the paths being verified: IOU is
re-derived from corner arithmetic, bilinear interpolation from the
four-weight formula, and AP from a direct prefix scan of the ranked
detections. Keep it that way; slow and obvious beats fast and shared.
"""

from __future__ import annotations

import math

from .fmap import FeatureMap, SamplePoint

__all__ = [
    "oracle_bilinear",
    "oracle_radius",
    "oracle_min_shift_iou",
    "oracle_ap",
]


def _corner_iou(ax0, ay0, ax1, ay1, bx0, by0, bx1, by1) -> float:
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    return inter / (area_a + area_b - inter)


def _center_box_iou(a, b) -> float:
    return _corner_iou(
        a.cu - a.w / 2, a.cv - a.h / 2, a.cu + a.w / 2, a.cv + a.h / 2,
        b.cu - b.w / 2, b.cv - b.h / 2, b.cu + b.w / 2, b.cv + b.h / 2,
    )


def oracle_bilinear(fmap: FeatureMap, p: SamplePoint, channel: int = 0) -> float:
    """Four-weight bilinear formula with edge clamping, written out longhand."""
    plane = fmap.data[channel]
    h, w = plane.shape

    def clamp(i, n):
        return 0 if i < 0 else (n - 1 if i > n - 1 else i)

    x0 = math.floor(p.u)
    y0 = math.floor(p.v)
    fu = p.u - x0
    fv = p.v - y0
    v00 = float(plane[clamp(y0, h), clamp(x0, w)])
    v01 = float(plane[clamp(y0, h), clamp(x0 + 1, w)])
    v10 = float(plane[clamp(y0 + 1, h), clamp(x0, w)])
    v11 = float(plane[clamp(y0 + 1, h), clamp(x0 + 1, w)])
    return (
        v00 * (1 - fu) * (1 - fv)
        + v01 * fu * (1 - fv)
        + v10 * (1 - fu) * fv
        + v11 * fu * fv
    )


def _shift_iou(w: float, h: float, du: int, dv: int) -> float:
    """IOU of a w x h box with its copy shifted by (du, dv)."""
    return _corner_iou(0, 0, w, h, du, dv, du + w, dv + h)


def oracle_min_shift_iou(w: float, h: float, radius: int) -> float:
    """Minimum IOU over every integer center shift with max(|du|,|dv|) <= radius."""
    worst = 1.0
    for du in range(-radius, radius + 1):
        for dv in range(-radius, radius + 1):
            worst = min(worst, _shift_iou(w, h, du, dv))
    return worst


def oracle_radius(w: float, h: float, min_iou: float = 0.7) -> int:
    """Largest integer r whose whole shift square keeps IOU >= min_iou.

    Exhaustive: checks every integer shift in the square at each radius.
    """
    if not (w >= 1 and h >= 1):
        raise ValueError("box extent must be at least 1 grid cell")
    best = 0
    r = 1
    limit = int(max(w, h)) + 1
    while r <= limit:
        ok = True
        for du in range(-r, r + 1):
            for dv in range(-r, r + 1):
                if _shift_iou(w, h, du, dv) < min_iou:
                    ok = False
                    break
            if not ok:
                break
        if not ok:
            break
        best = r
        r += 1
    return best


def oracle_ap(dets_by_image, gts_by_image, alpha: float) -> float:
    """AP from first principles on a small case.

    dets_by_image: {image_id: [(score, BBox), ...]};
    gts_by_image: {image_id: [BBox, ...]}.

    Ranks detections by (score desc, image id, index), matches each to its
    highest-IOU unclaimed GT in the same image (claimed when IOU >= alpha),
    then scores AP as, for every true positive at rank i, 1/n_gt times the
    best precision among all prefixes of length >= i+1.
    """
    ranked = []
    for image_id in gts_by_image.keys() | dets_by_image.keys():
        for idx, (score, box) in enumerate(dets_by_image.get(image_id, [])):
            ranked.append((-float(score), str(image_id), idx, box))
    ranked.sort(key=lambda t: (t[0], t[1], t[2]))

    n_gt = sum(len(v) for v in gts_by_image.values())
    if n_gt == 0:
        raise ValueError("AP undefined with zero ground truths")

    claimed = {img: [False] * len(gts) for img, gts in gts_by_image.items()}
    flags = []
    for _neg, image_id, _idx, box in ranked:
        gts = gts_by_image.get(image_id, [])
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(gts):
            if claimed[image_id][j]:
                continue
            iou = _center_box_iou(box, gt)
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= alpha:
            claimed[image_id][best_j] = True
            flags.append(True)
        else:
            flags.append(False)

    precisions = []
    tp = 0
    for i, f in enumerate(flags):
        tp += 1 if f else 0
        precisions.append(tp / (i + 1))

    ap = 0.0
    for i, f in enumerate(flags):
        if f:
            ap += max(precisions[i:]) / n_gt
    return ap

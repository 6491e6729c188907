"""From decoded boxes to full-image instance masks.

The ROI for a box is cropped from every pyramid level at a size-adaptive
resolution (round(extent / stride), no fixed 28x28), the per-ROI
probability patch is pasted back into the image frame by Hough voting
(each floating-point sample splits its value over the four surrounding
integer pixels with bilinear weights), votes are normalized by their
accumulated weight, and the result is binarized. Instances stay
independent; overlapping masks are allowed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import BBox, Detection
from .fmap import FeatureMap, RoiRect, _roi_sample_grid, grid_sample_crop

__all__ = [
    "PyramidLevels",
    "InstanceMask",
    "crop_roi_pyramid",
    "threshold_mask",
    "hough_vote_paste",
    "assemble_instance",
    "rle_encode",
    "rle_decode",
]


@dataclass(frozen=True)
class PyramidLevels:
    """Ordered (FeatureMap, stride) levels over one image, finest first."""

    levels: tuple[tuple[FeatureMap, float], ...]
    image_h: int
    image_w: int

    def __post_init__(self):
        levels = tuple((fm, float(s)) for fm, s in self.levels)
        if not levels:
            raise ValueError("pyramid needs at least one level")
        strides = [s for _, s in levels]
        if any(b <= a for a, b in zip(strides, strides[1:])):
            raise ValueError(f"strides must be strictly increasing, got {strides}")
        for fm, s in levels:
            if abs(fm.height - self.image_h / s) > 1 or abs(fm.width - self.image_w / s) > 1:
                raise ValueError(
                    f"level of stride {s} is {fm.height}x{fm.width}, inconsistent with "
                    f"{self.image_h}x{self.image_w} image"
                )
        object.__setattr__(self, "levels", levels)

    @property
    def finest_stride(self) -> float:
        return self.levels[0][1]

    @property
    def finest(self) -> FeatureMap:
        return self.levels[0][0]


@dataclass
class InstanceMask:
    """Full-image binary mask owned by one detection."""

    image_h: int
    image_w: int
    mask: np.ndarray
    detection: Detection
    degenerate: bool = False

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.shape != (self.image_h, self.image_w):
            raise ValueError(f"mask shape {m.shape} != image {self.image_h}x{self.image_w}")
        if not np.isin(m, (0, 1)).all():
            raise ValueError("mask values must be 0/1")
        self.mask = m.astype(np.uint8)

    @property
    def area(self) -> int:
        return int(self.mask.sum())


def crop_roi_pyramid(levels: PyramidLevels, box: BBox) -> list[FeatureMap]:
    """Crop one box's ROI from every level by bilinear grid sampling.

    Level of stride s yields a (max(1, round(h/s)), max(1, round(w/s)))
    patch. ROIs narrower or shorter than 2 pixels at the finest stride are
    rejected, as is a box that misses the image entirely; rejection
    returns an empty list.
    """
    s0 = levels.finest_stride
    if box.w / s0 < 2.0 or box.h / s0 < 2.0:
        return []
    # image pixel footprint spans [-0.5, size - 0.5]
    if (
        box.cu + box.w / 2.0 <= -0.5
        or box.cu - box.w / 2.0 >= levels.image_w - 0.5
        or box.cv + box.h / 2.0 <= -0.5
        or box.cv - box.h / 2.0 >= levels.image_h - 0.5
    ):
        return []
    roi = RoiRect(box.cu, box.cv, box.w, box.h)
    out = []
    for fm, stride in levels.levels:
        out_h = max(1, round(box.h / stride))
        out_w = max(1, round(box.w / stride))
        out.append(grid_sample_crop(fm, roi, stride, out_h, out_w))
    return out


def threshold_mask(prob: FeatureMap, thresh: float = 0.5) -> FeatureMap:
    """Binarize a probability map; values equal to thresh map to 1."""
    if prob.channels != 1:
        raise ValueError("threshold_mask expects a single-channel map")
    return FeatureMap((prob.data >= thresh).astype(np.float32))


def hough_vote_paste(
    roi_values: FeatureMap, box: BBox, image_h: int, image_w: int
) -> tuple[FeatureMap, FeatureMap]:
    """Scatter an ROI patch back into the image frame by bilinear voting.

    Every patch sample sits at a floating-point image position; its value
    times each bilinear weight lands on the four surrounding integer
    pixels, and the weights themselves accumulate separately. Neighbor
    indices are edge-clamped into the image so vote mass is conserved
    exactly: sum(accum) = sum(values), sum(weight) = sample count.
    """
    if roi_values.channels != 1:
        raise ValueError("hough_vote_paste expects a single-channel patch")
    rh, rw = roi_values.height, roi_values.width
    roi = RoiRect(box.cu, box.cv, box.w, box.h)
    us, vs = _roi_sample_grid(roi, 1.0, rh, rw)
    uu, vv = np.meshgrid(us, vs)
    vals = roi_values.data[0].astype(np.float64).ravel()
    u = uu.ravel()
    v = vv.ravel()

    u0 = np.floor(u)
    v0 = np.floor(v)
    fu = u - u0
    fv = v - v0
    x0 = np.clip(u0.astype(np.int64), 0, image_w - 1)
    x1 = np.clip(u0.astype(np.int64) + 1, 0, image_w - 1)
    y0 = np.clip(v0.astype(np.int64), 0, image_h - 1)
    y1 = np.clip(v0.astype(np.int64) + 1, 0, image_h - 1)

    accum = np.zeros((image_h, image_w), dtype=np.float64)
    weight = np.zeros((image_h, image_w), dtype=np.float64)
    for yy, xx, wt in (
        (y0, x0, (1.0 - fu) * (1.0 - fv)),
        (y0, x1, fu * (1.0 - fv)),
        (y1, x0, (1.0 - fu) * fv),
        (y1, x1, fu * fv),
    ):
        np.add.at(accum, (yy, xx), vals * wt)
        np.add.at(weight, (yy, xx), wt)
    return FeatureMap(accum.astype(np.float32)[None]), FeatureMap(weight.astype(np.float32)[None])


def assemble_instance(
    prob_roi: FeatureMap,
    box: BBox,
    image_h: int,
    image_w: int,
    thresh: float,
    det: Detection,
) -> InstanceMask:
    """Paste a per-ROI probability patch and binarize it into a full mask.

    Pipeline: Hough-vote paste, normalize by accumulated weight, threshold;
    pixels that received no vote stay 0. An all-zero-weight paste yields an
    empty mask flagged degenerate.
    """
    accum, weight = hough_vote_paste(prob_roi, box, image_h, image_w)
    w = weight.data[0].astype(np.float64)
    a = accum.data[0].astype(np.float64)
    voted = w > 0.0
    if not voted.any():
        return InstanceMask(image_h, image_w, np.zeros((image_h, image_w), np.uint8), det, degenerate=True)
    est = np.zeros_like(a)
    est[voted] = a[voted] / w[voted]
    mask = (voted & (est >= thresh)).astype(np.uint8)
    return InstanceMask(image_h, image_w, mask, det)


def rle_encode(mask: np.ndarray) -> list[int]:
    """Row-major run lengths, starting with the count of leading zeros."""
    flat = np.asarray(mask).astype(np.uint8).ravel()
    if flat.size == 0:
        return [0]
    edges = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate(([0], edges, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: list[int], height: int, width: int) -> np.ndarray:
    """Inverse of rle_encode; validates total length."""
    total = sum(int(r) for r in runs)
    if total != height * width:
        raise ValueError(f"run lengths sum to {total}, expected {height * width}")
    if any(int(r) < 0 for r in runs):
        raise ValueError("run lengths must be non-negative")
    flat = np.zeros(height * width, dtype=np.uint8)
    pos = 0
    val = 0
    for r in runs:
        r = int(r)
        if val:
            flat[pos : pos + r] = 1
        pos += r
        val ^= 1
    return flat.reshape(height, width)

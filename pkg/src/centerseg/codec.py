"""Ground-truth target encoding and bounding-box decoding.

Boxes live in continuous input-image pixels, center format (cu, cv, w, h).
Targets live on the n-times downscaled grid: a center heatmap carrying
unnormalized Gaussian blobs (peak exactly 1 at each quantized center), a
2-channel width-height map and a 2-channel sub-cell offset map, both
defined only at the quantized centers. Quantization uses round-half-even;
the offset map makes it lossless, so decode(encode(boxes)) recovers every
collision-free box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter

from .fmap import FeatureMap

__all__ = [
    "BBox",
    "Detection",
    "DetectionTargets",
    "GaussianSpec",
    "gaussian_radius",
    "encode_targets",
    "nms_maxpool",
    "decode_boxes",
]


@dataclass(frozen=True)
class BBox:
    """Center-format box in input-image pixels; extents strictly positive."""

    cu: float
    cv: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"BBox extent must be positive, got w={self.w}, h={self.h}")


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class GaussianSpec:
    """One heatmap blob: quantized center, integer radius, sigma = radius/3 (min 1/3)."""

    center: tuple[int, int]  # (row, col) on the target grid
    radius: int
    sigma: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if not math.isclose(self.sigma, max(self.radius / 3.0, 1.0 / 3.0)):
            raise ValueError("sigma must equal radius/3, floored at 1/3")

    @classmethod
    def from_radius(cls, center: tuple[int, int], radius: int) -> "GaussianSpec":
        return cls(center, radius, max(radius / 3.0, 1.0 / 3.0))


@dataclass
class DetectionTargets:
    """Per-image (heatmap, wh, offset) triple plus the quantized center list.

    centers holds (row, col, box_index) for every encoded box, in input
    order; collisions counts boxes whose quantized cell was already taken
    (the later box's wh/offset win).
    """

    heatmap: FeatureMap
    wh_map: FeatureMap
    offset_map: FeatureMap
    centers: list[tuple[int, int, int]]
    downsize_factor: int
    collisions: int = 0
    specs: list[GaussianSpec] = field(default_factory=list)


def gaussian_radius(w: float, h: float, min_iou: float = 0.7) -> int:
    """Largest blob radius (grid cells) keeping shifted boxes above min_iou.

    Closed-form radius rule of the corner/center-keypoint lineage: solve
    the three overlap cases (box shifted diagonally, shrunk by r on each
    side, grown by r on each side) as quadratics in r and take the floor
    of the smallest root, clamped to >= 0.
    """
    if not (w >= 1 and h >= 1):
        raise ValueError("box extent must be at least 1 grid cell")
    if not 0.0 < min_iou < 1.0:
        raise ValueError("min_iou must be in (0, 1)")

    # one corner in, one out: (w-r)(h-r) / (2wh - (w-r)(h-r)) >= iou
    b1 = h + w
    c1 = w * h * (1.0 - min_iou) / (1.0 + min_iou)
    r1 = (b1 - math.sqrt(b1 * b1 - 4.0 * c1)) / 2.0

    # both corners in: (w-2r)(h-2r) / (wh) >= iou
    a2 = 4.0
    b2 = 2.0 * (h + w)
    c2 = (1.0 - min_iou) * w * h
    r2 = (b2 - math.sqrt(b2 * b2 - 4.0 * a2 * c2)) / (2.0 * a2)

    # both corners out: wh / ((w+2r)(h+2r)) >= iou
    a3 = 4.0 * min_iou
    b3 = -2.0 * min_iou * (h + w)
    c3 = (min_iou - 1.0) * w * h
    r3 = (-b3 + math.sqrt(b3 * b3 - 4.0 * a3 * c3)) / (2.0 * a3)

    return max(0, math.floor(min(r1, r2, r3)))


def render_gaussian(plane: np.ndarray, spec: GaussianSpec) -> None:
    """Max-composite one unnormalized blob into an (H', W') plane, in place.

    The render window has half-width ceil(3*sigma); values beyond are
    below e^-4.5 and dropped.
    """
    hh, ww = plane.shape
    row, col = spec.center
    hw = math.ceil(3.0 * spec.sigma)
    r0, r1 = max(0, row - hw), min(hh - 1, row + hw)
    c0, c1 = max(0, col - hw), min(ww - 1, col + hw)
    if r0 > r1 or c0 > c1:
        return
    vv, uu = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
    d2 = (uu - col) ** 2 + (vv - row) ** 2
    blob = np.exp(-d2 / (2.0 * spec.sigma**2)).astype(np.float32)
    np.maximum(plane[r0 : r1 + 1, c0 : c1 + 1], blob, out=plane[r0 : r1 + 1, c0 : c1 + 1])


def encode_targets(
    boxes: list[BBox],
    image_h: int,
    image_w: int,
    n: int = 4,
    min_iou: float = 0.7,
) -> DetectionTargets:
    """Encode GT boxes into heatmap / width-height / offset targets.

    Quantized center q = round-half-even(cu/n, cv/n), clamped into the
    H' x W' grid (H' = ceil(image_h / n)); the offset channel stores the
    residual (cu/n - qu, cv/n - qv). Overlapping blobs combine by
    element-wise max and the heatmap is set to exactly 1 at each q.
    """
    if n < 1:
        raise ValueError("downsize factor must be >= 1")
    grid_h = math.ceil(image_h / n)
    grid_w = math.ceil(image_w / n)
    heat = np.zeros((grid_h, grid_w), dtype=np.float32)
    wh = np.zeros((2, grid_h, grid_w), dtype=np.float32)
    off = np.zeros((2, grid_h, grid_w), dtype=np.float32)

    centers: list[tuple[int, int, int]] = []
    specs: list[GaussianSpec] = []
    taken: set[tuple[int, int]] = set()
    collisions = 0
    for idx, box in enumerate(boxes):
        if not (-0.5 <= box.cu <= image_w - 0.5 and -0.5 <= box.cv <= image_h - 0.5):
            raise ValueError(f"box {idx} center ({box.cu}, {box.cv}) outside {image_w}x{image_h} image")
        fu = float(box.cu) / n
        fv = float(box.cv) / n
        qu = min(max(round(fu), 0), grid_w - 1)
        qv = min(max(round(fv), 0), grid_h - 1)

        radius = gaussian_radius(max(1.0, box.w / n), max(1.0, box.h / n), min_iou)
        spec = GaussianSpec.from_radius((qv, qu), radius)
        render_gaussian(heat, spec)
        heat[qv, qu] = 1.0
        wh[0, qv, qu] = box.w / n
        wh[1, qv, qu] = box.h / n
        off[0, qv, qu] = fu - qu
        off[1, qv, qu] = fv - qv
        if (qv, qu) in taken:
            collisions += 1
        taken.add((qv, qu))
        centers.append((qv, qu, idx))
        specs.append(spec)

    return DetectionTargets(
        heatmap=FeatureMap(heat[None]),
        wh_map=FeatureMap(wh),
        offset_map=FeatureMap(off),
        centers=centers,
        downsize_factor=n,
        collisions=collisions,
        specs=specs,
    )


def nms_maxpool(heatmap: FeatureMap) -> FeatureMap:
    """Suppress non-peaks: keep pixels equal to their 3x3 neighborhood max.

    The neighborhood is edge-clamped; ties are retained at every tying
    position, which makes the operation idempotent.
    """
    if heatmap.channels != 1:
        raise ValueError("nms_maxpool expects a single-channel map")
    plane = heatmap.data[0]
    pooled = maximum_filter(plane, size=3, mode="nearest")
    return FeatureMap(np.where(plane == pooled, plane, 0.0).astype(np.float32)[None])


def decode_boxes(
    heatmap: FeatureMap,
    wh_map: FeatureMap,
    offset_map: FeatureMap,
    n: int = 4,
    top_k: int = 100,
    score_thresh: float = 0.05,
) -> list[Detection]:
    """Decode predicted maps into scored boxes in input-image pixels.

    NMS survivors with score >= score_thresh are ranked by descending
    score (ties by (row, col)), cut to top_k, then re-expanded:
    center = n * (q + offset), size = n * wh. Non-positive decoded
    extents are dropped.
    """
    hs = heatmap.shape
    if wh_map.shape != (2, hs[1], hs[2]) or offset_map.shape != (2, hs[1], hs[2]):
        raise ValueError(
            f"map shapes disagree: heatmap {hs}, wh {wh_map.shape}, offset {offset_map.shape}"
        )
    peaks = nms_maxpool(heatmap).data[0]
    rows, cols = np.nonzero(peaks >= score_thresh)
    if rows.size == 0:
        return []
    scores = peaks[rows, cols]
    order = np.lexsort((cols, rows, -scores.astype(np.float64)))[:top_k]

    out: list[Detection] = []
    for i in order:
        qv, qu = int(rows[i]), int(cols[i])
        cu = n * (qu + float(offset_map.data[0, qv, qu]))
        cv = n * (qv + float(offset_map.data[1, qv, qu]))
        w = n * float(wh_map.data[0, qv, qu])
        h = n * float(wh_map.data[1, qv, qu])
        if w <= 0 or h <= 0:
            continue
        out.append(Detection(BBox(cu, cv, w, h), float(scores[i])))
    return out

"""Synthetic scenes: rotated ellipses with optional thin protrusions.

Stands in for real microscopy data in tests and acceptance runs. Every
instance is a pixel mask; its GT box is the tight box of that mask, so
box footprints are integer-aligned and an ideal crop/paste round trip is
exact. The "ideal pyramid" carries one membership channel per instance
(block-mean downsampled per level), standing in for a segmentation
branch that perfectly isolates each detected instance from its
neighbors. Scenes regenerate bit-exactly from (seed, params).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .codec import BBox
from .fmap import FeatureMap
from .segmentation import PyramidLevels

__all__ = ["SceneParams", "SynthScene", "generate_scene", "random_boxes"]


@dataclass(frozen=True)
class SceneParams:
    count: int = 6
    min_size: float = 12.0
    max_size: float = 48.0
    protrusions: bool = False
    max_overlap: float = 0.3
    image_h: int = 256
    image_w: int = 256
    strides: tuple[float, ...] = (1.0, 2.0, 4.0)
    # Chebyshev floor between tight-box centers; 6 px keeps quantized
    # centers collision-free for downsize factors up to 4.
    min_center_dist: float = 6.0
    max_tries: int = 40

    def __post_init__(self):
        if self.count < 0 or self.min_size < 4 or self.max_size < self.min_size + 2:
            raise ValueError("invalid scene size parameters")
        if not 0.0 <= self.max_overlap <= 1.0:
            raise ValueError("max_overlap must be in [0, 1]")


@dataclass
class SynthScene:
    image_h: int
    image_w: int
    instances: list[tuple[BBox, np.ndarray]]
    image: FeatureMap
    pyramid: PyramidLevels
    seed: int
    placement_failures: int = 0
    params: SceneParams = field(default_factory=SceneParams)


def _raster_ellipse(mask: np.ndarray, cu, cv, sa, sb, theta) -> None:
    h, w = mask.shape
    reach = max(sa, sb) + 1
    c0 = max(0, int(math.floor(cu - reach)))
    c1 = min(w - 1, int(math.ceil(cu + reach)))
    r0 = max(0, int(math.floor(cv - reach)))
    r1 = min(h - 1, int(math.ceil(cv + reach)))
    if c0 > c1 or r0 > r1:
        return
    vv, uu = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
    du = uu - cu
    dv = vv - cv
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    la = du * cos_t + dv * sin_t
    lb = -du * sin_t + dv * cos_t
    inside = (la / sa) ** 2 + (lb / sb) ** 2 <= 1.0
    mask[r0 : r1 + 1, c0 : c1 + 1] |= inside


def _raster_bar(mask: np.ndarray, u0, v0, phi, length, width) -> None:
    """Thin rectangle from (u0, v0) extending `length` along angle phi."""
    h, w = mask.shape
    cu = u0 + 0.5 * length * math.cos(phi)
    cv = v0 + 0.5 * length * math.sin(phi)
    reach = 0.5 * length + width + 1
    c0 = max(0, int(math.floor(cu - reach)))
    c1 = min(w - 1, int(math.ceil(cu + reach)))
    r0 = max(0, int(math.floor(cv - reach)))
    r1 = min(h - 1, int(math.ceil(cv + reach)))
    if c0 > c1 or r0 > r1:
        return
    vv, uu = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
    du = uu - cu
    dv = vv - cv
    cos_p, sin_p = math.cos(phi), math.sin(phi)
    along = du * cos_p + dv * sin_p
    perp = -du * sin_p + dv * cos_p
    inside = (np.abs(along) <= 0.5 * length) & (np.abs(perp) <= 0.5 * width)
    mask[r0 : r1 + 1, c0 : c1 + 1] |= inside


def _tight_box(mask: np.ndarray) -> BBox:
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    r0, r1 = int(rows[0]), int(rows[-1])
    c0, c1 = int(cols[0]), int(cols[-1])
    return BBox((c0 + c1) / 2.0, (r0 + r1) / 2.0, c1 - c0 + 1.0, r1 - r0 + 1.0)


def _downsample_mean(planes: np.ndarray, stride: int) -> np.ndarray:
    c, h, w = planes.shape
    oh, ow = math.ceil(h / stride), math.ceil(w / stride)
    padded = np.zeros((c, oh * stride, ow * stride), dtype=np.float64)
    padded[:, :h, :w] = planes
    return padded.reshape(c, oh, stride, ow, stride).mean(axis=(2, 4)).astype(np.float32)


def generate_scene(seed: int, params: SceneParams = SceneParams()) -> SynthScene:
    """Place instances by rejection sampling and build the ideal pyramid.

    Candidates are re-drawn until every pairwise mask IOU stays at or
    below max_overlap and centers keep their Chebyshev distance floor;
    after max_tries the instance is skipped and counted as a placement
    failure.
    """
    g = rng.stream(seed, "scene")
    h, w = params.image_h, params.image_w
    masks: list[np.ndarray] = []
    centers: list[tuple[float, float]] = []
    failures = 0

    # Half-extent bounds chosen so pixelized tight boxes land inside
    # [min_size, max_size] even in the worst sub-pixel phase.
    half_min = (params.min_size + 1.0) / 2.0
    half_max = (params.max_size - 1.0) / 2.0
    for _ in range(params.count):
        placed = False
        for _try in range(params.max_tries):
            sa = g.uniform(half_min, half_max)
            sb = g.uniform(half_min, sa)
            theta = g.uniform(0.0, math.pi)
            margin = min(sa + 2.0, (min(h, w) - 1) / 2.0 - 1.0)
            cu = g.uniform(margin, w - 1 - margin)
            cv = g.uniform(margin, h - 1 - margin)

            cand = np.zeros((h, w), dtype=bool)
            _raster_ellipse(cand, cu, cv, sa, sb, theta)
            if params.protrusions and sa > 4.0:
                # bars radiate from the center; length capped so the tight
                # box never grows past 2*sa + 1
                for _p in range(int(g.integers(1, 4))):
                    phi = g.uniform(0.0, 2.0 * math.pi)
                    plen = g.uniform(0.6 * (sa - 2.0), sa - 2.0)
                    pwid = g.uniform(2.0, 3.0)
                    _raster_bar(cand, cu, cv, phi, plen, pwid)
            if not cand.any():
                continue

            box = _tight_box(cand)
            if any(
                max(abs(box.cu - pu), abs(box.cv - pv)) < params.min_center_dist
                for pu, pv in centers
            ):
                continue
            ok = True
            for prev in masks:
                inter = np.logical_and(cand, prev).sum()
                union = np.logical_or(cand, prev).sum()
                if union and inter / union > params.max_overlap:
                    ok = False
                    break
            if ok:
                masks.append(cand)
                centers.append((box.cu, box.cv))
                placed = True
                break
        if not placed:
            failures += 1

    instances = [(_tight_box(m), m.astype(np.uint8)) for m in masks]

    image = np.zeros((h, w), dtype=np.float32)
    for i, m in enumerate(masks):
        intensity = 0.35 + 0.6 * (i + 1) / max(1, len(masks))
        np.maximum(image, m.astype(np.float32) * intensity, out=image)

    channels = (
        np.stack([m.astype(np.float64) for m in masks])
        if masks
        else np.zeros((1, h, w), dtype=np.float64)
    )
    levels = []
    for stride in params.strides:
        s = int(stride)
        plane = channels.astype(np.float32) if s == 1 else _downsample_mean(channels, s)
        levels.append((FeatureMap(plane), float(stride)))
    pyramid = PyramidLevels(tuple(levels), h, w)

    return SynthScene(
        image_h=h,
        image_w=w,
        instances=instances,
        image=FeatureMap(image[None]),
        pyramid=pyramid,
        seed=seed,
        placement_failures=failures,
        params=params,
    )


def random_boxes(
    seed: int,
    image_h: int,
    image_w: int,
    n: int,
    count: int,
    min_size: float = 2.0,
    max_size: float = 96.0,
) -> list[BBox]:
    """Collision-free random boxes for encode/decode round trips.

    Centers stay at least n/2 pixels inside the image and no two boxes
    share a quantized n-grid cell.
    """
    g = rng.stream(seed, "boxes")
    taken: set[tuple[int, int]] = set()
    out: list[BBox] = []
    guard = 0
    while len(out) < count and guard < 200 * count:
        guard += 1
        cu = g.uniform(n / 2.0, image_w - 1 - n / 2.0)
        cv = g.uniform(n / 2.0, image_h - 1 - n / 2.0)
        q = (round(cv / n), round(cu / n))
        if q in taken:
            continue
        taken.add(q)
        out.append(BBox(cu, cv, g.uniform(min_size, max_size), g.uniform(min_size, max_size)))
    return out

"""Dense multi-channel rasters and the sampling kernels built on them.

A :class:`FeatureMap` is a channel-major ``(C, H, W)`` float32 array under
the pixel-center-at-integer convention: the stored value of pixel
``(row v, col u)`` lives exactly at the continuous point ``(u, v)``.
Sampling outside the grid edge-clamps to the nearest border pixel.

Everything here is a pure function of immutable inputs; callers may
parallelize per ROI or per image freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FeatureMap",
    "SamplePoint",
    "RoiRect",
    "bilinear_sample",
    "grid_sample_crop",
    "nearest_resize",
    "instance_normalize",
]


@dataclass(frozen=True)
class FeatureMap:
    """Channel-major (C, H, W) float32 raster; all values finite."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"FeatureMap data must be (C, H, W), got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("FeatureMap must be non-empty")
        if not np.isfinite(arr).all():
            raise ValueError("FeatureMap admits finite values only")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "FeatureMap":
        return cls(np.zeros((channels, height, width), dtype=np.float32))

    @classmethod
    def from_2d(cls, arr: np.ndarray) -> "FeatureMap":
        """Wrap a single (H, W) plane as a 1-channel map."""
        return cls(np.asarray(arr, dtype=np.float32)[None, :, :])

    def plane(self, channel: int = 0) -> np.ndarray:
        return self.data[channel]


@dataclass(frozen=True)
class SamplePoint:
    """Continuous pixel position; u is horizontal (column), v vertical (row)."""

    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError("SamplePoint coordinates must be finite")


@dataclass(frozen=True)
class RoiRect:
    """Center-format rectangle in continuous input-image pixels."""

    cu: float
    cv: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"RoiRect extent must be positive, got w={self.w}, h={self.h}")


def _bilinear_plane(plane: np.ndarray, u, v):
    """Edge-clamped bilinear interpolation of an (H, W) plane at (u, v).

    Accepts scalars or broadcastable arrays; computes in float64.
    """
    h, w = plane.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u0 = np.floor(u)
    v0 = np.floor(v)
    fu = u - u0
    fv = v - v0
    x0 = np.clip(u0.astype(np.int64), 0, w - 1)
    x1 = np.clip(u0.astype(np.int64) + 1, 0, w - 1)
    y0 = np.clip(v0.astype(np.int64), 0, h - 1)
    y1 = np.clip(v0.astype(np.int64) + 1, 0, h - 1)
    p = plane.astype(np.float64, copy=False)
    top = p[y0, x0] * (1.0 - fu) + p[y0, x1] * fu
    bot = p[y1, x0] * (1.0 - fu) + p[y1, x1] * fu
    return top * (1.0 - fv) + bot * fv


def bilinear_sample(fmap: FeatureMap, p: SamplePoint, channel: int = 0) -> float:
    """Sample one channel at a continuous point.

    Returns the bilinear combination of the four surrounding grid values;
    neighbors past the border are edge-clamped. At integer (u, v) this is
    exactly the stored pixel.
    """
    if not (0 <= channel < fmap.channels):
        raise ValueError(f"channel {channel} out of range for {fmap.channels}-channel map")
    return float(_bilinear_plane(fmap.data[channel], p.u, p.v))


def _roi_sample_grid(roi: RoiRect, stride: float, out_h: int, out_w: int):
    """Pixel-center sample positions of an out_h x out_w grid over the ROI.

    ROI corners are mapped into the level frame by dividing by the stride;
    samples sit at the centers of the out_h x out_w equal cells, so a box
    spanning the footprint of an integer sub-grid samples exactly at grid
    nodes.
    """
    u_lo = (roi.cu - roi.w / 2.0) / stride
    v_lo = (roi.cv - roi.h / 2.0) / stride
    du = roi.w / stride / out_w
    dv = roi.h / stride / out_h
    us = u_lo + (np.arange(out_w, dtype=np.float64) + 0.5) * du
    vs = v_lo + (np.arange(out_h, dtype=np.float64) + 0.5) * dv
    return us, vs


def grid_sample_crop(
    fmap: FeatureMap, roi: RoiRect, stride: float, out_h: int, out_w: int
) -> FeatureMap:
    """Crop the ROI from a stride-s level by bilinear grid sampling.

    The output keeps the channel count; every output value is a bilinear
    sample, so the crop never leaves the [min, max] range of the source.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output grid must be at least 1x1")
    if not stride > 0:
        raise ValueError("stride must be positive")
    us, vs = _roi_sample_grid(roi, stride, out_h, out_w)
    uu, vv = np.meshgrid(us, vs)
    out = np.empty((fmap.channels, out_h, out_w), dtype=np.float32)
    for c in range(fmap.channels):
        out[c] = _bilinear_plane(fmap.data[c], uu, vv).astype(np.float32)
    return FeatureMap(out)


def nearest_resize(fmap: FeatureMap, out_h: int, out_w: int) -> FeatureMap:
    """Resize by nearest-neighbor under the pixel-center convention.

    Output pixel j maps to source coordinate (j + 0.5) * src/out - 0.5;
    ties between two equally near pixels go to the smaller index.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    src_h, src_w = fmap.height, fmap.width
    if (out_h, out_w) == (src_h, src_w):
        return FeatureMap(fmap.data.copy())
    u = (np.arange(out_w, dtype=np.float64) + 0.5) * (src_w / out_w) - 0.5
    v = (np.arange(out_h, dtype=np.float64) + 0.5) * (src_h / out_h) - 0.5
    # ceil(x - 0.5) is round-half-down, i.e. ties to the smaller index
    xi = np.clip(np.ceil(u - 0.5).astype(np.int64), 0, src_w - 1)
    yi = np.clip(np.ceil(v - 0.5).astype(np.int64), 0, src_h - 1)
    return FeatureMap(fmap.data[:, yi[:, None], xi[None, :]])


def instance_normalize(
    patch: FeatureMap,
    gamma: float | np.ndarray = 1.0,
    eta: float | np.ndarray = 0.0,
    eps: float = 1e-5,
) -> FeatureMap:
    """Per-channel standardization over H x W with affine scale/shift.

    Uses the population (biased) variance; eps keeps constant channels
    finite, in which case the output is just eta.
    """
    x = patch.data.astype(np.float64)
    mu = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)
    g = np.asarray(gamma, dtype=np.float64).reshape(-1, 1, 1)
    e = np.asarray(eta, dtype=np.float64).reshape(-1, 1, 1)
    out = g * (x - mu) / np.sqrt(var + eps) + e
    return FeatureMap(out.astype(np.float32))

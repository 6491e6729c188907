"""Uncertainty-biased point sampling for boundary feature refinement.

From a predicted mask probability x, the uncertainty map x' = -|2x - 1|
peaks (at 0) where the prediction sits at 0.5, i.e. along boundaries.
The sampler draws k*N floating-point positions uniformly over the mask
(N = H*W / D), reads x' at each by bilinear interpolation, and keeps the
round(beta*N) most uncertain; beta = k degenerates to plain uniform
sampling. Everything is driven by a seeded counter-based stream, so equal
(input, config) pairs reproduce bit-identically on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .fmap import FeatureMap, SamplePoint, _bilinear_plane

__all__ = [
    "SamplingConfig",
    "SamplingPointSet",
    "uncertainty_map",
    "generate_biased_points",
    "extract_point_features",
    "soft_labels",
]


@dataclass(frozen=True)
class SamplingConfig:
    """Oversample k*N points, keep the top round(beta_sample*N); N = H*W/D."""

    k: float = 3.0
    beta_sample: float = 0.75
    D: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.beta_sample <= self.k:
            raise ValueError("beta_sample must be in (0, k]")
        if self.D < 1:
            raise ValueError("D must be >= 1")


@dataclass(frozen=True)
class SamplingPointSet:
    """Selected points sorted by uncertainty descending (ties keep
    generation order), plus the full generated set they were chosen from."""

    points: tuple[tuple[SamplePoint, float], ...]
    config: SamplingConfig
    generated: tuple[tuple[SamplePoint, float], ...] = ()

    def coords(self) -> np.ndarray:
        """Selected (u, v) pairs as an (n, 2) array."""
        return np.array([[p.u, p.v] for p, _ in self.points], dtype=np.float64).reshape(-1, 2)


def uncertainty_map(x: FeatureMap) -> FeatureMap:
    """x' = -|2x - 1|: 0 at probability 0.5, -1 at confident 0 or 1."""
    if x.channels != 1:
        raise ValueError("uncertainty_map expects a single-channel map")
    return FeatureMap(-np.abs(2.0 * x.data - 1.0))


def generate_biased_points(x: FeatureMap, cfg: SamplingConfig) -> SamplingPointSet:
    """Draw k*N uniform points on the mask and keep the most uncertain.

    Coordinates are continuous over [0, W-1] x [0, H-1] (pixel centers);
    uncertainties come from bilinear reads of x'. Selection sorts
    descending with generation order breaking ties, then keeps
    round(beta_sample * N) points.
    """
    if x.channels != 1:
        raise ValueError("generate_biased_points expects a single-channel map")
    h, w = x.height, x.width
    n_base = (h * w) // cfg.D
    if n_base < 1:
        raise ValueError(f"mask {h}x{w} too small for density divisor D={cfg.D}")
    n_gen = round(cfg.k * n_base)
    n_keep = round(cfg.beta_sample * n_base)

    g = rng.stream(cfg.seed, "points")
    raw = g.random((n_gen, 2))
    us = raw[:, 0] * (w - 1)
    vs = raw[:, 1] * (h - 1)
    unc = _bilinear_plane(uncertainty_map(x).data[0], us, vs)

    order = np.argsort(-unc, kind="stable")
    generated = tuple((SamplePoint(float(u), float(v)), float(c)) for u, v, c in zip(us, vs, unc))
    selected = tuple(generated[i] for i in order[:n_keep])
    return SamplingPointSet(points=selected, config=cfg, generated=generated)


def extract_point_features(
    maps: list[FeatureMap],
    points: SamplingPointSet,
    transforms: list[tuple[float, float]] | None = None,
) -> np.ndarray:
    """Concatenate bilinear feature reads from every map at each point.

    transforms holds one (scale_u, scale_v) pair per map, taking mask
    coordinates into that map's frame (defaults to identity). Output is
    (n_points, sum of channel counts), maps in input order.
    """
    if transforms is None:
        transforms = [(1.0, 1.0)] * len(maps)
    if len(transforms) != len(maps):
        raise ValueError(f"{len(maps)} maps but {len(transforms)} transforms")
    coords = points.coords()
    pieces = []
    for fm, (su, sv) in zip(maps, transforms):
        us = coords[:, 0] * su
        vs = coords[:, 1] * sv
        feats = np.stack([_bilinear_plane(fm.data[c], us, vs) for c in range(fm.channels)], axis=1)
        pieces.append(feats)
    if not pieces:
        return np.zeros((coords.shape[0], 0), dtype=np.float64)
    return np.concatenate(pieces, axis=1)


def soft_labels(gt_mask: FeatureMap, points: SamplingPointSet) -> np.ndarray:
    """Bilinear reads of a binary GT mask at the sampled positions.

    Values land in [0, 1] and equal the mask exactly at integer points.
    """
    if gt_mask.channels != 1:
        raise ValueError("soft_labels expects a single-channel mask")
    plane = gt_mask.data[0]
    if not np.isin(plane, (0.0, 1.0)).all():
        raise ValueError("gt mask must be binary")
    coords = points.coords()
    return np.asarray(_bilinear_plane(plane, coords[:, 0], coords[:, 1]), dtype=np.float64).reshape(-1)

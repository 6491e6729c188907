"""Training losses and their analytic gradients.

Five losses: the variant focal loss on the center heatmap, smooth-L1 sums
on width-height and offset pairs, pixel-sum BCE on ROI masks, and BCE on
refinement points with soft targets. Each returns the scalar value plus
the exact derivative w.r.t. every predicted probability (not logits: the
module owns no network, so chain rule through a sigmoid is the trainer's
job). Probabilities are clamped to [1e-6, 1 - 1e-6] before logs.

All arithmetic is float64; identical inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fmap import FeatureMap

__all__ = [
    "FocalParams",
    "LossResult",
    "focal_heatmap_loss",
    "smooth_l1",
    "wh_loss",
    "offset_loss",
    "bce_mask_loss",
    "refine_point_loss",
    "total_detection_loss",
    "PROB_CLAMP",
]

PROB_CLAMP = 1e-6


@dataclass(frozen=True)
class FocalParams:
    """Focal exponents: alpha on the probability term, beta on the
    background down-weight (1 - y)^beta."""

    alpha: float = 2.0
    beta_focal: float = 4.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.beta_focal < 0:
            raise ValueError("beta_focal must be >= 0")


@dataclass(frozen=True)
class LossResult:
    """Scalar loss and d(loss)/d(prediction), same shape as the prediction."""

    value: float
    gradient: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("loss value must be finite")
        if not np.isfinite(self.gradient).all():
            raise ValueError("loss gradient must be finite everywhere")


def _as_array(x) -> np.ndarray:
    data = x.data if isinstance(x, FeatureMap) else x
    return np.asarray(data, dtype=np.float64)


def _clamp_prob(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def focal_heatmap_loss(pred, gt, params: FocalParams = FocalParams()) -> LossResult:
    """Variant focal loss over the center heatmap.

    value = -(1/N) * sum_i { y_i = 1: (1-p_i)^a log p_i
                             else:    (1-y_i)^b p_i^a log(1-p_i) }
    with N the count of positions where y is exactly 1.
    """
    p = _clamp_prob(_as_array(pred))
    y = _as_array(gt)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {y.shape}")
    pos = y == 1.0
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("focal loss undefined with zero center points (N = 0)")
    a, b = params.alpha, params.beta_focal

    one_m_p = 1.0 - p
    terms = np.where(
        pos,
        one_m_p**a * np.log(p),
        (1.0 - y) ** b * p**a * np.log(one_m_p),
    )
    value = -terms.sum() / n_pos

    grad_pos = -(one_m_p**a / p - a * one_m_p ** (a - 1.0) * np.log(p))
    grad_neg = -((1.0 - y) ** b) * (a * p ** (a - 1.0) * np.log(one_m_p) - p**a / one_m_p)
    grad = np.where(pos, grad_pos, grad_neg) / n_pos
    return LossResult(float(value), grad)


def smooth_l1(theta):
    """Smooth-L1 value and derivative: 0.5*t^2 below |t| = 1, |t| - 0.5 above.

    Accepts scalars or arrays; returns (value, derivative) elementwise.
    """
    t = np.asarray(theta, dtype=np.float64)
    small = np.abs(t) < 1.0
    value = np.where(small, 0.5 * t * t, np.abs(t) - 0.5)
    deriv = np.where(small, t, np.sign(t))
    if np.ndim(theta) == 0:
        return float(value), float(deriv)
    return value, deriv


def _pairs_smooth_l1(pred, gt) -> LossResult:
    p = _as_array(pred)
    g = _as_array(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    if p.size == 0:
        raise ValueError("need at least one center")
    value, deriv = smooth_l1(p - g)
    return LossResult(float(np.sum(value)), np.asarray(deriv))


def wh_loss(pred_wh, gt_wh) -> LossResult:
    """Smooth-L1 sum over per-center (w, h) pairs; only centers contribute."""
    return _pairs_smooth_l1(pred_wh, gt_wh)


def offset_loss(pred_o, gt_o) -> LossResult:
    """Smooth-L1 sum over per-center offset pairs; same contract as wh_loss."""
    return _pairs_smooth_l1(pred_o, gt_o)


def bce_mask_loss(pred, gt) -> LossResult:
    """Pixel-sum binary cross-entropy over a mask.

    value = -sum_i (x̂ log x + (1-x̂) log(1-x)); gradient (x-x̂)/(x(1-x)).
    """
    x = _clamp_prob(_as_array(pred))
    t = _as_array(gt)
    if x.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {x.shape} vs gt {t.shape}")
    value = -np.sum(t * np.log(x) + (1.0 - t) * np.log(1.0 - x))
    grad = (x - t) / (x * (1.0 - x))
    return LossResult(float(value), grad)


def refine_point_loss(pred_probs, soft_labels) -> LossResult:
    """BCE over sampled refinement points against soft (interpolated) labels."""
    p = np.atleast_1d(_as_array(pred_probs))
    t = np.atleast_1d(_as_array(soft_labels))
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs labels {t.shape}")
    if p.size == 0:
        raise ValueError("need at least one sampled point")
    return bce_mask_loss(p, t)


def total_detection_loss(heat: float, wh: float, offset: float) -> float:
    """Unweighted sum of the three detection losses."""
    return float(heat) + float(wh) + float(offset)

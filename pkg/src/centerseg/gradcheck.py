"""Finite-difference verification of the analytic loss gradients.

Central differences with step 1e-4 against randomized instances. The
instances keep predictions in [0.1, 0.9], targets at least 0.05 away, and
smooth-L1 errors clear of the |theta| = 1 kink, so the comparison is
numerically meaningful everywhere; relative error uses max(|a|, |fd|) as
the denominator (0 when both vanish).
"""

from __future__ import annotations

import numpy as np

from . import rng
from .losses import (
    FocalParams,
    bce_mask_loss,
    focal_heatmap_loss,
    offset_loss,
    refine_point_loss,
    wh_loss,
)

__all__ = ["fd_gradient", "max_rel_err", "check_loss", "LOSS_NAMES"]

LOSS_NAMES = ("focal_heatmap", "wh", "offset", "bce_mask", "refine_point")

FD_STEP = 1e-4


def fd_gradient(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of scalar f at x, one entry at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        hi = x.copy()
        lo = x.copy()
        hi[idx] += step
        lo[idx] -= step
        grad[idx] = (f(hi) - f(lo)) / (2.0 * step)
        it.iternext()
    return grad


def max_rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(fd, dtype=np.float64)
    denom = np.maximum(np.abs(a), np.abs(f))
    err = np.zeros_like(denom)
    nz = denom > 0
    err[nz] = np.abs(a - f)[nz] / denom[nz]
    return float(err.max()) if err.size else 0.0


def _focal_instance(g):
    h, w = int(g.integers(6, 14)), int(g.integers(6, 14))
    p = g.uniform(0.1, 0.9, size=(1, h, w))
    y = g.uniform(0.0, 0.75, size=(1, h, w))
    n_pos = int(g.integers(1, 5))
    flat = g.choice(h * w, size=n_pos, replace=False)
    y.reshape(-1)[flat] = 1.0
    return p, y


def _pair_instance(g):
    n = int(g.integers(1, 9))
    gt = g.uniform(-2.0, 2.0, size=(n, 2))
    mag = np.where(g.random((n, 2)) < 0.5, g.uniform(0.01, 0.9, (n, 2)), g.uniform(1.1, 3.0, (n, 2)))
    theta = mag * np.where(g.random((n, 2)) < 0.5, -1.0, 1.0)
    return gt + theta, gt


def _bce_instance(g):
    h, w = int(g.integers(5, 12)), int(g.integers(5, 12))
    x = g.uniform(0.1, 0.9, size=(1, h, w))
    delta = g.uniform(0.05, 0.1, size=(1, h, w)) * np.where(g.random((1, h, w)) < 0.5, -1.0, 1.0)
    return x, np.clip(x + delta, 0.0, 1.0)


def _point_instance(g):
    n = int(g.integers(4, 32))
    p = g.uniform(0.1, 0.9, size=n)
    delta = g.uniform(0.05, 0.1, size=n) * np.where(g.random(n) < 0.5, -1.0, 1.0)
    return p, np.clip(p + delta, 0.0, 1.0)


def check_loss(name: str, seed: int = 0, trials: int = 100) -> float:
    """Max relative error between analytic and FD gradients over trials."""
    worst = 0.0
    for t in range(trials):
        g = rng.stream(seed, "gradcheck", name, t)
        if name == "focal_heatmap":
            p, y = _focal_instance(g)
            params = FocalParams()
            res = focal_heatmap_loss(p, y, params)
            fd = fd_gradient(lambda q: focal_heatmap_loss(q, y, params).value, p)
        elif name == "wh":
            p, y = _pair_instance(g)
            res = wh_loss(p, y)
            fd = fd_gradient(lambda q: wh_loss(q, y).value, p)
        elif name == "offset":
            p, y = _pair_instance(g)
            res = offset_loss(p, y)
            fd = fd_gradient(lambda q: offset_loss(q, y).value, p)
        elif name == "bce_mask":
            p, y = _bce_instance(g)
            res = bce_mask_loss(p, y)
            fd = fd_gradient(lambda q: bce_mask_loss(q, y).value, p)
        elif name == "refine_point":
            p, y = _point_instance(g)
            res = refine_point_loss(p, y)
            fd = fd_gradient(lambda q: refine_point_loss(q, y).value, p)
        else:
            raise ValueError(f"unknown loss {name!r}")
        worst = max(worst, max_rel_err(res.gradient, fd))
    return worst

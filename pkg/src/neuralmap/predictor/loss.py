"""Heteroscedastic loss and batch re-weighting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOGVAR_MIN = float(np.log(1e-4))
LOGVAR_MAX = float(np.log(25.0))


class ShapeMismatch(ValueError):
    pass


@dataclass
class ElevationEstimate:
    """Per-cell mean elevation (m, base-relative) and log-variance (log m^2)."""

    mean: np.ndarray
    log_variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.log_variance = np.clip(np.asarray(self.log_variance, dtype=float), LOGVAR_MIN, LOGVAR_MAX)
        if self.mean.shape != self.log_variance.shape:
            raise ShapeMismatch(f"mean {self.mean.shape} vs log-variance {self.log_variance.shape}")

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.log_variance)

    @property
    def shape(self):
        return self.mean.shape


def beta_nll(mean, log_variance, target, valid=None, beta: float = 0.5):
    """β-NLL averaged over valid target cells, with analytic gradients.

    Per cell ``sg[var**beta] * (log_var/2 + (y - mu)**2 / (2 var))``; the
    ``var**beta`` factor is held constant under differentiation.  Leading
    axes beyond the last two are treated as a batch and reduced per sample,
    so ``loss`` has the batch shape.

    Returns ``(loss, d_loss/d_mean, d_loss/d_log_variance)``.
    """
    mean = np.asarray(mean, dtype=float)
    s = np.asarray(log_variance, dtype=float)
    y = np.asarray(target, dtype=float)
    if not (mean.shape == s.shape == y.shape):
        raise ShapeMismatch(f"shapes {mean.shape}, {s.shape}, {y.shape} differ")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    mask = np.ones(y.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if mask.shape != y.shape:
        raise ShapeMismatch("valid mask shape differs")
    inv_var = np.exp(-s)
    weight = np.exp(beta * s)  # (sigma^2)^beta, stop-gradient
    resid = np.where(mask, y - mean, 0.0)
    cell = weight * (0.5 * s + 0.5 * resid**2 * inv_var)
    count = mask.sum(axis=(-2, -1), keepdims=True)
    scale = np.where(count > 0, 1.0 / np.maximum(count, 1), 0.0)
    loss = np.sum(np.where(mask, cell, 0.0), axis=(-2, -1), keepdims=True) * scale
    g_mean = np.where(mask, -weight * resid * inv_var, 0.0) * scale
    g_s = np.where(mask, weight * (0.5 - 0.5 * resid**2 * inv_var), 0.0) * scale
    return loss[..., 0, 0], g_mean, g_s


def l05(estimate: ElevationEstimate, label, beta: float = 0.5) -> float:
    """The β=0.5 metric of one estimate against a LocalGrid label."""
    loss, _, _ = beta_nll(estimate.mean, estimate.log_variance, label.elevations, label.valid, beta)
    return float(loss)


def total_variation(labels, valid=None) -> np.ndarray:
    """Mean absolute forward difference per grid: (|dx|_1 + |dy|_1) / (H W).

    With a validity mask, only differences between two valid cells count.
    """
    y = np.asarray(labels, dtype=float)
    if y.ndim == 2:
        y = y[None]
        valid = None if valid is None else np.asarray(valid)[None]
    h, w = y.shape[-2:]
    dx = np.abs(np.diff(y, axis=-1))
    dy = np.abs(np.diff(y, axis=-2))
    if valid is not None:
        v = np.asarray(valid, dtype=bool)
        dx = np.where(v[..., :, 1:] & v[..., :, :-1], dx, 0.0)
        dy = np.where(v[..., 1:, :] & v[..., :-1, :], dy, 0.0)
    return (dx.sum(axis=(-2, -1)) + dy.sum(axis=(-2, -1))) / (h * w)


def tv_weights(labels, epsilon: float = 1e-6, valid=None) -> np.ndarray:
    """Batch weights ``TV_b / (sum TV + epsilon)``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    tv = total_variation(labels, valid)
    if tv.size < 1:
        raise ValueError("empty batch")
    return tv / (tv.sum() + epsilon)

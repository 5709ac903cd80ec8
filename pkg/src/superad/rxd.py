"""Global RX baseline: squared Mahalanobis distance to image-wide statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .io import AnomalyMap, HsiCube

__all__ = ["BackgroundStats", "fit_stats", "rxd_detect"]


@dataclass
class BackgroundStats:
    """Mean spectrum and ridge-stabilised covariance of the whole image."""

    mean: np.ndarray
    covariance: np.ndarray  # sample covariance plus ridge * I
    ridge: float


def fit_stats(cube: HsiCube, ridge: float | None = None) -> BackgroundStats:
    """Fit mean and (N-1)-normalised covariance, adding ridge * I.

    The default ridge is ``1e-6 * trace(cov) / c``, which scales with the
    data. Raises if the ridged covariance is still not positive definite.
    """
    h, w, c = cube.data.shape
    if h * w < 2:
        raise ValueError("need at least two pixels to fit background statistics")
    flat = cube.data.reshape(h * w, c)
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = centered.T @ centered / (h * w - 1)
    if ridge is None:
        ridge = 1e-6 * float(np.trace(cov)) / c
    ridged = cov + ridge * np.eye(c)
    try:
        linalg.cho_factor(ridged, lower=True)
    except linalg.LinAlgError as e:
        raise np.linalg.LinAlgError(
            f"covariance not positive definite with ridge {ridge}; pass a larger ridge"
        ) from e
    return BackgroundStats(mean=mean, covariance=ridged, ridge=float(ridge))


def rxd_detect(cube: HsiCube, stats: BackgroundStats) -> AnomalyMap:
    """Squared Mahalanobis distance per pixel, solved via Cholesky."""
    h, w, c = cube.data.shape
    if stats.mean.shape[0] != c:
        raise ValueError(f"cube has {c} bands but statistics were fit on {stats.mean.shape[0]}")
    centered = cube.data.reshape(h * w, c) - stats.mean
    factor = linalg.cho_factor(stats.covariance, lower=True)
    solved = linalg.cho_solve(factor, centered.T)
    scores = np.einsum("ij,ji->i", centered, solved)
    # Exact zeros can round a hair negative.
    return AnomalyMap(np.maximum(scores, 0.0).reshape(h, w))

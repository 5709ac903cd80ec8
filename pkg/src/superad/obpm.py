"""Online background pixel mining loss, plus plain l1/l2 ablation losses.

Background pixels get exponentially scaled gradients (the harder a pixel
is to reconstruct, the more it pushes the optimizer); within each
superpixel, every pixel whose error lies beyond the largest first-order
gap of the sorted errors is dropped from the loss entirely, so suspected
anomalies contribute neither loss nor gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffkit as dk
from .superpixel import SegmentLabels

__all__ = [
    "ObpmConfig",
    "CutoffReport",
    "pixel_errors",
    "obpm_pointwise",
    "segment_cutoff",
    "obpm_loss",
    "l1_loss",
    "l2_loss",
]


@dataclass
class ObpmConfig:
    """alpha is the minimum gradient, beta the exponential growth rate."""

    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


@dataclass
class CutoffReport:
    """Per-segment cutoff summary.

    ``q`` is 1-based into the ascending sorted error vector: the boundary
    sits at the lower end of the largest first difference; pixels with
    error above ``boundary`` are dropped. ``keep_mask`` marks retained
    pixels. Singleton segments always retain their pixel.
    """

    sorted_errors: list
    q: np.ndarray
    boundary: np.ndarray
    retained: np.ndarray
    keep_mask: np.ndarray

    def retained_fraction(self) -> float:
        return float(self.keep_mask.mean())

    def csv_rows(self) -> list[str]:
        """Rows of "segment,q,boundary,retained" for per-epoch dumps."""
        return [
            f"{i},{int(self.q[i])},{float(self.boundary[i])!r},{int(self.retained[i])}"
            for i in range(len(self.q))
        ]


def _as_tensor(x) -> dk.DiffTensor:
    return x if isinstance(x, dk.DiffTensor) else dk.DiffTensor(np.asarray(x, dtype=np.float64))


def _residual(xhat, x) -> tuple[dk.DiffTensor, np.ndarray]:
    xhat = _as_tensor(xhat)
    xv = np.asarray(x, dtype=np.float64)
    if xv.shape != xhat.shape:
        xv = xv.reshape(xhat.shape)
    return dk.elem_add(xhat, dk.scale(dk.DiffTensor(xv), -1.0)), xv


def pixel_errors(xhat, x) -> dk.DiffTensor:
    """Mean absolute residual over bands, one row per pixel, shape (N, 1).

    Differentiable in ``xhat``; the sign pattern of the residual enters as
    a constant (sign of zero counts as +1), so d(error)/d(xhat) is
    sign/c exactly.
    """
    diff, _ = _residual(xhat, x)
    signs = np.where(diff.values >= 0, 1.0, -1.0)
    absdiff = dk.elem_mul(diff, dk.DiffTensor(signs))
    c = absdiff.shape[1]
    return dk.matmul(absdiff, dk.DiffTensor(np.full((c, 1), 1.0 / c)))


def obpm_pointwise(x, cfg: ObpmConfig) -> dk.DiffTensor:
    """Pointwise mining loss ``exp(beta x)/beta + alpha x`` (elementwise).

    Its derivative is exactly ``exp(beta x) + alpha``: steeper errors give
    exponentially larger gradients, alpha sets the floor.
    """
    x = _as_tensor(x)
    grown = dk.scale(dk.exp(dk.scale(x, cfg.beta)), 1.0 / cfg.beta)
    return dk.elem_add(grown, dk.scale(x, cfg.alpha))


def segment_cutoff(errors: np.ndarray, labels: SegmentLabels) -> CutoffReport:
    """Per-segment first-difference cutoff over ascending sorted errors.

    The boundary index maximises ``e[j+1] - e[j]``, ties resolved toward
    the largest j (retaining more pixels); anything above the boundary
    value is dropped. Segments of one pixel keep it.
    """
    errors = np.asarray(errors, dtype=np.float64)
    flat = errors.reshape(-1)
    if flat.size != labels.label.size:
        raise ValueError(f"{flat.size} errors for {labels.label.size} labelled pixels")
    if not np.isfinite(flat).all():
        raise ValueError("errors must be finite")

    ids = labels.label.reshape(-1)
    m = labels.m
    sorted_errors: list[np.ndarray] = []
    q = np.zeros(m, dtype=np.int64)
    boundary = np.zeros(m)
    retained = np.zeros(m, dtype=np.int64)
    keep = np.zeros(flat.size, dtype=bool)

    order = np.argsort(ids, kind="stable")
    bounds = np.searchsorted(ids[order], np.arange(m + 1))
    for i in range(m):
        members = order[bounds[i] : bounds[i + 1]]
        e = np.sort(flat[members])
        sorted_errors.append(e)
        if e.size == 1:
            q[i] = 1
            boundary[i] = e[0]
            retained[i] = 1
            keep[members] = True
            continue
        diffs = e[1:] - e[:-1]
        j = diffs.size - 1 - int(np.argmax(diffs[::-1]))  # ties -> largest j
        q[i] = j + 1
        boundary[i] = e[j]
        kept = flat[members] <= boundary[i]
        keep[members[kept]] = True
        retained[i] = int(kept.sum())

    return CutoffReport(
        sorted_errors=sorted_errors,
        q=q,
        boundary=boundary,
        retained=retained,
        keep_mask=keep.reshape(errors.shape) if errors.ndim == 2 else keep,
    )


def obpm_loss(
    xhat,
    x,
    labels: SegmentLabels,
    cfg: ObpmConfig,
    keep_mask: np.ndarray | None = None,
) -> tuple[dk.DiffTensor, CutoffReport | None]:
    """Sum of the pointwise mining loss over retained pixels.

    Dropped pixels are removed by a constant 0/1 mask, so they contribute
    exactly zero loss and zero gradient. The mask is recomputed from the
    current errors unless ``keep_mask`` is supplied (for gradient checks
    that need the selection frozen).
    """
    errs = pixel_errors(xhat, x)  # (N, 1)
    report = None
    if keep_mask is None:
        report = segment_cutoff(errs.values.reshape(labels.label.shape), labels)
        keep_mask = report.keep_mask
    mask = np.asarray(keep_mask, dtype=np.float64).reshape(-1, 1)
    if mask.shape[0] != errs.shape[0]:
        raise ValueError(f"mask has {mask.shape[0]} entries for {errs.shape[0]} pixels")
    pointwise = obpm_pointwise(errs, cfg)
    return dk.sum(dk.elem_mul(pointwise, dk.DiffTensor(mask))), report


def l1_loss(xhat, x) -> dk.DiffTensor:
    """Mean absolute residual over all entries (sign held constant)."""
    diff, _ = _residual(xhat, x)
    signs = np.where(diff.values >= 0, 1.0, -1.0)
    total = dk.sum(dk.elem_mul(diff, dk.DiffTensor(signs)))
    return dk.scale(total, 1.0 / diff.values.size)


def l2_loss(xhat, x) -> dk.DiffTensor:
    """Mean squared residual over all entries."""
    diff, _ = _residual(xhat, x)
    total = dk.sum(dk.elem_mul(diff, diff))
    return dk.scale(total, 1.0 / diff.values.size)

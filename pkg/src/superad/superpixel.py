"""SLIC superpixel segmentation and the pooling / uppooling perturbation.

Pooling averages the spectra inside each superpixel; uppooling broadcasts
each mean back over its segment. A rare anomaly inside a background
segment of size s is diluted by a factor of s in the pooled mean, which is
what keeps it out of the reconstruction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .io import HsiCube

__all__ = ["SegmentLabels", "SegmentFeatures", "slic_segment", "pool", "uppool"]


@dataclass
class SegmentLabels:
    """Per-pixel segment ids, dense in [0, m) with no empty segment."""

    label: np.ndarray
    m: int

    def __post_init__(self):
        self.label = np.asarray(self.label)
        if self.label.ndim != 2:
            raise ValueError(f"labels must be 2-D, got shape {self.label.shape}")
        if self.label.dtype.kind not in "iu":
            raise ValueError("labels must be integers")
        self.label = self.label.astype(np.int64)
        counts = np.bincount(self.label.ravel(), minlength=self.m)
        if self.label.min() < 0 or self.label.max() >= self.m:
            raise ValueError(f"label ids must lie in [0, {self.m})")
        if counts.size > self.m or (counts == 0).any():
            raise ValueError("label ids must be dense with no empty segment")

    @property
    def height(self) -> int:
        return self.label.shape[0]

    @property
    def width(self) -> int:
        return self.label.shape[1]


@dataclass
class SegmentFeatures:
    """One pooled c-vector per segment (m rows)."""

    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D (m, c), got shape {self.features.shape}")

    @property
    def m(self) -> int:
        return self.features.shape[0]


def _rnd(x: float) -> int:
    return int(math.floor(x + 0.5))


def slic_segment(
    cube: HsiCube,
    target_segments: int,
    compactness: float = 0.1,
    max_iters: int = 10,
) -> SegmentLabels:
    """Segment a cube into superpixels with a k-means style SLIC sweep.

    Seeds start on a regular grid of step ``s = sqrt(h*w/target_segments)``.
    Assignment searches a 2s x 2s window per cluster with the distance
    ``d_spectral + (compactness / s) * d_spatial`` where the spectral term
    is Euclidean over all bands. After ``max_iters`` sweeps, connected
    fragments smaller than ``s^2 / 4`` are merged into the largest adjacent
    segment and labels are re-indexed densely. Fully deterministic.
    """
    data = cube.data
    h, w, c = data.shape
    if not (1 <= target_segments <= h * w):
        raise ValueError(f"target_segments must lie in [1, {h * w}], got {target_segments}")
    if compactness <= 0:
        raise ValueError("compactness must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")

    s = math.sqrt(h * w / target_segments)
    n_rows = min(max(1, _rnd(h / s)), h)
    n_cols = min(max(1, _rnd(target_segments / n_rows)), w)
    step_r = h / n_rows
    step_c = w / n_cols

    seed_r = (np.arange(n_rows) + 0.5) * step_r - 0.5
    seed_c = (np.arange(n_cols) + 0.5) * step_c - 0.5
    grid_r, grid_c = np.meshgrid(seed_r, seed_c, indexing="ij")
    centers = np.stack([grid_r.ravel(), grid_c.ravel()], axis=1)
    k = centers.shape[0]

    pr = np.clip([_rnd(v) for v in centers[:, 0]], 0, h - 1)
    pc = np.clip([_rnd(v) for v in centers[:, 1]], 0, w - 1)
    spectra = data[pr, pc].copy()

    spatial_weight = compactness / s
    row_idx = np.arange(h, dtype=np.float64)
    col_idx = np.arange(w, dtype=np.float64)
    flat_rows = np.repeat(np.arange(h), w).astype(np.float64)
    flat_cols = np.tile(np.arange(w), h).astype(np.float64)

    labels = np.zeros((h, w), dtype=np.int64)
    for _ in range(max_iters):
        best = np.full((h, w), np.inf)
        labels = np.full((h, w), -1, dtype=np.int64)
        for ci in range(k):
            cr, cc = centers[ci]
            r0 = max(0, int(math.ceil(cr - s)))
            r1 = min(h - 1, int(math.floor(cr + s)))
            c0 = max(0, int(math.ceil(cc - s)))
            c1 = min(w - 1, int(math.floor(cc + s)))
            if r0 > r1 or c0 > c1:
                continue
            win = data[r0 : r1 + 1, c0 : c1 + 1]
            d_spec = np.sqrt(((win - spectra[ci]) ** 2).sum(axis=2))
            d_spat = np.sqrt(
                (row_idx[r0 : r1 + 1, None] - cr) ** 2 + (col_idx[None, c0 : c1 + 1] - cc) ** 2
            )
            d = d_spec + spatial_weight * d_spat
            patch_best = best[r0 : r1 + 1, c0 : c1 + 1]
            better = d < patch_best
            patch_best[better] = d[better]
            labels[r0 : r1 + 1, c0 : c1 + 1][better] = ci

        unassigned = labels < 0
        if unassigned.any():
            # Windows left a pixel uncovered (possible for extreme target
            # counts): fall back to the full distance over every cluster.
            for ci in range(k):
                cr, cc = centers[ci]
                d_spec = np.sqrt(((data - spectra[ci]) ** 2).sum(axis=2))
                d_spat = np.sqrt((row_idx[:, None] - cr) ** 2 + (col_idx[None, :] - cc) ** 2)
                d = d_spec + spatial_weight * d_spat
                better = unassigned & (d < best)
                best[better] = d[better]
                labels[better] = ci

        flat_labels = labels.ravel()
        counts = np.bincount(flat_labels, minlength=k)
        nonempty = counts > 0
        sum_r = np.bincount(flat_labels, weights=flat_rows, minlength=k)
        sum_c = np.bincount(flat_labels, weights=flat_cols, minlength=k)
        sums = np.zeros((k, c))
        np.add.at(sums, flat_labels, data.reshape(-1, c))
        safe = np.where(nonempty, counts, 1)
        centers[nonempty, 0] = (sum_r / safe)[nonempty]
        centers[nonempty, 1] = (sum_c / safe)[nonempty]
        spectra[nonempty] = (sums / safe[:, None])[nonempty]

    labels = _merge_fragments(labels, threshold=s * s / 4.0)
    labels, m = _relabel_dense(labels)
    return SegmentLabels(labels, m)


def _merge_fragments(labels: np.ndarray, threshold: float) -> np.ndarray:
    """Merge connected fragments smaller than ``threshold`` into the largest
    adjacent segment (ties broken toward the smallest label id)."""
    h, w = labels.shape
    labels = labels.copy()
    components = []  # (first flat pixel, pixel rows, pixel cols)
    for value in np.unique(labels):
        comp_map, n_comp = ndimage.label(labels == value)
        for comp_id in range(1, n_comp + 1):
            rows, cols = np.nonzero(comp_map == comp_id)
            components.append((int(rows[0] * w + cols[0]), rows, cols))
    components.sort(key=lambda item: item[0])

    counts = dict(zip(*np.unique(labels, return_counts=True)))
    for _, rows, cols in components:
        if rows.size >= threshold:
            continue
        own = labels[rows[0], cols[0]]
        neighbor_labels = set()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr = rows + dr
            nc = cols + dc
            ok = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
            neighbor_labels.update(np.unique(labels[nr[ok], nc[ok]]).tolist())
        neighbor_labels.discard(int(own))
        if not neighbor_labels:
            continue
        target = max(sorted(neighbor_labels), key=lambda v: (counts.get(v, 0), -v))
        labels[rows, cols] = target
        counts[int(own)] = counts.get(int(own), 0) - rows.size
        counts[int(target)] = counts.get(int(target), 0) + rows.size
    return labels


def _relabel_dense(labels: np.ndarray) -> tuple[np.ndarray, int]:
    flat = labels.ravel()
    first_seen = {}
    for v in flat.tolist():
        if v not in first_seen:
            first_seen[v] = len(first_seen)
    lookup = np.zeros(int(flat.max()) + 1, dtype=np.int64)
    for old, new in first_seen.items():
        lookup[old] = new
    return lookup[labels], len(first_seen)


def pool(cube: HsiCube, labels: SegmentLabels) -> SegmentFeatures:
    """Average the spectra inside each segment (row-major accumulation).

    The float mean is clamped into the segment's per-band value range, so a
    segment of identical values pools to exactly that value and pooled
    means never escape [min(X), max(X)] by rounding.
    """
    data = cube.data
    if (data.shape[0], data.shape[1]) != labels.label.shape:
        raise ValueError(
            f"cube {data.shape[:2]} and labels {labels.label.shape} dimensions differ"
        )
    h, w, c = data.shape
    flat = data.reshape(h * w, c)
    ids = labels.label.ravel()
    m = labels.m

    sums = np.zeros((m, c))
    np.add.at(sums, ids, flat)
    counts = np.bincount(ids, minlength=m).astype(np.float64)
    means = sums / counts[:, None]

    seg_min = np.full((m, c), np.inf)
    seg_max = np.full((m, c), -np.inf)
    np.minimum.at(seg_min, ids, flat)
    np.maximum.at(seg_max, ids, flat)
    return SegmentFeatures(np.clip(means, seg_min, seg_max))


def uppool(features: SegmentFeatures, labels: SegmentLabels) -> np.ndarray:
    """Broadcast each segment's pooled vector back over its pixels.

    Returns an (h, w, c) array shaped like the source cube.
    """
    if features.m != labels.m:
        raise ValueError(f"features have {features.m} rows but labels have {labels.m} segments")
    return features.features[labels.label]

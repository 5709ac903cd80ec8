"""The guided reconstruction: attention over pooled superpixel features,
uppooling, error-adaptive convolution on the image, and their product.

The estimated anomaly map steers the convolution: each output pixel is a
weighted sum over the k^2 positions with the smallest map values inside
its n x n window, so pixels that looked anomalous in the previous
iteration are never used to rebuild their neighbourhood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffkit as dk
from .io import AnomalyMap, HsiCube
from .superpixel import SegmentLabels, pool

__all__ = [
    "AdaConvConfig",
    "ModelParams",
    "ParamTensors",
    "init_params",
    "wrap_params",
    "attention_stack",
    "window_indices",
    "adaconv_select",
    "adaconv_indices",
    "adaconv_apply",
    "model_forward",
    "anomaly_score",
]

ATTENTION_DEPTH = 2
ATTENTION_DIM = 64


@dataclass
class AdaConvConfig:
    """Window size n and kernel size k of the adaptive convolution (odd, k <= n)."""

    n: int = 9
    k: int = 3

    def __post_init__(self):
        if self.n < 1 or self.n % 2 == 0:
            raise ValueError(f"window size n must be odd and >= 1, got {self.n}")
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"kernel size k must be odd and >= 1, got {self.k}")
        if self.k > self.n:
            raise ValueError(f"kernel size k={self.k} must not exceed window size n={self.n}")


@dataclass
class AttentionLayer:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray


@dataclass
class ModelParams:
    """Everything the optimizer updates: attention weights plus the kernel."""

    layers: list[AttentionLayer]
    kernel: np.ndarray

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        if self.kernel.ndim != 2 or self.kernel.shape[0] != self.kernel.shape[1]:
            raise ValueError(f"kernel must be square, got shape {self.kernel.shape}")
        for name, a in self.named_arrays():
            if not np.isfinite(a).all():
                raise ValueError(f"parameter {name} contains non-finite values")

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name in ("wq", "wk", "wv", "wo"):
                out.append((f"layer{i}.{name}", getattr(layer, name)))
        out.append(("kernel", self.kernel))
        return out


@dataclass
class ParamTensors:
    """Graph-leaf view of the parameters for one forward/backward pass."""

    layers: list[tuple[dk.DiffTensor, dk.DiffTensor, dk.DiffTensor, dk.DiffTensor]]
    kernel: dk.DiffTensor

    def named_tensors(self) -> list[tuple[str, dk.DiffTensor]]:
        out = []
        for i, (wq, wk, wv, wo) in enumerate(self.layers):
            out.extend(
                [(f"layer{i}.wq", wq), (f"layer{i}.wk", wk), (f"layer{i}.wv", wv), (f"layer{i}.wo", wo)]
            )
        out.append(("kernel", self.kernel))
        return out


def init_params(c: int, d: int, L: int, k: int, seed: int) -> ModelParams:
    """Xavier-uniform attention weights; the kernel starts as a box filter (1/k^2)."""
    if min(c, d, L) < 1:
        raise ValueError("c, d and L must be positive")
    rng = np.random.default_rng(seed)
    a = math.sqrt(6.0 / (c + d))
    layers = []
    for _ in range(L):
        layers.append(
            AttentionLayer(
                wq=rng.uniform(-a, a, size=(c, d)),
                wk=rng.uniform(-a, a, size=(c, d)),
                wv=rng.uniform(-a, a, size=(c, d)),
                wo=rng.uniform(-a, a, size=(d, c)),
            )
        )
    kernel = np.full((k, k), 1.0 / (k * k))
    return ModelParams(layers=layers, kernel=kernel)


def wrap_params(params: ModelParams) -> ParamTensors:
    """Wrap parameter arrays as fresh graph leaves (zeroed gradients)."""
    layers = [
        (dk.DiffTensor(l.wq), dk.DiffTensor(l.wk), dk.DiffTensor(l.wv), dk.DiffTensor(l.wo))
        for l in params.layers
    ]
    return ParamTensors(layers=layers, kernel=dk.DiffTensor(params.kernel))


def _transpose_indices(rows: int, cols: int) -> np.ndarray:
    return np.arange(rows * cols).reshape(rows, cols).T


def attention_stack(v: dk.DiffTensor, layers) -> dk.DiffTensor:
    """Residual single-head self-attention over the m feature rows.

    Per layer: ``A = softmax((V Wq)(V Wk)^T / sqrt(d))`` and
    ``V <- V + (A (V Wv)) Wo``. ``layers`` is a sequence of
    (wq, wk, wv, wo) graph tensors, as produced by :func:`wrap_params`.
    """
    for wq, wk, wv, wo in layers:
        d = wq.shape[1]
        # Scaling the query instead of the m x m logit matrix keeps the
        # big-matrix node count down; the attention weights are identical.
        q = dk.scale(dk.matmul(v, wq), 1.0 / math.sqrt(d))
        key = dk.matmul(v, wk)
        key_t = dk.gather(key, _transpose_indices(key.shape[0], key.shape[1]))
        attn = dk.softmax_rows(dk.matmul(q, key_t))
        mixed = dk.matmul(attn, dk.matmul(v, wv))
        v = dk.elem_add(v, dk.matmul(mixed, wo))
    return v


def window_indices(x: int, y: int, n: int, h: int, w: int) -> list[tuple[int, int]]:
    """The n^2 coordinates of the window at (x, y), clamped into the image.

    Row-major order; border windows repeat clamped coordinates so the
    result always has exactly n^2 entries.
    """
    if not (0 <= x < h and 0 <= y < w):
        raise ValueError(f"({x}, {y}) out of bounds for {h}x{w}")
    half = (n - 1) // 2
    out = []
    for i in range(x - half, x + half + 1):
        ci = min(max(i, 0), h - 1)
        for j in range(y - half, y + half + 1):
            out.append((ci, min(max(j, 0), w - 1)))
    return out


def adaconv_select(mhat: np.ndarray, window, k: int) -> list[tuple[int, int]]:
    """Pick the k^2 window positions with the smallest map values.

    Ties break toward the earlier (row-major) window position; the chosen
    positions are returned in ascending window order so they pair stably
    with the kernel weights.
    """
    if k * k > len(window):
        raise ValueError(f"k^2 = {k * k} exceeds window size {len(window)}")
    mhat = np.asarray(mhat)
    vals = np.array([mhat[i, j] for i, j in window])
    order = np.argsort(vals, kind="stable")[: k * k]
    return [window[t] for t in np.sort(order)]


def adaconv_indices(mhat: np.ndarray, cfg: AdaConvConfig) -> np.ndarray:
    """Selected flat pixel indices for every pixel at once, shape (h*w, k^2).

    Vectorised equivalent of :func:`window_indices` + :func:`adaconv_select`
    over the whole image.
    """
    mhat = np.asarray(mhat, dtype=np.float64)
    h, w = mhat.shape
    n, k = cfg.n, cfg.k
    half = (n - 1) // 2

    offsets = np.arange(-half, half + 1)
    rows = np.clip(np.arange(h)[:, None] + offsets[None, :], 0, h - 1)  # (h, n)
    cols = np.clip(np.arange(w)[:, None] + offsets[None, :], 0, w - 1)  # (w, n)
    # Window flat indices per pixel, row-major within the window: (h, w, n*n).
    win = (rows[:, None, :, None] * w + cols[None, :, None, :]).reshape(h * w, n * n)

    vals = mhat.reshape(-1)[win]
    order = np.argsort(vals, axis=1, kind="stable")[:, : k * k]
    order.sort(axis=1)
    return np.take_along_axis(win, order, axis=1)


def _as_tensor(x) -> dk.DiffTensor:
    return x if isinstance(x, dk.DiffTensor) else dk.DiffTensor(np.asarray(x, dtype=np.float64))


def adaconv_apply(
    f, mhat: np.ndarray, cfg: AdaConvConfig, kernel, indices: np.ndarray | None = None
) -> dk.DiffTensor:
    """Adaptive convolution of the (h*w, c) feature rows ``f``.

    Every output pixel sums the k^2 selected rows weighted by the kernel
    (flattened row-major), with the same kernel applied to every band.
    The selection indices are constants; gradients flow to ``f`` and to
    ``kernel`` through gather / multiply / add only. ``indices`` may carry
    a precomputed :func:`adaconv_indices` result.
    """
    f = _as_tensor(f)
    kernel = _as_tensor(kernel)
    h, w = np.asarray(mhat).shape
    if f.values.ndim != 2 or f.shape[0] != h * w:
        raise ValueError(f"features must be (h*w, c) = ({h * w}, c), got {f.shape}")
    if kernel.values.size != cfg.k * cfg.k:
        raise ValueError(f"kernel has {kernel.values.size} entries, expected {cfg.k * cfg.k}")

    sel = adaconv_indices(mhat, cfg) if indices is None else indices  # (h*w, k^2)
    c = f.shape[1]
    band = np.arange(c)
    out = None
    for t in range(cfg.k * cfg.k):
        rows = dk.gather(f, sel[:, t][:, None] * c + band[None, :])
        term = dk.elem_mul(rows, dk.gather(kernel, np.asarray(t)))
        out = term if out is None else dk.elem_add(out, term)
    return out


def model_forward(
    x: np.ndarray,
    mhat: np.ndarray,
    labels: SegmentLabels,
    params: ParamTensors,
    cfg: AdaConvConfig,
    pooled: np.ndarray | None = None,
    conv_indices: np.ndarray | None = None,
) -> dk.DiffTensor:
    """One reconstruction pass; returns the (h*w, c) estimate as a graph node.

    Pipeline: pool the (h, w, c) image over ``labels``, run the attention
    stack, uppool back to pixels, run the adaptive convolution on the image
    itself, and take the elementwise product of the two branches. The
    pooled features and the convolution's selection indices only depend on
    constants, so callers looping over epochs may pass them precomputed.
    """
    mhat = np.asarray(mhat, dtype=np.float64)
    h, w, c = x.shape
    if mhat.shape != (h, w) or labels.label.shape != (h, w):
        raise ValueError("anomaly map and labels must match the cube's spatial dims")

    if pooled is None:
        pooled = pool(HsiCube(x), labels).features
    attended = attention_stack(dk.DiffTensor(pooled), params.layers)
    band = np.arange(c)
    upidx = labels.label.reshape(-1)[:, None] * c + band[None, :]
    uppooled = dk.gather(attended, upidx)

    conv = adaconv_apply(
        dk.DiffTensor(x.reshape(h * w, c)), mhat, cfg, params.kernel, indices=conv_indices
    )
    return dk.elem_mul(uppooled, conv)


def anomaly_score(xhat: np.ndarray, x: np.ndarray) -> AnomalyMap:
    """Per-pixel l2 norm of the reconstruction residual over bands."""
    xhat = np.asarray(xhat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if xhat.shape != x.shape:
        raise ValueError(f"shape mismatch: {xhat.shape} vs {x.shape}")
    if xhat.ndim != 3:
        raise ValueError("anomaly_score expects (h, w, c) arrays")
    return AnomalyMap(np.sqrt(((xhat - x) ** 2).sum(axis=2)))

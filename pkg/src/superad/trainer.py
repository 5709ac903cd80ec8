"""Training loop: forward, mining loss, backward, Adam step, map refresh.

Each epoch reconstructs the image guided by the previous epoch's anomaly
map, then rescores every pixel by its reconstruction residual. The whole
image is one sample; there is no batching and no early stopping. Runs are
bit-deterministic for a fixed (cube, config).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import diffkit as dk
from .io import AnomalyMap, GroundTruth, HsiCube, normalize_bands
from .metrics import auc as roc_auc
from .metrics import roc_curve
from .model import (
    ATTENTION_DEPTH,
    ATTENTION_DIM,
    AdaConvConfig,
    AttentionLayer,
    ModelParams,
    adaconv_indices,
    anomaly_score,
    init_params,
    model_forward,
    wrap_params,
)
from .obpm import ObpmConfig, l1_loss, l2_loss, obpm_loss
from .superpixel import SegmentLabels, pool, slic_segment

__all__ = [
    "TrainConfig",
    "EpochLog",
    "TrainedModel",
    "TrainResult",
    "AdamState",
    "adam_step",
    "train",
    "detect",
    "save_model",
    "load_model",
]

_MODEL_MAGIC = b"SADM"
_MODEL_VERSION = 1

LOSS_KINDS = ("obpm", "l1", "l2")
PERTURBATIONS = ("spp", "none")


@dataclass
class TrainConfig:
    epochs: int = 500
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    segments: int = 100
    adaconv: AdaConvConfig = field(default_factory=AdaConvConfig)
    obpm: ObpmConfig = field(default_factory=ObpmConfig)
    log_every: int = 1
    loss_kind: str = "obpm"
    perturbation: str = "spp"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.log_every < 1:
            raise ValueError("log_every must be at least 1")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.perturbation not in PERTURBATIONS:
            raise ValueError(
                f"perturbation must be one of {PERTURBATIONS}, got {self.perturbation!r}"
            )
        if self.segments < 1:
            raise ValueError("segments must be at least 1")


@dataclass
class EpochLog:
    epoch: int
    loss: float
    retained_fraction: float
    auc: float | None = None


@dataclass
class TrainedModel:
    """Parameters plus the guidance map that steered the final forward pass.

    ``detect`` re-runs that pass, so its output on the training cube equals
    the final training map exactly.
    """

    params: ModelParams
    config: TrainConfig
    guidance: np.ndarray
    cube_shape: tuple


@dataclass
class TrainResult:
    anomaly_map: AnomalyMap
    model: TrainedModel
    logs: list
    utilization: np.ndarray
    labels: SegmentLabels | None


class AdamState:
    """First/second moment accumulators per named parameter."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState | None,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and the state."""
    if state is None:
        state = AdamState()
    state.t += 1
    t = state.t
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return out, state


def _identity_labels(h: int, w: int) -> SegmentLabels:
    return SegmentLabels(np.arange(h * w, dtype=np.int64).reshape(h, w), h * w)


def _params_to_dict(params: ModelParams) -> dict[str, np.ndarray]:
    return dict(params.named_arrays())

def _params_from_dict(arrays: dict[str, np.ndarray], depth: int) -> ModelParams:
    layers = [
        AttentionLayer(
            wq=arrays[f"layer{i}.wq"],
            wk=arrays[f"layer{i}.wk"],
            wv=arrays[f"layer{i}.wv"],
            wo=arrays[f"layer{i}.wo"],
        )
        for i in range(depth)
    ]
    return ModelParams(layers=layers, kernel=arrays["kernel"])


def train(
    cube: HsiCube,
    config: TrainConfig,
    gt: GroundTruth | None = None,
    initial_map: AnomalyMap | None = None,
) -> TrainResult:
    """Run the full self-supervised loop and return the final map and model.

    Bands are min-max normalised, superpixels are computed once and frozen,
    and the guidance map starts at zero (a uniform map makes the first
    convolution selection purely tie-broken) unless ``initial_map`` is
    given. When ``gt`` is supplied each logged epoch also records AUC;
    ground truth never influences the optimisation. ``utilization`` in the
    result counts, per pixel, how many times the adaptive convolution
    gathered it, accumulated over all epochs.
    """
    x = normalize_bands(cube).data
    h, w, c = x.shape

    slic_labels = None
    if config.perturbation == "spp" or config.loss_kind == "obpm":
        slic_labels = slic_segment(HsiCube(x), config.segments)
    model_labels = slic_labels if config.perturbation == "spp" else _identity_labels(h, w)

    params = init_params(c, ATTENTION_DIM, ATTENTION_DEPTH, config.adaconv.k, config.seed)
    pooled = pool(HsiCube(x), model_labels).features
    x_flat = x.reshape(h * w, c)

    if initial_map is not None:
        if initial_map.scores.shape != (h, w):
            raise ValueError("initial map dimensions do not match the cube")
        guidance = initial_map.scores.copy()
    else:
        guidance = np.zeros((h, w))

    state: AdamState | None = None
    logs: list[EpochLog] = []
    utilization = np.zeros(h * w, dtype=np.int64)
    prev_guidance = guidance
    used_params = params

    for epoch in range(1, config.epochs + 1):
        # The persisted model must hold the parameters that produced the
        # final map, i.e. the state before this epoch's update.
        used_params = params
        wrapped = wrap_params(params)
        sel = adaconv_indices(guidance, config.adaconv)
        utilization += np.bincount(sel.reshape(-1), minlength=h * w)
        xhat = model_forward(
            x, guidance, model_labels, wrapped, config.adaconv, pooled=pooled, conv_indices=sel
        )

        retained = 1.0
        if config.loss_kind == "obpm":
            loss, report = obpm_loss(xhat, x_flat, slic_labels, config.obpm)
            retained = report.retained_fraction()
        elif config.loss_kind == "l1":
            loss = l1_loss(xhat, x_flat)
        else:
            loss = l2_loss(xhat, x_flat)

        loss_value = float(loss.values)
        if not np.isfinite(loss_value):
            raise RuntimeError(f"non-finite loss {loss_value} at epoch {epoch}")

        dk.backward(loss)
        grads = {name: t.grad for name, t in wrapped.named_tensors()}
        arrays, state = adam_step(
            _params_to_dict(params),
            grads,
            state,
            config.learning_rate,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        )
        params = _params_from_dict(arrays, ATTENTION_DEPTH)

        amap = anomaly_score(xhat.values.reshape(h, w, c), x)
        prev_guidance = guidance
        guidance = amap.scores

        if epoch % config.log_every == 0 or epoch == config.epochs:
            entry = EpochLog(epoch=epoch, loss=loss_value, retained_fraction=retained)
            if gt is not None:
                entry.auc = roc_auc(roc_curve(amap, gt))
            logs.append(entry)

    model = TrainedModel(
        params=used_params, config=config, guidance=prev_guidance, cube_shape=(h, w, c)
    )
    return TrainResult(
        anomaly_map=AnomalyMap(guidance),
        model=model,
        logs=logs,
        utilization=utilization.reshape(h, w),
        labels=slic_labels,
    )


def detect(cube: HsiCube, model: TrainedModel) -> AnomalyMap:
    """Score a cube with a trained model: one guided forward pass plus the
    residual norm. On the training cube this reproduces the final training
    map exactly."""
    if cube.data.shape != tuple(model.cube_shape):
        raise ValueError(
            f"cube shape {cube.data.shape} does not match trained shape {tuple(model.cube_shape)}"
        )
    x = normalize_bands(cube).data
    h, w, c = x.shape
    config = model.config
    if config.perturbation == "spp":
        labels = slic_segment(HsiCube(x), config.segments)
    else:
        labels = _identity_labels(h, w)
    wrapped = wrap_params(model.params)
    xhat = model_forward(x, model.guidance, labels, wrapped, config.adaconv)
    return anomaly_score(xhat.values.reshape(h, w, c), x)


def _config_header(model: TrainedModel) -> dict:
    cfg = model.config
    return {
        "cube_shape": list(model.cube_shape),
        "depth": ATTENTION_DEPTH,
        "dim": ATTENTION_DIM,
        "epochs": cfg.epochs,
        "learning_rate": cfg.learning_rate,
        "adam_beta1": cfg.adam_beta1,
        "adam_beta2": cfg.adam_beta2,
        "adam_eps": cfg.adam_eps,
        "seed": cfg.seed,
        "segments": cfg.segments,
        "window": cfg.adaconv.n,
        "kernel": cfg.adaconv.k,
        "alpha": cfg.obpm.alpha,
        "beta": cfg.obpm.beta,
        "log_every": cfg.log_every,
        "loss_kind": cfg.loss_kind,
        "perturbation": cfg.perturbation,
    }


def save_model(model: TrainedModel, path) -> None:
    """Write a model file.

    Layout: 4 magic bytes ``SADM``; little-endian uint32 version (1);
    uint32 JSON header length; the UTF-8 JSON header (config and shapes);
    then the tensors as little-endian float64 in fixed order: per layer
    wq, wk, wv, wo (row-major), the convolution kernel, and the final
    guidance map.
    """
    header = json.dumps(_config_header(model), sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MODEL_MAGIC)
        f.write(struct.pack("<II", _MODEL_VERSION, len(header)))
        f.write(header)
        for _, a in model.params.named_arrays():
            f.write(a.astype("<f8").tobytes())
        f.write(model.guidance.astype("<f8").tobytes())


def load_model(path) -> TrainedModel:
    """Read a model file written by :func:`save_model`."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic {blob[:4]!r})")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != _MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    h, w, c = header["cube_shape"]
    depth, dim, k = header["depth"], header["dim"], header["kernel"]

    config = TrainConfig(
        epochs=header["epochs"],
        learning_rate=header["learning_rate"],
        adam_beta1=header["adam_beta1"],
        adam_beta2=header["adam_beta2"],
        adam_eps=header["adam_eps"],
        seed=header["seed"],
        segments=header["segments"],
        adaconv=AdaConvConfig(n=header["window"], k=k),
        obpm=ObpmConfig(alpha=header["alpha"], beta=header["beta"]),
        log_every=header["log_every"],
        loss_kind=header["loss_kind"],
        perturbation=header["perturbation"],
    )

    offset = 12 + header_len
    def take(shape):
        nonlocal offset
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += n * 8
        return arr.astype(np.float64)

    layers = []
    for _ in range(depth):
        layers.append(
            AttentionLayer(wq=take((c, dim)), wk=take((c, dim)), wv=take((c, dim)), wo=take((dim, c)))
        )
    kernel = take((k, k))
    guidance = take((h, w))
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes after tensors ({len(blob) - offset})")
    return TrainedModel(
        params=ModelParams(layers=layers, kernel=kernel),
        config=config,
        guidance=guidance,
        cube_shape=(h, w, c),
    )

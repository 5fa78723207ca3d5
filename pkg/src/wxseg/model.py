"""Per-point MLP classifier with hand-rolled backprop and checkpointing.

The network scores each point independently from its 7-dim neighborhood
feature vector: input standardization (statistics frozen when the base
model is trained), ReLU hidden layers, and a linear classification head
that can be widened in place for novel classes while keeping the base
outputs bit-exact. Parameters are 64-bit throughout; desk-scale speed
does not justify losing the exact finite-difference checks.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .synth import ClassSchema

CKPT_MAGIC = b"WXSGCKPT"
CKPT_VERSION = 1


@dataclass
class Model:
    weights: list  # layer i: (fan_in, fan_out) float64
    biases: list  # layer i: (fan_out,) float64
    norm_mean: np.ndarray
    norm_std: np.ndarray
    feat_radius: float
    feat_knn: int

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def layer_shapes(self):
        return [w.shape for w in self.weights]

    def copy(self) -> "Model":
        return Model(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            norm_mean=self.norm_mean.copy(),
            norm_std=self.norm_std.copy(),
            feat_radius=self.feat_radius,
            feat_knn=self.feat_knn,
        )


def init_model(
    in_dim: int,
    hidden_dims,
    out_classes: int,
    seed: int,
    feat_radius: float = 2.0,
    feat_knn: int = 3,
    norm_mean=None,
    norm_std=None,
) -> Model:
    """Seeded uniform fan-in initialization, deterministic per seed."""
    rng = np.random.default_rng(int(seed))
    dims = [in_dim] + list(hidden_dims) + [out_classes]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, fan_out))
    return Model(
        weights=weights,
        biases=biases,
        norm_mean=np.zeros(in_dim) if norm_mean is None else np.asarray(norm_mean, float),
        norm_std=np.ones(in_dim) if norm_std is None else np.asarray(norm_std, float),
        feat_radius=float(feat_radius),
        feat_knn=int(feat_knn),
    )


@dataclass
class ForwardCache:
    acts: list  # inputs to each layer, normalized input first
    zs: list  # pre-activations of hidden layers
    layer_shapes: list


def forward(model: Model, feats: np.ndarray):
    """Return (logits, cache). Rows are independent: the network is
    applied per point."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != model.in_dim:
        raise ValueError(f"features must be (N, {model.in_dim}), got {feats.shape}")
    x = (feats - model.norm_mean) / model.norm_std
    acts = [x]
    zs = []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = x @ w + b
        if i < last:
            zs.append(z)
            x = np.maximum(z, 0.0)
            acts.append(x)
        else:
            x = z
    return x, ForwardCache(acts=acts, zs=zs, layer_shapes=model.layer_shapes)


def backward(model: Model, cache: ForwardCache, grad_logits: np.ndarray):
    """Exact reverse-mode gradients for every weight and bias.

    Returns a list of (dW, db) per layer in model order.
    """
    if cache.layer_shapes != model.layer_shapes:
        raise ValueError("cache does not belong to this model")
    n = cache.acts[0].shape[0]
    if grad_logits.shape != (n, model.out_classes):
        raise ValueError(
            f"grad_logits must be ({n}, {model.out_classes}), got {grad_logits.shape}"
        )
    grads = [None] * len(model.weights)
    delta = grad_logits
    for layer in range(len(model.weights) - 1, -1, -1):
        a_prev = cache.acts[layer]
        grads[layer] = (a_prev.T @ delta, delta.sum(axis=0))
        if layer > 0:
            delta = (delta @ model.weights[layer].T) * (cache.zs[layer - 1] > 0.0)
    return grads


@dataclass
class OptimizerState:
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    velocities: list | None = field(default=None)


def sgd_step(model: Model, grads, opt: OptimizerState) -> None:
    """v <- momentum*v + (grad + wd*w); w <- w - lr*v. In place."""
    if opt.velocities is None:
        opt.velocities = [
            (np.zeros_like(w), np.zeros_like(b))
            for w, b in zip(model.weights, model.biases)
        ]
    for i, (gw, gb) in enumerate(grads):
        vw, vb = opt.velocities[i]
        vw *= opt.momentum
        vw += gw + opt.weight_decay * model.weights[i]
        vb *= opt.momentum
        vb += gb + opt.weight_decay * model.biases[i]
        model.weights[i] -= opt.lr * vw
        model.biases[i] -= opt.lr * vb


NEW_HEAD_SCALE = 1e-2  # keeps fresh novel logits tiny at first


def extend_classifier(model: Model, extra: int, seed: int) -> Model:
    """Widen the classification head by `extra` outputs. Existing outputs
    are copied bit-exactly; new columns get small seeded-random weights
    and zero bias."""
    if extra < 1:
        raise ValueError("extra must be >= 1")
    rng = np.random.default_rng(int(seed))
    out = model.copy()
    w = out.weights[-1]
    new_cols = rng.uniform(-NEW_HEAD_SCALE, NEW_HEAD_SCALE, (w.shape[0], extra))
    out.weights[-1] = np.hstack([w, new_cols])
    out.biases[-1] = np.concatenate([out.biases[-1], np.zeros(extra)])
    return out


@dataclass
class Checkpoint:
    model: Model
    epoch: int
    schema: ClassSchema
    config_hash: str


def save_checkpoint(
    model: Model, path, epoch: int, schema: ClassSchema, config_hash: str = ""
) -> None:
    """Binary layout: magic, version u32, length-prefixed JSON header,
    then norm stats and parameters as little-endian float64 in layer
    order (W then b per layer). Round-trips bit-exactly."""
    header = {
        "epoch": int(epoch),
        "config_hash": str(config_hash),
        "schema": schema.to_dict(),
        "in_dim": int(model.in_dim),
        "layer_shapes": [[int(a), int(b)] for a, b in model.layer_shapes],
        "feat_radius": float(model.feat_radius),
        "feat_knn": int(model.feat_knn),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blobs = [CKPT_MAGIC, np.uint32(CKPT_VERSION).tobytes(), np.uint32(len(hbytes)).tobytes(), hbytes]
    blobs.append(model.norm_mean.astype("<f8").tobytes())
    blobs.append(model.norm_std.astype("<f8").tobytes())
    for w, b in zip(model.weights, model.biases):
        blobs.append(np.ascontiguousarray(w).astype("<f8").tobytes())
        blobs.append(b.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(blobs))


def load_checkpoint(path, expected_config_hash: str | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(CKPT_MAGIC) + 8 or raw[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    off = len(CKPT_MAGIC)
    version = int(np.frombuffer(raw[off : off + 4], dtype="<u4")[0])
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off += 4
    hlen = int(np.frombuffer(raw[off : off + 4], dtype="<u4")[0])
    off += 4
    if off + hlen > len(raw):
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    off += hlen

    def take(count):
        nonlocal off
        nbytes = count * 8
        if off + nbytes > len(raw):
            raise FormatError(f"{path}: truncated parameter block")
        arr = np.frombuffer(raw[off : off + nbytes], dtype="<f8").astype(np.float64)
        off += nbytes
        return arr

    in_dim = int(header["in_dim"])
    norm_mean = take(in_dim)
    norm_std = take(in_dim)
    weights, biases = [], []
    for fan_in, fan_out in header["layer_shapes"]:
        weights.append(take(fan_in * fan_out).reshape(fan_in, fan_out))
        biases.append(take(fan_out))
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    if expected_config_hash is not None and header["config_hash"] != expected_config_hash:
        warnings.warn(
            f"{path}: checkpoint config hash {header['config_hash'][:12]} does not "
            f"match expected {expected_config_hash[:12]}",
            stacklevel=2,
        )
    model = Model(
        weights=weights,
        biases=biases,
        norm_mean=norm_mean,
        norm_std=norm_std,
        feat_radius=float(header["feat_radius"]),
        feat_knn=int(header["feat_knn"]),
    )
    return Checkpoint(
        model=model,
        epoch=int(header["epoch"]),
        schema=ClassSchema.from_dict(header["schema"]),
        config_hash=str(header["config_hash"]),
    )

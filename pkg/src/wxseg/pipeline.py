"""Orchestration of the three training stages.

Stage zero trains a base-class model on good-weather data and freezes the
feature normalization statistics. Stage one widens the head for the novel
classes and fine-tunes on the K shots, adding a pseudo-label
self-training term on unlabeled adverse scans once the selected best
model clears a pseudo-validation mIoU threshold. Stage two restarts from
the base model and balances shot fine-tuning against base-class
distillation and polar-mixed good/adverse scans, restoring source-domain
performance while keeping adverse performance.

Model selection evaluates mIoU on a frozen pseudo-validation set every
model_selection_every epochs and keeps the strictly best checkpoint.
All loops are deterministic per (config, seed): reruns are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .augment import AugmentationParams, build_pseudoval_stage1, build_pseudoval_stage2, polar_mix
from .errors import DataError
from .geom import build_grid_index, neighbor_features
from .losses import ce_loss, kd_loss, lovasz_softmax, sce_loss, triplet_reg
from .metrics import accumulate, iou_per_class, miou, new_confusion
from .model import (
    Model,
    OptimizerState,
    backward,
    extend_classifier,
    forward,
    init_model,
    sgd_step,
)
from .pcio import LabeledScan, PointCloud
from .synth import ClassSchema
from .util import config_digest, derive_seed, fmt_float

# any gamma above 1 can never be reached by an mIoU, so this disables the
# self-training term for the whole run (the FSS-only ablation)
UNREACHABLE_GAMMA = 1.01

FSS_LOSS_MODES = ("ce", "ce+lovasz", "ce+triplet")

# sub-stream tags for seed derivation, one per consumer
_S0_INIT, _S0_SHUFFLE = 100, 101
_S1_PSEUDOVAL, _S1_EXTEND, _S1_LOOP = 110, 111, 112
_S2_PSEUDOVAL, _S2_EXTEND, _S2_LOOP = 120, 121, 122


@dataclass
class TrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    omega0: float = 0.5
    omega1: float = 0.5
    omega2: float = 0.5
    gamma: float = 0.75
    model_selection_every: int = 50
    pseudoval_size: int = 500
    epochs_stage0: int = 40
    epochs_stage1: int = 200
    epochs_stage2: int = 300
    seed: int = 0
    hidden_dims: tuple = (64, 64)
    feat_radius: float = 2.0
    feat_knn: int = 3
    ssl_batch: int = 4
    sce_alpha: float = 1.0
    sce_beta: float = 1.0
    sce_clip_log: float = -6.0
    kd_temperature: float = 1.0
    fss_loss: str = "ce"
    triplet_margin: float = 1.0
    triplet_max_anchors: int = 50
    miou_undefined_as_zero: bool = False
    augment: AugmentationParams = field(default_factory=AugmentationParams)

    def __post_init__(self):
        if self.fss_loss not in FSS_LOSS_MODES:
            raise DataError(f"fss_loss must be one of {FSS_LOSS_MODES}")
        if not 0.0 <= self.gamma:
            raise DataError("gamma must be >= 0")
        if self.model_selection_every < 1 or self.pseudoval_size < 1:
            raise DataError("model_selection_every and pseudoval_size must be >= 1")
        if self.ssl_batch < 1:
            raise DataError("ssl_batch must be >= 1")
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)

    def to_dict(self) -> dict:
        return {
            "lr": float(self.lr),
            "momentum": float(self.momentum),
            "weight_decay": float(self.weight_decay),
            "omega0": float(self.omega0),
            "omega1": float(self.omega1),
            "omega2": float(self.omega2),
            "gamma": float(self.gamma),
            "model_selection_every": int(self.model_selection_every),
            "pseudoval_size": int(self.pseudoval_size),
            "epochs_stage0": int(self.epochs_stage0),
            "epochs_stage1": int(self.epochs_stage1),
            "epochs_stage2": int(self.epochs_stage2),
            "seed": int(self.seed),
            "hidden_dims": [int(h) for h in self.hidden_dims],
            "feat_radius": float(self.feat_radius),
            "feat_knn": int(self.feat_knn),
            "ssl_batch": int(self.ssl_batch),
            "sce_alpha": float(self.sce_alpha),
            "sce_beta": float(self.sce_beta),
            "sce_clip_log": float(self.sce_clip_log),
            "kd_temperature": float(self.kd_temperature),
            "fss_loss": self.fss_loss,
            "triplet_margin": float(self.triplet_margin),
            "triplet_max_anchors": int(self.triplet_max_anchors),
            "miou_undefined_as_zero": bool(self.miou_undefined_as_zero),
            "augment": self.augment.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "augment" in d:
            d["augment"] = AugmentationParams.from_dict(d["augment"])
        if "hidden_dims" in d:
            d["hidden_dims"] = tuple(d["hidden_dims"])
        return cls(**d)

    @property
    def config_hash(self) -> str:
        return config_digest(self.to_dict())


def fss_only_config(cfg: TrainConfig) -> TrainConfig:
    """The stage-one ablation: make the warmup gate unreachable."""
    return replace(cfg, gamma=UNREACHABLE_GAMMA)


@dataclass
class BestModelState:
    model: Model | None = None
    miou: float | None = None
    epoch: int = -1


def format_record(rec: dict) -> str:
    return (
        f"epoch={rec['epoch']} "
        f"miou_all={fmt_float(rec['miou_all'])} "
        f"miou_base={fmt_float(rec['miou_base'])} "
        f"miou_novel={fmt_float(rec['miou_novel'])} "
        f"best={int(rec['best_flag'])}"
    )


def scan_features(cloud: PointCloud, radius: float, k: int) -> np.ndarray:
    grid = build_grid_index(cloud, radius)
    return neighbor_features(cloud, grid, radius, k)


def _precompute(scans, radius, k):
    return [(scan_features(s.cloud, radius, k), s.labels) for s in scans]


def generate_pseudo_labels(model: Model, cloud: PointCloud) -> np.ndarray:
    """Per-point argmax of the model's logits; ties go to the lower id."""
    feats = scan_features(cloud, model.feat_radius, model.feat_knn)
    logits, _ = forward(model, feats)
    return logits.argmax(axis=1).astype(np.int64)


def _ssl_targets(model: Model, feats: np.ndarray) -> np.ndarray:
    # separated out so tests can probe which model produced the targets
    logits, _ = forward(model, feats)
    return logits.argmax(axis=1).astype(np.int64)


def _eval_cached(model: Model, cached, n_classes: int, schema: ClassSchema, zero: bool = False):
    cm = new_confusion(n_classes)
    for feats, labels in cached:
        logits, _ = forward(model, feats)
        accumulate(cm, logits.argmax(axis=1), labels)
    return {
        "cm": cm,
        "iou": iou_per_class(cm),
        "miou_all": miou(cm, undefined_as_zero=zero),
        "miou_base": miou(cm, schema.base_ids, undefined_as_zero=zero),
        "miou_novel": miou(cm, schema.novel_ids, undefined_as_zero=zero),
    }


def evaluate(model: Model, scans, schema: ClassSchema, undefined_as_zero: bool = False):
    """Per-class IoU and mIoU (all / base / novel) over labeled scans,
    using the model's own frozen featurization and normalization."""
    if not scans:
        raise DataError("cannot evaluate on an empty scan list")
    for scan in scans:
        if scan.labels.size and scan.labels.max() >= schema.n_classes:
            raise DataError("scan labels exceed the schema class count")
    cached = _precompute(scans, model.feat_radius, model.feat_knn)
    return _eval_cached(model, cached, schema.n_classes, schema, undefined_as_zero)


def select_best(model: Model, pseudoval, state: BestModelState, schema: ClassSchema, epoch: int = 0) -> BestModelState:
    """Install the model iff its all-class pseudo-validation mIoU is
    strictly greater than the stored best; ties keep the earlier model."""
    cached = _precompute(pseudoval.scans, model.feat_radius, model.feat_knn)
    res = _eval_cached(model, cached, schema.n_classes, schema)
    _maybe_install(state, model, res["miou_all"], epoch)
    return state


def _maybe_install(state: BestModelState, model: Model, miou_all, epoch: int) -> bool:
    val = 0.0 if miou_all is None else float(miou_all)
    if state.model is None or val > state.miou:
        state.model = model.copy()
        state.miou = val
        state.epoch = epoch
        return True
    return False


def _fss_grad(logits, labels, cfg: TrainConfig, rng):
    """Configured few-shot loss on one scan: CE plus the optional
    Lovasz-softmax or triplet term, as the chosen baseline dictates."""
    out = ce_loss(logits, labels)
    value, grad = out.value, out.grad
    if cfg.fss_loss == "ce+lovasz":
        lo = lovasz_softmax(logits, labels)
        value += lo.value
        grad = grad + lo.grad
    elif cfg.fss_loss == "ce+triplet":
        tr = triplet_reg(
            logits,
            labels,
            margin=cfg.triplet_margin,
            max_anchors=cfg.triplet_max_anchors,
            seed=int(rng.integers(2**31)),
        )
        value += tr.value
        grad = grad + tr.grad
    return value, grad


def _acc_grads(total, grads, scale):
    if total is None:
        return [(gw * scale, gb * scale) for gw, gb in grads]
    return [
        (tw + gw * scale, tb + gb * scale)
        for (tw, tb), (gw, gb) in zip(total, grads)
    ]


def _validate_labels(scans, n_classes, what):
    for i, scan in enumerate(scans):
        if scan.labels.size and scan.labels.max() >= n_classes:
            raise DataError(f"{what} scan {i} has labels outside [0, {n_classes})")


def train_stage0(source, cfg: TrainConfig, schema: ClassSchema) -> Model:
    """Fully supervised base training on good-weather scans.

    One SGD step per scan, shuffled each epoch; feature normalization
    statistics are frozen from the source pool and carried by the model
    from here on.
    """
    if not source:
        raise DataError("source pool is empty")
    novel = set(int(v) for v in schema.novel_ids)
    for i, scan in enumerate(source):
        if novel & set(np.unique(scan.labels).tolist()):
            raise DataError(f"source scan {i} contains novel-class labels")
    _validate_labels(source, schema.n_base, "source")

    cached = _precompute(source, cfg.feat_radius, cfg.feat_knn)
    allfeat = np.concatenate([f for f, _ in cached], axis=0)
    norm_mean = allfeat.mean(axis=0)
    norm_std = np.maximum(allfeat.std(axis=0), 1e-8)

    model = init_model(
        allfeat.shape[1],
        cfg.hidden_dims,
        schema.n_base,
        derive_seed(cfg.seed, _S0_INIT),
        feat_radius=cfg.feat_radius,
        feat_knn=cfg.feat_knn,
        norm_mean=norm_mean,
        norm_std=norm_std,
    )
    opt = OptimizerState(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(derive_seed(cfg.seed, _S0_SHUFFLE))
    for _ in range(cfg.epochs_stage0):
        for idx in rng.permutation(len(cached)):
            feats, labels = cached[idx]
            logits, cache = forward(model, feats)
            _, grad_logits = _fss_grad(logits, labels, cfg, rng)
            sgd_step(model, backward(model, cache, grad_logits), opt)
    return model


def train_stage1(phi0: Model, shots, unlabeled, cfg: TrainConfig, schema: ClassSchema):
    """Few-shot fine-tuning on the K shots with warmup-gated
    pseudo-label self-training on unlabeled adverse scans.

    The head is widened for the novel classes and initialized from the
    stage-zero model. Every model_selection_every epochs the candidate is
    scored on a frozen pseudo-validation set built from the augmented
    shots; the strictly best model is kept and is also the pseudo-label
    source. The self-training term (symmetric cross-entropy, weight
    omega0) stays off until the best model's pseudo-validation mIoU
    reaches gamma. Returns (BestModelState, eval records).
    """
    if not shots:
        raise DataError("shots must be non-empty")
    _validate_labels(shots, schema.n_classes, "shot")
    novel_ids = schema.novel_ids
    pv = build_pseudoval_stage1(
        shots, cfg.pseudoval_size, cfg.augment, derive_seed(cfg.seed, _S1_PSEUDOVAL), novel_ids
    )
    pv_cached = _precompute(pv.scans, cfg.feat_radius, cfg.feat_knn)
    shot_cached = _precompute(shots, cfg.feat_radius, cfg.feat_knn)
    ul_feats: dict = {}

    model = extend_classifier(phi0, schema.n_novel, derive_seed(cfg.seed, _S1_EXTEND))
    opt = OptimizerState(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(derive_seed(cfg.seed, _S1_LOOP))
    state = BestModelState()
    records = []

    def run_selection(epoch):
        res = _eval_cached(model, pv_cached, schema.n_classes, schema, cfg.miou_undefined_as_zero)
        installed = _maybe_install(state, model, res["miou_all"], epoch)
        records.append(
            {
                "epoch": epoch,
                "miou_all": 0.0 if res["miou_all"] is None else res["miou_all"],
                "miou_base": 0.0 if res["miou_base"] is None else res["miou_base"],
                "miou_novel": 0.0 if res["miou_novel"] is None else res["miou_novel"],
                "best_flag": installed,
            }
        )

    run_selection(0)
    k = len(shot_cached)
    for epoch in range(1, cfg.epochs_stage1 + 1):
        total = None
        for feats, labels in shot_cached:
            logits, cache = forward(model, feats)
            _, grad_logits = _fss_grad(logits, labels, cfg, rng)
            total = _acc_grads(total, backward(model, cache, grad_logits), 1.0 / k)
        gate_open = state.miou is not None and state.miou >= cfg.gamma
        if gate_open and cfg.omega0 > 0.0 and unlabeled:
            kk = min(cfg.ssl_batch, len(unlabeled))
            picks = rng.choice(len(unlabeled), kk, replace=False)
            for u in picks:
                u = int(u)
                if u not in ul_feats:
                    ul_feats[u] = scan_features(unlabeled[u], cfg.feat_radius, cfg.feat_knn)
                feats = ul_feats[u]
                targets = _ssl_targets(state.model, feats)
                logits, cache = forward(model, feats)
                out = sce_loss(
                    logits, targets, cfg.sce_alpha, cfg.sce_beta, cfg.sce_clip_log
                )
                total = _acc_grads(total, backward(model, cache, out.grad), cfg.omega0 / kk)
        sgd_step(model, total, opt)
        if epoch % cfg.model_selection_every == 0:
            run_selection(epoch)
    return state, records


def train_stage2(
    phi0: Model, phi1_best: Model, shots, unlabeled, source, cfg: TrainConfig, schema: ClassSchema
):
    """Joint training for good and adverse weather.

    Restarts from the stage-zero model (novel head freshly widened), and
    each epoch combines: the few-shot loss on the shots, base-class
    knowledge distillation against the frozen stage-zero model (weight
    omega1), and a polar-mix term (weight omega2) where freshly drawn
    unlabeled scans, pseudo-labeled by the frozen stage-one best model,
    are sector-mixed with labeled source scans and scored with symmetric
    cross-entropy plus distillation. Returns (BestModelState, records).
    """
    if not shots or not source:
        raise DataError("shots and source must be non-empty")
    _validate_labels(shots, schema.n_classes, "shot")
    novel_ids = schema.novel_ids
    pv = build_pseudoval_stage2(
        shots, source, cfg.pseudoval_size, cfg.augment, derive_seed(cfg.seed, _S2_PSEUDOVAL), novel_ids
    )
    pv_cached = _precompute(pv.scans, cfg.feat_radius, cfg.feat_knn)
    shot_cached = _precompute(shots, cfg.feat_radius, cfg.feat_knn)

    model = extend_classifier(phi0, schema.n_novel, derive_seed(cfg.seed, _S2_EXTEND))
    base_ids = schema.base_ids
    # the teacher is frozen, so its logits per shot never change
    teacher_shot = [forward(phi0, feats)[0] for feats, _ in shot_cached]
    # the stage-one best model is frozen too: pseudo-labels are cached per scan
    ul_cache: dict = {}

    def pseudo_labeled(u: int) -> LabeledScan:
        if u not in ul_cache:
            feats = scan_features(unlabeled[u], cfg.feat_radius, cfg.feat_knn)
            ul_cache[u] = LabeledScan(
                cloud=unlabeled[u], labels=_ssl_targets(phi1_best, feats)
            )
        return ul_cache[u]

    opt = OptimizerState(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(derive_seed(cfg.seed, _S2_LOOP))
    state = BestModelState()
    records = []

    def run_selection(epoch):
        res = _eval_cached(model, pv_cached, schema.n_classes, schema, cfg.miou_undefined_as_zero)
        installed = _maybe_install(state, model, res["miou_all"], epoch)
        records.append(
            {
                "epoch": epoch,
                "miou_all": 0.0 if res["miou_all"] is None else res["miou_all"],
                "miou_base": 0.0 if res["miou_base"] is None else res["miou_base"],
                "miou_novel": 0.0 if res["miou_novel"] is None else res["miou_novel"],
                "best_flag": installed,
            }
        )

    run_selection(0)
    k = len(shot_cached)
    for epoch in range(1, cfg.epochs_stage2 + 1):
        total = None
        for i, (feats, labels) in enumerate(shot_cached):
            logits, cache = forward(model, feats)
            _, grad_logits = _fss_grad(logits, labels, cfg, rng)
            if cfg.omega1 > 0.0:
                kd = kd_loss(logits, teacher_shot[i], base_ids, cfg.kd_temperature)
                grad_logits = grad_logits + cfg.omega1 * kd.grad
            total = _acc_grads(total, backward(model, cache, grad_logits), 1.0 / k)
        if cfg.omega2 > 0.0 and unlabeled:
            kk = min(cfg.ssl_batch, len(unlabeled), len(source))
            u_picks = rng.choice(len(unlabeled), kk, replace=False)
            s_picks = rng.choice(len(source), kk, replace=False)
            for u, s in zip(u_picks, s_picks):
                theta = rng.uniform(0.0, 2.0 * np.pi)
                while theta == 0.0:
                    theta = rng.uniform(0.0, 2.0 * np.pi)
                start = rng.uniform(0.0, 2.0 * np.pi)
                mixed = polar_mix(pseudo_labeled(int(u)), source[int(s)], theta, start)
                feats = scan_features(mixed.cloud, cfg.feat_radius, cfg.feat_knn)
                logits, cache = forward(model, feats)
                teacher = forward(phi0, feats)[0]
                out = sce_loss(
                    logits, mixed.labels, cfg.sce_alpha, cfg.sce_beta, cfg.sce_clip_log
                )
                kd = kd_loss(logits, teacher, base_ids, cfg.kd_temperature)
                grad_logits = out.grad + kd.grad
                total = _acc_grads(total, backward(model, cache, grad_logits), cfg.omega2 / kk)
        sgd_step(model, total, opt)
        if epoch % cfg.model_selection_every == 0:
            run_selection(epoch)
    return state, records

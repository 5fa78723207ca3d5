"""Training objectives with analytic gradients.

Every loss returns its scalar value together with the exact gradient of
that value with respect to the differentiated input (logits for the
classification losses, the embedding matrix for the triplet term), so the
training loop never needs autodiff. All gradients are checked against
central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LossOutput:
    value: float
    grad: np.ndarray


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; rows sum to 1 within 1e-12."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return labels.astype(np.intp)


def ce_loss(logits: np.ndarray, labels: np.ndarray) -> LossOutput:
    """Mean cross-entropy; grad = (softmax - onehot) / N."""
    n, c = logits.shape
    labels = _check_labels(labels, c)
    logp = _log_softmax(logits)
    rows = np.arange(n)
    value = float(-logp[rows, labels].mean())
    grad = softmax(logits)
    grad[rows, labels] -= 1.0
    grad /= n
    return LossOutput(value=value, grad=grad)


def sce_loss(
    logits: np.ndarray,
    labels: np.ndarray,
    alpha: float = 1.0,
    beta: float = 1.0,
    clip_log: float = -6.0,
) -> LossOutput:
    """Symmetric cross-entropy: alpha * CE(y, p) + beta * RCE(p, y).

    RCE is the reverse term -sum_k p_k * log(onehot_k) with log 0 clipped
    to clip_log, which collapses to -clip_log * (1 - p_y) per point.
    Robust to noisy targets, so it carries the pseudo-label terms.
    """
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be >= 0")
    if clip_log >= 0:
        raise ValueError("clip_log must be negative")
    n, c = logits.shape
    labels = _check_labels(labels, c)
    rows = np.arange(n)
    p = softmax(logits)
    logp = _log_softmax(logits)
    py = p[rows, labels]
    ce = float(-logp[rows, labels].mean())
    rce = float(-clip_log * (1.0 - py).mean())
    value = alpha * ce + beta * rce

    onehot = np.zeros_like(p)
    onehot[rows, labels] = 1.0
    grad_ce = (p - onehot) / n
    grad_rce = clip_log * py[:, None] * (onehot - p) / n
    return LossOutput(value=value, grad=alpha * grad_ce + beta * grad_rce)


def kd_loss(
    student_logits: np.ndarray,
    teacher_logits: np.ndarray,
    base_ids,
    temperature: float = 1.0,
) -> LossOutput:
    """Distillation over the base-class columns only.

    Both sides are softened by the temperature; the value is the mean
    soft cross-entropy between teacher and student base-class
    distributions, scaled by T^2 per the usual soft-target formulation.
    Gradient columns for non-base (novel) outputs are exactly zero.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    base_ids = np.asarray(base_ids, dtype=np.intp)
    n, c = student_logits.shape
    if base_ids.size and (base_ids.min() < 0 or base_ids.max() >= c):
        raise ValueError("base_ids outside student logit columns")
    if teacher_logits.shape != (n, base_ids.size):
        raise ValueError(
            f"teacher logits must be (N, {base_ids.size}), got {teacher_logits.shape}"
        )
    t = temperature
    s = student_logits[:, base_ids] / t
    q = softmax(teacher_logits / t)
    p = softmax(s)
    logp = _log_softmax(s)
    value = float(t * t * (-(q * logp).sum(axis=1)).mean())
    grad = np.zeros_like(student_logits)
    grad[:, base_ids] = t * (p - q) / n
    return LossOutput(value=value, grad=grad)


def teacher_entropy(teacher_logits: np.ndarray, temperature: float = 1.0) -> float:
    """Lower bound of kd_loss for the same teacher (Gibbs inequality)."""
    t = temperature
    q = softmax(teacher_logits / t)
    logq = _log_softmax(teacher_logits / t)
    return float(t * t * (-(q * logq).sum(axis=1)).mean())


def _jaccard_grad(fg_sorted: np.ndarray) -> np.ndarray:
    """Gradient of the Lovasz extension of the Jaccard set function for
    one class, given foreground flags in decreasing-error order."""
    gts = fg_sorted.sum()
    intersection = gts - np.cumsum(fg_sorted)
    union = gts + np.cumsum(1.0 - fg_sorted)
    jaccard = 1.0 - intersection / union
    g = jaccard.copy()
    g[1:] = jaccard[1:] - jaccard[:-1]
    return g


def lovasz_softmax(
    logits: np.ndarray, labels: np.ndarray, class_subset=None
) -> LossOutput:
    """Lovasz-softmax loss, averaged over classes present in the labels
    or the predictions, chained through softmax so the gradient is with
    respect to the logits. Sorting ties break by original index order.
    """
    n, c = logits.shape
    labels = _check_labels(labels, c)
    p = softmax(logits)
    preds = p.argmax(axis=1)
    present = sorted(set(labels.tolist()) | set(preds.tolist()))
    if class_subset is not None:
        keep = set(int(v) for v in class_subset)
        present = [cl for cl in present if cl in keep]
    if not present:
        return LossOutput(value=0.0, grad=np.zeros_like(logits))

    grad_p = np.zeros_like(p)
    total = 0.0
    for cl in present:
        fg = (labels == cl).astype(np.float64)
        errors = np.where(fg == 1.0, 1.0 - p[:, cl], p[:, cl])
        order = np.argsort(-errors, kind="stable")
        g = _jaccard_grad(fg[order])
        total += float(errors[order] @ g)
        signs = np.where(fg[order] == 1.0, -1.0, 1.0)
        gp = np.empty(n)
        gp[order] = signs * g
        grad_p[:, cl] += gp / len(present)
    value = total / len(present)

    # chain through softmax row by row: dz = p * (gp - (gp . p))
    dot = (grad_p * p).sum(axis=1, keepdims=True)
    grad = p * (grad_p - dot)
    return LossOutput(value=value, grad=grad)


def triplet_reg(
    features: np.ndarray,
    labels: np.ndarray,
    margin: float = 1.0,
    max_anchors: int = 50,
    seed: int = 0,
) -> LossOutput:
    """Hardest-in-batch triplet hinge over sampled anchors.

    For each seeded anchor the positive is the farthest same-label point
    and the negative the closest other-label point; anchors lacking
    either are skipped. Returns 0 with a zero gradient when every anchor
    is skipped.
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    if max_anchors < 1:
        raise ValueError("max_anchors must be >= 1")
    labels = np.asarray(labels)
    n = features.shape[0]
    rng = np.random.default_rng(int(seed))
    anchors = rng.permutation(n)[: min(n, max_anchors)]

    grad = np.zeros_like(features)
    total = 0.0
    used = 0
    for a in anchors:
        same = (labels == labels[a])
        pos = np.nonzero(same)[0]
        pos = pos[pos != a]
        neg = np.nonzero(~same)[0]
        if pos.size == 0 or neg.size == 0:
            continue
        used += 1
        dp = np.sqrt(np.sum((features[pos] - features[a]) ** 2, axis=1))
        dn = np.sqrt(np.sum((features[neg] - features[a]) ** 2, axis=1))
        ip = int(np.argmax(dp))
        inn = int(np.argmin(dn))
        d_ap, d_an = float(dp[ip]), float(dn[inn])
        term = d_ap - d_an + margin
        if term <= 0.0:
            continue
        total += term
        p_idx, n_idx = int(pos[ip]), int(neg[inn])
        if d_ap > 0.0:
            u = (features[a] - features[p_idx]) / d_ap
            grad[a] += u
            grad[p_idx] -= u
        if d_an > 0.0:
            v = (features[a] - features[n_idx]) / d_an
            grad[a] -= v
            grad[n_idx] += v
    if used == 0:
        return LossOutput(value=0.0, grad=grad)
    return LossOutput(value=total / used, grad=grad / used)

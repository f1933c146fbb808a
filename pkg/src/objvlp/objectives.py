"""Composite objectives: IoU-guided detection loss, head cross-entropy, weighted total."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .geom3d import Aabb3, diou_many, stack_params

TERMS = ("vg", "oid", "occ", "osc", "qa")


@dataclass(frozen=True)
class LossWeights:
    w_vg: float = 1.0
    w_oid: float = 1.0
    w_occ: float = 1.0
    w_osc: float = 1.0
    w_qa: float = 1.0

    def __post_init__(self):
        vals = list(asdict(self).values())
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be nonnegative")
        if not any(v > 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")

    def of(self, term: str) -> float:
        return getattr(self, f"w_{term}")


@dataclass
class LossReport:
    total: float
    per_term: dict = field(default_factory=dict)


def oid_loss(proposals, gt: Aabb3, fr):
    """Soft-label weighted DIoU over proposals.

    Returns ``(loss, grads)`` with ``grads`` of shape ``(n, 6)``; rows whose
    weight is zero are exactly zero.
    """
    boxes = stack_params(proposals)
    weights = np.asarray(fr.weights, dtype=np.float64)
    if weights.shape[0] != boxes.shape[0]:
        raise ValueError(f"{weights.shape[0]} label weights for {boxes.shape[0]} proposals")
    loss, _, _, _, grad = diou_many(boxes, gt)
    support = weights > 0
    total = float(np.dot(weights[support], loss[support]))
    grads = np.zeros_like(boxes)
    grads[support] = weights[support, None] * grad[support]
    return total, grads


def cross_entropy(scores, target):
    """``-(1/n) sum_i target_i log softmax(scores)_i`` and its gradient w.r.t. scores.

    The ``1/n`` factor divides by the number of classes (proposals, answers)
    rather than by batch size, which scales the effective step size with the
    candidate count.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if scores.size == 0:
        raise ValueError("cross_entropy needs at least one score")
    if target.shape != scores.shape:
        raise ValueError("target and scores differ in length")
    if np.any(target < 0) or abs(target.sum() - 1.0) > 1e-6:
        raise ValueError("target must be a distribution summing to 1")
    n = scores.size
    shifted = scores - scores.max()
    log_z = np.log(np.exp(shifted).sum())
    log_p = shifted - log_z
    support = target > 0
    loss = -float(np.dot(target[support], log_p[support])) / n
    grad = (np.exp(log_p) - target) / n
    return loss, grad


def total_loss(terms: dict, weights: LossWeights, enabled=None) -> LossReport:
    """Weighted sum of the enabled terms; disabled or zero-weight terms contribute nothing."""
    per_term = {}
    total = 0.0
    for name, value in terms.items():
        if value is None:
            continue
        per_term[name] = float(value)
        if enabled is not None and name not in enabled:
            continue
        w = weights.of(name)
        if w != 0.0:
            total += w * float(value)
    return LossReport(total, per_term)


def cross_entropy_rows(scores, targets):
    """Row-wise :func:`cross_entropy` for a ``(B, N)`` block; returns per-row losses and grads."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = scores.shape[1]
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    losses = -np.sum(np.where(targets > 0, targets * log_p, 0.0), axis=1) / n
    grads = (np.exp(log_p) - targets) / n
    return losses, grads

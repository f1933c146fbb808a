"""IoU filter: split proposals into positives/negatives and build soft labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom3d import Aabb3, iou_many

DEFAULT_DELTA = 0.25
DEFAULT_EPSILON = 0.1


def default_delta() -> float:
    return DEFAULT_DELTA


@dataclass(frozen=True)
class FilterConfig:
    delta: float = DEFAULT_DELTA
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")


@dataclass(frozen=True)
class FilterResult:
    ious: np.ndarray
    pos_indices: np.ndarray
    neg_indices: np.ndarray
    argmax_index: int
    weights: np.ndarray
    k_count: int

    @property
    def n(self) -> int:
        return len(self.ious)

    @property
    def pos_mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[self.pos_indices] = True
        return m


def filter_ious(ious, cfg: FilterConfig = FilterConfig()) -> FilterResult:
    """Partition by ``iou >= delta`` and assign smoothed label weights.

    The best proposal (lowest index on ties) receives ``1 - epsilon`` and
    the remaining ``K`` positives share ``epsilon`` equally. When ``K == 0``
    or no proposal clears ``delta`` the best proposal gets the full mass.
    """
    ious = np.asarray(ious, dtype=np.float64).reshape(-1)
    if ious.size == 0:
        raise ValueError("filter needs at least one proposal")
    pos_mask = ious >= cfg.delta
    pos = np.flatnonzero(pos_mask)
    neg = np.flatnonzero(~pos_mask)
    best = int(np.argmax(ious))

    others = pos[pos != best]
    k = int(others.size)
    weights = np.zeros_like(ious)
    if k == 0:
        weights[best] = 1.0
    else:
        weights[best] = 1.0 - cfg.epsilon
        weights[others] = cfg.epsilon / k
    return FilterResult(ious, pos, neg, best, weights, k)


def filter(proposals, gt: Aabb3, cfg: FilterConfig = FilterConfig()) -> FilterResult:  # noqa: A001
    """IoU filter over a sequence of boxes (or an ``(n, 6)`` parameter array)."""
    if len(proposals) == 0:
        raise ValueError("filter needs at least one proposal")
    return filter_ious(iou_many(proposals, gt), cfg)

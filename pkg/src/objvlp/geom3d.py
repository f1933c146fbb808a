"""Axis-aligned 3D boxes: volume, IoU, enclosing box and the DIoU loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels


class InvalidBoxError(ValueError):
    pass


@dataclass(frozen=True)
class Aabb3:
    """Axis-aligned box stored as center and full extents."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        size = tuple(float(v) for v in self.size)
        if len(center) != 3 or len(size) != 3:
            raise InvalidBoxError("center and size must both have three components")
        if not all(np.isfinite(center)) or not all(np.isfinite(size)):
            raise InvalidBoxError(f"non-finite box {center} {size}")
        if min(size) <= 0.0:
            raise InvalidBoxError(f"box extents must be strictly positive, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)

    @classmethod
    def from_params(cls, params) -> Aabb3:
        p = np.asarray(params, dtype=np.float64).reshape(6)
        return cls(tuple(p[:3]), tuple(p[3:]))

    @classmethod
    def from_corners(cls, lo, hi) -> Aabb3:
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        return cls(tuple(0.5 * (lo + hi)), tuple(hi - lo))

    @property
    def params(self) -> np.ndarray:
        return np.array(self.center + self.size)

    @property
    def min_corner(self) -> np.ndarray:
        return np.asarray(self.center) - 0.5 * np.asarray(self.size)

    @property
    def max_corner(self) -> np.ndarray:
        return np.asarray(self.center) + 0.5 * np.asarray(self.size)

    def contains_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts)
        return np.all((pts >= self.min_corner) & (pts <= self.max_corner), axis=-1)

    def translated(self, offset) -> Aabb3:
        return Aabb3(tuple(np.asarray(self.center) + np.asarray(offset)), self.size)

    def scaled(self, factor: float) -> Aabb3:
        """Scale center and size about the origin."""
        return Aabb3(tuple(factor * np.asarray(self.center)), tuple(factor * np.asarray(self.size)))


@dataclass(frozen=True)
class DiouBreakdown:
    iou: float
    center_dist_sq: float
    enclosing_diag_sq: float
    loss: float


def stack_params(boxes) -> np.ndarray:
    """``(n, 6)`` parameter matrix from a sequence of boxes (or pass an array through)."""
    if isinstance(boxes, np.ndarray):
        return np.asarray(boxes, dtype=np.float64).reshape(-1, 6)
    return np.array([b.params for b in boxes], dtype=np.float64).reshape(-1, 6)


def volume(box: Aabb3) -> float:
    sx, sy, sz = box.size
    return sx * sy * sz


def iou(a: Aabb3, b: Aabb3) -> float:
    return float(_kernels.iou_many(a.params[None, :], b.params)[0])


def _gt_params(gt):
    return gt.params if isinstance(gt, Aabb3) else np.asarray(gt, dtype=np.float64)


def iou_many(boxes, gt) -> np.ndarray:
    """IoU of every box in ``boxes`` (sequence or ``(n, 6)`` array) against ``gt``.

    ``gt`` is a single box or an ``(n, 6)`` array pairing one target with each row.
    """
    return _kernels.iou_many(stack_params(boxes), _gt_params(gt))


def enclosing_box(a: Aabb3, b: Aabb3) -> Aabb3:
    lo = np.minimum(a.min_corner, b.min_corner)
    hi = np.maximum(a.max_corner, b.max_corner)
    return Aabb3.from_corners(lo, hi)


def center_dist_sq(a: Aabb3, b: Aabb3) -> float:
    d = np.asarray(a.center) - np.asarray(b.center)
    return float(d @ d)


def diou_loss(pred: Aabb3, gt: Aabb3) -> DiouBreakdown:
    loss, i, rho2, c2, _ = _kernels.diou_many(pred.params[None, :], gt.params)
    return DiouBreakdown(float(i[0]), float(rho2[0]), float(c2[0]), float(loss[0]))


def diou_grad(pred: Aabb3, gt: Aabb3) -> np.ndarray:
    """Gradient of the DIoU loss w.r.t. ``(cx, cy, cz, sx, sy, sz)`` of ``pred``.

    Where a pred corner coincides with a gt corner the two one-sided
    derivatives are averaged (so ``pred == gt`` gives zero); boxes that
    touch on a face use the derivative from the overlapping side.
    """
    return _kernels.diou_many(pred.params[None, :], gt.params)[4][0]


def diou_many(boxes, gt):
    """Vectorised ``(loss, iou, rho2, c2, grad)`` over many predicted boxes."""
    return _kernels.diou_many(stack_params(boxes), _gt_params(gt))


def _inside(pts, lo, hi, out, tmp):
    # pts is (3, m); writes the membership mask into ``out``
    out.fill(True)
    for ax in range(3):
        np.greater_equal(pts[ax], lo[ax], out=tmp)
        out &= tmp
        np.less_equal(pts[ax], hi[ax], out=tmp)
        out &= tmp
    return out


def iou_oracle(a: Aabb3, b: Aabb3, samples: int, seed: int, chunk: int = 1 << 18) -> float:
    """Monte-Carlo IoU: uniform points in the enclosing box, counted by membership."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    enc = enclosing_box(a, b)
    lo, hi = enc.min_corner, enc.max_corner
    span = (hi - lo)[:, None]
    a_lo, a_hi = a.min_corner, a.max_corner
    b_lo, b_hi = b.min_corner, b.max_corner
    in_a = in_b = in_both = 0
    remaining = samples
    while remaining > 0:
        m = min(chunk, remaining)
        pts = rng.random((3, m))
        pts *= span
        pts += lo[:, None]
        tmp = np.empty(m, dtype=bool)
        ma = _inside(pts, a_lo, a_hi, np.empty(m, dtype=bool), tmp)
        mb = _inside(pts, b_lo, b_hi, np.empty(m, dtype=bool), tmp)
        in_a += int(np.count_nonzero(ma))
        in_b += int(np.count_nonzero(mb))
        in_both += int(np.count_nonzero(ma & mb))
        remaining -= m
    union = in_a + in_b - in_both
    if union == 0:
        return 0.0
    return in_both / union

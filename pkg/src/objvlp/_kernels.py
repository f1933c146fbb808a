"""Batched axis-aligned box kernels: IoU and DIoU loss with analytic gradients.

Boxes are rows ``(cx, cy, cz, sx, sy, sz)``. Every kernel exists twice: a
numba ``@njit`` loop and a vectorised numpy version. ``iou_many`` and
``diou_many`` dispatch on :data:`objvlp._backend.USE_NUMBA`; the explicit
``*_numpy`` / ``*_numba`` names stay importable for tests and benchmarks.

Tie conventions for the gradient (pred corner exactly equal to a gt corner):
the derivative of ``min``/``max`` is split evenly between both arguments, so
``pred == gt`` yields a zero gradient. A face-touching pair (zero overlap on
one axis) takes the derivative from the overlapping side; a strictly
disjoint pair has zero IoU gradient.
"""

import numpy as np

from . import _backend


def _tie_weight_numpy(a, b):
    # d min(a, b) / da: 1 if a < b, 0.5 on ties, 0 otherwise
    return np.where(a < b, 1.0, np.where(a == b, 0.5, 0.0))


def iou_many_numpy(boxes, gt):
    """``gt`` is one box ``(6,)`` or one box per row ``(n, 6)``."""
    boxes = np.asarray(boxes, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    pmin = boxes[:, :3] - 0.5 * boxes[:, 3:]
    pmax = boxes[:, :3] + 0.5 * boxes[:, 3:]
    gmin = gt[..., :3] - 0.5 * gt[..., 3:]
    gmax = gt[..., :3] + 0.5 * gt[..., 3:]
    ov = np.clip(np.minimum(pmax, gmax) - np.maximum(pmin, gmin), 0.0, None)
    inter = ov.prod(axis=1)
    vp = (pmax - pmin).prod(axis=1)
    vg = (gmax - gmin).prod(axis=-1)
    union = vp + vg - inter
    return np.clip(inter / union, 0.0, 1.0)


def diou_many_numpy(boxes, gt):
    """Returns ``(loss, iou, rho2, c2, grad)`` with ``grad`` shaped ``(n, 6)``."""
    boxes = np.asarray(boxes, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    c, s = boxes[:, :3], boxes[:, 3:]
    pmin, pmax = c - 0.5 * s, c + 0.5 * s
    gmin = gt[..., :3] - 0.5 * gt[..., 3:]
    gmax = gt[..., :3] + 0.5 * gt[..., 3:]

    ov_raw = np.minimum(pmax, gmax) - np.maximum(pmin, gmin)
    ov = np.clip(ov_raw, 0.0, None)
    inter = ov.prod(axis=1)
    ext = pmax - pmin
    vp = ext.prod(axis=1)
    vg = (gmax - gmin).prod(axis=-1)
    union = vp + vg - inter
    iou = np.clip(inter / union, 0.0, 1.0)

    # d ov / d pmax and d ov / d pmin
    dov_dmax = _tie_weight_numpy(pmax, gmax)
    dov_dmin = -_tie_weight_numpy(-pmin, -gmin)
    touching = np.all(ov_raw >= 0.0, axis=1)
    others_ov = np.stack([ov[:, 1] * ov[:, 2], ov[:, 0] * ov[:, 2], ov[:, 0] * ov[:, 1]], axis=1)
    others_ov = others_ov * touching[:, None]
    di_dc = others_ov * (dov_dmax + dov_dmin)
    di_ds = others_ov * 0.5 * (dov_dmax - dov_dmin)
    dvp_ds = np.stack([ext[:, 1] * ext[:, 2], ext[:, 0] * ext[:, 2], ext[:, 0] * ext[:, 1]], axis=1)
    u2 = union * union
    diou_dc = di_dc * (union + inter)[:, None] / u2[:, None]
    diou_ds = (di_ds * (union + inter)[:, None] - inter[:, None] * dvp_ds) / u2[:, None]

    emin = np.minimum(pmin, gmin)
    emax = np.maximum(pmax, gmax)
    w = emax - emin
    c2 = (w * w).sum(axis=1)
    d = c - gt[..., :3]
    rho2 = (d * d).sum(axis=1)
    dw_dmax = _tie_weight_numpy(-pmax, -gmax)
    dw_dmin = -_tie_weight_numpy(pmin, gmin)
    dc2_dc = 2.0 * w * (dw_dmax + dw_dmin)
    dc2_ds = w * (dw_dmax - dw_dmin)
    pen_dc = 2.0 * d / c2[:, None] - rho2[:, None] * dc2_dc / (c2 * c2)[:, None]
    pen_ds = -rho2[:, None] * dc2_ds / (c2 * c2)[:, None]

    loss = 1.0 - iou + rho2 / c2
    grad = np.concatenate([pen_dc - diou_dc, pen_ds - diou_ds], axis=1)
    return loss, iou, rho2, c2, grad


@_backend.njit(cache=True)
def _tie(a, b):
    if a < b:
        return 1.0
    if a == b:
        return 0.5
    return 0.0


@_backend.njit(cache=True)
def iou_many_numba(boxes, gts):
    """``gts`` is ``(1, 6)`` (shared) or ``(n, 6)`` (one per row)."""
    n = boxes.shape[0]
    out = np.empty(n)
    gmin = np.empty(3)
    gmax = np.empty(3)
    for k in range(n):
        g = k if gts.shape[0] > 1 else 0
        for i in range(3):
            gmin[i] = gts[g, i] - 0.5 * gts[g, 3 + i]
            gmax[i] = gts[g, i] + 0.5 * gts[g, 3 + i]
        vg = (gmax[0] - gmin[0]) * (gmax[1] - gmin[1]) * (gmax[2] - gmin[2])
        inter = 1.0
        vp = 1.0
        for i in range(3):
            lo = boxes[k, i] - 0.5 * boxes[k, 3 + i]
            hi = boxes[k, i] + 0.5 * boxes[k, 3 + i]
            vp *= hi - lo
            o = min(hi, gmax[i]) - max(lo, gmin[i])
            if o < 0.0:
                o = 0.0
            inter *= o
        v = inter / (vp + vg - inter)
        out[k] = min(max(v, 0.0), 1.0)
    return out


@_backend.njit(cache=True)
def diou_many_numba(boxes, gts):
    n = boxes.shape[0]
    loss = np.empty(n)
    iou = np.empty(n)
    rho2 = np.empty(n)
    c2 = np.empty(n)
    grad = np.zeros((n, 6))
    gmin = np.empty(3)
    gmax = np.empty(3)
    gc = np.empty(3)
    pmin = np.empty(3)
    pmax = np.empty(3)
    ov = np.empty(3)
    ext = np.empty(3)
    w = np.empty(3)
    for k in range(n):
        g = k if gts.shape[0] > 1 else 0
        for i in range(3):
            gc[i] = gts[g, i]
            gmin[i] = gts[g, i] - 0.5 * gts[g, 3 + i]
            gmax[i] = gts[g, i] + 0.5 * gts[g, 3 + i]
        vg = (gmax[0] - gmin[0]) * (gmax[1] - gmin[1]) * (gmax[2] - gmin[2])
        touching = True
        for i in range(3):
            pmin[i] = boxes[k, i] - 0.5 * boxes[k, 3 + i]
            pmax[i] = boxes[k, i] + 0.5 * boxes[k, 3 + i]
            ext[i] = pmax[i] - pmin[i]
            o = min(pmax[i], gmax[i]) - max(pmin[i], gmin[i])
            if o < 0.0:
                touching = False
                o = 0.0
            ov[i] = o
            w[i] = max(pmax[i], gmax[i]) - min(pmin[i], gmin[i])
        inter = ov[0] * ov[1] * ov[2]
        vp = ext[0] * ext[1] * ext[2]
        union = vp + vg - inter
        v = inter / union
        iou[k] = min(max(v, 0.0), 1.0)
        cc = w[0] * w[0] + w[1] * w[1] + w[2] * w[2]
        r = 0.0
        for i in range(3):
            d = boxes[k, i] - gc[i]
            r += d * d
        rho2[k] = r
        c2[k] = cc
        loss[k] = 1.0 - iou[k] + r / cc

        u2 = union * union
        for i in range(3):
            j1 = (i + 1) % 3
            j2 = (i + 2) % 3
            others = ov[j1] * ov[j2] if touching else 0.0
            dmax = _tie(pmax[i], gmax[i])
            dmin = -_tie(-pmin[i], -gmin[i])
            di_dc = others * (dmax + dmin)
            di_ds = others * 0.5 * (dmax - dmin)
            dvp = ext[j1] * ext[j2]
            diou_dc = di_dc * (union + inter) / u2
            diou_ds = (di_ds * (union + inter) - inter * dvp) / u2

            wmax = _tie(-pmax[i], -gmax[i])
            wmin = -_tie(pmin[i], gmin[i])
            dc2_dc = 2.0 * w[i] * (wmax + wmin)
            dc2_ds = w[i] * (wmax - wmin)
            d = boxes[k, i] - gc[i]
            pen_dc = 2.0 * d / cc - r * dc2_dc / (cc * cc)
            pen_ds = -r * dc2_ds / (cc * cc)
            grad[k, i] = pen_dc - diou_dc
            grad[k, 3 + i] = pen_ds - diou_ds
    return loss, iou, rho2, c2, grad


def _as_f64_2d(boxes):
    return np.ascontiguousarray(np.asarray(boxes, dtype=np.float64).reshape(-1, 6))


def _as_gts(gt, n):
    gts = _as_f64_2d(gt)
    if gts.shape[0] not in (1, n):
        raise ValueError(f"expected 1 or {n} ground-truth boxes, got {gts.shape[0]}")
    return gts


def iou_many(boxes, gt):
    """IoU of each row of ``boxes`` against ``gt`` (one shared box or one per row)."""
    boxes = _as_f64_2d(boxes)
    gts = _as_gts(gt, boxes.shape[0])
    if _backend.USE_NUMBA:
        return iou_many_numba(boxes, gts)
    return iou_many_numpy(boxes, gts if gts.shape[0] > 1 else gts[0])


def diou_many(boxes, gt):
    """``(loss, iou, rho2, c2, grad)`` per row; ``gt`` shared or one per row."""
    boxes = _as_f64_2d(boxes)
    gts = _as_gts(gt, boxes.shape[0])
    if _backend.USE_NUMBA:
        return diou_many_numba(boxes, gts)
    return diou_many_numpy(boxes, gts if gts.shape[0] > 1 else gts[0])

"""Grounding accuracy at IoU thresholds, IoU-gated captioning score, answer exact match.

All IoU thresholds are inclusive (``iou >= k``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geom3d import Aabb3, iou

SPLITS = ("overall", "unique", "multiple")


@dataclass(frozen=True)
class GroundingOutcome:
    predicted_box: Aabb3
    gt_box: Aabb3
    split_tag: str = "unique"

    @property
    def iou(self) -> float:
        return iou(self.predicted_box, self.gt_box)


@dataclass(frozen=True)
class GatedScore:
    metric_value: float
    iou: float


def _split_fractions(hits, tags):
    hits = np.asarray(hits, dtype=bool)
    tags = np.asarray(tags)
    out = {"overall": float(hits.mean())}
    for split in ("unique", "multiple"):
        sel = tags == split
        out[split] = float(hits[sel].mean()) if sel.any() else None
    return out


def acc_at_k_ious(ious, k: float, tags=None) -> dict:
    """Acc@k from precomputed IoUs; returns ``{overall, unique, multiple}``."""
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        raise ValueError("acc_at_k needs at least one outcome")
    if tags is None:
        tags = ["unique"] * ious.size
    return _split_fractions(ious >= k, tags)


def acc_at_k(outcomes, k: float) -> dict:
    """Fraction of outcomes whose predicted box reaches IoU ``k`` with the ground truth."""
    if len(outcomes) == 0:
        raise ValueError("acc_at_k needs at least one outcome")
    return acc_at_k_ious([o.iou for o in outcomes], k, [o.split_tag for o in outcomes])


def m_at_k_iou(scores, k: float) -> float:
    """Mean of ``m_i * [iou_i >= k]`` over all N samples."""
    if len(scores) == 0:
        raise ValueError("m_at_k_iou needs at least one score")
    m = np.array([s.metric_value for s in scores], dtype=np.float64)
    gate = np.array([s.iou >= k for s in scores])
    return float(np.mean(m * gate))


def em_at_k(ranked_answers, gt_answers, k: int) -> float:
    """Fraction of samples where any of the top-``k`` ranked answers is a ground-truth answer.

    Ranked lists shorter than ``k`` are simply checked as far as they go.
    """
    if len(ranked_answers) != len(gt_answers):
        raise ValueError("ranked_answers and gt_answers differ in length")
    if k < 1:
        raise ValueError("k must be a positive integer")
    if len(ranked_answers) == 0:
        raise ValueError("em_at_k needs at least one sample")
    hits = [any(a in set(gt) for a in list(ranked)[:k]) for ranked, gt in zip(ranked_answers, gt_answers)]
    return float(np.mean(hits))


def write_report(report: dict, path):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())


def format_report(report: dict) -> str:
    """Plain-text table of a metric report (metric rows, split columns)."""
    lines = [f"{'metric':<14}" + "".join(f"{s:>10}" for s in SPLITS)]
    for name in sorted(report):
        entry = report[name]
        if not isinstance(entry, dict):
            continue
        cells = []
        for s in SPLITS:
            v = entry.get(s)
            cells.append(f"{'-':>10}" if v is None else f"{100 * v:>10.2f}")
        lines.append(f"{name:<14}" + "".join(cells))
    return "\n".join(lines)

import math

import numpy as np
import pytest

from objvlp import geom3d
from objvlp.geom3d import Aabb3
from objvlp.iou_filter import FilterConfig, filter_ious
from objvlp.objectives import LossWeights, cross_entropy, cross_entropy_rows, oid_loss, total_loss

from conftest import UNIT, random_box


class FakeFilter:
    def __init__(self, weights):
        self.weights = np.asarray(weights, float)


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(w_vg=-1)
    with pytest.raises(ValueError):
        LossWeights(0, 0, 0, 0, 0)
    assert LossWeights().of("osc") == 1.0


# --- OID ------------------------------------------------------------------------------

def test_oid_identity_zero():
    loss, grads = oid_loss([UNIT] * 3, UNIT, filter_ious([1, 1, 1]))
    assert loss == 0.0
    assert not grads.any()


def test_oid_weighted_sum_example():
    # four proposals whose DIoU losses are known, combined with the worked-example weights
    props = [UNIT, UNIT.translated((0.3, 0, 0)), UNIT.translated((0.6, 0, 0)), UNIT.translated((4, 0, 0))]
    per = np.array([geom3d.diou_loss(p, UNIT).loss for p in props])
    loss, _ = oid_loss(props, UNIT, FakeFilter([0.9, 0.05, 0.05, 0.0]))
    assert loss == pytest.approx(0.9 * per[0] + 0.05 * per[1] + 0.05 * per[2], abs=1e-15)
    # the arithmetic of the stated example, with the per-proposal losses plugged in directly
    assert float(np.dot([0.9, 0.05, 0.05, 0], [0.0, 0.2, 0.4, 1.5])) == pytest.approx(0.03, abs=1e-15)


def test_oid_one_hot_is_argmax_diou(rng):
    gt = random_box(rng)
    props = [random_box(rng) for _ in range(6)] + [gt.translated((0.05, 0, 0))]
    fr = filter_ious(geom3d.iou_many(props, gt), FilterConfig(0.25, 0.0))
    loss, grads = oid_loss(props, gt, fr)
    assert loss == pytest.approx(geom3d.diou_loss(props[fr.argmax_index], gt).loss, abs=1e-15)
    for k in range(len(props)):
        if k != fr.argmax_index:
            assert not grads[k].any()


def test_oid_gradient_rows(rng):
    gt = random_box(rng)
    props = [gt.translated(rng.normal(0, 0.1, 3)) for _ in range(5)]
    fr = filter_ious(geom3d.iou_many(props, gt))
    _, grads = oid_loss(props, gt, fr)
    for k, p in enumerate(props):
        np.testing.assert_allclose(grads[k], fr.weights[k] * geom3d.diou_grad(p, gt), atol=1e-15)


def test_oid_length_mismatch():
    with pytest.raises(ValueError):
        oid_loss([UNIT, UNIT], UNIT, FakeFilter([1.0]))


def test_oid_convex_bounds(rng):
    for _ in range(50):
        gt = random_box(rng)
        props = [gt.translated(rng.normal(0, 0.3, 3)) for _ in range(6)]
        fr = filter_ious(geom3d.iou_many(props, gt), FilterConfig(0.1, 0.3))
        per = np.array([geom3d.diou_loss(p, gt).loss for p in props])
        loss, _ = oid_loss(props, gt, fr)
        sup = fr.weights > 0
        assert per.min() - 1e-12 <= loss <= per[sup].max() + 1e-12


# --- cross-entropy ------------------------------------------------------------------------

def test_ce_uniform_four_classes():
    loss, _ = cross_entropy(np.zeros(4), [0, 1, 0, 0])
    assert loss == pytest.approx(-0.25 * math.log(0.25), abs=1e-15)
    assert loss == pytest.approx(0.346574, abs=1e-6)


def test_ce_peaked_limit():
    loss, _ = cross_entropy([0, 60.0, 0], [0, 1, 0])
    assert loss < 1e-20


def test_ce_smoothed_alignment():
    target = [0.9, 0.05, 0.05, 0.0]
    aligned, _ = cross_entropy([5.0, 0, 0, 0], target)
    mismatched, _ = cross_entropy([0, 0, 0, 5.0], target)
    assert aligned < mismatched


def test_ce_rejects_bad_target():
    with pytest.raises(ValueError):
        cross_entropy([0, 0], [0.5, 0.6])
    with pytest.raises(ValueError):
        cross_entropy([0, 0], [1.0])
    with pytest.raises(ValueError):
        cross_entropy([], [])


def test_ce_shift_invariance(rng):
    for _ in range(50):
        s = rng.normal(size=7)
        y = rng.dirichlet(np.ones(7))
        assert abs(cross_entropy(s + rng.normal() * 10, y)[0] - cross_entropy(s, y)[0]) <= 1e-12


def test_ce_gradcheck(rng):
    worst = 0.0
    h = 1e-5
    for _ in range(100):
        n = int(rng.integers(2, 12))
        s = rng.normal(size=n)
        y = rng.dirichlet(np.ones(n))
        _, g = cross_entropy(s, y)
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            num = (cross_entropy(s + e, y)[0] - cross_entropy(s - e, y)[0]) / (2 * h)
            worst = max(worst, abs(g[j] - num) / max(abs(g[j]), abs(num), 1e-8))
    assert worst <= 1e-6


def test_ce_one_hot_minimized_at_target():
    base, _ = cross_entropy([0, 0, 0], [0, 0, 1])
    better, _ = cross_entropy([0, 0, 3], [0, 0, 1])
    worse, _ = cross_entropy([3, 0, 0], [0, 0, 1])
    assert better < base < worse


def test_ce_rows_matches_scalar(rng):
    s = rng.normal(size=(4, 6))
    y = rng.dirichlet(np.ones(6), size=4)
    losses, grads = cross_entropy_rows(s, y)
    for i in range(4):
        l, g = cross_entropy(s[i], y[i])
        assert losses[i] == pytest.approx(l, abs=1e-15)
        np.testing.assert_allclose(grads[i], g, atol=1e-16)


# --- total ------------------------------------------------------------------------------------

def test_total_single_term():
    rep = total_loss({"vg": 0.3, "oid": 0.5}, LossWeights(1, 0, 0, 0, 0))
    assert rep.total == 0.3
    assert rep.per_term == {"vg": 0.3, "oid": 0.5}


def test_total_example():
    rep = total_loss({"vg": 0.3, "oid": 0.03, "occ": 0.31, "osc": 0.55, "qa": None}, LossWeights(1, 1, 1, 1, 0))
    assert rep.total == pytest.approx(1.19, abs=1e-12)
    assert "qa" not in rep.per_term


def test_total_toggled_off():
    terms = {"vg": 0.3, "oid": 0.03, "occ": 0.31}
    rep = total_loss(terms, LossWeights(), enabled={"vg", "occ"})
    assert rep.total == pytest.approx(0.61, abs=1e-12)


def test_total_linear_in_weight():
    terms = {"vg": 0.3, "oid": 0.7}
    t = [total_loss(terms, LossWeights(w_vg=1, w_oid=w)).total for w in (0.0, 1.0, 2.0)]
    assert t[2] - t[1] == pytest.approx(t[1] - t[0], abs=1e-12)

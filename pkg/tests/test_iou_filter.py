import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from objvlp import iou_filter
from objvlp.geom3d import Aabb3
from objvlp.iou_filter import FilterConfig, filter_ious

from conftest import UNIT


def test_default_delta():
    assert iou_filter.default_delta() == 0.25
    assert FilterConfig().delta == 0.25


@pytest.mark.parametrize("delta,eps", [(0.0, 0.1), (1.5, 0.1), (0.25, 1.0), (0.25, -0.1)])
def test_config_validation(delta, eps):
    with pytest.raises(ValueError):
        FilterConfig(delta, eps)


def test_override_passthrough():
    assert FilterConfig(delta=0.75).delta == 0.75


def test_worked_example():
    fr = filter_ious([0.8, 0.6, 0.5, 0.1], FilterConfig(0.25, 0.1))
    assert fr.pos_indices.tolist() == [0, 1, 2]
    assert fr.neg_indices.tolist() == [3]
    assert fr.k_count == 2
    np.testing.assert_allclose(fr.weights, [0.9, 0.05, 0.05, 0.0], atol=1e-15)


def test_single_positive_is_one_hot():
    fr = filter_ious([0.8, 0.1], FilterConfig(0.25, 0.1))
    assert fr.k_count == 0
    np.testing.assert_array_equal(fr.weights, [1.0, 0.0])


def test_no_positive_still_one_hot():
    fr = filter_ious([0.1, 0.2, 0.05], FilterConfig(0.25, 0.1))
    assert fr.pos_indices.size == 0
    np.testing.assert_array_equal(fr.weights, [0.0, 1.0, 0.0])


def test_argmax_tie_lowest_index():
    fr = filter_ious([0.5, 0.7, 0.7], FilterConfig(0.25, 0.1))
    assert fr.argmax_index == 1
    np.testing.assert_allclose(fr.weights, [0.05, 0.9, 0.05])


def test_empty_rejected():
    with pytest.raises(ValueError):
        filter_ious([])
    with pytest.raises(ValueError):
        iou_filter.filter([], UNIT)


def test_filter_on_boxes():
    props = [UNIT, UNIT.translated((0.5, 0, 0)), UNIT.translated((5, 0, 0))]
    fr = iou_filter.filter(props, UNIT)
    np.testing.assert_allclose(fr.ious, [1.0, 1 / 3, 0.0], atol=1e-12)
    assert fr.pos_mask.tolist() == [True, True, False]


def test_delta_one_exact_match_only():
    props = [UNIT.translated((0.01, 0, 0)), UNIT, Aabb3((0.5, 0.5, 0.5), (0.9, 1, 1))]
    fr = iou_filter.filter(props, UNIT, FilterConfig(1.0, 0.1))
    assert fr.pos_indices.tolist() == [1]
    np.testing.assert_array_equal(fr.weights, [0, 1, 0])


ious_st = st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=40)


@settings(max_examples=300, deadline=None)
@given(ious_st, st.floats(0.01, 1.0), st.floats(0.0, 0.99))
def test_weights_distribution(ious, delta, eps):
    fr = filter_ious(ious, FilterConfig(delta, eps))
    w = fr.weights
    assert np.all(w >= 0)
    assert abs(w.sum() - 1.0) <= 1e-12
    support = np.flatnonzero(w > 0)
    assert set(support.tolist()) <= set(fr.pos_indices.tolist()) | {fr.argmax_index}
    assert sorted(np.concatenate([fr.pos_indices, fr.neg_indices]).tolist()) == list(range(len(ious)))
    assert np.array_equal(fr.pos_mask, np.asarray(ious) >= delta)


@settings(max_examples=200, deadline=None)
@given(ious_st, st.floats(0.01, 0.5), st.floats(0.5, 1.0))
def test_monotone_in_delta(ious, d1, d2):
    lo = set(filter_ious(ious, FilterConfig(d1)).pos_indices.tolist())
    hi = set(filter_ious(ious, FilterConfig(d2)).pos_indices.tolist())
    assert hi <= lo


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=30, unique=True), st.randoms())
def test_permutation_equivariance(ious, rnd):
    perm = list(range(len(ious)))
    rnd.shuffle(perm)
    a = filter_ious(ious)
    b = filter_ious(np.asarray(ious)[perm])
    np.testing.assert_array_equal(b.weights, a.weights[perm])
    assert sorted(np.asarray(perm)[b.pos_indices].tolist()) == sorted(a.pos_indices.tolist())

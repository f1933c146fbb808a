import numpy as np
import pytest

from objvlp.geom3d import Aabb3


def random_box(rng, lo=-1.0, hi=1.0, smin=0.1, smax=1.0) -> Aabb3:
    return Aabb3(tuple(rng.uniform(lo, hi, 3)), tuple(rng.uniform(smin, smax, 3)))


def no_corner_ties(a: Aabb3, b: Aabb3, gap=1e-3) -> bool:
    """True when no pair of corner coordinates (or overlap extents) sits within ``gap``."""
    la, ha, lb, hb = a.min_corner, a.max_corner, b.min_corner, b.max_corner
    pts = np.stack([la, ha, lb, hb])
    for i in range(4):
        for j in range(i + 1, 4):
            if np.any(np.abs(pts[i] - pts[j]) < gap):
                return False
    return True


def random_nondegenerate_pair(rng, overlapping=None):
    """Random pair with no coordinate ties; ``overlapping`` forces IoU > 0 (True) or == 0 (False)."""
    from objvlp.geom3d import iou

    while True:
        a = random_box(rng, -0.5, 0.5, 0.2, 1.0)
        b = random_box(rng, -0.5, 0.5, 0.2, 1.0)
        if not no_corner_ties(a, b):
            continue
        v = iou(a, b)
        if overlapping is True and v <= 0.01:
            continue
        if overlapping is False and v > 0.0:
            continue
        return a, b


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


UNIT = Aabb3((0.5, 0.5, 0.5), (1.0, 1.0, 1.0))
SHIFTED = Aabb3((1.0, 0.5, 0.5), (1.0, 1.0, 1.0))


# acceptance verdicts, filled in by test_acceptance.py and echoed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])

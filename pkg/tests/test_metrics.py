import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from projlab.analysis.metrics import CleanZero, norms, reduction_pct
from projlab.imaging import DimensionMismatch, quantize


def brute_norms(a, b, thr=1):
    """Pixel-loop reference on 8-bit images."""
    h, w, _ = a.shape
    sq, mx, count = 0, 0, 0
    for y in range(h):
        for x in range(w):
            differs = False
            for c in range(3):
                d = int(a[y][x][c]) - int(b[y][x][c])
                sq += d * d
                mx = max(mx, abs(d))
                if abs(d) >= thr:
                    differs = True
            count += differs
    return math.sqrt(sq), mx, 100.0 * count / (h * w)


pairs = st.integers(1, 5).flatmap(
    lambda h: st.integers(1, 5).flatmap(
        lambda w: st.tuples(arrays(np.uint8, (h, w, 3)), arrays(np.uint8, (h, w, 3)))
    )
)


@given(pairs, st.integers(1, 20))
def test_norms_match_pixel_loop(pair, thr):
    a, b = pair
    t = norms(a, b, l0_threshold=thr)
    l2, linf, l0 = brute_norms(a, b, thr)
    assert abs(t.l2 - l2) <= 1e-9
    assert t.linf == linf
    assert t.l0_pct == l0


def test_float_inputs_are_quantized_first():
    a = np.zeros((1, 1, 3))
    b = np.full((1, 1, 3), 0.5)
    t = norms(a, b)
    assert t.linf == 128 and t.l2 == pytest.approx(128 * math.sqrt(3))
    assert norms(a, np.full((1, 1, 3), 0.001)).l0_pct == 0.0  # rounds to level 0


def test_identical_images_are_zero():
    img = quantize(np.random.default_rng(0).uniform(size=(4, 4, 3)))
    t = norms(img, img)
    assert (t.l2, t.linf, t.l0_pct) == (0.0, 0, 0.0)


def test_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        norms(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


def test_reduction_pct():
    assert reduction_pct(0.8, 0.2) == pytest.approx(75.0)
    assert reduction_pct(0.5, 0.5) == 0.0
    assert reduction_pct(0.5, 0.9) == 0.0  # never negative
    assert reduction_pct(0.5, 0.0) == 100.0
    with pytest.raises(CleanZero):
        reduction_pct(0.0, 0.0)


@given(st.floats(1e-6, 1.0), st.floats(0.0, 1.0))
def test_reduction_in_range(clean, patched):
    assert 0.0 <= reduction_pct(clean, patched) <= 100.0

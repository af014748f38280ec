import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from projlab import container
from projlab.container import ContainerError


def test_layout_of_minimal_container():
    raw = container.dumps("k", {}, {"a": np.array([1.5])})
    expect = (
        b"PJLM" + struct.pack("<HH", 1, 1) + b"k"
        + struct.pack("<I", 2) + b"{}"
        + struct.pack("<I", 1)
        + struct.pack("<H", 1) + b"a" + struct.pack("<B", 1) + struct.pack("<I", 1)
        + struct.pack("<d", 1.5)
    )
    assert raw == expect


@given(
    st.dictionaries(
        st.text("abcxyz_", min_size=1, max_size=6),
        arrays(np.float64, array_shapes(min_dims=0, max_dims=3, max_side=4), elements=st.floats(allow_nan=False)),
        max_size=3,
    ),
    st.dictionaries(st.text(max_size=5), st.integers() | st.text(max_size=5), max_size=3),
)
def test_roundtrip(arrs, meta):
    kind, m, back = container.loads(container.dumps("thing", meta, arrs))
    assert kind == "thing" and m == meta
    assert set(back) == set(arrs)
    for k in arrs:
        assert back[k].shape == arrs[k].shape and np.array_equal(back[k], arrs[k])


def test_dumps_is_deterministic():
    a = container.dumps("k", {"b": 1, "a": 2}, {"w": np.arange(4.0)})
    b = container.dumps("k", {"a": 2, "b": 1}, {"w": np.arange(4.0)})
    assert a == b


@pytest.mark.parametrize(
    "mutate, msg",
    [
        (lambda b: b"XXXX" + b[4:], "magic"),
        (lambda b: b[:4] + struct.pack("<H", 9) + b[6:], "version"),
        (lambda b: b[:-3], "truncated"),
        (lambda b: b + b"\x00", "trailing"),
    ],
)
def test_corruption_detected(mutate, msg):
    raw = container.dumps("k", {"x": 1}, {"w": np.ones(3)})
    with pytest.raises(ContainerError, match=msg):
        container.loads(mutate(raw))


def test_kind_check(tmp_path):
    p = tmp_path / "m.pjlm"
    container.save(p, "alpha", {}, {})
    assert container.load(p, "alpha")[0] == "alpha"
    with pytest.raises(ContainerError, match="expected"):
        container.load(p, "beta")

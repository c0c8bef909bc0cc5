import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from rawenhance import rten


def test_header_layout_by_hand():
    buf = rten.to_bytes(np.array([[1.5, -2.0, 0.0]], dtype=np.float32))
    expect = (b"RTEN" + bytes([1, 0, 2, 0, 0, 0])
              + struct.pack("<QQ", 1, 3) + struct.pack("<3f", 1.5, -2.0, 0.0))
    assert buf == expect


@given(arrays(np.float32, array_shapes(min_dims=1, max_dims=4, max_side=5),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_roundtrip(a):
    b = rten.from_bytes(rten.to_bytes(a))
    assert b.shape == a.shape and b.dtype == np.float32
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("mutate, match", [
    (lambda b: b"XTEN" + b[4:], "magic"),
    (lambda b: b[:4] + b"\x02" + b[5:], "version"),
    (lambda b: b[:5] + b"\x01" + b[6:], "dtype"),
    (lambda b: b[:-1], "payload"),
    (lambda b: b[:6], "truncated"),
])
def test_rejects_corrupt(mutate, match):
    good = rten.to_bytes(np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(rten.RtenError, match=match):
        rten.from_bytes(mutate(good))


def test_file_roundtrip(tmp_path):
    a = np.arange(24, dtype=np.float32).reshape(4, 3, 2)
    rten.save(tmp_path / "a.rten", a)
    np.testing.assert_array_equal(rten.load(tmp_path / "a.rten"), a)

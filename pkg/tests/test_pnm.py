import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from bnplate import pnm


@given(hnp.arrays(np.uint8, st.one_of(
    st.tuples(st.integers(1, 12), st.integers(1, 12)),
    st.tuples(st.integers(1, 12), st.integers(1, 12), st.just(3)))))
def test_roundtrip(img):
    assert np.array_equal(pnm.decode(pnm.encode(img)), img)


def test_file_roundtrip_and_comments(tmp_path):
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    pnm.write_image(tmp_path / "a.pgm", img)
    assert np.array_equal(pnm.read_image(tmp_path / "a.pgm"), img)
    data = b"P5\n# made by hand\n4 3\n255\n" + img.tobytes()
    assert np.array_equal(pnm.decode(data), img)


@pytest.mark.parametrize("data", [b"P2\n1 1\n255\n0", b"P5\n2 2\n255\n\0", b"P5\n1 1\n65535\n\0\0", b"P5\n1"])
def test_rejects_bad_files(data):
    with pytest.raises(ValueError):
        pnm.decode(data)

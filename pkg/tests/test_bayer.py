import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rgb2raw.bayer import (
    CfaError,
    RangeError,
    RawImage,
    denormalize_raw,
    normalize_raw,
    pack_bayer,
    unpack_bayer,
)


def test_pack_2x2_definition():
    mosaic = np.array([[0.1, 0.2], [0.3, 0.4]])
    planes = pack_bayer(mosaic)
    assert planes.shape == (4, 1, 1)
    assert planes[0, 0, 0] == pytest.approx(0.1)  # R
    assert planes[1, 0, 0] == pytest.approx(0.2)  # G1
    assert planes[2, 0, 0] == pytest.approx(0.3)  # G2
    assert planes[3, 0, 0] == pytest.approx(0.4)  # B


def test_pack_constant_mosaic():
    planes = pack_bayer(np.full((6, 8), 0.5))
    assert np.all(planes == 0.5)


def test_pack_unpack_roundtrip_4x4_exhaustive():
    mosaic = np.arange(16, dtype=np.float64).reshape(4, 4)
    assert np.array_equal(unpack_bayer(pack_bayer(mosaic)), mosaic)


@settings(max_examples=50)
@given(
    arrays(
        np.float32,
        st.tuples(st.integers(1, 8).map(lambda h: 2 * h), st.integers(1, 8).map(lambda w: 2 * w)),
        elements=st.floats(-10, 10, width=32),
    )
)
def test_pack_unpack_bijection(mosaic):
    assert np.array_equal(unpack_bayer(pack_bayer(mosaic)), mosaic)


def test_pack_rejects_odd_dims():
    with pytest.raises(CfaError):
        pack_bayer(np.zeros((3, 4)))
    with pytest.raises(CfaError):
        pack_bayer(np.zeros((4, 5)))


def test_normalize_endpoints():
    raw = RawImage(np.full((4, 2, 2), 64.0), black_level=64, white_level=1023)
    assert np.all(normalize_raw(raw) == -1.0)
    raw = RawImage(np.full((4, 2, 2), 1023.0), black_level=64, white_level=1023)
    assert np.all(normalize_raw(raw) == 1.0)


def test_normalize_midpoint_hand_value():
    # 2 * (250 / 1000) - 1 = -0.5
    raw = RawImage(np.full((4, 1, 1), 250.0), black_level=0, white_level=1000)
    assert normalize_raw(raw)[0, 0, 0] == pytest.approx(-0.5)


@settings(max_examples=50)
@given(
    black=st.integers(0, 1000),
    span=st.integers(1, 2 ** 16),
    frac=st.floats(0, 1),
)
def test_normalize_denormalize_roundtrip(black, span, frac):
    white = black + span
    v = black + frac * span
    raw = RawImage(np.full((4, 2, 2), v), black_level=black, white_level=white)
    back = denormalize_raw(normalize_raw(raw), black, white)
    assert np.max(np.abs(back.planes - raw.planes)) < 1e-5  # count units


def test_denormalize_rejects_bad_levels():
    with pytest.raises(RangeError):
        denormalize_raw(np.zeros((4, 2, 2)), 100, 100)
    with pytest.raises(RangeError):
        RawImage(np.zeros((4, 2, 2)), black_level=10, white_level=5)

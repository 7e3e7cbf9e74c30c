import numpy as np
import pytest
from hypothesis import given, strategies as st

from salresample.core import (
    Detection,
    DimensionError,
    InvalidBox,
    SaliencyMap,
    SamplingGrid,
    Space,
    identity_grid,
    norm_to_pixel,
    pixel_to_norm,
)


def test_identity_grid_2x2_corners():
    g = identity_grid(2, 2)
    assert g.coords.reshape(-1, 2).tolist() == [[-1, -1], [1, -1], [-1, 1], [1, 1]]
    assert not g.clamped


def test_identity_grid_center_and_spacing():
    assert identity_grid(3, 3).coords[1, 1].tolist() == [0.0, 0.0]
    row = identity_grid(2, 4).coords[0, :, 0]
    np.testing.assert_allclose(row, [-1, -1 / 3, 1 / 3, 1], atol=1e-15)


@pytest.mark.parametrize("h, w", [(1, 5), (5, 1), (0, 0)])
def test_identity_grid_rejects_small(h, w):
    with pytest.raises(DimensionError):
        identity_grid(h, w)


def test_identity_grid_monotone():
    c = identity_grid(7, 11).coords
    assert np.all(np.diff(c[..., 0], axis=1) > 0)
    assert np.all(np.diff(c[..., 1], axis=0) > 0)
    assert np.all(np.diff(c[..., 0], axis=0) == 0)


@pytest.mark.parametrize(
    "p, expected",
    [((0, 0), (-1, -1)), ((127, 127), (1, 1)), ((63.5, 63.5), (0, 0))],
)
def test_pixel_to_norm_anchors(p, expected):
    np.testing.assert_allclose(pixel_to_norm(p, 128, 128), expected, atol=1e-15)


def test_integer_pixels_round_trip_exactly():
    for h, w in [(128, 128), (720, 1280), (360, 640), (3, 7)]:
        ys, xs = np.mgrid[0:h, 0:w]
        p = np.stack([xs, ys], axis=-1).astype(float)
        back = norm_to_pixel(pixel_to_norm(p, h, w), h, w)
        assert np.array_equal(back, p)


@given(
    st.floats(-1e4, 1e4, allow_nan=False),
    st.floats(-1e4, 1e4, allow_nan=False),
    st.integers(2, 4096),
    st.integers(2, 4096),
)
def test_pixel_norm_inverse(x, y, h, w):
    back = norm_to_pixel(pixel_to_norm((x, y), h, w), h, w)
    np.testing.assert_allclose(back, (x, y), rtol=0, atol=1e-12 * max(1.0, abs(x), abs(y)))


def test_detection_invariants():
    with pytest.raises(InvalidBox):
        Detection((5, 5, 5, 10))
    with pytest.raises(InvalidBox):
        Detection((0, 0, 1, 1), score=1.5)
    with pytest.raises(InvalidBox):
        Detection((0, 0, 1, 1), space=Space.RESAMPLED)
    d = Detection((0, 0, 2, 3), 0.5, 4)
    assert d.area == 6.0


def test_types_are_read_only():
    m = SaliencyMap(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        m.values[0, 0] = 1.0
    g = identity_grid(3, 3)
    with pytest.raises(ValueError):
        g.coords[0, 0, 0] = 0.5


def test_saliency_map_range_checked():
    with pytest.raises(ValueError):
        SaliencyMap(np.full((2, 2), 1.5))


def test_grid_must_be_finite():
    c = identity_grid(2, 2).coords.copy()
    c[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        SamplingGrid(c)

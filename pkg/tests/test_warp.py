import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from salresample.attention import attention_grid
from salresample.core import SaliencyMap, SamplingGrid, identity_grid, norm_to_pixel
from salresample.warp import bilinear_sample, warp_image, warp_saliency


def test_identity_is_bit_exact(rng):
    for shape in ((37, 53), (64, 64, 3), (720, 1280)):
        img = rng.uniform(0, 1, shape)
        out = warp_image(img, identity_grid(shape[0], shape[1]))
        assert out.tobytes() == img.tobytes()


def test_half_resolution_matches_scipy(rng):
    img = rng.uniform(0, 1, (128, 128))
    grid = identity_grid(64, 64)
    out = warp_image(img, grid)
    px = norm_to_pixel(grid.coords, 128, 128)
    want = ndimage.map_coordinates(img, [px[..., 1], px[..., 0]], order=1, mode="nearest")
    np.testing.assert_allclose(out, want, atol=1e-12)


def test_arbitrary_grid_matches_scipy(rng):
    img = rng.uniform(0, 1, (40, 60))
    c = rng.uniform(-1.2, 1.2, (25, 30, 2))
    out = warp_image(img, SamplingGrid(c))
    px = norm_to_pixel(np.clip(c, -1, 1), 40, 60)
    want = ndimage.map_coordinates(img, [px[..., 1], px[..., 0]], order=1, mode="nearest")
    np.testing.assert_allclose(out, want, atol=1e-12)


def test_channels_preserved(rng):
    img = rng.uniform(0, 1, (20, 30, 3))
    out = warp_image(img, identity_grid(10, 12))
    assert out.shape == (10, 12, 3)
    for ch in range(3):
        np.testing.assert_allclose(out[..., ch], warp_image(img[..., ch], identity_grid(10, 12)))


def test_magnified_dot_covers_more_pixels():
    img = np.zeros((128, 128))
    img[60:64, 60:64] = 1.0
    smap = SaliencyMap(img)
    g = attention_grid(smap)
    plain = warp_image(img, identity_grid(64, 64))
    zoomed = warp_image(img, g)
    assert np.count_nonzero(zoomed > 0.5) > 4 * max(1, np.count_nonzero(plain > 0.5))


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.integers(2, 30), st.integers(2, 30))
def test_constant_image_stays_constant(value, h, w):
    rng = np.random.default_rng(h * 31 + w)
    img = np.full((h, w), value)
    c = rng.uniform(-1, 1, (9, 11, 2))
    out = warp_image(img, SamplingGrid(c))
    assert np.all(out == value)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_output_within_input_range(seed):
    rng = np.random.default_rng(seed)
    img = rng.uniform(0.2, 0.7, (15, 17))
    out = warp_image(img, SamplingGrid(rng.uniform(-1.5, 1.5, (8, 8, 2))))
    assert out.min() >= img.min() and out.max() <= img.max()


def test_bilinear_midpoint():
    img = np.array([[0.0, 1.0], [2.0, 3.0]])
    assert bilinear_sample(img, np.array([0.5, 0.5])) == pytest.approx(1.5)
    assert bilinear_sample(img, np.array([5.0, -3.0])) == 1.0


def test_warp_saliency_type(rng):
    s = SaliencyMap(rng.uniform(0, 1, (16, 16)))
    out = warp_saliency(s, identity_grid(8, 8))
    assert isinstance(out, SaliencyMap) and out.shape == (8, 8)


def test_rejects_bad_images():
    with pytest.raises(ValueError):
        warp_image(np.zeros((4, 4, 2)), identity_grid(4, 4))
    with pytest.raises(ValueError):
        warp_image(np.full((4, 4), np.nan), identity_grid(4, 4))

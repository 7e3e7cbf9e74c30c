import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from salresample.attention import AttentionSamplerConfig, MarginalMode, attention_grid, marginals
from salresample.core import SaliencyMap, identity_coords

# 128 columns, one at 1.0: (1 + 0.01) / (1 + 128 * 0.01)
BRIGHT_DENSITY = 0.44298245614035087
DIM_DENSITY = 0.0043859649122807015


def _map(v):
    return SaliencyMap(np.asarray(v, dtype=float))


def test_uniform_map_gives_identity():
    for level in (0.0, 0.5, 1.0):
        g = attention_grid(_map(np.full((128, 128), level)))
        np.testing.assert_allclose(g.coords, identity_coords(64, 64), atol=1e-12)


def test_bright_column_density():
    v = np.zeros((128, 128))
    v[:, 70] = 1.0
    fx, fy = marginals(_map(v))
    assert fx.density[70] == pytest.approx(BRIGHT_DENSITY, rel=1e-12)
    assert fx.density[0] == pytest.approx(DIM_DENSITY, rel=1e-12)
    # every row touches the bright column, so y is uniform under the max reduction
    np.testing.assert_allclose(fy.density, 1 / 128, rtol=1e-12)


def test_bright_column_is_magnified():
    v = np.zeros((128, 128))
    v[:, 70] = 1.0
    g = attention_grid(_map(v))
    xs = g.coords[0, :, 0]
    lo, hi = -1 + 2 * 70 / 128, -1 + 2 * 71 / 128
    inside = np.count_nonzero((xs >= lo) & (xs <= hi))
    # about 44% of the 64 output columns read from one input column
    assert 26 <= inside <= 30


def test_sum_mode_differs_from_max():
    v = np.zeros((64, 64))
    v[:32, 10] = 1.0
    v[:, 40] = 0.5
    fmax, _ = marginals(_map(v))
    fsum, _ = marginals(_map(v), AttentionSamplerConfig(marginal_mode=MarginalMode.SUM))
    assert fmax.density[10] > fmax.density[40]
    assert fsum.density[10] == pytest.approx(fsum.density[40])


def test_transpose_symmetry(rng):
    v = rng.uniform(0, 1, (50, 50))
    g = attention_grid(_map(v), AttentionSamplerConfig(out_size=(40, 40)))
    gt = attention_grid(_map(v.T), AttentionSamplerConfig(out_size=(40, 40)))
    np.testing.assert_allclose(gt.coords[..., 0], g.coords[..., 1].T, atol=1e-14)
    np.testing.assert_allclose(gt.coords[..., 1], g.coords[..., 0].T, atol=1e-14)


def test_separable_structure(rng):
    g = attention_grid(_map(rng.uniform(0, 1, (30, 40))), AttentionSamplerConfig(out_size=(20, 25)))
    assert g.shape == (20, 25)
    assert np.all(g.coords[..., 0] == g.coords[:1, :, 0])
    assert np.all(g.coords[..., 1] == g.coords[:, :1, 1])


def test_corners_pinned(rng):
    g = attention_grid(_map(rng.uniform(0, 1, (30, 40))))
    np.testing.assert_array_equal(g.coords[0, 0], [-1, -1])
    np.testing.assert_array_equal(g.coords[-1, -1], [1, 1])


def test_inverse_cdf_brute_force(rng):
    v = rng.uniform(0, 1, (16, 24)) ** 3
    fx, _ = marginals(_map(v))
    # independent oracle: tabulate the CDF at 1e-6 resolution and search it
    x = np.linspace(-1, 1, 2_000_001)
    bins = np.minimum(((x + 1) / 2 * 24).astype(int), 23)
    frac = (x + 1) / 2 * 24 - bins
    F = np.concatenate([[0], np.cumsum(fx.density)])[bins] + fx.density[bins] * frac
    u = np.linspace(0, 1, 37)
    want = x[np.searchsorted(F, u)]
    np.testing.assert_allclose(fx.inverse(u), want, atol=2e-6)


def test_determinism(rng):
    v = rng.uniform(0, 1, (40, 40))
    a = attention_grid(_map(v)).coords
    b = attention_grid(_map(v.copy())).coords
    assert a.tobytes() == b.tobytes()


def test_config_validation():
    with pytest.raises(ValueError):
        AttentionSamplerConfig(floor_eps=0)
    with pytest.raises(ValueError):
        AttentionSamplerConfig(out_size=(1, 10))


def test_two_blobs_magnify_empty_band():
    # separable sampling magnifies the cross terms: two diagonal blobs also
    # enlarge the empty off-diagonal quadrants
    v = np.zeros((64, 64))
    v[8:16, 8:16] = 1.0
    v[48:56, 48:56] = 1.0
    g = attention_grid(_map(v))
    x, y = g.coords[..., 0], g.coords[..., 1]
    in_blob_x = (x > -0.75) & (x < -0.5)
    in_blob_y = (y > 0.5) & (y < 0.75)
    # the empty quadrant at (blob-1 columns, blob-2 rows) takes many output samples
    assert np.count_nonzero(in_blob_x & in_blob_y) > 64 * 64 * 0.1


maps = arrays(np.float64, st.tuples(st.integers(2, 20), st.integers(2, 20)), elements=st.floats(0, 1))


@settings(max_examples=80, deadline=None)
@given(maps, st.sampled_from(list(MarginalMode)))
def test_monotone_and_mass_preserving(v, mode):
    cfg = AttentionSamplerConfig(marginal_mode=mode, out_size=(17, 23))
    fx, fy = marginals(_map(v), cfg)
    for f, n in ((fx, v.shape[1]), (fy, v.shape[0])):
        assert f.density.shape == (n,)
        assert f.cdf[0] == 0.0 and f.cdf[-1] == 1.0
        assert np.all(np.diff(f.cdf) > 0)
        assert f.density.sum() == pytest.approx(1.0, abs=1e-12)
    g = attention_grid(_map(v), cfg)
    assert np.all(np.diff(g.coords[0, :, 0]) > 0)
    assert np.all(np.diff(g.coords[:, 0, 1]) > 0)
    # each output interval carries 1/(out-1) of the marginal mass
    xs = g.coords[0, :, 0]
    masses = [fx.mass(a, b) for a, b in zip(xs[:-1], xs[1:])]
    np.testing.assert_allclose(masses, 1 / 22, atol=1e-9)

"""Bilinear sampler: apply a SamplingGrid to an image."""

from __future__ import annotations

import numpy as np

from .core import SaliencyMap, SamplingGrid, as_image, norm_to_pixel

# sample positions this close to an integer pixel are snapped onto it, so an
# identity grid reproduces the source bit-for-bit despite float round-off
SNAP_TOL = 1e-9


def _sample_positions(coords: np.ndarray, height: int, width: int) -> np.ndarray:
    if height == 1 or width == 1:
        # degenerate axis: everything reads the only row/column
        px = np.zeros(coords.shape)
        if width > 1:
            px[..., 0] = (coords[..., 0] + 1.0) * (width - 1) / 2.0
        if height > 1:
            px[..., 1] = (coords[..., 1] + 1.0) * (height - 1) / 2.0
    else:
        px = norm_to_pixel(coords, height, width)
    near = np.rint(px)
    snap = np.abs(px - near) <= SNAP_TOL
    px = np.where(snap, near, px)
    px[..., 0] = np.clip(px[..., 0], 0, width - 1)
    px[..., 1] = np.clip(px[..., 1], 0, height - 1)
    return px


def bilinear_sample(img: np.ndarray, px: np.ndarray) -> np.ndarray:
    """Sample ``img`` (h, w[, c]) at pixel positions ``px`` (..., 2) with clamp-to-edge."""
    h, w = img.shape[:2]
    x = np.clip(px[..., 0], 0, w - 1)
    y = np.clip(px[..., 1], 0, h - 1)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    a, b = img[y0, x0], img[y0, x1]
    c, d = img[y1, x0], img[y1, x1]
    # lerp form: equal neighbours give that value exactly
    top = a + (b - a) * fx
    bot = c + (d - c) * fx
    out = top + (bot - top) * fy
    lo = np.minimum(np.minimum(a, b), np.minimum(c, d))
    hi = np.maximum(np.maximum(a, b), np.maximum(c, d))
    out = np.clip(out, lo, hi)
    return out


def warp_image(src, grid: SamplingGrid) -> np.ndarray:
    """Resample ``src`` so output pixel (i, j) reads ``grid.coords[i, j]``.

    The output has the grid's height and width and the source's channels.
    """
    img = as_image(src)
    px = _sample_positions(grid.coords, img.shape[0], img.shape[1])
    return bilinear_sample(img, px)


def warp_saliency(src: SaliencyMap, grid: SamplingGrid) -> SaliencyMap:
    out = warp_image(src.values, grid)
    return SaliencyMap(np.clip(out, 0.0, 1.0))

"""Map points and boxes between resampled and original pixel space.

A sampling grid already stores, for every resampled pixel, where it came from
in the original image. Going back is therefore an interpolation of the grid at
fractional positions. Going forward (original -> resampled) needs a search and
is provided for synthetic detectors and round-trip checks.
"""

from __future__ import annotations

import logging
from typing import Iterable, List, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    Detection,
    InvalidInput,
    SalresampleError,
    SamplingGrid,
    Space,
    norm_to_pixel,
    pixel_to_norm,
)

log = logging.getLogger(__name__)


class GridMismatch(SalresampleError, ValueError):
    pass


def _interp_bilinear(coords: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = coords.shape[:2]
    x0 = np.clip(np.floor(x).astype(np.intp), 0, w - 1)
    y0 = np.clip(np.floor(y).astype(np.intp), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = coords[y0, x0] + (coords[y0, x1] - coords[y0, x0]) * fx
    bot = coords[y1, x0] + (coords[y1, x1] - coords[y1, x0]) * fx
    return top + (bot - top) * fy


def _interp_per_axis(coords: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # x between the two closest columns on the nearest row, y likewise
    h, w = coords.shape[:2]
    r = np.clip(np.rint(y).astype(np.intp), 0, h - 1)
    c = np.clip(np.rint(x).astype(np.intp), 0, w - 1)
    x0 = np.clip(np.floor(x).astype(np.intp), 0, w - 2)
    y0 = np.clip(np.floor(y).astype(np.intp), 0, h - 2)
    fx = x - x0
    fy = y - y0
    gx = coords[r, x0, 0] + (coords[r, x0 + 1, 0] - coords[r, x0, 0]) * fx
    gy = coords[y0, c, 1] + (coords[y0 + 1, c, 1] - coords[y0, c, 1]) * fy
    return np.stack([gx, gy], axis=-1)


def invert_point(q, grid: SamplingGrid, original_dims: Tuple[int, int], mode: str = "bilinear"):
    """Resampled pixel position(s) ``q`` -> original pixel position(s).

    ``q`` is ``(x, y)`` or an ``(..., 2)`` array in the pixel frame of the
    resampled image (which has the grid's shape). ``original_dims`` is
    ``(height, width)``. Returns ``(points, clamped)`` where ``clamped`` marks
    inputs that fell outside the grid and were pulled onto its border.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1:] != (2,) or not np.all(np.isfinite(q)):
        raise InvalidInput("points must be finite (..., 2) arrays")
    h, w = grid.shape
    if h < 2 or w < 2:
        raise InvalidInput("inversion needs a grid of at least 2x2")
    x = np.clip(q[..., 0], 0, w - 1)
    y = np.clip(q[..., 1], 0, h - 1)
    clamped = (x != q[..., 0]) | (y != q[..., 1])
    if mode == "bilinear":
        src = _interp_bilinear(grid.coords, x, y)
    elif mode == "per_axis":
        src = _interp_per_axis(grid.coords, x, y)
    else:
        raise InvalidInput(f"unknown interpolation mode {mode!r}")
    return norm_to_pixel(src, *original_dims), clamped


# a cell solution counts as a hit when it reproduces the target this closely
# (normalized units; ~1e-7 px at 1280 wide)
HIT_TOL = 1e-10


def _cell_inverse(c00, c10, c01, c11, p, u, v, iters=30):
    # Newton on the bilinear patch: find (u, v) with B(u, v) = p; returns the
    # residual norm too, since singular patches stop early
    e = c10 - c00
    f = c01 - c00
    g = c00 - c10 - c01 + c11
    for _ in range(iters):
        val = c00 + e * u + f * v + g * u * v - p
        ju = e + g * v
        jv = f + g * u
        det = ju[0] * jv[1] - ju[1] * jv[0]
        if det == 0:
            break
        du = (val[0] * jv[1] - val[1] * jv[0]) / det
        dv = (ju[0] * val[1] - ju[1] * val[0]) / det
        u -= du
        v -= dv
        if abs(du) < 1e-14 and abs(dv) < 1e-14:
            break
    resid = c00 + e * u + f * v + g * u * v - p
    return u, v, float(np.hypot(resid[0], resid[1]))


class ForwardMapper:
    """Original pixel -> resampled pixel, by search over the dense grid.

    For each query the ``k`` nearest grid nodes are found with a KD-tree and
    the bilinear patch of each adjacent cell is inverted with Newton's method.
    If none of those cells contains the point, every cell whose bounding box
    does is tried. The first proper hit wins; points the grid never reaches
    map to the closest cell border.
    """

    def __init__(self, grid: SamplingGrid, original_dims: Tuple[int, int], k: int = 16):
        self.grid = grid
        self.k = k
        self.original_dims = original_dims
        c = grid.coords
        self._nodes = c.reshape(-1, 2)
        self._tree = cKDTree(self._nodes)
        corners = np.stack([c[:-1, :-1], c[:-1, 1:], c[1:, :-1], c[1:, 1:]])
        self._lo = corners.min(axis=0)
        self._hi = corners.max(axis=0)

    def __call__(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        flat = pixel_to_norm(p.reshape(-1, 2), *self.original_dims)
        out = np.array([self._one(t) for t in flat]).reshape(p.shape)
        return out

    def _try_cells(self, t, cells, best):
        coords = self.grid.coords
        for ci, cj in cells:
            u, v, resid = _cell_inverse(
                coords[ci, cj], coords[ci, cj + 1], coords[ci + 1, cj], coords[ci + 1, cj + 1],
                t, 0.5, 0.5,
            )
            # distance outside the unit cell; 0 with a small residual is a proper hit
            out = max(0.0, -u, u - 1.0) + max(0.0, -v, v - 1.0)
            if out == 0.0 and resid <= HIT_TOL:
                return np.array([cj + u, ci + v]), best
            score = (out, resid)
            if best is None or score < best[0]:
                best = (score, cj + min(max(u, 0.0), 1.0), ci + min(max(v, 0.0), 1.0))
        return None, best

    def _one(self, t: np.ndarray) -> np.ndarray:
        h, w = self.grid.shape
        _, ks = self._tree.query(t, k=min(self.k, len(self._nodes)))
        near = []
        for k in np.atleast_1d(ks):
            i, j = divmod(int(k), w)
            for ci in (i - 1, i):
                for cj in (j - 1, j):
                    if 0 <= ci < h - 1 and 0 <= cj < w - 1 and (ci, cj) not in near:
                        near.append((ci, cj))
        hit, best = self._try_cells(t, near, None)
        if hit is not None:
            return hit
        inside = np.all((self._lo <= t) & (t <= self._hi), axis=-1)
        tried = set(near)
        rest = [c for c in zip(*np.nonzero(inside)) if c not in tried]
        hit, best = self._try_cells(t, rest, best)
        if hit is not None:
            return hit
        if best is None:
            i, j = divmod(int(np.atleast_1d(ks)[0]), w)
            return np.array([float(j), float(i)])
        return np.array([best[1], best[2]])


def forward_point(p, grid: SamplingGrid, original_dims: Tuple[int, int]) -> np.ndarray:
    return ForwardMapper(grid, original_dims)(p)


def _box_corners(bbox) -> np.ndarray:
    x0, y0, x1, y1 = bbox
    return np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]])


def map_box(corners_fn, bbox, bounds: Tuple[int, int]):
    """Hull of the four mapped corners, clipped to ``[0, w-1] x [0, h-1]``.

    Returns ``None`` when the clipped hull has no area.
    """
    pts = corners_fn(_box_corners(bbox))
    h, w = bounds
    x0 = float(np.clip(pts[:, 0].min(), 0, w - 1))
    x1 = float(np.clip(pts[:, 0].max(), 0, w - 1))
    y0 = float(np.clip(pts[:, 1].min(), 0, h - 1))
    y1 = float(np.clip(pts[:, 1].max(), 0, h - 1))
    if not (x0 < x1 and y0 < y1):
        return None
    return (x0, y0, x1, y1)


def invert_detections(
    dets: Iterable[Detection],
    grid: SamplingGrid,
    original_dims: Tuple[int, int],
    mode: str = "bilinear",
) -> Tuple[List[Detection], int]:
    """Bring resampled-space detections back to the original image.

    Returns ``(detections, dropped)``; boxes that collapse after clipping to the
    image are dropped and counted.
    """
    out = []
    dropped = 0
    for det in dets:
        if det.space is not Space.RESAMPLED or det.grid_id != grid.grid_id:
            raise GridMismatch(
                f"detection tagged {det.space.value}/{det.grid_id} does not belong to grid {grid.grid_id}"
            )
        box = map_box(lambda c: invert_point(c, grid, original_dims, mode)[0], det.bbox, original_dims)
        if box is None:
            dropped += 1
            continue
        out.append(det.retag(box, Space.ORIGINAL))
    if dropped:
        log.warning("dropped %d degenerate boxes after inversion", dropped)
    return out, dropped


def forward_detections(dets: Iterable[Detection], grid: SamplingGrid, original_dims: Tuple[int, int]):
    """Original-space detections -> boxes in the resampled frame of ``grid``."""
    mapper = ForwardMapper(grid, original_dims)
    out = []
    for det in dets:
        box = map_box(mapper, det.bbox, grid.shape)
        if box is not None:
            out.append(det.retag(box, Space.RESAMPLED, grid.grid_id))
    return out


def grid_is_monotone(grid: SamplingGrid) -> bool:
    """True when x strictly increases along rows and y down columns."""
    c = grid.coords
    return bool(np.all(np.diff(c[..., 0], axis=1) > 0) and np.all(np.diff(c[..., 1], axis=0) > 0))

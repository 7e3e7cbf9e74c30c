"""Shared image/grid types and the coordinate convention used everywhere.

Normalized coordinates live in [-1, 1] with corner alignment: pixel 0 maps
to -1 and pixel ``size - 1`` maps to +1. ``x`` runs along the image width,
``y`` along the height, and (-1, -1) is the top-left corner.

Arrays are stored read-only; every public type is immutable once built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np


class SalresampleError(Exception):
    """Base class for all package errors."""


class DimensionError(SalresampleError, ValueError):
    pass


class InvalidBox(SalresampleError, ValueError):
    pass


class InvalidInput(SalresampleError, ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


class Space(str, Enum):
    ORIGINAL = "original"
    RESAMPLED = "resampled"


@dataclass(frozen=True)
class Detection:
    """A bounding box in the pixel frame of the space it is tagged with.

    ``bbox`` is ``(x_min, y_min, x_max, y_max)`` in continuous pixel
    coordinates. Resampled detections carry the id of the grid that produced
    their image.
    """

    bbox: Tuple[float, float, float, float]
    score: float = 1.0
    category: int = 0
    space: Space = Space.ORIGINAL
    grid_id: Optional[str] = None

    def __post_init__(self):
        x0, y0, x1, y1 = (float(v) for v in self.bbox)
        if not all(np.isfinite((x0, y0, x1, y1))):
            raise InvalidBox(f"non-finite box {self.bbox}")
        if not (x0 < x1 and y0 < y1):
            raise InvalidBox(f"degenerate box {self.bbox}")
        if not 0.0 <= self.score <= 1.0:
            raise InvalidBox(f"score {self.score} outside [0, 1]")
        if self.space is Space.RESAMPLED and self.grid_id is None:
            raise InvalidBox("resampled detection needs a grid_id")
        object.__setattr__(self, "bbox", (x0, y0, x1, y1))
        object.__setattr__(self, "space", Space(self.space))

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.bbox
        return (x1 - x0) * (y1 - y0)

    def retag(self, bbox, space: Space, grid_id: Optional[str] = None) -> "Detection":
        return Detection(tuple(bbox), self.score, self.category, space, grid_id)


@dataclass(frozen=True)
class SaliencyMap:
    """Per-pixel importance in [0, 1], shape ``(height, width)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DimensionError(f"saliency map must be 2-D and non-empty, got {v.shape}")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise InvalidInput("saliency values must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class SamplingGrid:
    """Dense field of normalized source coordinates.

    ``coords[i, j] = (x, y)`` is where output pixel ``(row i, col j)`` reads
    from in the source image. ``clamped`` records whether any raw value had to
    be pulled back into [-1, 1].
    """

    coords: np.ndarray
    clamped: bool = False
    grid_id: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 3 or c.shape[2] != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise DimensionError(f"grid coords must have shape (h, w, 2), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InvalidInput("grid coordinates must be finite")
        object.__setattr__(self, "coords", _frozen(c))

    @property
    def height(self) -> int:
        return self.coords.shape[0]

    @property
    def width(self) -> int:
        return self.coords.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.coords.shape[:2]

    def with_id(self, grid_id: str) -> "SamplingGrid":
        return SamplingGrid(self.coords, self.clamped, grid_id)


def as_image(pixels) -> np.ndarray:
    """Validate an image buffer: float (h, w) or (h, w, 1|3), finite, in [0, 1]."""
    a = np.asarray(pixels, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] not in (1, 3):
        raise DimensionError(f"images need 1 or 3 channels, got {a.shape[2]}")
    if a.ndim not in (2, 3) or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"bad image shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("image contains non-finite values")
    return a


def _check_dims(height: int, width: int) -> None:
    if height < 2 or width < 2:
        raise DimensionError(f"need height, width >= 2, got {height}x{width}")


def norm_axis(n: int) -> np.ndarray:
    """Corner-aligned normalized positions of ``n`` samples along one axis."""
    return -1.0 + 2.0 * np.arange(n, dtype=np.float64) / (n - 1)


def identity_coords(height: int, width: int) -> np.ndarray:
    _check_dims(height, width)
    xs = norm_axis(width)
    ys = norm_axis(height)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def identity_grid(height: int, width: int) -> SamplingGrid:
    return SamplingGrid(identity_coords(height, width))


def pixel_to_norm(p, height: int, width: int) -> np.ndarray:
    """Map pixel ``(x, y)`` (scalar pair or ``(..., 2)`` array) to [-1, 1] space.

    Out-of-image coordinates are mapped by the same affine rule.
    """
    _check_dims(height, width)
    p = np.asarray(p, dtype=np.float64)
    m = np.array([width - 1.0, height - 1.0])
    return (2.0 * p - m) / m


def norm_to_pixel(q, height: int, width: int) -> np.ndarray:
    _check_dims(height, width)
    q = np.asarray(q, dtype=np.float64)
    m = np.array([width - 1.0, height - 1.0])
    p = (q * m + m) / 2.0
    # integer pixels come back exactly; the snap moves other values by a few ulps at most
    r = np.rint(p)
    near = np.abs(p - r) <= 8 * np.spacing(np.maximum(np.abs(r), 1.0))
    return np.where(near, r, p)

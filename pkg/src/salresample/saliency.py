"""Detections to saliency map.

Boxes with a score of at least ``tau`` are rasterized straight onto the
working map: small objects get ``small_label``, large ones ``large_label``,
everything else ``background_label``. Overlaps keep the larger label.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Tuple

import numpy as np

from .core import Detection, InvalidBox, InvalidInput, SaliencyMap, Space


@dataclass(frozen=True)
class SaliencyConfig:
    tau: float = 0.5
    alpha_pct: float = 0.5
    small_label: float = 1.0
    large_label: float = 0.5
    background_label: float = 0.0
    out_size: Tuple[int, int] = (128, 128)  # (height, width)

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise InvalidInput(f"tau must lie in [0, 1], got {self.tau}")
        if not self.alpha_pct > 0:
            raise InvalidInput(f"alpha_pct must be positive, got {self.alpha_pct}")
        if not 0.0 <= self.background_label < self.large_label < self.small_label <= 1.0:
            raise InvalidInput("labels must satisfy 0 <= background < large < small <= 1")
        h, w = self.out_size
        if h < 1 or w < 1:
            raise InvalidInput(f"bad out_size {self.out_size}")
        object.__setattr__(self, "out_size", (int(h), int(w)))


class ObjectSize(str, Enum):
    SMALL = "small"
    LARGE = "large"


class Composition(str, Enum):
    EMPTY = "empty"
    ONLY_SMALL = "only_small"
    ONLY_LARGE = "only_large"
    MIXED = "mixed"


def classify_size(det: Detection, image_dims: Tuple[int, int], cfg: SaliencyConfig = SaliencyConfig()) -> ObjectSize:
    """Small iff the box covers strictly less than ``alpha_pct`` percent of the image.

    ``image_dims`` is ``(height, width)``.
    """
    if det.space is not Space.ORIGINAL:
        raise InvalidInput("size classification needs original-space boxes")
    x0, y0, x1, y1 = det.bbox
    if not (x0 < x1 and y0 < y1):
        raise InvalidBox(f"degenerate box {det.bbox}")
    height, width = image_dims
    # compare area*100 against alpha*H*W so exact ties stay exact
    if det.area * 100.0 < cfg.alpha_pct * height * width:
        return ObjectSize.SMALL
    return ObjectSize.LARGE


def _cover(lo: float, hi: float, scale: float, n: int) -> slice:
    # pixel k (center (k + 0.5) / scale in source pixels) is inside iff lo <= c < hi
    start = int(np.ceil(lo * scale - 0.5))
    stop = int(np.ceil(hi * scale - 0.5))
    return slice(min(max(start, 0), n), min(max(stop, 0), n))


def generate_saliency(
    dets: Iterable[Detection],
    image_dims: Tuple[int, int],
    cfg: SaliencyConfig = SaliencyConfig(),
) -> SaliencyMap:
    height, width = image_dims
    out_h, out_w = cfg.out_size
    values = np.full((out_h, out_w), cfg.background_label, dtype=np.float64)
    sx = out_w / width
    sy = out_h / height
    for det in dets:
        if det.space is not Space.ORIGINAL:
            raise InvalidInput("saliency is generated from original-space detections")
        if det.score < cfg.tau:
            continue
        if classify_size(det, image_dims, cfg) is ObjectSize.SMALL:
            label = cfg.small_label
        else:
            label = cfg.large_label
        x0, y0, x1, y1 = det.bbox
        rows = _cover(y0, y1, sy, out_h)
        cols = _cover(x0, x1, sx, out_w)
        np.maximum(values[rows, cols], label, out=values[rows, cols])
    return SaliencyMap(values)


def map_composition(smap: SaliencyMap, cfg: SaliencyConfig = SaliencyConfig()) -> Composition:
    v = smap.values
    has_small = bool(np.any(v == cfg.small_label))
    has_large = bool(np.any(v == cfg.large_label))
    if has_small and has_large:
        return Composition.MIXED
    if has_small:
        return Composition.ONLY_SMALL
    if has_large:
        return Composition.ONLY_LARGE
    return Composition.EMPTY

"""Deterministic synthetic video: moving rectangles on a textured background."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .core import Detection


@dataclass(frozen=True)
class SyntheticScene:
    frames: List[np.ndarray]
    annotations: Dict[int, List[Detection]]
    size: Tuple[int, int]  # (height, width)


def make_scene(n_frames: int = 64, size: Tuple[int, int] = (360, 640), n_objects: int = 4,
               seed: int = 0) -> SyntheticScene:
    """Objects of mixed sizes drift linearly and bounce off the borders."""
    rng = np.random.default_rng(seed)
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w]
    base = 0.25 + 0.1 * np.sin(xx / 17.0) * np.cos(yy / 23.0)
    background = np.stack([base, base * 0.9, base * 1.1], axis=-1).clip(0, 1)

    # a mix of small (< 0.5% of the frame) and large objects
    sizes = []
    for k in range(n_objects):
        frac = 0.002 if k % 2 == 0 else 0.02
        side = np.sqrt(frac * h * w)
        sizes.append((side * rng.uniform(0.8, 1.25), side * rng.uniform(0.8, 1.25)))
    pos = np.array([[rng.uniform(0, w - bw), rng.uniform(0, h - bh)] for bw, bh in sizes])
    vel = rng.uniform(-4, 4, (n_objects, 2))
    colors = rng.uniform(0.5, 1.0, (n_objects, 3))

    frames, annotations = [], {}
    for t in range(n_frames):
        img = background.copy()
        dets = []
        for k, (bw, bh) in enumerate(sizes):
            x0, y0 = pos[k]
            x1, y1 = x0 + bw, y0 + bh
            r0, r1 = int(np.floor(y0)), int(np.ceil(y1))
            c0, c1 = int(np.floor(x0)), int(np.ceil(x1))
            img[r0:r1, c0:c1] = colors[k]
            dets.append(Detection((x0, y0, x1, y1), 0.9, k % 3))
        frames.append(img)
        annotations[t] = dets
        pos += vel
        for k, (bw, bh) in enumerate(sizes):
            for axis, extent, span in ((0, bw, w), (1, bh, h)):
                if pos[k, axis] < 0 or pos[k, axis] + extent > span - 1:
                    vel[k, axis] = -vel[k, axis]
                    pos[k, axis] = np.clip(pos[k, axis], 0, span - 1 - extent)
    return SyntheticScene(frames, annotations, size)

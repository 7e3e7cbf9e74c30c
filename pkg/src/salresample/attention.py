"""Non-parametric attention sampler: separable inverse-CDF sampling grid.

The saliency map is reduced to one density per axis, floored so every bin has
mass, and each output column/row takes the source coordinate at a uniformly
spaced quantile. Because the grid is separable, two salient spots at
(i, j) and (i', j') also densify (i, j') and (i', j). The grid-fit mask
exists to suppress exactly that.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from .core import InvalidInput, SaliencyMap, SamplingGrid


class MarginalMode(str, Enum):
    MAX = "max"
    SUM = "sum"


@dataclass(frozen=True)
class AttentionSamplerConfig:
    floor_eps: float = 0.01
    marginal_mode: MarginalMode = MarginalMode.MAX
    out_size: Tuple[int, int] = (64, 64)  # (height, width)

    def __post_init__(self):
        if not (self.floor_eps > 0 and np.isfinite(self.floor_eps)):
            raise InvalidInput(f"floor_eps must be positive, got {self.floor_eps}")
        object.__setattr__(self, "marginal_mode", MarginalMode(self.marginal_mode))
        h, w = self.out_size
        if h < 2 or w < 2:
            raise InvalidInput(f"sampler out_size must be at least 2x2, got {self.out_size}")
        object.__setattr__(self, "out_size", (int(h), int(w)))


@dataclass(frozen=True)
class MarginalCdf:
    """Piecewise-linear CDF over equal-width bins spanning [-1, 1].

    ``density`` is the normalized per-bin mass; ``cdf`` has one more entry than
    ``density`` and runs from exactly 0 to exactly 1.
    """

    axis: str
    density: np.ndarray
    cdf: np.ndarray

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, len(self.density) + 1)

    def inverse(self, u) -> np.ndarray:
        # np.interp bisects the strictly increasing cdf and interpolates in-bin
        return np.interp(np.asarray(u, dtype=np.float64), self.cdf, self.edges)

    def mass(self, lo: float, hi: float) -> float:
        c = np.interp([lo, hi], self.edges, self.cdf)
        return float(c[1] - c[0])


def _marginal(profile: np.ndarray, eps: float, axis: str) -> MarginalCdf:
    dens = profile + eps
    dens = dens / dens.sum()
    cdf = np.concatenate([[0.0], np.cumsum(dens)])
    cdf[-1] = 1.0
    return MarginalCdf(axis, dens, cdf)


def marginals(smap: SaliencyMap, cfg: AttentionSamplerConfig = AttentionSamplerConfig()):
    """Return ``(x_cdf, y_cdf)``. The x profile reduces over rows, y over columns."""
    v = smap.values
    if cfg.marginal_mode is MarginalMode.MAX:
        px, py = v.max(axis=0), v.max(axis=1)
    else:
        px, py = v.sum(axis=0), v.sum(axis=1)
    return _marginal(px, cfg.floor_eps, "x"), _marginal(py, cfg.floor_eps, "y")


def attention_grid(smap: SaliencyMap, cfg: AttentionSamplerConfig = AttentionSamplerConfig()) -> SamplingGrid:
    out_h, out_w = cfg.out_size
    fx, fy = marginals(smap, cfg)
    xs = fx.inverse(np.linspace(0.0, 1.0, out_w))
    ys = fy.inverse(np.linspace(0.0, 1.0, out_h))
    coords = np.empty((out_h, out_w, 2))
    coords[..., 0] = xs[None, :]
    coords[..., 1] = ys[:, None]
    return SamplingGrid(coords)

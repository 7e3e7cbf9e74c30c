"""Fit TPS control displacements to a reference grid under a weighted mask.

The TPS grid is linear in the displaced control points,
``G = A @ (P + delta)`` with ``A`` from :func:`tps.grid_operator`, so
minimizing the masked squared grid distance is a weighted ridge regression
that splits into one problem for x and one for y. Solving it exactly stands
in for a trained localization network.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import tps
from .attention import AttentionSamplerConfig, attention_grid
from .core import DimensionError, InvalidInput, SalresampleError, SaliencyMap, SamplingGrid
from .saliency import Composition, SaliencyConfig, map_composition


class IllConditioned(SalresampleError, np.linalg.LinAlgError):
    pass


MAX_COND = 1e14


@dataclass(frozen=True)
class WeightMask:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise DimensionError(f"mask must be 2-D, got {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidInput("mask weights must be finite and non-negative")
        w = np.ascontiguousarray(w)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.weights.shape


@dataclass(frozen=True)
class FitConfig:
    ridge_lambda: float = 1e-6
    control: tps.ControlGrid = field(default_factory=tps.ControlGrid)
    work_size: Tuple[int, int] = (64, 64)  # (height, width) of the grid the fit runs on

    def __post_init__(self):
        if not (np.isfinite(self.ridge_lambda) and self.ridge_lambda >= 0):
            raise InvalidInput(f"ridge_lambda must be finite and >= 0, got {self.ridge_lambda}")
        h, w = self.work_size
        if h < 2 or w < 2:
            raise InvalidInput(f"work_size must be at least 2x2, got {self.work_size}")
        object.__setattr__(self, "work_size", (int(h), int(w)))


@dataclass(frozen=True, eq=False)
class FitResult:
    delta: np.ndarray
    model: tps.TpsModel
    loss: float
    loss_unsquared: float
    residual_norm: float
    cond: float
    grid: SamplingGrid  # fitted grid at the working resolution

    @property
    def bending_energy(self) -> float:
        return self.model.bending_energy()


# mask triples (small, large, background) per composition; gamma fills in bg
def mask_triple(composition: Composition, gamma: float) -> Tuple[float, float, float]:
    composition = Composition(composition)
    if composition is Composition.ONLY_SMALL:
        return (1.0, 0.0, gamma)
    if composition is Composition.ONLY_LARGE:
        return (0.0, 1.0, gamma)
    if composition is Composition.MIXED:
        return (1.0, 0.0, 0.0)
    return (0.0, 0.0, 0.0)


def _nearest_resize(a: np.ndarray, out_size: Tuple[int, int]) -> np.ndarray:
    h, w = a.shape
    oh, ow = out_size
    rows = np.minimum((np.arange(oh) + 0.5) * h / oh, h - 1).astype(int)
    cols = np.minimum((np.arange(ow) + 0.5) * w / ow, w - 1).astype(int)
    return a[np.ix_(rows, cols)]


def build_mask(
    smap: SaliencyMap,
    composition: Composition,
    gamma: float = 0.5,
    out_size: Optional[Tuple[int, int]] = None,
    cfg: SaliencyConfig = SaliencyConfig(),
) -> WeightMask:
    """Per-pixel supervision weights, nearest-neighbour resized to ``out_size``."""
    o_s, o_l, bg = mask_triple(composition, gamma)
    v = smap.values
    w = np.full(v.shape, bg)
    w[v == cfg.large_label] = o_l
    w[v == cfg.small_label] = o_s
    if out_size is not None and tuple(out_size) != v.shape:
        w = _nearest_resize(w, tuple(out_size))
    return WeightMask(w)


def _grid_distances(G: SamplingGrid, G_prime: SamplingGrid, M: WeightMask) -> np.ndarray:
    if G.shape != G_prime.shape or G.shape != M.shape:
        raise DimensionError(f"shape mismatch: G {G.shape}, G' {G_prime.shape}, M {M.shape}")
    d = G.coords - G_prime.coords
    return d[..., 0] ** 2 + d[..., 1] ** 2


def loss_grid(G: SamplingGrid, G_prime: SamplingGrid, M: WeightMask) -> float:
    """Mean over cells of ``M * |G - G'|^2``."""
    d2 = _grid_distances(G, G_prime, M)
    return float(np.sum(M.weights * d2) / d2.size)


def loss_grid_unsquared(G: SamplingGrid, G_prime: SamplingGrid, M: WeightMask) -> float:
    """Diagnostic variant: mean over cells of ``M * |G - G'|``."""
    d2 = _grid_distances(G, G_prime, M)
    return float(np.sum(M.weights * np.sqrt(d2)) / d2.size)


def fit(G_prime: SamplingGrid, M: WeightMask, cfg: FitConfig = FitConfig()) -> FitResult:
    """Closed-form minimizer of ``loss_grid + ridge_lambda * |delta|^2``.

    The working resolution is taken from ``G_prime``. An all-zero mask returns
    the identity (``delta = 0``).
    """
    if G_prime.shape != M.shape:
        raise DimensionError(f"G' {G_prime.shape} and mask {M.shape} differ")
    h, w = G_prime.shape
    system = tps.build_system(cfg.control)
    n = system.n
    A = tps.grid_operator(n, h, w)
    cells = h * w
    target = G_prime.coords.reshape(-1, 2) - A @ system.points

    if not np.any(M.weights > 0):
        delta = np.zeros((n, 2))
        cond = 1.0
        residual = 0.0
    else:
        sw = np.sqrt(M.weights.reshape(-1) / cells)
        lhs = A * sw[:, None]
        rhs = target * sw[:, None]
        if cfg.ridge_lambda > 0:
            lhs = np.vstack([lhs, np.sqrt(cfg.ridge_lambda) * np.eye(n)])
            rhs = np.vstack([rhs, np.zeros((n, 2))])
        delta, _, rank, s = np.linalg.lstsq(lhs, rhs, rcond=None)
        # condition number of the equivalent normal equations
        cond = float((s[0] / s[-1]) ** 2) if s[-1] > 0 else np.inf
        if rank < n or cond > MAX_COND:
            raise IllConditioned(f"weighted fit is ill-conditioned (cond ~ {cond:.3g})")
        residual = float(np.linalg.norm(lhs @ delta - rhs))

    model = tps.solve_displacement(system, delta)
    G = tps.dense_grid(model, h, w)
    delta = np.array(delta)
    delta.setflags(write=False)
    return FitResult(
        delta=delta,
        model=model,
        loss=loss_grid(G, G_prime, M),
        loss_unsquared=loss_grid_unsquared(G, G_prime, M),
        residual_norm=residual,
        cond=cond,
        grid=G,
    )


def saliency_to_grid(
    smap: SaliencyMap,
    cfg: FitConfig = FitConfig(),
    sampler_cfg: Optional[AttentionSamplerConfig] = None,
    out_size: Tuple[int, int] = (64, 64),
    gamma: float = 0.5,
    saliency_cfg: SaliencyConfig = SaliencyConfig(),
    grid_id: Optional[str] = None,
):
    """Saliency map to sampling grid at ``out_size`` ``(height, width)``.

    Returns ``(grid, fit_result)``; the reference grid and mask are built at
    ``cfg.work_size``.
    """
    if sampler_cfg is None:
        sampler_cfg = AttentionSamplerConfig(out_size=cfg.work_size)
    elif sampler_cfg.out_size != cfg.work_size:
        sampler_cfg = AttentionSamplerConfig(sampler_cfg.floor_eps, sampler_cfg.marginal_mode, cfg.work_size)
    composition = map_composition(smap, saliency_cfg)
    G_prime = attention_grid(smap, sampler_cfg)
    M = build_mask(smap, composition, gamma, cfg.work_size, saliency_cfg)
    result = fit(G_prime, M, cfg)
    grid = tps.dense_grid(result.model, out_size[0], out_size[1], grid_id=grid_id)
    return grid, result

"""Saliency-guided, detail-preserving non-uniform image downsampling.

Detections become a saliency map, the map becomes a thin-plate-spline
sampling grid (fit in closed form against a separable attention grid), the
grid warps the frame, and detections on the warped frame are mapped back.
"""

from .attention import AttentionSamplerConfig, MarginalMode, attention_grid, marginals
from .core import (
    Detection,
    DimensionError,
    InvalidBox,
    InvalidInput,
    SaliencyMap,
    SalresampleError,
    SamplingGrid,
    Space,
    identity_grid,
    norm_to_pixel,
    pixel_to_norm,
)
from .fit import FitConfig, FitResult, WeightMask, build_mask, fit, loss_grid, saliency_to_grid
from .inverse import forward_point, invert_detections, invert_point
from .pipeline import ScheduleConfig, run_pipeline
from .saliency import Composition, SaliencyConfig, classify_size, generate_saliency, map_composition
from .tps import ControlGrid, build_system, dense_grid, evaluate, radial_basis, solve
from .warp import warp_image, warp_saliency

__version__ = "0.1.0"

__all__ = [
    "AttentionSamplerConfig",
    "Composition",
    "ControlGrid",
    "Detection",
    "DimensionError",
    "FitConfig",
    "FitResult",
    "InvalidBox",
    "InvalidInput",
    "MarginalMode",
    "SaliencyConfig",
    "SaliencyMap",
    "SalresampleError",
    "SamplingGrid",
    "ScheduleConfig",
    "Space",
    "WeightMask",
    "attention_grid",
    "build_mask",
    "build_system",
    "classify_size",
    "dense_grid",
    "evaluate",
    "fit",
    "forward_point",
    "generate_saliency",
    "identity_grid",
    "invert_detections",
    "invert_point",
    "loss_grid",
    "map_composition",
    "marginals",
    "norm_to_pixel",
    "pixel_to_norm",
    "radial_basis",
    "run_pipeline",
    "saliency_to_grid",
    "solve",
    "warp_image",
    "warp_saliency",
]

"""Static figures: deformation-field overlays and pipeline cost reports."""

from __future__ import annotations

import io as _io
from typing import Iterable, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .core import Detection, SamplingGrid, norm_to_pixel  # noqa: E402

ROLE_COLORS = {"key": "#c0392b", "resampled": "#2980b9", "propagated": "#95a5a6"}

# drop the Software tag so figures are identical across matplotlib patch releases
_PNG_META = {"Software": None}


def _figure_bytes(fig) -> bytes:
    buf = _io.BytesIO()
    fig.savefig(buf, format="png", metadata=_PNG_META)
    plt.close(fig)
    return buf.getvalue()


def overlay_figure(
    image: np.ndarray,
    grid: Optional[SamplingGrid] = None,
    detections: Iterable[Detection] = (),
    lines: int = 24,
    dpi: int = 100,
) -> bytes:
    """PNG bytes of ``image`` with the grid's sampling lines and boxes drawn on top.

    Every ``lines``-th-fraction row and column of the grid is traced in source
    pixel coordinates, so dense line bundles mark magnified regions.
    """
    h, w = image.shape[:2]
    fig = plt.figure(figsize=(w / dpi, h / dpi), dpi=dpi)
    ax = fig.add_axes([0, 0, 1, 1])
    ax.imshow(np.clip(image, 0, 1), cmap="gray" if image.ndim == 2 else None,
              vmin=0, vmax=1, interpolation="nearest")
    if grid is not None:
        px = norm_to_pixel(grid.coords, h, w)
        gh, gw = grid.shape
        for i in np.unique(np.linspace(0, gh - 1, min(lines, gh)).round().astype(int)):
            ax.plot(px[i, :, 0], px[i, :, 1], color="#f1c40f", lw=0.6, alpha=0.8)
        for j in np.unique(np.linspace(0, gw - 1, min(lines, gw)).round().astype(int)):
            ax.plot(px[:, j, 0], px[:, j, 1], color="#f1c40f", lw=0.6, alpha=0.8)
    for det in detections:
        x0, y0, x1, y1 = det.bbox
        ax.add_patch(Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False, ec="#2ecc71", lw=1.2))
    ax.set_xlim(-0.5, w - 0.5)
    ax.set_ylim(h - 0.5, -0.5)
    ax.axis("off")
    return _figure_bytes(fig)


def cost_figure(records: Sequence[dict], mean_gflops: float) -> bytes:
    """Bar chart of per-frame GFLOPs coloured by frame role."""
    idx = [r["index"] for r in records]
    cost = [r["cost_gflops"] for r in records]
    colors = [ROLE_COLORS.get(r["role"], "k") for r in records]
    fig, ax = plt.subplots(figsize=(8, 3), dpi=100)
    ax.bar(idx, cost, color=colors, width=0.9)
    ax.axhline(mean_gflops, color="k", lw=1, ls="--")
    ax.text(0.99, 0.95, f"mean {mean_gflops:.4f} GFLOPs", transform=ax.transAxes, ha="right", va="top")
    for role, color in ROLE_COLORS.items():
        ax.bar([], [], color=color, label=role)
    ax.legend(loc="upper left", fontsize=8, frameon=False)
    ax.set_xlabel("frame")
    ax.set_ylabel("GFLOPs")
    fig.tight_layout()
    return _figure_bytes(fig)

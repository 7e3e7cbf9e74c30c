"""Keyframe-scheduled video pipeline with compute accounting.

Frame 0 and every ``S``-th frame go to the heavy detector at full
resolution. Other frames are resampled with a grid derived from the previous
frame's detections, run through the light detector, and mapped back. With
``propagate_odd_frames`` the even non-key frames reuse the previous frame's
output at zero cost.
"""

from __future__ import annotations

import json
import logging
import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .attention import AttentionSamplerConfig
from .core import Detection, SalresampleError, SamplingGrid, Space, as_image, identity_grid
from .fit import FitConfig, saliency_to_grid
from .inverse import forward_detections, grid_is_monotone, invert_detections
from .saliency import SaliencyConfig, generate_saliency
from .warp import warp_image

log = logging.getLogger(__name__)

# cost of the resampling module per frame, GFLOPs
SAMPLER_GFLOPS = 0.06

# per-frame detector costs in GFLOPs, keyed by backbone
DETECTOR_GFLOPS = {
    "efficientdet-d0": 1.36,
    "efficientdet-d1": 3.20,
    "efficientdet-d2": 5.9,
    "efficientdet-d3": 13.4,
}


class DetectorError(SalresampleError, RuntimeError):
    pass


class Role(str, Enum):
    KEY = "key"
    RESAMPLED = "resampled"
    PROPAGATED = "propagated"


@dataclass(frozen=True)
class ScheduleConfig:
    keyframe_interval: int = 16
    propagate_odd_frames: bool = True
    resampled_size: Tuple[int, int] = (180, 320)  # (height, width)

    def __post_init__(self):
        if int(self.keyframe_interval) < 1:
            raise ValueError(f"keyframe_interval must be >= 1, got {self.keyframe_interval}")
        h, w = self.resampled_size
        if h < 2 or w < 2:
            raise ValueError(f"resampled_size must be at least 2x2, got {self.resampled_size}")
        object.__setattr__(self, "resampled_size", (int(h), int(w)))

    def role(self, index: int) -> Role:
        if index % self.keyframe_interval == 0:
            return Role.KEY
        if self.propagate_odd_frames and index % 2 == 0:
            return Role.PROPAGATED
        return Role.RESAMPLED


# ---------------------------------------------------------------------------
# detectors


class Detector:
    """Returns detections in the pixel frame of the image it is given.

    ``grid`` is set when the image is a resampled frame; results must then be
    tagged ``Space.RESAMPLED`` with ``grid.grid_id``.
    """

    name = "detector"
    cost_gflops = 0.0

    def detect(self, index: int, image: np.ndarray, grid: Optional[SamplingGrid] = None,
               original_dims: Optional[Tuple[int, int]] = None) -> List[Detection]:
        raise NotImplementedError


class NullDetector(Detector):
    def __init__(self, name: str = "null", cost_gflops: float = 0.0):
        self.name = name
        self.cost_gflops = float(cost_gflops)

    def detect(self, index, image, grid=None, original_dims=None):
        return []


class PlaybackDetector(Detector):
    """Replays stored original-space detections, optionally degraded.

    ``jitter_pct`` moves each box edge by up to that percentage of the box
    size, ``drop_rate`` discards boxes at random. Noise is drawn from a
    generator seeded by ``(seed, frame index)`` so results do not depend on
    call order. On resampled frames the boxes are forward-mapped through the
    grid, which makes the pipeline's inversion do real work.
    """

    def __init__(self, annotations: Mapping[int, Sequence[Detection]], name: str = "playback",
                 cost_gflops: float = 0.0, jitter_pct: float = 0.0, drop_rate: float = 0.0, seed: int = 0):
        if not 0.0 <= drop_rate <= 1.0:
            raise ValueError("drop_rate must lie in [0, 1]")
        if jitter_pct < 0:
            raise ValueError("jitter_pct must be >= 0")
        self.annotations = {int(k): list(v) for k, v in annotations.items()}
        self.name = name
        self.cost_gflops = float(cost_gflops)
        self.jitter_pct = float(jitter_pct)
        self.drop_rate = float(drop_rate)
        self.seed = int(seed)

    def stored(self, index: int, image_dims: Tuple[int, int]) -> List[Detection]:
        dets = self.annotations.get(index, [])
        if self.jitter_pct == 0 and self.drop_rate == 0:
            return list(dets)
        rng = np.random.default_rng([self.seed, index])
        h, w = image_dims
        out = []
        for det in dets:
            keep = rng.random() >= self.drop_rate
            noise = rng.uniform(-1.0, 1.0, 4) * self.jitter_pct / 100.0
            if not keep:
                continue
            x0, y0, x1, y1 = det.bbox
            bw, bh = x1 - x0, y1 - y0
            box = np.array([x0 + noise[0] * bw, y0 + noise[1] * bh, x1 + noise[2] * bw, y1 + noise[3] * bh])
            box[[0, 2]] = np.clip(box[[0, 2]], 0, w - 1)
            box[[1, 3]] = np.clip(box[[1, 3]], 0, h - 1)
            if box[0] < box[2] and box[1] < box[3]:
                out.append(det.retag(box, Space.ORIGINAL))
        return out

    def detect(self, index, image, grid=None, original_dims=None):
        if grid is None:
            return self.stored(index, image.shape[:2])
        dets = self.stored(index, original_dims)
        return forward_detections(dets, grid, original_dims)


def parse_detection_payload(text: str, space: Space = Space.ORIGINAL, grid_id: Optional[str] = None) -> List[Detection]:
    """Parse detector stdout: a detection-file document or a bare list of entries."""
    try:
        doc = json.loads(text)
        entries = doc["detections"] if isinstance(doc, dict) else doc
        out = []
        for e in entries:
            x, y, bw, bh = (float(v) for v in e["bbox"])
            out.append(Detection((x, y, x + bw, y + bh), float(e.get("score", 1.0)),
                                 int(e.get("category_id", 0)), space, grid_id))
        return out
    except (ValueError, KeyError, TypeError) as exc:
        raise DetectorError(f"could not parse detector output: {exc}") from exc


class CommandDetector(Detector):
    """Runs an external program per frame.

    The frame is written to a temporary PNG whose path replaces ``{input}`` in
    the argument template; the program prints detection JSON on stdout.
    """

    def __init__(self, command, name: str = "command", cost_gflops: float = 0.0, timeout: float = 60.0):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise ValueError("empty detector command")
        self.name = name
        self.cost_gflops = float(cost_gflops)
        self.timeout = timeout

    def detect(self, index, image, grid=None, original_dims=None):
        from .io import write_image

        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, f"frame_{index:06d}.png")
            write_image(path, image)
            argv = [a.replace("{input}", path) for a in self.argv]
            try:
                proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
            except subprocess.TimeoutExpired as exc:
                raise DetectorError(f"timeout after {self.timeout}s: {argv[0]}") from exc
            except OSError as exc:
                raise DetectorError(f"could not run {argv[0]}: {exc}") from exc
        if proc.returncode != 0:
            raise DetectorError(f"{argv[0]} exited with {proc.returncode}: {proc.stderr.strip()[:500]}")
        if grid is None:
            return parse_detection_payload(proc.stdout)
        return parse_detection_payload(proc.stdout, Space.RESAMPLED, grid.grid_id)


# ---------------------------------------------------------------------------
# running


@dataclass(frozen=True)
class FrameRecord:
    index: int
    role: Role
    detections: Tuple[Detection, ...]
    cost_gflops: float
    grid_id: Optional[str] = None
    failed: bool = False
    error: Optional[str] = None
    dropped: int = 0
    grid_monotone: Optional[bool] = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "role": self.role.value,
            "cost_gflops": self.cost_gflops,
            "grid_id": self.grid_id,
            "failed": self.failed,
            "error": self.error,
            "dropped": self.dropped,
            "grid_monotone": self.grid_monotone,
            "detections": [
                {"bbox": list(d.bbox), "score": d.score, "category_id": d.category}
                for d in self.detections
            ],
        }


@dataclass
class PipelineResult:
    records: List[FrameRecord] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _exact(v: float) -> Fraction:
    # decimal reading of the float, so 1.36 counts as 136/100
    return Fraction(repr(float(v)))


def expected_mean_cost(n_frames: int, sched: ScheduleConfig, c_key: float, c_light: float,
                       c_sampler: float = SAMPLER_GFLOPS) -> Fraction:
    """Closed-form mean per-frame cost of a schedule, in exact arithmetic."""
    counts = {r: 0 for r in Role}
    for i in range(n_frames):
        counts[sched.role(i)] += 1
    total = counts[Role.KEY] * _exact(c_key) + counts[Role.RESAMPLED] * (_exact(c_light) + _exact(c_sampler))
    return total / n_frames


def run_pipeline(
    frames: Iterable,
    d_key: Detector,
    d_light: Detector,
    sched: ScheduleConfig = ScheduleConfig(),
    saliency_cfg: SaliencyConfig = SaliencyConfig(),
    sampler_cfg: Optional[AttentionSamplerConfig] = None,
    fit_cfg: FitConfig = FitConfig(),
    gamma: float = 0.5,
    sampler_gflops: float = SAMPLER_GFLOPS,
    on_record=None,
) -> PipelineResult:
    """Process ``frames`` (an iterable of float images) in order.

    ``on_record`` is called with each :class:`FrameRecord` as soon as it is
    complete, which lets callers stream results.
    """
    result = PipelineResult()
    prev: Optional[List[Detection]] = []
    total = Fraction(0)
    counts = {r.value: 0 for r in Role}
    failed = 0
    dropped_total = 0
    n = 0
    for index, frame in enumerate(frames):
        image = as_image(frame)
        dims = image.shape[:2]
        role = sched.role(index)
        grid_id = None
        cost = Fraction(0)
        dets: List[Detection] = []
        error = None
        dropped = 0
        monotone = None
        try:
            if role is Role.KEY:
                cost = _exact(d_key.cost_gflops)
                dets = list(d_key.detect(index, image))
            elif role is Role.PROPAGATED:
                dets = list(prev or [])
            else:
                cost = _exact(d_light.cost_gflops) + _exact(sampler_gflops)
                grid_id = f"frame{index:06d}"
                h, w = sched.resampled_size
                if prev is None:
                    grid = identity_grid(h, w).with_id(grid_id)
                else:
                    smap = generate_saliency(prev, dims, saliency_cfg)
                    grid, _ = saliency_to_grid(smap, fit_cfg, sampler_cfg, (h, w), gamma,
                                               saliency_cfg, grid_id=grid_id)
                monotone = grid_is_monotone(grid)
                warped = warp_image(image, grid)
                raw = d_light.detect(index, warped, grid, dims)
                dets, dropped = invert_detections(raw, grid, dims)
        except DetectorError as exc:
            log.warning("frame %d: %s", index, exc)
            error = str(exc)
            dets = []
        record = FrameRecord(index, role, tuple(dets), float(cost), grid_id,
                             error is not None, error, dropped, monotone)
        prev = None if error is not None else dets
        total += cost
        counts[role.value] += 1
        failed += error is not None
        dropped_total += dropped
        n += 1
        result.records.append(record)
        if on_record is not None:
            on_record(record)
    if n == 0:
        raise ValueError("frame source is empty")
    result.summary = {
        "frames": n,
        "key_frames": counts[Role.KEY.value],
        "resampled_frames": counts[Role.RESAMPLED.value],
        "propagated_frames": counts[Role.PROPAGATED.value],
        "failed_frames": failed,
        "dropped_boxes": dropped_total,
        "total_gflops": float(total),
        "mean_gflops": float(total / n),
        "keyframe_interval": sched.keyframe_interval,
        "propagate_odd_frames": sched.propagate_odd_frames,
        "detectors": {
            "key": {"name": d_key.name, "cost_gflops": d_key.cost_gflops},
            "light": {"name": d_light.name, "cost_gflops": d_light.cost_gflops},
            "sampler_gflops": sampler_gflops,
        },
        "marginal_mode": (sampler_cfg or AttentionSamplerConfig()).marginal_mode.value,
        "control_points": fit_cfg.control.n,
    }
    return result

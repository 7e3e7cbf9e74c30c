"""File formats: detection JSON, binary grids, saliency rasters, images, config.

Every writer goes through a temp file and ``os.replace`` so readers never see
a half-written file, and every format round-trips byte for byte.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import tomli
import tomli_w
from PIL import Image

from . import tps
from .attention import AttentionSamplerConfig, MarginalMode
from .core import Detection, SalresampleError, SaliencyMap, SamplingGrid, Space, as_image, identity_coords
from .fit import FitConfig
from .pipeline import (
    SAMPLER_GFLOPS,
    CommandDetector,
    Detector,
    NullDetector,
    PlaybackDetector,
    ScheduleConfig,
)
from .saliency import SaliencyConfig


class FormatError(SalresampleError, ValueError):
    pass


def atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# detection files (COCO-style, bbox = [x, y, w, h])


@dataclass(frozen=True)
class DetectionEntry:
    image_id: Any
    bbox: Tuple[float, float, float, float]  # x, y, w, h as stored
    score: float
    category_id: int

    def to_detection(self, space: Space = Space.ORIGINAL, grid_id: Optional[str] = None) -> Detection:
        x, y, w, h = self.bbox
        return Detection((x, y, x + w, y + h), self.score, self.category_id, space, grid_id)

    @classmethod
    def from_detection(cls, image_id, det: Detection) -> "DetectionEntry":
        x0, y0, x1, y1 = det.bbox
        return cls(image_id, (x0, y0, x1 - x0, y1 - y0), det.score, det.category)


@dataclass
class DetectionFile:
    images: List[dict] = field(default_factory=list)
    detections: List[DetectionEntry] = field(default_factory=list)
    space: Space = Space.ORIGINAL
    grid_id: Optional[str] = None

    def image(self, image_id=None) -> dict:
        if image_id is None:
            if len(self.images) != 1:
                raise FormatError("file lists several images; pick one by id")
            return self.images[0]
        for im in self.images:
            if im["id"] == image_id:
                return im
        raise FormatError(f"no image with id {image_id!r}")

    def for_image(self, image_id) -> List[Detection]:
        return [e.to_detection(self.space, self.grid_id) for e in self.detections if e.image_id == image_id]

    def to_json(self) -> dict:
        doc = {
            "images": self.images,
            "detections": [
                {"image_id": e.image_id, "bbox": list(e.bbox), "score": e.score, "category_id": e.category_id}
                for e in self.detections
            ],
        }
        if self.space is Space.RESAMPLED:
            doc["space"] = self.space.value
            doc["grid_id"] = self.grid_id
        return doc

    @classmethod
    def from_json(cls, doc) -> "DetectionFile":
        try:
            images = list(doc["images"])
            ids = set()
            for im in images:
                if int(im["width"]) < 1 or int(im["height"]) < 1:
                    raise FormatError(f"bad image size in {im}")
                ids.add(im["id"])
            entries = []
            for d in doc["detections"]:
                bbox = tuple(float(v) for v in d["bbox"])
                if len(bbox) != 4 or bbox[2] <= 0 or bbox[3] <= 0:
                    raise FormatError(f"bbox needs positive width and height: {d['bbox']}")
                score = float(d.get("score", 1.0))
                if not 0.0 <= score <= 1.0:
                    raise FormatError(f"score outside [0, 1]: {score}")
                if d["image_id"] not in ids:
                    raise FormatError(f"unknown image_id {d['image_id']!r}")
                entries.append(DetectionEntry(d["image_id"], bbox, score, int(d.get("category_id", 0))))
            space = Space(doc.get("space", "original"))
            grid_id = doc.get("grid_id")
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"malformed detection file: {exc}") from exc
        return cls(images, entries, space, grid_id)


def dumps_json(doc) -> bytes:
    return (json.dumps(doc, indent=2) + "\n").encode()


def read_detection_file(path) -> DetectionFile:
    try:
        with open(path, "rb") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return DetectionFile.from_json(doc)


def write_detection_file(path, dfile: DetectionFile) -> None:
    atomic_write(path, dumps_json(dfile.to_json()))


# ---------------------------------------------------------------------------
# grid files

GRID_MAGIC = b"SGRD"
GRID_VERSION = 1
_GRID_HEADER = struct.Struct("<4sHIIB")


def grid_to_bytes(grid: SamplingGrid) -> bytes:
    h, w = grid.shape
    header = _GRID_HEADER.pack(GRID_MAGIC, GRID_VERSION, h, w, 1 if grid.clamped else 0)
    return header + grid.coords.astype("<f4").tobytes()


def grid_from_bytes(data: bytes, grid_id: Optional[str] = None) -> SamplingGrid:
    if len(data) < _GRID_HEADER.size:
        raise FormatError("grid file too short")
    magic, version, h, w, flags = _GRID_HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise FormatError(f"bad grid magic {magic!r}")
    if version != GRID_VERSION:
        raise FormatError(f"unsupported grid version {version}")
    expected = _GRID_HEADER.size + 8 * h * w
    if len(data) != expected:
        raise FormatError(f"grid file is {len(data)} bytes, expected {expected}")
    coords = np.frombuffer(data, dtype="<f4", offset=_GRID_HEADER.size).reshape(h, w, 2)
    out = coords.astype(np.float64)
    if h >= 2 and w >= 2:
        # entries that are the identity lattice at f32 precision decode to the
        # exact f64 lattice value, so identity grids survive a file round trip
        ident = identity_coords(h, w)
        on_lattice = ident.astype("<f4") == coords
        out[on_lattice] = ident[on_lattice]
    return SamplingGrid(out, clamped=bool(flags & 1), grid_id=grid_id)


def write_grid(path, grid: SamplingGrid) -> None:
    atomic_write(path, grid_to_bytes(grid))


def read_grid(path, grid_id: Optional[str] = None) -> SamplingGrid:
    with open(path, "rb") as fh:
        data = fh.read()
    if grid_id is None:
        grid_id = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    return grid_from_bytes(data, grid_id)


# ---------------------------------------------------------------------------
# saliency rasters: binary 16-bit PGM

# even maxval so the 0.5 label encodes exactly as half of it
PGM_MAXVAL = 65534


def saliency_to_pgm(smap: SaliencyMap) -> bytes:
    h, w = smap.shape
    raster = np.rint(smap.values * PGM_MAXVAL).astype(">u2")
    return f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode() + raster.tobytes()


def saliency_from_pgm(data: bytes) -> SaliencyMap:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise FormatError(f"expected binary PGM (P5), got {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    size = h * w * np.dtype(dtype).itemsize
    if len(data) - pos != size:
        raise FormatError(f"PGM payload is {len(data) - pos} bytes, expected {size}")
    raster = np.frombuffer(data, dtype=dtype, offset=pos).reshape(h, w)
    return SaliencyMap(raster.astype(np.float64) / maxval)


def write_saliency(path, smap: SaliencyMap) -> None:
    atomic_write(path, saliency_to_pgm(smap))


def read_saliency(path) -> SaliencyMap:
    with open(path, "rb") as fh:
        return saliency_from_pgm(fh.read())


# ---------------------------------------------------------------------------
# images (8-bit PNG / PPM / PGM through Pillow)


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from exc
    return arr


def image_to_uint8(img) -> np.ndarray:
    a = as_image(img)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    return np.rint(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, img) -> None:
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    fmt = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM", ".pnm": "PPM"}.get(ext)
    if fmt is None:
        raise FormatError(f"unsupported image extension {ext!r} (use .png or .ppm)")
    import io as _io

    buf = _io.BytesIO()
    Image.fromarray(image_to_uint8(img)).save(buf, format=fmt)
    atomic_write(path, buf.getvalue())


# ---------------------------------------------------------------------------
# run configuration (TOML)


@dataclass
class DetectorSpec:
    name: str = "null"
    kind: str = "null"  # null | playback | command
    cost_gflops: float = 0.0
    path: Optional[str] = None  # playback annotations
    command: Optional[str] = None
    timeout: float = 60.0
    jitter_pct: float = 0.0
    drop_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("null", "playback", "command"):
            raise FormatError(f"unknown detector kind {self.kind!r}")
        if not (np.isfinite(self.cost_gflops) and self.cost_gflops >= 0):
            raise FormatError(f"cost_gflops must be finite and >= 0, got {self.cost_gflops}")
        if self.kind == "playback" and not self.path:
            raise FormatError(f"playback detector {self.name!r} needs a path")
        if self.kind == "command" and not self.command:
            raise FormatError(f"command detector {self.name!r} needs a command")

    def build(self, seed: int = 0, base_dir: str = ".") -> Detector:
        if self.kind == "null":
            return NullDetector(self.name, self.cost_gflops)
        if self.kind == "command":
            return CommandDetector(self.command, self.name, self.cost_gflops, self.timeout)
        path = self.path if os.path.isabs(self.path) else os.path.join(base_dir, self.path)
        return PlaybackDetector(load_annotations(path), self.name, self.cost_gflops,
                                self.jitter_pct, self.drop_rate, seed)


def load_annotations(path) -> Dict[int, List[Detection]]:
    """Detection file -> ``{frame index: detections}``.

    Images are put in frame order by their ``frame`` field when present,
    otherwise by their position in the ``images`` list.
    """
    dfile = read_detection_file(path)
    out = {}
    for pos, im in enumerate(dfile.images):
        out[int(im.get("frame", pos))] = dfile.for_image(im["id"])
    return out


@dataclass
class RunConfig:
    saliency: SaliencyConfig = field(default_factory=SaliencyConfig)
    sampler: AttentionSamplerConfig = field(default_factory=AttentionSamplerConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    gamma: float = 0.5
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    key_detector: DetectorSpec = field(default_factory=lambda: DetectorSpec("efficientdet-d1", "null", 3.2))
    light_detector: DetectorSpec = field(default_factory=lambda: DetectorSpec("efficientdet-d0", "null", 1.36))
    sampler_gflops: float = SAMPLER_GFLOPS
    seed: int = 0


_SECTION_KEYS = {
    "saliency": {"tau", "alpha_pct", "small_label", "large_label", "background_label", "out_size"},
    "sampler": {"floor_eps", "marginal_mode"},
    "fit": {"ridge_lambda", "control_points", "work_size", "gamma"},
    "schedule": {"keyframe_interval", "propagate_odd_frames", "resampled_size"},
    "costs": {"sampler_gflops"},
}
_DETECTOR_KEYS = {f.name for f in fields(DetectorSpec)}


def _check_keys(where: str, got, allowed) -> None:
    unknown = set(got) - set(allowed)
    if unknown:
        raise FormatError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")


def config_from_dict(doc: dict) -> RunConfig:
    _check_keys("top level", doc, set(_SECTION_KEYS) | {"detectors", "seed"})
    for sec, allowed in _SECTION_KEYS.items():
        _check_keys(sec, doc.get(sec, {}), allowed)
    dets = doc.get("detectors", {})
    _check_keys("detectors", dets, {"key", "light"})
    for role in ("key", "light"):
        _check_keys(f"detectors.{role}", dets.get(role, {}), _DETECTOR_KEYS)

    cfg = RunConfig()
    try:
        s = dict(doc.get("saliency", {}))
        if "out_size" in s:
            s["out_size"] = tuple(s["out_size"])
        saliency = replace(cfg.saliency, **s)

        f = dict(doc.get("fit", {}))
        gamma = float(f.pop("gamma", cfg.gamma))
        control = tps.ControlGrid(int(f.pop("control_points", cfg.fit.control.n)))
        if "work_size" in f:
            f["work_size"] = tuple(f["work_size"])
        fit = replace(cfg.fit, control=control, **f)

        sampler = replace(cfg.sampler, out_size=fit.work_size, **doc.get("sampler", {}))

        sc = dict(doc.get("schedule", {}))
        if "resampled_size" in sc:
            sc["resampled_size"] = tuple(sc["resampled_size"])
        schedule = replace(cfg.schedule, **sc)

        key = DetectorSpec(**{**vars(cfg.key_detector), **dets.get("key", {})})
        light = DetectorSpec(**{**vars(cfg.light_detector), **dets.get("light", {})})
        sampler_gflops = float(doc.get("costs", {}).get("sampler_gflops", cfg.sampler_gflops))
        seed = int(doc.get("seed", cfg.seed))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"invalid configuration: {exc}") from exc
    return RunConfig(saliency, sampler, fit, gamma, schedule, key, light, sampler_gflops, seed)


def config_to_dict(cfg: RunConfig) -> dict:
    def det(d: DetectorSpec) -> dict:
        return {k: v for k, v in vars(d).items() if v is not None}

    return {
        "seed": cfg.seed,
        "saliency": {
            "tau": cfg.saliency.tau,
            "alpha_pct": cfg.saliency.alpha_pct,
            "small_label": cfg.saliency.small_label,
            "large_label": cfg.saliency.large_label,
            "background_label": cfg.saliency.background_label,
            "out_size": list(cfg.saliency.out_size),
        },
        "sampler": {
            "floor_eps": cfg.sampler.floor_eps,
            "marginal_mode": MarginalMode(cfg.sampler.marginal_mode).value,
        },
        "fit": {
            "ridge_lambda": cfg.fit.ridge_lambda,
            "control_points": cfg.fit.control.n,
            "work_size": list(cfg.fit.work_size),
            "gamma": cfg.gamma,
        },
        "schedule": {
            "keyframe_interval": cfg.schedule.keyframe_interval,
            "propagate_odd_frames": cfg.schedule.propagate_odd_frames,
            "resampled_size": list(cfg.schedule.resampled_size),
        },
        "costs": {"sampler_gflops": cfg.sampler_gflops},
        "detectors": {"key": det(cfg.key_detector), "light": det(cfg.light_detector)},
    }


def loads_config(text: str) -> RunConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise FormatError(f"config is not valid TOML: {exc}") from exc
    return config_from_dict(doc)


def dumps_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def read_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        return loads_config(fh.read().decode())


def write_config(path, cfg: RunConfig) -> None:
    atomic_write(path, dumps_config(cfg).encode())

"""Datasets: MNIST IDX files, mean-pool downscaling, planted-noise 2D data."""
from __future__ import annotations

import gzip
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .linrules import Box

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
_IDX_MAGIC = {3: IDX_IMAGES, 1: IDX_LABELS}


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    input_bounds: Box
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise DataFormatError("inputs must be (n, d) with one label per row")
        if self.inputs.shape[1] != self.input_bounds.dim:
            raise DataFormatError("input bounds do not match input width")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def load_idx(path, raw_bytes: bool = False) -> np.ndarray:
    """Read an IDX file (optionally gzipped). Image payloads come back as
    float32 scaled to [0, 1] unless ``raw_bytes``; label payloads as uint8."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated header at byte offset {len(raw)}")
    magic, = struct.unpack(">I", raw[:4])
    if magic not in (IDX_IMAGES, IDX_LABELS):
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x} at byte offset 0")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated dimension header at byte offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + int(np.prod(dims))
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} bytes, found {len(raw)} "
            f"(payload starts at byte offset {header})")
    data = np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)
    if magic == IDX_IMAGES and not raw_bytes:
        return data.astype(np.float32) / 255.0
    return data.copy()


def write_idx(path, array) -> None:
    """Write a uint8 array as IDX (gzip when the name ends in ``.gz``)."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise DataFormatError("IDX payloads are unsigned bytes")
    if arr.ndim not in _IDX_MAGIC:
        raise DataFormatError("only 1-d label and 3-d image IDX files are supported")
    blob = struct.pack(">I", _IDX_MAGIC[arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    blob += arr.tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(blob)


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"),
                 stem.replace("-idx", ".idx") + ".gz"):
        if (directory / name).exists():
            return directory / name
    raise FileNotFoundError(f"no {stem}[.gz] under {directory}")


def load_mnist(directory, split: str = "train", side: int = 28) -> Dataset:
    """Load an MNIST split from the standard IDX file names, flattened, with
    optional mean-pool downscaling to ``side x side``."""
    directory = Path(directory)
    prefix = "train" if split == "train" else "t10k"
    images = load_idx(_find(directory, f"{prefix}-images-idx3-ubyte"))
    labels = load_idx(_find(directory, f"{prefix}-labels-idx1-ubyte"))
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError("image and label counts differ")
    if side != images.shape[1]:
        images = downscale(images, side)
    flat = images.reshape(images.shape[0], -1)
    return Dataset(flat, labels, Box.cube(flat.shape[1], 0.0, 1.0), split,
                   {"source": "mnist", "side": side})


def default_mnist_dir() -> Optional[Path]:
    for cand in (os.environ.get("SDN_MNIST_DIR"), "data/mnist",
                 Path(__file__).resolve().parents[2] / "data" / "mnist"):
        if cand and Path(cand).is_dir():
            try:
                _find(Path(cand), "train-images-idx3-ubyte")
            except FileNotFoundError:
                continue
            return Path(cand)
    return None


def downscale(images, side: int) -> np.ndarray:
    """Mean-pool square images down to ``side x side``."""
    images = np.asarray(images)
    n, h, w = images.shape
    if h != w or h % side:
        raise ValueError(f"cannot pool {h}x{w} images to {side}x{side}")
    k = h // side
    return images.reshape(n, side, k, side, k).mean(axis=(2, 4), dtype=np.float64).astype(
        images.dtype if images.dtype.kind == "f" else np.float64)


# -- synthetic ----------------------------------------------------------------

@dataclass
class Synth2DConfig:
    """Planted-noise 2D layout on the unit square.

    Class 0 covers the top-right rectangle and a small disc at the lower
    left (the planted noise); class 1 is everything else.
    """

    main_lower: tuple = (0.5, 0.5)
    main_upper: tuple = (1.0, 1.0)
    blob_center: tuple = (0.2, 0.2)
    blob_radius: float = 0.08
    n_points: int = 2000
    blob_points: int = 150
    label_noise: bool = False
    noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = np.asarray(self.main_lower), np.asarray(self.main_upper)
        c = np.asarray(self.blob_center)
        if np.any(lo >= hi) or np.any(lo < 0) or np.any(hi > 1):
            raise ValueError("main region must be a proper rectangle in [0,1]^2")
        if self.blob_radius < 0 or np.any(c - self.blob_radius < 0) or np.any(c + self.blob_radius > 1):
            raise ValueError("blob must lie inside [0,1]^2")
        nearest = np.clip(c, lo, hi)
        if self.blob_radius > 0 and np.linalg.norm(nearest - c) <= self.blob_radius:
            raise ValueError("blob overlaps the main region")

    def in_main(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts > self.main_lower) & (pts < self.main_upper), axis=1)

    def in_blob(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.linalg.norm(pts - np.asarray(self.blob_center), axis=1) < self.blob_radius

    def label(self, pts) -> np.ndarray:
        return np.where(self.in_main(pts) | self.in_blob(pts), 0, 1)


def gen_synth2d(config: Optional[Synth2DConfig] = None) -> Dataset:
    config = config or Synth2DConfig()
    rng = np.random.default_rng(config.seed)
    pts = rng.uniform(0, 1, size=(config.n_points, 2))
    if config.blob_radius > 0 and config.blob_points:
        r = config.blob_radius * np.sqrt(rng.uniform(0, 1, config.blob_points))
        t = rng.uniform(0, 2 * np.pi, config.blob_points)
        blob = np.asarray(config.blob_center) + np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
        pts = np.concatenate([pts, blob])
    labels = config.label(pts)
    if config.label_noise and config.noise_rate > 0:
        flip = rng.uniform(size=labels.shape[0]) < config.noise_rate
        labels = np.where(flip, 1 - labels, labels)
    meta = {"source": "synth2d", "geometry": asdict(config)}
    return Dataset(pts, labels, Box.cube(2, 0.0, 1.0), "train", meta)


# -- cache --------------------------------------------------------------------

def save_dataset(ds: Dataset, stem) -> None:
    """Flat binary (float32 inputs then int32 labels) plus a JSON sidecar."""
    stem = Path(stem)
    x = np.ascontiguousarray(ds.inputs, dtype="<f4")
    y = np.ascontiguousarray(ds.labels, dtype="<i4")
    with open(stem.with_suffix(".bin"), "wb") as fh:
        fh.write(x.tobytes())
        fh.write(y.tobytes())
    side = {"shape": list(x.shape), "dtype": "float32", "label_dtype": "int32",
            "split": ds.split, "input_bounds": ds.input_bounds.to_json(), "meta": ds.meta}
    with open(stem.with_suffix(".json"), "w") as fh:
        json.dump(side, fh, indent=1)


def load_dataset(stem) -> Dataset:
    stem = Path(stem)
    if stem.suffix in (".bin", ".json"):
        stem = stem.with_suffix("")
    with open(stem.with_suffix(".json")) as fh:
        side = json.load(fh)
    n, d = side["shape"]
    raw = stem.with_suffix(".bin").read_bytes()
    if len(raw) != 4 * n * d + 4 * n:
        raise DataFormatError(f"{stem}.bin: expected {4 * n * d + 4 * n} bytes, found {len(raw)}")
    x = np.frombuffer(raw, dtype="<f4", count=n * d).reshape(n, d).astype(np.float64)
    y = np.frombuffer(raw, dtype="<i4", offset=4 * n * d, count=n).astype(np.int64)
    return Dataset(x, y, Box.from_json(side["input_bounds"]), side.get("split", "train"),
                   side.get("meta", {}))

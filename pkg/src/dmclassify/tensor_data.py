"""Dataset representation, per-sample standardization, tensor I/O, and
synthetic phantom generation.

Samples are dense (slices, height, width, channels) intensity tensors.
Tensor files use a small binary framing ("TNS1"): magic, u32 ndim, ndim
u32 dims, then a row-major float32 payload. A dataset is a CSV manifest
``id,label,age,path`` plus one tensor file per row.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateSampleError,
    DuplicateIdError,
    ManifestParseError,
    ShapeMismatchError,
    TensorParseError,
)

TENSOR_MAGIC = b"TNS1"

# Below this, a sample is considered constant and refuses to standardize.
DEGENERATE_SDEV = 1e-12


@dataclass(frozen=True)
class SampleTensor:
    """One subject's image stack with optional class label and age."""

    id: str
    data: np.ndarray  # (slices, height, width, channels)
    label: Optional[int] = None
    age: Optional[float] = None

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ShapeMismatchError(
                f"sample {self.id}: expected 4-d tensor, got {self.data.ndim}-d"
            )
        if any(d < 1 for d in self.data.shape):
            raise ShapeMismatchError(f"sample {self.id}: empty dimension in {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise TensorParseError(f"sample {self.id}: non-finite values")

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def flat(self) -> np.ndarray:
        return np.asarray(self.data, dtype=np.float64).ravel()


@dataclass(frozen=True)
class NormalizationStats:
    """Per-sample grand mean and standard deviation used for z-scoring."""

    mean: float
    sdev: float


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of same-shape samples with unique ids."""

    samples: tuple
    class_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        shape = None
        counts: dict = {}
        for s in self.samples:
            if s.id in seen:
                raise DuplicateIdError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
            if shape is None:
                shape = s.shape
            elif s.shape != shape:
                raise ShapeMismatchError(
                    f"sample {s.id}: shape {s.shape} != dataset shape {shape}"
                )
            if s.label is not None:
                counts[int(s.label)] = counts.get(int(s.label), 0) + 1
        object.__setattr__(self, "class_counts", counts)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def shape(self) -> Optional[tuple]:
        return self.samples[0].shape if self.samples else None

    def ids(self) -> list:
        return [s.id for s in self.samples]

    def labels(self) -> np.ndarray:
        """Labels as an int array; raises naming the first unlabeled sample."""
        for s in self.samples:
            if s.label is None:
                raise ManifestParseError(f"sample {s.id} has no label")
        return np.array([int(s.label) for s in self.samples], dtype=np.int64)


def standardize(sample: SampleTensor) -> tuple[SampleTensor, NormalizationStats]:
    """Z-score one sample with its own grand mean and standard deviation.

    The mean is taken over all elements and the deviation uses the
    element_count - 1 denominator. Constant samples raise
    DegenerateSampleError so the caller can decide to drop or keep them.
    """
    x = np.asarray(sample.data, dtype=np.float64)
    mean = float(x.mean())
    centered = x - mean
    sdev = float(np.sqrt(np.sum(centered * centered) / (x.size - 1))) if x.size > 1 else 0.0
    if sdev < DEGENERATE_SDEV:
        raise DegenerateSampleError(f"sample {sample.id}: standard deviation {sdev:.3e}")
    out = SampleTensor(sample.id, centered / sdev, sample.label, sample.age)
    return out, NormalizationStats(mean=mean, sdev=sdev)


def standardize_dataset(dataset: Dataset) -> Dataset:
    """Standardize every sample; propagates DegenerateSampleError."""
    return Dataset(tuple(standardize(s)[0] for s in dataset))


def flatten_dataset(dataset: Dataset) -> np.ndarray:
    """Row-per-sample float64 matrix of the (already standardized) tensors."""
    if len(dataset) == 0:
        return np.zeros((0, 0))
    return np.stack([s.flat() for s in dataset])


def write_tensor(path, data: np.ndarray) -> None:
    """Write a tensor in the TNS1 framing (float32 payload, little-endian)."""
    arr = np.ascontiguousarray(data, dtype="<f4")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    """Read a TNS1 tensor file back into a float32 array."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise TensorParseError(f"cannot read tensor file {path}: {exc}") from exc
    if len(blob) < 8 or blob[:4] != TENSOR_MAGIC:
        raise TensorParseError(f"{path}: bad magic, not a TNS1 file")
    (ndim,) = struct.unpack_from("<I", blob, 4)
    header_end = 8 + 4 * ndim
    if ndim < 1 or len(blob) < header_end:
        raise TensorParseError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", blob, 8)
    count = int(np.prod(dims))
    payload = blob[header_end:]
    if len(payload) != 4 * count:
        raise TensorParseError(
            f"{path}: payload is {len(payload)} bytes, expected {4 * count}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def save_dataset(dataset: Dataset, out_dir) -> Path:
    """Write manifest.csv plus one .tns file per sample; returns manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "age", "path"])
        for s in dataset:
            rel = f"{s.id}.tns"
            write_tensor(out_dir / rel, s.data)
            writer.writerow(
                [
                    s.id,
                    "" if s.label is None else int(s.label),
                    "" if s.age is None else repr(float(s.age)),
                    rel,
                ]
            )
    return manifest


def load_dataset(manifest_path) -> Dataset:
    """Load a dataset from a manifest CSV; tensor paths are relative to it."""
    manifest_path = Path(manifest_path)
    try:
        with manifest_path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != [
                "id",
                "label",
                "age",
                "path",
            ]:
                raise ManifestParseError(
                    f"{manifest_path}: header must be id,label,age,path"
                )
            rows = list(reader)
    except OSError as exc:
        raise ManifestParseError(f"cannot read manifest {manifest_path}: {exc}") from exc

    base = manifest_path.parent
    samples = []
    for lineno, row in enumerate(rows, start=2):
        sid = (row.get("id") or "").strip()
        if not sid:
            raise ManifestParseError(f"{manifest_path}:{lineno}: empty id")
        raw_label = (row.get("label") or "").strip()
        raw_age = (row.get("age") or "").strip()
        rel = (row.get("path") or "").strip()
        if not rel:
            raise ManifestParseError(f"{manifest_path}:{lineno}: empty path")
        try:
            label = None if raw_label == "" else int(raw_label)
            age = None if raw_age == "" else float(raw_age)
        except ValueError as exc:
            raise ManifestParseError(f"{manifest_path}:{lineno}: {exc}") from exc
        if label is not None and label not in (0, 1):
            raise ManifestParseError(
                f"{manifest_path}:{lineno}: label must be 0 or 1, got {label}"
            )
        data = read_tensor(base / rel)
        samples.append(SampleTensor(sid, data, label, age))
    return Dataset(tuple(samples))


def _soft_disc(yy, xx, cy, cx, radius, sharpness=1.5):
    """Smooth indicator of a disc; sigmoid falloff keeps edges sub-pixel."""
    r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return 1.0 / (1.0 + np.exp((r - radius) / sharpness * 4.0))


def _render_striata(h, w, abnormal, geom):
    """Render one slice: two crescents (normal) or shrunken ovals (abnormal).

    ``geom`` carries per-sample jitter drawn upstream so the field stays a
    pure function of its arguments.
    """
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy = h * (0.5 + geom["cy_jit"])
    dx = w * (0.18 + geom["dx_jit"])
    base_r = min(h, w) * (0.17 + geom["r_jit"])
    img = np.zeros((h, w))
    for side in (-1.0, 1.0):
        cx = w * 0.5 + side * dx
        if not abnormal:
            # Comma: full disc minus an inner disc pushed toward the midline,
            # which hollows the medial edge into a crescent.
            body = _soft_disc(yy, xx, cy, cx, base_r)
            bite = _soft_disc(yy, xx, cy + 0.25 * base_r, cx - side * 0.85 * base_r, 0.8 * base_r)
            shape = np.clip(body - 0.85 * bite, 0.0, 1.0)
            amp = geom["amp"]
        else:
            # Putamen loss: the crescent shrinks toward a dimmer oval; one
            # side may be hit harder than the other.
            shrink = geom["shrink"] * (geom["asym"] if side > 0 else 1.0)
            body = _soft_disc(yy, xx, cy, cx, base_r * shrink)
            shape = body
            amp = geom["amp"] * geom["dim"]
        img += amp * shape
    return img


def generate_phantoms(
    n_per_class: int,
    shape: Sequence[int] = (1, 24, 24, 1),
    noise_sigma: float = 0.3,
    seed: int = 0,
) -> Dataset:
    """Deterministic synthetic dataset of normal/abnormal striatal phantoms.

    Class 0 renders two bright comma shapes symmetric about the vertical
    midline; class 1 renders shrunken, dimmer oval blobs with mild
    asymmetry. Gaussian noise with the given sigma is added on top. The
    noise field itself is sigma-independent (scaled standard draws), so
    datasets generated with the same seed differ only by the noise term.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    s, h, w, c = (int(d) for d in shape)
    samples = []
    for label in (0, 1):
        for i in range(n_per_class):
            rng_geom = np.random.default_rng([seed, label, i, 0])
            rng_noise = np.random.default_rng([seed, label, i, 1])
            geom = {
                "cy_jit": rng_geom.uniform(-0.02, 0.02),
                "dx_jit": rng_geom.uniform(-0.015, 0.015),
                "r_jit": rng_geom.uniform(-0.012, 0.012),
                "amp": 3.0 * (1.0 + rng_geom.uniform(-0.06, 0.06)),
                "shrink": rng_geom.uniform(0.52, 0.62),
                "asym": rng_geom.uniform(0.75, 1.0),
                "dim": rng_geom.uniform(0.62, 0.78),
            }
            age_center = 67.0 if label == 0 else 70.0
            age = round(float(np.clip(rng_geom.normal(age_center, 7.0), 40.0, 95.0)), 1)
            slice_img = _render_striata(h, w, abnormal=(label == 1), geom=geom)
            tensor = np.empty((s, h, w, c), dtype=np.float64)
            for si in range(s):
                fade = 1.0 - 0.06 * abs(si - (s - 1) / 2.0)
                for ci in range(c):
                    tensor[si, :, :, ci] = slice_img * fade
            tensor += noise_sigma * rng_noise.standard_normal((s, h, w, c))
            sid = f"{'n' if label == 0 else 'a'}{i:04d}"
            # Quantize to float32 so in-memory phantoms equal their on-disk
            # round-trip; downstream results then match across both paths.
            samples.append(
                SampleTensor(sid, tensor.astype(np.float32).astype(np.float64), label, age)
            )
    return Dataset(tuple(samples))

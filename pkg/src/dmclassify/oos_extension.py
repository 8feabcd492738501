"""Nystrom out-of-sample extension: embed new samples into a trained
diffusion space from their kernel row alone, without re-decomposing.

A new point's kernel row against the training set is normalized into a
transition row, and each coordinate is recovered through the eigenvector
identity psi_l(new) = (1/lambda_l) * sum_j p_new_j * psi_l(j). On an
exact copy of a training point this reproduces its embedding row, which
is the module's primary correctness oracle.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    NumericalUnderflowError,
    ShapeMismatchError,
    VersionMismatchError,
)
from .kernel_graph import KernelConfig, build_kernel, build_markov, sq_distance_matrix
from .spectral_embed import SpectralBasis, decompose, embed
from .tensor_data import Dataset, SampleTensor, flatten_dataset, standardize_dataset

SPACE_MAGIC = b"TNS1"  # per-field framing shared with tensor files
SPACE_FORMAT = "dmclassify-space"
SPACE_VERSION = 1

# Nystrom divides by lambda_l; below this the extension amplifies noise
# beyond usefulness and the caller must reduce k.
MIN_EXTENSION_EIGENVALUE = 1e-12

MIN_ROW_SUM = 1e-300


@dataclass(frozen=True)
class TrainedSpace:
    """Frozen training-side artifacts needed to extend new samples."""

    train_matrix: np.ndarray  # (n, m) standardized flattened training samples
    sample_shape: tuple
    basis: SpectralBasis
    config: KernelConfig
    graph_degrees: np.ndarray

    def __post_init__(self):
        if self.basis.n != self.train_matrix.shape[0]:
            raise ShapeMismatchError(
                f"basis rows {self.basis.n} != training rows {self.train_matrix.shape[0]}"
            )
        lams = np.abs(self.basis.eigenvalues[1:])
        if lams.size and lams.min() <= MIN_EXTENSION_EIGENVALUE:
            raise ConfigError(
                f"smallest retained |eigenvalue| {lams.min():.3e} too small for "
                f"out-of-sample extension; reduce k below {self.basis.k}"
            )

    @property
    def n(self) -> int:
        return self.train_matrix.shape[0]

    @property
    def m(self) -> int:
        return self.train_matrix.shape[1]

    @property
    def k(self) -> int:
        return self.basis.k


@dataclass(frozen=True)
class ExtensionVector:
    """Kernel row, its normalization, and the embedded coordinates."""

    kernel_row: np.ndarray
    row_sum: float
    p_row: np.ndarray
    coords: np.ndarray


def fit_space(dataset: Dataset, config: KernelConfig, k: int) -> TrainedSpace:
    """Standardize, build the Markov graph, and decompose in one shot."""
    std = standardize_dataset(dataset)
    return space_from_matrix(flatten_dataset(std), std.shape, config, k)


def space_from_matrix(
    x: np.ndarray, sample_shape, config: KernelConfig, k: int, sq_dists=None
) -> TrainedSpace:
    """Trained space from an already standardized flat sample matrix."""
    sq = sq_distance_matrix(x, x) if sq_dists is None else sq_dists
    graph = build_markov(build_kernel(sq, config))
    basis = decompose(graph, k)
    return TrainedSpace(
        train_matrix=x,
        sample_shape=tuple(sample_shape),
        basis=basis,
        config=config,
        graph_degrees=graph.degrees,
    )


def training_coords(space: TrainedSpace) -> np.ndarray:
    return embed(space.basis).coords


def _coords_from_sq_row(space: TrainedSpace, sq_row: np.ndarray, ident: str):
    kernel_row = np.exp(-sq_row / space.config.alpha)
    row_sum = float(kernel_row.sum())
    if row_sum < MIN_ROW_SUM:
        raise NumericalUnderflowError(
            f"sample {ident}: kernel row sum {row_sum:.3e} underflowed; "
            "query is too far from every training point"
        )
    p_row = kernel_row / row_sum
    lam = space.basis.eigenvalues[1:]
    psi_new = (p_row @ space.basis.eigenvectors[:, 1:]) / lam
    coords = psi_new * lam**space.basis.t
    return ExtensionVector(kernel_row=kernel_row, row_sum=row_sum, p_row=p_row, coords=coords)


def extend(space: TrainedSpace, new_sample: SampleTensor) -> ExtensionVector:
    """Embed one standardized sample into the trained diffusion space.

    The sample must already be standardized (each sample is z-scored with
    its own statistics, keeping train and test symmetric) and must share
    the training tensor shape.
    """
    if tuple(new_sample.shape) != space.sample_shape:
        raise ShapeMismatchError(
            f"sample {new_sample.id}: shape {tuple(new_sample.shape)} != "
            f"training shape {space.sample_shape}"
        )
    sq_row = sq_distance_matrix(new_sample.flat()[None, :], space.train_matrix)[0]
    return _coords_from_sq_row(space, sq_row, new_sample.id)


def extend_rows(space: TrainedSpace, sq_rows: np.ndarray, idents) -> np.ndarray:
    """Coordinates for precomputed squared-distance rows against training."""
    out = np.empty((sq_rows.shape[0], space.k))
    for i in range(sq_rows.shape[0]):
        out[i] = _coords_from_sq_row(space, sq_rows[i], idents[i]).coords
    return out


def batch_extend(space: TrainedSpace, samples: Dataset) -> np.ndarray:
    """Per-sample extension over a dataset; order-preserving."""
    if len(samples) == 0:
        return np.zeros((0, space.k))
    return np.stack([extend(space, s).coords for s in samples])


def embedding_distortion(space: TrainedSpace, samples: Dataset) -> float:
    """How far extension drifts from a full re-decomposition.

    The samples are extended, then the augmented (train + new) graph is
    decomposed from scratch. Each recomputed column is aligned to the
    trained frame by the least-squares scale fitted on the training rows
    (eigenvectors are only defined up to sign and, once renormalized over
    the larger node set, scale). Returns the Frobenius norm of the
    remaining difference on the new rows; lower is better.
    """
    if len(samples) == 0:
        return 0.0
    std = standardize_dataset(samples)
    if std.shape != space.sample_shape:
        raise ShapeMismatchError(
            f"samples have shape {std.shape}, training shape is {space.sample_shape}"
        )
    new_matrix = flatten_dataset(std)
    ext = extend_rows(
        space,
        sq_distance_matrix(new_matrix, space.train_matrix),
        [s.id for s in std],
    )

    n = space.n
    augmented = np.vstack([space.train_matrix, new_matrix])
    aug_space = space_from_matrix(augmented, space.sample_shape, space.config, space.k)
    aug_coords = training_coords(aug_space)
    ref_coords = training_coords(space)

    aligned = np.empty_like(ext)
    for col in range(space.k):
        top = aug_coords[:n, col]
        denom = float(top @ top)
        scale = float(top @ ref_coords[:, col]) / denom if denom > 0 else 0.0
        aligned[:, col] = scale * aug_coords[n:, col]
    return float(np.linalg.norm(ext - aligned))


def _write_block(fh, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(SPACE_MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def _read_block(fh) -> np.ndarray:
    magic = fh.read(4)
    if magic != SPACE_MAGIC:
        raise VersionMismatchError("trained-space file corrupt: bad tensor framing")
    (ndim,) = struct.unpack("<I", fh.read(4))
    dims = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    count = int(np.prod(dims))
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise VersionMismatchError("trained-space file corrupt: truncated tensor")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()


def save_space(space: TrainedSpace, path) -> None:
    """Persist to one binary file: JSON header + framed float64 tensors.

    Reloading reproduces extension outputs bitwise, so the payloads keep
    full double precision (unlike the float32 standalone tensor files).
    """
    header = {
        "format": SPACE_FORMAT,
        "version": SPACE_VERSION,
        "alpha": space.config.alpha,
        "t": space.config.t,
        "k": space.k,
        "n": space.n,
        "m": space.m,
        "sample_shape": list(space.sample_shape),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        _write_block(fh, space.train_matrix)
        _write_block(fh, space.basis.eigenvalues)
        _write_block(fh, space.basis.eigenvectors)
        _write_block(fh, space.graph_degrees)


def load_space(path) -> TrainedSpace:
    """Reload a persisted trained space; raises VersionMismatchError on
    incompatible files."""
    with open(path, "rb") as fh:
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise VersionMismatchError(f"{path}: not a trained-space file")
        (hlen,) = struct.unpack("<I", raw_len)
        try:
            header = json.loads(fh.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise VersionMismatchError(f"{path}: unreadable header") from exc
        if header.get("format") != SPACE_FORMAT:
            raise VersionMismatchError(f"{path}: not a trained-space file")
        if header.get("version") != SPACE_VERSION:
            raise VersionMismatchError(
                f"{path}: unsupported version {header.get('version')}"
            )
        train_matrix = _read_block(fh)
        eigenvalues = _read_block(fh)
        eigenvectors = _read_block(fh)
        degrees = _read_block(fh)
    basis = SpectralBasis(
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        k=int(header["k"]),
        t=int(header["t"]),
    )
    return TrainedSpace(
        train_matrix=train_matrix,
        sample_shape=tuple(header["sample_shape"]),
        basis=basis,
        config=KernelConfig(alpha=float(header["alpha"]), t=int(header["t"])),
        graph_degrees=degrees,
    )

"""Comparison embedders behind one train/extend interface: locally linear
embedding, Isomap, and kernel PCA, with the diffusion-map embedder
dispatchable through the same entry points for the benchmark grid.

Each method keeps the canonical construction: LLE solves sum-to-one
reconstruction weights over k nearest neighbors and takes the bottom
eigenvectors of (I-W)'(I-W); Isomap runs Dijkstra over the k-NN graph and
classically scales the double-centered squared geodesics; kernel PCA
double-centers the Gaussian kernel. Out-of-sample points enter through
weight re-solves (LLE) or Nystrom-style projections (Isomap, KPCA).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import eigh
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .errors import ConfigError, DimensionTooLargeError, DisconnectedGraphError, ShapeMismatchError
from .kernel_graph import KernelConfig, sq_distance_matrix
from .oos_extension import extend_rows, fit_space, space_from_matrix, training_coords
from .spectral_embed import _fix_signs
from .tensor_data import Dataset, SampleTensor, flatten_dataset, standardize_dataset

METHODS = ("dm", "lle", "isomap", "kpca")

LLE_REG = 1e-3  # ridge on the local Gram matrix, scaled by its trace


@dataclass(frozen=True)
class EmbedderSpec:
    """Which embedder to run and with what knobs."""

    method: str
    k: int
    neighbors: int = 10
    alpha: float = 8.0
    t: int = 1  # diffusion time step; only the dm method uses it

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.neighbors < 1:
            raise ConfigError(f"neighbors must be >= 1, got {self.neighbors}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class LleSpace:
    train_matrix: np.ndarray
    neighbor_idx: np.ndarray  # (n, neighbors)
    weights: np.ndarray  # (n, neighbors), rows sum to 1
    coords: np.ndarray  # (n, k)
    neighbors: int


@dataclass(frozen=True)
class IsomapSpace:
    train_matrix: np.ndarray
    geodesics: np.ndarray  # (n, n)
    sq_col_means: np.ndarray  # column means of squared geodesics
    eigenvalues: np.ndarray  # (k,), clamped at 0
    eigenvectors: np.ndarray  # (n, k), sign-fixed
    coords: np.ndarray
    neighbors: int


@dataclass(frozen=True)
class KpcaSpace:
    train_matrix: np.ndarray
    alpha: float
    row_means: np.ndarray  # kernel row means
    grand_mean: float
    eigenvalues: np.ndarray  # (k,), clamped at 0
    eigenvectors: np.ndarray  # (n, k), sign-fixed
    coords: np.ndarray


@dataclass(frozen=True)
class TrainedAltSpace:
    """Uniform wrapper the ensemble dispatches on."""

    spec: EmbedderSpec
    sample_shape: tuple
    inner: object

    @property
    def coords(self) -> np.ndarray:
        return training_coords(self.inner) if self.spec.method == "dm" else self.inner.coords


def _knn_indices(sq_dists: np.ndarray, neighbors: int) -> np.ndarray:
    """Nearest-neighbor indices per row, self excluded, stable under ties."""
    d = sq_dists.copy()
    np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :neighbors]


def _check_knn_args(n: int, k: int, neighbors: int) -> None:
    if neighbors >= n:
        raise ConfigError(f"neighbors {neighbors} must be < n = {n}")
    if k > n - 1:
        raise DimensionTooLargeError(f"k must be <= {n - 1}, got {k}")


def _check_connected(n: int, neighbor_idx: np.ndarray) -> None:
    rows = np.repeat(np.arange(n), neighbor_idx.shape[1])
    cols = neighbor_idx.ravel()
    adj = csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp > 1:
        raise DisconnectedGraphError(f"k-NN graph has {n_comp} connected components")


def _barycenter_weights(point: np.ndarray, neighbors_x: np.ndarray, reg: Optional[float]):
    """Sum-to-one least-squares reconstruction weights of ``point``.

    With ``reg`` set, the local Gram matrix gets a reg*trace ridge (the
    training-side solve). With ``reg=None`` the constrained problem is
    solved exactly through its KKT system, so a point sitting on a
    training sample comes back with indicator weights.
    """
    diffs = neighbors_x - point
    gram = diffs @ diffs.T
    m = gram.shape[0]
    if reg is not None:
        trace = float(np.trace(gram))
        ridge = reg * trace if trace > 0 else reg
        w = np.linalg.solve(gram + ridge * np.eye(m), np.ones(m))
        return w / w.sum()
    kkt = np.zeros((m + 1, m + 1))
    kkt[:m, :m] = gram
    kkt[:m, m] = 1.0
    kkt[m, :m] = 1.0
    rhs = np.zeros(m + 1)
    rhs[m] = 1.0
    try:
        sol = np.linalg.solve(kkt, rhs)
        w = sol[:m]
        if np.all(np.isfinite(w)) and abs(w.sum() - 1.0) < 1e-8:
            return w
    except np.linalg.LinAlgError:
        pass
    trace = float(np.trace(gram))
    ridge = 1e-10 * (trace if trace > 0 else 1.0)
    w = np.linalg.solve(gram + ridge * np.eye(m), np.ones(m))
    return w / w.sum()


def fit_lle(x: np.ndarray, k: int, neighbors: int, sq_dists: Optional[np.ndarray] = None) -> LleSpace:
    n = x.shape[0]
    _check_knn_args(n, k, neighbors)
    if sq_dists is None:
        sq_dists = sq_distance_matrix(x, x)
    nbr = _knn_indices(sq_dists, neighbors)
    _check_connected(n, nbr)

    weights = np.empty((n, neighbors))
    for i in range(n):
        weights[i] = _barycenter_weights(x[i], x[nbr[i]], reg=LLE_REG)

    w_full = np.zeros((n, n))
    np.put_along_axis(w_full, nbr, weights, axis=1)
    residual = np.eye(n) - w_full
    m_mat = residual.T @ residual
    vals, vecs = eigh(m_mat)
    # Bottom of the spectrum; index 0 is the constant null vector.
    coords = _fix_signs(vecs[:, 1 : k + 1])
    return LleSpace(
        train_matrix=x, neighbor_idx=nbr, weights=weights, coords=coords, neighbors=neighbors
    )


def extend_lle(space: LleSpace, x_new: np.ndarray, sq_rows: Optional[np.ndarray] = None) -> np.ndarray:
    """Weight-combination embedding of new points (rows of ``x_new``)."""
    x_new = np.atleast_2d(x_new)
    if sq_rows is None:
        sq_rows = sq_distance_matrix(x_new, space.train_matrix)
    out = np.empty((x_new.shape[0], space.coords.shape[1]))
    for r in range(x_new.shape[0]):
        nb = np.argsort(sq_rows[r], kind="stable")[: space.neighbors]
        w = _barycenter_weights(x_new[r], space.train_matrix[nb], reg=None)
        out[r] = w @ space.coords[nb]
    return out


def fit_isomap(x: np.ndarray, k: int, neighbors: int, sq_dists: Optional[np.ndarray] = None) -> IsomapSpace:
    n = x.shape[0]
    _check_knn_args(n, k, neighbors)
    if sq_dists is None:
        sq_dists = sq_distance_matrix(x, x)
    nbr = _knn_indices(sq_dists, neighbors)
    _check_connected(n, nbr)

    dist = np.sqrt(np.take_along_axis(sq_dists, nbr, axis=1))
    rows = np.repeat(np.arange(n), neighbors)
    graph = csr_matrix((dist.ravel(), (rows, nbr.ravel())), shape=(n, n))
    geo = shortest_path(graph, method="D", directed=False)
    if np.isinf(geo).any():
        raise DisconnectedGraphError("geodesic matrix has unreachable pairs")

    sq_geo = geo**2
    col_means = sq_geo.mean(axis=0)
    grand = float(sq_geo.mean())
    b_mat = -0.5 * (sq_geo - col_means[None, :] - col_means[:, None] + grand)
    b_mat = (b_mat + b_mat.T) / 2.0
    vals, vecs = eigh(b_mat)
    vals = vals[::-1][:k]
    vecs = _fix_signs(vecs[:, ::-1][:, :k])
    vals = np.clip(vals, 0.0, None)
    coords = vecs * np.sqrt(vals)[None, :]
    return IsomapSpace(
        train_matrix=x,
        geodesics=geo,
        sq_col_means=col_means,
        eigenvalues=vals,
        eigenvectors=vecs,
        coords=coords,
        neighbors=neighbors,
    )


def extend_isomap(space: IsomapSpace, x_new: np.ndarray, sq_rows: Optional[np.ndarray] = None) -> np.ndarray:
    """Landmark-MDS projection of new points via their k-NN geodesics."""
    x_new = np.atleast_2d(x_new)
    if sq_rows is None:
        sq_rows = sq_distance_matrix(x_new, space.train_matrix)
    lam = space.eigenvalues
    inv_sqrt = np.where(lam > 0, 1.0 / np.sqrt(np.where(lam > 0, lam, 1.0)), 0.0)
    out = np.empty((x_new.shape[0], lam.size))
    for r in range(x_new.shape[0]):
        nb = np.argsort(sq_rows[r], kind="stable")[: space.neighbors]
        hop = np.sqrt(sq_rows[r][nb])
        geo_new = (hop[:, None] + space.geodesics[nb]).min(axis=0)
        centered = geo_new**2 - space.sq_col_means
        out[r] = -0.5 * (centered @ space.eigenvectors) * inv_sqrt
    return out


def fit_kpca(x: np.ndarray, k: int, alpha: float, sq_dists: Optional[np.ndarray] = None) -> KpcaSpace:
    n = x.shape[0]
    if k > n - 1:
        raise DimensionTooLargeError(f"k must be <= {n - 1}, got {k}")
    if sq_dists is None:
        sq_dists = sq_distance_matrix(x, x)
    kernel = np.exp(-sq_dists / alpha)
    row_means = kernel.mean(axis=1)
    grand = float(kernel.mean())
    centered = kernel - row_means[None, :] - row_means[:, None] + grand
    centered = (centered + centered.T) / 2.0
    vals, vecs = eigh(centered)
    vals = np.clip(vals[::-1][:k], 0.0, None)
    vecs = _fix_signs(vecs[:, ::-1][:, :k])
    coords = vecs * np.sqrt(vals)[None, :]
    return KpcaSpace(
        train_matrix=x,
        alpha=alpha,
        row_means=row_means,
        grand_mean=grand,
        eigenvalues=vals,
        eigenvectors=vecs,
        coords=coords,
    )


def extend_kpca(space: KpcaSpace, x_new: np.ndarray, sq_rows: Optional[np.ndarray] = None) -> np.ndarray:
    """Project centered kernel rows of new points onto the training axes."""
    x_new = np.atleast_2d(x_new)
    if sq_rows is None:
        sq_rows = sq_distance_matrix(x_new, space.train_matrix)
    k_rows = np.exp(-sq_rows / space.alpha)
    centered = (
        k_rows - space.row_means[None, :] - k_rows.mean(axis=1)[:, None] + space.grand_mean
    )
    lam = space.eigenvalues
    inv_sqrt = np.where(lam > 0, 1.0 / np.sqrt(np.where(lam > 0, lam, 1.0)), 0.0)
    return (centered @ space.eigenvectors) * inv_sqrt


def fit_from_matrix(
    spec: EmbedderSpec, x: np.ndarray, sample_shape, sq_dists: Optional[np.ndarray] = None
) -> TrainedAltSpace:
    """Dispatch on the method; ``x`` rows are standardized flat samples."""
    if spec.method == "dm":
        inner: object = space_from_matrix(
            x, sample_shape, KernelConfig(alpha=spec.alpha, t=spec.t), spec.k, sq_dists
        )
    elif spec.method == "lle":
        inner = fit_lle(x, spec.k, spec.neighbors, sq_dists)
    elif spec.method == "isomap":
        inner = fit_isomap(x, spec.k, spec.neighbors, sq_dists)
    else:
        inner = fit_kpca(x, spec.k, spec.alpha, sq_dists)
    return TrainedAltSpace(spec=spec, sample_shape=tuple(sample_shape), inner=inner)


def fit(spec: EmbedderSpec, dataset: Dataset) -> TrainedAltSpace:
    """Fit an embedder on a raw dataset (samples standardized internally)."""
    if spec.method == "dm":
        inner = fit_space(dataset, KernelConfig(alpha=spec.alpha, t=spec.t), spec.k)
        return TrainedAltSpace(spec=spec, sample_shape=tuple(dataset.shape), inner=inner)
    std = standardize_dataset(dataset)
    return fit_from_matrix(spec, flatten_dataset(std), std.shape, None)


def extend_matrix(
    space: TrainedAltSpace, x_new: np.ndarray, sq_rows: Optional[np.ndarray] = None, idents=None
) -> np.ndarray:
    method = space.spec.method
    if method == "dm":
        if sq_rows is None:
            sq_rows = sq_distance_matrix(np.atleast_2d(x_new), space.inner.train_matrix)
        if idents is None:
            idents = [str(i) for i in range(sq_rows.shape[0])]
        return extend_rows(space.inner, sq_rows, idents)
    if method == "lle":
        return extend_lle(space.inner, x_new, sq_rows)
    if method == "isomap":
        return extend_isomap(space.inner, x_new, sq_rows)
    return extend_kpca(space.inner, x_new, sq_rows)


def extend_alt(space: TrainedAltSpace, new_sample: SampleTensor) -> np.ndarray:
    """Embed one standardized sample with whatever method the space holds."""
    if tuple(new_sample.shape) != space.sample_shape:
        raise ShapeMismatchError(
            f"sample {new_sample.id}: shape {tuple(new_sample.shape)} != "
            f"training shape {space.sample_shape}"
        )
    coords = extend_matrix(space, new_sample.flat()[None, :], idents=[new_sample.id])
    return coords[0]

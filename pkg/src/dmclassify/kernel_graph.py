"""Gaussian kernel graph over samples: pairwise distances, degrees, the
row-stochastic transition matrix, and the diffusion distance between
training points.

Everything is dense and double precision; at the n <= ~1300 scale of this
pipeline an O(n^2) matrix is trivial and the fully connected Gaussian
graph needs no sparsification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import IndexOutOfRangeError
from .tensor_data import Dataset, flatten_dataset


@dataclass(frozen=True)
class KernelConfig:
    """Kernel scale and diffusion time step."""

    alpha: float = 8.0
    t: int = 1

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.t < 1:
            raise ValueError(f"t must be >= 1, got {self.t}")


@dataclass(frozen=True)
class KernelMatrix:
    """Symmetric Gaussian similarity matrix with unit diagonal."""

    values: np.ndarray
    config: KernelConfig

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class MarkovGraph:
    """Row-stochastic transition matrix with its kernel and degrees.

    ``transitions`` holds the one-step matrix D^-1 K; the time step t from
    the config is applied by consumers (eigenvalue powers in the spectral
    module, explicit row propagation here) rather than by materializing a
    matrix power.
    """

    kernel: KernelMatrix
    degrees: np.ndarray
    transitions: np.ndarray

    @property
    def n(self) -> int:
        return self.transitions.shape[0]

    @property
    def config(self) -> KernelConfig:
        return self.kernel.config


def pairwise_sq_distances(dataset: Dataset) -> np.ndarray:
    """Squared Euclidean distances between flattened standardized tensors.

    cdist computes each entry independently, so the result is exactly
    symmetric with an exactly zero diagonal, and is reproducible across
    BLAS thread counts.
    """
    x = flatten_dataset(dataset)
    return sq_distance_matrix(x, x)


def sq_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.size == 0 or b.size == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    return cdist(a, b, metric="sqeuclidean")


def build_kernel(sq_dists: np.ndarray, config: KernelConfig) -> KernelMatrix:
    """Gaussian kernel exp(-d^2 / alpha) of a squared-distance matrix."""
    return KernelMatrix(np.exp(-np.asarray(sq_dists, dtype=np.float64) / config.alpha), config)


def build_markov(kernel: KernelMatrix) -> MarkovGraph:
    """Row-normalize the kernel into a Markov transition matrix.

    Degrees are exact row sums of K; they are >= 1 because the diagonal of
    K is 1, so the division is always safe.
    """
    k = kernel.values
    degrees = k.sum(axis=1)
    transitions = k / degrees[:, None]
    return MarkovGraph(kernel=kernel, degrees=degrees, transitions=transitions)


def transition_power(graph: MarkovGraph) -> np.ndarray:
    """The t-step transition matrix P^t (t from the kernel config)."""
    t = graph.config.t
    if t == 1:
        return graph.transitions
    return np.linalg.matrix_power(graph.transitions, t)


def _t_step_row(graph: MarkovGraph, i: int) -> np.ndarray:
    row = graph.transitions[i]
    for _ in range(graph.config.t - 1):
        row = row @ graph.transitions
    return row


def diffusion_distance(graph: MarkovGraph, i: int, j: int) -> float:
    """Distance between the transition-probability rows of nodes i and j.

    Returns sqrt(sum_k (P_ik - P_jk)^2) with P at the configured time step.
    """
    n = graph.n
    if not (0 <= i < n and 0 <= j < n):
        raise IndexOutOfRangeError(f"indices ({i}, {j}) outside graph of size {n}")
    diff = _t_step_row(graph, i) - _t_step_row(graph, j)
    return float(np.sqrt(np.sum(diff * diff)))


def dump_graph_csv(graph: MarkovGraph, kernel_path, transitions_path) -> None:
    """Debug dump of K and P as CSV at full precision for cross-checking."""
    np.savetxt(kernel_path, graph.kernel.values, delimiter=",", fmt="%.17g")
    np.savetxt(transitions_path, graph.transitions, delimiter=",", fmt="%.17g")

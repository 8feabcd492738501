"""Eigendecomposition of the Markov matrix and diffusion coordinates.

The decomposition goes through the symmetric conjugate
A = D^(-1/2) K D^(-1/2), which shares eigenvalues with P = D^-1 K and
turns its right eigenvectors into psi = D^(-1/2) v. This keeps the
spectrum real and lets a standard symmetric solver do the work.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .errors import DimensionTooLargeError
from .kernel_graph import MarkovGraph

# Eigenvalue gap below which two eigenpairs count as one degenerate block.
DEGENERATE_GAP = 1e-10


@dataclass(frozen=True)
class SpectralBasis:
    """Top k+1 eigenpairs of the transition matrix, sorted descending.

    Index 0 is the trivial pair (eigenvalue 1, constant vector), kept for
    bookkeeping but excluded from coordinates. Eigenvectors are unit-norm
    columns with the sign fixed so each column's largest-magnitude entry
    is positive.
    """

    eigenvalues: np.ndarray  # (k+1,)
    eigenvectors: np.ndarray  # (n, k+1)
    k: int
    t: int

    @property
    def n(self) -> int:
        return self.eigenvectors.shape[0]


@dataclass(frozen=True)
class EmbeddingCoords:
    """n x k diffusion coordinates: column l is lambda_l^t * psi_l."""

    coords: np.ndarray


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for col in range(out.shape[1]):
        v = out[:, col]
        idx = int(np.argmax(np.abs(v)))
        if v[idx] < 0:
            out[:, col] = -v
    return out


def _order_degenerate_blocks(values: np.ndarray, vectors: np.ndarray):
    """Deterministic column order inside near-degenerate eigenvalue blocks.

    Columns whose eigenvalues agree within DEGENERATE_GAP are sorted by
    lexicographic comparison of their sign-fixed entries.
    """
    n_cols = len(values)
    order = list(range(n_cols))
    start = 0
    while start < n_cols:
        stop = start + 1
        while stop < n_cols and abs(values[start] - values[stop]) < DEGENERATE_GAP:
            stop += 1
        if stop - start > 1:
            block = sorted(order[start:stop], key=lambda c: tuple(vectors[:, c]))
            order[start:stop] = block
        start = stop
    return values[order], vectors[:, order]


def decompose(graph: MarkovGraph, k: int) -> SpectralBasis:
    """Top k+1 eigenpairs of the transition matrix.

    Parameters
    ----------
    graph : MarkovGraph
        Built by ``build_markov``; only its kernel and degrees are used.
    k : int
        Number of non-trivial coordinates to retain, 1 <= k <= n - 1.
    """
    n = graph.n
    if not 1 <= k <= n - 1:
        raise DimensionTooLargeError(f"k must be in [1, {n - 1}], got {k}")
    inv_sqrt_d = 1.0 / np.sqrt(graph.degrees)
    conjugate = graph.kernel.values * inv_sqrt_d[:, None] * inv_sqrt_d[None, :]
    conjugate = (conjugate + conjugate.T) / 2.0
    vals, vecs = eigh(conjugate)
    # eigh returns ascending order; keep the top k+1, largest first.
    vals = vals[::-1][: k + 1]
    vecs = vecs[:, ::-1][:, : k + 1]
    vals = np.clip(vals, -1.0, 1.0)
    psi = inv_sqrt_d[:, None] * vecs
    psi /= np.linalg.norm(psi, axis=0)
    psi = _fix_signs(psi)
    vals, psi = _order_degenerate_blocks(vals, psi)
    return SpectralBasis(eigenvalues=vals, eigenvectors=psi, k=k, t=graph.config.t)


def embed(basis: SpectralBasis) -> EmbeddingCoords:
    """Diffusion coordinates; the trivial constant eigenpair is dropped."""
    scale = basis.eigenvalues[1:] ** basis.t
    return EmbeddingCoords(coords=basis.eigenvectors[:, 1:] * scale[None, :])


def export_coords_csv(ids, coords: np.ndarray, path) -> None:
    """Write ``id,coord_1,...,coord_k`` rows for visualization."""
    coords = np.atleast_2d(coords)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"coord_{l}" for l in range(1, coords.shape[1] + 1)])
        for sid, row in zip(ids, coords):
            writer.writerow([sid] + [repr(float(v)) for v in row])

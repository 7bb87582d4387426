"""Spectral clustering of activity vectors with eigengap model selection.

Pipeline: cosine KNN similarity graph -> symmetric normalized Laplacian ->
full eigendecomposition -> eigengap choice of k -> row-normalized spectral
embedding -> seeded k-means. Everything is deterministic for a fixed
(input, K, k_max, seed) and ties always break toward the smallest index.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .activity import ActivityVector
from .errors import DegenerateDataError, InputError

log = logging.getLogger(__name__)

# Dense eigensolver guard: above this the n x n decomposition stops being a
# desk-scale operation and the run should be re-thought, not silently slow.
MAX_NODES = 20_000

_SIMILARITY_BLOCK = 1024


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two non-negative weight vectors, in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise InputError("cosine similarity undefined for a zero vector")
    return min(1.0, float(np.dot(a, b) / (na * nb)))


@dataclass
class SimilarityGraph:
    """Symmetric weighted KNN graph over activity vectors.

    Isolated nodes (everything they selected had similarity zero) are removed
    before any Laplacian work and reported via isolated_ids.
    """

    node_ids: tuple[int, ...]
    adjacency: sp.csr_matrix  # symmetric, zero diagonal, non-negative
    degrees: np.ndarray
    isolated_ids: tuple[int, ...] = ()

    @property
    def n(self) -> int:
        return len(self.node_ids)


def knn_graph(vectors: Sequence[ActivityVector], k_neighbors: int) -> SimilarityGraph:
    """Union-symmetrized K-nearest-neighbor graph under cosine similarity.

    Each node selects its K most similar distinct neighbors (ties broken by
    the lower node index); an edge exists when either endpoint selected it
    and keeps the cosine similarity as weight. Zero-similarity selections
    are dropped, which can isolate nodes; those are removed and tracked.
    """
    n = len(vectors)
    if k_neighbors < 1:
        raise InputError("k_neighbors must be >= 1")
    if k_neighbors >= n:
        raise InputError(f"k_neighbors={k_neighbors} must be < n={n}")

    weights = np.stack([np.asarray(v.weights, dtype=np.float64) for v in vectors])
    norms = np.linalg.norm(weights, axis=1)
    if np.any(norms == 0.0):
        bad = [vectors[i].cell_id for i in np.flatnonzero(norms == 0.0)[:5]]
        raise InputError(f"zero-norm activity vectors (e.g. cells {bad}); filter upstream")
    unit = weights / norms[:, None]

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    order_tiebreak = np.arange(n)
    for start in range(0, n, _SIMILARITY_BLOCK):
        stop = min(start + _SIMILARITY_BLOCK, n)
        sims = unit[start:stop] @ unit.T
        np.clip(sims, 0.0, 1.0, out=sims)
        for local, i in enumerate(range(start, stop)):
            row = sims[local]
            row[i] = -1.0  # exclude self
            order = np.lexsort((order_tiebreak, -row))
            chosen = order[:k_neighbors]
            positive = chosen[row[chosen] > 0.0]
            if positive.size:
                rows.append(np.full(positive.size, i))
                cols.append(positive)
                vals.append(row[positive])

    if rows:
        directed = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        ).tocsr()
    else:
        directed = sp.csr_matrix((n, n))
    # Union symmetrization; weights are symmetric already, so max == union.
    adjacency = directed.maximum(directed.T).tocsr()
    degrees = np.asarray(adjacency.sum(axis=1)).ravel()

    keep = np.flatnonzero(degrees > 0.0)
    isolated = np.flatnonzero(degrees == 0.0)
    node_ids = tuple(vectors[i].cell_id for i in keep)
    isolated_ids = tuple(vectors[i].cell_id for i in isolated)
    if isolated.size:
        log.warning("removed %d isolated nodes from similarity graph", isolated.size)
        adjacency = adjacency[keep][:, keep].tocsr()
        degrees = degrees[keep]
    return SimilarityGraph(node_ids, adjacency, degrees, isolated_ids)


def normalized_laplacian(graph: SimilarityGraph) -> np.ndarray:
    """Symmetric normalized Laplacian I - D^{-1/2} A D^{-1/2}, dense."""
    if np.any(graph.degrees <= 0.0):
        raise InputError("graph has zero-degree nodes; remove them first")
    inv_sqrt = 1.0 / np.sqrt(graph.degrees)
    a = graph.adjacency.toarray()
    lap = np.eye(graph.n) - a * inv_sqrt[:, None] * inv_sqrt[None, :]
    return 0.5 * (lap + lap.T)


@dataclass
class SpectralDecomposition:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # orthonormal columns, aligned to eigenvalues


def decompose(laplacian: np.ndarray) -> SpectralDecomposition:
    """Full symmetric eigendecomposition, eigenvalues ascending."""
    eigenvalues, eigenvectors = np.linalg.eigh(laplacian)
    return SpectralDecomposition(eigenvalues, eigenvectors)


def eigengap_k(eigenvalues: np.ndarray, k_max: int) -> int:
    """Cluster count from the largest gap in the ascending spectrum.

    k = argmax over i in 1..k_max of (lambda_{i+1} - lambda_i), ties to the
    smallest i. k_max is clamped to n-1 when the spectrum is short.
    """
    ev = np.asarray(eigenvalues, dtype=np.float64)
    if ev.ndim != 1 or ev.size < 2:
        raise InputError("eigengap needs at least 2 eigenvalues")
    if k_max < 1:
        raise InputError("k_max must be >= 1")
    limit = min(k_max, ev.size - 1)
    gaps = np.diff(ev)[:limit]
    return int(np.argmax(gaps)) + 1


def spectral_embed(decomp: SpectralDecomposition, k: int, row_normalize: bool = True) -> np.ndarray:
    """Embedding rows from the k bottom eigenvectors.

    Each eigenvector's largest-magnitude entry is flipped positive for a
    deterministic sign convention; rows are then scaled to unit norm
    (all-zero rows stay zero and are logged).
    """
    n = decomp.eigenvectors.shape[0]
    if k < 1:
        raise InputError("k must be >= 1")
    if k > n:
        raise InputError(f"k={k} exceeds node count n={n}")
    emb = decomp.eigenvectors[:, :k].copy()
    for col in range(k):
        pivot = int(np.argmax(np.abs(emb[:, col])))
        if emb[pivot, col] < 0:
            emb[:, col] = -emb[:, col]
    if row_normalize:
        norms = np.linalg.norm(emb, axis=1)
        zero = norms == 0.0
        if np.any(zero):
            log.warning("%d zero rows left unnormalized in spectral embedding", zero.sum())
            norms[zero] = 1.0
        emb = emb / norms[:, None]
    return emb


@dataclass
class ClusterModel:
    """A k-way partition of the embedded nodes.

    labels holds values 1..k aligned with node_ids; metadata carries the
    provenance needed to reproduce the run (K, k_max, spectrum, seed, ...).
    """

    k: int
    node_ids: tuple[int, ...]
    labels: np.ndarray
    centroids: np.ndarray
    seed: int
    objective: float
    metadata: dict = field(default_factory=dict)

    @property
    def assignment(self) -> dict[int, int]:
        return {node: int(label) for node, label in zip(self.node_ids, self.labels)}


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[int(rng.integers(n))]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centroids[c] = points[idx]
        np.minimum(d2, ((points - centroids[c]) ** 2).sum(axis=1), out=d2)
    return centroids


def _lloyd(
    points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int
) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    n = points.shape[0]
    centroids = _kmeanspp_init(points, k, rng)
    labels = np.full(n, -1)
    history: list[float] = []
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        # Empty-cluster repair: hand the cluster the point farthest from its
        # current centroid; that point becomes the centroid, so the objective
        # cannot increase.
        for c in range(k):
            if not np.any(new_labels == c):
                own = ((points - centroids[new_labels]) ** 2).sum(axis=1)
                far = int(own.argmax())
                new_labels[far] = c
                centroids[c] = points[far]
        converged = bool(np.array_equal(new_labels, labels))
        labels = new_labels
        for c in range(k):
            centroids[c] = points[labels == c].mean(axis=0)
        objective = float(((points - centroids[labels]) ** 2).sum())
        history.append(objective)
        if converged:
            break
    return labels, centroids, history[-1], history


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int,
    n_restarts: int = 10,
    max_iter: int = 300,
) -> ClusterModel:
    """Seeded k-means++ with Lloyd iterations, best of n_restarts by objective.

    Restart r uses seed + r; the winner is the lexicographic minimum of
    (objective, restart seed), so parallel evaluation could never change
    the answer.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise InputError("points must be a 2-D array")
    n = points.shape[0]
    if k < 1:
        raise InputError("k must be >= 1")
    if k > n:
        raise InputError(f"k={k} exceeds point count n={n}")

    best: tuple[float, int] | None = None
    best_run: tuple[np.ndarray, np.ndarray] | None = None
    for restart_seed in range(seed, seed + n_restarts):
        rng = np.random.default_rng(restart_seed)
        labels, centroids, objective, _ = _lloyd(points, k, rng, max_iter)
        key = (objective, restart_seed)
        if best is None or key < best:
            best = key
            best_run = (labels, centroids)
    assert best is not None and best_run is not None
    labels, centroids = best_run
    return ClusterModel(
        k=k,
        node_ids=tuple(range(n)),
        labels=labels + 1,
        centroids=centroids,
        seed=seed,
        objective=best[0],
        metadata={"restarts": n_restarts},
    )


def cluster_areas(
    vectors: Sequence[ActivityVector],
    k_neighbors: int = 10,
    k_max: int = 30,
    seed: int = 0,
    row_normalize: bool = True,
    max_nodes: int = MAX_NODES,
) -> ClusterModel:
    """End-to-end area clustering: KNN graph through k-means assignment.

    Raises DegenerateDataError when fewer than 2 profiled cells survive
    (nothing to cluster) and InputError past the dense-solver node cap.
    The returned model's metadata records K, k_max, the chosen k, the full
    spectrum, the seed, and any isolated cells that were dropped.
    """
    n = len(vectors)
    if n < 2:
        raise DegenerateDataError(
            f"insufficient distinct profiles: {n} cell(s) with activity vectors"
        )
    if n > max_nodes:
        raise InputError(f"{n} nodes exceeds the dense eigensolver cap of {max_nodes}")

    graph = knn_graph(vectors, k_neighbors)
    if graph.n < 2:
        raise DegenerateDataError("insufficient connected profiles after isolation filtering")

    lap = normalized_laplacian(graph)
    decomp = decompose(lap)
    k = eigengap_k(decomp.eigenvalues, min(k_max, graph.n - 1))
    embedding = spectral_embed(decomp, k, row_normalize=row_normalize)
    model = kmeans(embedding, k, seed)
    return ClusterModel(
        k=k,
        node_ids=graph.node_ids,
        labels=model.labels,
        centroids=model.centroids,
        seed=seed,
        objective=model.objective,
        metadata={
            "k_neighbors": k_neighbors,
            "k_max": k_max,
            "chosen_k": k,
            "seed": seed,
            "restarts": model.metadata.get("restarts", 10),
            "row_normalize": row_normalize,
            "eigenvalues": decomp.eigenvalues.tolist(),
            "isolated_ids": list(graph.isolated_ids),
        },
    )

"""KNN patient graphs and their self-looped variants."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .autodiff import ContractError


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Graph:
    adjacency: np.ndarray
    self_looped: bool = False

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)


def pairwise_distances(features: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    if metric not in ("euclidean", "cosine"):
        raise ValueError(f"unknown metric {metric!r}; expected 'euclidean' or 'cosine'")
    x = np.asarray(features, dtype=np.float64)
    # cdist evaluates each pair directly, so duplicate rows give exact zeros
    d = cdist(x, x, metric=metric)
    # cosine distance to an all-zero row is undefined; treat it as orthogonal
    return np.nan_to_num(d, nan=1.0)


def knn_graph(features: np.ndarray, k: int, metric: str = "euclidean") -> Graph:
    """Union-symmetrised KNN graph with an empty diagonal.

    Ties in distance go to the lower node index.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise DatasetError(f"features must be N x D, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise DatasetError(f"need at least 2 nodes to build a graph, got {n}")
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    d = pairwise_distances(x, metric)
    np.fill_diagonal(d, np.inf)
    # stable sort keeps index order among equal distances
    nbrs = np.argsort(d, axis=1, kind="stable")[:, :k]
    adj = np.zeros((n, n))
    adj[np.repeat(np.arange(n), k), nbrs.ravel()] = 1.0
    adj = np.maximum(adj, adj.T)
    return Graph(adj, self_looped=False)


def add_self_loops(g: Graph) -> Graph:
    if g.self_looped:
        raise ContractError("graph already carries self loops")
    adj = g.adjacency.copy()
    np.fill_diagonal(adj, 1.0)
    return Graph(adj, self_looped=True)


def standardize(x: np.ndarray, fit_rows: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Z-score columns using statistics from ``fit_rows`` only.

    Returns the transformed matrix and the (mean, std) used. Constant columns
    get std 1 so they pass through centred.
    """
    x = np.asarray(x, dtype=np.float64)
    ref = x if fit_rows is None else x[np.asarray(fit_rows, dtype=bool)]
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (x - mu) / sd, mu, sd

"""kNN hyperedges per feature group and the uncertainty-weighted incidence."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from uvhl.errors import ConstructionError, ShapeError, SingularityError


@dataclass(frozen=True, eq=False)
class Hypergraph:
    """Vertex-weighted hypergraph.

    ``H`` is sparse (n x m) with ``H[v, e] = u[v]`` when ``v`` is in ``e``.
    ``w``, ``dv``, ``de`` and ``u`` hold the diagonals of W, Dv, De and U.
    """

    n: int
    edges: tuple
    edge_groups: tuple
    H: sparse.csr_matrix
    w: np.ndarray
    dv: np.ndarray
    de: np.ndarray
    u: np.ndarray

    @property
    def m(self):
        return len(self.edges)

    def dump_incidence(self, path):
        """Write H as ``row,col,value`` triplets."""
        coo = self.H.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["row", "col", "value"])
            for k in order:
                writer.writerow([int(coo.row[k]), int(coo.col[k]), repr(float(coo.data[k]))])


def knn_hyperedges(features, k_nn):
    """One hyperedge per vertex: the vertex plus its ``k_nn`` nearest others.

    Euclidean distance; equal distances go to the lower vertex index.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2:
        raise ShapeError("features must be a 2-D matrix")
    n = X.shape[0]
    if k_nn < 1:
        raise ValueError("k_nn must be at least 1")
    if k_nn >= n:
        raise ValueError(f"k_nn={k_nn} needs at least {k_nn + 1} vertices, got {n}")
    dist = cdist(X, X, "sqeuclidean")
    np.fill_diagonal(dist, np.inf)
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k_nn]
    return [np.concatenate(([p], nearest[p])) for p in range(n)]


def build_incidence(edge_groups, vertex_weights, edge_weights=None, allow_isolated=False):
    """Assemble the hypergraph from per-group edge lists.

    ``edge_groups`` maps group name to an edge list (or is a sequence of edge
    lists); groups are concatenated in order. ``vertex_weights`` is a
    ``VertexWeights`` or a plain length-n array. Vertices outside every
    hyperedge raise ``ConstructionError`` unless ``allow_isolated`` is set,
    in which case :func:`theta` will refuse the graph instead.
    """
    u = np.asarray(getattr(vertex_weights, "weights", vertex_weights), dtype=float)
    if u.ndim != 1:
        raise ShapeError("vertex weights must be a vector")
    n = u.size
    if hasattr(edge_groups, "items"):
        named = list(edge_groups.items())
    else:
        named = [(str(i), g) for i, g in enumerate(edge_groups)]

    edges, tags = [], []
    for tag, group in named:
        for e in group:
            e = np.asarray(e, dtype=int)
            if e.size == 0:
                raise ValueError("empty hyperedge")
            if e.min() < 0 or e.max() >= n:
                raise ValueError(f"hyperedge references a vertex outside 0..{n - 1}")
            if np.unique(e).size != e.size:
                raise ValueError("hyperedge lists a vertex twice")
            edges.append(e)
            tags.append(tag)
    if not edges:
        raise ValueError("edge list is empty")
    m = len(edges)

    w = np.ones(m) if edge_weights is None else np.asarray(edge_weights, dtype=float)
    if w.shape != (m,):
        raise ShapeError(f"edge_weights must have length {m}")
    if np.any(w <= 0):
        raise ValueError("hyperedge weights must be positive")

    rows = np.concatenate(edges)
    cols = np.repeat(np.arange(m), [e.size for e in edges])
    H = sparse.csr_matrix((u[rows], (rows, cols)), shape=(n, m))
    dv = np.asarray(H @ w).ravel()
    de = np.asarray(H.sum(axis=0)).ravel()
    if np.any(dv <= 0) and not allow_isolated:
        bad = int(np.flatnonzero(dv <= 0)[0])
        raise ConstructionError(f"vertex {bad} has zero degree")
    if np.any(de <= 0):
        bad = int(np.flatnonzero(de <= 0)[0])
        raise ConstructionError(f"hyperedge {bad} has zero degree")
    return Hypergraph(n, tuple(edges), tuple(tags), H, w, dv, de, u)


def theta(hg):
    """Dense ``Dv^-1/2 H W De^-1 H^T Dv^-1/2``, symmetrized exactly."""
    if np.any(hg.dv <= 0):
        raise SingularityError(f"vertex {int(np.argmin(hg.dv))} has zero degree")
    if np.any(hg.de <= 0):
        raise SingularityError(f"hyperedge {int(np.argmin(hg.de))} has zero degree")
    B = sparse.diags(hg.dv ** -0.5) @ hg.H @ sparse.diags(np.sqrt(hg.w / hg.de))
    T = (B @ B.T).toarray()
    return 0.5 * (T + T.T)

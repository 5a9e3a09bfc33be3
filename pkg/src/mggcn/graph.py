"""Immutable CSR graph storage and the renormalized adjacency used by GCN/SGC."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph in compressed sparse row layout.

    Neighbor lists are sorted ascending, deduplicated and free of self-loops.
    """

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    degrees: np.ndarray = field(repr=False)

    def neighbors(self, v: int) -> np.ndarray:
        return neighbors(self, v)

    @property
    def num_edges(self) -> int:
        return len(self.col_indices) // 2

    @cached_property
    def adjacency_lists(self) -> tuple[list[int], ...]:
        # Plain-int lists for the per-draw Python loops in the sampler.
        cols = self.col_indices.tolist()
        offs = self.row_offsets.tolist()
        return tuple(cols[offs[v]:offs[v + 1]] for v in range(self.num_nodes))

    @cached_property
    def degree_list(self) -> list[int]:
        return self.degrees.tolist()

    def edges(self) -> list[tuple[int, int]]:
        """Each undirected edge once, as ``(u, v)`` with ``u < v``."""
        rows = np.repeat(np.arange(self.num_nodes), self.degrees)
        keep = rows < self.col_indices
        return list(zip(rows[keep].tolist(), self.col_indices[keep].tolist()))

    def to_scipy(self) -> sp.csr_matrix:
        data = np.ones(len(self.col_indices))
        return sp.csr_matrix((data, self.col_indices, self.row_offsets),
                             shape=(self.num_nodes, self.num_nodes))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.num_nodes == other.num_nodes
                and np.array_equal(self.row_offsets, other.row_offsets)
                and np.array_equal(self.col_indices, other.col_indices))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """D̃^{-1/2}(A+I)D̃^{-1/2} in CSR form; every row holds its diagonal."""

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.col_indices, self.row_offsets),
                             shape=(self.num_nodes, self.num_nodes))

    def todense(self) -> np.ndarray:
        return self.matrix.toarray()


def build_graph(edges: Iterable[Sequence[int]], num_nodes: int) -> Graph:
    """Symmetrize, deduplicate and drop self-loops from an edge list."""
    if num_nodes <= 0:
        raise GraphError("num_nodes must be positive")
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges,
                     dtype=np.int64).reshape(-1, 2)
    if arr.size and (arr.min() < 0 or arr.max() >= num_nodes):
        bad = arr[(arr < 0).any(axis=1) | (arr >= num_nodes).any(axis=1)][0]
        raise GraphError(f"edge {tuple(bad.tolist())} has a node id outside [0, {num_nodes})")
    arr = arr[arr[:, 0] != arr[:, 1]]
    both = np.concatenate([arr, arr[:, ::-1]])
    # Unique (row, col) pairs in row-major order gives sorted neighbor lists.
    keys = np.unique(both[:, 0] * num_nodes + both[:, 1])
    rows, cols = np.divmod(keys, num_nodes)
    degrees = np.bincount(rows, minlength=num_nodes).astype(np.int64)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(degrees, out=offsets[1:])
    return Graph(num_nodes, offsets, cols.astype(np.int64), degrees)


def _check_node(g: Graph | NormalizedAdjacency, v: int) -> None:
    if not 0 <= v < g.num_nodes:
        raise GraphError(f"node {v} out of range [0, {g.num_nodes})")


def neighbors(g: Graph, v: int) -> np.ndarray:
    _check_node(g, v)
    return g.col_indices[g.row_offsets[v]:g.row_offsets[v + 1]]


def normalize(g: Graph) -> NormalizedAdjacency:
    n = g.num_nodes
    inv_sqrt = 1.0 / np.sqrt(g.degrees + 1.0)
    rows = np.repeat(np.arange(n), g.degrees)
    # Merge the diagonal into each sorted row.
    all_rows = np.concatenate([rows, np.arange(n)])
    all_cols = np.concatenate([g.col_indices, np.arange(n)])
    order = np.lexsort((all_cols, all_rows))
    all_rows, all_cols = all_rows[order], all_cols[order]
    values = inv_sqrt[all_rows] * inv_sqrt[all_cols]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(g.degrees + 1, out=offsets[1:])
    return NormalizedAdjacency(n, offsets, all_cols.astype(np.int64), values)


def spmm(a: NormalizedAdjacency | sp.spmatrix, h: np.ndarray) -> np.ndarray:
    """Sparse-dense product ``a @ h``."""
    mat = a.matrix if isinstance(a, NormalizedAdjacency) else a
    if h.ndim != 2 or h.shape[0] != mat.shape[1]:
        raise GraphError(f"spmm shape mismatch: {mat.shape} @ {h.shape}")
    return np.asarray(mat @ h)


def hop_distances(g: Graph, source: int) -> np.ndarray:
    """BFS hop counts from ``source``; -1 for unreachable nodes."""
    _check_node(g, source)
    dist = np.full(g.num_nodes, -1, dtype=np.int64)
    dist[source] = 0
    frontier = [source]
    adj = g.adjacency_lists
    d = 0
    while frontier:
        d += 1
        nxt = []
        for u in frontier:
            for w in adj[u]:
                if dist[w] < 0:
                    dist[w] = d
                    nxt.append(w)
        frontier = nxt
    return dist


def read_edge_list(path: str | Path, num_nodes: int | None = None) -> Graph:
    """Read whitespace-separated id pairs; '#' lines are comments."""
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphError(f"{path}:{lineno}: expected two node ids, got {line!r}")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise GraphError(f"{path}:{lineno}: non-integer node id in {line!r}") from None
    if num_nodes is None:
        num_nodes = 1 + max((max(p) for p in pairs), default=-1)
    return build_graph(pairs, num_nodes)


def write_edge_list(g: Graph, path: str | Path) -> None:
    with open(path, "w") as fh:
        for u, v in g.edges():
            fh.write(f"{u} {v}\n")

"""Graph topology: kernel-weighted adjacency, convolution support, k-hop neighbor sets."""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Graph:
    """Weighted graph stored as a dense adjacency matrix.

    ``adjacency[i, j] > 0`` means an edge ``i -> j``. Zero weight means no edge.
    """

    adjacency: np.ndarray
    directed: bool = True

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise ValueError(f"adjacency must be a non-empty square matrix, got {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("adjacency weights must be finite and non-negative")
        if not self.directed and not np.array_equal(a, a.T):
            raise ValueError("undirected graph requires a symmetric adjacency")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        src, dst = np.nonzero(self.adjacency)
        return [(int(i), int(j), float(self.adjacency[i, j])) for i, j in zip(src, dst)]

    @classmethod
    def from_edges(cls, num_nodes: int, edges, directed: bool = True) -> "Graph":
        if num_nodes < 1:
            raise ValueError("num_nodes must be positive")
        a = np.zeros((num_nodes, num_nodes))
        for src, dst, w in edges:
            src, dst = int(src), int(dst)
            if not (0 <= src < num_nodes and 0 <= dst < num_nodes):
                raise ValueError(f"edge ({src}, {dst}) out of range for {num_nodes} nodes")
            a[src, dst] = float(w)
            if not directed:
                a[dst, src] = float(w)
        return cls(a, directed=directed)

    def symmetrized(self) -> "Graph":
        """OR the edge set with its reverse, keeping the larger weight per pair."""
        a = np.maximum(self.adjacency, self.adjacency.T)
        return Graph(a, directed=False)


@dataclass(frozen=True)
class NeighborIndex:
    order: int
    sets: tuple[frozenset, ...]

    def __len__(self) -> int:
        return len(self.sets)

    def __getitem__(self, v: int) -> frozenset:
        return self.sets[v]


def gaussian_kernel_adjacency(distances, sigma="auto", sparsify_threshold: float = 0.0) -> Graph:
    """Build a graph from raw pairwise distances with ``exp(-(d / sigma)**2)`` weights.

    Missing distances are NaN and become absent edges. With ``sigma="auto"``
    the bandwidth is the (population) standard deviation of all present
    distances. Weights below ``sparsify_threshold`` are zeroed.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"distance matrix must be square, got {d.shape}")
    present = ~np.isnan(d)
    if not present.any():
        raise ValueError("empty graph: every distance is missing")
    if np.any(d[present] < 0) or not np.all(np.isfinite(d[present])):
        raise ValueError("distances must be finite and non-negative")
    if not 0.0 <= sparsify_threshold <= 1.0:
        raise ValueError("sparsify_threshold must lie in [0, 1]")

    if sigma is None or sigma == "auto":
        sigma = float(np.std(d[present]))
        if sigma == 0.0:
            # all present distances identical; any positive bandwidth gives the same ranking
            sigma = float(np.max(d[present])) or 1.0
    sigma = float(sigma)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")

    w = np.zeros_like(d)
    w[present] = np.exp(-np.square(d[present] / sigma))
    w[w < sparsify_threshold] = 0.0
    return Graph(w, directed=not np.array_equal(w, w.T))


def normalized_adjacency(g: Graph) -> np.ndarray:
    """Renormalized support ``D^-1/2 (A + I) D^-1/2`` with D the row degree of ``A + I``."""
    a_hat = g.adjacency + np.eye(g.num_nodes)
    deg = a_hat.sum(axis=1)
    out = np.eye(g.num_nodes)
    ok = deg > 0
    inv_sqrt = np.zeros_like(deg)
    inv_sqrt[ok] = 1.0 / np.sqrt(deg[ok])
    scaled = inv_sqrt[:, None] * a_hat * inv_sqrt[None, :]
    out[ok] = scaled[ok]
    return out


def k_order_neighbors(g: Graph, k: int, symmetrize: bool = False) -> NeighborIndex:
    """Nodes reachable from each node within ``k`` hops along edge direction (self excluded)."""
    if k < 1:
        raise ValueError("order must be positive")
    if symmetrize:
        g = g.symmetrized()
    n = g.num_nodes
    succ = [np.flatnonzero(g.adjacency[v] > 0).tolist() for v in range(n)]
    sets = []
    for src in range(n):
        depth = {src: 0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            if depth[u] == k:
                continue
            for w in succ[u]:
                if w not in depth:
                    depth[w] = depth[u] + 1
                    queue.append(w)
        depth.pop(src)
        sets.append(frozenset(depth))
    return NeighborIndex(order=k, sets=tuple(sets))


# --- file formats -----------------------------------------------------------


def read_edge_list(path, num_nodes: int | None = None, directed: bool = True) -> Graph:
    """Read a ``src,dst,weight`` CSV into a :class:`Graph`."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["src", "dst", "weight"]:
            raise ValueError(f"{path}: expected header 'src,dst,weight'")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((int(row["src"]), int(row["dst"]), float(row["weight"])))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad edge row {row}") from exc
    if num_nodes is None:
        num_nodes = 1 + max((max(s, d) for s, d, _ in rows), default=-1)
    return Graph.from_edges(num_nodes, rows, directed=directed)


def write_edge_list(g: Graph, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "weight"])
        for src, dst, w in g.edges:
            writer.writerow([src, dst, repr(w)])


def read_distance_matrix(path) -> np.ndarray:
    """Read a square CSV of distances; blank cells are missing (NaN)."""
    out = []
    with open(Path(path), newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            out.append([float(c) if c.strip() else np.nan for c in row])
    n = len(out)
    if any(len(r) != n for r in out):
        raise ValueError(f"{path}: distance matrix is not square")
    return np.array(out, dtype=np.float64)

"""Per-node difficulty scores from hidden representations.

A node is easy when its representation sits in a dense region of the
(cosine) feature space and when most of its k-hop graph neighbors fall in
the same ball around it. ``diff = 2 - spatial - temporal`` so larger is harder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from stc_dropout.graph import Graph, NeighborIndex, k_order_neighbors

# cosine distances below this are rounding noise from normalizing parallel vectors
ZERO_DISTANCE_TOL = 1e-12
MAX_COSINE_DISTANCE = 2.0


@dataclass(frozen=True)
class DifficultyReport:
    radius: float
    rho: float
    epsilon_r: float
    k: int
    ball_count: np.ndarray
    spatial: np.ndarray
    temporal: np.ndarray
    diff: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.diff)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# R={float(self.radius)!r},rho={float(self.rho)!r},epsilon_R={float(self.epsilon_r)!r},k={self.k}\n")
            fh.write("node,ball_count,spatial,temporal,diff\n")
            for i in range(self.num_nodes):
                fh.write(
                    f"{i},{int(self.ball_count[i])},{float(self.spatial[i])!r},"
                    f"{float(self.temporal[i])!r},{float(self.diff[i])!r}\n"
                )


def nearest_rank(q: float, n: int) -> int:
    """1-based nearest rank ``ceil(q * n)`` clamped to ``[1, n]``.

    A 1e-9 slack absorbs products like ``0.3 * 10 = 3.0000000000000004``.
    """
    return min(n, max(1, math.ceil(q * n - 1e-9)))


def pairwise_cosine_distance(h) -> np.ndarray:
    """``1 - cos`` between rows of ``h`` after L2 normalization.

    Zero rows are degenerate: their distance to every other node is 2.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2:
        raise ValueError(f"expected a (nodes, features) matrix, got shape {h.shape}")
    norms = np.linalg.norm(h, axis=1)
    zero = norms == 0
    hn = np.zeros_like(h)
    hn[~zero] = h[~zero] / norms[~zero, None]
    d = 1.0 - hn @ hn.T
    d = np.clip(d, 0.0, MAX_COSINE_DISTANCE)
    d[d < ZERO_DISTANCE_TOL] = 0.0
    d[zero, :] = MAX_COSINE_DISTANCE
    d[:, zero] = MAX_COSINE_DISTANCE
    # mirror the upper triangle so the result is exactly symmetric
    d = np.triu(d, 1)
    return d + d.T


def select_radius(dist, rho: float) -> float:
    """Mean over nodes of the nearest-rank rho-quantile of that node's distance row.

    The row includes the zero self-distance.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if n < 2:
        raise ValueError("graph too small: need at least 2 nodes")
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    rank = nearest_rank(rho, n)
    per_node = np.sort(dist, axis=1)[:, rank - 1]
    return float(np.mean(per_node))


def ball_counts(dist, radius: float) -> np.ndarray:
    if radius < 0:
        raise ValueError("radius must be non-negative")
    return np.sum(np.asarray(dist) <= radius, axis=1).astype(np.int64)


def spatial_difficulty_term(dist, radius: float, nbrs: NeighborIndex) -> np.ndarray:
    """Fraction of each node's k-hop neighbors inside its ball; 0 for isolated nodes."""
    dist = np.asarray(dist)
    if len(nbrs) != dist.shape[0]:
        raise ValueError("neighbor index and distance matrix disagree on node count")
    out = np.zeros(dist.shape[0])
    for i, omega in enumerate(nbrs.sets):
        if omega:
            idx = np.fromiter(omega, dtype=np.int64, count=len(omega))
            out[i] = np.count_nonzero(dist[i, idx] <= radius) / len(omega)
    return out


def temporal_difficulty_term(counts) -> tuple[np.ndarray, float]:
    """``b / (b + eps)`` with ``eps`` the mean ball size. Returns ``(terms, eps)``."""
    b = np.asarray(counts, dtype=np.float64)
    if np.any(b < 1):
        raise ValueError("ball counts must be >= 1 (every ball contains its center)")
    eps = float(np.mean(b))
    return b / (b + eps), eps


def difficulty_scores(
    h,
    g: Graph | None = None,
    k: int = 2,
    rho: float = 0.3,
    nbrs: NeighborIndex | None = None,
) -> DifficultyReport:
    """Score every node from its representation row in ``h``.

    Pass a precomputed ``nbrs`` to skip the BFS. It must have order ``k``.
    """
    if nbrs is None:
        if g is None:
            raise ValueError("either a graph or a neighbor index is required")
        nbrs = k_order_neighbors(g, k)
    dist = pairwise_cosine_distance(h)
    radius = select_radius(dist, rho)
    counts = ball_counts(dist, radius)
    spatial = spatial_difficulty_term(dist, radius, nbrs)
    temporal, eps = temporal_difficulty_term(counts)
    return DifficultyReport(
        radius=radius,
        rho=rho,
        epsilon_r=eps,
        k=nbrs.order,
        ball_count=counts,
        spatial=spatial,
        temporal=temporal,
        diff=2.0 - spatial - temporal,
    )

"""Exact k-nearest-neighbor queries over a node set.

Stencil selection depends on the exact distance ranking of neighbors, and
grids produce many exact ties, so queries are post-processed to a fully
deterministic order: ascending distance, then ascending node index.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .geometry import NodeSet

SELF_EXCLUSION_TOL = 1e-14


class SpatialIndex:
    """kd-tree over all nodes of a set, interior first, then boundary.

    Node indices are global: 0..n_interior-1 are interior nodes,
    n_interior..n-1 are boundary nodes.
    """

    def __init__(self, nodes: NodeSet):
        pts = nodes.all_points()
        if len(pts) == 0:
            raise ValueError("cannot index an empty node set")
        self.points = pts
        self.n_interior = nodes.n_interior
        self._tree = cKDTree(pts, leafsize=16)

    def __len__(self) -> int:
        return len(self.points)

    def is_interior(self, i: int) -> bool:
        return i < self.n_interior

    def k_nearest(self, query, k: int, exclude_self: bool = False):
        """The min(k, available) nearest nodes, sorted by (distance, index).

        With exclude_self, nodes within 1e-14 of the query are skipped.
        Returns (indices, distances).
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        query = np.asarray(query, dtype=float)
        n = len(self.points)
        kq = min(k + (1 if exclude_self else 0), n)
        dist, _ = self._tree.query(query, k=kq)
        dist = np.atleast_1d(dist)
        # pull in every node tied with the k-th distance, then re-rank exactly
        radius = dist[-1] * (1.0 + 1e-9) + 1e-300
        pool = np.asarray(self._tree.query_ball_point(query, radius), dtype=np.int64)
        d = np.linalg.norm(self.points[pool] - query, axis=1)
        if exclude_self:
            keep = d >= SELF_EXCLUSION_TOL
            pool, d = pool[keep], d[keep]
        order = np.lexsort((pool, d))[:k]
        return pool[order], d[order]

    def lattice_neighbor(self, p, offset, h: float):
        """Index of the node within 1e-9*h of p + offset, or None."""
        if not h > 0:
            raise ValueError(f"h must be positive, got {h}")
        target = np.asarray(p, dtype=float) + np.asarray(offset, dtype=float)
        dist, idx = self._tree.query(target, k=1)
        if dist <= 1e-9 * h:
            return int(idx)
        return None

    def lattice_neighbor_many(self, pts, offset, h: float) -> np.ndarray:
        """Vectorized lattice_neighbor over rows of pts; -1 marks absence."""
        if not h > 0:
            raise ValueError(f"h must be positive, got {h}")
        target = np.asarray(pts, dtype=float) + np.asarray(offset, dtype=float)
        dist, idx = self._tree.query(target, k=1)
        return np.where(dist <= 1e-9 * h, idx, -1)

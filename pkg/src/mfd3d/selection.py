"""Stencil selection: choosing the influence set of each interior node.

The default algorithm improves plain octant-based selection by a two-stage
procedure: first a candidate cloud is formed by keeping the closest few
neighbors in each of 8, 16 or 24 direction cones around the center; then
candidates are admitted in order of increasing distance provided they stay
separated from already chosen nodes by at least the standard distance
    rho = (delta/6) * sum of the six nearest-neighbor distances,
which is relaxed geometrically (rho *= delta) whenever a full sweep over
the remaining candidates cannot fill the set.  The result balances closeness
to the center against even angular coverage, which is what makes the
downstream differentiation weights well behaved on irregular nodes.

Alternative selectors kept for comparison: closest-per-half-octant,
k nearest neighbors, edge adjacency in a tetrahedral mesh, the exact
7-node grid stencil, and pivot-column selection from a column-pivoted QR
of the polynomial collocation matrix (which also yields the weights).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .spatial import SpatialIndex
from .weights import PolyBasis, WeightFailure, polynomial_dimension

PQR_RANK_RTOL = 1e-10
PQR_RESIDUAL_RTOL = 1e-9


class SelectionError(ValueError):
    """Influence-set selection is impossible for this node (too few neighbors)."""


@dataclass(frozen=True)
class SelectionParams:
    """Parameters of the octant/distance selection algorithm."""

    m: int = 100        # initial cloud size, including the center
    k: int = 17         # target influence-set size
    s: int = 1          # octant subdivisions (1, 2 or 3)
    n: int = 3          # candidates kept per octant, a multiple of s
    delta: float = 0.9  # standard distance tolerance in (0, 1)

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0,1), got {self.delta}")
        if self.s not in (1, 2, 3):
            raise ValueError(f"s must be 1, 2 or 3, got {self.s}")
        if self.n % self.s != 0 or self.n <= 0:
            raise ValueError(f"n must be a positive multiple of s, got n={self.n}, s={self.s}")
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.m <= self.k:
            raise ValueError(f"m must exceed k, got m={self.m}, k={self.k}")


@dataclass
class InfluenceSet:
    """Center node plus the selected influence nodes; members[0] is the center."""

    center: int
    members: np.ndarray

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=np.int64)
        if self.members[0] != self.center:
            raise ValueError("first member must be the center node")
        if len(np.unique(self.members)) != len(self.members):
            raise ValueError("influence set contains duplicate nodes")

    @property
    def size(self) -> int:
        return len(self.members)


def classify_cones(vectors, s: int) -> np.ndarray:
    """Cone index in 1..8s for each vector (octants, half- or third-octants).

    Zero coordinates count as positive, so every nonzero vector falls in
    exactly one cone.  For s=2 each octant splits by |x| >= |y|; for s=3 by
    the axis of the largest absolute coordinate, ties to the lowest axis.
    """
    v = np.atleast_2d(np.asarray(vectors, dtype=float))
    if np.any(np.all(v == 0.0, axis=1)):
        raise ValueError("cannot classify the zero vector")
    octant = ((v[:, 0] < 0).astype(np.int64)
              + 2 * (v[:, 1] < 0)
              + 4 * (v[:, 2] < 0))
    if s == 1:
        return octant + 1
    mag = np.abs(v)
    if s == 2:
        sub = (mag[:, 0] < mag[:, 1]).astype(np.int64)
        return 2 * octant + sub + 1
    if s == 3:
        sub = np.argmax(mag, axis=1)
        return 3 * octant + sub + 1
    raise ValueError(f"s must be 1, 2 or 3, got {s}")


def classify_cone(vector, s: int) -> int:
    return int(classify_cones(np.asarray(vector, dtype=float).reshape(1, 3), s)[0])


def select_oct_dist(center: int, index: SpatialIndex,
                    params: SelectionParams = None) -> InfluenceSet:
    """Octant-based selection with distance separation (two-stage algorithm)."""
    params = params or SelectionParams()
    zeta = index.points[center]
    neighbors, dist = index.k_nearest(zeta, params.m - 1, exclude_self=True)
    if len(neighbors) < 6:
        raise SelectionError(
            f"node {center}: need at least 6 neighbors to set the standard distance")
    rho = params.delta / 6.0 * float(dist[:6].sum())

    # stage I: keep the nu closest neighbors in each of the 8s cones
    vecs = index.points[neighbors] - zeta
    cones = classify_cones(vecs, params.s)
    nu = params.n // params.s
    taken = np.zeros(8 * params.s + 1, dtype=np.int64)
    cand_mask = np.zeros(len(neighbors), dtype=bool)
    for i, cone in enumerate(cones):
        if taken[cone] < nu:
            taken[cone] += 1
            cand_mask[i] = True
    cand = neighbors[cand_mask]            # ascending (distance, index) order

    if len(cand) <= params.k - 1:
        return InfluenceSet(center, np.concatenate([[center], cand]))

    # stage II: seed with the closest candidate of each octant, in octant order
    octants = classify_cones(index.points[cand] - zeta, 1)
    selected = []
    for o in range(1, 9):
        positions = np.nonzero(octants == o)[0]
        if len(positions):
            selected.append(int(cand[positions[0]]))
    selected_set = set(selected)
    selected_pts = [index.points[i] for i in selected]
    remaining = [int(c) for c in cand if int(c) not in selected_set]

    # admit remaining candidates by increasing distance whenever they keep at
    # least rho away from everything already selected; after every full sweep
    # that leaves the set unfilled, relax rho and sweep again
    while len(selected) < params.k - 1 and remaining:
        for c in remaining:
            dmin = min(np.linalg.norm(index.points[c] - q) for q in selected_pts)
            if dmin >= rho:
                selected.append(c)
                selected_set.add(c)
                selected_pts.append(index.points[c])
                if len(selected) == params.k - 1:
                    break
        remaining = [c for c in remaining if c not in selected_set]
        rho *= params.delta
    return InfluenceSet(center, np.concatenate([[center], selected]))


def select_oct(center: int, index: SpatialIndex) -> InfluenceSet:
    """Closest node per half-octant among the 100 nearest neighbors (<= 17 nodes)."""
    zeta = index.points[center]
    neighbors, _ = index.k_nearest(zeta, 100, exclude_self=True)
    if len(neighbors) == 0:
        return InfluenceSet(center, np.array([center]))
    cones = classify_cones(index.points[neighbors] - zeta, 2)
    members = []
    seen = set()
    for pos, cone in enumerate(cones):
        if cone not in seen:
            seen.add(cone)
            members.append(neighbors[pos])
    return InfluenceSet(center, np.concatenate([[center], members]))


def select_knear(center: int, index: SpatialIndex, k: int) -> InfluenceSet:
    """The center plus its k-1 nearest nodes."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k == 1:
        return InfluenceSet(center, np.array([center]))
    neighbors, _ = index.k_nearest(index.points[center], k - 1, exclude_self=True)
    return InfluenceSet(center, np.concatenate([[center], neighbors]))


def tet_vertex_adjacency(tets: np.ndarray, n_vertices: int):
    """Vertex-to-vertex adjacency sets over tetrahedron edges."""
    adj = [set() for _ in range(n_vertices)]
    for tet in tets:
        for a in range(4):
            for b in range(a + 1, 4):
                adj[tet[a]].add(tet[b])
                adj[tet[b]].add(tet[a])
    return adj


def select_tet(center: int, tet_mesh, node_map: np.ndarray,
               adjacency=None) -> InfluenceSet:
    """The center plus all nodes sharing a tetrahedron edge with it.

    node_map[v] is the global node index of mesh vertex v; a precomputed
    adjacency (from tet_vertex_adjacency) avoids re-walking the mesh.
    """
    node_map = np.asarray(node_map, dtype=np.int64)
    where = np.nonzero(node_map == center)[0]
    if len(where) == 0:
        raise SelectionError(f"node {center} is not a vertex of the tetrahedral mesh")
    vertex = int(where[0])
    if adjacency is None:
        adjacency = tet_vertex_adjacency(tet_mesh.tets, len(tet_mesh.vertices))
    linked = sorted(int(node_map[v]) for v in adjacency[vertex])
    return InfluenceSet(center, np.concatenate([[center], linked]))


_STAR_OFFSETS = np.array([
    [1, 0, 0], [-1, 0, 0],
    [0, 1, 0], [0, -1, 0],
    [0, 0, 1], [0, 0, -1],
], dtype=float)


def select_grid_7star(center: int, index: SpatialIndex, h: float):
    """The classical 7-node grid stencil, or None when any of the six axis
    neighbors is missing from the interior nodes."""
    p = index.points[center]
    members = [center]
    for off in _STAR_OFFSETS * h:
        j = index.lattice_neighbor(p, off, h)
        if j is None or not index.is_interior(j):
            return None
        members.append(j)
    return InfluenceSet(center, np.array(members))


def select_pqr(center: int, index: SpatialIndex, order: int,
               n_candidates: int = 100):
    """Influence set and weights from pivot columns of the polynomial
    collocation matrix (column-pivoted QR), order 3 or 4.

    The basis is shifted to the center and scaled by the mean distance of the
    six nearest neighbors; in the shifted basis only the constant row involves
    the center, so the QR runs on the non-constant rows over the neighbor
    candidates and the center weight is recovered from constant exactness.
    Raises WeightFailure when no polynomially exact weights exist on the
    candidates.
    """
    if order not in (3, 4):
        raise ValueError(f"pQR order must be 3 or 4, got {order}")
    big_l = polynomial_dimension(order)
    zeta = index.points[center]
    neighbors, dist = index.k_nearest(zeta, n_candidates, exclude_self=True)
    if len(neighbors) < big_l:
        raise WeightFailure(
            f"node {center}: only {len(neighbors)} candidates for pQR order {order}")
    r_loc = float(dist[:6].mean())
    y = (index.points[neighbors] - zeta) / r_loc

    basis = PolyBasis(order)
    pmat = basis.eval(y)                            # (L, ncand)
    rhs = basis.laplacian(np.zeros((1, 3)))[:, 0]   # lap p_i at the center
    # rows 1..L-1: in the shifted basis the center's column would be e_1, so
    # the constant row is settled by the center weight alone
    p_sub = pmat[1:]
    b_sub = rhs[1:]

    q_fact, r_fact, piv = scipy.linalg.qr(p_sub, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r_fact))
    if diag.size == 0 or diag[0] == 0.0:
        raise WeightFailure(f"node {center}: zero collocation matrix in pQR")
    rank = int(np.count_nonzero(diag > PQR_RANK_RTOL * diag[0]))
    sel = piv[:rank]
    v = scipy.linalg.solve_triangular(r_fact[:rank, :rank], (q_fact.T @ b_sub)[:rank])

    resid = np.linalg.norm(p_sub[:, sel] @ v - b_sub)
    if resid > PQR_RESIDUAL_RTOL * np.linalg.norm(b_sub):
        raise WeightFailure(
            f"node {center}: polynomial exactness of order {order} unsolvable "
            f"on {len(neighbors)} candidates (residual {resid:.2e})")

    members = np.concatenate([[center], neighbors[sel]])
    weights = np.concatenate([[-v.sum()], v]) / r_loc ** 2
    return InfluenceSet(center, members), weights

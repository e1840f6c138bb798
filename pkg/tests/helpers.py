"""Shared fixtures and independent oracles used across the test suite.

Oracles here deliberately re-derive results by a different route than the
library (brute force, enumeration, finite differences) so the two sides of
each check stay independent.
"""

import struct

import numpy as np

CUBE_VERTS = np.array([
    [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
], dtype=float)

# 12 triangles of the unit cube, outward oriented
CUBE_TRIS = np.array([
    [0, 2, 1], [0, 3, 2],        # z = 0
    [4, 5, 6], [4, 6, 7],        # z = 1
    [0, 1, 5], [0, 5, 4],        # y = 0
    [3, 6, 2], [3, 7, 6],        # y = 1
    [0, 4, 7], [0, 7, 3],        # x = 0
    [1, 2, 6], [1, 6, 5],        # x = 1
])


def cube_triangle_soup():
    """(12, 3, 3) float array of the unit-cube triangles."""
    return CUBE_VERTS[CUBE_TRIS]


def binary_stl_bytes(triangles, header=b"test", count=None):
    """Raw binary STL bytes for a (nt, 3, 3) triangle array."""
    triangles = np.asarray(triangles, dtype=float)
    nt = len(triangles) if count is None else count
    out = [header[:80].ljust(80, b"\0"), struct.pack("<I", nt)]
    for tri in triangles:
        e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
        n = np.cross(e1, e2)
        norm = np.linalg.norm(n)
        n = n / norm if norm else n
        rec = struct.pack("<12f", *n.astype(np.float32), *tri.astype(np.float32).ravel())
        out.append(rec + struct.pack("<H", 0))
    return b"".join(out)


def ascii_stl_text(triangles, name="part"):
    lines = [f"solid {name}"]
    for tri in np.asarray(triangles, dtype=float):
        e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
        n = np.cross(e1, e2)
        norm = np.linalg.norm(n)
        n = n / norm if norm else n
        lines.append(f"  facet normal {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}")
        lines.append("    outer loop")
        for v in tri:
            lines.append(f"      vertex {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
        lines.append("    endloop")
        lines.append("  endfacet")
    lines.append(f"endsolid {name}")
    return "\n".join(lines) + "\n"


def count_ray_crossings(point, direction, triangles):
    """Brute-force ray/triangle crossing count (Moller-Trumbore, strict hits)."""
    point = np.asarray(point, dtype=float)
    direction = np.asarray(direction, dtype=float)
    hits = 0
    for tri in np.asarray(triangles, dtype=float):
        e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
        h = np.cross(direction, e2)
        det = e1 @ h
        if abs(det) < 1e-14:
            continue
        t_vec = point - tri[0]
        u = (t_vec @ h) / det
        q = np.cross(t_vec, e1)
        v = (direction @ q) / det
        t = (e2 @ q) / det
        if t > 1e-12 and u > 1e-12 and v > 1e-12 and u + v < 1 - 1e-12:
            hits += 1
    return hits


def point_segment_distance(p, a, b):
    ab = b - a
    t = np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t * ab))


def point_triangle_distance(p, tri):
    """Independent exact point-triangle distance: plane foot if inside,
    otherwise the closest edge."""
    a, b, c = tri
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n)
    foot = p - ((p - a) @ n) * n
    # barycentric test for the foot
    v0, v1, v2 = b - a, c - a, foot - a
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    den = d00 * d11 - d01 * d01
    s = (d11 * d20 - d01 * d21) / den
    t = (d00 * d21 - d01 * d20) / den
    if s >= 0 and t >= 0 and s + t <= 1:
        return abs((p - a) @ n)
    return min(point_segment_distance(p, a, b),
               point_segment_distance(p, b, c),
               point_segment_distance(p, a, c))


def brute_force_knn(points, query, k, exclude_self=False):
    """Sorted-by-(distance, index) k nearest; the oracle for SpatialIndex."""
    d = np.linalg.norm(points - query, axis=1)
    idx = np.arange(len(points))
    if exclude_self:
        keep = d >= 1e-14
        d, idx = d[keep], idx[keep]
    order = np.lexsort((idx, d))[:k]
    return idx[order], d[order]


def random_cloud(n, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return scale * rng.uniform(-1.0, 1.0, size=(n, 3))

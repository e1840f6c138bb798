"""Domain geometry for meshless discretizations.

Domains are either analytic balls or watertight triangle surface meshes
loaded from STL.  Both answer inside/outside, distance-to-boundary and
orthogonal-projection queries, which is all the node generators need:
interior nodes come from a Cartesian lattice or the Halton quasi-random
sequence, cleared of points outside the domain or closer than 0.25*h to
the boundary; boundary nodes are orthogonal projections of interior nodes
lying within h of the boundary.

Tetrahedral meshes appear only as inputs for edge-adjacency stencil
selection and for the shape-quality statistic
    gamma = 2*sqrt(6) * inradius / diameter,
which is 1 for the regular tetrahedron and 0 for a degenerate one.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


class GeometryError(ValueError):
    """Invalid geometric input: bad STL payload, degenerate query, empty result."""


# ---------------------------------------------------------------------------
# Surface meshes and STL I/O
# ---------------------------------------------------------------------------

_STL_RECORD = np.dtype([("normal", "<f4", 3), ("verts", "<f4", (3, 3)), ("attr", "<u2")])


@dataclass
class SurfaceMesh:
    """Triangle surface mesh with vertices deduplicated by exact equality.

    Normals are recomputed from the vertex coordinates (unit length);
    whatever normals the file declared are ignored.
    """

    vertices: np.ndarray      # (nv, 3) float64
    triangles: np.ndarray     # (nt, 3) int64 vertex indices
    normals: np.ndarray = field(default=None)  # (nt, 3) unit normals
    degenerate_dropped: int = 0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise GeometryError("triangle vertex index out of range")
        if self.normals is None:
            self.normals = _triangle_normals(self.vertices, self.triangles)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def _triangle_normals(vertices, triangles):
    a = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - a
    e2 = vertices[triangles[:, 2]] - a
    n = np.cross(e1, e2)
    length = np.linalg.norm(n, axis=1)
    length[length == 0] = 1.0
    return n / length[:, None]


def _build_mesh(raw_triangles: np.ndarray) -> SurfaceMesh:
    """Deduplicate vertices exactly and drop degenerate triangles."""
    raw = np.asarray(raw_triangles, dtype=float)     # (nt, 3, 3)
    if raw.size == 0:
        raise GeometryError("STL contains zero triangles")
    flat = raw.reshape(-1, 3)
    lo, hi = flat.min(axis=0), flat.max(axis=0)
    diag_sq = float(np.sum((hi - lo) ** 2))

    index = {}
    vertices = []
    tri = np.empty((len(raw), 3), dtype=np.int64)
    for t in range(len(raw)):
        for j in range(3):
            key = (raw[t, j, 0], raw[t, j, 1], raw[t, j, 2])
            idx = index.get(key)
            if idx is None:
                idx = len(vertices)
                index[key] = idx
                vertices.append(raw[t, j])
            tri[t, j] = idx
    vertices = np.asarray(vertices)

    e1 = vertices[tri[:, 1]] - vertices[tri[:, 0]]
    e2 = vertices[tri[:, 2]] - vertices[tri[:, 0]]
    area = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
    good = area > 1e-12 * diag_sq
    dropped = int(np.count_nonzero(~good))
    if dropped:
        warnings.warn(f"dropped {dropped} degenerate STL triangle(s)", stacklevel=3)
    tri = tri[good]
    if len(tri) == 0:
        raise GeometryError("STL contains zero non-degenerate triangles")
    # keep only referenced vertices, preserving first-occurrence order
    used = np.unique(tri)
    remap = np.full(len(vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return SurfaceMesh(vertices[used], remap[tri], degenerate_dropped=dropped)


def parse_stl(data: bytes) -> SurfaceMesh:
    """Parse binary or ASCII STL bytes.

    Binary is detected by exact size arithmetic (80-byte header, uint32
    triangle count, 50-byte records); when the sizes disagree and the file
    starts with ``solid``, ASCII parsing is attempted instead.
    """
    if len(data) >= 84:
        count = struct.unpack_from("<I", data, 80)[0]
        if len(data) == 84 + 50 * count:
            return _parse_stl_binary(data, count)
        if not data.lstrip()[:5].lower() == b"solid":
            have = (len(data) - 84) // 50
            raise GeometryError(
                f"truncated binary STL: header declares {count} triangles, "
                f"payload holds {max(have, 0)}")
        return _parse_stl_ascii(data)
    if data.lstrip()[:5].lower() == b"solid":
        return _parse_stl_ascii(data)
    raise GeometryError("not an STL file: too short for binary, no 'solid' prefix")


def _parse_stl_binary(data: bytes, count: int) -> SurfaceMesh:
    if count == 0:
        raise GeometryError("STL contains zero triangles")
    records = np.frombuffer(data, dtype=_STL_RECORD, count=count, offset=84)
    return _build_mesh(records["verts"].astype(float))


def _parse_stl_ascii(data: bytes) -> SurfaceMesh:
    lines = data.decode("ascii", errors="replace").splitlines()
    pos = 0

    def next_tokens():
        nonlocal pos
        while pos < len(lines):
            toks = lines[pos].split()
            pos += 1
            if toks:
                return toks, pos
        return None, pos

    def syntax(lineno, expected, got):
        return GeometryError(f"ASCII STL syntax error at line {lineno}: "
                             f"expected {expected}, got {got!r}")

    toks, ln = next_tokens()
    if toks is None or toks[0].lower() != "solid":
        raise syntax(ln, "'solid'", " ".join(toks or []))

    triangles = []
    while True:
        toks, ln = next_tokens()
        if toks is None:
            raise syntax(ln, "'facet' or 'endsolid'", "end of file")
        head = toks[0].lower()
        if head == "endsolid":
            break
        if head != "facet":
            raise syntax(ln, "'facet' or 'endsolid'", " ".join(toks))
        toks, ln = next_tokens()
        if toks is None or [t.lower() for t in toks[:2]] != ["outer", "loop"]:
            raise syntax(ln, "'outer loop'", " ".join(toks or []))
        tri = np.empty((3, 3))
        for j in range(3):
            toks, ln = next_tokens()
            if toks is None or toks[0].lower() != "vertex" or len(toks) != 4:
                raise syntax(ln, "'vertex x y z'", " ".join(toks or []))
            try:
                tri[j] = [float(v) for v in toks[1:4]]
            except ValueError:
                raise syntax(ln, "numeric vertex coordinates", " ".join(toks)) from None
        toks, ln = next_tokens()
        if toks is None or toks[0].lower() != "endloop":
            raise syntax(ln, "'endloop'", " ".join(toks or []))
        toks, ln = next_tokens()
        if toks is None or toks[0].lower() != "endfacet":
            raise syntax(ln, "'endfacet'", " ".join(toks or []))
        triangles.append(tri)
    if not triangles:
        raise GeometryError("STL contains zero triangles")
    return _build_mesh(np.asarray(triangles))


def write_stl_binary(mesh: SurfaceMesh, header: bytes = b"mfd3d binary STL") -> bytes:
    """Serialize a mesh back to binary STL (recomputed normals, zero attributes)."""
    records = np.zeros(mesh.n_triangles, dtype=_STL_RECORD)
    records["normal"] = mesh.normals.astype("<f4")
    records["verts"] = mesh.vertices[mesh.triangles].astype("<f4")
    head = header[:80].ljust(80, b"\0")
    return head + struct.pack("<I", mesh.n_triangles) + records.tobytes()


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------

class Domain:
    """Common query interface for analytic and mesh-based domains."""

    def bounding_box(self):
        raise NotImplementedError

    def contains(self, p) -> bool:
        raise NotImplementedError

    def distance_to_boundary(self, p) -> float:
        raise NotImplementedError

    def project_to_boundary(self, p):
        raise NotImplementedError

    def contains_many(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.fromiter((self.contains(p) for p in pts), dtype=bool, count=len(pts))

    def distance_to_boundary_many(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.fromiter((self.distance_to_boundary(p) for p in pts),
                           dtype=float, count=len(pts))

    def project_to_boundary_many(self, pts):
        pts = np.asarray(pts, dtype=float)
        if len(pts) == 0:
            return pts.reshape(0, 3)
        return np.vstack([self.project_to_boundary(p) for p in pts])


@dataclass(frozen=True)
class Ball(Domain):
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        if not self.radius > 0:
            raise GeometryError(f"ball radius must be positive, got {self.radius}")

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def contains(self, p) -> bool:
        return bool(np.linalg.norm(np.asarray(p, dtype=float) - self.center) < self.radius)

    def contains_many(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.linalg.norm(pts - self.center, axis=1) < self.radius

    def distance_to_boundary(self, p) -> float:
        return abs(self.radius - np.linalg.norm(np.asarray(p, dtype=float) - self.center))

    def distance_to_boundary_many(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.abs(self.radius - np.linalg.norm(pts - self.center, axis=1))

    def project_to_boundary(self, p):
        p = np.asarray(p, dtype=float)
        r = np.linalg.norm(p - self.center)
        if r == 0.0:
            raise GeometryError("projection undefined at the ball center")
        return self.center + self.radius * (p - self.center) / r

    def project_to_boundary_many(self, pts):
        pts = np.asarray(pts, dtype=float)
        r = np.linalg.norm(pts - self.center, axis=1)
        if np.any(r == 0.0):
            raise GeometryError("projection undefined at the ball center")
        return self.center + self.radius * (pts - self.center) / r[:, None]


class MeshDomain(Domain):
    """Watertight triangle-mesh domain with parity ray-cast inside test.

    The primary ray direction is +x; whenever a cast passes within a
    relative 1e-10 of a triangle edge, vertex, or plane (for rays nearly
    parallel to a face), it is re-cast along a seeded pseudo-random
    direction, at most 16 times.
    """

    MAX_RETRIES = 16

    def __init__(self, mesh: SurfaceMesh, seed: int = 0):
        self.mesh = mesh
        self._v0 = mesh.vertices[mesh.triangles[:, 0]]
        self._e1 = mesh.vertices[mesh.triangles[:, 1]] - self._v0
        self._e2 = mesh.vertices[mesh.triangles[:, 2]] - self._v0
        self._edge_scale = np.linalg.norm(self._e1, axis=1) * np.linalg.norm(self._e2, axis=1)
        lo, hi = mesh.bounding_box()
        self._bbox = (lo, hi)
        self._diag = float(np.linalg.norm(hi - lo))
        rng = np.random.default_rng(seed)
        dirs = rng.standard_normal((self.MAX_RETRIES, 3))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        self._retry_dirs = dirs

    def bounding_box(self):
        return self._bbox

    def _crossings(self, p, direction):
        """Count ray/triangle crossings; second value False when ambiguous."""
        d = direction
        h = np.cross(d, self._e2)
        det = np.einsum("ij,ij->i", self._e1, h)
        near_parallel = np.abs(det) <= 1e-12 * self._edge_scale
        safe = np.where(near_parallel, 1.0, det)
        tvec = p - self._v0
        q = np.cross(tvec, self._e1)
        u = np.einsum("ij,ij->i", tvec, h) / safe
        v = np.einsum("ij,ij->i", d[None, :], q) / safe
        t = np.einsum("ij,ij->i", self._e2, q) / safe
        w = 1.0 - u - v

        tol = 1e-10
        tol_t = 1e-10 * self._diag
        bmin = np.minimum(np.minimum(u, v), w)
        # rays nearly inside a face plane may graze the triangle undetected
        plane_dist = np.abs(np.einsum("ij,ij->i", tvec, self.mesh.normals))
        ambiguous = near_parallel & (plane_dist <= tol_t)
        # hits near an edge/vertex or with the origin nearly on the surface
        near_hit = ~near_parallel & (t > -tol_t) & (bmin > -tol)
        ambiguous |= near_hit & ((bmin <= tol) | (t <= tol_t))
        if np.any(ambiguous):
            return 0, False
        hit = ~near_parallel & (t > tol_t) & (bmin > tol)
        return int(np.count_nonzero(hit)), True

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        lo, hi = self._bbox
        if np.any(p < lo) or np.any(p > hi):
            return False
        count, ok = self._crossings(p, np.array([1.0, 0.0, 0.0]))
        retry = 0
        while not ok:
            if retry >= self.MAX_RETRIES:
                raise GeometryError(
                    f"inside test did not resolve after {self.MAX_RETRIES} ray retries "
                    f"at point {p.tolist()} (pathological geometry)")
            count, ok = self._crossings(p, self._retry_dirs[retry])
            retry += 1
        return count % 2 == 1

    def _closest_points(self, p):
        """Exact closest point to p on every triangle (Eberly region method)."""
        a = np.einsum("ij,ij->i", self._e1, self._e1)
        b = np.einsum("ij,ij->i", self._e1, self._e2)
        c = np.einsum("ij,ij->i", self._e2, self._e2)
        dvec = self._v0 - p
        d = np.einsum("ij,ij->i", self._e1, dvec)
        e = np.einsum("ij,ij->i", self._e2, dvec)

        det = np.maximum(a * c - b * b, 1e-300)
        s = b * e - c * d
        t = b * d - a * e

        safe_a = np.maximum(a, 1e-300)
        safe_c = np.maximum(c, 1e-300)
        denom_sym = np.maximum(a - 2.0 * b + c, 1e-300)

        inside = (s + t) <= det
        clamp = lambda x: np.clip(x, 0.0, 1.0)

        # region 0: interior of the parameter triangle
        s0, t0 = s / det, t / det
        # regions along the edges/vertices
        s_edge0 = clamp(-d / safe_a)            # t = 0 edge
        t_edge0 = clamp(-e / safe_c)            # s = 0 edge
        s_diag = clamp(((c + e) - (b + d)) / denom_sym)   # s + t = 1 edge
        t_diag = clamp(((a + d) - (b + e)) / denom_sym)

        s_out = np.where(
            inside,
            np.where(s < 0, 0.0, np.where(t < 0, s_edge0, s0)),
            np.where(s < 0,
                     np.where((c + e) > (b + d), s_diag, 0.0),
                     np.where(t < 0,
                              np.where((a + d) > (b + e), 1.0 - t_diag, s_edge0),
                              s_diag)))
        t_out = np.where(
            inside,
            np.where(s < 0,
                     np.where(t < 0, np.where(d < 0, 0.0, t_edge0), t_edge0),
                     np.where(t < 0, 0.0, t0)),
            np.where(s < 0,
                     np.where((c + e) > (b + d), 1.0 - s_diag, t_edge0),
                     np.where(t < 0,
                              np.where((a + d) > (b + e), t_diag, 0.0),
                              1.0 - s_diag)))
        # region 4 needs s on the t=0 edge when d < 0
        region4 = inside & (s < 0) & (t < 0)
        s_out = np.where(region4, np.where(d < 0, s_edge0, 0.0), s_out)

        return self._v0 + s_out[:, None] * self._e1 + t_out[:, None] * self._e2

    def distance_to_boundary(self, p) -> float:
        p = np.asarray(p, dtype=float)
        cp = self._closest_points(p)
        return float(np.min(np.linalg.norm(cp - p, axis=1)))

    def project_to_boundary(self, p):
        p = np.asarray(p, dtype=float)
        cp = self._closest_points(p)
        i = int(np.argmin(np.linalg.norm(cp - p, axis=1)))   # ties: lowest triangle index
        return cp[i]


# ---------------------------------------------------------------------------
# Node sets
# ---------------------------------------------------------------------------

@dataclass
class NodeSet:
    """Discretization nodes split into interior and boundary lists."""

    interior: np.ndarray   # (n_int, 3)
    boundary: np.ndarray   # (n_bnd, 3)

    def __post_init__(self):
        self.interior = np.asarray(self.interior, dtype=float).reshape(-1, 3)
        self.boundary = np.asarray(self.boundary, dtype=float).reshape(-1, 3)
        if not (np.all(np.isfinite(self.interior)) and np.all(np.isfinite(self.boundary))):
            raise GeometryError("node coordinates must be finite")

    @property
    def n_interior(self) -> int:
        return len(self.interior)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary)

    def all_points(self) -> np.ndarray:
        return np.vstack([self.interior, self.boundary])


def generate_grid_nodes(domain: Domain, h: float) -> np.ndarray:
    """Interior nodes on the lattice bbox_min + h/2 + h*(i,j,k).

    Keeps lattice points that lie inside the domain with clearance
    at least 0.25*h from its boundary.
    """
    if not h > 0:
        raise GeometryError(f"grid spacing must be positive, got {h}")
    lo, hi = domain.bounding_box()
    start = lo + 0.5 * h
    counts = np.floor((hi - start) / h).astype(int) + 1
    if np.any(counts <= 0):
        raise GeometryError(f"spacing h={h} exceeds the domain bounding box")
    axes = [start[a] + h * np.arange(counts[a]) for a in range(3)]
    grid = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grid], axis=1)
    pts = pts[domain.contains_many(pts)]
    if len(pts):
        pts = pts[domain.distance_to_boundary_many(pts) >= 0.25 * h]
    if len(pts) == 0:
        raise GeometryError(f"no grid nodes at spacing h={h} (domain too small)")
    return pts


def halton_points(start_index: int, count: int, bases=(2, 3, 5)) -> np.ndarray:
    """Halton points in [0,1)^d by radical inversion, unscrambled, 1-based."""
    idx = np.arange(start_index, start_index + count, dtype=np.int64)
    out = np.empty((count, len(bases)))
    for d, base in enumerate(bases):
        i = idx.copy()
        value = np.zeros(count)
        factor = 1.0 / base
        while np.any(i > 0):
            value += factor * (i % base)
            i //= base
            factor /= base
        out[:, d] = value
    return out


def generate_halton_nodes(domain: Domain, h: float, pilot: int = 10000,
                          target: int = None) -> np.ndarray:
    """Interior nodes from the (2,3,5) Halton stream mapped to the bounding box.

    The target count is round(V/h^3) with the domain volume V estimated from
    the fraction of the first `pilot` raw Halton points that lie inside
    (a caller-supplied `target` overrides the estimate).  Accepted nodes are
    a prefix-stable subsequence of the stream: raising the target never
    changes earlier accepted points.
    """
    if not h > 0:
        raise GeometryError(f"target spacing must be positive, got {h}")
    lo, hi = domain.bounding_box()
    span = hi - lo

    if target is None:
        raw = lo + halton_points(1, pilot) * span
        inside_frac = np.count_nonzero(domain.contains_many(raw)) / pilot
        volume = inside_frac * float(np.prod(span))
        target = int(round(volume / h ** 3))
    if target == 0:
        raise GeometryError(f"target node count is zero at spacing h={h}")

    accepted = []
    n_accepted = 0
    drawn = 0
    clearance = 0.25 * h
    block = max(pilot, 4 * target)
    while n_accepted < target:
        raw = lo + halton_points(drawn + 1, block) * span
        drawn += block
        keep = domain.contains_many(raw)
        if np.any(keep):
            pts = raw[keep]
            keep2 = domain.distance_to_boundary_many(pts) >= clearance
            pts = pts[keep2]
            if len(pts):
                accepted.append(pts)
                n_accepted += len(pts)
        if n_accepted == 0 and drawn >= 10 * target:
            raise GeometryError(
                f"no Halton points accepted after {drawn} draws (h={h} too small "
                "a clearance or degenerate domain)")
    return np.vstack(accepted)[:target]


def project_boundary_nodes(domain: Domain, interior: np.ndarray, h: float) -> np.ndarray:
    """Orthogonal projections of interior nodes closer than h to the boundary.

    Near-duplicates (pairwise distance below 1e-6*h) are merged keeping the
    first occurrence.
    """
    interior = np.asarray(interior, dtype=float).reshape(-1, 3)
    if len(interior) == 0:
        return np.zeros((0, 3))
    near = domain.distance_to_boundary_many(interior) < h
    pts = domain.project_to_boundary_many(interior[near])
    if len(pts) == 0:
        return pts
    tol = 1e-6 * h
    tree = cKDTree(pts)
    keep = np.ones(len(pts), dtype=bool)
    for i in range(len(pts)):
        if not keep[i]:
            continue
        for j in tree.query_ball_point(pts[i], tol):
            if j > i and keep[j] and np.linalg.norm(pts[j] - pts[i]) < tol:
                keep[j] = False
    return pts[keep]


def save_nodes(path, nodes: NodeSet) -> None:
    """Write the plain-text node file: 'N_int N_bnd' then one point per line."""
    with open(path, "w") as f:
        f.write(f"{nodes.n_interior} {nodes.n_boundary}\n")
        for block in (nodes.interior, nodes.boundary):
            for x, y, z in block:
                f.write(f"{x:.17g} {y:.17g} {z:.17g}\n")


def load_nodes(path) -> NodeSet:
    with open(path) as f:
        lines = f.readlines()
    if not lines:
        raise GeometryError(f"{path}: empty node file")
    head = lines[0].split()
    if len(head) != 2:
        raise GeometryError(f"{path}: line 1: expected 'N_int N_bnd'")
    try:
        n_int, n_bnd = int(head[0]), int(head[1])
    except ValueError:
        raise GeometryError(f"{path}: line 1: non-integer node counts") from None
    pts = np.empty((n_int + n_bnd, 3))
    row = 0
    for lineno, line in enumerate(lines[1:], start=2):
        toks = line.split()
        if not toks:
            continue
        if row >= len(pts):
            raise GeometryError(f"{path}: line {lineno}: more points than declared")
        if len(toks) != 3:
            raise GeometryError(f"{path}: line {lineno}: expected 'x y z'")
        try:
            pts[row] = [float(v) for v in toks]
        except ValueError:
            raise GeometryError(f"{path}: line {lineno}: bad coordinate") from None
        row += 1
    if row != len(pts):
        raise GeometryError(
            f"{path}: line {len(lines)}: expected {len(pts)} points, found {row}")
    return NodeSet(pts[:n_int], pts[n_int:])


# ---------------------------------------------------------------------------
# Tetrahedral meshes and shape quality
# ---------------------------------------------------------------------------

@dataclass
class TetMesh:
    vertices: np.ndarray        # (nv, 3)
    tets: np.ndarray            # (nt, 4) int64
    boundary: np.ndarray = None  # (nv,) bool flags, optional

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.tets = np.asarray(self.tets, dtype=np.int64).reshape(-1, 4)
        if self.tets.size and (self.tets.min() < 0 or self.tets.max() >= len(self.vertices)):
            raise GeometryError("tetrahedron vertex index out of range")
        if self.boundary is None:
            self.boundary = np.zeros(len(self.vertices), dtype=bool)
        else:
            self.boundary = np.asarray(self.boundary, dtype=bool).reshape(-1)
        # orientation fix: swap two vertices of negatively oriented tets
        v = self.vertices
        for t in range(len(self.tets)):
            a, b, c, d = self.tets[t]
            vol6 = np.linalg.det(np.array([v[b] - v[a], v[c] - v[a], v[d] - v[a]]))
            if vol6 < 0:
                self.tets[t, 2], self.tets[t, 3] = self.tets[t, 3], self.tets[t, 2]


def load_tet_mesh(path) -> TetMesh:
    """Read 'NV NT' header, NV vertex lines x y z [b], NT index lines."""
    with open(path) as f:
        lines = [ln.split() for ln in f.readlines()]
    rows = [(i + 1, toks) for i, toks in enumerate(lines) if toks]
    if not rows:
        raise GeometryError(f"{path}: empty tet mesh file")
    lineno, head = rows[0]
    if len(head) != 2:
        raise GeometryError(f"{path}: line {lineno}: expected 'NV NT'")
    nv, nt = int(head[0]), int(head[1])
    if len(rows) != 1 + nv + nt:
        raise GeometryError(f"{path}: expected {1 + nv + nt} data lines, found {len(rows)}")
    verts = np.empty((nv, 3))
    flags = np.zeros(nv, dtype=bool)
    for r in range(nv):
        lineno, toks = rows[1 + r]
        if len(toks) not in (3, 4):
            raise GeometryError(f"{path}: line {lineno}: expected 'x y z [b]'")
        verts[r] = [float(v) for v in toks[:3]]
        if len(toks) == 4:
            flags[r] = toks[3] not in ("0", "0.0")
    tets = np.empty((nt, 4), dtype=np.int64)
    for r in range(nt):
        lineno, toks = rows[1 + nv + r]
        if len(toks) != 4:
            raise GeometryError(f"{path}: line {lineno}: expected four vertex indices")
        tets[r] = [int(v) for v in toks]
    return TetMesh(verts, tets, flags)


def tet_gamma(points) -> float:
    """Shape quality 2*sqrt(6)*inradius/diameter, clamped to [0, 1].

    The inradius is 3V/A with V the volume and A the total face area;
    degenerate tetrahedra (V = 0) return 0.
    """
    p = np.asarray(points, dtype=float).reshape(4, 3)
    diffs = p[:, None, :] - p[None, :, :]
    h_t = np.sqrt(np.max(np.einsum("ijk,ijk->ij", diffs, diffs)))
    if h_t == 0.0:
        return 0.0
    e = p[1:] - p[0]
    volume = abs(np.linalg.det(e)) / 6.0
    if volume == 0.0:
        return 0.0
    faces = ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))
    area = sum(0.5 * np.linalg.norm(np.cross(p[b] - p[a], p[c] - p[a]))
               for a, b, c in faces)
    rho = 3.0 * volume / area
    return min(1.0, 2.0 * np.sqrt(6.0) * rho / h_t)


@dataclass
class QualityStats:
    min_gamma: float
    mean_gamma: float
    fractions: np.ndarray   # bins (0,.25], (.25,.5], (.5,.75], (.75,1]; gamma=0 in bin 0


def mesh_quality_stats(mesh: TetMesh) -> QualityStats:
    if len(mesh.tets) == 0:
        raise GeometryError("tet mesh has no tetrahedra")
    gammas = np.array([tet_gamma(mesh.vertices[t]) for t in mesh.tets])
    bins = np.searchsorted([0.25, 0.5, 0.75], gammas, side="left")
    fractions = np.bincount(bins, minlength=4) / len(gammas)
    return QualityStats(float(gammas.min()), float(gammas.mean()), fractions)

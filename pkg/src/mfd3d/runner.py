"""Experiment pipeline binding geometry, selection, weights and solvers.

For every refinement level: build or load the node set, compute one weighted
stencil per interior node (using the classical 7-node grid stencil wherever
the full lattice neighborhood exists and the source is a grid), assemble the
eliminated interior system, estimate the stability constant, solve directly
or by preconditioned BiCGSTAB, and record one report row per method.

Failures stay local: if some node admits no polynomially exact weights the
(method, level) row reads NaN; a singular system reads Inf; other levels and
methods are unaffected.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.spatial import cKDTree

from .config import ConfigError, ExperimentConfig, MethodSpec
from .diagnostics import SolveReport, density, evaluate_solution, rrms, write_csv
from .geometry import (Ball, GeometryError, MeshDomain, NodeSet,
                       generate_grid_nodes, generate_halton_nodes, load_nodes,
                       load_tet_mesh, parse_stl, project_boundary_nodes, save_nodes)
from .linsys import (ILUFailure, SingularMatrixError, SparseLU, assemble, bicgstab,
                     estimate_inv_norm_inf, export_matrix_market, ilu0, rcm_ordering)
from .selection import (SelectionError, SelectionParams, select_grid_7star,
                        select_knear, select_oct, select_oct_dist, select_pqr,
                        select_tet, tet_vertex_adjacency)
from .spatial import SpatialIndex
from .weights import (PolyharmonicRBF, WeightedStencil, WeightFailure,
                      classical_7star_weights, compute_rbffd_weights)

_STAR_OFFSETS = np.array([
    [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1],
], dtype=float)


def build_domain(cfg: ExperimentConfig):
    if cfg.domain_kind == "ball":
        return Ball(np.asarray(cfg.center), cfg.radius)
    with open(cfg.stl_path, "rb") as f:
        mesh = parse_stl(f.read())
    return MeshDomain(mesh, seed=cfg.seed)


def build_problem(cfg: ExperimentConfig):
    """(f, g, exact) scalar fields; exact is None when no closed form exists."""
    if cfg.problem == "ball-exp":
        exp = lambda p: np.exp(p[:, 0] + p[:, 1] + p[:, 2])
        return (lambda p: 3.0 * exp(p)), exp, exp
    value = cfg.problem_value
    return (lambda p: np.full(len(p), value)), (lambda p: np.zeros(len(p))), None


def build_level_nodes(cfg: ExperimentConfig, domain, level: int) -> tuple:
    """(NodeSet, h) for one refinement level."""
    if cfg.source == "node-file":
        nodes = load_nodes(cfg.node_files[level])
        if nodes.n_interior == 0:
            raise ConfigError(f"{cfg.node_files[level]}: no interior nodes")
        # fall back to the mean 6-neighbor spacing as the level scale
        tree = cKDTree(nodes.interior)
        d, _ = tree.query(nodes.interior[: min(200, nodes.n_interior)],
                          k=min(2, nodes.n_interior))
        h = float(np.mean(d[:, -1])) if nodes.n_interior > 1 else 1.0
        return nodes, h
    h = cfg.spacings[level]
    if cfg.source == "grid":
        interior = generate_grid_nodes(domain, h)
    else:
        interior = generate_halton_nodes(domain, h)
    if cfg.boundary == "node-file":
        boundary = load_nodes(cfg.boundary_files[level]).boundary
        if len(boundary) == 0:
            raise ConfigError(f"{cfg.boundary_files[level]}: no boundary nodes")
    else:
        boundary = project_boundary_nodes(domain, interior, h)
    return NodeSet(interior, boundary), h


class _TetContext:
    """Tet mesh, vertex adjacency and the vertex-to-node map for one level."""

    def __init__(self, path, index: SpatialIndex):
        self.mesh = load_tet_mesh(path)
        self.adjacency = tet_vertex_adjacency(self.mesh.tets, len(self.mesh.vertices))
        lo = index.points.min(axis=0)
        hi = index.points.max(axis=0)
        tol = 1e-9 * float(np.linalg.norm(hi - lo))
        tree = cKDTree(index.points)
        dist, nearest = tree.query(self.mesh.vertices, k=1)
        if np.any(dist > tol):
            bad = int(np.argmax(dist))
            raise SelectionError(
                f"tet mesh vertex {bad} matches no node (distance {dist[bad]:.3e})")
        self.node_map = nearest.astype(np.int64)


def _node_stencil(center, index, method: MethodSpec, rbf, tet_ctx):
    """(members, weights, t_select, t_weights) for one interior node."""
    t0 = time.perf_counter()
    if method.kind == "pqr3" or method.kind == "pqr4":
        infl, w = select_pqr(center, index, 3 if method.kind == "pqr3" else 4)
        return infl.members, w, time.perf_counter() - t0, 0.0
    if method.kind == "pqr4sel":
        infl, _ = select_pqr(center, index, 4)
    elif method.kind == "oct-dist":
        infl = select_oct_dist(center, index, method.params)
    elif method.kind == "oct":
        infl = select_oct(center, index)
    elif method.kind == "knear":
        infl = select_knear(center, index, method.k)
    elif method.kind == "tet":
        infl = select_tet(center, tet_ctx.mesh, tet_ctx.node_map, tet_ctx.adjacency)
    else:
        raise ConfigError(f"unknown method kind {method.kind!r}")
    t1 = time.perf_counter()
    try:
        w = compute_rbffd_weights(index.points[infl.members], rbf, order=3)
    except WeightFailure as exc:
        raise WeightFailure(f"node {center}: {exc}") from None
    return infl.members, w, t1 - t0, time.perf_counter() - t1


def _stencil_chunk(args):
    index, method, node_ids, tet_ctx = args
    rbf = PolyharmonicRBF(5)
    out = []
    t_sel = t_w = 0.0
    for center in node_ids:
        members, w, ts, tw = _node_stencil(int(center), index, method, rbf, tet_ctx)
        out.append((int(center), members, w))
        t_sel += ts
        t_w += tw
    return out, t_sel, t_w


def compute_stencils(nodes: NodeSet, index: SpatialIndex, method: MethodSpec,
                     h: float, grid_shortcut: bool, threads: int = 1):
    """One WeightedStencil per interior node, plus (t_select, t_weights).

    With grid_shortcut, nodes whose six lattice neighbors are all interior
    get the classical 7-node stencil and skip selection entirely.
    """
    n = nodes.n_interior
    stencils = [None] * n
    t_sel = t_w = 0.0
    tet_ctx = _TetContext(method.tet_path, index) if method.kind == "tet" else None

    pending = np.arange(n)
    if grid_shortcut:
        t0 = time.perf_counter()
        neighbor_table = np.stack(
            [index.lattice_neighbor_many(nodes.interior, off * h, h)
             for off in _STAR_OFFSETS], axis=1)
        has_star = np.all((neighbor_table >= 0) & (neighbor_table < n), axis=1)
        star_w = classical_7star_weights(h)
        for i in np.nonzero(has_star)[0]:
            members = np.concatenate([[i], neighbor_table[i]])
            stencils[i] = WeightedStencil(int(i), members, star_w)
        pending = np.nonzero(~has_star)[0]
        t_sel += time.perf_counter() - t0

    if len(pending):
        if threads > 1:
            chunks = np.array_split(pending, 4 * threads)
            args = [(index, method, c, tet_ctx) for c in chunks if len(c)]
            with ProcessPoolExecutor(max_workers=threads) as pool:
                for out, ts, tw in pool.map(_stencil_chunk, args):
                    for center, members, w in out:
                        stencils[center] = WeightedStencil(center, members, w)
                    t_sel += ts
                    t_w += tw
        else:
            out, ts, tw = _stencil_chunk((index, method, pending, tet_ctx))
            for center, members, w in out:
                stencils[center] = WeightedStencil(center, members, w)
            t_sel += ts
            t_w += tw
    return stencils, t_sel, t_w


def _solve_level(cfg: ExperimentConfig, problem, report: SolveReport):
    """Factorize, estimate sigma, and solve; fills the report in place."""
    t0 = time.perf_counter()
    lu = SparseLU(problem.matrix)     # raises SingularMatrixError -> Inf row
    report.sigma = estimate_inv_norm_inf(lu, seed=cfg.seed)
    if cfg.solver == "direct":
        x = lu.solve(problem.rhs)
        report.t_solve = time.perf_counter() - t0
        return x
    perm = rcm_ordering(problem.matrix)
    a_perm = problem.matrix[perm][:, perm].tocsr()
    precond = None
    try:
        precond = ilu0(a_perm)
    except ILUFailure as exc:
        warnings.warn(f"ILU(0) failed ({exc}); iterating unpreconditioned")
    x_perm, iters = bicgstab(a_perm, problem.rhs[perm], precond=precond,
                             tol=cfg.solver_tol, maxit=cfg.solver_maxit)
    x = np.empty_like(x_perm)
    x[perm] = x_perm
    report.iterations = iters.iterations if iters.converged else float("nan")
    report.t_solve = time.perf_counter() - t0
    return x


def run_experiment(cfg: ExperimentConfig, threads: int = 1,
                   export_matrix: str = None):
    """Run every (level, method) combination; returns the SolveReport rows.

    Writes the CSV report and the plot-data file when the config names them.
    """
    domain = build_domain(cfg)
    f_field, g_field, exact = build_problem(cfg)

    reports = []
    solutions = {}     # (method label, level) -> (interior points, solution)
    densities = {}     # method label -> {level: density}
    n_systems = cfg.n_levels * len(cfg.methods)

    for level in range(cfg.n_levels):
        try:
            nodes, h = build_level_nodes(cfg, domain, level)
        except (GeometryError, ConfigError) as exc:
            warnings.warn(f"level {level}: node generation failed: {exc}")
            for method in cfg.methods:
                reports.append(SolveReport(method.label, 0, 0))
            continue
        index = SpatialIndex(nodes)
        for method in cfg.methods:
            report = SolveReport(method.label, nodes.n_interior, nodes.n_boundary)
            reports.append(report)
            try:
                t0 = time.perf_counter()
                stencils, t_sel, t_w = compute_stencils(
                    nodes, index, method, h,
                    grid_shortcut=(cfg.source == "grid"), threads=threads)
                report.t_select, report.t_weights = t_sel, t_w
                sizes = [st.size for st in stencils]
                report.k_min, report.k_max = int(min(sizes)), int(max(sizes))
                report.k_mean = float(np.mean(sizes))
                t1 = time.perf_counter()
                problem = assemble(nodes, stencils, f_field, g_field)
                report.t_assemble = time.perf_counter() - t1
                report.density = density(problem.matrix)
                densities.setdefault(method.label, {})[level] = report.density
                if export_matrix:
                    export_matrix_market(
                        _matrix_path(export_matrix, method.label, level, n_systems),
                        problem.matrix)
                x = _solve_level(cfg, problem, report)
                solutions[(method.label, level)] = (nodes.interior.copy(), x)
                if exact is not None:
                    report.e_ref = evaluate_solution(nodes, x, exact)
            except (SelectionError, WeightFailure) as exc:
                warnings.warn(f"level {level} method {method.label}: {exc}")
                report.e_ref = float("nan")
            except SingularMatrixError:
                report.e_ref = float("inf")
                report.sigma = float("inf")

    if exact is None:
        _fill_self_convergence(cfg, reports, solutions)

    if cfg.output:
        write_csv(cfg.output, reports)
    if cfg.plot_data:
        _write_plot_data(cfg, reports, densities)
    return reports


def _matrix_path(base: str, label: str, level: int, n_systems: int) -> str:
    if n_systems == 1:
        return base
    stem, dot, suffix = base.rpartition(".")
    if not dot:
        return f"{base}-{label}-L{level}"
    return f"{stem}-{label}-L{level}.{suffix}"


def _fill_self_convergence(cfg, reports, solutions):
    """Without an exact solution, E_ref of a level is the RRMS difference from
    the next finer level's solution matched by nearest interior node."""
    per_method = {}
    for row, report in enumerate(reports):
        level = row // len(cfg.methods)
        per_method.setdefault(report.method, []).append((level, row, report))
    for label, rows in per_method.items():
        for (lvl, _, report), (nxt, _, _) in zip(rows, rows[1:]):
            if (label, lvl) not in solutions or (label, nxt) not in solutions:
                continue
            coarse_pts, coarse_u = solutions[(label, lvl)]
            fine_pts, fine_u = solutions[(label, nxt)]
            if not (np.all(np.isfinite(coarse_u)) and np.all(np.isfinite(fine_u))):
                continue
            _, nearest = cKDTree(fine_pts).query(coarse_pts, k=1)
            report.e_ref = rrms(fine_u[nearest], coarse_u)


def _write_plot_data(cfg, reports, densities):
    """Nominal-nnz plot data: N_int times the method's finest-level density."""
    with open(cfg.plot_data, "w") as f:
        f.write("method,nominal_nnz,E_ref\n")
        for method in cfg.methods:
            per_level = densities.get(method.label, {})
            finite = {lvl: d for lvl, d in per_level.items() if np.isfinite(d)}
            if not finite:
                continue
            finest = finite[max(finite)]
            for row, report in enumerate(reports):
                if report.method != method.label:
                    continue
                if not np.isfinite(report.e_ref):
                    continue
                f.write(f"{method.label},{report.n_interior * finest:.12g},"
                        f"{report.e_ref:.12g}\n")


def generate_node_files(cfg: ExperimentConfig) -> list:
    """Node-generation-only mode: write one node file per level."""
    if cfg.source == "node-file":
        raise ConfigError("source=node-file has nothing to generate")
    prefix = cfg.nodes_output or cfg.name
    domain = build_domain(cfg)
    paths = []
    for level in range(cfg.n_levels):
        nodes, _ = build_level_nodes(cfg, domain, level)
        path = f"{prefix}-L{level}.txt"
        save_nodes(path, nodes)
        paths.append(path)
    return paths

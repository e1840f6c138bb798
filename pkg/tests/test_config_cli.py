"""Config parsing, the experiment runner, and the command-line interface."""

import math
import textwrap

import numpy as np
import pytest
from scipy.spatial import Delaunay

from mfd3d.cli import main
from mfd3d.config import ConfigError, load_config, parse_method
from mfd3d.geometry import (Ball, NodeSet, generate_grid_nodes, load_nodes,
                            project_boundary_nodes, save_nodes, write_stl_binary,
                            parse_stl)
from mfd3d.runner import build_problem, generate_node_files, run_experiment

from helpers import binary_stl_bytes, cube_triangle_soup

BALL = Ball(np.zeros(3), 1.0)


def write_config(tmp_path, body, name="exp.ini"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(body))
    return path


class TestMethodGrammar:
    def test_oct_dist_with_options(self):
        spec = parse_method("oct-dist:k=18,s=3,n=6,delta=0.7")
        assert spec.kind == "oct-dist"
        assert spec.params.k == 18 and spec.params.s == 3
        assert spec.params.n == 6 and spec.params.delta == 0.7

    def test_oct_dist_defaults(self):
        spec = parse_method("oct-dist")
        assert spec.params.k == 17 and spec.params.m == 100

    def test_near_aliases(self):
        for text, k in (("20near", 20), ("30near", 30), ("40near", 40), ("knear:25", 25)):
            spec = parse_method(text)
            assert spec.kind == "knear" and spec.k == k

    def test_tet_requires_path(self):
        assert parse_method("tet:mesh.txt").tet_path == "mesh.txt"
        with pytest.raises(ConfigError):
            parse_method("tet")

    def test_pqr_variants(self):
        for name in ("pqr3", "pqr4", "pqr4sel"):
            assert parse_method(name).kind == name

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            parse_method("voronoi")

    def test_bad_oct_dist_option(self):
        with pytest.raises(ConfigError):
            parse_method("oct-dist:q=3")


class TestConfigFile:
    def test_full_parse(self, tmp_path):
        path = write_config(tmp_path, """
            [ball]
            domain = ball
            radius = 2.0
            center = 1 0 0
            source = halton
            h0 = 0.5
            levels = 0 1 2
            methods = oct-dist; pqr3
            solver = bicgstab:tol=1e-8,maxit=500
            problem = const:-10
            output = out.csv
        """)
        cfg, = load_config(path)
        assert cfg.radius == 2.0 and cfg.center == (1.0, 0.0, 0.0)
        assert cfg.source == "halton"
        assert len(cfg.spacings) == 3
        assert cfg.spacings[0] == pytest.approx(0.45)
        assert cfg.spacings[1] == pytest.approx(0.45 * 2 ** (-1 / 3))
        assert cfg.solver == "bicgstab"
        assert cfg.solver_tol == 1e-8 and cfg.solver_maxit == 500
        assert cfg.problem == "const" and cfg.problem_value == -10.0

    def test_zero_methods_rejected(self, tmp_path):
        path = write_config(tmp_path, """
            [bad]
            domain = ball
            source = grid
            h0 = 0.5
            methods =
        """)
        with pytest.raises(ConfigError, match="method"):
            load_config(path)

    def test_increasing_spacings_rejected(self, tmp_path):
        path = write_config(tmp_path, """
            [bad]
            domain = ball
            source = grid
            h = 0.1 0.2
            methods = oct
        """)
        with pytest.raises(ConfigError, match="decrease"):
            load_config(path)

    def test_missing_domain_rejected(self, tmp_path):
        path = write_config(tmp_path, """
            [bad]
            source = grid
            h0 = 0.5
            methods = oct
        """)
        with pytest.raises(ConfigError, match="domain"):
            load_config(path)

    def test_multiple_sections(self, tmp_path):
        path = write_config(tmp_path, """
            [one]
            domain = ball
            source = grid
            h0 = 0.5
            methods = oct

            [two]
            domain = ball
            source = halton
            h0 = 0.5
            methods = 20near
        """)
        configs = load_config(path)
        assert [c.name for c in configs] == ["one", "two"]


class TestProblems:
    def test_ball_exp_consistency(self):
        f, g, exact = build_problem(load_cfg_ball_exp())
        pts = np.array([[0.1, 0.2, 0.3]])
        assert f(pts)[0] == pytest.approx(3.0 * math.exp(0.6))
        assert g(pts)[0] == exact(pts)[0] == pytest.approx(math.exp(0.6))

    def test_const_problem(self):
        cfg = load_cfg_ball_exp()
        cfg.problem, cfg.problem_value = "const", -10.0
        f, g, exact = build_problem(cfg)
        pts = np.zeros((2, 3))
        np.testing.assert_array_equal(f(pts), [-10.0, -10.0])
        np.testing.assert_array_equal(g(pts), [0.0, 0.0])
        assert exact is None


def load_cfg_ball_exp():
    from mfd3d.config import ExperimentConfig
    return ExperimentConfig(name="t", domain_kind="ball", spacings=[0.3],
                            methods=[parse_method("oct-dist")])


class TestRunner:
    def test_grid_ball_end_to_end(self, tmp_path):
        path = write_config(tmp_path, f"""
            [run]
            domain = ball
            source = grid
            h0 = 0.25
            levels = 0
            methods = oct-dist:k=18
            solver = direct
            problem = ball-exp
            output = {tmp_path / 'out.csv'}
        """)
        cfg, = load_config(path)
        reports = run_experiment(cfg)
        assert len(reports) == 1
        assert reports[0].e_ref < 1e-2
        lines = (tmp_path / "out.csv").read_text().splitlines()
        assert len(lines) == 2

    def test_node_file_round_trip(self, tmp_path):
        interior = generate_grid_nodes(BALL, 0.3)
        nodes = NodeSet(interior, project_boundary_nodes(BALL, interior, 0.3))
        node_path = tmp_path / "nodes.txt"
        save_nodes(node_path, nodes)
        path = write_config(tmp_path, f"""
            [run]
            domain = ball
            source = node-file
            node_files = {node_path}
            methods = 20near
            output = {tmp_path / 'out.csv'}
        """)
        cfg, = load_config(path)
        reports = run_experiment(cfg)
        assert reports[0].n_interior == nodes.n_interior
        assert reports[0].e_ref < 1e-2

    def test_coplanar_node_file_gives_nan_row(self, tmp_path):
        # all nodes in the z=0 plane: polynomial exactness has no solution
        rng = np.random.default_rng(0)
        pts = np.column_stack([rng.uniform(-1, 1, size=(80, 2)), np.zeros(80)])
        nodes = NodeSet(pts[:60], pts[60:])
        node_path = tmp_path / "flat.txt"
        save_nodes(node_path, nodes)
        path = write_config(tmp_path, f"""
            [run]
            domain = ball
            source = node-file
            node_files = {node_path}
            methods = pqr3
            output = {tmp_path / 'out.csv'}
        """)
        cfg, = load_config(path)
        with pytest.warns(UserWarning):
            reports = run_experiment(cfg)
        assert math.isnan(reports[0].e_ref)
        row = (tmp_path / "out.csv").read_text().splitlines()[1]
        assert row.split(",")[3] == "NaN"

    def test_sweep_isolation(self, tmp_path):
        # level 0 works, level 1's node file is coplanar, level 2 works:
        # the failing level must not disturb the others
        interior = generate_grid_nodes(BALL, 0.35)
        good = NodeSet(interior, project_boundary_nodes(BALL, interior, 0.35))
        rng = np.random.default_rng(1)
        flat_pts = np.column_stack([rng.uniform(-1, 1, size=(80, 2)), np.zeros(80)])
        flat = NodeSet(flat_pts[:60], flat_pts[60:])
        interior2 = generate_grid_nodes(BALL, 0.3)
        good2 = NodeSet(interior2, project_boundary_nodes(BALL, interior2, 0.3))
        paths = []
        for i, ns in enumerate((good, flat, good2)):
            p = tmp_path / f"nodes{i}.txt"
            save_nodes(p, ns)
            paths.append(str(p))
        body = """
            [run]
            domain = ball
            source = node-file
            node_files = {files}
            methods = 20near
            output = {out}
        """
        cfg, = load_config(write_config(
            tmp_path, body.format(files=" ".join(paths), out=tmp_path / "a.csv"),
            name="sweep.ini"))
        with pytest.warns(UserWarning):
            reports = run_experiment(cfg)
        assert np.isfinite(reports[0].e_ref)
        assert math.isnan(reports[1].e_ref)
        assert np.isfinite(reports[2].e_ref)
        # the good levels give bit-identical results when run alone
        for path, want in ((paths[0], reports[0]), (paths[2], reports[2])):
            solo_cfg, = load_config(write_config(
                tmp_path, body.format(files=path, out=tmp_path / "b.csv"),
                name="solo.ini"))
            solo = run_experiment(solo_cfg)
            assert solo[0].e_ref == want.e_ref
            assert solo[0].sigma == want.sigma

    def test_bicgstab_solver_records_iterations(self, tmp_path):
        path = write_config(tmp_path, f"""
            [run]
            domain = ball
            source = grid
            h0 = 0.25
            levels = 1
            methods = oct-dist:k=18
            solver = bicgstab
            output = {tmp_path / 'out.csv'}
        """)
        cfg, = load_config(path)
        reports = run_experiment(cfg)
        assert reports[0].iterations is not None
        assert reports[0].iterations * 2 == int(reports[0].iterations * 2)
        assert reports[0].e_ref < 1e-2

    def test_tet_method_on_delaunay_nodes(self, tmp_path):
        interior = generate_grid_nodes(BALL, 0.4)
        nodes = NodeSet(interior, project_boundary_nodes(BALL, interior, 0.4))
        pts = nodes.all_points()
        tri = Delaunay(pts)
        mesh_path = tmp_path / "tets.txt"
        with open(mesh_path, "w") as f:
            f.write(f"{len(pts)} {len(tri.simplices)}\n")
            for p in pts:
                f.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
            for s in tri.simplices:
                f.write(f"{s[0]} {s[1]} {s[2]} {s[3]}\n")
        node_path = tmp_path / "nodes.txt"
        save_nodes(node_path, nodes)
        path = write_config(tmp_path, f"""
            [run]
            domain = ball
            source = node-file
            node_files = {node_path}
            methods = tet:{mesh_path}
            output = {tmp_path / 'out.csv'}
        """)
        cfg, = load_config(path)
        reports = run_experiment(cfg)
        # edge-adjacency selection either succeeds or reports NaN, never crashes
        assert math.isnan(reports[0].e_ref) or reports[0].e_ref < 1e-1

    def test_reproducible_modulo_timings(self, tmp_path):
        body = f"""
            [run]
            domain = ball
            source = halton
            h0 = 0.4
            levels = 0 1
            methods = oct-dist; pqr3
            solver = bicgstab
            problem = ball-exp
            output = {{out}}
        """
        timing_cols = (10, 11, 12, 13)
        outputs = []
        for run in range(2):
            out = tmp_path / f"out{run}.csv"
            path = write_config(tmp_path, body.format(out=out), name=f"c{run}.ini")
            cfg, = load_config(path)
            run_experiment(cfg)
            outputs.append(out.read_text().splitlines())
        for line_a, line_b in zip(*outputs):
            fields_a = line_a.split(",")
            fields_b = line_b.split(",")
            stripped_a = [v for i, v in enumerate(fields_a) if i not in timing_cols]
            stripped_b = [v for i, v in enumerate(fields_b) if i not in timing_cols]
            assert stripped_a == stripped_b

    def test_generate_node_files(self, tmp_path):
        from mfd3d.config import ExperimentConfig
        cfg = ExperimentConfig(
            name="gen", domain_kind="ball", source="grid",
            spacings=[0.4, 0.3], methods=[parse_method("oct")],
            nodes_output=str(tmp_path / "ball"))
        paths = generate_node_files(cfg)
        assert len(paths) == 2
        back = load_nodes(paths[0])
        assert back.n_interior > 0 and back.n_boundary > 0

    def test_parallel_matches_serial(self, tmp_path):
        path = write_config(tmp_path, f"""
            [run]
            domain = ball
            source = halton
            h0 = 0.35
            levels = 0
            methods = oct-dist
            output = {tmp_path / 'serial.csv'}
        """)
        cfg, = load_config(path)
        serial = run_experiment(cfg)
        cfg.output = str(tmp_path / "parallel.csv")
        parallel = run_experiment(cfg, threads=2)
        assert serial[0].e_ref == parallel[0].e_ref
        assert serial[0].density == parallel[0].density


class TestCli:
    def test_run_exit_codes(self, tmp_path, capsys):
        path = write_config(tmp_path, f"""
            [cli]
            domain = ball
            source = grid
            h0 = 0.3
            levels = 0
            methods = 20near
            output = {tmp_path / 'out.csv'}
        """)
        assert main(["run", str(path)]) == 0
        assert main(["run", str(tmp_path / "missing.ini")]) == 1
        capsys.readouterr()

    def test_run_unknown_experiment(self, tmp_path, capsys):
        path = write_config(tmp_path, """
            [only]
            domain = ball
            source = grid
            h0 = 0.3
            methods = oct
        """)
        assert main(["run", str(path), "--experiment", "other"]) == 1
        capsys.readouterr()

    def test_export_matrix(self, tmp_path, capsys):
        path = write_config(tmp_path, f"""
            [cli]
            domain = ball
            source = grid
            h0 = 0.3
            levels = 0
            methods = 20near
            output = {tmp_path / 'out.csv'}
        """)
        mtx = tmp_path / "system.mtx"
        assert main(["run", str(path), "--export-matrix", str(mtx)]) == 0
        assert mtx.read_text().startswith("%%MatrixMarket matrix coordinate real general")
        capsys.readouterr()

    def test_nodes_subcommand(self, tmp_path, capsys):
        path = write_config(tmp_path, f"""
            [gen]
            domain = ball
            source = halton
            h0 = 0.4
            levels = 0
            methods = oct
            nodes_output = {tmp_path / 'gen'}
        """)
        assert main(["nodes", str(path)]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 1
        nodes = load_nodes(out[0])
        assert nodes.n_interior > 0

    def test_quality_subcommand(self, tmp_path, capsys):
        mesh_path = tmp_path / "tet.txt"
        mesh_path.write_text(
            "4 1\n1 1 1\n1 -1 -1\n-1 1 -1\n-1 -1 1\n0 1 2 3\n")
        assert main(["quality", str(mesh_path)]) == 0
        out = capsys.readouterr().out
        assert "min gamma:  1" in out
        assert "(0.75, 1.00]: 100.0%" in out

    def test_stl_domain_run(self, tmp_path, capsys):
        # Halton interior nodes: grid nodes with projected boundaries put
        # whole stencils onto two parallel planes on box-like domains, which
        # breaks quadratic exactness (boundary projections on a flat face
        # are coplanar with the lattice planes)
        stl = tmp_path / "cube.stl"
        stl.write_bytes(binary_stl_bytes(2.0 * cube_triangle_soup()))
        path = write_config(tmp_path, f"""
            [stl-run]
            domain = stl {stl}
            source = halton
            h = 0.4 0.3
            methods = oct-dist:k=18
            problem = const:-10
            output = {tmp_path / 'out.csv'}
        """)
        assert main(["run", str(path)]) == 0
        lines = (tmp_path / "out.csv").read_text().splitlines()
        assert len(lines) == 3
        # coarse level carries the self-convergence estimate, finest has none
        coarse = lines[1].split(",")
        finest = lines[2].split(",")
        assert coarse[3] not in ("", "NaN")
        assert finest[3] == "NaN"
        capsys.readouterr()

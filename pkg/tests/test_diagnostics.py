"""Error metrics, density, convergence-order fit and report formatting."""

import math

import numpy as np
import pytest
import scipy.sparse as sp

from mfd3d.geometry import Ball, NodeSet
from mfd3d.diagnostics import (SolveReport, convergence_order, density,
                               evaluate_solution, rrms, write_csv, CSV_HEADER)

# the published grid-ball refinement column for the default selection method
PAPER_GRID_LEVELS = [
    (304, 2.9e-3), (624, 1.5e-3), (1308, 9.0e-4), (2822, 4.9e-4),
    (5196, 3.1e-4), (10935, 1.7e-4), (23436, 9.2e-5), (46251, 5.3e-5),
    (89372, 3.2e-5),
]


class TestRrms:
    def test_identical_is_zero(self):
        assert rrms([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand_value(self):
        assert rrms([1.0, 1.0], [1.0, 0.0]) == pytest.approx(1 / math.sqrt(2))

    def test_joint_scaling_invariance(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal(50), rng.standard_normal(50)
        assert rrms(7.3 * a, 7.3 * b) == pytest.approx(rrms(a, b), rel=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a, b = rng.standard_normal(20), rng.standard_normal(20)
            assert rrms(a, b) >= 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            rrms([1.0], [1.0, 2.0])

    def test_zero_reference(self):
        with pytest.raises(ValueError):
            rrms([0.0, 0.0], [1.0, 2.0])


class TestDensity:
    def test_identity(self):
        assert density(sp.identity(5, format="csr")) == 1.0

    def test_direct_formula(self):
        rng = np.random.default_rng(2)
        rows = rng.integers(0, 10, size=30)
        cols = np.tile(np.arange(3), 10)
        a = sp.coo_matrix((np.ones(30), (rows * 0 + np.repeat(np.arange(10), 3), cols)),
                          shape=(10, 10)).tocsr()
        assert density(a) == 3.0


class TestConvergenceOrder:
    def test_exact_power_law(self):
        levels = [(n, float(n) ** (-2.0 / 3.0)) for n in (100, 800, 6400, 51200)]
        assert convergence_order(levels) == pytest.approx(2.0, abs=1e-10)

    def test_constant_errors_order_zero(self):
        assert convergence_order([(100, 1.0), (800, 1.0), (6400, 1.0)]) == \
            pytest.approx(0.0, abs=1e-12)

    def test_paper_grid_column_near_second_order(self):
        order = convergence_order(PAPER_GRID_LEVELS)
        assert order == pytest.approx(2.0, abs=0.4)

    def test_too_few_levels(self):
        with pytest.raises(ValueError):
            convergence_order([(10, 1.0), (20, 0.5)])

    def test_nonpositive_errors(self):
        with pytest.raises(ValueError):
            convergence_order([(10, 1.0), (20, 0.0), (40, -1.0)])


class TestEvaluateSolution:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.nodes = NodeSet(rng.uniform(-0.5, 0.5, size=(40, 3)), np.zeros((0, 3)))
        self.exact = lambda p: np.exp(p[:, 0] + p[:, 1] + p[:, 2])

    def test_exact_solution_zero_error(self):
        u = self.exact(self.nodes.interior)
        assert evaluate_solution(self.nodes, u, self.exact) == 0.0

    def test_uniform_perturbation_identity(self):
        u = self.exact(self.nodes.interior)
        eps = 1e-3
        got = evaluate_solution(self.nodes, u + eps, self.exact)
        want = eps * math.sqrt(len(u)) / np.linalg.norm(u)
        assert got == pytest.approx(want, rel=1e-12)

    def test_nan_propagates(self):
        u = self.exact(self.nodes.interior)
        u[3] = np.nan
        assert math.isnan(evaluate_solution(self.nodes, u, self.exact))

    def test_inf_propagates(self):
        u = self.exact(self.nodes.interior)
        u[3] = np.inf
        assert math.isinf(evaluate_solution(self.nodes, u, self.exact))


class TestReports:
    def test_csv_sentinels_and_header(self, tmp_path):
        reps = [
            SolveReport("oct-dist", 100, 20, e_ref=1.5e-4, density=7.4, sigma=61.0,
                        iterations=3.5, k_min=7, k_mean=7.8, k_max=18),
            SolveReport("pqr3", 100, 20, e_ref=float("nan"), density=float("nan"),
                        sigma=float("inf")),
        ]
        path = tmp_path / "out.csv"
        write_csv(path, reps)
        lines = path.read_text().splitlines()
        assert lines[0] == CSV_HEADER
        assert lines[1].startswith("oct-dist,100,20,0.00015,7.4,61,3.5,7,7.8,18,")
        fields = lines[2].split(",")
        assert fields[3] == "NaN" and fields[4] == "NaN" and fields[5] == "Inf"
        assert fields[6] == ""   # iterations not applicable

"""Error and quality metrics for experiment runs.

The headline error is the relative root mean square difference between the
computed solution values and a reference on the interior nodes; per-run
reports also carry the matrix density (stored nonzeros per row after
boundary elimination), the stability constant, iteration counts, stencil
size statistics and phase timings.  NaN marks runs where weights could not
be found for some node, Inf runs where the system matrix was singular.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CSV_HEADER = ("method,N_int,N_bnd,E_ref,density,sigma,iters,"
              "k_min,k_mean,k_max,t_select,t_weights,t_assemble,t_solve")


def rrms(reference, approx) -> float:
    """Relative root mean square error ||ref - approx||_2 / ||ref||_2."""
    ref = np.asarray(reference, dtype=float).ravel()
    app = np.asarray(approx, dtype=float).ravel()
    if len(ref) != len(app):
        raise ValueError(f"length mismatch: {len(ref)} vs {len(app)}")
    if len(ref) == 0:
        raise ValueError("empty vectors")
    denom = np.linalg.norm(ref)
    if denom == 0.0:
        raise ValueError("reference vector is identically zero")
    return float(np.linalg.norm(ref - app) / denom)


def density(a) -> float:
    """Average number of stored nonzero entries per row."""
    n = a.shape[0]
    if n < 1:
        raise ValueError("empty matrix")
    return a.nnz / n


def convergence_order(levels) -> float:
    """Least-squares convergence order from (N_int, E) pairs.

    The mesh size proxy is N_int^(-1/3); the order is the slope of log E
    against log N_int^(-1/3) over at least three refinement levels with
    decreasing errors.
    """
    pairs = [(float(n), float(e)) for n, e in levels]
    if len(pairs) < 3:
        raise ValueError(f"need at least 3 refinement levels, got {len(pairs)}")
    if any(e <= 0.0 for _, e in pairs):
        raise ValueError("errors must be positive")
    x = np.array([-math.log(n) / 3.0 for n, _ in pairs])
    y = np.array([math.log(e) for _, e in pairs])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def evaluate_solution(nodes, solution, exact) -> float:
    """RRMS of a computed interior solution against an exact scalar field.

    NaN/Inf in the solution vector (upstream failure sentinels) propagate.
    """
    sol = np.asarray(solution, dtype=float).ravel()
    if np.any(np.isnan(sol)):
        return float("nan")
    if np.any(np.isinf(sol)):
        return float("inf")
    return rrms(np.asarray(exact(nodes.interior), dtype=float), sol)


@dataclass
class SolveReport:
    """One experiment row: a (node set, selection method, solver) combination."""

    method: str
    n_interior: int
    n_boundary: int
    e_ref: float = float("nan")
    density: float = float("nan")
    sigma: float = float("nan")
    iterations: float = None
    k_min: int = 0
    k_mean: float = 0.0
    k_max: int = 0
    t_select: float = 0.0
    t_weights: float = 0.0
    t_assemble: float = 0.0
    t_solve: float = 0.0

    def csv_row(self) -> str:
        return ",".join([
            self.method,
            str(self.n_interior),
            str(self.n_boundary),
            _fmt(self.e_ref),
            _fmt(self.density),
            _fmt(self.sigma),
            _fmt(self.iterations) if self.iterations is not None else "",
            str(self.k_min),
            _fmt(self.k_mean),
            str(self.k_max),
            _fmt(self.t_select),
            _fmt(self.t_weights),
            _fmt(self.t_assemble),
            _fmt(self.t_solve),
        ])


def _fmt(x: float) -> str:
    if x is None or math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Inf" if x > 0 else "-Inf"
    return f"{x:.12g}"


def write_csv(path, reports) -> None:
    with open(path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for rep in reports:
            f.write(rep.csv_row() + "\n")

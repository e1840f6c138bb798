"""Sparse assembly and solvers for the discretized Poisson problem.

One row per interior node: the stencil weights of interior members form the
matrix entries, boundary members are eliminated into the right-hand side
using the Dirichlet data.  The system is solved either by a sparse direct
factorization or by BiCGSTAB with an ILU(0) preconditioner after a reverse
Cuthill-McKee reordering.  Iterations are counted in halves, since every
BiCGSTAB step is a biconjugate-gradient half step followed by a GMRES(1)
half step, and convergence can occur after either.

A blocked 1-norm power iteration on the inverse transpose (two columns,
at most five sweeps, seeded) estimates ||A^-1||_inf, the stability constant
of the discretization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import NodeSet
from .weights import WeightedStencil

BREAKDOWN_TOL = 1e-30


class AssemblyError(ValueError):
    """A stencil is missing or carries unusable weights."""


class SingularMatrixError(ArithmeticError):
    """The system matrix is singular to working precision."""


@dataclass
class LinearProblem:
    """Square system over the interior unknowns, boundary data eliminated."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    rows_to_nodes: np.ndarray   # row -> global node index

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass
class IterReport:
    iterations: float           # half-integer count
    relative_residual: float
    converged: bool
    reason: str = "converged"   # converged | maxit | breakdown


def assemble(nodes: NodeSet, stencils, f, g) -> LinearProblem:
    """Assemble the interior system from one weighted stencil per interior node.

    f and g are vectorized scalar fields (interior source, boundary data);
    entries of boundary members move to the right-hand side.
    """
    n = nodes.n_interior
    if len(stencils) != n:
        raise AssemblyError(f"expected {n} stencils, got {len(stencils)}")
    pts = nodes.all_points()

    rows, cols, vals = [], [], []
    rhs = np.asarray(f(nodes.interior), dtype=float).reshape(n).copy()
    for row, st in enumerate(stencils):
        if st is None:
            raise AssemblyError(f"interior node {row} has no stencil")
        if not isinstance(st, WeightedStencil) or st.center != row:
            raise AssemblyError(f"stencil/node mismatch at interior node {row}")
        if not np.all(np.isfinite(st.weights)):
            raise AssemblyError(f"non-finite weights at interior node {row}")
        interior_mask = st.members < n
        rows.extend([row] * int(np.count_nonzero(interior_mask)))
        cols.extend(st.members[interior_mask].tolist())
        vals.extend(st.weights[interior_mask].tolist())
        bnd = st.members[~interior_mask]
        if len(bnd):
            gvals = np.asarray(g(pts[bnd]), dtype=float).reshape(len(bnd))
            rhs[row] -= float(st.weights[~interior_mask] @ gvals)

    a = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    a.sum_duplicates()
    a.eliminate_zeros()
    a.sort_indices()
    return LinearProblem(a, rhs, np.arange(n))


class SparseLU:
    """Sparse LU factorization retained for solves and norm estimation."""

    def __init__(self, a: sp.spmatrix):
        try:
            self._lu = spla.splu(sp.csc_matrix(a))
        except RuntimeError as exc:   # SuperLU: "Factor is exactly singular"
            raise SingularMatrixError(str(exc)) from None
        udiag = np.abs(self._lu.U.diagonal())
        if udiag.size and udiag.min() < 1e-300:
            raise SingularMatrixError("zero pivot in sparse LU")
        self.shape = a.shape

    def solve(self, b, trans: str = "N") -> np.ndarray:
        return self._lu.solve(np.asarray(b, dtype=float), trans=trans)


def sparse_lu_solve(problem: LinearProblem) -> np.ndarray:
    return SparseLU(problem.matrix).solve(problem.rhs)


def norm_inf(a: sp.spmatrix) -> float:
    return float(np.max(np.abs(a).sum(axis=1))) if a.shape[0] else 0.0


def estimate_inv_norm_inf(lu: SparseLU, t: int = 2, itmax: int = 5,
                          seed: int = 0) -> float:
    """Lower estimate of ||A^-1||_inf = ||A^-T||_1 by blocked 1-norm iteration.

    Higham-Tisseur style: t parallel columns, at most itmax sweeps, the extra
    columns seeded deterministically.  Every value returned is an attained
    ratio ||A^-T x||_1 / ||x||_1, hence never exceeds the true norm.
    """
    n = lu.shape[0]
    if n == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    t = min(t, n)
    x = np.ones((n, t)) / n
    if t > 1:
        x[:, 1:] = rng.choice([-1.0, 1.0], size=(n, t - 1)) / n

    est_old = 0.0
    visited = np.zeros(n, dtype=bool)
    for sweep in range(itmax):
        y = lu.solve(x, trans="T")                      # A^-T X
        y = y.reshape(n, -1)
        colsums = np.abs(y).sum(axis=0)
        est = float(colsums.max())
        if est <= est_old and sweep > 0:
            return est_old
        est_old = est
        s = np.sign(y)
        s[s == 0.0] = 1.0
        z = lu.solve(s, trans="N").reshape(n, -1)       # (A^-T)^T S
        h = np.abs(z).max(axis=1)
        order = np.argsort(-h, kind="stable")
        fresh = [j for j in order if not visited[j]][:t]
        if not fresh:
            break
        x = np.zeros((n, len(fresh)))
        for col, j in enumerate(fresh):
            x[j, col] = 1.0
            visited[j] = True
        if h.max() <= est and sweep > 0:
            break
        # final candidates are unit vectors, evaluate them one last time
        if sweep == itmax - 1:
            y = lu.solve(x, trans="T").reshape(n, -1)
            est_old = max(est_old, float(np.abs(y).sum(axis=0).max()))
    return est_old


def stability_constant(a: sp.spmatrix, lu: SparseLU = None, seed: int = 0) -> float:
    """The stability constant: estimated ||A^-1||_inf of the assembled system."""
    if lu is None:
        lu = SparseLU(a)
    return estimate_inv_norm_inf(lu, seed=seed)


def rcm_ordering(a: sp.spmatrix) -> np.ndarray:
    """Reverse Cuthill-McKee permutation of the symmetrized pattern.

    BFS starts at the minimum-degree vertex (ties to the lowest index),
    visits neighbors in increasing (degree, index) order, restarts per
    connected component, and the final order is reversed.
    """
    n = a.shape[0]
    coo = sp.coo_matrix(a)
    off = coo.row != coo.col
    half = sp.csr_matrix((np.ones(int(off.sum())), (coo.row[off], coo.col[off])),
                         shape=(n, n))
    pattern = ((half + half.T) != 0).tocsr()
    indptr, indices = pattern.indptr, pattern.indices
    degree = np.diff(indptr)

    visited = np.zeros(n, dtype=bool)
    order = np.empty(n, dtype=np.int64)
    pos = 0
    by_degree = np.lexsort((np.arange(n), degree))
    for start in by_degree:
        if visited[start]:
            continue
        visited[start] = True
        queue = [start]
        head = 0
        while head < len(queue):
            u = queue[head]
            head += 1
            order[pos] = u
            pos += 1
            nbrs = indices[indptr[u]:indptr[u + 1]]
            nbrs = nbrs[~visited[nbrs]]
            if len(nbrs):
                nbrs = nbrs[np.lexsort((nbrs, degree[nbrs]))]
                visited[nbrs] = True
                queue.extend(nbrs.tolist())
    return order[::-1].copy()


def bandwidth(a: sp.spmatrix) -> int:
    coo = sp.coo_matrix(a)
    if coo.nnz == 0:
        return 0
    return int(np.max(np.abs(coo.row - coo.col)))


class ILUFailure(ArithmeticError):
    """Zero pivot during the incomplete factorization."""


class ILU0:
    """Zero-fill incomplete LU: L and U share the sparsity pattern of A.

    For every stored position (i, j) of A the product L*U matches A exactly;
    fill outside the pattern is dropped.
    """

    def __init__(self, a: sp.csr_matrix):
        a = sp.csr_matrix(a, copy=True)
        a.sort_indices()
        n = a.shape[0]
        indptr, indices, data = a.indptr, a.indices, a.data

        diag_pos = np.full(n, -1, dtype=np.int64)
        for i in range(n):
            row = indices[indptr[i]:indptr[i + 1]]
            loc = np.searchsorted(row, i)
            if loc < len(row) and row[loc] == i:
                diag_pos[i] = indptr[i] + loc
        if np.any(diag_pos < 0):
            raise ILUFailure("matrix has an empty diagonal entry")

        for i in range(n):
            start, end = indptr[i], indptr[i + 1]
            row_cols = indices[start:end]
            for p in range(start, end):
                kcol = indices[p]
                if kcol >= i:
                    break
                pivot = data[diag_pos[kcol]]
                if pivot == 0.0:
                    raise ILUFailure(f"zero pivot at row {kcol}")
                lik = data[p] / pivot
                data[p] = lik
                # subtract lik * U(k, j) wherever (i, j) is stored, j > k
                ks, ke = diag_pos[kcol] + 1, indptr[kcol + 1]
                if ks >= ke:
                    continue
                ucols = indices[ks:ke]
                locs = np.searchsorted(row_cols, ucols)
                valid = (locs < len(row_cols))
                valid[valid] &= row_cols[locs[valid]] == ucols[valid]
                data[start + locs[valid]] -= lik * data[ks:ke][valid]
            if data[diag_pos[i]] == 0.0:
                raise ILUFailure(f"zero pivot at row {i}")

        factored = sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(n, n))
        self.lower = (sp.tril(factored, k=-1) + sp.eye(n)).tocsr()
        self.upper = sp.triu(factored, k=0).tocsr()

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Solve (L U) y = x."""
        y = spla.spsolve_triangular(self.lower, x, lower=True, unit_diagonal=True)
        return spla.spsolve_triangular(self.upper, y, lower=False)


def ilu0(a: sp.spmatrix) -> ILU0:
    return ILU0(sp.csr_matrix(a))


def bicgstab(a: sp.spmatrix, b: np.ndarray, precond=None, tol: float = 1e-6,
             maxit: int = 1000, x0: np.ndarray = None):
    """Right-preconditioned BiCGSTAB with half-iteration counting.

    Converged means ||b - A x||_2 <= tol * ||b||_2 (true residual; right
    preconditioning leaves it directly measurable).  Breakdown of the
    recurrences is reported distinctly from iteration exhaustion.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    apply_m = precond.apply if precond is not None else (lambda v: v)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), IterReport(0.0, 0.0, True)
    r = b - a @ x
    if np.linalg.norm(r) <= tol * bnorm:
        return x, IterReport(0.0, float(np.linalg.norm(r) / bnorm), True)

    r0 = r.copy()
    rho_prev = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    for j in range(1, maxit + 1):
        rho = float(r0 @ r)
        if abs(rho) < BREAKDOWN_TOL:
            return x, IterReport(j - 1.0, float(np.linalg.norm(r) / bnorm),
                                 False, "breakdown")
        beta = (rho / rho_prev) * (alpha / omega)
        p = r + beta * (p - omega * v)
        phat = apply_m(p)
        v = a @ phat
        denom = float(r0 @ v)
        if abs(denom) < BREAKDOWN_TOL:
            return x, IterReport(j - 1.0, float(np.linalg.norm(r) / bnorm),
                                 False, "breakdown")
        alpha = rho / denom
        s = r - alpha * v
        x = x + alpha * phat
        snorm = np.linalg.norm(s)
        if snorm <= tol * bnorm:
            return x, IterReport(j - 0.5, float(snorm / bnorm), True)
        shat = apply_m(s)
        t = a @ shat
        tt = float(t @ t)
        if tt == 0.0:
            return x, IterReport(j - 0.5, float(snorm / bnorm), False, "breakdown")
        omega = float(t @ s) / tt
        if abs(omega) < BREAKDOWN_TOL:
            return x, IterReport(j - 0.5, float(snorm / bnorm), False, "breakdown")
        x = x + omega * shat
        r = s - omega * t
        rnorm = np.linalg.norm(r)
        if rnorm <= tol * bnorm:
            return x, IterReport(float(j), float(rnorm / bnorm), True)
        rho_prev = rho
    return x, IterReport(float(maxit), float(np.linalg.norm(b - a @ x) / bnorm),
                         False, "maxit")


def export_matrix_market(path, a: sp.spmatrix, comment: str = "") -> None:
    """Write the matrix in Matrix Market coordinate format (1-based indices)."""
    scipy.io.mmwrite(path, sp.coo_matrix(a), comment=comment)

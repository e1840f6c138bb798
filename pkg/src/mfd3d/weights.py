"""Numerical differentiation weights for the Laplacian on scattered nodes.

Weights w on an influence set {xi_1 = center, xi_2, ...} approximate
    lap u(center) ~= sum_j w_j u(xi_j)
and are computed from the kernel exactness condition for the polyharmonic
radial function phi(r) = r^alpha augmented with all polynomials of total
degree < ell.  The key property enforced (and verified) is polynomial
exactness: the formula reproduces lap p exactly for every polynomial p of
degree below ell.

The saddle-point system is solved after shifting the nodes to the center
and rescaling by the mean member distance; polyharmonic kernels are
homogeneous under scaling, so this preconditioning is exact.  The system
is consistent but singular whenever the polynomial block is rank-deficient
(e.g. 7 grid nodes against 10 quadratic basis functions), while the weight
block of the solution is still unique; a least-squares solve recovers it,
and the explicit exactness check below rejects anything else.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
import scipy.linalg

EXACTNESS_RTOL = 1e-9


class WeightFailure(ArithmeticError):
    """No weights satisfying polynomial exactness exist on this influence set."""


class PolyBasis:
    """Trivariate monomials of total degree < order, graded lexicographic."""

    def __init__(self, order: int):
        if order < 1:
            raise ValueError(f"polynomial order must be >= 1, got {order}")
        self.order = order
        exps = []
        for deg in range(order):
            for a in range(deg, -1, -1):
                for b in range(deg - a, -1, -1):
                    exps.append((a, b, deg - a - b))
        self.exponents = np.asarray(exps, dtype=np.int64)   # (L, 3)

    @property
    def size(self) -> int:
        return len(self.exponents)    # comb(order + 2, 3)

    def eval(self, points) -> np.ndarray:
        """Monomial values, shape (L, npoints)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        e = self.exponents[:, None, :].astype(float)
        return np.prod(pts[None, :, :] ** e, axis=2)

    def laplacian(self, points) -> np.ndarray:
        """Exact Laplacians of the monomials, shape (L, npoints)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((self.size, len(pts)))
        for axis in range(3):
            a = self.exponents[:, axis]
            mask = a >= 2
            if not np.any(mask):
                continue
            e = self.exponents[mask].astype(float).copy()
            coeff = e[:, axis] * (e[:, axis] - 1.0)
            e[:, axis] -= 2.0
            vals = np.prod(pts[None, :, :] ** e[:, None, :], axis=2)
            out[mask] += coeff[:, None] * vals
        return out


@dataclass(frozen=True)
class PolyharmonicRBF:
    """phi(r) = r^alpha with odd alpha >= 3 (conditionally positive definite)."""

    alpha: int = 5

    def __post_init__(self):
        if self.alpha < 3 or self.alpha % 2 == 0:
            raise ValueError(f"polyharmonic exponent must be odd and >= 3, got {self.alpha}")

    def __call__(self, r):
        return np.asarray(r, dtype=float) ** self.alpha

    def laplacian(self, r):
        # radial identity in 3D: lap r^a = a*(a+1) * r^(a-2)
        return self.alpha * (self.alpha + 1.0) * np.asarray(r, dtype=float) ** (self.alpha - 2)


@dataclass
class WeightedStencil:
    """An influence set together with its differentiation weights."""

    center: int
    members: np.ndarray   # global node indices, members[0] == center
    weights: np.ndarray   # aligned with members, units length^-2

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=float)

    @property
    def size(self) -> int:
        return len(self.members)


def polynomial_dimension(order: int) -> int:
    return comb(order + 2, 3)


def compute_rbffd_weights(member_points, rbf: PolyharmonicRBF = None,
                          order: int = 3) -> np.ndarray:
    """Laplacian weights on member_points, whose first row is the center.

    Raises WeightFailure when the polynomial exactness condition has no
    solution on these nodes (the saddle system is inconsistent) or the
    computed weights fail to reproduce lap p for some basis polynomial.
    """
    rbf = rbf or PolyharmonicRBF(5)
    pts = np.asarray(member_points, dtype=float).reshape(-1, 3)
    k = len(pts)
    if k < 1:
        raise ValueError("influence set is empty")
    center = pts[0]
    dist = np.linalg.norm(pts - center, axis=1)
    r_loc = float(dist[1:].mean()) if k > 1 else 1.0
    if r_loc == 0.0:
        raise WeightFailure("influence set collapses onto the center")
    y = (pts - center) / r_loc

    basis = PolyBasis(order)
    big_l = basis.size
    pmat = basis.eval(y).T                       # (k, L)
    gaps = np.linalg.norm(y[:, None, :] - y[None, :, :], axis=2)
    phi = rbf(gaps)

    sys_a = np.zeros((k + big_l, k + big_l))
    sys_a[:k, :k] = phi
    sys_a[:k, k:] = pmat
    sys_a[k:, :k] = pmat.T
    rhs = np.concatenate([rbf.laplacian(np.linalg.norm(y, axis=1)),
                          basis.laplacian(np.zeros((1, 3)))[:, 0]])

    sol, _, _, _ = scipy.linalg.lstsq(sys_a, rhs, lapack_driver="gelsd")
    if not np.all(np.isfinite(sol)):
        raise WeightFailure("saddle system solve produced non-finite values")
    # a large solve residual means the exactness conditions are inconsistent
    scale = np.linalg.norm(rhs) + 1.0
    if np.linalg.norm(sys_a @ sol - rhs) > 1e-8 * scale:
        raise WeightFailure("polynomial exactness condition is unsolvable on this set")

    w_scaled = sol[:k]
    lap0 = basis.laplacian(np.zeros((1, 3)))[:, 0]
    resid = np.abs(pmat.T @ w_scaled - lap0) / (1.0 + np.abs(lap0))
    if np.max(resid) > EXACTNESS_RTOL:
        raise WeightFailure(
            f"polynomial exactness residual {np.max(resid):.2e} exceeds {EXACTNESS_RTOL:.0e}")
    return w_scaled / r_loc ** 2


def classical_7star_weights(h: float) -> np.ndarray:
    """Classical grid weights (-6/h^2 at the center, 1/h^2 at the six neighbors)."""
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    w = np.full(7, h ** -2)
    w[0] = -6.0 * h ** -2
    return w

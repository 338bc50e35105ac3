"""Banded assembly and linear algebra for spline spaces.

All matrices here are symmetric-pattern banded with half-bandwidth equal
to the spline degree; storage is the compact band layout
data[p + i - j, j] = A[i, j].  Factorizations go through LAPACK's banded
LU (zgbtrf/zgbtrs).
"""
from __future__ import annotations

import numpy as np
from scipy.linalg.lapack import zgbtrf, zgbtrs

from .spline import SplineSpace, basis_ders, gauss_rule


class BandedMatrix:
    """Square banded matrix, band layout data[p + i - j, j] = A[i, j]."""

    __slots__ = ("n", "p", "data")

    def __init__(self, n: int, p: int, data=None, dtype=float):
        self.n = n
        self.p = p
        if data is None:
            data = np.zeros((2 * p + 1, n), dtype=dtype)
        self.data = data

    def matvec(self, x):
        x = np.asarray(x)
        y = np.zeros(self.n, dtype=np.result_type(self.data, x))
        n, p = self.n, self.p
        for d in range(-p, p + 1):
            row = self.data[p + d]
            if d >= 0:
                y[d:] += row[: n - d] * x[: n - d]
            else:
                y[: n + d] += row[-d:] * x[-d:]
        return y

    def toarray(self):
        A = np.zeros((self.n, self.n), dtype=self.data.dtype)
        for d in range(-self.p, self.p + 1):
            row = self.data[self.p + d]
            if d >= 0:
                A[np.arange(d, self.n), np.arange(self.n - d)] = row[: self.n - d]
            else:
                A[np.arange(self.n + d), np.arange(-d, self.n)] = row[-d:]
        return A

    def __add__(self, other):
        if not isinstance(other, BandedMatrix) or other.n != self.n or other.p != self.p:
            raise ValueError("band shapes differ")
        return BandedMatrix(self.n, self.p, self.data + other.data)

    def __mul__(self, scalar):
        return BandedMatrix(self.n, self.p, self.data * scalar)

    __rmul__ = __mul__

    def astype(self, dtype):
        return BandedMatrix(self.n, self.p, self.data.astype(dtype))


class BandedLU:
    """LU factorization of a BandedMatrix via LAPACK zgbtrf."""

    __slots__ = ("n", "p", "_lu", "_ipiv")

    def __init__(self, band: BandedMatrix):
        n, p = band.n, band.p
        ab = np.zeros((3 * p + 1, n), dtype=np.complex128, order="F")
        ab[p:, :] = band.data
        lu, ipiv, info = zgbtrf(ab, p, p)
        if info != 0:
            raise np.linalg.LinAlgError(f"banded LU failed, info={info}")
        self.n, self.p = n, p
        self._lu, self._ipiv = lu, ipiv

    def solve(self, b):
        b = np.asarray(b, dtype=np.complex128)
        x, info = zgbtrs(self._lu, self.p, self.p, b, self._ipiv)
        if info != 0:
            raise np.linalg.LinAlgError(f"banded solve failed, info={info}")
        return x


# ----------------------------------------------------------------------
# assembly

def _scatter(space: SplineSpace, elem_mats) -> BandedMatrix:
    """Accumulate per-element (r+1)x(r+1) blocks into the Dirichlet band."""
    r = space.degree
    n = space.dim
    M = space.mesh.n_elements
    e = np.arange(M)
    out = BandedMatrix(n, r, dtype=elem_mats.dtype)
    for i in range(r + 1):
        rows = e + i - 1
        vi = (rows >= 0) & (rows < n)
        for j in range(r + 1):
            cols = e + j - 1
            sel = vi & (cols >= 0) & (cols < n)
            # for fixed (i, j) the column indices are distinct across elements
            out.data[r + i - j, cols[sel]] += elem_mats[sel, i, j]
    return out


def mass_matrix(space: SplineSpace) -> BandedMatrix:
    if "mass" not in space._cache:
        B0 = space.basis_tables()[0]
        _, W = space.quad_points()
        elem = np.einsum("eq,eqi,eqj->eij", W, B0, B0)
        space._cache["mass"] = _scatter(space, elem)
    return space._cache["mass"]


def stiffness_matrix(space: SplineSpace) -> BandedMatrix:
    if "stiffness" not in space._cache:
        B1 = space.basis_tables()[1]
        _, W = space.quad_points()
        elem = np.einsum("eq,eqi,eqj->eij", W, B1, B1)
        space._cache["stiffness"] = _scatter(space, elem)
    return space._cache["stiffness"]


def weighted_mass(space: SplineSpace, w_quad) -> BandedMatrix:
    """Mass matrix weighted by values w_quad (shape (M, q)) at the quad nodes."""
    B0 = space.basis_tables()[0]
    _, W = space.quad_points()
    elem = np.einsum("eq,eq,eqi,eqj->eij", W, w_quad, B0, B0)
    return _scatter(space, elem)


def mass_lu(space: SplineSpace) -> BandedLU:
    if "mass_lu" not in space._cache:
        space._cache["mass_lu"] = BandedLU(mass_matrix(space))
    return space._cache["mass_lu"]


# ----------------------------------------------------------------------
# load vectors and norms

def _gather(space: SplineSpace, elem_vecs) -> np.ndarray:
    """Accumulate per-element (r+1) blocks into a Dirichlet vector."""
    r = space.degree
    n = space.dim
    e = np.arange(space.mesh.n_elements)
    out = np.zeros(n, dtype=elem_vecs.dtype)
    for i in range(r + 1):
        rows = e + i - 1
        sel = (rows >= 0) & (rows < n)
        out[rows[sel]] += elem_vecs[sel, i]
    return out


def load_vector(space: SplineSpace, f, order: int | None = None, panels: int = 1):
    """Vector of (f, phi_i).  order/panels override the default per-element
    Gauss rule; panels > 1 uses a composite rule, needed for data that
    oscillates below the mesh scale."""
    if order is None and panels == 1:
        X, W = space.quad_points()
        B0 = space.basis_tables()[0]
    else:
        q = order if order is not None else space.quad_order
        ref_x, ref_w = gauss_rule(q)
        offs = (np.arange(panels)[:, None] + ref_x[None, :]).ravel() / panels
        wts = np.tile(ref_w, panels) / panels
        br = space.mesh.breakpoints()
        h = np.diff(br)
        X = br[:-1, None] + h[:, None] * offs[None, :]
        W = h[:, None] * wts[None, :]
        spans = np.repeat(
            np.arange(space.mesh.n_elements, dtype=np.int64) + space.degree,
            X.shape[1],
        )
        ders = basis_ders(space.knots, space.degree, X.ravel(), spans, nder=0)
        B0 = ders[:, 0, :].reshape(X.shape[0], X.shape[1], space.degree + 1)
    fv = np.asarray(f(X.ravel())).reshape(X.shape)
    elem = np.einsum("eq,eq,eqi->ei", W, fv, B0)
    return _gather(space, elem)


def element_norm_sq(space: SplineSpace, coeffs, deriv: int = 0) -> np.ndarray:
    """Per-element squared L2 norms of the function (or a derivative)."""
    v = space.values_on_quad(coeffs, deriv=deriv)
    _, W = space.quad_points()
    return np.einsum("eq,eq->e", W, np.abs(v) ** 2).real


def l2_norm(space: SplineSpace, coeffs, deriv: int = 0) -> float:
    return float(np.sqrt(element_norm_sq(space, coeffs, deriv).sum()))


def mass_norm_sq(space: SplineSpace, coeffs) -> float:
    """|v|_L2^2 through the mass matrix (exact, quadrature-free once cached)."""
    c = np.asarray(coeffs)
    return float(np.real(np.vdot(c, mass_matrix(space).matvec(c))))

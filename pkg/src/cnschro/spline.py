"""B-spline finite element spaces on 1D meshes.

Spaces use clamped knot vectors (boundary multiplicity degree+1, interior
breakpoints simple), so splines of degree r are C^{r-1} across elements.
Homogeneous Dirichlet conditions are built in by dropping the first and
last B-spline, giving dim = n_elements + degree - 2.
"""
from __future__ import annotations

import numpy as np

from .mesh import Mesh1D


def gauss_rule(order: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _safe_div(num, den):
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _values(knots, deg, x, spans):
    """Nonzero B-spline values of given degree at x; spans index the degree-r vector.

    Returns shape (len(x), deg+1): column i is B_{span-deg+i, deg}(x).
    """
    n = len(x)
    vals = np.zeros((n, deg + 1))
    vals[:, 0] = 1.0
    left = np.empty((n, deg + 1))
    right = np.empty((n, deg + 1))
    for j in range(1, deg + 1):
        left[:, j] = x - knots[spans + 1 - j]
        right[:, j] = knots[spans + j] - x
        saved = np.zeros(n)
        for rr in range(j):
            den = right[:, rr + 1] + left[:, j - rr]
            temp = _safe_div(vals[:, rr], den)
            vals[:, rr] = saved + right[:, rr + 1] * temp
            saved = left[:, j - rr] * temp
        vals[:, j] = saved
    return vals


def basis_ders(knots, degree, x, spans, nder=2):
    """Values and derivatives of the degree-r B-splines active at each point.

    Returns shape (len(x), nder+1, degree+1); entry [:, m, i] is the m-th
    derivative of B_{span-degree+i, degree}.
    """
    r = degree
    n = len(x)
    spans = np.asarray(spans, dtype=np.int64)
    out = np.zeros((n, nder + 1, r + 1))
    out[:, 0, :] = _values(knots, r, x, spans)
    if nder >= 1 and r >= 1:
        v1 = _values(knots, r - 1, x, spans)  # B_{span-r+1+i, r-1}
        for i in range(r + 1):
            j = spans - r + i
            a = _safe_div(v1[:, i - 1], knots[j + r] - knots[j]) if i >= 1 else 0.0
            b = _safe_div(v1[:, i], knots[j + r + 1] - knots[j + 1]) if i <= r - 1 else 0.0
            out[:, 1, i] = r * (a - b)
    if nder >= 2 and r >= 2:
        v2 = _values(knots, r - 2, x, spans)  # B_{span-r+2+m, r-2}
        d1 = np.zeros((n, r))  # first derivatives of the degree-(r-1) active set
        for ip in range(r):
            j = spans - r + 1 + ip
            a = _safe_div(v2[:, ip - 1], knots[j + r - 1] - knots[j]) if ip >= 1 else 0.0
            b = _safe_div(v2[:, ip], knots[j + r] - knots[j + 1]) if ip <= r - 2 else 0.0
            d1[:, ip] = (r - 1) * (a - b)
        for i in range(r + 1):
            j = spans - r + i
            a = _safe_div(d1[:, i - 1], knots[j + r] - knots[j]) if i >= 1 else 0.0
            b = _safe_div(d1[:, i], knots[j + r + 1] - knots[j + 1]) if i <= r - 1 else 0.0
            out[:, 2, i] = r * (a - b)
    return out


class SplineSpace:
    """Dirichlet B-spline space of given degree on a Mesh1D.

    Per-element Gauss quadrature data and basis tables are computed lazily
    and cached, as are the mass/stiffness matrices and their factorizations
    (see assembly).  Constrained coefficient j corresponds to unconstrained
    B-spline j+1; element e sees unconstrained B-splines e..e+degree.
    """

    def __init__(self, mesh: Mesh1D, degree: int, quad_order: int | None = None):
        if degree < 1:
            raise ValueError("degree must be >= 1")
        self.mesh = mesh
        self.degree = degree
        self.quad_order = quad_order if quad_order is not None else degree + 3
        M = mesh.n_elements
        self.dim = M + degree - 2
        if self.dim < 1:
            raise ValueError("mesh too coarse for Dirichlet space of this degree")
        br = mesh.breakpoints()
        self.knots = np.concatenate(
            [np.full(degree, br[0]), br, np.full(degree, br[-1])]
        )
        self.n_unconstrained = M + degree
        self._cache: dict = {}

    # ------------------------------------------------------------------
    def quad_points(self):
        """Quadrature nodes and weights mapped to all elements, shape (M, q)."""
        key = "quad"
        if key not in self._cache:
            ref_x, ref_w = gauss_rule(self.quad_order)
            br = self.mesh.breakpoints()
            h = np.diff(br)
            X = br[:-1, None] + h[:, None] * ref_x[None, :]
            W = h[:, None] * ref_w[None, :]
            self._cache[key] = (X, W)
        return self._cache[key]

    def basis_tables(self):
        """Basis values/derivatives at the quadrature nodes.

        Returns (B0, B1, B2), each of shape (M, q, degree+1) for the active
        unconstrained B-splines e..e+degree on element e.
        """
        key = "tables"
        if key not in self._cache:
            X, _ = self.quad_points()
            M, q = X.shape
            spans = np.repeat(np.arange(M, dtype=np.int64) + self.degree, q)
            ders = basis_ders(self.knots, self.degree, X.ravel(), spans, nder=2)
            B = ders.reshape(M, q, 3, self.degree + 1)
            self._cache[key] = (
                np.ascontiguousarray(B[:, :, 0, :]),
                np.ascontiguousarray(B[:, :, 1, :]),
                np.ascontiguousarray(B[:, :, 2, :]),
            )
        return self._cache[key]

    def _window_index(self):
        key = "window"
        if key not in self._cache:
            M = self.mesh.n_elements
            idx = np.arange(M, dtype=np.int64)[:, None] + np.arange(self.degree + 1)[None, :]
            self._cache[key] = idx
        return self._cache[key]

    def padded(self, coeffs) -> np.ndarray:
        """Unconstrained coefficient array with the two boundary zeros."""
        out = np.zeros(self.n_unconstrained, dtype=np.result_type(coeffs, float))
        out[1:-1] = coeffs
        return out

    def element_coeffs(self, coeffs) -> np.ndarray:
        """Coefficient windows per element, shape (M, degree+1)."""
        return self.padded(coeffs)[self._window_index()]

    def values_on_quad(self, coeffs, deriv: int = 0) -> np.ndarray:
        """Function (or derivative) values at the quadrature nodes, shape (M, q)."""
        B = self.basis_tables()[deriv]
        return np.einsum("eqj,ej->eq", B, self.element_coeffs(coeffs))

    def evaluate(self, coeffs, x, deriv: int = 0) -> np.ndarray:
        """Evaluate at arbitrary points (vectorized)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        elems = self.mesh.locate(x)
        spans = elems + self.degree
        ders = basis_ders(self.knots, self.degree, x, spans, nder=deriv)
        pad = self.padded(coeffs)
        win = pad[elems[:, None] + np.arange(self.degree + 1)[None, :]]
        return np.einsum("nj,nj->n", ders[:, deriv, :], win)

    # ------------------------------------------------------------------
    def same_as(self, other: "SplineSpace") -> bool:
        return self is other or (
            self.degree == other.degree and self.mesh == other.mesh
        )


class FeFunction:
    """Finite element function: a coefficient vector over a SplineSpace."""

    __slots__ = ("space", "coeffs")

    def __init__(self, space: SplineSpace, coeffs):
        coeffs = np.asarray(coeffs)
        if coeffs.shape != (space.dim,):
            raise ValueError(f"expected {space.dim} coefficients, got {coeffs.shape}")
        self.space = space
        self.coeffs = coeffs.astype(np.complex128, copy=False)

    def __call__(self, x, deriv: int = 0):
        return self.space.evaluate(self.coeffs, x, deriv)

    def _binary(self, other, op):
        if not self.space.same_as(other.space):
            raise ValueError("operands live on different spaces")
        return FeFunction(self.space, op(self.coeffs, other.coeffs))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, scalar):
        return FeFunction(self.space, self.coeffs * scalar)

    __rmul__ = __mul__

    def copy(self):
        return FeFunction(self.space, self.coeffs.copy())

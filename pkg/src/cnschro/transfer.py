"""Transfers between spline spaces.

L2 projections (of fields and of finite element functions), discrete
Laplacians, and exact cross-space integrals.  Cross terms between two
spaces on the same macro grid are integrated on the common refinement of
their meshes, where both are polynomial elementwise, so all inner
products are exact up to quadrature degree.
"""
from __future__ import annotations

import numpy as np

from .assembly import BandedLU, load_vector, mass_lu, mass_matrix, stiffness_matrix
from .spline import FeFunction, SplineSpace, basis_ders, gauss_rule


def discrete_laplacian(space: SplineSpace, coeffs) -> np.ndarray:
    """Coefficients of the discrete Laplacian: (lap, phi) = -(v', phi')."""
    rhs = -stiffness_matrix(space).matvec(np.asarray(coeffs, dtype=np.complex128))
    return mass_lu(space).solve(rhs)


def project_field(space: SplineSpace, f, order: int | None = None, panels: int = 1) -> np.ndarray:
    """L2 projection of a callable onto the space (coefficient vector)."""
    b = load_vector(space, f, order=order, panels=panels)
    return mass_lu(space).solve(np.asarray(b, dtype=np.complex128))


class JointGrid:
    """Quadrature on the common refinement of two meshes (same macro grid).

    Supplies evaluation of functions from either space at the joint
    quadrature nodes, and loads of the form integral(w * u_a * phi_b) as
    vectors over space_b.
    """

    def __init__(self, space_a: SplineSpace, space_b: SplineSpace, quad_order: int | None = None):
        self.space_a = space_a
        self.space_b = space_b
        mesh_j = space_a.mesh.common_refinement(space_b.mesh)
        self.mesh = mesh_j
        q = quad_order if quad_order is not None else max(space_a.degree, space_b.degree) + 3
        ref_x, ref_w = gauss_rule(q)
        br = mesh_j.breakpoints()
        h = np.diff(br)
        self.X = br[:-1, None] + h[:, None] * ref_x[None, :]
        self.W = h[:, None] * ref_w[None, :]
        self._side = {}
        for key, space in (("a", space_a), ("b", space_b)):
            owner = mesh_j.containing_elements(space.mesh)
            spans = np.repeat(owner + space.degree, q)
            ders = basis_ders(space.knots, space.degree, self.X.ravel(), spans, nder=2)
            tabs = ders.reshape(mesh_j.n_elements, q, 3, space.degree + 1)
            self._side[key] = (space, owner, tabs)

    def _eval(self, key, coeffs, deriv):
        space, owner, tabs = self._side[key]
        pad = space.padded(coeffs)
        win = pad[owner[:, None] + np.arange(space.degree + 1)[None, :]]
        return np.einsum("eqj,ej->eq", tabs[:, :, deriv, :], win)

    def eval_a(self, coeffs, deriv: int = 0):
        return self._eval("a", coeffs, deriv)

    def eval_b(self, coeffs, deriv: int = 0):
        return self._eval("b", coeffs, deriv)

    def integrate(self, vals_on_quad) -> complex:
        return complex(np.einsum("eq,eq->", self.W, vals_on_quad))

    def cross_load(self, coeffs_a, w_quad=None) -> np.ndarray:
        """Vector over space_b of integral(w * u_a * phi_i^b); w=1 if omitted."""
        vals = self.eval_a(coeffs_a)
        if w_quad is not None:
            vals = vals * w_quad
        space_b, owner, tabs = self._side["b"]
        elem = np.einsum("eq,eq,eqi->ei", self.W, vals, tabs[:, :, 0, :])
        out = np.zeros(space_b.dim, dtype=elem.dtype)
        for i in range(space_b.degree + 1):
            rows = owner + i - 1
            sel = (rows >= 0) & (rows < space_b.dim)
            np.add.at(out, rows[sel], elem[sel, i])
        return out

    def l2_diff(self, coeffs_a, coeffs_b) -> float:
        d = self.eval_a(coeffs_a) - self.eval_b(coeffs_b)
        return float(np.sqrt(np.einsum("eq,eq->", self.W, np.abs(d) ** 2).real))


def project_fe(u: FeFunction, space_to: SplineSpace, joint: JointGrid | None = None) -> FeFunction:
    """L2 projection of a finite element function onto another space."""
    if u.space.same_as(space_to):
        return u.copy()
    if joint is None:
        joint = JointGrid(u.space, space_to)
    rhs = joint.cross_load(u.coeffs)
    return FeFunction(space_to, mass_lu(space_to).solve(rhs))


def projection_defect_norm(space_old: SplineSpace, coeffs_old, space_new: SplineSpace, coeffs_proj) -> float:
    """|(I - P_new) v| for v in the old space, via norm orthogonality.

    |v - Pv|^2 = |v|^2 - |Pv|^2 holds exactly for the L2 projection, so
    no cross-space quadrature is needed.
    """
    from .assembly import mass_norm_sq

    s = mass_norm_sq(space_old, coeffs_old) - mass_norm_sq(space_new, coeffs_proj)
    return float(np.sqrt(max(s, 0.0)))


def l2_error_sq_local(space: SplineSpace, coeffs, f, order: int | None = None,
                      panels: int = 1) -> np.ndarray:
    """Per-element |u_h - f|_K^2 with f a smooth callable, boosted quadrature."""
    q = order if order is not None else space.quad_order + 2
    ref_x, ref_w = gauss_rule(q)
    offs = (np.arange(panels)[:, None] + ref_x[None, :]).ravel() / panels
    wts = np.tile(ref_w, panels) / panels
    br = space.mesh.breakpoints()
    h = np.diff(br)
    X = br[:-1, None] + h[:, None] * offs[None, :]
    W = h[:, None] * wts[None, :]
    spans = np.repeat(
        np.arange(space.mesh.n_elements, dtype=np.int64) + space.degree, X.shape[1]
    )
    ders = basis_ders(space.knots, space.degree, X.ravel(), spans, nder=0)
    B0 = ders[:, 0, :].reshape(X.shape[0], X.shape[1], space.degree + 1)
    pad = space.padded(coeffs)
    idx = np.arange(space.mesh.n_elements)[:, None] + np.arange(space.degree + 1)[None, :]
    uh = np.einsum("eqj,ej->eq", B0, pad[idx])
    d = uh - np.asarray(f(X.ravel())).reshape(X.shape)
    return np.einsum("eq,eq->e", W, np.abs(d) ** 2).real


def l2_error_vs_field(space: SplineSpace, coeffs, f, order: int | None = None, panels: int = 1) -> float:
    """|u_h - f| with f a smooth callable, by boosted per-element quadrature."""
    return float(np.sqrt(l2_error_sq_local(space, coeffs, f, order=order, panels=panels).sum()))


def l2_error_merged(fa: FeFunction, fb: FeFunction, order: int | None = None) -> float:
    """|fa - fb| for functions on unrelated meshes of the same interval.

    Integrates on the union of both breakpoint sets, where both functions
    are polynomial, so Gauss quadrature of sufficient order is exact.
    """
    sa, sb = fa.space, fb.space
    if sa.mesh.macro == sb.mesh.macro:
        return JointGrid(sa, sb).l2_diff(fa.coeffs, fb.coeffs)
    ba, bb = sa.mesh.breakpoints(), sb.mesh.breakpoints()
    if abs(ba[0] - bb[0]) > 1e-12 or abs(ba[-1] - bb[-1]) > 1e-12:
        raise ValueError("functions live on different intervals")
    br = np.union1d(ba, bb)
    keep = np.concatenate([[True], np.diff(br) > 1e-13 * (br[-1] - br[0])])
    br = br[keep]
    q = order if order is not None else max(sa.degree, sb.degree) + 3
    ref_x, ref_w = gauss_rule(q)
    h = np.diff(br)
    X = (br[:-1, None] + h[:, None] * ref_x[None, :]).ravel()
    W = (h[:, None] * ref_w[None, :]).ravel()
    d = fa(X) - fb(X)
    return float(np.sqrt((W * np.abs(d) ** 2).sum().real))

import numpy as np
import pytest

from cnschro.assembly import (
    BandedLU,
    BandedMatrix,
    element_norm_sq,
    l2_norm,
    load_vector,
    mass_lu,
    mass_matrix,
    mass_norm_sq,
    stiffness_matrix,
    weighted_mass,
)
from cnschro.mesh import Mesh1D
from cnschro.spline import FeFunction, SplineSpace


def test_single_hat_matrices():
    # two linear elements on [0,1]: one interior hat, h = 1/2
    space = SplineSpace(Mesh1D.uniform(0.0, 1.0, 2), 1)
    assert space.dim == 1
    np.testing.assert_allclose(mass_matrix(space).toarray(), [[1.0 / 3.0]], atol=1e-14)
    np.testing.assert_allclose(stiffness_matrix(space).toarray(), [[4.0]], atol=1e-13)


def test_stiffness_tridiagonal():
    space = SplineSpace(Mesh1D.uniform(0.0, 1.0, 3), 1)
    S = stiffness_matrix(space).toarray()
    np.testing.assert_allclose(S, [[6.0, -3.0], [-3.0, 6.0]], atol=1e-12)


def test_mass_tridiagonal_values():
    # classic h/6 (1 4 1) pattern for linear elements
    space = SplineSpace(Mesh1D.uniform(0.0, 1.0, 4), 1)
    M = mass_matrix(space).toarray()
    h = 0.25
    expect = h / 6 * (4 * np.eye(3) + np.diag(np.ones(2), 1) + np.diag(np.ones(2), -1))
    np.testing.assert_allclose(M, expect, atol=1e-14)


def test_constant_load():
    space = SplineSpace(Mesh1D.uniform(0.0, 1.0, 2), 1)
    b = load_vector(space, lambda x: 1j * np.ones_like(x))
    np.testing.assert_allclose(b, [0.5j], atol=1e-15)


def test_weighted_mass_reduces_to_mass():
    space = SplineSpace(Mesh1D.uniform(-1.0, 1.0, 6).refine([2]), 3)
    _, W = space.quad_points()
    B = weighted_mass(space, np.ones_like(W))
    np.testing.assert_allclose(B.toarray(), mass_matrix(space).toarray(), atol=1e-13)


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_banded_matvec_and_lu_vs_dense(degree):
    space = SplineSpace(Mesh1D.uniform(0.0, 2.0, 7).refine([1, 4]), degree)
    A = mass_matrix(space) + 0.5 * stiffness_matrix(space)
    rng = np.random.default_rng(11)
    x = rng.normal(size=space.dim) + 1j * rng.normal(size=space.dim)
    dense = A.toarray()
    np.testing.assert_allclose(A.matvec(x), dense @ x, atol=1e-12)
    # complex system like the time stepping matrix
    Ac = BandedMatrix(A.n, A.p, A.data * (1.0 + 0.25j))
    lu = BandedLU(Ac)
    sol = lu.solve(x)
    np.testing.assert_allclose((dense * (1.0 + 0.25j)) @ sol, x, atol=1e-11)


def test_norms_consistent():
    space = SplineSpace(Mesh1D.uniform(0.0, 1.0, 8), 2)
    rng = np.random.default_rng(5)
    c = rng.normal(size=space.dim) + 1j * rng.normal(size=space.dim)
    n_quad = l2_norm(space, c)
    n_mass = np.sqrt(mass_norm_sq(space, c))
    assert abs(n_quad - n_mass) < 1e-12 * max(n_quad, 1)
    per_elem = element_norm_sq(space, c)
    assert per_elem.shape == (8,)
    assert abs(per_elem.sum() - n_quad**2) < 1e-13


def test_load_vector_panels_match_plain():
    # panels only refine the quadrature; smooth data must give the same loads
    space = SplineSpace(Mesh1D.uniform(0.0, 1.0, 5), 2)
    f = lambda x: np.sin(3 * x) + 1j * x**2
    b1 = load_vector(space, f, order=8)
    b2 = load_vector(space, f, order=4, panels=6)
    np.testing.assert_allclose(b1, b2, atol=1e-12)


def test_projection_solves_mass_system():
    space = SplineSpace(Mesh1D.uniform(0.0, 1.0, 6), 2)
    f = lambda x: x * (1 - x)
    b = load_vector(space, f)
    c = mass_lu(space).solve(np.asarray(b, dtype=complex))
    np.testing.assert_allclose(mass_matrix(space).matvec(c), b, atol=1e-13)
    # degree 2 space contains x(1-x): projection is exact
    u = FeFunction(space, c)
    x = np.linspace(0, 1, 33)
    np.testing.assert_allclose(u(x).real, f(x), atol=1e-12)

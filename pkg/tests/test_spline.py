import numpy as np
import pytest
from scipy.interpolate import BSpline

from cnschro.mesh import Mesh1D
from cnschro.spline import FeFunction, SplineSpace, basis_ders, gauss_rule


def scipy_basis(space, j_unc):
    """Unconstrained B-spline j as a scipy BSpline."""
    c = np.zeros(space.n_unconstrained)
    c[j_unc] = 1.0
    return BSpline(space.knots, c, space.degree, extrapolate=False)


@pytest.mark.parametrize("degree", [1, 2, 3, 4])
@pytest.mark.parametrize("uniform", [True, False])
def test_basis_ders_vs_scipy(degree, uniform):
    m = Mesh1D.uniform(-1.0, 2.0, 6)
    if not uniform:
        m = m.refine([1, 4]).refine([0])
    space = SplineSpace(m, degree)
    rng = np.random.default_rng(7)
    x = rng.uniform(-1.0, 2.0, 80)
    elems = m.locate(x)
    ders = basis_ders(space.knots, degree, x, elems + degree, nder=2)
    for i in range(degree + 1):
        j_unc = elems + i
        for d in range(min(degree, 2) + 1):
            ref = np.array(
                [
                    scipy_basis(space, j).derivative(d)(xx) if d else scipy_basis(space, j)(xx)
                    for j, xx in zip(j_unc, x)
                ]
            )
            ref = np.nan_to_num(ref)
            np.testing.assert_allclose(ders[:, d, i], ref, atol=1e-9)
    if degree == 1:
        # second derivative of piecewise linears vanishes elementwise
        np.testing.assert_array_equal(ders[:, 2, :], 0.0)


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_partition_of_unity(degree):
    m = Mesh1D.uniform(0.0, 1.0, 5).refine([2])
    space = SplineSpace(m, degree)
    B0, B1, _ = space.basis_tables()
    np.testing.assert_allclose(B0.sum(axis=2), 1.0, atol=1e-13)
    np.testing.assert_allclose(B1.sum(axis=2), 0.0, atol=1e-10)


def test_dimension_and_dirichlet():
    m = Mesh1D.uniform(0.0, 1.0, 8)
    for r in (1, 2, 3):
        space = SplineSpace(m, r)
        assert space.dim == 8 + r - 2
        f = FeFunction(space, np.ones(space.dim))
        vals = f(np.array([0.0, 1.0]))
        np.testing.assert_allclose(vals, 0.0, atol=1e-14)


def test_quad_weights_integrate_exactly():
    m = Mesh1D.uniform(0.0, 1.0, 4).refine([0])
    space = SplineSpace(m, 2)
    X, W = space.quad_points()
    # quad_order = degree+3 = 5 Gauss points: exact to degree 9
    p = 2.0 * X**9 - X**3 + 1.0
    exact = 2.0 / 10 - 1.0 / 4 + 1.0
    assert abs((W * p).sum() - exact) < 1e-13


def test_evaluate_matches_quad_tables():
    m = Mesh1D.uniform(-1.0, 1.0, 6).refine([3])
    space = SplineSpace(m, 3)
    rng = np.random.default_rng(3)
    c = rng.normal(size=space.dim) + 1j * rng.normal(size=space.dim)
    X, _ = space.quad_points()
    for d in (0, 1, 2):
        table = space.values_on_quad(c, deriv=d)
        direct = space.evaluate(c, X.ravel(), deriv=d).reshape(X.shape)
        np.testing.assert_allclose(table, direct, atol=1e-10)


def test_hat_function_degree1():
    # degree 1 on uniform mesh: coefficients are nodal values
    m = Mesh1D.uniform(0.0, 1.0, 4)
    space = SplineSpace(m, 1)
    c = np.zeros(space.dim)
    c[1] = 1.0  # hat at x = 0.5
    f = FeFunction(space, c)
    np.testing.assert_allclose(f(np.array([0.25, 0.5, 0.625])), [0, 1.0, 0.5], atol=1e-14)
    np.testing.assert_allclose(f(np.array([0.3]), deriv=1), [4.0], atol=1e-12)


def test_gauss_rule_on_unit_interval():
    x, w = gauss_rule(4)
    assert np.all((0 < x) & (x < 1))
    assert abs(w.sum() - 1.0) < 1e-14
    assert abs((w * x**7).sum() - 1.0 / 8) < 1e-14


def test_fe_function_arithmetic():
    space = SplineSpace(Mesh1D.uniform(0.0, 1.0, 5), 2)
    rng = np.random.default_rng(0)
    a = FeFunction(space, rng.normal(size=space.dim))
    b = FeFunction(space, rng.normal(size=space.dim))
    x = np.linspace(0.1, 0.9, 7)
    np.testing.assert_allclose((a + b)(x), a(x) + b(x), atol=1e-13)
    np.testing.assert_allclose((a - 2.0 * b)(x), a(x) - 2 * b(x), atol=1e-13)
    other = SplineSpace(Mesh1D.uniform(0.0, 1.0, 6), 2)
    with pytest.raises(ValueError):
        a + FeFunction(other, np.zeros(other.dim))

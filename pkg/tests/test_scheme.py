"""Tests for the modified Crank-Nicolson step and its reconstruction."""
from types import SimpleNamespace

import numpy as np
import scipy.linalg as sla

from cnschro.assembly import l2_norm, mass_matrix, stiffness_matrix
from cnschro.mesh import Mesh1D
from cnschro.problems import catalog
from cnschro.scheme import StepState, advance, cn_step, compute_wbar, initial_state
from cnschro.spline import FeFunction, SplineSpace
from cnschro.transfer import discrete_laplacian, l2_error_vs_field, project_fe


def stub(alpha, g_const=None, g=None, f=None, timedep=False):
    if g is None and g_const is not None:
        gc = g_const
        g = lambda x, t: np.full_like(np.asarray(x, dtype=float), gc)
    return SimpleNamespace(alpha=alpha, g=g, f=f, g_const=g_const,
                           g_time_dependent=timedep, t0=0.0)


def fe_state(space, coeffs, k, t0=0.0):
    c = np.asarray(coeffs, dtype=complex)
    return StepState(t_prev=t0, k=k, space_prev=space,
                     u_prev=FeFunction(space, c),
                     lap_prev=FeFunction(space, discrete_laplacian(space, c)))


def test_norm_conservation_and_midpoint_identity():
    prob = catalog("exp1a")
    space = SplineSpace(Mesh1D.uniform(-2, 2, 48), 2)
    state = initial_state(prob, space, k=0.02)
    n0 = l2_norm(space, state.u_prev.coeffs)
    cache = {}
    for n in range(10):
        res = cn_step(state, space, prob, solver_cache=cache)
        nn = l2_norm(space, res.u_new.coeffs)
        assert abs(nn - n0) <= 1e-11 * n0 * (n + 1)
        scale = max(nn / state.k, 1.0)
        assert res.midpoint_residual <= 1e-10 * scale
        state = advance(state, res)
    assert len(cache) == 1  # constant-in-time operator factored once


def test_midpoint_identity_across_mesh_change():
    prob = catalog("exp1b")
    m0 = Mesh1D.uniform(-2, 2, 32)
    s0 = SplineSpace(m0, 2)
    state = initial_state(prob, s0, k=0.01)
    res = cn_step(state, s0, prob)
    state = advance(state, res)
    m1 = m0.refine([10, 11, 12, 20]).coarsen([0, 1])
    s1 = SplineSpace(m1, 2)
    res = cn_step(state, s1, prob)
    assert res.joint is not None
    scale = max(l2_norm(s1, res.u_new.coeffs) / state.k, 1.0)
    assert res.midpoint_residual <= 1e-10 * scale


def test_stationary_eigenmode_freezes():
    # g = -alpha*mu makes the lowest generalized eigenmode of (S, M) a
    # steady state; the reconstruction derivative must vanish with it
    space = SplineSpace(Mesh1D.uniform(0, 1, 12), 2)
    M = mass_matrix(space).toarray().real
    S = stiffness_matrix(space).toarray().real
    mu, vecs = sla.eigh(S, M)
    v = vecs[:, 0] / np.sqrt(vecs[:, 0] @ M @ vecs[:, 0])
    alpha = 0.5
    prob = stub(alpha=alpha, g_const=-alpha * mu[0])
    state = fe_state(space, v, k=0.05)
    res = cn_step(state, space, prob)
    assert np.abs(res.u_new.coeffs - v).max() <= 1e-12
    assert l2_norm(space, res.wbar.coeffs) <= 1e-9


def test_constant_potential_phase_rotation():
    # alpha = 0 decouples the modes: every coefficient rotates by the
    # Cayley factor of -i*g
    space = SplineSpace(Mesh1D.uniform(0, 1, 9), 1)
    rng = np.random.default_rng(3)
    c = rng.standard_normal(space.dim) + 1j * rng.standard_normal(space.dim)
    g, k = 2.5, 0.08
    prob = stub(alpha=0.0, g_const=g)
    state = fe_state(space, c, k=k)
    res = cn_step(state, space, prob)
    rho = (1.0 / k - 0.5j * g) / (1.0 / k + 0.5j * g)
    assert np.allclose(res.u_new.coeffs, rho * c, rtol=1e-13, atol=1e-14)
    assert abs(abs(rho) - 1.0) < 1e-15


def test_refinement_step_matches_embedded_fixed_space():
    # stepping onto a refinement must agree with embedding the data first
    # and stepping on the fixed fine space
    prob = catalog("exp1b")
    mesh = Mesh1D.uniform(-2, 2, 24)
    fine = mesh.refine(range(8, 16))
    s_c, s_f = SplineSpace(mesh, 2), SplineSpace(fine, 2)
    state = initial_state(prob, s_c, k=0.02)
    res_change = cn_step(state, s_f, prob)
    state_f = StepState(0.0, 0.02, s_f,
                        project_fe(state.u_prev, s_f),
                        project_fe(state.lap_prev, s_f))
    res_fixed = cn_step(state_f, s_f, prob)
    for a, b in [(res_change.u_new, res_fixed.u_new),
                 (res_change.wbar, res_fixed.wbar)]:
        scale = max(1.0, np.abs(b.coeffs).max())
        assert np.abs(a.coeffs - b.coeffs).max() <= 1e-11 * scale


def test_discrete_laplacian_identity_after_step():
    prob = catalog("exp1a")
    space = SplineSpace(Mesh1D.uniform(-2, 2, 40), 3)
    state = initial_state(prob, space, k=0.01)
    res = cn_step(state, space, prob)
    M, S = mass_matrix(space), stiffness_matrix(space)
    r = M.matvec(res.lap_new.coeffs) + S.matvec(res.u_new.coeffs)
    assert np.abs(r).max() <= 1e-11 * np.abs(S.matvec(res.u_new.coeffs)).max()


def test_compute_wbar_matches_step():
    prob = catalog("exp1b")
    mesh = Mesh1D.uniform(-2, 2, 20)
    s0 = SplineSpace(mesh, 2)
    s1 = SplineSpace(mesh.refine([4, 5, 6]), 2)
    state = initial_state(prob, s0, k=0.03)
    res = cn_step(state, s1, prob)
    w2 = compute_wbar(state, res.u_new, s1, prob)
    scale = max(1.0, np.abs(res.wbar.coeffs).max())
    assert np.abs(w2.coeffs - res.wbar.coeffs).max() <= 1e-11 * scale


def test_manufactured_solution_convergence():
    # second-order accuracy against the closed-form solution with forcing
    prob = catalog("exp2")
    errs = []
    for m, n in [(40, 40), (80, 80)]:
        space = SplineSpace(Mesh1D.uniform(prob.a, prob.b, m), 2)
        state = initial_state(prob, space, k=prob.T / n)
        for _ in range(n):
            res = cn_step(state, space, prob)
            state = advance(state, res)
        errs.append(l2_error_vs_field(space, state.u_prev.coeffs,
                                      lambda x: prob.exact(x, prob.T)))
    assert errs[1] < errs[0] / 3.0
    assert errs[1] < 2e-3


def test_zero_data_stays_zero():
    prob = stub(alpha=0.3, g=lambda x, t: np.sin(x) + t, timedep=True)
    space = SplineSpace(Mesh1D.uniform(0, 1, 8), 2)
    state = fe_state(space, np.zeros(space.dim), k=0.1)
    res = cn_step(state, space, prob)
    assert np.abs(res.u_new.coeffs).max() == 0.0
    assert np.abs(res.wbar.coeffs).max() == 0.0
    assert res.midpoint_residual == 0.0

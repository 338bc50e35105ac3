"""One step of the modified Crank-Nicolson / Galerkin scheme on a pair of
spline spaces, plus the reconstruction quantities the error estimators need.

Notation for a step from t_prev over length k with midpoint t_mid:
the new iterate solves

    [M/k + (i a/2) S + (i/2) B] c  =  (1/k) M pi_u + (i a/2) M pi_lap
                                      - (i/2) <g(t_mid) u_prev, phi> + <f(t_mid), phi>

where pi_u, pi_lap are the L2 projections of the previous iterate and of
its discrete Laplacian onto the new space, B is the g(t_mid)-weighted mass
matrix, and cross-space integrals are exact (common-refinement quadrature).

The reconstruction derivative wbar is the constant time derivative of the
piecewise linear W(t) built from its samples at t_prev and t_mid:

    W(t) = i a Theta(t) + i P(G_U)(t) - P(F)(t)

with Theta linear through {-pi_lap at t_prev, -lap_new at t_next}, and G_U,
F linear through their values at t_prev and t_mid.  By construction the
midpoint identity (u_new - pi_u)/k + W(t_mid) = 0 holds to solver roundoff.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import (
    BandedLU,
    l2_norm,
    load_vector,
    mass_lu,
    mass_matrix,
    stiffness_matrix,
    weighted_mass,
)
from .spline import FeFunction, SplineSpace
from .transfer import JointGrid, discrete_laplacian, project_field


@dataclass
class StepState:
    """Everything carried from the previous time level."""

    t_prev: float
    k: float
    space_prev: SplineSpace
    u_prev: FeFunction
    lap_prev: FeFunction
    eta_prev: float | None = None  # eta of u_prev on its own space, if known

    @property
    def t_mid(self) -> float:
        return self.t_prev + 0.5 * self.k

    @property
    def t_next(self) -> float:
        return self.t_prev + self.k


@dataclass
class StepResult:
    u_new: FeFunction
    wbar: FeFunction
    theta0: FeFunction
    theta_mid: FeFunction
    pi_u_prev: FeFunction
    pi_lap_prev: FeFunction
    lap_new: FeFunction
    pg_mid: FeFunction | None
    pf_mid: FeFunction | None
    w_prev: FeFunction
    w_mid: FeFunction
    joint: JointGrid | None
    midpoint_residual: float


def initial_state(prob, space: SplineSpace, k: float, panels: int = 1) -> StepState:
    """Project the initial data and set up the first step."""
    c0 = project_field(space, prob.u0, panels=panels)
    u0 = FeFunction(space, c0)
    lap0 = FeFunction(space, discrete_laplacian(space, c0))
    t0 = getattr(prob, "t0", 0.0)
    return StepState(t_prev=t0, k=k, space_prev=space, u_prev=u0, lap_prev=lap0)


def _system_matrix(space, k, alpha, b_band, g_const):
    M = mass_matrix(space)
    S = stiffness_matrix(space)
    diag_w = 1.0 / k + (0.5j * g_const if g_const is not None else 0.0)
    data = M.data * diag_w + S.data * (0.5j * alpha)
    if b_band is not None:
        data = data + b_band.data * 0.5j
    from .assembly import BandedMatrix

    return BandedMatrix(M.n, M.p, data)


def cn_step(state: StepState, space_new: SplineSpace, prob,
            solver_cache: dict | None = None) -> StepResult:
    """Advance one step and assemble all reconstruction quantities."""
    sp_old, sp_new = state.space_prev, space_new
    k, alpha = state.k, prob.alpha
    t0, tm = state.t_prev, state.t_mid
    same = sp_new.same_as(sp_old)
    joint = None if same else JointGrid(sp_old, sp_new)

    M = mass_matrix(sp_new)
    S = stiffness_matrix(sp_new)
    mlu = mass_lu(sp_new)
    cu = state.u_prev.coeffs
    clap = state.lap_prev.coeffs

    if same:
        m_pi_u = M.matvec(cu)
        m_pi_lap = M.matvec(clap)
        pi_u, pi_lap = cu, clap
    else:
        m_pi_u = joint.cross_load(cu)
        m_pi_lap = joint.cross_load(clap)
        pi_u = mlu.solve(m_pi_u)
        pi_lap = mlu.solve(m_pi_lap)

    g_const = getattr(prob, "g_const", None)
    g_timedep = getattr(prob, "g_time_dependent", False)
    rhs = m_pi_u / k + (0.5j * alpha) * m_pi_lap

    b_mid = None
    if g_const is not None:
        wload_mid_prev = g_const * m_pi_u  # <g u_prev, phi> exact for constant g
    elif prob.g is not None:
        Xq, _ = sp_new.quad_points()
        gq_mid = np.asarray(prob.g(Xq, tm))
        b_mid = weighted_mass(sp_new, gq_mid)
        if same:
            wload_mid_prev = b_mid.matvec(cu)
        else:
            wload_mid_prev = joint.cross_load(cu, np.asarray(prob.g(joint.X, tm)))
    else:
        wload_mid_prev = None
    if wload_mid_prev is not None:
        rhs = rhs - 0.5j * wload_mid_prev

    load_f_mid = None
    if prob.f is not None:
        load_f_mid = load_vector(sp_new, lambda x: prob.f(x, tm))
        rhs = rhs + load_f_mid

    # only a time-independent operator is worth caching; with a potential
    # varying in t the factorization changes every step anyway
    key = None
    if solver_cache is not None and (g_const is not None or not g_timedep):
        key = (id(sp_new), k)
    hit = solver_cache.get(key) if key is not None else None
    # id() values can be recycled once a space is collected, so the cache
    # entry carries the space itself and must match by identity
    if hit is not None and hit[0] is sp_new:
        alu = hit[1]
    else:
        alu = BandedLU(_system_matrix(sp_new, k, alpha, b_mid, g_const))
        if key is not None:
            solver_cache[key] = (sp_new, alu)

    u_new = alu.solve(rhs)
    lap_new = mlu.solve(-S.matvec(u_new))

    zeros = np.zeros(sp_new.dim, dtype=np.complex128)
    if g_const is not None:
        pg_prev = g_const * pi_u
        pg_mid = g_const * 0.5 * (pi_u + u_new)
    elif prob.g is not None:
        if same and not g_timedep:
            wload_prev_prev = wload_mid_prev
        elif same:
            b_prev = weighted_mass(sp_new, np.asarray(prob.g(sp_new.quad_points()[0], t0)))
            wload_prev_prev = b_prev.matvec(cu)
        else:
            wload_prev_prev = joint.cross_load(cu, np.asarray(prob.g(joint.X, t0)))
        pg_prev = mlu.solve(wload_prev_prev)
        pg_mid = mlu.solve(0.5 * (wload_mid_prev + b_mid.matvec(u_new)))
    else:
        pg_prev = pg_mid = zeros

    if prob.f is not None:
        pf_prev = mlu.solve(load_vector(sp_new, lambda x: prob.f(x, t0)).astype(complex))
        pf_mid = mlu.solve(np.asarray(load_f_mid, dtype=complex))
    else:
        pf_prev = pf_mid = zeros

    theta0 = -pi_lap
    theta_mid = -0.5 * (pi_lap + lap_new)
    w_prev = 1j * alpha * theta0 + 1j * pg_prev - pf_prev
    w_mid = 1j * alpha * theta_mid + 1j * pg_mid - pf_mid
    wbar = (2.0 / k) * (w_mid - w_prev)

    midres = l2_norm(sp_new, (u_new - pi_u) / k + w_mid)

    F = lambda c: FeFunction(sp_new, c)
    has_g = prob.g is not None or g_const is not None
    return StepResult(
        u_new=F(u_new),
        wbar=F(wbar),
        theta0=F(theta0),
        theta_mid=F(theta_mid),
        pi_u_prev=F(pi_u),
        pi_lap_prev=F(pi_lap),
        lap_new=F(lap_new),
        pg_mid=F(pg_mid) if has_g else None,
        pf_mid=F(pf_mid) if prob.f is not None else None,
        w_prev=F(w_prev),
        w_mid=F(w_mid),
        joint=joint,
        midpoint_residual=midres,
    )


def compute_wbar(state: StepState, u_new: FeFunction, space_new: SplineSpace, prob) -> FeFunction:
    """Reconstruction derivative for a given new iterate (recomputed from
    scratch; cn_step already returns the same quantity)."""
    sp_old, sp_new = state.space_prev, space_new
    k, alpha = state.k, prob.alpha
    t0, tm = state.t_prev, state.t_mid
    same = sp_new.same_as(sp_old)
    joint = None if same else JointGrid(sp_old, sp_new)
    mlu = mass_lu(sp_new)
    cu, clap, cn = state.u_prev.coeffs, state.lap_prev.coeffs, u_new.coeffs
    if same:
        pi_u, pi_lap = cu, clap
    else:
        pi_u = mlu.solve(joint.cross_load(cu))
        pi_lap = mlu.solve(joint.cross_load(clap))
    lap_new = discrete_laplacian(sp_new, cn)

    g_const = getattr(prob, "g_const", None)
    zeros = np.zeros(sp_new.dim, dtype=np.complex128)
    if g_const is not None:
        pg_prev = g_const * pi_u
        pg_mid = g_const * 0.5 * (pi_u + cn)
    elif prob.g is not None:
        Xq, _ = sp_new.quad_points()
        b_mid = weighted_mass(sp_new, np.asarray(prob.g(Xq, tm)))
        if same:
            b_prev = weighted_mass(sp_new, np.asarray(prob.g(Xq, t0)))
            wl_prev = b_prev.matvec(cu)
            wl_mid = b_mid.matvec(cu)
        else:
            wl_prev = joint.cross_load(cu, np.asarray(prob.g(joint.X, t0)))
            wl_mid = joint.cross_load(cu, np.asarray(prob.g(joint.X, tm)))
        pg_prev = mlu.solve(wl_prev)
        pg_mid = mlu.solve(0.5 * (wl_mid + b_mid.matvec(cn)))
    else:
        pg_prev = pg_mid = zeros
    if prob.f is not None:
        pf_prev = mlu.solve(load_vector(sp_new, lambda x: prob.f(x, t0)).astype(complex))
        pf_mid = mlu.solve(load_vector(sp_new, lambda x: prob.f(x, tm)).astype(complex))
    else:
        pf_prev = pf_mid = zeros

    w_prev = 1j * alpha * (-pi_lap) + 1j * pg_prev - pf_prev
    w_mid = 1j * alpha * (-0.5 * (pi_lap + lap_new)) + 1j * pg_mid - pf_mid
    return FeFunction(sp_new, (2.0 / k) * (w_mid - w_prev))


def advance(state: StepState, result: StepResult, k_next: float | None = None,
            eta_new: float | None = None) -> StepState:
    """State for the next step, reusing the computed discrete Laplacian."""
    return StepState(
        t_prev=state.t_next,
        k=k_next if k_next is not None else state.k,
        space_prev=result.u_new.space,
        u_prev=result.u_new,
        lap_prev=result.lap_new,
        eta_prev=eta_new,
    )

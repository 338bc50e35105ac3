"""A posteriori error estimators.

Elliptic residual estimators eta (with the 1D convention that the jump
terms vanish), per-step indicators zeta, and their accumulation in time:

    zeta_T0 = (k^2/8) [ |wbar| + C eta(wbar) ]
    zeta_T1 = (k^3/12) |(-a Lap_h + g(t_mid)) wbar| + C (k^3/24) p_n eta(wbar)
    zeta_S0 = eta(u_new)
    zeta_S1 = (k^2/4) eta(wbar)
    zeta_S2 = (k/2) p_n [ eta(u_prev) + eta(u_new) ]
    zeta_S3 = eta_pair(u_new, u_prev)       (degree-1 homogeneous in 1/k)
    zeta_C  = k |(I - P_new)(u_prev/k + (i a/2) lap_prev)|
    zeta_D  = k [ |P(g_mid u_half) - g_mid u_half| + |(I - P) f_mid| ]

The time integral in zeta_T1 uses one midpoint evaluation of the norm;
the exact parabolic weight integrates to k^3/12.  E^{T,0} and E^{S,0}
accumulate as running maxima, all other totals as running sums.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .assembly import l2_norm
from .spline import FeFunction
from .transfer import discrete_laplacian, l2_error_vs_field
from .scheme import StepResult, StepState


def _coeffs(v):
    return v.coeffs if isinstance(v, FeFunction) else np.asarray(v)


def eta_space_sq_local(u: FeFunction, lap=None) -> np.ndarray:
    """Per-element squared contributions h_K^4 |(Lap - Lap_h) u|_K^2."""
    space = u.space
    lap_c = _coeffs(lap) if lap is not None else discrete_laplacian(space, u.coeffs)
    d2 = space.values_on_quad(u.coeffs, deriv=2)
    lv = space.values_on_quad(lap_c)
    _, W = space.quad_points()
    per = np.einsum("eq,eq->e", W, np.abs(d2 - lv) ** 2).real
    return space.mesh.widths() ** 4 * per


def eta_space(u: FeFunction, lap=None) -> float:
    """Residual estimator {sum_K h_K^4 |(Lap - Lap_h) u|_K^2}^(1/2)."""
    return float(np.sqrt(eta_space_sq_local(u, lap).sum()))


def eta_pair_sq_local(u_new: FeFunction, u_prev: FeFunction,
                      lap_new=None, lap_prev=None, joint=None,
                      on_new: bool = False) -> np.ndarray:
    """Squared contributions of the two-space residual estimator.

    Element widths come from the common coarsening of both meshes while the
    integrand (Lap - Lap_h) u_new - (Lap - Lap_h) u_prev is evaluated on the
    common refinement inside each coarse element.  Contributions are returned
    per common-coarsening element, or per element of the new mesh when on_new
    is set (for marking); their sum is the same either way.
    """
    sp_new, sp_prev = u_new.space, u_prev.space
    c_lap_new = _coeffs(lap_new) if lap_new is not None else discrete_laplacian(sp_new, u_new.coeffs)
    c_lap_prev = _coeffs(lap_prev) if lap_prev is not None else discrete_laplacian(sp_prev, u_prev.coeffs)
    if sp_new.same_as(sp_prev):
        diff = FeFunction(sp_new, u_new.coeffs - u_prev.coeffs)
        return eta_space_sq_local(diff, c_lap_new - c_lap_prev)
    from .transfer import JointGrid

    if joint is None:
        joint = JointGrid(sp_prev, sp_new)  # side a = previous, side b = new
    res_new = joint.eval_b(u_new.coeffs, deriv=2) - joint.eval_b(c_lap_new)
    res_prev = joint.eval_a(u_prev.coeffs, deriv=2) - joint.eval_a(c_lap_prev)
    per_joint = np.einsum("eq,eq->e", joint.W, np.abs(res_new - res_prev) ** 2).real
    hat = sp_new.mesh.common_coarsening(sp_prev.mesh)
    owner_hat = joint.mesh.containing_elements(hat)
    weighted = hat.widths()[owner_hat] ** 4 * per_joint
    target = sp_new.mesh if on_new else hat
    owner = joint.mesh.containing_elements(target) if on_new else owner_hat
    acc = np.zeros(target.n_elements)
    np.add.at(acc, owner, weighted)
    return acc


def eta_space_pair(u_new: FeFunction, u_prev: FeFunction,
                   lap_new=None, lap_prev=None, joint=None) -> float:
    """Two-space residual estimator on the common coarsening."""
    return float(np.sqrt(
        eta_pair_sq_local(u_new, u_prev, lap_new, lap_prev, joint).sum()))


@dataclass
class PotentialStats:
    gbar: float
    p: float


def potential_stats(prob, t_mid: float, interval, space, n_interior: int = 8) -> PotentialStats:
    """Midrange of g(., t_mid) and the sup deviation p_n over the slab.

    Extrema by dense sampling: all Gauss nodes of the current mesh plus the
    element endpoints in space; interval endpoints, midpoint and interior
    samples in time.
    """
    g_const = getattr(prob, "g_const", None)
    if g_const is not None:
        if g_const < 0:
            warnings.warn("potential violates sup g >= -inf g", stacklevel=2)
        return PotentialStats(float(g_const), 0.0)
    if prob.g is None:
        return PotentialStats(0.0, 0.0)
    X, _ = space.quad_points()
    xs = np.concatenate([X.ravel(), space.mesh.breakpoints()])
    gm = np.asarray(prob.g(xs, t_mid), dtype=float)
    if gm.max() < -gm.min():
        warnings.warn("potential violates sup g >= -inf g", stacklevel=2)
    gbar = 0.5 * (gm.max() + gm.min())
    if not getattr(prob, "g_time_dependent", False):
        return PotentialStats(float(gbar), float(np.abs(gm - gbar).max()))
    t0, t1 = interval
    ts = np.concatenate(
        [[t0, t_mid, t1], t0 + (t1 - t0) * np.arange(1, n_interior + 1) / (n_interior + 1)]
    )
    p = max(float(np.abs(np.asarray(prob.g(xs, t)) - gbar).max()) for t in ts)
    return PotentialStats(float(gbar), p)


@dataclass
class StepEstimators:
    zeta_T0: float
    zeta_T1: float
    zeta_S0: float
    zeta_S1: float
    zeta_S2: float
    zeta_S3: float
    zeta_C: float
    zeta_D: float
    stats: PotentialStats
    eta_u: float = 0.0       # eta of u_new, reusable as next step's eta_prev
    eta_wbar: float = 0.0
    norm_wbar: float = 0.0

    @property
    def zeta_T(self) -> float:
        return self.zeta_T0 + self.zeta_T1

    @property
    def zeta_S(self) -> float:
        return (self.zeta_S0 + self.zeta_S1 + self.zeta_S2 + self.zeta_S3
                + self.zeta_C + self.zeta_D)


def step_estimators(state: StepState, result: StepResult, prob,
                    C_const: float = 1.0) -> StepEstimators:
    sp_new = result.u_new.space
    sp_old = state.space_prev
    k, alpha = state.k, prob.alpha
    same = sp_new.same_as(sp_old)

    stats = potential_stats(prob, state.t_mid, (state.t_prev, state.t_next), sp_new)

    wbar = result.wbar.coeffs
    lap_wbar = discrete_laplacian(sp_new, wbar)
    eta_wbar = eta_space(result.wbar, lap_wbar)
    norm_wbar = l2_norm(sp_new, wbar)
    zeta_T0 = k**2 / 8.0 * (norm_wbar + C_const * eta_wbar)

    Xq, Wq = sp_new.quad_points()
    wq = sp_new.values_on_quad(wbar)
    lapq = sp_new.values_on_quad(lap_wbar)
    g_const = getattr(prob, "g_const", None)
    if g_const is not None:
        gq = g_const
    elif prob.g is not None:
        gq = np.asarray(prob.g(Xq, state.t_mid))
    else:
        gq = 0.0
    op = -alpha * lapq + gq * wq
    norm_op = float(np.sqrt(np.einsum("eq,eq->", Wq, np.abs(op) ** 2).real))
    zeta_T1 = k**3 / 12.0 * norm_op + C_const * k**3 / 24.0 * stats.p * eta_wbar

    eta_u_new = eta_space(result.u_new, result.lap_new)
    zeta_S0 = eta_u_new
    zeta_S1 = k**2 / 4.0 * eta_wbar
    eta_u_prev = state.eta_prev
    if eta_u_prev is None:
        eta_u_prev = eta_space(state.u_prev, state.lap_prev)
    zeta_S2 = 0.5 * k * stats.p * (eta_u_prev + eta_u_new)
    zeta_S3 = eta_space_pair(result.u_new, state.u_prev,
                             result.lap_new, state.lap_prev, result.joint)

    if same:
        zeta_C = 0.0
    else:
        # |(I - P_new) v| via the common refinement; free of the cancellation
        # the |v|^2 - |Pv|^2 form suffers on near-nested meshes
        v_old = state.u_prev.coeffs / k + 0.5j * alpha * state.lap_prev.coeffs
        v_proj = result.pi_u_prev.coeffs / k + 0.5j * alpha * result.pi_lap_prev.coeffs
        zeta_C = k * result.joint.l2_diff(v_old, v_proj)

    term1 = 0.0
    if result.pg_mid is not None:
        if same and g_const is not None:
            pass  # g u_half lies in the space, so P(g u_half) = g u_half
        elif same:
            half = 0.5 * (sp_new.values_on_quad(state.u_prev.coeffs)
                          + sp_new.values_on_quad(result.u_new.coeffs))
            dv = sp_new.values_on_quad(result.pg_mid.coeffs) - gq * half
            term1 = float(np.sqrt(np.einsum("eq,eq->", Wq, np.abs(dv) ** 2).real))
        else:
            joint = result.joint
            gj = g_const if g_const is not None else np.asarray(prob.g(joint.X, state.t_mid))
            half = 0.5 * (joint.eval_a(state.u_prev.coeffs) + joint.eval_b(result.u_new.coeffs))
            dv = joint.eval_b(result.pg_mid.coeffs) - gj * half
            term1 = float(np.sqrt(np.einsum("eq,eq->", joint.W, np.abs(dv) ** 2).real))
    term2 = 0.0
    if prob.f is not None:
        tm = state.t_mid
        term2 = l2_error_vs_field(sp_new, result.pf_mid.coeffs, lambda x: prob.f(x, tm))
    zeta_D = k * (term1 + term2)

    return StepEstimators(
        zeta_T0=zeta_T0, zeta_T1=zeta_T1,
        zeta_S0=zeta_S0, zeta_S1=zeta_S1, zeta_S2=zeta_S2, zeta_S3=zeta_S3,
        zeta_C=zeta_C, zeta_D=zeta_D, stats=stats,
        eta_u=eta_u_new, eta_wbar=eta_wbar, norm_wbar=norm_wbar,
    )


def initial_quantities(prob, u0: FeFunction, panels: int = 1):
    """Initial indicator zeta0_I = |u_0 - U^0| + eta(U^0), and eta(U^0)."""
    err = l2_error_vs_field(u0.space, u0.coeffs, prob.u0, panels=panels)
    eta0 = eta_space(u0)
    return err + eta0, eta0


@dataclass
class EstimatorTotals:
    """Running accumulation of the per-step indicators.

    E_T0 and E_S0 are maxima (E_S0 seeded with eta(U^0)); the rest are sums.
    The tilde variants replace the sums by maxima of the per-step values.
    """

    zeta0_I: float = 0.0
    eta_u0: float = 0.0
    n_steps: int = 0
    E_T0: float = 0.0
    E_T1: float = 0.0
    E_S0: float = 0.0
    E_S1: float = 0.0
    E_S2: float = 0.0
    E_S3: float = 0.0
    E_C: float = 0.0
    E_D: float = 0.0
    max_T1: float = 0.0
    max_S1: float = 0.0
    max_S2: float = 0.0
    max_S3: float = 0.0
    max_C: float = 0.0
    max_D: float = 0.0

    @classmethod
    def start(cls, zeta0_I: float, eta_u0: float) -> "EstimatorTotals":
        return cls(zeta0_I=zeta0_I, eta_u0=eta_u0, E_S0=eta_u0)

    def add(self, z: StepEstimators) -> None:
        self.n_steps += 1
        self.E_T0 = max(self.E_T0, z.zeta_T0)
        self.E_S0 = max(self.E_S0, z.zeta_S0)
        self.E_T1 += z.zeta_T1
        self.E_S1 += z.zeta_S1
        self.E_S2 += z.zeta_S2
        self.E_S3 += z.zeta_S3
        self.E_C += z.zeta_C
        self.E_D += z.zeta_D
        self.max_T1 = max(self.max_T1, z.zeta_T1)
        self.max_S1 = max(self.max_S1, z.zeta_S1)
        self.max_S2 = max(self.max_S2, z.zeta_S2)
        self.max_S3 = max(self.max_S3, z.zeta_S3)
        self.max_C = max(self.max_C, z.zeta_C)
        self.max_D = max(self.max_D, z.zeta_D)

    @property
    def tilde_T(self) -> float:
        return self.E_T0 + self.max_T1

    @property
    def tilde_S(self) -> float:
        return (self.zeta0_I + self.E_S0 + self.max_S1 + self.max_S2
                + self.max_S3 + self.max_C + self.max_D)

    @property
    def total(self) -> float:
        """Additive total: zeta0_I + E_T0 + E_T1 + sum_j E_Sj + E_D."""
        return (self.zeta0_I + self.E_T0 + self.E_T1
                + self.E_S0 + self.E_S1 + self.E_S2 + self.E_S3 + self.E_D)

    @property
    def tilde_total(self) -> float:
        return self.tilde_T + self.tilde_S

    def as_dict(self) -> dict:
        return {
            "zeta0_I": self.zeta0_I,
            "E_T0": self.E_T0, "E_T1": self.E_T1,
            "E_S0": self.E_S0, "E_S1": self.E_S1,
            "E_S2": self.E_S2, "E_S3": self.E_S3,
            "E_C": self.E_C, "E_D": self.E_D,
            "tilde_T": self.tilde_T, "tilde_S": self.tilde_S,
            "total": self.total, "tilde_total": self.tilde_total,
            "n_steps": self.n_steps,
        }

"""Time-space adaptivity driven by the a posteriori indicators.

A trial step is accepted once zeta_T <= theta1 * tol_time and
zeta_S <= tol_space.  Rejections shrink the step (k <- delta1 k) or adapt
the grid (bisect the elements carrying the largest local indicators,
merge those carrying the smallest) and re-solve the same step from the
unchanged previous level.  Comfortably accepted steps (zeta_T below
theta2 * tol_time) grow the next step by delta2.

In observable mode every indicator except zeta_T0 and zeta_S0 enters the
acceptance tests multiplied by the Planck scale eps; this matches the
weaker norm in which the physical densities are controlled, so grids and
steps are not over-refined for phase errors the observables cannot see.
The resolution demands stay unscaled: zeta_S0, zeta_T0, and the initial
indicator zeta0_I, because an initial grid too coarse for the data loses
the amplitude (the projection averages unresolved oscillation toward
zero), which no observable survives.

Local space indicators combine the element contributions of zeta_S0,
zeta_S1 and zeta_S3.  The remaining indicators have no natural element
decomposition (zeta_C and zeta_D are projection defects, zeta_S2 carries
the global potential deviation) and only enter the acceptance test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .estimators import (EstimatorTotals, StepEstimators, eta_pair_sq_local,
                         eta_space_sq_local, initial_quantities,
                         step_estimators)
from .mesh import Mesh1D
from .scheme import StepResult, StepState, advance, cn_step, initial_state
from .spline import FeFunction, SplineSpace
from .transfer import discrete_laplacian, l2_error_sq_local


@dataclass
class AdaptiveConfig:
    """Tolerances and tuning constants of the adaptive loop."""

    tol_space: float
    tol_time: float
    theta1: float = 0.9        # acceptance factor for the time test
    theta2: float = 0.2        # comfort factor enabling step growth
    delta1: float = 0.75       # step shrink on time rejection
    delta2: float = 1.25       # step growth after comfortable acceptance
    refine_fraction: Optional[float] = None   # default set per problem
    coarsen_fraction: float = 0.10
    max_inner_iters: int = 60  # rejections allowed within one step
    k_min: Optional[float] = None             # default 1e-12 * T
    fix_k: bool = False        # space-only adaptivity
    observable_mode: bool = False
    eps: Optional[float] = None               # default: the problem's scale

    def __post_init__(self):
        if self.tol_space <= 0 or self.tol_time <= 0:
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.delta1 < 1.0:
            raise ValueError("delta1 must lie in (0, 1)")
        if self.delta2 < 1.0:
            raise ValueError("delta2 must be >= 1")
        if not 0.0 < self.theta1 <= 1.0:
            raise ValueError("theta1 must lie in (0, 1]")
        if not 0.0 <= self.theta2 < self.theta1:
            raise ValueError("theta2 must lie in [0, theta1)")
        rf = self.refine_fraction
        if rf is not None and not 0.0 <= rf <= 1.0:
            raise ValueError("refine_fraction must lie in [0, 1]")
        if not 0.0 <= self.coarsen_fraction <= 1.0:
            raise ValueError("coarsen_fraction must lie in [0, 1]")
        if rf is not None and rf + self.coarsen_fraction > 1.0:
            raise ValueError("refine and coarsen fractions overlap")
        if self.max_inner_iters < 1:
            raise ValueError("max_inner_iters must be at least 1")

    def resolved_refine_fraction(self, prob) -> float:
        if self.refine_fraction is not None:
            return self.refine_fraction
        return 0.01 if getattr(prob, "g_time_dependent", False) else 0.05

    def resolved_eps(self, prob) -> float:
        if self.eps is not None:
            return self.eps
        eps = getattr(prob, "eps", None)
        if eps is None:
            raise ValueError("observable mode needs a Planck scale eps")
        return float(eps)


class AdaptiveError(RuntimeError):
    """Raised when the loop cannot satisfy the tolerances."""


def _count(frac: float, n: int, up: bool) -> int:
    # round to kill 0.05 * 100 = 5.000000000000001 artifacts before ceil
    x = round(frac * n, 9)
    return min(n, int(math.ceil(x) if up else math.floor(x)))


def mark(indicators: np.ndarray, refine_fraction: float,
         coarsen_fraction: float) -> Tuple[np.ndarray, np.ndarray]:
    """Element positions to bisect (largest) and to merge (smallest).

    Fixed-fraction marking: ceil(r n) for refinement, floor(c n) for
    coarsening.  Ties resolve toward the lower element index, and the two
    sets are disjoint (refinement wins contested elements).
    """
    ind = np.asarray(indicators, dtype=float)
    n = ind.size
    n_ref = _count(refine_fraction, n, up=True) if refine_fraction > 0 else 0
    n_coa = _count(coarsen_fraction, n, up=False)
    ids = np.arange(n)
    refine = np.sort(np.lexsort((ids, -ind))[:n_ref])
    if n_coa == 0:
        return refine, np.empty(0, dtype=np.int64)
    asc = np.lexsort((ids, ind))
    taken = np.zeros(n, dtype=bool)
    taken[refine] = True
    coarsen = np.sort(asc[~taken[asc]][:n_coa])
    return refine, coarsen


def element_indicators(state: StepState, result: StepResult) -> np.ndarray:
    """Local space indicator per element of the new mesh.

    Square root of the elementwise contributions of zeta_S0^2,
    zeta_S1^2 and zeta_S3^2.
    """
    sp = result.u_new.space
    k = state.k
    loc = eta_space_sq_local(result.u_new, result.lap_new)
    lap_wbar = discrete_laplacian(sp, result.wbar.coeffs)
    loc = loc + (k**2 / 4.0) ** 2 * eta_space_sq_local(result.wbar, lap_wbar)
    loc = loc + eta_pair_sq_local(result.u_new, state.u_prev,
                                  result.lap_new, state.lap_prev,
                                  joint=result.joint, on_new=True)
    return np.sqrt(loc)


def adapt_mesh(mesh: Mesh1D, refine_pos: np.ndarray, coarsen_pos: np.ndarray) -> Mesh1D:
    """Bisect the refine set, then merge the coarsen set on the new mesh.

    Each bisection before a kept element shifts its position by one, so the
    coarsening marks are remapped before the merge.  Merging happens only
    where both siblings are marked; leftover marks are dropped.
    """
    refined = mesh.refine(refine_pos) if len(refine_pos) else mesh
    if len(coarsen_pos) == 0:
        return refined
    shift = np.searchsorted(np.sort(refine_pos), coarsen_pos)
    return refined.coarsen(coarsen_pos + shift)


@dataclass
class StepRecord:
    """One accepted step."""

    n: int
    t: float                 # time level reached
    k: float
    dim: int
    n_elements: int
    time_rejections: int
    space_adaptations: int
    est: StepEstimators
    zeta_T_eff: float
    zeta_S_eff: float


@dataclass
class AdaptiveRun:
    """Full history of an adaptive solve."""

    records: List[StepRecord] = field(default_factory=list)
    events: List[tuple] = field(default_factory=list)
    totals: EstimatorTotals = field(default_factory=EstimatorTotals)
    zeta0_I: float = 0.0
    eta_u0: float = 0.0
    initial_dim: int = 0
    dof_weighted: float = 0.0      # sum over steps of k_n * dim(V^n)
    u_final: Optional[FeFunction] = None
    snapshots: List[Tuple[float, float, FeFunction]] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.records)

    @property
    def total_dof(self) -> int:
        return int(math.floor(self.dof_weighted)) + 1

    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    def steps(self) -> np.ndarray:
        return np.array([r.k for r in self.records])

    def dims(self) -> np.ndarray:
        return np.array([r.dim for r in self.records])


def _effective(est: StepEstimators, scale: float) -> Tuple[float, float]:
    """Acceptance-test values; scale < 1 only in observable mode."""
    if scale == 1.0:
        return est.zeta_T, est.zeta_S
    zT = est.zeta_T0 + scale * est.zeta_T1
    zS = est.zeta_S0 + scale * (est.zeta_S1 + est.zeta_S2 + est.zeta_S3
                                + est.zeta_C + est.zeta_D)
    return zT, zS


def adapt_initial_grid(prob, degree: int, tol: float, m0: int = 8,
                       panels: int = 2,
                       max_rounds: int = 200) -> Tuple[SplineSpace, float, float]:
    """Refine a coarse uniform grid until zeta0_I = |u_0 - U^0| + eta(U^0) <= tol.

    Marks every element whose combined local contribution (squared
    projection error plus squared eta term) exceeds the equidistribution
    threshold tol^2 / (2 n); at least one element always qualifies while
    the target is missed, so each round makes progress.  Returns the
    space together with zeta0_I and eta(U^0) on it.
    """
    from .transfer import project_field

    mesh = Mesh1D.uniform(prob.a, prob.b, m0)
    target = tol
    for _ in range(max_rounds):
        space = SplineSpace(mesh, degree)
        coeffs = project_field(space, prob.u0, panels=panels)
        u0 = FeFunction(space, coeffs)
        err_sq = l2_error_sq_local(space, coeffs, prob.u0, panels=panels)
        eta_sq = eta_space_sq_local(u0)
        err, eta0 = math.sqrt(err_sq.sum()), math.sqrt(eta_sq.sum())
        zeta0 = err + eta0
        if zeta0 <= target:
            return space, zeta0, eta0
        local = err_sq + eta_sq
        marked = np.flatnonzero(local > target**2 / (2.0 * mesh.n_elements))
        mesh = mesh.refine(marked)
    raise AdaptiveError(
        f"initial grid not resolved after {max_rounds} rounds "
        f"(zeta0_I = {zeta0:.3e}, target {target:.3e}, {mesh.n_elements} elements)")


def run_adaptive(prob, config: AdaptiveConfig, degree: int = 1,
                 k0: float = 1e-2, m0: int = 8, panels: int = 2,
                 snapshot_times=(), t_end: Optional[float] = None,
                 on_step: Optional[Callable[[StepRecord], None]] = None) -> AdaptiveRun:
    """Adaptive solve of the problem on (t0, t_end], default t_end = T.

    Starts from the adapted initial grid, then repeats: solve a trial
    step, shrink k while the time indicator rejects, adapt the grid and
    re-solve while the space indicator rejects, accept, possibly grow k.
    """
    T = float(t_end if t_end is not None else prob.T)
    t0 = getattr(prob, "t0", 0.0)
    if T <= t0:
        raise ValueError("empty time interval")
    scale = config.resolved_eps(prob) if config.observable_mode else 1.0
    k_min = config.k_min if config.k_min is not None else 1e-12 * (T - t0)
    r_frac = config.resolved_refine_fraction(prob)

    run = AdaptiveRun()
    space, zeta0, eta0 = adapt_initial_grid(
        prob, degree, config.tol_space, m0=m0, panels=panels)
    run.zeta0_I, run.eta_u0 = zeta0, eta0
    run.initial_dim = space.dim
    run.totals.start(zeta0, eta0)

    state = initial_state(prob, space, k0, panels=panels)
    state.eta_prev = eta0

    snaps = sorted(float(s) for s in snapshot_times)
    snap_tol = 1e-12 * max(T - t0, 1.0)
    while snaps and snaps[0] <= t0 + snap_tol:
        run.snapshots.append((snaps.pop(0), t0, state.u_prev.copy()))

    cache: dict = {}
    n = 0
    while state.t_prev < T - snap_tol:
        state.k = min(state.k, T - state.t_prev)
        trial_space = state.space_prev
        time_rejections = 0
        space_adaptations = 0
        inner = 0
        while True:
            # time loop: shrink k until the time indicator accepts
            while True:
                if len(cache) > 12:
                    cache.clear()
                result = cn_step(state, trial_space, prob, solver_cache=cache)
                est = step_estimators(state, result, prob)
                zT, zS = _effective(est, scale)
                if config.fix_k or zT <= config.theta1 * config.tol_time:
                    break
                inner += 1
                time_rejections += 1
                if inner > config.max_inner_iters:
                    raise AdaptiveError(
                        f"step {n} at t = {state.t_prev:.6g} exceeded "
                        f"{config.max_inner_iters} rejections "
                        f"(zeta_T = {zT:.3e}, zeta_S = {zS:.3e})")
                k_new = config.delta1 * state.k
                if k_new < k_min:
                    raise AdaptiveError(
                        f"time step underflow at t = {state.t_prev:.6g} "
                        f"(k = {k_new:.3e} < {k_min:.3e}, zeta_T = {zT:.3e})")
                state.k = k_new
                run.events.append((n, "shrink-k", k_new))
            if zS <= config.tol_space:
                break
            inner += 1
            space_adaptations += 1
            if inner > config.max_inner_iters:
                raise AdaptiveError(
                    f"step {n} at t = {state.t_prev:.6g} exceeded "
                    f"{config.max_inner_iters} rejections "
                    f"(zeta_T = {zT:.3e}, zeta_S = {zS:.3e})")
            ind = element_indicators(state, result)
            ref_pos, coa_pos = mark(ind, r_frac, config.coarsen_fraction)
            mesh_new = adapt_mesh(trial_space.mesh, ref_pos, coa_pos)
            if mesh_new.n_elements == trial_space.mesh.n_elements and len(ref_pos) == 0:
                break  # marking produced no mergeable pairs; accept as is
            if len(ref_pos):
                run.events.append((n, "refine", int(len(ref_pos))))
            merged = len(ref_pos) - (mesh_new.n_elements - trial_space.mesh.n_elements)
            if merged:
                run.events.append((n, "coarsen", int(merged)))
            trial_space = SplineSpace(mesh_new, degree)

        run.totals.add(est)
        rec = StepRecord(n=n, t=state.t_next, k=state.k, dim=trial_space.dim,
                         n_elements=trial_space.mesh.n_elements,
                         time_rejections=time_rejections,
                         space_adaptations=space_adaptations,
                         est=est, zeta_T_eff=zT, zeta_S_eff=zS)
        run.records.append(rec)
        run.dof_weighted += state.k * trial_space.dim
        t_new = state.t_next
        while snaps and t_new >= snaps[0] - snap_tol:
            run.snapshots.append((snaps.pop(0), t_new, result.u_new.copy()))
        if on_step is not None:
            on_step(rec)

        k_next = state.k
        if not config.fix_k and zT <= config.theta2 * config.tol_time:
            k_next = config.delta2 * state.k
            run.events.append((n, "grow-k", k_next))
        state = advance(state, result, k_next=k_next, eta_new=est.eta_u)
        n += 1

    run.u_final = state.u_prev
    return run

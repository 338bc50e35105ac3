"""Marking, grid adaptation, and the accept/reject loop."""
import math

import numpy as np
import pytest

from cnschro.adaptive import (AdaptiveConfig, AdaptiveError, adapt_initial_grid,
                              adapt_mesh, element_indicators, mark, run_adaptive)
from cnschro.estimators import StepEstimators, eta_space, eta_space_pair, step_estimators
from cnschro.adaptive import _effective
from cnschro.mesh import Mesh1D
from cnschro.problems import ProblemSpec, catalog
from cnschro.scheme import advance, cn_step, initial_state
from cnschro.spline import SplineSpace


# ---------------------------------------------------------------- marking

def test_mark_fractions():
    ind = np.array([4.0, 3.0, 2.0, 1.0])
    ref, coa = mark(ind, 0.25, 0.25)
    assert list(ref) == [0]
    assert list(coa) == [3]


def test_mark_zero_fractions():
    ref, coa = mark(np.array([1.0, 2.0, 3.0]), 0.0, 0.0)
    assert len(ref) == 0 and len(coa) == 0


def test_mark_counts_and_order():
    rng = np.random.default_rng(7)
    ind = rng.random(100)
    ref, coa = mark(ind, 0.05, 0.10)
    assert len(ref) == 5 and len(coa) == 10
    unmarked = np.setdiff1d(np.arange(100), np.concatenate([ref, coa]))
    assert ind[ref].min() >= ind[unmarked].max()
    assert ind[coa].max() <= ind[unmarked].min()


def test_mark_ties_lower_index_and_disjoint():
    ind = np.ones(4)
    ref, coa = mark(ind, 0.25, 0.25)
    assert list(ref) == [0]
    assert list(coa) == [1]  # refinement wins the contested element
    assert not set(ref) & set(coa)


def test_mark_roundoff_counts():
    # 0.05 * 100 is slightly above 5 in floating point; ceil must not
    # spill over to 6
    ref, _ = mark(np.arange(100, dtype=float), 0.05, 0.0)
    assert len(ref) == 5


# ---------------------------------------------------------- grid surgery

def test_adapt_mesh_remaps_coarsen_marks():
    # positions 4,5 of this mesh are siblings; bisecting position 1 shifts
    # them to 5,6, and the merge must still find the pair
    base = Mesh1D.uniform(0.0, 1.0, 8).refine([4])
    assert base.n_elements == 9
    out = adapt_mesh(base, np.array([1]), np.array([4, 5]))
    assert out.n_elements == 9  # +1 from the bisection, -1 from the merge
    expect = np.union1d(np.linspace(0, 1, 9), [1.5 / 8])
    np.testing.assert_allclose(out.breakpoints(), expect, atol=1e-15)


def test_adapt_mesh_drops_unpaired_marks():
    base = Mesh1D.uniform(0.0, 1.0, 8)
    out = adapt_mesh(base, np.array([], dtype=int), np.array([2, 3]))
    # elements of the root mesh have no siblings to merge with
    assert out.n_elements == 8


# ------------------------------------------------------ local indicators

def _one_step(prob, M, degree, k):
    space = SplineSpace(Mesh1D.uniform(prob.a, prob.b, M), degree)
    state = initial_state(prob, space, k)
    result = cn_step(state, space, prob)
    return state, result


def test_element_indicators_partition():
    prob = catalog("exp1a")
    state, result = _one_step(prob, 48, 1, 0.01)
    loc = element_indicators(state, result)
    total = (eta_space(result.u_new, result.lap_new) ** 2
             + (state.k**2 / 4.0) ** 2 * eta_space(result.wbar) ** 2
             + eta_space_pair(result.u_new, state.u_prev,
                              result.lap_new, state.lap_prev) ** 2)
    assert math.isclose((loc**2).sum(), total, rel_tol=1e-12)


def test_element_indicators_localize_spike():
    prob = catalog("exp1a")  # Gaussian bump at the origin
    state, result = _one_step(prob, 64, 1, 0.01)
    loc = element_indicators(state, result)
    x_hot = result.u_new.space.mesh.midpoints()[np.argmax(loc)]
    assert abs(x_hot) < 0.5


# -------------------------------------------------------- initial grid

def test_adapt_initial_grid_meets_tolerance():
    prob = catalog("exp1a")
    space, zeta0, eta0 = adapt_initial_grid(prob, degree=1, tol=5e-2, m0=8)
    assert zeta0 <= 5e-2
    assert eta0 <= zeta0
    assert space.mesh.n_elements >= 8
    # refinement concentrates where the data lives
    w = space.mesh.widths()
    assert abs(space.mesh.midpoints()[np.argmin(w)]) < 0.5


def test_adapt_initial_grid_rounds_bound():
    prob = catalog("exp1a")
    with pytest.raises(AdaptiveError):
        adapt_initial_grid(prob, degree=1, tol=1e-3, m0=8, max_rounds=2)


# ---------------------------------------------------------- config rules

def test_config_validation():
    ok = dict(tol_space=1.0, tol_time=1.0)
    AdaptiveConfig(**ok)
    with pytest.raises(ValueError):
        AdaptiveConfig(tol_space=0.0, tol_time=1.0)
    with pytest.raises(ValueError):
        AdaptiveConfig(**ok, delta1=1.0)
    with pytest.raises(ValueError):
        AdaptiveConfig(**ok, delta2=0.9)
    with pytest.raises(ValueError):
        AdaptiveConfig(**ok, theta2=0.95)  # above theta1
    with pytest.raises(ValueError):
        AdaptiveConfig(**ok, refine_fraction=0.6, coarsen_fraction=0.5)


def test_effective_scaling():
    est = StepEstimators(zeta_T0=1.0, zeta_T1=2.0, zeta_S0=3.0, zeta_S1=4.0,
                         zeta_S2=5.0, zeta_S3=6.0, zeta_C=7.0, zeta_D=8.0,
                         stats=None)
    zT, zS = _effective(est, 1.0)
    assert zT == 3.0 and zS == 33.0
    zT, zS = _effective(est, 0.1)
    assert math.isclose(zT, 1.0 + 0.2)
    assert math.isclose(zS, 3.0 + 0.1 * 30.0)


# ------------------------------------------------------------- the loop

def test_accepted_steps_satisfy_tolerances():
    prob = catalog("exp1a")
    cfg = AdaptiveConfig(tol_space=5e-2, tol_time=5e-2)
    run = run_adaptive(prob, cfg, degree=1, k0=2e-2, m0=8, t_end=0.1)
    assert run.n_steps > 0
    assert abs(run.records[-1].t - 0.1) < 1e-9
    for r in run.records:
        assert r.zeta_T_eff <= cfg.theta1 * cfg.tol_time * (1 + 1e-12)
        assert r.zeta_S_eff <= cfg.tol_space * (1 + 1e-12)
    assert run.zeta0_I <= cfg.tol_space


def test_time_rejection_shrinks_monotonically():
    prob = catalog("exp1a")
    cfg = AdaptiveConfig(tol_space=1.0, tol_time=1e-3)
    run = run_adaptive(prob, cfg, degree=1, k0=2e-2, m0=64, t_end=2e-2)
    shrinks = [p for n, a, p in run.events if a == "shrink-k" and n == 0]
    assert len(shrinks) >= 1
    assert all(b < a for a, b in zip(shrinks, shrinks[1:]))
    assert math.isclose(shrinks[0], 0.75 * 2e-2, rel_tol=1e-12)
    # accepted step is the last trial
    assert math.isclose(run.records[0].k, shrinks[-1], rel_tol=1e-12)


def test_generous_tolerances_grow_step():
    prob = catalog("exp1a")
    cfg = AdaptiveConfig(tol_space=1e3, tol_time=1e3)
    run = run_adaptive(prob, cfg, degree=1, k0=0.25, m0=8)
    assert all(r.time_rejections == 0 and r.space_adaptations == 0
               for r in run.records)
    grows = [n for n, a, _ in run.events if a == "grow-k"]
    assert grows, "comfortable steps must grow k"
    # growth by delta2 between interior steps
    assert math.isclose(run.records[1].k, min(1.25 * 0.25, 1.0 - 0.25),
                        rel_tol=1e-12)


def test_space_adaptation_triggers_and_records():
    prob = catalog("exp1a")
    cfg = AdaptiveConfig(tol_space=8e-3, tol_time=1.0, refine_fraction=0.2)
    run = run_adaptive(prob, cfg, degree=1, k0=5e-3, m0=8, t_end=2e-2)
    assert any(a == "refine" for _, a, _ in run.events)
    assert any(r.space_adaptations > 0 for r in run.records)
    for r in run.records:
        assert r.zeta_S_eff <= cfg.tol_space * (1 + 1e-12)


def test_zero_datum_runs_clean():
    prob = ProblemSpec(name="nul", a=0.0, b=1.0, T=0.2, alpha=1.0,
                       u0=lambda x: np.zeros_like(np.asarray(x, float)),
                       g_const=0.0, g=lambda x, t: np.zeros_like(np.asarray(x, float)))
    cfg = AdaptiveConfig(tol_space=1e-8, tol_time=1e-8)
    run = run_adaptive(prob, cfg, degree=1, k0=0.05, m0=8)
    assert run.zeta0_I == 0.0
    d = run.totals.as_dict()
    for key in ("E_T0", "E_T1", "E_S0", "E_S1", "E_S2", "E_S3", "E_D", "total"):
        assert d[key] == 0.0
    assert not any(a in ("shrink-k", "refine", "coarsen") for _, a, _ in run.events)


def test_step_underflow_raises():
    prob = catalog("exp1a")
    cfg = AdaptiveConfig(tol_space=1.0, tol_time=1e-12, k_min=1e-4)
    with pytest.raises(AdaptiveError, match="underflow"):
        run_adaptive(prob, cfg, degree=1, k0=1e-2, m0=32, t_end=0.1)


def test_inner_iteration_bound_raises():
    prob = catalog("exp1a")
    cfg = AdaptiveConfig(tol_space=1.0, tol_time=1e-12, max_inner_iters=3)
    with pytest.raises(AdaptiveError, match="rejections"):
        run_adaptive(prob, cfg, degree=1, k0=1e-2, m0=32, t_end=0.1)


def test_fix_k_keeps_step_constant():
    prob = catalog("exp1a")
    cfg = AdaptiveConfig(tol_space=5e-2, tol_time=1e-12, fix_k=True)
    run = run_adaptive(prob, cfg, degree=1, k0=1e-2, m0=8, t_end=5e-2)
    assert not any(a in ("shrink-k", "grow-k") for _, a, _ in run.events)
    ks = run.steps()
    assert np.allclose(ks[:-1], 1e-2, rtol=1e-12)


def test_dof_accounting():
    prob = catalog("exp1a")
    cfg = AdaptiveConfig(tol_space=5e-2, tol_time=5e-2)
    run = run_adaptive(prob, cfg, degree=1, k0=1e-2, m0=8, t_end=0.1)
    s = sum(r.k * r.dim for r in run.records)
    assert math.isclose(run.dof_weighted, s, rel_tol=1e-12)
    assert run.total_dof == int(math.floor(s)) + 1


def test_determinism():
    prob = catalog("exp1a")
    cfg = AdaptiveConfig(tol_space=3e-2, tol_time=3e-2)
    a = run_adaptive(prob, cfg, degree=1, k0=1e-2, m0=8, t_end=0.2)
    b = run_adaptive(prob, cfg, degree=1, k0=1e-2, m0=8, t_end=0.2)
    assert a.n_steps == b.n_steps
    np.testing.assert_array_equal(a.times(), b.times())
    np.testing.assert_array_equal(a.steps(), b.steps())
    np.testing.assert_array_equal(a.dims(), b.dims())
    np.testing.assert_array_equal(a.u_final.coeffs, b.u_final.coeffs)
    assert a.events == b.events


def test_snapshots_at_first_reached_times():
    prob = catalog("exp1a")
    cfg = AdaptiveConfig(tol_space=5e-2, tol_time=5e-2)
    run = run_adaptive(prob, cfg, degree=1, k0=1e-2, m0=8, t_end=0.3,
                       snapshot_times=(0.0, 0.15, 0.3))
    assert len(run.snapshots) == 3
    req = [s[0] for s in run.snapshots]
    assert req == [0.0, 0.15, 0.3]
    for want, got, _ in run.snapshots:
        assert got >= want - 1e-10
    assert abs(run.snapshots[-1][1] - 0.3) < 1e-9


def test_observable_mode_relaxes_space_tests():
    # same tolerance: the eps-weighted tests must not need a finer grid
    prob = catalog("sensitivity", eps=0.05)
    tol = dict(tol_space=2e-2, tol_time=1.0,
               refine_fraction=0.25, coarsen_fraction=0.0)
    plain = run_adaptive(prob, AdaptiveConfig(**tol), degree=1, k0=5e-3,
                         m0=8, t_end=2e-2)
    obs = run_adaptive(prob, AdaptiveConfig(**tol, observable_mode=True),
                       degree=1, k0=5e-3, m0=8, t_end=2e-2)
    assert obs.initial_dim <= plain.initial_dim
    assert max(r.dim for r in obs.records) <= max(r.dim for r in plain.records)
    for r in obs.records:
        zT, zS = _effective(r.est, 0.05)
        assert math.isclose(zS, r.zeta_S_eff, rel_tol=1e-12)

"""Experiment drivers and reporting.

Everything here is deterministic: fixed chunk sizes, fixed quadrature,
sequential execution, and CSV output with a fixed float format, so repeated
runs produce byte-identical files.

The drivers cover four study types:

* uniform-grid convergence tables with paired (k, M) rows and observed
  convergence rates, optionally against an exact solution or a stored
  fine-grid reference,
* reference solutions on a fine fixed grid (bare scheme, no estimators),
* sensitivity sweeps of the estimator components as the scaling parameter
  of the problem drops,
* adaptive runs with full per-step reporting, matched-cost uniform
  comparators, and position/current density studies.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .adaptive import AdaptiveConfig, AdaptiveRun, run_adaptive
from .assembly import BandedLU, load_vector, mass_matrix, stiffness_matrix, weighted_mass
from .estimators import EstimatorTotals, StepEstimators, initial_quantities, step_estimators
from .mesh import Mesh1D
from .problems import catalog, current_density, observable_grid, position_density
from .scheme import _system_matrix, advance, cn_step, initial_state
from .spline import FeFunction, SplineSpace
from .transfer import l2_error_merged, l2_error_vs_field, project_field
from . import _fastpath

# relative slack when matching times to step multiples
_ALIGN_RTOL = 1e-9
# node batch size for the fused kernel when per-node errors are wanted
_CHUNK = 256

STEP_COLUMNS = ("zeta_T0", "zeta_T1", "zeta_S0", "zeta_S1",
                "zeta_S2", "zeta_S3", "zeta_C", "zeta_D")


def _align(t: float, t0: float, k: float, scale: float) -> int:
    """Index n with t0 + n k = t, or raise if t is off the step lattice."""
    n = int(round((t - t0) / k))
    if abs(t0 + n * k - t) > _ALIGN_RTOL * max(1.0, scale):
        raise ValueError(f"time {t} is not a multiple of the step {k}")
    return n


def eoc(values, sizes) -> np.ndarray:
    """Observed convergence rates log(e_l / e_{l+1}) / log(N_{l+1} / N_l)."""
    v = np.asarray(values, dtype=float)
    n = np.asarray(sizes, dtype=float)
    if v.size < 2 or n.size != v.size:
        raise ValueError("need at least two rows with matching sizes")
    if not (np.all(np.isfinite(v)) and np.all(v > 0.0) and np.all(n > 0.0)):
        raise ValueError("rates need positive finite errors and sizes")
    if np.any(n[1:] == n[:-1]):
        raise ValueError("sizes must change between rows")
    return np.log(v[:-1] / v[1:]) / np.log(n[1:] / n[:-1])


class EocTable:
    """Ordered result rows plus the rate columns derived from them.

    ``eoc_by`` maps a value column to the size column its rates are taken
    against (element counts for space terms, inverse steps for time terms).
    """

    def __init__(self, name: str, eoc_by: dict | None = None):
        self.name = name
        self.rows: list[dict] = []
        self.eoc_by = dict(eoc_by or {})

    def add_row(self, row: dict) -> None:
        self.rows.append(dict(row))

    def column(self, key: str) -> np.ndarray:
        return np.asarray([r[key] for r in self.rows], dtype=float)

    def eoc_column(self, key: str) -> np.ndarray:
        sizes = self.column(self.eoc_by[key])
        rates = eoc(self.column(key), sizes)
        return np.concatenate([[np.nan], rates])

    def _rateable(self, key: str) -> bool:
        # identically-zero columns (inactive indicators) carry no rate
        if key not in self.eoc_by or len(self.rows) < 2:
            return False
        if key not in self.rows[0]:
            return False
        v = self.column(key)
        return bool(np.all(np.isfinite(v)) and np.all(v > 0.0))

    def fieldnames(self) -> list[str]:
        if not self.rows:
            return []
        names = []
        for key in self.rows[0]:
            names.append(key)
            if self._rateable(key):
                names.append(key + "_eoc")
        return names

    def flat_rows(self) -> list[dict]:
        out = [dict(r) for r in self.rows]
        for key in self.eoc_by:
            if self._rateable(key):
                col = self.eoc_column(key)
                for i, r in enumerate(out):
                    r[key + "_eoc"] = col[i]
        return out

    def write_csv(self, path: str) -> None:
        write_csv(path, self.fieldnames(), self.flat_rows())

    def format(self) -> str:
        names = self.fieldnames()
        rows = self.flat_rows()
        cells = [names] + [[_fmt_cell(r.get(k)) for k in names] for r in rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(names))]
        lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths))
                 for row in cells]
        return "\n".join([self.name] + lines)


def _fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        if v == int(v) and abs(v) < 1e12:
            return str(int(v))
        return f"{v:.4e}"
    return str(v)


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Parameters for one solver run, uniform or adaptive."""

    problem: str
    degree: int = 1
    M: int | None = None
    k: float | None = None
    k_inv: float | None = None
    eps: float | None = None
    quad: int | None = None
    panels: int = 1
    error: str = "auto"            # none | exact | reference | auto
    snapshot_times: tuple = ()
    keep_steps: bool = True
    # adaptive runs
    tol_space: float | None = None
    tol_time: float | None = None
    k0: float = 1e-3
    m0: int = 8
    fix_k: bool = False
    observable_mode: bool = False
    refine_fraction: float | None = None
    coarsen_fraction: float = 0.10
    t_end: float | None = None
    label: str = ""

    def make_problem(self):
        return catalog(self.problem, eps=self.eps)

    def resolve_k(self) -> float:
        if (self.k is None) == (self.k_inv is None):
            raise ValueError("give exactly one of k and k_inv")
        return self.k if self.k is not None else 1.0 / self.k_inv

    def make_space(self, prob) -> SplineSpace:
        if self.M is None:
            raise ValueError("uniform runs need an element count M")
        mesh = Mesh1D.uniform(prob.a, prob.b, self.M)
        return SplineSpace(mesh, self.degree, quad_order=self.quad)

    def adaptive_config(self) -> AdaptiveConfig:
        tol_t = self.tol_time
        if tol_t is None and self.fix_k:
            tol_t = math.inf       # fixed step, no time test
        if self.tol_space is None or tol_t is None:
            raise ValueError("adaptive runs need tol_space and tol_time")
        return AdaptiveConfig(
            tol_space=self.tol_space, tol_time=tol_t,
            refine_fraction=self.refine_fraction,
            coarsen_fraction=self.coarsen_fraction,
            fix_k=self.fix_k, observable_mode=self.observable_mode)


# ---------------------------------------------------------------------------
# uniform runs


@dataclass
class UniformResult:
    config: RunConfig
    M: int
    k: float
    n_steps: int
    dim: int
    totals: EstimatorTotals
    steps: np.ndarray              # (n_steps, len(STEP_COLUMNS)) or (0, .)
    error_kind: str
    error: float | None
    ei: float | None
    runtime: float
    u_final: FeFunction
    snapshots: list

    @property
    def k_inv(self) -> float:
        return 1.0 / self.k

    def summary_row(self) -> dict:
        t = self.totals
        row = {
            "M": self.M, "k_inv": self.k_inv, "dim": self.dim,
            "n_steps": self.n_steps, "zeta0_I": t.zeta0_I,
            "E_S0": t.E_S0, "E_S1": t.E_S1, "E_S2": t.E_S2, "E_S3": t.E_S3,
            "E_T0": t.E_T0, "E_T1": t.E_T1, "E_C": t.E_C, "E_D": t.E_D,
            "total": t.total, "tilde_T": t.tilde_T, "tilde_S": t.tilde_S,
        }
        if self.error_kind != "none":
            row["error"] = self.error
            row["ei"] = self.ei
        return row


def _resolve_error_kind(cfg: RunConfig, prob, reference) -> str:
    kind = cfg.error
    if kind == "auto":
        if prob.exact is not None:
            kind = "exact"
        elif reference is not None:
            kind = "reference"
        else:
            kind = "none"
    if kind == "exact" and prob.exact is None:
        raise ValueError(f"problem {prob.name} has no exact solution")
    if kind == "reference" and reference is None:
        raise ValueError("error='reference' needs a reference solution")
    if kind not in ("none", "exact", "reference"):
        raise ValueError(f"unknown error mode {kind!r}")
    return kind


def _node_error(kind, prob, reference, space, coeffs, t, panels):
    if kind == "exact":
        return l2_error_vs_field(space, coeffs, lambda x: prob.exact(x, t),
                                 panels=panels)
    return l2_error_merged(reference.at(t), FeFunction(space, coeffs))


def run_uniform(cfg: RunConfig, reference: "Reference | None" = None) -> UniformResult:
    """Fixed grid, fixed step, full estimator bookkeeping.

    The error column is the maximum nodal L2 distance (initial node
    included) to the exact solution or to a stored reference; the
    effectivity index divides the total estimator by it.
    """
    t_start = time.perf_counter()
    prob = cfg.make_problem()
    duration = prob.T - prob.t0
    k = cfg.resolve_k()
    n_steps = _align(prob.T, prob.t0, k, duration)
    if n_steps < 1:
        raise ValueError("step size exceeds the time interval")
    space = cfg.make_space(prob)
    kind = _resolve_error_kind(cfg, prob, reference)

    snap_ids = {_align(t, prob.t0, k, duration): float(t)
                for t in cfg.snapshot_times}
    if any(n < 0 or n > n_steps for n in snap_ids):
        raise ValueError("snapshot time outside the run interval")

    u0 = project_field(space, prob.u0, panels=cfg.panels)
    zeta0_I, eta0 = initial_quantities(prob, FeFunction(space, u0),
                                       panels=cfg.panels)

    err = None
    if kind != "none":
        err = _node_error(kind, prob, reference, space, u0, prob.t0,
                          cfg.panels)
    snapshots = []
    if 0 in snap_ids:
        snapshots.append((snap_ids[0], FeFunction(space, u0.copy())))

    if _fastpath.eligible(prob, space):
        totals, steps, err, snapshots2, uf = _run_uniform_fast(
            prob, space, u0, k, n_steps, kind, reference, snap_ids,
            zeta0_I, eta0, err, cfg)
        snapshots.extend(snapshots2)
        u_final = FeFunction(space, uf)
    else:
        totals, steps, err, snapshots2, u_final = _run_uniform_general(
            prob, space, u0, k, n_steps, kind, reference, snap_ids,
            zeta0_I, eta0, err, cfg)
        snapshots.extend(snapshots2)

    ei = None
    if kind != "none":
        ei = totals.total / err if err > 0.0 else math.inf
    return UniformResult(
        config=cfg, M=space.mesh.n_elements, k=k, n_steps=n_steps,
        dim=space.dim, totals=totals, steps=steps, error_kind=kind,
        error=err, ei=ei, runtime=time.perf_counter() - t_start,
        u_final=u_final, snapshots=snapshots)


def _steps_from_stats(stats: np.ndarray, k: float) -> np.ndarray:
    out = np.zeros((stats.shape[0], len(STEP_COLUMNS)))
    out[:, 0] = k**2 / 8.0 * (stats[:, 2] + stats[:, 1])
    out[:, 1] = k**3 / 12.0 * stats[:, 3]
    out[:, 2] = stats[:, 0]
    out[:, 3] = k**2 / 4.0 * stats[:, 1]
    out[:, 5] = stats[:, 4]
    return out


def _run_uniform_fast(prob, space, u0, k, n_steps, kind, reference, snap_ids,
                      zeta0_I, eta0, err, cfg):
    need_nodes = kind != "none"
    snapshots = []
    if not need_nodes:
        want = sorted(n for n in snap_ids if n > 0)
        stats, snaps, uf, _ = _fastpath.run(prob, space, u0, k, n_steps,
                                            snap_steps=want)
        for j, n in enumerate(want):
            snapshots.append((snap_ids[n], FeFunction(space, snaps[j].copy())))
    else:
        # the kernel is restarted in fixed blocks so every node can be
        # compared without holding the whole trajectory
        stats_parts = []
        u = u0
        done = 0
        while done < n_steps:
            c = min(_CHUNK, n_steps - done)
            st, snaps, u, _ = _fastpath.run(prob, space, u, k, c,
                                            snap_steps=range(1, c + 1))
            stats_parts.append(st)
            for j in range(c):
                n = done + j + 1
                t = prob.t0 + n * k
                e = _node_error(kind, prob, reference, space, snaps[j], t,
                                cfg.panels)
                if e > err:
                    err = e
                if n in snap_ids:
                    snapshots.append((snap_ids[n],
                                      FeFunction(space, snaps[j].copy())))
            done += c
        stats = np.vstack(stats_parts)
        uf = u
    totals = _fastpath.totals_from_stats(stats, k, zeta0_I, eta0)
    steps = (_steps_from_stats(stats, k)
             if cfg.keep_steps else np.zeros((0, len(STEP_COLUMNS))))
    return totals, steps, err, snapshots, uf


def _run_uniform_general(prob, space, u0, k, n_steps, kind, reference,
                         snap_ids, zeta0_I, eta0, err, cfg):
    totals = EstimatorTotals.start(zeta0_I=zeta0_I, eta_u0=eta0)
    state = initial_state(prob, space, k, panels=cfg.panels)
    state.eta_prev = eta0
    cache: dict = {}
    rows = []
    snapshots = []
    for n in range(1, n_steps + 1):
        result = cn_step(state, space, prob, solver_cache=cache)
        est = step_estimators(state, result, prob)
        totals.add(est)
        if cfg.keep_steps:
            rows.append([est.zeta_T0, est.zeta_T1, est.zeta_S0, est.zeta_S1,
                         est.zeta_S2, est.zeta_S3, est.zeta_C, est.zeta_D])
        t = prob.t0 + n * k
        if kind != "none":
            e = _node_error(kind, prob, reference, space,
                            result.u_new.coeffs, t, cfg.panels)
            if e > err:
                err = e
        if n in snap_ids:
            snapshots.append((snap_ids[n],
                              FeFunction(space, result.u_new.coeffs.copy())))
        state = advance(state, result, eta_new=est.eta_u)
    steps = (np.asarray(rows) if rows
             else np.zeros((0, len(STEP_COLUMNS))))
    return totals, steps, err, snapshots, state.u_prev


# ---------------------------------------------------------------------------
# reference solutions


@dataclass
class Reference:
    """Stored nodal snapshots of a fine fixed-grid run."""

    problem: str
    space: SplineSpace
    k: float
    t0: float
    times: np.ndarray
    coeffs: np.ndarray             # (len(times), dim) complex

    def at(self, t: float) -> FeFunction:
        idx = np.searchsorted(self.times, t)
        for j in (idx - 1, idx):
            if 0 <= j < len(self.times) and \
                    abs(self.times[j] - t) <= _ALIGN_RTOL * max(1.0, abs(t) + 1.0):
                return FeFunction(self.space, self.coeffs[j])
        raise KeyError(f"no reference snapshot at t={t}")

    def error_vs_exact(self, prob, panels: int = 1) -> float:
        """Largest nodal distance to the exact solution over the snapshots."""
        if prob.exact is None:
            raise ValueError(f"problem {prob.name} has no exact solution")
        errs = [l2_error_vs_field(self.space, c,
                                  lambda x, tt=t: prob.exact(x, tt),
                                  panels=panels)
                for t, c in zip(self.times, self.coeffs)]
        return float(max(errs))

    def save(self, path: str) -> None:
        mesh = self.space.mesh
        if not mesh.is_uniform():
            raise ValueError("only uniform reference grids are stored")
        np.savez(path, problem=self.problem, a=mesh.a, b=mesh.b,
                 M=mesh.n_elements, degree=self.space.degree,
                 k=self.k, t0=self.t0, times=self.times, coeffs=self.coeffs)

    @classmethod
    def load(cls, path: str) -> "Reference":
        d = np.load(path)
        mesh = Mesh1D.uniform(float(d["a"]), float(d["b"]), int(d["M"]))
        space = SplineSpace(mesh, int(d["degree"]))
        return cls(problem=str(d["problem"]), space=space, k=float(d["k"]),
                   t0=float(d["t0"]), times=d["times"], coeffs=d["coeffs"])


def _bare_uniform_solve(prob, space, k, n_steps, snap_steps=(), panels=1):
    """Fixed-space scheme without any estimator work.

    Returns (snaps, u_final) where snaps[j] is the coefficient vector
    after step snap_steps[j].
    """
    want = sorted(snap_steps)
    if _fastpath.eligible(prob, space):
        _, snaps, uf, _ = _fastpath.run(prob, space,
                                        project_field(space, prob.u0,
                                                      panels=panels),
                                        k, n_steps, snap_steps=want)
        return snaps, uf
    u = project_field(space, prob.u0, panels=panels)
    M = mass_matrix(space)
    S = stiffness_matrix(space)
    alpha = prob.alpha
    g_const = prob.g_const
    alu = None
    if g_const is not None or prob.g is None:
        alu = BandedLU(_system_matrix(space, k, alpha, None, g_const))
    snaps = np.empty((len(want), space.dim), dtype=np.complex128)
    pos = 0
    for n in range(1, n_steps + 1):
        tm = prob.t0 + (n - 0.5) * k
        mu = M.matvec(u)
        rhs = mu / k - (0.5j * alpha) * S.matvec(u)
        if g_const is not None:
            rhs = rhs - (0.5j * g_const) * mu
        elif prob.g is not None:
            Xq, _ = space.quad_points()
            b = weighted_mass(space, np.asarray(prob.g(Xq, tm)))
            rhs = rhs - 0.5j * b.matvec(u)
            alu = BandedLU(_system_matrix(space, k, alpha, b, None))
        if prob.f is not None:
            rhs = rhs + load_vector(space, lambda x: prob.f(x, tm))
        u = alu.solve(rhs)
        if pos < len(want) and want[pos] == n:
            snaps[pos] = u
            pos += 1
    return snaps, u


def make_reference(prob, node_times, k: float | None = None,
                   k_inv: float | None = None, M: int = 480,
                   degree: int = 4, panels: int = 1,
                   include_t0: bool = True) -> Reference:
    """Fine fixed-grid solve storing snapshots at the requested times.

    Every requested time must sit on the reference step lattice, which in
    practice means the coarse steps are integer multiples of k.
    """
    if (k is None) == (k_inv is None):
        raise ValueError("give exactly one of k and k_inv")
    if k is None:
        k = 1.0 / k_inv
    duration = prob.T - prob.t0
    n_steps = _align(prob.T, prob.t0, k, duration)
    ids = sorted({_align(t, prob.t0, k, duration) for t in node_times})
    if ids and (ids[0] < 0 or ids[-1] > n_steps):
        raise ValueError("requested node outside the reference interval")
    if include_t0 and (not ids or ids[0] != 0):
        ids = [0] + ids
    space = SplineSpace(Mesh1D.uniform(prob.a, prob.b, M), degree)
    inner = [n for n in ids if n > 0]
    snaps, _ = _bare_uniform_solve(prob, space, k, n_steps,
                                   snap_steps=inner, panels=panels)
    coeffs = np.empty((len(ids), space.dim), dtype=np.complex128)
    row = 0
    if ids and ids[0] == 0:
        coeffs[0] = project_field(space, prob.u0, panels=panels)
        row = 1
    coeffs[row:] = snaps
    times = np.asarray([prob.t0 + n * k for n in ids])
    return Reference(problem=prob.name, space=space, k=k, t0=prob.t0,
                     times=times, coeffs=coeffs)


# ---------------------------------------------------------------------------
# convergence table presets

# for quadratic splines the steps and meshes are balanced as k ~ h^{3/2};
# these are the canonical rounded pairs used by the studies
PAIRS_QUADRATIC = ((80, 75), (160, 120), (320, 185),
                   (640, 295), (1280, 470), (2560, 750))

TABLE_PRESETS = {
    "exp1a": dict(problem="exp1a", degree=1, error="reference",
                  M_rows=(640, 1280, 2560, 5120, 10240), desk_rows=3,
                  reference=dict(k_inv=10240, M=480, degree=4),
                  full_reference=dict(k_inv=40960, M=480, degree=5)),
    "exp1b": dict(problem="exp1b", degree=2, error="none",
                  pairs=PAIRS_QUADRATIC, desk_rows=3),
    "exp2": dict(problem="exp2", degree=2, error="exact",
                 pairs=PAIRS_QUADRATIC, desk_rows=3),
}

_TABLE_EOC = {"E_S0": "M", "E_S1": "M", "E_S2": "M", "E_S3": "M",
              "E_T0": "k_inv", "E_T1": "k_inv", "error": "k_inv",
              "total": "k_inv"}


def pairs_balanced(k_invs, degree: int, length: float) -> list:
    """Derive element counts from steps by k ~ h^{(degree+1)/2}.

    Rounds to the nearest integer count; the realized pair is what the
    caller gets back, so log it when it matters.
    """
    expo = 2.0 / (degree + 1)
    return [(ki, max(2, round(length * ki ** expo))) for ki in k_invs]


def run_table(name: str, full: bool = False, rows: int | None = None,
              error: str | None = None, out_dir: str | None = None,
              progress=None) -> EocTable:
    """Run one of the preset uniform convergence studies."""
    preset = TABLE_PRESETS[name]
    prob = catalog(preset["problem"])
    length = prob.b - prob.a
    if "pairs" in preset:
        pairs = list(preset["pairs"])
    else:
        pairs = [(m / length, m) for m in preset["M_rows"]]
    n_rows = rows if rows is not None else (len(pairs) if full
                                            else preset["desk_rows"])
    pairs = pairs[:n_rows]
    err_mode = error if error is not None else preset["error"]

    reference = None
    if err_mode == "reference":
        spec = preset["full_reference"] if full else preset["reference"]
        nodes = set()
        for k_inv, _ in pairs:
            k = 1.0 / k_inv
            n = _align(prob.T, prob.t0, k, prob.T - prob.t0)
            nodes.update(prob.t0 + j * k for j in range(n + 1))
        reference = make_reference(prob, sorted(nodes), k_inv=spec["k_inv"],
                                   M=spec["M"], degree=spec["degree"])

    table = EocTable(name, eoc_by=_TABLE_EOC)
    for k_inv, m in pairs:
        cfg = RunConfig(problem=preset["problem"], degree=preset["degree"],
                        M=m, k_inv=k_inv, error=err_mode)
        res = run_uniform(cfg, reference=reference)
        table.add_row(res.summary_row())
        if progress is not None:
            progress(f"{name}: M={m} k_inv={k_inv} done "
                     f"({res.runtime:.1f}s)")
    if out_dir is not None:
        write_table_outputs(table, out_dir)
    return table


# ---------------------------------------------------------------------------
# sensitivity sweeps


def run_sensitivity(h_rows=(1e-2, 1e-3, 5e-4, 1e-4), eps: float = 0.005,
                    degree: int = 1, out_dir: str | None = None,
                    progress=None) -> EocTable:
    """Estimator components along h = k as the scaling parameter is fixed.

    Uses the constant-well wave-packet problem; each row halves nothing in
    particular, the point is the decay of each component as h = k drops.
    """
    prob = catalog("sensitivity", eps=eps)
    length = prob.b - prob.a
    table = EocTable(f"sensitivity eps={eps:g}")
    for h in h_rows:
        m = int(round(length / h))
        if abs(m * h - length) > _ALIGN_RTOL * length:
            raise ValueError(f"h={h} does not tile the interval")
        cfg = RunConfig(problem="sensitivity", degree=degree, M=m, k=h,
                        eps=eps, error="none", keep_steps=False)
        res = run_uniform(cfg)
        t = res.totals
        table.add_row({"h": h, "M": m, "dim": res.dim,
                       "E_S0": t.E_S0, "E_S1": t.E_S1, "E_S3": t.E_S3,
                       "E_T0": t.E_T0, "E_T1": t.E_T1, "total": t.total})
        if progress is not None:
            progress(f"sensitivity: h={h:g} done ({res.runtime:.1f}s)")
    if out_dir is not None:
        write_table_outputs(table, out_dir)
    return table


def run_sensitivity_grid(mode: str, eps: float = 1e-3, degree: int = 3,
                         M_rows=(600, 1500, 3000, 4500, 6000, 7500, 9000),
                         k_fixed: float = 5e-5,
                         k_rows=(1e-3, 5e-4, 2.5e-4, 1e-4, 5e-5,
                                 2.5e-5, 1e-5, 5e-6, 2.5e-6),
                         M_fixed: int = 6000,
                         out_dir: str | None = None,
                         progress=None) -> EocTable:
    """One-axis sweeps: estimators vs M at fixed k, or vs k at fixed M."""
    if mode not in ("space", "time"):
        raise ValueError("mode must be 'space' or 'time'")
    rows = [(m, k_fixed) for m in M_rows] if mode == "space" \
        else [(M_fixed, k) for k in k_rows]
    table = EocTable(f"sensitivity-{mode} eps={eps:g}")
    for m, k in rows:
        cfg = RunConfig(problem="sensitivity", degree=degree, M=m, k=k,
                        eps=eps, error="none", keep_steps=False)
        res = run_uniform(cfg)
        t = res.totals
        table.add_row({"M": m, "k": k,
                       "E_S0": t.E_S0, "E_S1": t.E_S1, "E_S3": t.E_S3,
                       "E_T0": t.E_T0, "E_T1": t.E_T1, "total": t.total})
        if progress is not None:
            progress(f"sensitivity-{mode}: M={m} k={k:g} done "
                     f"({res.runtime:.1f}s)")
    if out_dir is not None:
        write_table_outputs(table, out_dir)
    return table


# ---------------------------------------------------------------------------
# adaptive experiments


@dataclass
class AdaptiveReport:
    config: RunConfig
    run: AdaptiveRun
    series: list                   # per accepted step dicts
    comparison: dict | None
    runtime: float

    @property
    def totals(self) -> EstimatorTotals:
        return self.run.totals


def _replay_series(run: AdaptiveRun) -> list:
    """Cumulative estimator history over the accepted steps."""
    acc = EstimatorTotals.start(zeta0_I=run.zeta0_I, eta_u0=run.eta_u0)
    rows = []
    for rec in run.records:
        acc.add(rec.est)
        e = rec.est
        rows.append({
            "n": rec.n, "t": rec.t, "k": rec.k, "dim": rec.dim,
            "n_elements": rec.n_elements,
            "time_rejections": rec.time_rejections,
            "space_adaptations": rec.space_adaptations,
            "zeta_T0": e.zeta_T0, "zeta_T1": e.zeta_T1,
            "zeta_S0": e.zeta_S0, "zeta_S1": e.zeta_S1,
            "zeta_S2": e.zeta_S2, "zeta_S3": e.zeta_S3,
            "zeta_C": e.zeta_C, "zeta_D": e.zeta_D,
            "zeta_T_eff": rec.zeta_T_eff, "zeta_S_eff": rec.zeta_S_eff,
            "tilde_T": acc.tilde_T, "tilde_S": acc.tilde_S,
            "total": acc.total,
        })
    return rows


def matched_uniform_config(cfg: RunConfig, prob, run: AdaptiveRun) -> RunConfig:
    """Uniform run spending the same time-averaged degrees of freedom.

    The comparator keeps the adaptive run's average step count and matches
    the space dimension to the run's time-weighted dimension.
    """
    duration = (cfg.t_end if cfg.t_end is not None else prob.T) - prob.t0
    dim_u = max(cfg.degree, int(round(run.dof_weighted / duration)))
    m_u = max(2, dim_u - cfg.degree + 2)
    k_u = duration / run.n_steps
    return RunConfig(problem=cfg.problem, degree=cfg.degree, M=m_u, k=k_u,
                     eps=cfg.eps, error="none", keep_steps=False)


def run_adaptive_experiment(cfg: RunConfig, compare_uniform: bool = False,
                            out_dir: str | None = None) -> AdaptiveReport:
    """Adaptive run with per-step reporting.

    With compare_uniform=True a uniform run at the same time-averaged cost
    is executed and its total estimator reported next to the adaptive one.
    """
    t_start = time.perf_counter()
    prob = cfg.make_problem()
    acfg = cfg.adaptive_config()
    run = run_adaptive(prob, acfg, degree=cfg.degree, k0=cfg.k0, m0=cfg.m0,
                       panels=cfg.panels, snapshot_times=cfg.snapshot_times,
                       t_end=cfg.t_end)
    series = _replay_series(run)
    comparison = None
    if compare_uniform:
        ucfg = matched_uniform_config(cfg, prob, run)
        ures = run_uniform(ucfg)
        comparison = {
            "adaptive_total": run.totals.total,
            "adaptive_dof": run.total_dof,
            "adaptive_steps": run.n_steps,
            "uniform_total": ures.totals.total,
            "uniform_dof": math.floor(ures.n_steps * ures.k * ures.dim) + 1,
            "uniform_M": ures.M,
            "uniform_k": ures.k,
        }
    report = AdaptiveReport(config=cfg, run=run, series=series,
                            comparison=comparison,
                            runtime=time.perf_counter() - t_start)
    if out_dir is not None:
        write_adaptive_outputs(report, out_dir)
    return report


# ---------------------------------------------------------------------------
# observables


def density_distance(ua: FeFunction, ub: FeFunction,
                     n_panels: int = 4096) -> tuple:
    """L2 distances of position and current densities of two states.

    Uses two-point Gauss quadrature on a fixed uniform panel grid so the
    result does not depend on either mesh.
    """
    a, b = ua.space.mesh.a, ua.space.mesh.b
    if abs(ub.space.mesh.a - a) > 1e-12 or abs(ub.space.mesh.b - b) > 1e-12:
        raise ValueError("states live on different intervals")
    edges = np.linspace(a, b, n_panels + 1)
    hw = 0.5 * (edges[1] - edges[0])
    mid = 0.5 * (edges[:-1] + edges[1:])
    off = hw / math.sqrt(3.0)
    x = np.concatenate([mid - off, mid + off])
    w = np.full(x.shape, hw)

    def dens(u):
        v = u.space.evaluate(u.coeffs, x)
        d = u.space.evaluate(u.coeffs, x, deriv=1)
        return np.abs(v) ** 2, np.imag(np.conj(v) * d)

    na, ja = dens(ua)
    nb, jb = dens(ub)
    dist_n = math.sqrt(float(np.sum(w * (na - nb) ** 2)))
    dist_j = math.sqrt(float(np.sum(w * (ja - jb) ** 2)))
    return dist_n, dist_j


@dataclass
class ObservableReport:
    config: RunConfig
    run: AdaptiveRun
    reference: Reference
    rows: list                     # per snapshot-time comparison dicts
    uniform_M: int
    uniform_dim: int
    runtime: float


def run_observable_study(cfg: RunConfig, times,
                         reference_M: int = 30000,
                         reference_k: float | None = None,
                         reference_degree: int = 1,
                         out_dir: str | None = None) -> ObservableReport:
    """Space-adaptive run aimed at position and current densities.

    The run keeps the step fixed and adapts the mesh only, with the
    resolution-critical indicators left unweighted. A fine fixed-grid
    reference and a uniform run at the adaptive run's time-averaged
    dimension (same step) are evaluated at the same snapshot times; the
    report rows hold the density distances of both to the reference.
    """
    t_start = time.perf_counter()
    prob = cfg.make_problem()
    times = tuple(times)
    if cfg.k is None:
        raise ValueError("observable studies need an explicit fixed step k")
    k = cfg.k
    acfg = cfg.adaptive_config()
    if not (acfg.fix_k and acfg.observable_mode):
        raise ValueError("observable studies run with fix_k and "
                         "observable_mode set")
    run = run_adaptive(prob, acfg, degree=cfg.degree, k0=k, m0=cfg.m0,
                       panels=cfg.panels, snapshot_times=times,
                       t_end=cfg.t_end)

    if reference_k is None:
        reference_k = k / 2.0
    reference = make_reference(prob, times, k=reference_k, M=reference_M,
                               degree=reference_degree, include_t0=False)

    duration = (cfg.t_end if cfg.t_end is not None else prob.T) - prob.t0
    dim_u = max(cfg.degree, int(round(run.dof_weighted / duration)))
    m_u = max(2, dim_u - cfg.degree + 2)
    uspace = SplineSpace(Mesh1D.uniform(prob.a, prob.b, m_u), cfg.degree)
    n_steps = _align(prob.t0 + duration, prob.t0, k, duration)
    ids = [_align(t, prob.t0, k, duration) for t in times]
    usnaps, _ = _bare_uniform_solve(prob, uspace, k, n_steps,
                                    snap_steps=[n for n in ids if n > 0],
                                    panels=cfg.panels)

    adaptive_at = {round(t_req, 12): u for t_req, _, u in run.snapshots}
    rows = []
    upos = 0
    for t, n in zip(times, ids):
        uref = reference.at(t)
        if n == 0:
            ucmp = FeFunction(uspace, project_field(uspace, prob.u0,
                                                    panels=cfg.panels))
        else:
            ucmp = FeFunction(uspace, usnaps[upos])
            upos += 1
        uad = adaptive_at[round(t, 12)]
        dn_a, dj_a = density_distance(uad, uref)
        dn_u, dj_u = density_distance(ucmp, uref)
        rows.append({"t": t, "dim_adaptive": uad.space.dim,
                     "dist_N_adaptive": dn_a, "dist_J_adaptive": dj_a,
                     "dist_N_uniform": dn_u, "dist_J_uniform": dj_u})
    report = ObservableReport(config=cfg, run=run, reference=reference,
                              rows=rows, uniform_M=m_u, uniform_dim=uspace.dim,
                              runtime=time.perf_counter() - t_start)
    if out_dir is not None:
        write_observable_outputs(report, out_dir)
    return report


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.12e}"
    return str(v)


def write_csv(path: str, fieldnames, rows) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    lines = [",".join(fieldnames)]
    for r in rows:
        cells = []
        for key in fieldnames:
            v = r.get(key, "")
            if isinstance(v, float) and math.isnan(v):
                cells.append("")
            else:
                cells.append(_fmt(v))
        lines.append(",".join(cells))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_plot_desc(path: str, title: str, xlabel: str, ylabel: str,
                    series, logx: bool = False, logy: bool = False) -> None:
    """Plain-text plot recipe: what to draw from which CSV columns."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    lines = [f"title: {title}", f"x: {xlabel}", f"y: {ylabel}"]
    if logx:
        lines.append("xscale: log")
    if logy:
        lines.append("yscale: log")
    for label, csvfile, xcol, ycol in series:
        lines.append(f"series: {label} <- {csvfile}[{xcol},{ycol}]")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_uniform_outputs(res: UniformResult, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    if res.steps.size:
        # steps.csv: one row per step with the raw indicator values
        t0 = res.config.make_problem().t0
        rows = [dict({"n": i + 1, "t": t0 + (i + 1) * res.k,
                      "k": res.k, "dim": res.dim},
                     **{c: res.steps[i, j]
                        for j, c in enumerate(STEP_COLUMNS)})
                for i in range(res.steps.shape[0])]
        write_csv(os.path.join(out_dir, "steps.csv"),
                  ["n", "t", "k", "dim", *STEP_COLUMNS], rows)
    write_csv(os.path.join(out_dir, "summary.csv"),
              list(res.summary_row()), [res.summary_row()])
    write_plot_desc(os.path.join(out_dir, "plot_indicators.txt"),
                    "per-step indicators", "t", "indicator value",
                    [(c, "steps.csv", "t", c) for c in STEP_COLUMNS],
                    logy=True)


def write_table_outputs(table: EocTable, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    table.write_csv(os.path.join(out_dir, "eoc.csv"))
    names = table.fieldnames()
    size = "M" if "M" in names else ("k_inv" if "k_inv" in names else names[0])
    ycols = [c for c in ("E_S0", "E_S1", "E_S2", "E_S3", "E_T0", "E_T1",
                         "total", "error") if c in names]
    write_plot_desc(os.path.join(out_dir, "plot_convergence.txt"),
                    table.name, size, "estimator",
                    [(c, "eoc.csv", size, c) for c in ycols],
                    logx=True, logy=True)


def write_adaptive_outputs(report: AdaptiveReport, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    if report.series:
        write_csv(os.path.join(out_dir, "steps.csv"),
                  list(report.series[0]), report.series)
    run = report.run
    summary = {
        "n_steps": run.n_steps, "total_dof": run.total_dof,
        "initial_dim": run.initial_dim, "zeta0_I": run.zeta0_I,
        **run.totals.as_dict(),
    }
    if report.comparison:
        summary.update({"cmp_" + k: v for k, v in report.comparison.items()})
    write_csv(os.path.join(out_dir, "summary.csv"),
              list(summary), [summary])
    ev_lines = [f"{n}\t{kind}\t{_fmt(val)}" for n, kind, val in run.events]
    with open(os.path.join(out_dir, "events.log"), "w",
              newline="\n") as fh:
        fh.write("\n".join(ev_lines) + ("\n" if ev_lines else ""))
    write_plot_desc(os.path.join(out_dir, "plot_estimators.txt"),
                    "accumulated estimators", "t", "estimator",
                    [("tilde_T", "steps.csv", "t", "tilde_T"),
                     ("tilde_S", "steps.csv", "t", "tilde_S"),
                     ("total", "steps.csv", "t", "total")], logy=True)
    write_plot_desc(os.path.join(out_dir, "plot_trajectory.txt"),
                    "step size and dimension", "t", "value",
                    [("k", "steps.csv", "t", "k"),
                     ("dim", "steps.csv", "t", "dim")], logy=True)


def write_observable_outputs(report: ObservableReport, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_csv(os.path.join(out_dir, "distances.csv"),
              list(report.rows[0]) if report.rows else [], report.rows)
    for t, _t_node, u in report.run.snapshots:
        grid = observable_grid(u)
        n = position_density(u, grid)
        j = current_density(u, grid)
        uref = report.reference.at(t)
        nref = position_density(uref, grid)
        jref = current_density(uref, grid)
        rows = [{"x": grid[i], "N": n[i], "J": j[i],
                 "N_ref": nref[i], "J_ref": jref[i]}
                for i in range(len(grid))]
        tag = f"{t:.6f}".rstrip("0").rstrip(".").replace(".", "p")
        write_csv(os.path.join(out_dir, f"observables_t{tag}.csv"),
                  ["x", "N", "J", "N_ref", "J_ref"], rows)
        write_plot_desc(os.path.join(out_dir, f"plot_observables_t{tag}.txt"),
                        f"densities at t={t:g}", "x", "density",
                        [("N", f"observables_t{tag}.csv", "x", "N"),
                         ("N_ref", f"observables_t{tag}.csv", "x", "N_ref"),
                         ("J", f"observables_t{tag}.csv", "x", "J"),
                         ("J_ref", f"observables_t{tag}.csv", "x", "J_ref")])
    steps_rows = _replay_series(report.run)
    if steps_rows:
        write_csv(os.path.join(out_dir, "steps.csv"),
                  list(steps_rows[0]), steps_rows)

"""Command line front end.

Every subcommand accepts --config pointing at a TOML or JSON file whose
keys are the long option names (dashes or underscores); explicit flags
override file values, which override built-in defaults. All numeric
output goes to stdout, progress notes to stderr, and the CSV/plot files
land under --out when given.
"""
from __future__ import annotations

import argparse
import json
import sys

from .harness import (
    RunConfig,
    TABLE_PRESETS,
    make_reference,
    run_adaptive_experiment,
    run_observable_study,
    run_sensitivity,
    run_sensitivity_grid,
    run_table,
    run_uniform,
    write_uniform_outputs,
)
from .problems import catalog


def _load_config(path: str) -> dict:
    if path.endswith(".toml"):
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    else:
        with open(path) as fh:
            raw = json.load(fh)
    return {str(k).replace("-", "_"): v for k, v in raw.items()}


def _floats(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(p) for p in str(text).split(",") if p.strip())


class _Options:
    """Merged view: explicit flag > config file > default."""

    def __init__(self, args: argparse.Namespace):
        self.args = vars(args)
        self.cfg = _load_config(args.config) if args.config else {}
        known = set(self.args)
        stray = sorted(set(self.cfg) - known)
        if stray:
            raise SystemExit(f"unknown config keys: {', '.join(stray)}")

    def get(self, key: str, default=None):
        v = self.args.get(key)
        if v is not None:
            return v
        return self.cfg.get(key, default)

    def require(self, key: str):
        v = self.get(key)
        if v is None:
            raise SystemExit(f"missing required option --{key.replace('_', '-')}")
        return v


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _print_mapping(rows) -> None:
    for key, v in rows:
        print(f"{key:>18s}  {v:.6e}" if isinstance(v, float) else
              f"{key:>18s}  {v}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON file with option defaults")
    p.add_argument("--out", help="directory for CSV and plot-description files")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cnschro")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="single uniform-grid run")
    _add_common(p)
    p.add_argument("--problem")
    p.add_argument("--degree", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--k", type=float)
    p.add_argument("--k-inv", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--quad", type=int)
    p.add_argument("--panels", type=int)
    p.add_argument("--error", choices=("none", "exact", "reference", "auto"))
    p.add_argument("--snapshots", help="comma separated times to store")
    p.add_argument("--label")

    p = sub.add_parser("eoc", help="uniform convergence table")
    _add_common(p)
    p.add_argument("--table", choices=sorted(TABLE_PRESETS))
    p.add_argument("--rows", type=int)
    p.add_argument("--full", action=argparse.BooleanOptionalAction)
    p.add_argument("--error", choices=("none", "exact", "reference", "auto"))

    p = sub.add_parser("adapt", help="time-space adaptive run")
    _add_common(p)
    p.add_argument("--problem")
    p.add_argument("--degree", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--tol-space", type=float)
    p.add_argument("--tol-time", type=float)
    p.add_argument("--k0", type=float)
    p.add_argument("--m0", type=int)
    p.add_argument("--t-end", type=float)
    p.add_argument("--fix-k", action=argparse.BooleanOptionalAction)
    p.add_argument("--observable-mode", action=argparse.BooleanOptionalAction)
    p.add_argument("--refine-fraction", type=float)
    p.add_argument("--coarsen-fraction", type=float)
    p.add_argument("--compare-uniform", action=argparse.BooleanOptionalAction)

    p = sub.add_parser("sensitivity", help="estimator scaling sweeps")
    _add_common(p)
    p.add_argument("--grid", choices=("kh", "space", "time"))
    p.add_argument("--eps", type=float)
    p.add_argument("--degree", type=int)
    p.add_argument("--h-rows", help="comma separated h = k values (kh grid)")
    p.add_argument("--m-rows", help="comma separated element counts (space grid)")
    p.add_argument("--k-rows", help="comma separated steps (time grid)")
    p.add_argument("--k-fixed", type=float)
    p.add_argument("--m-fixed", type=int)

    p = sub.add_parser("observables", help="density-aimed space-adaptive study")
    _add_common(p)
    p.add_argument("--problem")
    p.add_argument("--degree", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--k", type=float)
    p.add_argument("--tol-space", type=float)
    p.add_argument("--times", help="comma separated comparison times")
    p.add_argument("--t-end", type=float)
    p.add_argument("--m0", type=int)
    p.add_argument("--reference-m", type=int)
    p.add_argument("--reference-k", type=float)
    p.add_argument("--reference-degree", type=int)

    p = sub.add_parser("reference", help="store a fine fixed-grid trajectory")
    _add_common(p)
    p.add_argument("--problem")
    p.add_argument("--eps", type=float)
    p.add_argument("--M", type=int)
    p.add_argument("--degree", type=int)
    p.add_argument("--k", type=float)
    p.add_argument("--k-inv", type=float)
    p.add_argument("--times", help="comma separated snapshot times")
    p.add_argument("--node-k-inv", type=float,
                   help="store every node of this step lattice")
    p.add_argument("--file", help="output .npz path")
    return ap


def _cmd_run(opt: _Options) -> None:
    snaps = opt.get("snapshots")
    cfg = RunConfig(
        problem=opt.require("problem"),
        degree=int(opt.get("degree", 1)),
        M=int(opt.require("M")),
        k=opt.get("k"), k_inv=opt.get("k_inv"),
        eps=opt.get("eps"), quad=opt.get("quad"),
        panels=int(opt.get("panels", 1)),
        error=opt.get("error", "auto"),
        snapshot_times=_floats(snaps) if snaps else (),
        label=opt.get("label", ""))
    res = run_uniform(cfg)
    out = opt.get("out")
    if out:
        write_uniform_outputs(res, out)
    _print_mapping(res.summary_row().items())
    _progress(f"run finished in {res.runtime:.1f}s")


def _cmd_eoc(opt: _Options) -> None:
    tbl = run_table(opt.require("table"), full=bool(opt.get("full", False)),
                    rows=opt.get("rows"), error=opt.get("error"),
                    out_dir=opt.get("out"), progress=_progress)
    print(tbl.format())


def _cmd_adapt(opt: _Options) -> None:
    cfg = RunConfig(
        problem=opt.require("problem"),
        degree=int(opt.get("degree", 1)),
        eps=opt.get("eps"),
        tol_space=float(opt.require("tol_space")),
        tol_time=opt.get("tol_time"),
        k0=float(opt.get("k0", 1e-3)), m0=int(opt.get("m0", 8)),
        fix_k=bool(opt.get("fix_k", False)),
        observable_mode=bool(opt.get("observable_mode", False)),
        refine_fraction=opt.get("refine_fraction"),
        coarsen_fraction=float(opt.get("coarsen_fraction", 0.10)),
        t_end=opt.get("t_end"))
    rep = run_adaptive_experiment(
        cfg, compare_uniform=bool(opt.get("compare_uniform", False)),
        out_dir=opt.get("out"))
    run = rep.run
    t = run.totals
    _print_mapping([
        ("steps", run.n_steps), ("total_dof", run.total_dof),
        ("final_dim", run.records[-1].dim if run.records else run.initial_dim),
        ("zeta0_I", t.zeta0_I), ("total", t.total),
        ("tilde_T", t.tilde_T), ("tilde_S", t.tilde_S),
    ])
    if rep.comparison:
        _print_mapping(sorted(rep.comparison.items()))
    _progress(f"adaptive run finished in {rep.runtime:.1f}s")


def _cmd_sensitivity(opt: _Options) -> None:
    grid = opt.get("grid", "kh")
    eps = opt.get("eps")
    degree = opt.get("degree")
    if grid == "kh":
        kw = {}
        if eps is not None:
            kw["eps"] = eps
        if degree is not None:
            kw["degree"] = int(degree)
        if opt.get("h_rows"):
            kw["h_rows"] = _floats(opt.get("h_rows"))
        tbl = run_sensitivity(out_dir=opt.get("out"), progress=_progress, **kw)
    else:
        kw = {}
        if eps is not None:
            kw["eps"] = eps
        if degree is not None:
            kw["degree"] = int(degree)
        if opt.get("m_rows"):
            kw["M_rows"] = tuple(int(v) for v in _floats(opt.get("m_rows")))
        if opt.get("k_rows"):
            kw["k_rows"] = _floats(opt.get("k_rows"))
        if opt.get("k_fixed") is not None:
            kw["k_fixed"] = opt.get("k_fixed")
        if opt.get("m_fixed") is not None:
            kw["M_fixed"] = int(opt.get("m_fixed"))
        tbl = run_sensitivity_grid(grid, out_dir=opt.get("out"),
                                   progress=_progress, **kw)
    print(tbl.format())


def _cmd_observables(opt: _Options) -> None:
    cfg = RunConfig(
        problem=opt.get("problem", "obs1"),
        degree=int(opt.get("degree", 2)),
        eps=opt.get("eps"),
        k=float(opt.require("k")), fix_k=True, observable_mode=True,
        tol_space=float(opt.require("tol_space")),
        m0=int(opt.get("m0", 8)), keep_steps=False,
        t_end=opt.get("t_end"))
    kw = {}
    if opt.get("reference_m") is not None:
        kw["reference_M"] = int(opt.get("reference_m"))
    if opt.get("reference_k") is not None:
        kw["reference_k"] = opt.get("reference_k")
    if opt.get("reference_degree") is not None:
        kw["reference_degree"] = int(opt.get("reference_degree"))
    rep = run_observable_study(cfg, _floats(opt.require("times")),
                               out_dir=opt.get("out"), **kw)
    for row in rep.rows:
        _print_mapping(row.items())
    _progress(f"observable study finished in {rep.runtime:.1f}s")


def _cmd_reference(opt: _Options) -> None:
    prob = catalog(opt.require("problem"), eps=opt.get("eps"))
    times = list(_floats(opt.get("times"))) if opt.get("times") else []
    node_k_inv = opt.get("node_k_inv")
    if node_k_inv:
        k = 1.0 / float(node_k_inv)
        n = int(round((prob.T - prob.t0) / k))
        times.extend(prob.t0 + j * k for j in range(n + 1))
    if not times:
        raise SystemExit("give --times and/or --node-k-inv")
    kw = {}
    if opt.get("k") is not None:
        kw["k"] = opt.get("k")
    if opt.get("k_inv") is not None:
        kw["k_inv"] = opt.get("k_inv")
    if opt.get("M") is not None:
        kw["M"] = int(opt.get("M"))
    if opt.get("degree") is not None:
        kw["degree"] = int(opt.get("degree"))
    ref = make_reference(prob, sorted(set(times)), **kw)
    path = opt.require("file")
    ref.save(path)
    _print_mapping([
        ("problem", ref.problem), ("M", ref.space.mesh.n_elements),
        ("degree", ref.space.degree), ("k", ref.k),
        ("snapshots", len(ref.times)),
    ])
    if prob.exact is not None:
        _print_mapping([("error_vs_exact", ref.error_vs_exact(prob))])
    _progress(f"reference stored at {path}")


_COMMANDS = {
    "run": _cmd_run,
    "eoc": _cmd_eoc,
    "adapt": _cmd_adapt,
    "sensitivity": _cmd_sensitivity,
    "observables": _cmd_observables,
    "reference": _cmd_reference,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    _COMMANDS[args.command](_Options(args))
    return 0


if __name__ == "__main__":
    sys.exit(main())

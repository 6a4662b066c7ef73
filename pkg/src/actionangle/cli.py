"""Command line front end.

``actionangle analyze`` runs the whole pipeline on one system and point and
writes a JSON report; ``actionangle plotdata`` writes CSV series.  Exit
codes: 0 success, 1 usage error, 2 violated assumption, 3 numerical failure
or a residual above its tolerance.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from .chart import ActionAngleMap, BaseGrid, build_chart, compute_actions, compute_shifts, pullback
from .errors import ActionAngleError, InvalidInputError, InvolutionError, NonRegularPointError
from .flows import FlowConfig, commutation_residual, sample_orbit
from .lattice import detect_lattice
from .partial import build_partial_chart, build_transversal, default_loops, holonomy_check, verify_block_form
from .phase_space import check_involution, check_regularity
from .systems import load_system

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_USAGE, EXIT_ASSUMPTION, EXIT_NUMERICAL = 0, 1, 2, 3
VERDICTS = ("pass", "fail", "supported", "unsupported", "inconclusive", "not_applicable")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list:
    try:
        vals = [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or not all(math.isfinite(v) for v in vals):
        raise UsageError(f"expected finite numbers, got {text!r}")
    return vals


def parse_grid(text: Optional[str], k: int, d: int, point_level, w_center=None) -> BaseGrid:
    """``SPACING:NODES`` for the integral axes, optionally ``/SPACING:NODES`` for transversal axes."""
    parts = (text or "").split("/") if text else []
    spec_j = parts[0] if parts else ("0.05:5" if k == 1 else "0.01:5")
    spec_w = parts[1] if len(parts) > 1 else "0.5:3"

    def one(spec):
        try:
            h, n = spec.split(":")
            h, n = float(h), int(n)
        except ValueError:
            raise UsageError(f"grid spec must read SPACING:NODES, got {spec!r}") from None
        if not h > 0 or n < 1:
            raise UsageError("grid spacing must be positive and nodes at least 1")
        return h, n

    hj, nj = one(spec_j)
    hw, nw = one(spec_w)
    center = list(point_level) + list(np.zeros(d) if w_center is None else w_center)
    return BaseGrid.around(center, [hj] * k + [hw] * d, [nj] * k + [nw] * d)


def _common(p):
    p.add_argument("--system", required=True, help="builtin name or path to a system file")
    p.add_argument("--point", help="comma-separated phase point (defaults to the builtin's point)")
    p.add_argument("--grid", help="base grid SPACING:NODES[/SPACING:NODES]")
    p.add_argument("--box", type=float, default=10.0, help="recurrence search box (flow time per direction)")
    p.add_argument("--tol-flow", type=float, default=1e-12, help="integrator rtol and atol")
    p.add_argument("--tol-closure", type=float, default=1e-7, help="closure tolerance for recurrences")
    p.add_argument("--tol-canonical", type=float, default=1e-5, help="canonical-form residual tolerance")
    p.add_argument("--interp", choices=("linear", "cubic"), default="cubic", help="action interpolation")
    p.add_argument("--threads", type=int, default=1, help="worker threads for sampled verification")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="actionangle", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    a = sub.add_parser("analyze", help="run the pipeline and write a JSON report")
    _common(a)
    a.add_argument("--report", help="report path (stdout when omitted)")
    a.add_argument("--plotdata", help="also write CSV series to this directory")
    a.add_argument("--samples", type=int, default=10, help="sampled chart points for verification")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--timing", action="store_true", help="record wall-clock timings (breaks byte-identity)")
    pd = sub.add_parser("plotdata", help="write CSV series")
    pd.add_argument("--system", help="builtin name or path (or take it from --report)")
    pd.add_argument("--from-report", dest="from_report", help="reuse system and point from a report")
    pd.add_argument("--point")
    pd.add_argument("--grid")
    pd.add_argument("--box", type=float, default=10.0)
    pd.add_argument("--tol-flow", type=float, default=1e-12)
    pd.add_argument("--tol-closure", type=float, default=1e-7)
    pd.add_argument("--tol-canonical", type=float, default=1e-5)
    pd.add_argument("--interp", choices=("linear", "cubic"), default="cubic")
    pd.add_argument("--threads", type=int, default=1)
    pd.add_argument("--sweep", help="LO:HI:N sweep of the first integral")
    pd.add_argument("--out", required=True, help="output directory")
    return parser


# helpers ----------------------------------------------------------------------


def _finite(obj):
    """Replace non-finite floats by None so the report stays valid JSON."""
    if isinstance(obj, dict):
        return {str(k): _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _finite(obj.tolist())
    return obj


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def _setup(args):
    try:
        definition = load_system(args.system)
    except ActionAngleError as exc:
        if exc.kind == "usage" or isinstance(exc, LookupError):
            raise UsageError(str(exc)) from None
        raise
    system = definition.to_system()
    if args.point:
        point = np.array(_floats(args.point))
    elif "point" in definition.metadata:
        point = np.array(definition.metadata["point"], dtype=float)
    else:
        raise UsageError("--point is required for systems without a default point")
    if point.size != system.dim:
        raise UsageError(f"point needs {system.dim} coordinates, got {point.size}")
    if not args.tol_flow > 0:
        raise UsageError("--tol-flow must be positive")
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    cfg = FlowConfig(rtol=args.tol_flow, atol=args.tol_flow)
    return definition, system, point, cfg


def _involution_samples(point, count=8, radius=0.05, seed=0):
    rng = np.random.default_rng(seed)
    return [point] + [point + radius * rng.uniform(-1, 1, point.size) for _ in range(count - 1)]


def _sample_points(aa: ActionAngleMap, count: int, seed: int) -> list:
    """Random chart points inside the interior half of the base grid."""
    rng = np.random.default_rng(seed)
    grid = aa.chart.grid
    k, d = aa.k, aa.d
    pts = []
    for _ in range(count):
        b = np.array([ax.mean() + 0.25 * (ax[-1] - ax[0]) * rng.uniform(-1, 1) for ax in grid.axes])
        y = np.empty(k)
        for lam in range(k):
            y[lam] = rng.uniform(0, 2 * np.pi) if lam in aa.chart.i_indices else rng.uniform(-1, 1)
        I = aa.transform.actions(b)
        pts.append(np.concatenate([y, I, b[k:]]))
    return pts


def run_pipeline(args, system, point, cfg, timings: dict):
    """Everything except output; returns ``(report, aa_map)``."""
    k, n = system.k, system.n
    t0 = time.perf_counter()

    def lap(name):
        nonlocal t0
        now = time.perf_counter()
        timings[name] = now - t0
        t0 = now

    rank, smin = check_regularity(system.integrals, point)
    if rank < k:
        raise NonRegularPointError(
            f"not a regular point: the integrals fail to be a submersion at {point.tolist()} "
            f"(rank {rank} < {k}, smallest singular value {smin:.3e})")
    inv = check_involution(system.integrals, _involution_samples(point), tol=1e-8, model=system.model)
    if not inv.passed:
        pair, val = max(inv.failures.items(), key=lambda kv: kv[1])
        labels = system.integrals.labels
        raise InvolutionError(f"integrals {labels[pair[0]]} and {labels[pair[1]]} are not in involution "
                              f"(|bracket| = {val:.3e})")
    lap("checks")
    comm = {}
    for a_ in range(k):
        for b_ in range(a_ + 1, k):
            comm[f"{a_},{b_}"] = commutation_residual(system, a_, b_, point, 1.0, 1.0, cfg)
    lap("flows")
    lattice0 = detect_lattice(system, point, args.box, args.tol_closure, cfg=cfg)
    lap("lattice")
    d = 2 * (n - k)
    grid = parse_grid(args.grid, k, d, system.level(point))
    warnings = []
    holonomy = {"verdict": "not_applicable"}
    if d:
        transversal = build_transversal(system, point)
        aa = build_partial_chart(system, point, grid, transversal, box=args.box, cfg=cfg,
                                 method=args.interp, detect="corners", tol=args.tol_closure)
        hol = holonomy_check(system, transversal, default_loops(aa, transversal), cfg=cfg)
        holonomy = hol.to_dict()
        if hol.verdict != "supported":
            warnings.append(f"holonomy triviality {hol.verdict}")
    else:
        chart = build_chart(system, point, grid, lattice0=lattice0, box=args.box, cfg=cfg)
        tr = compute_shifts(system, chart, compute_actions(system, chart, method=args.interp))
        aa = ActionAngleMap(chart, tr)
    lap("chart")

    pts = _sample_points(aa, args.samples, args.seed)

    def check(X):
        if d:
            rep = verify_block_form(system, aa, X, tol=args.tol_canonical)
            return rep.canonical_residual, rep.omega_A_beta_residual, rep.independence_residual
        return pullback(system, aa.inverse, X, k).canonical_residual, 0.0, 0.0

    if args.threads > 1:
        with ThreadPoolExecutor(args.threads) as pool:
            results = list(pool.map(check, pts))
    else:
        results = [check(X) for X in pts]
    res = np.array(results) if results else np.zeros((0, 3))
    lap("verification")

    diag = aa.transform.diagnostics
    if aa.chart.m and aa.chart.a_indices and not diag.get("ja_independent", True):
        warnings.append("torus actions vary with cylinder integrals (mixed lattice); see ja_dependence")
    if lattice0.m < k:
        z_far = sample_orbit(system, point, [np.eye(k)[a] for a in lattice0.a_indices[:1]],
                             [np.array([args.box])], cfg)
        if np.max(np.abs(system.difference(np.atleast_2d(z_far)[-1], point))) < 1.0:
            warnings.append("orbit stays near its start along a cylinder direction; "
                            "a period longer than the search box may have been missed")

    nodes = []
    for idx in aa.chart.grid.indices():
        b = aa.chart.grid.point(idx)
        nodes.append({"base": b, "generators": aa.chart.node_generators[idx], "I": aa.transform.actions(b),
                      "shift": aa.transform.shifts(b)})
    shifts = aa.transform.shift_values
    canonical_max = float(res[:, 0].max()) if res.size else 0.0
    block = {"omega_A_beta_max": float(res[:, 1].max()) if res.size else 0.0,
             "independence_max": float(res[:, 2].max()) if res.size else 0.0} if d else None
    passed = canonical_max < args.tol_canonical and (block is None or max(block.values()) < args.tol_canonical)
    report = {
        "schema_version": SCHEMA_VERSION,
        "system": {"name": system.name, "hash": None, "n": n, "k": k},
        "point": point,
        "regularity": {"verdict": "pass", "rank": rank, "smallest_singular_value": smin},
        "involution": {"verdict": "pass", "max_bracket": inv.max_residual},
        "commutation": comm,
        "lattice": {"m": lattice0.m, **lattice0.to_dict()},
        "basis_split": {"a": list(lattice0.a_indices), "i": list(lattice0.i_indices)},
        "grid": {"axes": [ax for ax in aa.chart.grid.axes], "interpolation": args.interp},
        "nodes": nodes,
        "action_diagnostics": {k_: v for k_, v in diag.items() if k_ not in ("section_form_max", "exactness_residual")},
        "shifts": {"max_abs": float(np.max(np.abs(shifts), initial=0.0)) if shifts is not None else 0.0,
                   "section_form_max": diag.get("section_form_max", 0.0),
                   "exactness_residual": diag.get("exactness_residual", 0.0)},
        "canonical": {"max": canonical_max, "mean": float(res[:, 0].mean()) if res.size else 0.0,
                      "samples": len(pts), "tolerance": args.tol_canonical,
                      "verdict": "pass" if passed else "fail"},
        "partial": ({"transversal_dim": d, **block, "holonomy": holonomy} if d else None),
        "warnings": warnings,
        "timing": None,
    }
    return report, aa


def cmd_analyze(args) -> int:
    definition, system, point, cfg = _setup(args)
    if args.samples < 1:
        raise UsageError("--samples must be at least 1")
    timings: dict = {}
    report, aa = run_pipeline(args, system, point, cfg, timings)
    report["system"]["hash"] = definition.hash
    if args.timing:
        report["timing"] = {k_: round(v, 6) for k_, v in timings.items()}
    text = json.dumps(_finite(report), indent=2, sort_keys=True) + "\n"
    if args.report:
        atomic_write(args.report, text)
    else:
        sys.stdout.write(text)
    if args.plotdata:
        write_plotdata(system, point, aa, cfg, args, Path(args.plotdata))
    if report["canonical"]["verdict"] != "pass":
        print(f"canonical residual {report['canonical']['max']:.3e} exceeds {args.tol_canonical:g}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


# plot data --------------------------------------------------------------------


def _parse_sweep(text: str):
    try:
        lo, hi, num = text.split(":")
        lo, hi, num = float(lo), float(hi), int(num)
    except ValueError:
        raise UsageError(f"sweep must read LO:HI:N, got {text!r}") from None
    if num < 2 or not hi > lo:
        raise UsageError("sweep range is empty (need HI > LO and N >= 2)")
    return np.linspace(lo, hi, num)


def sweep_actions(system, point, values, cfg, box=10.0, tol=1e-7):
    """Actions over a sweep of the first integral (other integrals held at the point's level)."""
    level = system.level(point)
    axes = [np.asarray(values, dtype=float)] + [np.array([v]) for v in level[1:]]
    grid = BaseGrid(axes)
    lattice0 = detect_lattice(system, point, box, tol, cfg=cfg)
    chart = build_chart(system, point, grid, lattice0=lattice0, box=box, cfg=cfg)
    tr = compute_actions(system, chart)
    rows = [np.concatenate([grid.point(idx), tr.actions(grid.point(idx))]) for idx in grid.indices()]
    return np.array(rows), chart


def write_plotdata(system, point, aa, cfg, args, out: Path, sweep=None) -> list:
    k = system.k
    written = []
    jcols = [f"J{j + 1}" for j in range(k)]
    icols = [f"I{j + 1}" for j in range(k)]
    if sweep is not None:
        rows, _ = sweep_actions(system, point, sweep, cfg, args.box, args.tol_closure)
    else:
        grid = aa.chart.grid
        rows = np.array([np.concatenate([grid.point(idx)[:k], aa.transform.actions(grid.point(idx))])
                         for idx in grid.indices()])
    atomic_write(out / "actions.csv", _csv(jcols + icols, rows))
    written.append("actions.csv")
    # frequencies dF_1/dI along the first axis, by differences of the action table
    if rows.shape[0] >= 2:
        J, I = rows[:, 0], rows[:, k + np.argmax(np.ptp(rows[:, k:], axis=0))]
        dI = np.gradient(I, J)
        with np.errstate(divide="ignore"):
            freq = np.where(dI != 0, 1.0 / dI, np.nan)
        atomic_write(out / "frequency.csv", _csv(["J1", "dF1_dI"], np.column_stack([J, freq])))
        written.append("frequency.csv")
    if aa is not None:
        traj = []
        ts = np.linspace(0.0, 2.0, 21)
        pts = sample_orbit(system, point, [np.eye(k)[0]], [ts], cfg)
        for t, u in zip(ts, pts):
            traj.append(np.concatenate([[t], aa.forward(u)]))
        cols = ["t"] + [f"y{j + 1}" for j in range(k)] + icols + [f"z{j + 1}" for j in range(aa.d)]
        atomic_write(out / "trajectory.csv", _csv(cols, traj))
        written.append("trajectory.csv")
        if aa.d == 0:
            conv = convergence_series(system, point, aa, cfg, args)
            atomic_write(out / "convergence.csv", _csv(["spacing", "canonical_max"], conv))
            written.append("convergence.csv")
    return written


def convergence_series(system, point, aa, cfg, args, levels: int = 2, samples: int = 5) -> list:
    """Canonical residual at fixed chart points as the grid is refined."""
    pts = _sample_points(aa, samples, 1)
    grid = aa.chart.grid
    out = []
    for level in range(levels):
        chart = build_chart(system, point, grid, lattice0=aa.chart.lattice0, box=args.box, cfg=cfg)
        tr = compute_shifts(system, chart, compute_actions(system, chart, method=args.interp))
        m = ActionAngleMap(chart, tr)
        r = max(pullback(system, m.inverse, X, system.k).canonical_residual for X in pts)
        out.append((float(np.max(grid.spacing())), r))
        grid = grid.refined()
    return out


def cmd_plotdata(args) -> int:
    if args.from_report:
        path = Path(args.from_report)
        if not path.exists():
            raise UsageError(f"report {path} does not exist")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"report {path} is not valid JSON: {exc.msg}") from None
        args.system = args.system or doc["system"]["name"]
        args.point = args.point or ",".join(repr(float(x)) for x in doc["point"])
    if not args.system:
        raise UsageError("plotdata needs --system or --from-report")
    sweep = _parse_sweep(args.sweep) if args.sweep else None
    definition, system, point, cfg = _setup(args)
    aa = None
    if sweep is None:
        grid = parse_grid(args.grid, system.k, 2 * (system.n - system.k), system.level(point))
        if system.k < system.n:
            aa = build_partial_chart(system, point, grid, box=args.box, cfg=cfg, method=args.interp,
                                     detect="center", tol=args.tol_closure)
        else:
            chart = build_chart(system, point, grid, box=args.box, cfg=cfg)
            aa = ActionAngleMap(chart, compute_shifts(system, chart, compute_actions(system, chart, method=args.interp)))
    write_plotdata(system, point, aa, cfg, args, Path(args.out), sweep)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (analyze or plotdata)")
        handler = cmd_analyze if args.command == "analyze" else cmd_plotdata
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ActionAngleError as exc:
        code = {"usage": EXIT_USAGE, "assumption": EXIT_ASSUMPTION}.get(exc.kind, EXIT_NUMERICAL)
        label = {"usage": "usage error", "assumption": "assumption violated"}.get(exc.kind, "numerical failure")
        print(f"{label}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())

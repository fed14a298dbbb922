"""Command-line harness: ``spectral-rates <subcommand>``.

Subcommands: generate, run, sweep, validate, report, convert-dataset.

Exit codes::

    0  success
    2  usage or parameter error
    3  data or I/O error (unreadable file, malformed input, empty fit window)
    4  numerical failure (divergence, non-finite values)
    5  validation failure (at least one check failed)
"""

from __future__ import annotations

import argparse
import csv
import itertools
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, analysis, datasets, engine, formats, spectrum, validation
from .config import (
    GENERATOR_KINDS,
    SCHEDULE_KEYS,
    ExperimentConfig,
    default_output_dir,
    load_config_file,
    parse_list,
    parse_value,
    parse_window,
)
from .errors import DataError, NumericalError, ParameterError
from .report import CheckRecord, format_checks, format_fit_table, render_svg, write_jsonl

__all__ = ["main", "build_parser", "build_problem", "EXIT_OK", "EXIT_USAGE", "EXIT_DATA",
           "EXIT_NUMERICAL", "EXIT_VALIDATION"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_VALIDATION = 5

_GEN_DEFAULTS = {
    "M": 100_000, "K": 10_000, "N": 200, "nu": 1.5, "zeta": 1.0,
    "d": 10, "clusters": 4, "per_cluster": 50, "separation": 3.0,
}
_PROBLEM_FLAGS = ("M", "K", "N", "nu", "zeta", "d", "clusters", "per_cluster", "separation",
                  "seed", "data", "format", "target_column")


class _UsageError(Exception):
    pass


class _ArgParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _gen_param(problem, key):
    v = problem.get(key, _GEN_DEFAULTS.get(key))
    if v is None:
        raise ParameterError(f"generator parameter {key} is required")
    return v


def _measure_from_data(X, y, kind, extra):
    if y is None:
        raise DataError("the NTK pipeline needs targets; pass --target-column for CSV data")
    if len(X) > 5000:
        raise ParameterError(f"dataset has {len(X)} rows; the dense Gram matrix is capped at 5000")
    Xn = spectrum.normalize_dataset(X)
    m = spectrum.spectral_measure_from_gram(spectrum.ntk_gram(Xn), y)
    return m.with_info(kind=kind, samples=int(X.shape[0]), features=int(X.shape[1]), **extra)


def build_problem(problem):
    """Measure or operator from a problem dict (``file=`` or ``kind=`` plus parameters)."""
    if "file" in problem:
        return formats.read_problem(problem["file"])
    kind = problem.get("kind")
    g = lambda k: _gen_param(problem, k)  # noqa: E731
    if kind == "diagonal":
        return spectrum.synthetic_diagonal(int(g("M")), float(g("nu")), float(g("zeta")))
    if kind == "powerlaw":
        return spectrum.discrete_powerlaw(float(g("zeta")), float(g("nu")), int(g("K")))
    if kind == "sd-lowerbound":
        return spectrum.sd_lowerbound_measure(float(g("zeta")), float(g("nu")), int(g("K")))
    if kind == "chain":
        return spectrum.cg_lowerbound_operator(float(g("zeta")), float(g("nu")), int(g("N")))
    if kind == "equal-mass":
        return spectrum.equal_mass_discretization(spectrum.PowerLawSpec(float(g("zeta"))), int(g("M")))
    if kind == "gaussian-mix":
        if problem.get("seed") is None:
            raise ParameterError("gaussian-mix draws random numbers and needs --seed")
        X, y = spectrum.gaussian_mix_dataset(int(g("d")), int(g("clusters")), int(g("per_cluster")),
                                             float(g("separation")), int(problem["seed"]))
        return _measure_from_data(X, y, "ntk-gaussian-mix", {"seed": int(problem["seed"])})
    if kind == "ntk":
        if problem.get("data") is None:
            raise ParameterError("the ntk generator needs --data")
        tc = problem.get("target_column", -1)
        if isinstance(tc, float) and tc == int(tc):
            tc = int(tc)
        X, y = datasets.read_dataset(problem["data"], problem.get("format"), tc)
        return _measure_from_data(X, y, "ntk", {})
    raise ParameterError(f"unknown generator {kind!r}; expected one of {sorted(GENERATOR_KINDS)}")


def _problem_summary(prob):
    if isinstance(prob, spectrum.OperatorProblem):
        d = prob.describe()
        return (f"operator rows={d['rows']} cols={d['cols']} zeta={d.get('zeta', 'na')} "
                f"nu={d.get('nu', 'na')} initial_loss={d['initial_loss']:.6g}")
    d = prob.describe()
    return (f"atoms={d['atoms']} zeta={d.get('zeta', 'na')} nu={d.get('nu', 'na')} "
            f"total_mass={d['total_mass']:.17g} lambda_max={d['lambda_max']:.6g} "
            f"lambda_min={d['lambda_min']:.6g}")


def _output_path(given, default_name):
    if given:
        return given
    return os.path.join(default_output_dir(), default_name)


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(parent, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create directory {parent}: {exc}") from exc


# ---------------------------------------------------------------- arguments

def _add_problem_flags(p, with_kind):
    if with_kind:
        p.add_argument("kind", choices=sorted(GENERATOR_KINDS), help="generator kind")
    else:
        p.add_argument("--problem", help="measure or operator file")
        p.add_argument("--generator", choices=sorted(GENERATOR_KINDS),
                       help="generate the problem in memory instead of reading a file")
    p.add_argument("--M", help="atom count for diagonal and equal-mass problems")
    p.add_argument("--K", help="atom count for powerlaw and sd-lowerbound problems")
    p.add_argument("--N", help="chain operator dimension")
    p.add_argument("--nu", help="eigenvalue decay exponent")
    p.add_argument("--zeta", help="target expansion exponent")
    p.add_argument("--d", help="gaussian-mix dimension")
    p.add_argument("--clusters", help="gaussian-mix cluster count")
    p.add_argument("--per-cluster", dest="per_cluster", help="gaussian-mix samples per cluster")
    p.add_argument("--separation", help="gaussian-mix center scale")
    p.add_argument("--seed", help="random seed (required by gaussian-mix)")
    p.add_argument("--data", help="dataset file for the ntk generator")
    p.add_argument("--format", choices=("csv", "raw", "idx"), help="dataset format")
    p.add_argument("--target-column", dest="target_column",
                   help="target column index or name (CSV; default: last)")


def _add_schedule_flags(p):
    p.add_argument("--schedule", choices=engine.SCHEDULE_KINDS)
    p.add_argument("--alpha", help="learning rate (constant schedules)")
    p.add_argument("--beta", help="momentum (constant schedules)")
    p.add_argument("--a", help="Jacobi parameter a")
    p.add_argument("--b", help="Jacobi parameter b")
    p.add_argument("--depth", help="scheduled-gd block depth")
    p.add_argument("--orthogonalize", choices=("target", "parameter"))
    p.add_argument("--history-cap", dest="history_cap")
    p.add_argument("--allow-unstable", dest="allow_unstable", action="store_true", default=None)
    p.add_argument("--steps", help="number of steps")
    p.add_argument("--probes", help="comma-separated lambda values for p_n(lambda) columns")
    p.add_argument("--closed-form", dest="closed_form", action="store_true", default=None,
                   help="constant schedules only: evaluate the closed form on a geometric grid")
    p.add_argument("--record-points", dest="record_points",
                   help="record only a geometric grid of this many steps")


def _add_analysis_flags(p):
    p.add_argument("--window", help="auto | threshold | lo,hi")
    p.add_argument("--lambda-low", dest="lambda_low", help="override the end of the power-law region")
    p.add_argument("--r0", help="threshold constant")
    p.add_argument("--delta", help="slope-rule tolerance for auto windows")


def build_parser():
    p = _ArgParser(prog="spectral-rates",
                   description="Convergence rates of first-order methods on power-law spectra.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_ArgParser)

    g = sub.add_parser("generate", help="write a measure or operator file")
    _add_problem_flags(g, with_kind=True)
    g.add_argument("-o", "--output", help="output file (default: $SPECTRAL_RATES_OUTPUT/<kind>.txt)")

    r = sub.add_parser("run", help="run one schedule and write a trajectory CSV")
    r.add_argument("--config", help="experiment config file")
    _add_problem_flags(r, with_kind=False)
    _add_schedule_flags(r)
    r.add_argument("-o", "--output", help="trajectory CSV (default: $SPECTRAL_RATES_OUTPUT/trajectory.csv)")

    s = sub.add_parser("sweep", help="run a parameter grid")
    s.add_argument("--config", help="experiment config file")
    _add_problem_flags(s, with_kind=False)
    _add_schedule_flags(s)
    _add_analysis_flags(s)
    s.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2,...",
                   help="swept key and its values; repeat for a Cartesian product")
    s.add_argument("--jobs", help="worker processes (default 1)")
    s.add_argument("--fit", action="store_true", help="fit the loss exponent of every point")
    s.add_argument("-o", "--output", help="output directory (default: $SPECTRAL_RATES_OUTPUT/sweep)")

    v = sub.add_parser("validate", help="run an oracle or invariant suite")
    v.add_argument("suite", choices=validation.suite_names())
    v.add_argument("--jsonl", help="machine-readable sidecar, one JSON object per check")
    v.add_argument("-o", "--output", help="also write the text report here")
    v.add_argument("--jobs", type=int, default=1, help="worker processes for 'all'")

    rep = sub.add_parser("report", help="fit trajectories and render a report")
    rep.add_argument("trajectories", nargs="*", help="trajectory CSV files")
    rep.add_argument("--problem", help="measure file supplying zeta, nu and lambda_low")
    _add_analysis_flags(rep)
    rep.add_argument("--spectrum", help="measure file: fit nu, kappa and zeta = kappa/nu")
    rep.add_argument("--spectrum-window", dest="spectrum_window", help="index window lo,hi")
    rep.add_argument("--svg", help="write a log-log loss plot")
    rep.add_argument("--jsonl", help="machine-readable sidecar, one JSON object per fit")
    rep.add_argument("-o", "--output", help="also write the text report here")

    c = sub.add_parser("convert-dataset", help="convert between CSV, raw binary and IDX")
    c.add_argument("source")
    c.add_argument("destination")
    c.add_argument("--from", dest="src_format", choices=("csv", "raw", "idx"))
    c.add_argument("--to", dest="dst_format", choices=("csv", "raw"))
    c.add_argument("--limit", type=int, help="keep only the first rows")
    return p


# ---------------------------------------------------------------- config

def _problem_overrides(args, kind=None):
    out = {}
    for k in _PROBLEM_FLAGS:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v if k in ("data", "format") else parse_value(k, v)
    if kind is not None:
        out["kind"] = kind
    return out


def _config_from_args(args):
    sections = load_config_file(args.config) if getattr(args, "config", None) else {}
    problem = _problem_overrides(args)
    if args.problem is not None and args.generator is not None:
        raise ParameterError("give either --problem or --generator, not both")
    if args.problem is not None:
        problem["file"] = args.problem
        sections.get("problem", {}).pop("kind", None)
    if args.generator is not None:
        problem["kind"] = args.generator
        sections.get("problem", {}).pop("file", None)
    schedule = {}
    if args.schedule is not None:
        schedule["kind"] = args.schedule
    for k in SCHEDULE_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            schedule[k] = v if k == "orthogonalize" else parse_value(k, v)
    run = {}
    if args.steps is not None:
        run["steps"] = parse_value("steps", args.steps)
    if args.probes is not None:
        run["probes"] = parse_list("probes", args.probes)
    if args.closed_form:
        run["closed_form"] = True
    if args.record_points is not None:
        run["record_points"] = parse_value("record_points", args.record_points)
    if getattr(args, "output", None) is not None and args.command == "run":
        run["output"] = args.output
    ana = {}
    for k in ("window", "lambda_low", "r0", "delta"):
        v = getattr(args, k, None)
        if v is not None:
            ana[k] = v if k == "window" else parse_value(k, v)
    cfg = ExperimentConfig.from_sources(
        sections, {"problem": problem, "schedule": schedule, "run": run, "analysis": ana})
    return cfg, sections


def _execute(cfg: ExperimentConfig, problem=None):
    prob = build_problem(cfg.problem) if problem is None else problem
    sched = engine.make_schedule(cfg.schedule["kind"], **cfg.schedule_params())
    record = None
    if cfg.record_points:
        record = engine.geometric_grid(cfg.steps, cfg.record_points)
    return engine.run(prob, sched, cfg.steps, probes=cfg.probes or None, record=record,
                      closed_form=cfg.closed_form)


# ---------------------------------------------------------------- commands

def cmd_generate(args):
    problem = _problem_overrides(args, kind=args.kind)
    prob = build_problem(problem)
    path = _output_path(args.output, f"{args.kind}.txt")
    _ensure_parent(path)
    if isinstance(prob, spectrum.OperatorProblem):
        formats.write_operator(path, prob)
    else:
        formats.write_measure(path, prob)
    print(f"wrote {path}: {_problem_summary(prob)}")
    return EXIT_OK


def cmd_run(args):
    cfg, _ = _config_from_args(args)
    traj = _execute(cfg)
    path = _output_path(cfg.output, "trajectory.csv")
    _ensure_parent(path)
    formats.write_trajectory(path, traj)
    last = int(traj.steps[-1]) if len(traj) else 0
    print(f"wrote {path}: schedule={traj.kind} steps={last} final_loss={traj.loss[-1]:.17g}")
    for ev in traj.events:
        print(f"  event: {ev}")
    if traj.diverged:
        print(f"error: run diverged after step {last}; partial trajectory kept in {path}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _grid_from(args, sections):
    grid = {}
    for k, vals in sections.get("sweep", {}).items():
        if k != "jobs":
            grid[k] = list(vals)
    for item in args.grid:
        if "=" not in item:
            raise ParameterError(f"grid entry must be KEY=V1,V2,...; got {item!r}")
        k, v = item.split("=", 1)
        grid[k.strip()] = parse_list(k.strip(), v)
    allowed = set(SCHEDULE_KEYS) | set(_PROBLEM_FLAGS) | {"steps", "schedule"}
    for k, vals in grid.items():
        if k not in allowed:
            raise ParameterError(f"cannot sweep {k!r}; sweepable keys: {sorted(allowed)}")
        if not vals:
            raise ParameterError(f"grid key {k!r} has no values")
    if not grid:
        raise ParameterError("sweep grid is empty; pass --grid KEY=V1,V2,...")
    return grid


def _point_config(cfg: ExperimentConfig, point):
    problem = dict(cfg.problem)
    schedule = dict(cfg.schedule)
    steps = cfg.steps
    for k, v in point.items():
        if k in SCHEDULE_KEYS:
            schedule[k] = v
        elif k == "schedule":
            schedule["kind"] = v
        elif k == "steps":
            steps = int(v)
        else:
            problem[k] = v
    return ExperimentConfig(problem=problem, schedule=schedule, steps=steps, probes=cfg.probes,
                            closed_form=cfg.closed_form, record_points=cfg.record_points,
                            window=cfg.window, r0=cfg.r0, delta=cfg.delta,
                            lambda_low=cfg.lambda_low, tolerance=cfg.tolerance).validate()


def _sweep_point(task):
    index, point, cfg, out_dir, do_fit = task
    name = f"point_{index:04d}.csv"
    row = {"index": index, **{k: point[k] for k in point}, "file": name, "status": "ok",
           "final_loss": "", "exponent": "", "theory": "", "window": "", "message": ""}
    try:
        pcfg = _point_config(cfg, point)
        traj = _execute(pcfg)
        formats.write_trajectory(os.path.join(out_dir, name), traj)
        row["final_loss"] = formats.format_float(traj.loss[-1])
        if traj.diverged:
            row["status"] = "diverged"
            row["message"] = f"diverged after step {int(traj.steps[-1])}"
        elif do_fit:
            fit = analysis.fit_power_law(traj, window=pcfg.window, r0=pcfg.r0, delta=pcfg.delta,
                                         lambda_low_value=pcfg.lambda_low)
            row["exponent"] = f"{fit.exponent:.6f}"
            row["theory"] = "" if fit.theory_exponent is None else f"{fit.theory_exponent:.6f}"
            row["window"] = f"{fit.n_lo}-{fit.n_hi}"
    except (ParameterError, DataError, NumericalError, OSError) as exc:
        row["status"] = "error"
        row["message"] = f"{type(exc).__name__}: {exc}"
    return row


def cmd_sweep(args):
    cfg, sections = _config_from_args(args)
    grid = _grid_from(args, sections)
    jobs = args.jobs if args.jobs is not None else sections.get("sweep", {}).get("jobs", 1)
    jobs = int(parse_value("jobs", jobs))
    if jobs < 1:
        raise ParameterError(f"jobs must be >= 1, got {jobs}")
    out_dir = _output_path(args.output, "sweep")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out_dir}: {exc}") from exc
    keys = list(grid)
    points = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    tasks = [(i, p, cfg, out_dir, args.fit) for i, p in enumerate(points)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    rows.sort(key=lambda r: r["index"])
    fields = ["index", *keys, "file", "status", "final_loss", "exponent", "theory", "window", "message"]
    index_path = os.path.join(out_dir, "index.csv")
    with open(index_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in fields})
    n_bad = sum(r["status"] != "ok" for r in rows)
    for r in rows:
        params = " ".join(f"{k}={r[k]}" for k in keys)
        extra = f" xi={r['exponent']} ({r['theory'] or '?'})" if r["exponent"] else ""
        print(f"[{r['index']:4d}] {params}: {r['status']}{extra}"
              + (f"  {r['message']}" if r["message"] else ""))
    print(f"wrote {index_path}: {len(rows) - n_bad}/{len(rows)} points ok")
    if n_bad:
        return EXIT_NUMERICAL if all(r["status"] == "diverged" for r in rows if r["status"] != "ok") \
            else EXIT_DATA
    return EXIT_OK


def _run_one_suite(name):
    return validation.run_suite(name)


def cmd_validate(args):
    names = list(validation.SUITES) if args.suite == "all" else [args.suite]
    if args.jobs > 1 and len(names) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one_suite, names))
    else:
        results = [_run_one_suite(n) for n in names]
    text = "".join(format_checks(recs, title=n) for n, recs in zip(names, results))
    records = [r for recs in results for r in recs]
    n_fail = sum(not r.passed for r in records)
    text += f"overall: {len(records) - n_fail}/{len(records)} checks passed\n"
    sys.stdout.write(text)
    if args.output:
        _ensure_parent(args.output)
        with open(args.output, "w") as fh:
            fh.write(text)
    if args.jsonl:
        _ensure_parent(args.jsonl)
        write_jsonl(args.jsonl, records)
    return EXIT_VALIDATION if n_fail else EXIT_OK


def cmd_report(args):
    if not args.trajectories and not args.spectrum:
        raise ParameterError("report needs trajectory files or --spectrum")
    window = parse_window(args.window) if args.window else "auto"
    lam_low = parse_value("lambda_low", args.lambda_low) if args.lambda_low else None
    r0 = float(args.r0) if args.r0 else analysis.DEFAULT_R0
    delta = float(args.delta) if args.delta else analysis.DEFAULT_DELTA
    problem_desc = None
    if args.problem:
        prob = formats.read_problem(args.problem)
        if isinstance(prob, spectrum.OperatorProblem):
            prob = prob.to_measure()
        problem_desc = prob.describe()
    text = ""
    rows, curves, records = [], [], []
    for path in args.trajectories:
        traj = formats.read_trajectory(path)
        if problem_desc is not None:
            traj.problem = {**traj.problem, **problem_desc}
        name = os.path.basename(path)
        try:
            fit = analysis.fit_power_law(traj, window=window, lambda_low_value=lam_low, r0=r0,
                                         delta=delta)
            records.append(CheckRecord(f"fit.{name}", fit.exponent,
                                       "na" if fit.theory_exponent is None
                                       else f"theory {fit.theory_exponent:.6g}",
                                       True, f"window={fit.n_lo}-{fit.n_hi} r2={fit.r2:.6f}"))
        except (DataError, ParameterError) as exc:
            fit = exc
            records.append(CheckRecord(f"fit.{name}", None, "na", False, str(exc)))
        rows.append((name, fit))
        curves.append({"label": name, "steps": traj.steps, "loss": traj.loss,
                       "fit": fit, "n_th": getattr(fit, "n_th", None)})
    if rows:
        text += format_fit_table(rows)
    if args.spectrum:
        m = formats.read_measure(args.spectrum)
        sw = parse_window(args.spectrum_window) if args.spectrum_window else None
        ex = analysis.fit_spectrum_exponents(m, sw)
        text += (f"spectrum {os.path.basename(args.spectrum)}: atoms={len(m)} "
                 f"window=[{ex.k_lo}, {ex.k_hi}]\n"
                 f"  nu    = {ex.nu:.6f}  (eigenvalues, R2={ex.r2_eigen:.6f}, Lambda={ex.Lambda:.6g})\n"
                 f"  kappa = {ex.kappa:.6f}  (coefficient tail sums, R2={ex.r2_tail:.6f})\n"
                 f"  zeta  = {ex.zeta:.6f}  (kappa/nu)\n")
        for k in ("nu", "kappa", "zeta"):
            records.append(CheckRecord(f"spectrum.{k}", float(getattr(ex, k)), "na", True,
                                       f"window={ex.k_lo}-{ex.k_hi}"))
    sys.stdout.write(text)
    if args.output:
        _ensure_parent(args.output)
        with open(args.output, "w") as fh:
            fh.write(text)
    if args.jsonl:
        _ensure_parent(args.jsonl)
        write_jsonl(args.jsonl, records)
    if args.svg and curves:
        _ensure_parent(args.svg)
        with open(args.svg, "w") as fh:
            fh.write(render_svg(curves))
    if any(isinstance(f, Exception) for _, f in rows):
        return EXIT_DATA
    return EXIT_OK


def cmd_convert_dataset(args):
    shape = datasets.convert_dataset(args.source, args.destination, args.src_format,
                                     args.dst_format, args.limit)
    print(f"wrote {args.destination}: {shape[0]} rows x {shape[1]} columns")
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
    "report": cmd_report,
    "convert-dataset": cmd_convert_dataset,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    np.seterr(over="ignore", under="ignore")
    try:
        return _COMMANDS[args.command](args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

"""
Command-line entry point.

    rotec sstar --scenario FILE [--out DIR]
    rotec run   --scenario FILE [--seeds A..B] [--out DIR] [--deterministic]
                [--budget-override MICROS] [--baseline RUN_ID] [--run-id ID]
    rotec sweep --scenario FILE --sweep {sigma,period,budget} --grid v1,v2,...
                [--seeds A..B] [--out DIR] [--deterministic]

Grid units: sigma is dimensionless, period in milliseconds, budget in
microseconds.  Exit codes: 0 success, 1 configuration error, 2 numerical or
design error.  ``ROTEC_THREADS`` caps the worker pool.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import admissible_set as adm
from .config import load_scenario, parse_seeds
from .errors import ConfigError, InvalidInputError, RotecError
from .scheduler_sim import Scenario, build_setup, pool_size, run_seeds

SCHEMA_VERSION = 1
SUMMARY_COLUMNS = [
    "schema_version", "run_id", "scenario", "seed", "pi", "normalized_pi", "violations",
    "rejections", "accepted_samples", "samples", "flow_steps",
]
SWEEP_COLUMNS = [
    "schema_version", "param", "value", "n_seeds", "pi_mean", "pi_q1", "pi_median", "pi_q3",
    "pi_min", "pi_max", "rejections_mean", "violations_total",
]
SWEEP_SEED_COLUMNS = ["schema_version", "param", "value", "seed", "pi", "rejections", "violations"]
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def trace_columns(n_cmd, n_in, n_out):
    """Long-format trace header; vector signals get one column per component."""
    cols = ["schema_version", "seed", "k", "t"]
    cols += [f"r_{j}" for j in range(n_cmd)] + [f"v_{j}" for j in range(n_cmd)]
    cols += [f"u_{j}" for j in range(n_in)] + [f"y_{j}" for j in range(n_out)]
    return cols + ["accepted", "rejected", "budget_s", "flow_steps"]


def _fmt(x):
    return repr(float(x))


def write_traces(path, traces):
    tr0 = traces[0]
    cols = trace_columns(tr0.v.shape[1], tr0.u.shape[1], tr0.y.shape[1])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for tr in traces:
            seed = tr.metadata["seed"]
            for k in range(len(tr.k)):
                w.writerow(
                    [SCHEMA_VERSION, seed, k, _fmt(tr.t[k])]
                    + [_fmt(x) for x in tr.r[k]] + [_fmt(x) for x in tr.v[k]]
                    + [_fmt(x) for x in tr.u[k]] + [_fmt(x) for x in tr.y[k]]
                    + [int(tr.accepted[k]), int(tr.rejected[k]), _fmt(tr.budget[k]), int(tr.flow_steps[k])]
                )


def read_summary(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or list(rows[0].keys()) != SUMMARY_COLUMNS:
        raise ConfigError(f"{path} is not a summary file with the expected header")
    return rows


def summary_rows(run_id, traces, baseline=None):
    """One row per seed; ``baseline`` is a list of summary rows to normalize against."""
    base_by_seed, base_mean = {}, None
    if baseline:
        base_by_seed = {int(r["seed"]): float(r["pi"]) for r in baseline}
        base_mean = float(np.mean(list(base_by_seed.values())))
    rows = []
    for tr in traces:
        seed = tr.metadata["seed"]
        ref = base_by_seed.get(seed, base_mean)
        norm = "" if ref is None or ref == 0 else _fmt(tr.pi / ref)
        rows.append([
            SCHEMA_VERSION, run_id, tr.metadata["scenario"], seed, _fmt(tr.pi), norm, tr.violation_count,
            tr.rejections, int(np.sum(tr.accepted)), len(tr.k), tr.total_flow_steps,
        ])
    return rows


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _out_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _seed_range(args, sc: Scenario):
    lo, hi = parse_seeds(args.seeds) if args.seeds else sc.seeds
    return range(lo, hi + 1)


def _apply_budget(sc: Scenario, micros):
    if micros is None:
        return sc
    if micros < 0:
        raise ConfigError("--budget-override must be nonnegative")
    return sc.with_(budget_override=micros * 1e-6)


def cmd_sstar(args):
    sc = load_scenario(args.scenario)
    st = build_setup(sc)
    aset = st.problem.aset
    out = _out_dir(args.out)
    path = out / f"{sc.name}.aset"
    adm.save(aset, path)
    if not adm.sets_equal(adm.load(path), aset):
        print(f"error: cache {path} does not reload bit-exactly", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"s* = {aset.s_star}")
    print(f"rows = {aset.n_rows} ({aset.n_out} outputs x {aset.block})")
    print(f"cache = {path}")
    return EXIT_OK


def cmd_run(args):
    sc = _apply_budget(load_scenario(args.scenario), args.budget_override)
    seeds = _seed_range(args, sc)
    out = _out_dir(args.out)
    run_id = args.run_id or sc.name
    baseline = read_summary(out / f"{args.baseline}_summary.csv") if args.baseline else None
    traces = run_seeds(sc, seeds, deterministic=args.deterministic, workers=pool_size(args.workers))
    rows = summary_rows(run_id, traces, baseline)
    _write_csv(out / f"{run_id}_summary.csv", SUMMARY_COLUMNS, rows)
    if not args.no_traces:
        write_traces(out / f"{run_id}_trace.csv", traces)
    pis = np.array([t.pi for t in traces])
    print(f"{run_id}: {len(traces)} seeds, mean PI {pis.mean():.6g}, "
          f"violations {sum(t.violation_count for t in traces)}, "
          f"rejections {sum(t.rejections for t in traces)}")
    if baseline:
        norm = [float(r[5]) for r in rows if r[5] != ""]
        print(f"{run_id}: mean normalized PI {np.mean(norm):.4f} against {args.baseline}")
    return EXIT_OK


def sweep_variant(sc: Scenario, param, value):
    if param == "sigma":
        return sc.with_(sigma=float(value))
    if param == "budget":
        return _apply_budget(sc, float(value))
    if param == "period":
        dt = float(value) * 1e-3
        if not dt > 0:
            raise ConfigError("period grid values must be positive")
        n = max(1, int(round(sc.n_samples * sc.delta_t / dt)))
        tasks = None
        if sc.tasks:
            tasks = [dict(t, period=dt, wcet=min(t["wcet"], dt)) if t.get("governor") else t for t in sc.tasks]
        return sc.with_(delta_t=dt, n_samples=n, tasks=tasks)
    raise ConfigError(f"unknown sweep parameter {param!r}")


def _parse_grid(text):
    try:
        grid = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad grid {text!r}") from None
    if not grid:
        raise ConfigError("the sweep grid is empty")
    return grid


def cmd_sweep(args):
    base = _apply_budget(load_scenario(args.scenario), args.budget_override)
    grid = _parse_grid(args.grid)
    seeds = _seed_range(args, base)
    out = _out_dir(args.out)
    run_id = args.run_id or f"{base.name}_{args.sweep}"
    agg, per_seed = [], []
    for value in grid:
        sc = sweep_variant(base, args.sweep, value)
        traces = run_seeds(sc, seeds, deterministic=args.deterministic, workers=pool_size(args.workers))
        pis = np.array([t.pi for t in traces])
        q1, med, q3 = np.percentile(pis, [25, 50, 75])
        rej = np.array([t.rejections for t in traces])
        agg.append([SCHEMA_VERSION, args.sweep, _fmt(value), len(pis), _fmt(pis.mean()), _fmt(q1), _fmt(med),
                    _fmt(q3), _fmt(pis.min()), _fmt(pis.max()), _fmt(rej.mean()),
                    sum(t.violation_count for t in traces)])
        per_seed += [[SCHEMA_VERSION, args.sweep, _fmt(value), t.metadata["seed"], _fmt(t.pi), t.rejections,
                      t.violation_count] for t in traces]
        print(f"{args.sweep}={value:g}: mean PI {pis.mean():.6g}, mean rejections {rej.mean():.3g}")
    _write_csv(out / f"{run_id}_sweep.csv", SWEEP_COLUMNS, agg)
    _write_csv(out / f"{run_id}_sweep_seeds.csv", SWEEP_SEED_COLUMNS, per_seed)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="rotec", description="Anytime command governor toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sstar", help="compute the admissible set horizon and cache the set")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_sstar)

    for name, func, helptext in (("run", cmd_run, "run a scenario over a seed range"),
                                 ("sweep", cmd_sweep, "sweep one parameter over a grid")):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("--scenario", required=True)
        c.add_argument("--seeds", help="inclusive range A..B (default from the scenario)")
        c.add_argument("--out", default="out")
        c.add_argument("--deterministic", action="store_true",
                       help="convert budgets to flow step counts instead of reading the clock")
        c.add_argument("--budget-override", type=float, metavar="MICROS")
        c.add_argument("--run-id")
        c.add_argument("--workers", type=int, default=1)
        if name == "run":
            c.add_argument("--baseline", metavar="RUN_ID", help="normalize PI by this run's summary in --out")
            c.add_argument("--no-traces", action="store_true", help="write only the summary CSV")
        else:
            c.add_argument("--sweep", required=True, choices=["sigma", "period", "budget"])
            c.add_argument("--grid", required=True)
        c.set_defaults(func=func)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RotecError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

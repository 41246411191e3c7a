"""Command-line entry point: ``mvtaudit <command> ...``.

Exit codes: 0 success, 1 domain error, 2 usage error.  Domain errors print a
human-readable line and then a one-line JSON object on stderr.
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import io
import json
import logging
import os
import sys
from typing import Sequence

import numpy as np

from . import audit, campaign, embedding_model, encoding, finance, instances, solvers, stats
from .errors import ConfigurationError, MissingDataError, ToolkitError

DATA_DIR_ENV = "MVTAUDIT_DATA_DIR"
FF49_FILENAME = "49_Industry_Portfolios_Daily.csv"


def _check_out(path: str, force: bool) -> str:
    if os.path.exists(path) and not force:
        raise ConfigurationError(f"{path} exists; pass --force to overwrite")
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    return path


def _write_text(path: str | None, text: str, force: bool) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    with open(_check_out(path, force), "w", encoding="utf-8") as fh:
        fh.write(text)


def _csv_text(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in rows:
        w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(audit._jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------------------
# commands

def cmd_generate(args) -> int:
    cfg = instances.GeneratorConfig(cardinality_fraction=args.cardinality_fraction,
                                    risk_aversion=args.risk_aversion)
    insts = instances.generate_many(args.family, args.n, instances.parse_seed_range(args.seeds), cfg)
    instances.save_instances(insts, _check_out(args.out, args.force))
    print(f"wrote {len(insts)} instance(s) to {args.out}")
    return 0


def cmd_encode(args) -> int:
    insts = instances.load_instances(args.instances)
    forms = ("penalty", "native") if args.formulation == "both" else (args.formulation,)
    lines = [encoding.dumps_report(encoding.support_report(i, f, args.penalty)) for i in insts for f in forms]
    _write_text(args.out, "\n".join(lines) + "\n", args.force)
    if args.qubo_out:
        q_lines = [json.dumps(encoding.build_penalty_qubo(i, args.penalty).to_dict(args.convention),
                              separators=(",", ":")) for i in insts]
        _write_text(args.qubo_out, "\n".join(q_lines) + "\n", args.force)
    return 0


def cmd_solve(args) -> int:
    insts = instances.load_instances(args.instances)
    spec = campaign.GridSpec(solvers=(args.solver,), budgets_s=(args.budget,), penalty_list=(args.penalty,),
                             deterministic=args.deterministic, sa_reads=args.reads, sa_sweeps=args.sweeps,
                             campaign_date=args.campaign_date)
    records = [campaign.run_cell(campaign.Cell(i.n, i.family, i.seed, args.solver, float(args.budget),
                                               float(args.penalty), args.seed), spec, instance=i)
               for i in insts]
    audit.save_runs(records, _check_out(args.out, args.force))
    failed = sum(r.status != "ok" for r in records)
    print(f"wrote {len(records)} record(s) to {args.out} ({failed} failed)")
    return 0


def cmd_campaign_run(args) -> int:
    if args.spec:
        spec = campaign.load_grid_spec(args.spec)
    else:
        spec = campaign.PRESETS[args.preset]
    if args.workers is not None:
        spec = campaign.GridSpec(**{**spec.__dict__, "workers": args.workers})
    runs_path = os.path.join(args.out, "runs.jsonl")
    if os.path.exists(runs_path) and not args.force:
        raise ConfigurationError(f"{runs_path} exists; pass --force to overwrite")
    records = campaign.run_grid(spec)
    paths = campaign.write_campaign(records, args.out, spec)
    failed = sum(r.status != "ok" for r in records)
    print(f"{len(records)} record(s), {failed} failed; wrote {', '.join(sorted(paths.values()))}")
    return 0


def _generated_at(args) -> str:
    if args.generated_at:
        return args.generated_at
    if args.deterministic:
        return "deterministic"
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def cmd_audit(args) -> int:
    records = audit.ingest_runs(args.runs, args.vendor_unit)
    anchors = audit.load_anchors(args.anchors) if args.anchors else {}
    reports = audit.load_support_reports(args.support) if args.support else []
    report = audit.build_audit_report(audit.group_cells(records), anchors, reports, _generated_at(args))
    _write_text(args.out, report.to_json() + "\n", args.force)
    if args.csv:
        _write_text(args.csv, _csv_text(audit.report_rows(report), audit.CSV_COLUMNS), args.force)
    return 0


def _paired_objectives(records, a: str, b: str):
    groups: dict[tuple, dict] = {}
    for r in records:
        if r.status == "ok" and r.solver_name in (a, b):
            groups.setdefault((r.n, r.family, r.seed, r.budget_s), {}).setdefault(r.solver_name, []).append(
                r.objective_value)
    keys = sorted(k for k, v in groups.items() if a in v and b in v)
    return keys, [float(np.mean(groups[k][a])) for k in keys], [float(np.mean(groups[k][b])) for k in keys]


def cmd_stats(args) -> int:
    records = audit.ingest_runs(args.runs, args.vendor_unit)
    if args.test == "wilcoxon":
        if not (args.solver_a and args.solver_b):
            raise ConfigurationError("wilcoxon needs --solver-a and --solver-b")
        out = {}
        ns = sorted({r.n for r in records}) if args.per_n else [None]
        for n in ns:
            subset = [r for r in records if n is None or r.n == n]
            _, a, b = _paired_objectives(subset, args.solver_a, args.solver_b)
            if not a:
                raise MissingDataError(f"no paired runs for {args.solver_a} vs {args.solver_b}")
            summary = stats.wilcoxon_summary(stats.PairedSample.from_arrays(a, b, args.solver_a, args.solver_b))
            out["all" if n is None else str(n)] = summary
        _write_text(args.out, _json_text(out), args.force)
    elif args.test == "dwell":
        rows, counts = stats.dwell_quality_table(records, args.grouping, args.resamples, seed=args.seed)
        _write_text(args.out, _csv_text(rows, stats.DWELL_COLUMNS), args.force)
        print(json.dumps(counts, sort_keys=True), file=sys.stderr)
    else:
        rows = stats.cell_variance_table(records)
        _write_text(args.out, _csv_text(rows), args.force)
    return 0


def _ff49_path(arg: str | None) -> str:
    if arg:
        return arg
    base = os.environ.get(DATA_DIR_ENV)
    if base:
        return os.path.join(base, FF49_FILENAME)
    raise ConfigurationError(f"no --ff49 path given and {DATA_DIR_ENV} is not set")


def cmd_finance(args) -> int:
    returns = finance.parse_ff49_daily(_ff49_path(args.ff49))
    if args.windows:
        reports, table = finance.overlay(returns, finance.load_windows(args.windows))
        _write_text(args.out, _csv_text(table, ("window", "qpu_n10", "qpu_n20", "qpu_n30", "baseline")), args.force)
        if args.reports:
            _write_text(args.reports, _json_text(reports), args.force)
    else:
        rows = finance.baseline_table(returns)
        vals = [r["sharpe_annual"] for r in rows if r["sharpe_annual"] is not None]
        rows.append({"window": "mean", "sharpe_annual": float(np.mean(vals)) if vals else None})
        _write_text(args.out, _csv_text(rows, ("window", "rebalance_date", "sharpe_annual", "max_drawdown", "psr",
                                               "n_obs")), args.force)
    return 0


def _gap_rows(records, oracle):
    groups: dict[tuple, list] = {}
    for r in records:
        f_star = oracle.get(r.instance_key)
        if r.status != "ok" or f_star is None or r.solver_name == "exact":
            continue
        groups.setdefault((r.n, r.solver_name), []).append(audit.metric_g_f(r.objective_value, f_star))
    solvers_ = sorted({s for _, s in groups})
    rows = []
    for n in sorted({n for n, _ in groups}):
        row = {"n": n}
        for s in solvers_:
            v = groups.get((n, s))
            row[s] = None if v is None else f"{np.mean(v):.6f}"
        rows.append(row)
    return rows, ["n"] + solvers_


def cmd_report(args) -> int:
    records = audit.ingest_runs(args.runs, args.vendor_unit)
    oracle = campaign.oracle_map(records)
    if args.anchors:
        oracle.update({k: a.f_star for k, a in audit.load_anchors(args.anchors).items()})
    if args.table == "gap":
        rows, cols = _gap_rows(records, oracle)
    elif args.table == "timing":
        groups: dict[tuple, list] = {}
        for r in records:
            if r.status == "ok" and r.timing_valid():
                groups.setdefault((r.solver_name, r.n), []).append(r)
        rows = []
        for (s, n), rs in sorted(groups.items()):
            t_run = float(np.mean([r.t_run_s for r in rs]))
            t_qpu = float(np.mean([r.t_qpu_s for r in rs]))
            rows.append({"solver": s, "n": n, "t_run_s": t_run, "t_qpu_s": t_qpu,
                         "r_qpu_pct": 100.0 * t_qpu / t_run})
        cols = ["solver", "n", "t_run_s", "t_qpu_s", "r_qpu_pct"]
    elif args.table == "ablation":
        rows, summary, unmatched = campaign.ablation_compare(records, oracle)
        cols = None
        print(json.dumps({**summary, "unmatched": len(unmatched)}, sort_keys=True), file=sys.stderr)
    elif args.table == "objective":
        groups = {}
        for r in records:
            if r.status == "ok":
                groups.setdefault((r.n, r.solver_name), []).append(r.objective_value)
        rows = [{"n": n, "solver": s, "objective_mean": float(np.mean(v)), "runs": len(v)}
                for (n, s), v in sorted(groups.items())]
        cols = ["n", "solver", "objective_mean", "runs"]
    else:
        groups = {}
        for r in records:
            f_star = oracle.get(r.instance_key)
            if r.status != "ok" or f_star is None or audit.formulation_of(r.solver_name) != "penalty":
                continue
            groups.setdefault((r.n, float(r.extra.get("penalty_a", 0.0)), r.solver_name), []).append(r)
        rows = []
        for (n, a, s), rs in sorted(groups.items()):
            gaps = [audit.metric_g_f(r.objective_value, oracle[r.instance_key]) for r in rs]
            raw = [r.feasible_raw for r in rs if r.feasible_raw is not None]
            rows.append({"n": n, "penalty_a": a, "solver": s, "gap_mean": float(np.mean(gaps)),
                         "raw_feasible_rate": float(np.mean(raw)) if raw else None, "runs": len(rs)})
        cols = ["n", "penalty_a", "solver", "gap_mean", "raw_feasible_rate", "runs"]
    _write_text(args.out, _csv_text(rows, cols), args.force)
    return 0


def cmd_overhead(args) -> int:
    topo = embedding_model.TOPOLOGIES[args.topology]
    rows = embedding_model.overhead_table(args.n, topo)
    _write_text(args.out, _csv_text(rows, embedding_model.OVERHEAD_COLUMNS), args.force)
    return 0


def cmd_plot_data(args) -> int:
    records = audit.ingest_runs(args.runs)
    _check_out(args.out, args.force)
    campaign.emit_plot_data(records, args.kind, args.out)
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvtaudit", description="Cardinality-constrained MVT benchmark and audit toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def out_args(sp, required=True):
        sp.add_argument("--out", required=required, help="output path" + ("" if required else " (default stdout)"))
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    g = sub.add_parser("generate", help="generate problem instances")
    g.add_argument("--family", type=_str_list, required=True, help="comma list of diagonal, block, dense")
    g.add_argument("--n", type=_int_list, required=True, help="comma list of sizes")
    g.add_argument("--seeds", default="0", help="e.g. 0..2 or 1,4,5")
    g.add_argument("--cardinality-fraction", type=float, default=0.3)
    g.add_argument("--risk-aversion", type=float, default=0.5)
    out_args(g)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("encode", help="support/density reports and penalty QUBOs")
    e.add_argument("--instances", required=True)
    e.add_argument("--formulation", choices=("penalty", "native", "both"), default="both")
    e.add_argument("--penalty", type=float, default=encoding.DEFAULT_PENALTY)
    e.add_argument("--qubo-out")
    e.add_argument("--convention", choices=("symmetric", "upper"), default="symmetric")
    out_args(e)
    e.set_defaults(func=cmd_encode)

    s = sub.add_parser("solve", help="run one solver on every instance in a file")
    s.add_argument("--instances", required=True)
    s.add_argument("--solver", choices=solvers.SOLVER_NAMES, required=True)
    s.add_argument("--budget", type=float, default=5.0)
    s.add_argument("--penalty", type=float, default=encoding.DEFAULT_PENALTY)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--reads", type=int, default=200)
    s.add_argument("--sweeps", type=int, default=1000)
    s.add_argument("--deterministic", action="store_true", help="iteration-capped solvers, nominal timings")
    s.add_argument("--campaign-date")
    out_args(s)
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("campaign", help="experiment grids")
    csub = c.add_subparsers(dest="campaign_command", required=True, metavar="action")
    cr = csub.add_parser("run", help="run a grid spec or preset")
    src = cr.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec")
    src.add_argument("--preset", choices=sorted(campaign.PRESETS))
    cr.add_argument("--out", required=True, help="output directory")
    cr.add_argument("--workers", type=int)
    cr.add_argument("--force", action="store_true")
    cr.set_defaults(func=cmd_campaign_run)

    a = sub.add_parser("audit", help="build the audit report from run records")
    a.add_argument("--runs", required=True)
    a.add_argument("--anchors")
    a.add_argument("--support")
    a.add_argument("--vendor-unit", choices=("s", "ms", "us"))
    a.add_argument("--csv")
    a.add_argument("--generated-at")
    a.add_argument("--deterministic", action="store_true")
    out_args(a)
    a.set_defaults(func=cmd_audit)

    st = sub.add_parser("stats", help="paired tests, dwell correlation, cell variance")
    st.add_argument("--runs", required=True)
    st.add_argument("--test", choices=("wilcoxon", "dwell", "variance"), required=True)
    st.add_argument("--solver-a")
    st.add_argument("--solver-b")
    st.add_argument("--per-n", action="store_true")
    st.add_argument("--grouping", choices=("within_cell", "cross_cell"), default="within_cell")
    st.add_argument("--resamples", type=int, default=2000)
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--vendor-unit", choices=("s", "ms", "us"))
    out_args(st, required=False)
    st.set_defaults(func=cmd_stats)

    f = sub.add_parser("finance", help="out-of-sample Sharpe overlay on FF-49 daily returns")
    f.add_argument("--ff49", help=f"data file (default ${DATA_DIR_ENV}/{FF49_FILENAME})")
    f.add_argument("--windows", help="rebalance-window JSONL; omit for the 1/N baseline only")
    f.add_argument("--reports", help="per-configuration SharpeReport JSON")
    out_args(f)
    f.set_defaults(func=cmd_finance)

    r = sub.add_parser("report", help="summary tables from stored records")
    r.add_argument("--runs", required=True)
    r.add_argument("--table", choices=("gap", "timing", "ablation", "objective", "penalty"), required=True)
    r.add_argument("--anchors")
    r.add_argument("--vendor-unit", choices=("s", "ms", "us"))
    out_args(r, required=False)
    r.set_defaults(func=cmd_report)

    o = sub.add_parser("overhead", help="embedding lower-bound table")
    o.add_argument("--n", type=_int_list, required=True)
    o.add_argument("--topology", choices=sorted(embedding_model.TOPOLOGIES), default="pegasus")
    out_args(o, required=False)
    o.set_defaults(func=cmd_overhead)

    pd = sub.add_parser("plot-data", help="CSV inputs for figures")
    pd.add_argument("--runs", required=True)
    pd.add_argument("--kind", choices=sorted(campaign.PLOT_KINDS), required=True)
    out_args(pd)
    pd.set_defaults(func=cmd_plot_data)
    return p


def _report_error(exc: Exception, code: str) -> None:
    print(f"error: {exc}", file=sys.stderr)
    print(json.dumps({"error": code, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ToolkitError as exc:
        _report_error(exc, exc.code)
        return 1
    except OSError as exc:
        _report_error(exc, "io")
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Experiment grids over instances x solvers x budgets x penalties.

A grid spec is a small key-value file::

    n_list = 10, 16, 22
    families = diagonal, block, dense
    seeds = 0..2
    solvers = exact, sa-penalty, tabu-penalty, swap-native
    budgets_s = 5
    penalty_list = 4
    deterministic = true
    workers = 4

Deterministic mode runs the budgeted solvers under an iteration cap
proportional to the budget, so every output byte is reproducible.  Its timing
fields hold the nominal budget rather than a measurement.
"""
from __future__ import annotations

import configparser
import csv
import datetime as dt
import json
import logging
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from os import PathLike
from typing import Iterable, Mapping, Sequence

import numpy as np

from .audit import RunRecord, check_record, normalize_budget, save_runs
from .encoding import build_penalty_qubo, dumps_report, support_report
from .errors import ConfigurationError
from .instances import FAMILIES, ProblemInstance, generate, parse_seed_range
from .solvers import (ORACLE_CAP, SOLVER_NAMES, AnnealConfig, SolveResult, exact_solve, feasible_swap_search,
                      simulated_annealing, tabu_search)

log = logging.getLogger(__name__)

TOOL_VERSION = "0.1.0"
# iteration caps per second of budget in deterministic mode
TABU_ITERS_PER_S = 4000
SWAP_ITERS_PER_S = 400
MATCH_TOL = 5e-4
OPT_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    n_list: tuple = (10, 16, 22)
    families: tuple = FAMILIES
    seeds: tuple = (0, 1, 2)
    solvers: tuple = SOLVER_NAMES
    budgets_s: tuple = (5.0,)
    penalty_list: tuple = (4.0,)
    deterministic: bool = True
    workers: int = 1
    repeats: int = 1
    sa_reads: int = 200
    sa_sweeps: int = 1000
    tabu_iters_per_s: int = TABU_ITERS_PER_S
    swap_iters_per_s: int = SWAP_ITERS_PER_S
    campaign_date: str | None = None

    def validate(self) -> None:
        bad = [f for f in self.families if f not in FAMILIES]
        if bad:
            raise ConfigurationError(f"unknown families: {bad}")
        bad = [s for s in self.solvers if s not in SOLVER_NAMES]
        if bad:
            raise ConfigurationError(f"unknown solvers: {bad}")
        if not self.n_list or min(self.n_list) < 2:
            raise ConfigurationError("n_list must contain sizes >= 2")
        if any(b <= 0 for b in self.budgets_s) or not self.budgets_s:
            raise ConfigurationError("budgets_s must be positive")
        if not self.penalty_list:
            raise ConfigurationError("penalty_list must not be empty")
        if self.workers < 1 or self.repeats < 1:
            raise ConfigurationError("workers and repeats must be >= 1")
        if "exact" in self.solvers:
            for n in self.n_list:
                states = math.comb(n, max(1, math.floor(0.3 * n + 0.5)))
                if states > ORACLE_CAP:
                    raise ConfigurationError(f"exact oracle at n={n} needs {states} states (cap {ORACLE_CAP})")

    @property
    def size(self) -> int:
        return (len(self.n_list) * len(self.families) * len(self.seeds) * len(self.solvers)
                * len(self.budgets_s) * len(self.penalty_list) * self.repeats)


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.replace(";", ",").split(",") if t.strip()]


def parse_grid_spec(text: str) -> GridSpec:
    parser = configparser.ConfigParser()
    try:
        parser.read_string("[grid]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"unreadable grid spec ({exc})") from exc
    sec = parser["grid"]
    known = set(GridSpec.__dataclass_fields__)
    unknown = set(sec) - known
    if unknown:
        raise ConfigurationError(f"unknown grid keys: {sorted(unknown)}")
    kw = {}
    try:
        if "n_list" in sec:
            kw["n_list"] = tuple(int(v) for v in _split(sec["n_list"]))
        if "families" in sec:
            kw["families"] = tuple(_split(sec["families"]))
        if "seeds" in sec:
            kw["seeds"] = tuple(parse_seed_range(sec["seeds"]))
        if "solvers" in sec:
            kw["solvers"] = tuple(_split(sec["solvers"]))
        if "budgets_s" in sec:
            kw["budgets_s"] = tuple(normalize_budget(v) for v in _split(sec["budgets_s"]))
        if "penalty_list" in sec:
            kw["penalty_list"] = tuple(float(v) for v in _split(sec["penalty_list"]))
        if "deterministic" in sec:
            kw["deterministic"] = sec.getboolean("deterministic")
        for key in ("workers", "repeats", "sa_reads", "sa_sweeps", "tabu_iters_per_s", "swap_iters_per_s"):
            if key in sec:
                kw[key] = sec.getint(key)
        if "campaign_date" in sec:
            kw["campaign_date"] = sec["campaign_date"].strip()
    except ValueError as exc:
        raise ConfigurationError(f"bad grid value ({exc})") from exc
    spec = GridSpec(**kw)
    spec.validate()
    return spec


def load_grid_spec(path: str | PathLike) -> GridSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_grid_spec(fh.read())


PRESETS = {
    "desk": GridSpec(),
    "penalty-sweep": GridSpec(n_list=(10, 16), families=FAMILIES, seeds=(0, 1), solvers=("exact", "sa-penalty", "tabu-penalty"),
                              penalty_list=(2.0, 4.0, 8.0)),
    "budget-sweep": GridSpec(n_list=(16, 22), solvers=("exact", "tabu-penalty", "swap-native"),
                             budgets_s=(0.05, 0.5, 5.0)),
    "ablation": GridSpec(n_list=(10, 15, 20), solvers=("exact", "tabu-penalty", "swap-native")),
}


# ---------------------------------------------------------------------------
# execution

@dataclass(frozen=True)
class Cell:
    n: int
    family: str
    seed: int
    solver: str
    budget_s: float
    penalty_a: float
    repeat: int = 0

    @property
    def sort_key(self) -> tuple:
        return (self.n, self.family, self.seed, self.solver, self.budget_s, self.penalty_a, self.repeat)


def grid_cells(spec: GridSpec) -> list[Cell]:
    cells = [Cell(n, fam, seed, solver, float(b), float(a), rep)
             for n in spec.n_list for fam in spec.families for seed in spec.seeds
             for solver in spec.solvers for b in spec.budgets_s for a in spec.penalty_list
             for rep in range(spec.repeats)]
    return sorted(cells, key=lambda c: c.sort_key)


def _solver_seed(cell: Cell) -> int:
    return int(np.random.SeedSequence([cell.seed, cell.repeat]).generate_state(1)[0])


def _solve(cell: Cell, inst: ProblemInstance, spec: GridSpec) -> SolveResult:
    seed = _solver_seed(cell)
    if cell.solver == "exact":
        return exact_solve(inst)
    if cell.solver == "sa-penalty":
        return simulated_annealing(build_penalty_qubo(inst, cell.penalty_a),
                                   inst, AnnealConfig(reads=spec.sa_reads, sweeps=spec.sa_sweeps, seed=seed))
    if cell.solver == "tabu-penalty":
        cap = max(1, round(spec.tabu_iters_per_s * cell.budget_s)) if spec.deterministic else None
        return tabu_search(build_penalty_qubo(inst, cell.penalty_a), inst, budget_s=cell.budget_s, seed=seed,
                           max_iter=cap)
    if cell.solver == "swap-native":
        cap = max(1, round(spec.swap_iters_per_s * cell.budget_s)) if spec.deterministic else None
        return feasible_swap_search(inst, budget_s=cell.budget_s, seed=seed, max_iter=cap)
    raise ConfigurationError(f"unknown solver {cell.solver!r}")


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def run_cell(cell: Cell, spec: GridSpec, instance: ProblemInstance | None = None) -> RunRecord:
    """Run one cell; any exception becomes a ``status="failed"`` record.

    ``instance`` overrides the generated instance (e.g. one read from a file).
    """
    base = dict(solver_name=cell.solver, n=cell.n, family=cell.family, budget_s=normalize_budget(cell.budget_s),
                seed=cell.seed, solver_identity=f"mvtaudit-{TOOL_VERSION}/{cell.solver}")
    stamp = spec.campaign_date or "deterministic"
    start = stamp if spec.deterministic else _now()
    try:
        inst = instance if instance is not None else generate(cell.family, cell.n, cell.seed)
        res = _solve(cell, inst, spec)
    except Exception as exc:  # noqa: BLE001 - a failed cell must not abort the grid
        log.warning("cell %s failed: %s", cell, exc)
        return RunRecord(**base, status="failed", campaign_start=start,
                         campaign_end=stamp if spec.deterministic else _now(),
                         extra={"penalty_a": cell.penalty_a, "repeat": cell.repeat, "error": repr(exc),
                                "traceback": "" if spec.deterministic else traceback.format_exc(limit=3)})
    raw = res.raw_best or res.best
    wall = cell.budget_s if spec.deterministic else res.wall_clock_s
    native = cell.solver in ("exact", "swap-native")
    extra = {"penalty_a": cell.penalty_a, "repeat": cell.repeat, "iterations": res.iterations,
             "proven_optimal": res.proven_optimal}
    for key in ("raw_feasible_fraction", "restarts"):
        if key in res.extra:
            extra[key] = res.extra[key]
    rec = RunRecord(
        **base,
        objective_value=res.best.objective,
        t_run_s=wall, t_charge_s=wall, t_qpu_s=0.0,
        problem_id=inst.instance_id,
        campaign_start=start, campaign_end=stamp if spec.deterministic else _now(),
        k=inst.k,
        feasible_raw=True if native else raw.feasible,
        feasible_post=res.best.feasible,
        z=list(res.best.z),
        extra=extra,
    )
    return check_record(rec)


def _run_chunk(args):
    cells, spec = args
    return [run_cell(c, spec) for c in cells]


def run_grid(spec: GridSpec, workers: int | None = None) -> list[RunRecord]:
    """Run every cell of the grid; output order is canonical, not completion order.

    Exact cells are grouped per instance so the oracle enumerates once and its
    result is reused across budgets, penalties and repeats.
    """
    spec.validate()
    workers = spec.workers if workers is None else workers
    cells = grid_cells(spec)
    exact_groups: dict[tuple, list] = {}
    jobs = []
    for c in cells:
        if c.solver == "exact":
            exact_groups.setdefault((c.n, c.family, c.seed), []).append(c)
        else:
            jobs.append([c])
    jobs.extend(exact_groups.values())
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_cached, [(j, spec) for j in jobs]))
    else:
        chunks = [_run_cached((j, spec)) for j in jobs]
    records = [r for chunk in chunks for r in chunk]
    return sorted(records, key=_record_sort_key)


def _run_cached(args):
    cells, spec = args
    if len(cells) == 1 or cells[0].solver != "exact":
        return _run_chunk(args)
    first = run_cell(cells[0], spec)
    out = [first]
    for c in cells[1:]:
        budget = normalize_budget(c.budget_s)
        timing = {"t_run_s": budget, "t_charge_s": budget} if spec.deterministic else {}
        rec = replace(first, budget_s=budget, extra={**first.extra, "penalty_a": c.penalty_a, "repeat": c.repeat,
                                                     "cached": True},
                      flags=list(first.flags), **timing)
        out.append(rec)
    return out


def _record_sort_key(r: RunRecord) -> tuple:
    return (r.n, r.family, r.seed if r.seed is not None else -1, r.solver_name, r.budget_s,
            float(r.extra.get("penalty_a", 0.0)), int(r.extra.get("repeat", 0)))


def write_campaign(records: Sequence[RunRecord], out_dir: str | PathLike, spec: GridSpec) -> dict:
    """Write runs, oracle anchors and support reports for the audit step."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, f"{name}.jsonl") for name in ("runs", "anchors", "support")}
    save_runs(records, paths["runs"])
    seen = set()
    with open(paths["anchors"], "w", encoding="utf-8") as fh:
        for r in records:
            if r.solver_name != "exact" or r.status != "ok" or r.instance_key in seen:
                continue
            seen.add(r.instance_key)
            fh.write(json.dumps({"n": r.n, "family": r.family, "seed": r.seed, "f_star": r.objective_value,
                                 "anchor_solver": "exact", "anchor_wall_clock_s": r.t_run_s,
                                 "anchor_version": r.solver_identity}, separators=(",", ":")) + "\n")
    with open(paths["support"], "w", encoding="utf-8") as fh:
        for n in spec.n_list:
            for fam in spec.families:
                inst = generate(fam, n, spec.seeds[0])
                for form in ("penalty", "native"):
                    fh.write(dumps_report(support_report(inst, form, spec.penalty_list[0])) + "\n")
    return paths


# ---------------------------------------------------------------------------
# comparison tables and plot data

def oracle_map(records: Iterable[RunRecord]) -> dict:
    return {r.instance_key: r.objective_value for r in records if r.solver_name == "exact" and r.status == "ok"}


def ablation_compare(records: Iterable[RunRecord], oracle_results: Mapping, a_name: str = "tabu-penalty",
                     b_name: str = "swap-native"):
    """Per-run deltas of two solvers against the oracle and against each other.

    Returns ``(rows, summary, unmatched)``.  Runs are matched on instance,
    budget, penalty and repeat; anything without a partner or an oracle value
    is listed in ``unmatched``.
    """
    def key(r):
        return (r.n, r.family, r.seed, r.budget_s, float(r.extra.get("penalty_a", 0.0)), int(r.extra.get("repeat", 0)))

    by_solver: dict[str, dict] = {a_name: {}, b_name: {}}
    for r in records:
        if r.status == "ok" and r.solver_name in by_solver:
            by_solver[r.solver_name][key(r)] = r.objective_value
    a_runs, b_runs = by_solver[a_name], by_solver[b_name]
    rows, unmatched = [], []
    for k in sorted(set(a_runs) | set(b_runs)):
        f_star = oracle_results.get(k[:3])
        if k not in a_runs or k not in b_runs or f_star is None:
            unmatched.append(k)
            continue
        fa, fb = a_runs[k], b_runs[k]
        rows.append({"n": k[0], "family": k[1], "seed": k[2], "budget_s": k[3], "oracle": f_star,
                     a_name: fa, b_name: fb, f"{a_name}_minus_oracle": fa - f_star,
                     f"{b_name}_minus_oracle": fb - f_star, "delta": fa - fb})
    if not rows:
        return [], {"cells": 0}, unmatched
    d = np.array([r["delta"] for r in rows])
    ga = np.array([r[f"{a_name}_minus_oracle"] for r in rows])
    gb = np.array([r[f"{b_name}_minus_oracle"] for r in rows])
    summary = {
        "cells": len(rows),
        "mean_delta": float(d.mean()),
        "mean_abs_delta": float(np.abs(d).mean()),
        "max_abs_delta": float(np.abs(d).max()),
        "within_tol": int(np.sum(np.abs(d) <= MATCH_TOL)),
        f"{a_name}_optimal_rate": float(np.mean(ga <= OPT_TOL * np.maximum(1.0, np.abs([r["oracle"] for r in rows])))),
        f"{b_name}_optimal_rate": float(np.mean(gb <= OPT_TOL * np.maximum(1.0, np.abs([r["oracle"] for r in rows])))),
        f"mean_{a_name}_minus_oracle": float(ga.mean()),
        f"mean_{b_name}_minus_oracle": float(gb.mean()),
    }
    return rows, summary, unmatched


PLOT_KINDS = {
    "budget_curves": ("n", "solver", "budget_s", "objective"),
    "gap_vs_n": ("n", "solver", "gap_mean", "gap_std"),
    "repeat_box": ("n", "family", "budget_s", "solver", "objectives"),
}


def plot_rows(records: Sequence[RunRecord], kind: str) -> list[dict]:
    if kind not in PLOT_KINDS:
        raise ConfigurationError(f"unknown plot kind {kind!r}; choose from {sorted(PLOT_KINDS)}")
    ok = [r for r in records if r.status == "ok" and r.objective_value is not None]
    if kind == "budget_curves":
        groups: dict[tuple, list] = {}
        for r in ok:
            groups.setdefault((r.n, r.solver_name, r.budget_s), []).append(r.objective_value)
        return [{"n": n, "solver": s, "budget_s": b, "objective": float(np.mean(v))}
                for (n, s, b), v in sorted(groups.items())]
    if kind == "gap_vs_n":
        oracle = oracle_map(ok)
        groups = {}
        for r in ok:
            f_star = oracle.get(r.instance_key)
            if f_star is None or r.solver_name == "exact":
                continue
            groups.setdefault((r.n, r.solver_name), []).append((r.objective_value - f_star) / max(1.0, abs(f_star)))
        return [{"n": n, "solver": s, "gap_mean": float(np.mean(v)),
                 "gap_std": float(np.std(v, ddof=1)) if len(v) > 1 else 0.0}
                for (n, s), v in sorted(groups.items())]
    groups = {}
    for r in ok:
        groups.setdefault(r.cell_key, []).append(r.objective_value)
    return [{"n": n, "family": fam, "budget_s": b, "solver": s, "objectives": " ".join(repr(x) for x in v)}
            for (n, fam, b, s), v in sorted(groups.items())]


def emit_plot_data(records: Sequence[RunRecord], kind: str, path: str | PathLike) -> list[dict]:
    rows = plot_rows(records, kind)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=PLOT_KINDS[kind], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows

import csv

import pytest

from mvtaudit.audit import RunRecord, ingest_runs
from mvtaudit.campaign import (
    PRESETS,
    GridSpec,
    ablation_compare,
    emit_plot_data,
    grid_cells,
    oracle_map,
    parse_grid_spec,
    run_cell,
    run_grid,
    write_campaign,
)
from mvtaudit.errors import ConfigurationError

SMALL = """
n_list = 8, 10
families = diagonal, dense
seeds = 0..1
solvers = exact, tabu-penalty, swap-native, sa-penalty
budgets_s = 0.1, 0.2
penalty_list = 2, 4
deterministic = true
workers = 1
sa_reads = 10
sa_sweeps = 50
"""


def test_parse_spec():
    spec = parse_grid_spec(SMALL)
    assert spec.n_list == (8, 10)
    assert spec.seeds == (0, 1)
    assert spec.budgets_s == (0.1, 0.2)
    assert spec.penalty_list == (2.0, 4.0)
    assert spec.deterministic is True
    assert spec.size == 2 * 2 * 2 * 4 * 2 * 2


@pytest.mark.parametrize("text", ["solvers = gurobi", "families = sparse", "colour = red", "n_list = 40\nsolvers = exact",
                                  "budgets_s = 0", "workers = two"])
def test_parse_spec_rejects(text):
    with pytest.raises(ConfigurationError):
        parse_grid_spec(text)


def test_grid_completeness_and_order():
    spec = parse_grid_spec(SMALL)
    recs = run_grid(spec)
    assert len(recs) == spec.size == len(grid_cells(spec))
    assert all(r.status == "ok" for r in recs)
    keys = [(r.n, r.family, r.seed, r.solver_name, r.budget_s, r.extra["penalty_a"]) for r in recs]
    assert keys == sorted(keys)
    for r in recs:
        assert r.t_qpu_s == 0.0 and r.t_run_s == r.t_charge_s == r.budget_s
        assert r.feasible_post


def test_exact_cached_across_budgets():
    spec = parse_grid_spec(SMALL)
    exact = [r for r in run_grid(spec) if r.solver_name == "exact"]
    by_inst = {}
    for r in exact:
        by_inst.setdefault(r.instance_key, set()).add(r.objective_value)
    assert all(len(v) == 1 for v in by_inst.values())


def test_deterministic_bytes_across_worker_counts(tmp_path):
    spec = parse_grid_spec(SMALL)
    a = write_campaign(run_grid(spec, workers=1), tmp_path / "a", spec)
    b = write_campaign(run_grid(spec, workers=3), tmp_path / "b", spec)
    for key in a:
        with open(a[key], "rb") as fa, open(b[key], "rb") as fb:
            assert fa.read() == fb.read()


def test_failed_cell_recorded_not_raised():
    spec = GridSpec(n_list=(6,), families=("dense",), seeds=(0,), solvers=("exact",))
    cell = grid_cells(spec)[0]
    bad = type(cell)(n=1, family="dense", seed=0, solver="exact", budget_s=1.0, penalty_a=4.0)
    rec = run_cell(bad, spec)
    assert rec.status == "failed" and "error" in rec.extra


def test_non_deterministic_measures_wall_clock():
    spec = GridSpec(n_list=(8,), families=("dense",), seeds=(0,), solvers=("swap-native",), budgets_s=(0.05,),
                    deterministic=False)
    rec = run_grid(spec)[0]
    assert 0.04 < rec.t_run_s < 1.0
    assert rec.campaign_start != "deterministic"


def test_presets_valid():
    for spec in PRESETS.values():
        spec.validate()
    assert PRESETS["penalty-sweep"].penalty_list == (2.0, 4.0, 8.0)
    assert PRESETS["budget-sweep"].budgets_s == (0.05, 0.5, 5.0)


def _r(solver, seed, obj, budget=5.0):
    return RunRecord(solver_name=solver, n=10, family="dense", budget_s=budget, objective_value=obj, seed=seed,
                     extra={"penalty_a": 4.0, "repeat": 0})


def test_ablation_identical_solvers_zero_delta():
    recs = [_r(s, i, -0.1 * i) for i in range(3) for s in ("exact", "tabu-penalty", "swap-native")]
    rows, summary, unmatched = ablation_compare(recs, oracle_map(recs))
    assert len(rows) == 3 and not unmatched
    assert summary["mean_abs_delta"] == 0.0 and summary["max_abs_delta"] == 0.0
    assert summary["tabu-penalty_optimal_rate"] == 1.0


def test_ablation_deltas_and_unmatched():
    recs = [_r("exact", 0, -0.5), _r("tabu-penalty", 0, -0.49), _r("swap-native", 0, -0.5),
            _r("tabu-penalty", 1, -0.3)]
    rows, summary, unmatched = ablation_compare(recs, oracle_map(recs))
    assert rows[0]["delta"] == pytest.approx(0.01)
    assert summary["within_tol"] == 0
    assert unmatched == [(10, "dense", 1, 5.0, 4.0, 0)]


def test_ablation_empty():
    assert ablation_compare([], {}) == ([], {"cells": 0}, [])


@pytest.mark.parametrize("kind,cols", [("budget_curves", ["n", "solver", "budget_s", "objective"]),
                                       ("gap_vs_n", ["n", "solver", "gap_mean", "gap_std"]),
                                       ("repeat_box", ["n", "family", "budget_s", "solver", "objectives"])])
def test_plot_data(tmp_path, kind, cols):
    spec = parse_grid_spec(SMALL)
    recs = run_grid(spec)
    out = tmp_path / f"{kind}.csv"
    emit_plot_data(recs, kind, out)
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == cols
    if kind == "gap_vs_n":
        assert all(float(r["gap_mean"]) >= -1e-12 for r in rows)


def test_campaign_outputs_feed_audit(tmp_path):
    spec = parse_grid_spec(SMALL)
    paths = write_campaign(run_grid(spec), tmp_path, spec)
    assert len(ingest_runs(paths["runs"])) == spec.size

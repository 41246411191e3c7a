"""Operational decomposition audit over solver telemetry.

Input is a JSONL file of :class:`RunRecord` objects; output is an audit
report with four per-cell metrics and a seven-item reporting checklist:

* M1 ``r_qpu`` - QPU access time over total run time.
* M2 ``g_f`` - objective gap to a classical anchor, denominator ``max(1, |f*|)``.
* M3 ``d_amp`` - encoded edge count over original covariance edge count.
* M4 ``v_service`` - sample variance of final objectives over >= 10 repeats.

Checklist items P1-P7 cover timing completeness, r_qpu distribution, anchor
gap, density amplification, feasibility before/after repair, service
variance and solver identity/campaign window.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from dataclasses import asdict, dataclass, field
from os import PathLike
from typing import Iterable, Mapping, Sequence

import numpy as np

from .embedding_model import TOPOLOGIES, TopologySpec, embedding_lower_bound
from .encoding import SupportReport
from .errors import InvalidRecordError, ParseError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MIN_SERVICE_REPS = 10
MIN_IQR_SAMPLE = 2
VERDICT_ORDER = {"fail": 0, "warn": 1, "pass": 2}

TIMING_FIELDS = ("t_run_s", "t_charge_s", "t_qpu_s")
# vendor sampleset.info keys -> canonical seconds fields
VENDOR_TIMING = {"run_time": "t_run_s", "charge_time": "t_charge_s", "qpu_access_time": "t_qpu_s"}
_UNIT_SCALE = {"s": 1.0, "ms": 1e-3, "us": 1e-6}
REQUIRED_FIELDS = ("solver_name", "n", "family", "budget_s")

CAVEATS = (
    "r_qpu bounds the wall-clock share spent on QPU access; it is not a measure of "
    "the QPU's causal contribution to solution quality.",
    "Hosted solvers change internally between versions; results apply only to the "
    "recorded solver identity and campaign window and must be re-audited after a version change.",
    "Direct-QPU results depend on the working graph and calibration cycle in force at "
    "submission; runs from different calibration cycles are not directly comparable.",
    "t_run is the service-side wall clock; client-observed latency (network, queueing) is "
    "larger, so r_qpu overstates the QPU share of user-visible time.",
    "No latency, queue-depth or service-level metrics are covered.",
)


@dataclass
class RunRecord:
    solver_name: str
    n: int
    family: str
    budget_s: float
    objective_value: float | None = None
    t_run_s: float | None = None
    t_charge_s: float | None = None
    t_qpu_s: float | None = None
    problem_id: str | None = None
    solver_identity: str | None = None
    campaign_start: str | None = None
    campaign_end: str | None = None
    seed: int | None = None
    k: int | None = None
    feasible_raw: bool | None = None
    feasible_post: bool | None = None
    z: list | None = None
    extra: dict = field(default_factory=dict)
    status: str = "ok"
    flags: list = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    @property
    def cell_key(self) -> tuple:
        return (self.n, self.family, self.budget_s, self.solver_name)

    @property
    def instance_key(self) -> tuple:
        return (self.n, self.family, self.seed)

    def has_timing(self) -> bool:
        return all(getattr(self, f) is not None for f in TIMING_FIELDS)

    def timing_valid(self) -> bool:
        return self.t_run_s is not None and self.t_qpu_s is not None and self.t_run_s > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        order = ["schema_version", "problem_id", "solver_name", "solver_identity", "campaign_start",
                 "campaign_end", "n", "family", "seed", "k", "budget_s", "t_run_s", "t_charge_s",
                 "t_qpu_s", "objective_value", "feasible_raw", "feasible_post", "z", "status",
                 "flags", "extra"]
        return {key: d[key] for key in order}


def normalize_budget(b) -> float:
    return round(float(b), 3)


def check_record(rec: RunRecord) -> RunRecord:
    """Attach invariant flags; the record is kept either way."""
    flags = [f for f in rec.flags if f not in ("t_run_nonpositive", "t_qpu_negative", "t_qpu_gt_t_run",
                                               "phys_below_bound")]
    if rec.t_run_s is not None and rec.t_run_s <= 0:
        flags.append("t_run_nonpositive")
    if rec.t_qpu_s is not None and rec.t_qpu_s < 0:
        flags.append("t_qpu_negative")
    if rec.t_run_s is not None and rec.t_qpu_s is not None and rec.t_qpu_s > rec.t_run_s:
        flags.append("t_qpu_gt_t_run")
    phys = rec.extra.get("phys_qubits")
    if phys is not None:
        topo = _record_topology(rec.extra)
        if topo is not None and phys < embedding_lower_bound(rec.n, topo):
            flags.append("phys_below_bound")
    rec.flags = flags
    return rec


def _record_topology(extra: Mapping) -> TopologySpec | None:
    if "degree" in extra:
        return TopologySpec(str(extra.get("topology", "custom")), int(extra["degree"]))
    name = str(extra.get("topology", "")).lower()
    return TOPOLOGIES.get(name)


def record_from_dict(d: Mapping, vendor_unit: str | None = None) -> RunRecord:
    """Build a record from one JSON object.

    Vendor timing keys (``run_time``, ``charge_time``, ``qpu_access_time``,
    optionally nested under ``timing``) are accepted only with an explicit
    ``vendor_unit`` of ``"s"``, ``"ms"`` or ``"us"``.
    """
    d = dict(d)
    missing = [f for f in REQUIRED_FIELDS if d.get(f) is None]
    if missing:
        raise InvalidRecordError(f"missing required field(s): {', '.join(missing)}")
    status = d.get("status", "ok")
    if status == "ok" and d.get("objective_value") is None:
        raise InvalidRecordError("missing required field(s): objective_value")
    timing = {f: d.get(f) for f in TIMING_FIELDS}
    vendor_src = dict(d.get("timing") or {})
    vendor_src.update({k: d[k] for k in VENDOR_TIMING if k in d})
    vendor = {k: v for k, v in vendor_src.items() if k in VENDOR_TIMING}
    if vendor:
        if vendor_unit is None:
            raise InvalidRecordError("vendor timing fields present but no unit given (use s, ms or us)")
        if vendor_unit not in _UNIT_SCALE:
            raise InvalidRecordError(f"unknown timing unit {vendor_unit!r}")
        scale = _UNIT_SCALE[vendor_unit]
        for key, val in vendor.items():
            if timing[VENDOR_TIMING[key]] is None and val is not None:
                timing[VENDOR_TIMING[key]] = float(val) * scale
    try:
        rec = RunRecord(
            solver_name=str(d["solver_name"]),
            n=int(d["n"]),
            family=str(d["family"]),
            budget_s=normalize_budget(d["budget_s"]),
            objective_value=None if d.get("objective_value") is None else float(d["objective_value"]),
            t_run_s=None if timing["t_run_s"] is None else float(timing["t_run_s"]),
            t_charge_s=None if timing["t_charge_s"] is None else float(timing["t_charge_s"]),
            t_qpu_s=None if timing["t_qpu_s"] is None else float(timing["t_qpu_s"]),
            problem_id=d.get("problem_id"),
            solver_identity=d.get("solver_identity") or None,
            campaign_start=d.get("campaign_start") or None,
            campaign_end=d.get("campaign_end") or None,
            seed=None if d.get("seed") is None else int(d["seed"]),
            k=None if d.get("k") is None else int(d["k"]),
            feasible_raw=d.get("feasible_raw"),
            feasible_post=d.get("feasible_post"),
            z=d.get("z"),
            extra=dict(d.get("extra") or {}),
            status=status,
            flags=list(d.get("flags") or []),
            schema_version=int(d.get("schema_version", SCHEMA_VERSION)),
        )
    except (TypeError, ValueError) as exc:
        raise InvalidRecordError(f"bad field value ({exc})") from exc
    return check_record(rec)


def load_runs(path: str | PathLike, vendor_unit: str | None = None):
    """Parse a run file. Returns ``(records, rejected)``.

    Malformed JSON raises :class:`ParseError` naming the line; records that
    parse but miss required fields go to ``rejected`` as ``(line, reason)``.
    """
    records, rejected = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=lineno, path=str(path)) from exc
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", line=lineno, path=str(path))
            try:
                records.append(record_from_dict(obj, vendor_unit))
            except InvalidRecordError as exc:
                rejected.append((lineno, str(exc)))
    return records, rejected


def ingest_runs(path: str | PathLike, vendor_unit: str | None = None) -> list[RunRecord]:
    records, rejected = load_runs(path, vendor_unit)
    for lineno, reason in rejected:
        log.warning("%s:%d: record rejected: %s", path, lineno, reason)
    return records


def save_runs(records: Iterable[RunRecord], path: str | PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), separators=(",", ":"), allow_nan=False))
            fh.write("\n")


# ---------------------------------------------------------------------------
# metrics

def metric_r_qpu(rec: RunRecord) -> float:
    if rec.t_run_s is None or rec.t_qpu_s is None:
        raise InvalidRecordError("r_qpu needs t_run_s and t_qpu_s")
    if rec.t_run_s <= 0:
        raise InvalidRecordError(f"t_run_s must be > 0, got {rec.t_run_s}")
    return rec.t_qpu_s / rec.t_run_s


def metric_g_f(f_s: float, f_star: float) -> float:
    return (f_s - f_star) / max(1.0, abs(f_star))


def metric_v_service(objectives: Sequence[float]) -> float | None:
    """Sample variance (divisor n-1); ``None`` when fewer than 10 values.

    Computed with exact rational arithmetic so identical inputs give exactly 0.
    """
    values = [float(v) for v in objectives]
    if len(values) < MIN_SERVICE_REPS:
        return None
    return float(statistics.variance(values))


# ---------------------------------------------------------------------------
# cells and report

@dataclass
class Anchor:
    f_star: float
    anchor_solver: str | None = None
    anchor_wall_clock_s: float | None = None
    anchor_version: str | None = None


@dataclass
class AuditCell:
    key: tuple
    records: list

    @property
    def n(self):
        return self.key[0]

    @property
    def family(self):
        return self.key[1]

    @property
    def budget_s(self):
        return self.key[2]

    @property
    def solver_name(self):
        return self.key[3]


@dataclass
class AuditReport:
    cells: list
    checklist: dict
    caveats: list
    generated_at: str | None = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "generated_at": self.generated_at,
            "cells": self.cells,
            "checklist": self.checklist,
            "caveats": list(self.caveats),
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=False, allow_nan=False) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def formulation_of(solver_name: str) -> str:
    """``"penalty"`` for BQM-style / direct-QPU solvers, ``"native"`` otherwise."""
    name = solver_name.lower()
    return "penalty" if any(tag in name for tag in ("penalty", "bqm", "qpu", "direct")) else "native"


def group_cells(records: Iterable[RunRecord]) -> list[AuditCell]:
    groups: dict[tuple, list] = {}
    for r in records:
        if r.status != "ok":
            continue
        groups.setdefault(r.cell_key, []).append(r)
    return [AuditCell(key=k, records=groups[k]) for k in sorted(groups)]


def _mean(xs):
    return float(np.mean(xs)) if len(xs) else None


def _cell_summary(cell: AuditCell, anchors: Mapping, reports: Sequence[SupportReport]) -> dict:
    recs = cell.records
    valid = [r for r in recs if r.timing_valid()]
    ratios = [metric_r_qpu(r) for r in valid]
    if ratios:
        q1, med, q3 = (float(v) for v in np.percentile(ratios, [25, 50, 75]))
        run_mean = float(np.mean([r.t_run_s for r in valid]))
        r_qpu = {
            "mean_of_ratios": float(np.mean(ratios)),
            "ratio_of_means": float(np.mean([r.t_qpu_s for r in valid])) / run_mean,
            "median": med,
            "q1": q1,
            "q3": q3,
            "iqr": q3 - q1,
            "count": len(ratios),
        }
    else:
        r_qpu = None
    charges = [r.t_charge_s for r in recs if r.t_charge_s is not None]
    timing = {
        "t_run_mean": _mean([r.t_run_s for r in recs if r.t_run_s is not None]),
        "t_charge_mean": _mean(charges),
        "t_qpu_mean": _mean([r.t_qpu_s for r in recs if r.t_qpu_s is not None]),
    }

    gaps, anchor_names, anchor_clocks = [], set(), []
    for r in recs:
        a = anchors.get(r.instance_key)
        if a is None or r.objective_value is None:
            continue
        gaps.append(metric_g_f(r.objective_value, a.f_star))
        if a.anchor_solver:
            anchor_names.add(a.anchor_solver)
        if a.anchor_wall_clock_s is not None:
            anchor_clocks.append(a.anchor_wall_clock_s)
    g_f = None
    if gaps:
        g_f = {
            "count": len(gaps),
            "mean": float(np.mean(gaps)),
            "median": float(np.median(gaps)),
            "std": float(np.std(gaps, ddof=1)) if len(gaps) > 1 else None,
            "anchor_solver": sorted(anchor_names),
            "anchor_wall_clock_mean_s": _mean(anchor_clocks),
        }

    form = formulation_of(cell.solver_name)
    matched = [rep for rep in reports
               if rep.formulation == form and rep.n == cell.n and (rep.family in (None, cell.family))]
    d_amp = None
    if matched:
        values = [rep.d_amp for rep in matched]
        d_amp = {
            "value": math.inf if any(math.isinf(v) for v in values) else float(np.mean(values)),
            "e_enc": float(np.mean([rep.e_enc for rep in matched])),
            "e_orig": float(np.mean([rep.e_orig for rep in matched])),
            "reports": len(matched),
        }

    objs = [r.objective_value for r in recs if r.objective_value is not None]
    v = metric_v_service(objs)
    raw = [r.feasible_raw for r in recs if r.feasible_raw is not None]
    post = [r.feasible_post for r in recs if r.feasible_post is not None]
    flag_counts: dict[str, int] = {}
    for r in recs:
        for f in r.flags:
            flag_counts[f] = flag_counts.get(f, 0) + 1
    return {
        "n": cell.n,
        "family": cell.family,
        "budget_s": cell.budget_s,
        "solver_name": cell.solver_name,
        "formulation": form,
        "records": len(recs),
        "timing": timing,
        "r_qpu": r_qpu,
        "g_f": g_f,
        "d_amp": d_amp,
        "v_service": "insufficient" if v is None else v,
        "feasibility": {
            "raw_rate": _mean([float(x) for x in raw]),
            "post_rate": _mean([float(x) for x in post]),
        },
        "flags": dict(sorted(flag_counts.items())),
    }


def _verdict(fails: list, warns: list) -> dict:
    if fails:
        return {"verdict": "fail", "reasons": fails + warns}
    if warns:
        return {"verdict": "warn", "reasons": warns}
    return {"verdict": "pass", "reasons": []}


def _cell_label(cell: AuditCell) -> str:
    n, fam, b, s = cell.key
    return f"(n={n}, family={fam}, budget={b}, solver={s})"


def build_checklist(cells: Sequence[AuditCell], anchors: Mapping,
                    reports: Sequence[SupportReport]) -> dict:
    records = [r for c in cells for r in c.records]
    out = {}

    fails, warns = [], []
    missing = [r for r in records if not r.has_timing()]
    if missing:
        fails.append(f"{len(missing)} record(s) lack one of t_run_s/t_charge_s/t_qpu_s")
    for flag, text in (("t_qpu_gt_t_run", "t_qpu_s > t_run_s"), ("t_run_nonpositive", "t_run_s <= 0"),
                       ("t_qpu_negative", "t_qpu_s < 0")):
        cnt = sum(flag in r.flags for r in records)
        if cnt:
            warns.append(f"{cnt} record(s) flagged {text}")
    out["P1"] = _verdict(fails, warns)

    fails = [f"{_cell_label(c)} has {sum(r.timing_valid() for r in c.records)} valid r_qpu value(s); "
             f"need >= {MIN_IQR_SAMPLE} for an IQR" for c in cells
             if sum(r.timing_valid() for r in c.records) < MIN_IQR_SAMPLE]
    out["P2"] = _verdict(fails, [])

    warns = []
    for c in cells:
        with_anchor = [anchors.get(r.instance_key) for r in c.records]
        if not any(a is not None for a in with_anchor):
            warns.append(f"{_cell_label(c)}: no f_star anchor supplied")
            continue
        if any(a is None for a in with_anchor):
            warns.append(f"{_cell_label(c)}: f_star missing for some records")
        if any(a is not None and (not a.anchor_solver or a.anchor_wall_clock_s is None) for a in with_anchor):
            warns.append(f"{_cell_label(c)}: anchor solver name or wall-clock not recorded")
    out["P3"] = _verdict([], warns)

    fails = []
    for c in cells:
        form = formulation_of(c.solver_name)
        if not any(rep.formulation == form and rep.n == c.n and rep.family in (None, c.family)
                   for rep in reports):
            fails.append(f"{_cell_label(c)}: no {form} support report")
    out["P4"] = _verdict(fails, [])

    pen = [r for r in records if formulation_of(r.solver_name) == "penalty"]
    bad = [r for r in pen if r.feasible_raw is None or r.feasible_post is None]
    out["P5"] = _verdict([f"{len(bad)} penalty-path record(s) lack feasible_raw/feasible_post"] if bad else [], [])

    warns = [f"{_cell_label(c)} has {len(c.records)} repetition(s) (< {MIN_SERVICE_REPS})"
             for c in cells if len(c.records) < MIN_SERVICE_REPS]
    out["P6"] = _verdict([], warns)

    fails = []
    no_id = sum(1 for r in records if not r.solver_identity)
    no_window = sum(1 for r in records if not (r.campaign_start and r.campaign_end))
    if no_id:
        fails.append(f"{no_id} record(s) lack solver_identity (take it from the sampler at "
                     f"submission time, not from returned sampleset metadata)")
    if no_window:
        fails.append(f"{no_window} record(s) lack campaign_start/campaign_end")
    out["P7"] = _verdict(fails, [])
    return out


def build_audit_report(cells: Sequence[AuditCell], f_star_map: Mapping | None = None,
                       encoding_reports: Sequence[SupportReport] | None = None,
                       generated_at: str | None = None) -> AuditReport:
    """Per-cell M1-M4 summaries plus the P1-P7 checklist.

    ``f_star_map`` maps ``(n, family, seed)`` to an :class:`Anchor` (a bare
    float is accepted and treated as an anchor without metadata).
    """
    anchors = {k: (v if isinstance(v, Anchor) else Anchor(float(v))) for k, v in (f_star_map or {}).items()}
    reports = list(encoding_reports or [])
    summaries = [_cell_summary(c, anchors, reports) for c in cells]
    return AuditReport(cells=summaries, checklist=build_checklist(cells, anchors, reports),
                       caveats=list(CAVEATS), generated_at=generated_at)


def load_anchors(path: str | PathLike) -> dict:
    """Anchor JSONL: ``{n, family, seed, f_star, anchor_solver, anchor_wall_clock_s}`` per line."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                key = (int(d["n"]), str(d["family"]), None if d.get("seed") is None else int(d["seed"]))
                out[key] = Anchor(float(d["f_star"]), d.get("anchor_solver"),
                                  None if d.get("anchor_wall_clock_s") is None else float(d["anchor_wall_clock_s"]),
                                  d.get("anchor_version"))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad anchor record ({exc})", line=lineno, path=str(path)) from exc
    return out


def load_support_reports(path: str | PathLike) -> list[SupportReport]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(SupportReport.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad support report ({exc})", line=lineno, path=str(path)) from exc
    return out


CSV_COLUMNS = ("n", "family", "budget_s", "solver_name", "formulation", "records",
               "t_run_mean", "t_charge_mean", "t_qpu_mean", "r_qpu_mean_of_ratios", "r_qpu_ratio_of_means",
               "r_qpu_median", "r_qpu_iqr", "g_f_mean", "g_f_median", "g_f_std", "d_amp", "e_enc",
               "e_orig", "v_service", "raw_feasible_rate", "post_feasible_rate")


def report_rows(report: AuditReport) -> list[dict]:
    rows = []
    for c in report.cells:
        r_qpu, g_f, d_amp = c["r_qpu"] or {}, c["g_f"] or {}, c["d_amp"] or {}
        rows.append({
            "n": c["n"], "family": c["family"], "budget_s": c["budget_s"], "solver_name": c["solver_name"],
            "formulation": c["formulation"], "records": c["records"],
            "t_run_mean": c["timing"]["t_run_mean"], "t_charge_mean": c["timing"]["t_charge_mean"],
            "t_qpu_mean": c["timing"]["t_qpu_mean"],
            "r_qpu_mean_of_ratios": r_qpu.get("mean_of_ratios"), "r_qpu_ratio_of_means": r_qpu.get("ratio_of_means"),
            "r_qpu_median": r_qpu.get("median"), "r_qpu_iqr": r_qpu.get("iqr"),
            "g_f_mean": g_f.get("mean"), "g_f_median": g_f.get("median"), "g_f_std": g_f.get("std"),
            "d_amp": d_amp.get("value"), "e_enc": d_amp.get("e_enc"), "e_orig": d_amp.get("e_orig"),
            "v_service": c["v_service"],
            "raw_feasible_rate": c["feasibility"]["raw_rate"], "post_feasible_rate": c["feasibility"]["post_rate"],
        })
    return rows


def write_report_csv(report: AuditReport, path: str | PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in report_rows(report):
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})

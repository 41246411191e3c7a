"""Paired signed-rank test, rank correlation with bootstrap intervals, cell variance."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from os import PathLike
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .audit import RunRecord, metric_v_service
from .errors import InsufficientDataError, LengthMismatchError

EXACT_MAX_N = 25
ALTERNATIVES = ("less", "greater", "two_sided")


@dataclass(frozen=True)
class PairedSample:
    pairs: tuple
    label_a: str = "a"
    label_b: str = "b"

    def __post_init__(self):
        if len(self.pairs) < 1:
            raise InsufficientDataError("a paired sample needs at least one pair")

    @classmethod
    def from_arrays(cls, a: Sequence[float], b: Sequence[float], label_a="a", label_b="b"):
        if len(a) != len(b):
            raise LengthMismatchError("paired arrays differ in length")
        return cls(tuple(zip(map(float, a), map(float, b))), label_a, label_b)


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n_effective: int
    alternative: str
    method: str
    all_zero: bool = False


def _signed_rank_null(doubled_ranks: np.ndarray) -> np.ndarray:
    """Counts of each attainable doubled W+ over all 2^n sign patterns."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks.astype(int):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(sample: PairedSample, alternative: str = "two_sided") -> WilcoxonResult:
    """Signed-rank test on ``a - b``.

    Zero differences are dropped before ranking; tied magnitudes get average
    ranks.  The statistic is W+ (sum of ranks of positive differences).  With
    at most 25 nonzero differences the p-value comes from the exact null
    distribution given the observed ranks; above that a normal approximation
    with tie-corrected variance is used.  ``"less"`` tests whether ``a`` tends
    to be smaller than ``b``.
    """
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    diffs = np.array([a - b for a, b in sample.pairs], dtype=float)
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    if n == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0, n_effective=0, alternative=alternative,
                              method="degenerate", all_zero=True)
    ranks = rankdata(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(int)
        counts = _signed_rank_null(doubled)
        total = counts.sum()
        w2 = int(round(2 * w_plus))
        p_less = counts[: w2 + 1].sum() / total
        p_greater = counts[w2:].sum() / total
        method = "exact"
    else:
        _, tie_counts = np.unique(np.abs(diffs), return_counts=True)
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
        z = (w_plus - mean) / math.sqrt(var)
        p_less = float(ndtr(z))
        p_greater = float(ndtr(-z))
        method = "normal"
    if alternative == "less":
        p = p_less
    elif alternative == "greater":
        p = p_greater
    else:
        p = min(1.0, 2.0 * min(p_less, p_greater))
    return WilcoxonResult(statistic=w_plus, p_value=float(p), n_effective=n, alternative=alternative,
                          method=method)


def wilcoxon_summary(sample: PairedSample) -> dict:
    """Both sidedness options; the one-sided test is ``a < b``."""
    one = wilcoxon_signed_rank(sample, "less")
    two = wilcoxon_signed_rank(sample, "two_sided")
    return {
        "label_a": sample.label_a,
        "label_b": sample.label_b,
        "n_pairs": len(sample.pairs),
        "n_effective": one.n_effective,
        "W": one.statistic,
        "p_one_sided": one.p_value,
        "p_two_sided": two.p_value,
        "method": one.method,
    }


# ---------------------------------------------------------------------------
# rank correlation

def _rank_corr_rows(rx: np.ndarray, ry: np.ndarray) -> np.ndarray:
    dx = rx - rx.mean(axis=-1, keepdims=True)
    dy = ry - ry.mean(axis=-1, keepdims=True)
    sxy = (dx * dy).sum(axis=-1)
    denom = np.sqrt((dx * dx).sum(axis=-1) * (dy * dy).sum(axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(denom > 0, sxy / np.where(denom > 0, denom, 1.0), np.nan)
    return np.clip(rho, -1.0, 1.0)


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Spearman correlation with average ranks; ``None`` if either input is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise LengthMismatchError("x and y differ in length")
    if x.size < 2:
        raise InsufficientDataError("spearman_rho needs at least two points")
    rho = float(_rank_corr_rows(rankdata(x), rankdata(y)))
    return None if math.isnan(rho) else rho


@dataclass(frozen=True)
class CorrelationResult:
    rho: float | None
    ci_low: float | None
    ci_high: float | None
    n_resamples: int
    seed: int
    level: float = 0.95
    n_excluded: int = 0

    @property
    def classification(self) -> str:
        if self.ci_low is None or self.ci_high is None:
            return "undefined"
        if self.ci_high < 0:
            return "below_zero"
        if self.ci_low > 0:
            return "above_zero"
        return "straddles_zero"


def bootstrap_ci(x: Sequence[float], y: Sequence[float], n_resamples: int = 2000, level: float = 0.95,
                 seed: int = 0, max_redraws: int = 50) -> CorrelationResult:
    """Percentile bootstrap interval for Spearman rho over paired resamples.

    Resamples whose ranks are constant are redrawn up to ``max_redraws`` times
    and then excluded; the excluded count is reported.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise LengthMismatchError("x and y differ in length")
    n = x.size
    if n < 3:
        raise InsufficientDataError(f"bootstrap_ci needs at least 3 points, got {n}")
    rng = np.random.default_rng(seed)
    rho_hat = spearman_rho(x, y)
    idx = rng.integers(0, n, size=(n_resamples, n))
    rhos = _rank_corr_rows(rankdata(x[idx], axis=1), rankdata(y[idx], axis=1))
    for _ in range(max_redraws):
        bad = np.isnan(rhos)
        if not bad.any():
            break
        redo = rng.integers(0, n, size=(int(bad.sum()), n))
        rhos[bad] = _rank_corr_rows(rankdata(x[redo], axis=1), rankdata(y[redo], axis=1))
    good = rhos[~np.isnan(rhos)]
    excluded = int(n_resamples - good.size)
    if good.size == 0:
        return CorrelationResult(rho_hat, None, None, n_resamples, seed, level, excluded)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(good, [100 * alpha, 100 * (1 - alpha)])
    return CorrelationResult(rho_hat, float(lo), float(hi), n_resamples, seed, level, excluded)


# ---------------------------------------------------------------------------
# dwell-vs-quality tables

DWELL_COLUMNS = ("group_key", "n", "points", "rho", "ci_low", "ci_high", "classification")


def _group_records(records: Iterable[RunRecord], grouping: str) -> dict:
    groups: dict[tuple, list] = {}
    for r in records:
        if r.status != "ok" or r.t_qpu_s is None or r.objective_value is None:
            continue
        if grouping == "within_cell":
            key = (r.n, r.family, r.budget_s, r.solver_name)
        elif grouping == "cross_cell":
            key = (r.n, r.solver_name)
        else:
            raise ValueError("grouping must be 'within_cell' or 'cross_cell'")
        groups.setdefault(key, []).append(r)
    return groups


def _key_text(key: tuple, grouping: str) -> str:
    if grouping == "within_cell":
        n, fam, b, s = key
        return f"{s}|n={n}|{fam}|B={b}"
    n, s = key
    return f"{s}|n={n}"


def dwell_quality_table(records: Iterable[RunRecord], grouping: str = "within_cell",
                        n_resamples: int = 2000, level: float = 0.95, seed: int = 0):
    """Spearman rho between ``t_qpu_s`` and ``objective_value`` per group.

    ``cross_cell`` pools all records sharing ``(solver, n)``.  Returns
    ``(rows, counts)`` where counts tallies the classifications.
    """
    rows = []
    for key, recs in sorted(_group_records(records, grouping).items(), key=lambda kv: str(kv[0])):
        t = np.array([r.t_qpu_s for r in recs], dtype=float)
        f = np.array([r.objective_value for r in recs], dtype=float)
        row = {"group_key": _key_text(key, grouping), "n": key[0], "points": len(recs),
               "rho": None, "ci_low": None, "ci_high": None}
        if np.all(f == f[0]):
            row["classification"] = "undefined (deterministic cell)"
        elif np.all(t == t[0]):
            row["classification"] = "undefined (constant dwell)"
        elif len(recs) < 3:
            row["classification"] = "undefined (insufficient data)"
        else:
            res = bootstrap_ci(t, f, n_resamples=n_resamples, level=level, seed=seed)
            row.update(rho=res.rho, ci_low=res.ci_low, ci_high=res.ci_high, classification=res.classification)
        rows.append(row)
    counts: dict[str, int] = {}
    for row in rows:
        counts[row["classification"]] = counts.get(row["classification"], 0) + 1
    return rows, counts


def write_table_csv(rows: Sequence[dict], path: str | PathLike, columns: Sequence[str] | None = None) -> None:
    columns = list(columns or (rows[0].keys() if rows else DWELL_COLUMNS))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})


def cell_variance_table(records: Iterable[RunRecord]) -> list[dict]:
    groups: dict[tuple, list] = {}
    for r in records:
        if r.status == "ok" and r.objective_value is not None:
            groups.setdefault(r.cell_key, []).append(r.objective_value)
    rows = []
    for (n, fam, b, s), objs in sorted(groups.items()):
        v = metric_v_service(objs)
        rows.append({
            "n": n, "family": fam, "budget_s": b, "solver_name": s, "reps": len(objs),
            "mean": float(np.mean(objs)),
            "std": float(np.std(objs, ddof=1)) if len(objs) > 1 else None,
            "v_service": "insufficient" if v is None else v,
        })
    return rows

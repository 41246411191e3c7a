"""Out-of-sample financial overlay on Fama-French 49 industry daily returns.

Conventions: raw (not excess) returns, risk-free rate 0; Sharpe uses the
sample standard deviation (divisor n-1) and is annualised by sqrt(252).  PSR
and DSR work on the per-period (daily) Sharpe with raw (non-excess) kurtosis,
so a normal series has kurtosis 3.
"""
from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass
from os import PathLike
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import InsufficientDataError, MissingDataError, ParseError

ANNUALIZATION = 252
EULER_GAMMA = 0.5772156649015329
# five evenly spaced rebalance dates over 1926-2025 used for the overlay
REBALANCE_DATES = (
    dt.date(1927, 5, 31),
    dt.date(1951, 12, 31),
    dt.date(1976, 8, 31),
    dt.date(2001, 4, 30),
    dt.date(2025, 12, 31),
)
SENTINEL_CUTOFF = -99.99


@dataclass(frozen=True, eq=False)
class ReturnSeries:
    dates: tuple
    returns: np.ndarray
    label: str = ""

    def __post_init__(self):
        r = np.asarray(self.returns, dtype=float)
        object.__setattr__(self, "returns", r)
        object.__setattr__(self, "dates", tuple(self.dates))
        if len(self.dates) != r.size:
            raise ValueError("dates and returns differ in length")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("dates must be strictly increasing")
        finite = r[~np.isnan(r)]
        if np.any(finite <= -1.0):
            raise ValueError("simple returns must be > -1")

    def __len__(self):
        return self.returns.size

    def has_missing(self) -> bool:
        return bool(np.isnan(self.returns).any())


@dataclass(frozen=True)
class RebalanceWindow:
    rebalance_date: dt.date
    selected: tuple
    n: int = 0
    config_id: str = ""

    @classmethod
    def from_dict(cls, d: Mapping) -> "RebalanceWindow":
        return cls(rebalance_date=_parse_date(d["rebalance_date"]), selected=tuple(d["selected"]),
                   n=int(d.get("n", len(d["selected"]))), config_id=str(d.get("config_id", "")))


@dataclass(frozen=True)
class SharpeReport:
    sharpe_annual: float | None
    max_drawdown: float
    psr: float | None
    dsr: float | None
    n_obs: int
    n_trials: int
    label: str = ""

    def to_dict(self) -> dict:
        return {"label": self.label, "sharpe_annual": self.sharpe_annual, "max_drawdown": self.max_drawdown,
                "psr": self.psr, "dsr": self.dsr, "n_obs": self.n_obs, "n_trials": self.n_trials}


def _parse_date(value) -> dt.date:
    if isinstance(value, dt.date):
        return value
    s = str(value).strip()
    if len(s) == 8 and s.isdigit():
        return dt.date(int(s[:4]), int(s[4:6]), int(s[6:]))
    return dt.date.fromisoformat(s)


# ---------------------------------------------------------------------------
# parsing

def _is_date_field(s: str) -> bool:
    s = s.strip()
    return len(s) == 8 and s.isdigit()


def parse_ff49_daily(path: str | PathLike, section: str = "value weighted") -> dict:
    """Read the data-library CSV and return ``{industry: ReturnSeries}``.

    The block whose title contains ``section`` (case-insensitive) is used;
    values are percent and are converted to decimals.  Entries at or below
    -99.99 (the library's missing-value sentinels) become NaN.
    """
    with open(path, encoding="utf-8", errors="replace", newline="") as fh:
        lines = fh.read().splitlines()
    start = None
    for i, line in enumerate(lines):
        if section in line.lower():
            start = i + 1
            break
    if start is None:
        # files without section titles: first header row followed by dated rows
        for i, line in enumerate(lines[:-1]):
            if line.startswith(",") and _is_date_field(lines[i + 1].split(",")[0]):
                start = i
                break
    if start is None:
        raise ParseError(f"no {section!r} section found", path=str(path))
    while start < len(lines) and not lines[start].strip():
        start += 1
    header = [h.strip() for h in next(csv.reader([lines[start]]))][1:]
    dates, rows = [], []
    for lineno in range(start + 1, len(lines)):
        fields = next(csv.reader([lines[lineno]]), [])
        if not fields or not _is_date_field(fields[0]):
            break
        if len(fields) - 1 != len(header):
            raise ParseError(f"expected {len(header)} values, got {len(fields) - 1}",
                             line=lineno + 1, path=str(path))
        try:
            vals = [float(v) for v in fields[1:]]
        except ValueError as exc:
            raise ParseError(f"non-numeric value ({exc})", line=lineno + 1, path=str(path)) from exc
        dates.append(_parse_date(fields[0]))
        rows.append(vals)
    if not rows:
        raise ParseError("section has no dated rows", path=str(path))
    data = np.array(rows, dtype=float)
    data[data <= SENTINEL_CUTOFF] = np.nan
    data /= 100.0
    return {name: ReturnSeries(tuple(dates), data[:, j].copy(), name) for j, name in enumerate(header)}


# ---------------------------------------------------------------------------
# windows

def next_month(d: dt.date) -> tuple:
    return (d.year + 1, 1) if d.month == 12 else (d.year, d.month + 1)


def _window_mask(series: ReturnSeries, rebalance_date: dt.date) -> np.ndarray:
    y, m = next_month(rebalance_date)
    return np.array([(d > rebalance_date and d.year == y and d.month == m) for d in series.dates], dtype=bool)


def reconstruct_window(returns_map: Mapping[str, ReturnSeries], window: RebalanceWindow) -> ReturnSeries:
    """Equal-weight daily mean of the selected industries over the month after rebalancing."""
    if not window.selected:
        raise MissingDataError("window selects no industries")
    cols, dates = [], None
    for name in window.selected:
        if name not in returns_map:
            raise MissingDataError(f"industry {name!r} not in return data")
        s = returns_map[name]
        mask = _window_mask(s, window.rebalance_date)
        if not mask.any():
            raise MissingDataError(f"no {name!r} returns in the month after {window.rebalance_date}")
        r = s.returns[mask]
        if np.isnan(r).any():
            raise MissingDataError(f"missing {name!r} returns in the month after {window.rebalance_date}")
        d = tuple(np.array(s.dates, dtype=object)[mask])
        if dates is None:
            dates = d
        elif d != dates:
            raise MissingDataError(f"{name!r} trading days differ from the other selected industries")
        cols.append(r)
    label = window.config_id or f"{window.rebalance_date.isoformat()}:{len(window.selected)}"
    return ReturnSeries(dates, np.mean(np.vstack(cols), axis=0), label)


def one_over_n_baseline(returns_map: Mapping[str, ReturnSeries], rebalance_date) -> ReturnSeries:
    win = RebalanceWindow(_parse_date(rebalance_date), tuple(returns_map), len(returns_map), "1/N")
    s = reconstruct_window(returns_map, win)
    return ReturnSeries(s.dates, s.returns, "1/N")


# ---------------------------------------------------------------------------
# metrics

def _values(series) -> np.ndarray:
    r = series.returns if isinstance(series, ReturnSeries) else np.asarray(series, dtype=float)
    if np.isnan(r).any():
        raise MissingDataError("series contains missing values")
    return r


def per_period_sharpe(series) -> float | None:
    r = _values(series)
    if r.size < 2:
        raise InsufficientDataError("Sharpe needs at least two observations")
    sd = float(np.std(r, ddof=1))
    if sd == 0.0:
        return None
    return float(np.mean(r)) / sd


def sharpe_annualized(series) -> float | None:
    """``sqrt(252) * mean / std``; ``None`` when the series has zero variance."""
    s = per_period_sharpe(series)
    return None if s is None else math.sqrt(ANNUALIZATION) * s


def max_drawdown(series) -> float:
    r = _values(series)
    if r.size == 0:
        return 0.0
    wealth = np.cumprod(1.0 + r)
    peak = np.maximum.accumulate(np.concatenate([[1.0], wealth]))[1:]
    return float(max(0.0, np.max(1.0 - wealth / peak)))


def sample_moments(series) -> tuple:
    """(skewness, raw kurtosis) from biased central moments."""
    r = _values(series)
    d = r - r.mean()
    m2 = float(np.mean(d ** 2))
    if m2 == 0.0:
        return 0.0, 3.0
    return float(np.mean(d ** 3)) / m2 ** 1.5, float(np.mean(d ** 4)) / m2 ** 2


def psr(series, sr_benchmark: float = 0.0) -> float | None:
    """Probabilistic Sharpe ratio against a per-period benchmark Sharpe.

    Returns ``None`` if the series has zero variance or the variance term
    ``1 - skew*SR + (kurt-1)/4*SR^2`` is not positive.
    """
    r = _values(series)
    if r.size < 4:
        raise InsufficientDataError("PSR needs at least four observations")
    sr = per_period_sharpe(r)
    if sr is None:
        return None
    skew, kurt = sample_moments(r)
    disc = 1.0 - skew * sr + (kurt - 1.0) / 4.0 * sr * sr
    if disc <= 0:
        return None
    return float(ndtr((sr - sr_benchmark) * math.sqrt(r.size - 1) / math.sqrt(disc)))


def expected_max_sharpe(trial_sharpes: Sequence[float]) -> float:
    """Benchmark Sharpe for the deflated ratio; trial Sharpes are per-period."""
    t = np.asarray(trial_sharpes, dtype=float)
    n_t = t.size
    if n_t < 2:
        raise InsufficientDataError("DSR needs at least two trials")
    sd = float(np.std(t, ddof=1))
    if sd == 0.0:
        return 0.0
    return sd * ((1 - EULER_GAMMA) * float(ndtri(1 - 1 / n_t)) + EULER_GAMMA * float(ndtri(1 - 1 / (n_t * math.e))))


def dsr(series, trial_sharpes: Sequence[float]) -> float | None:
    return psr(series, expected_max_sharpe(trial_sharpes))


def sharpe_report(series: ReturnSeries, trial_sharpes: Sequence[float] | None = None) -> SharpeReport:
    trials = list(trial_sharpes or [])
    return SharpeReport(
        sharpe_annual=sharpe_annualized(series),
        max_drawdown=max_drawdown(series),
        psr=psr(series, 0.0),
        dsr=dsr(series, trials) if len(trials) >= 2 else None,
        n_obs=len(series),
        n_trials=len(trials),
        label=series.label,
    )


# ---------------------------------------------------------------------------
# overlay tables

def load_windows(path: str | PathLike) -> list[RebalanceWindow]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(RebalanceWindow.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad window record ({exc})", line=lineno, path=str(path)) from exc
    return out


def overlay(returns_map: Mapping[str, ReturnSeries], windows: Sequence[RebalanceWindow],
            n_columns: Sequence[int] = (10, 20, 30)):
    """Per-configuration reports and the window x N Sharpe table.

    DSR deflates each configuration against the other configurations in its
    ``(rebalance_date, n)`` cell.  Returns ``(reports, table_rows)``; the last
    table row holds the column means.
    """
    cells: dict[tuple, list] = {}
    for w in windows:
        cells.setdefault((w.rebalance_date, w.n), []).append((w, reconstruct_window(returns_map, w)))
    reports = []
    cell_sharpe: dict[tuple, float] = {}
    for (date, n), items in sorted(cells.items()):
        trials = [s for s in (per_period_sharpe(series) for _, series in items) if s is not None]
        sharpes = []
        for w, series in items:
            rep = sharpe_report(series, trials)
            reports.append({"rebalance_date": date.isoformat(), "n": n, "config_id": w.config_id, **rep.to_dict()})
            if rep.sharpe_annual is not None:
                sharpes.append(rep.sharpe_annual)
        cell_sharpe[(date, n)] = float(np.mean(sharpes)) if sharpes else None
    dates = sorted({d for d, _ in cells})
    rows = []
    for idx, date in enumerate(dates):
        base = one_over_n_baseline(returns_map, date)
        row = {"window": f"{idx} ({date.isoformat()})"}
        for n in n_columns:
            row[f"qpu_n{n}"] = cell_sharpe.get((date, n))
        row["baseline"] = sharpe_annualized(base)
        rows.append(row)
    if rows:
        mean_row = {"window": "mean"}
        for col in [c for c in rows[0] if c != "window"]:
            vals = [r[col] for r in rows if r[col] is not None]
            mean_row[col] = float(np.mean(vals)) if vals else None
        rows.append(mean_row)
    return reports, rows


def baseline_table(returns_map: Mapping[str, ReturnSeries], dates: Sequence = REBALANCE_DATES) -> list[dict]:
    rows = []
    for idx, date in enumerate(dates):
        base = one_over_n_baseline(returns_map, date)
        rep = sharpe_report(base)
        rows.append({"window": idx, "rebalance_date": _parse_date(date).isoformat(), **rep.to_dict()})
    return rows

"""Analytical embedding-overhead and chain-break models.

Nothing here measures hardware.  The lower bound counts inter-chain edge
endpoints for a complete logical graph on a topology with maximum degree d;
the chain-break model assumes every intra-chain physical edge breaks
independently with probability p.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from os import PathLike
from typing import Mapping, Sequence


@dataclass(frozen=True)
class TopologySpec:
    name: str
    degree: int

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("topology degree must be >= 1")


PEGASUS = TopologySpec("pegasus", 15)
ZEPHYR = TopologySpec("zephyr", 20)
TOPOLOGIES = {t.name: t for t in (PEGASUS, ZEPHYR)}


@dataclass(frozen=True)
class ChainModelParams:
    p: float
    mean_chain_length: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("per-edge break probability must be in [0, 1]")
        if self.mean_chain_length < 1.0:
            raise ValueError("mean chain length must be >= 1")


def embedding_lower_bound(n: int, topo: TopologySpec) -> float:
    """Minimum total physical qubits for a minor embedding of K_n: ``n(n-1)/d``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return n * (n - 1) / topo.degree


def embedding_lower_bound_ceil(n: int, topo: TopologySpec) -> int:
    # integer arithmetic avoids float ceil artefacts
    return -(-(n * (n - 1)) // topo.degree)


def bound_mean_chain_length(n: int, topo: TopologySpec) -> float:
    """Mean chain length implied by the bound, ``(n-1)/d``, floored at 1."""
    return max(1.0, (n - 1) / topo.degree)


def chain_break_probability(params: ChainModelParams) -> float:
    """``1 - (1 - p)^(ceil(L) - 1)``: a chain of ceil(L) qubits has ceil(L)-1 internal edges."""
    edges = math.ceil(params.mean_chain_length) - 1
    return 1.0 - (1.0 - params.p) ** edges


def overhead_table(n_grid: Sequence[int], topo: TopologySpec,
                   observed: Mapping[int, float] | None = None) -> list[dict]:
    """One row per n: bound, its ceiling, and the observed/bound ratio if supplied.

    ``flag`` is ``"ok"`` when the observed count respects the bound,
    ``"inconsistent"`` when it falls below it, ``""`` when nothing was observed.
    """
    observed = observed or {}
    rows = []
    for n in n_grid:
        bound = embedding_lower_bound(n, topo)
        obs = observed.get(n)
        if obs is None:
            ratio, flag = None, ""
        else:
            ratio = obs / bound if bound > 0 else math.inf
            flag = "ok" if obs >= bound else "inconsistent"
        rows.append({
            "n": n,
            "d": topo.degree,
            "bound_real": bound,
            "bound_ceil": embedding_lower_bound_ceil(n, topo),
            "observed_phys": obs,
            "ratio": ratio,
            "flag": flag,
        })
    return rows


OVERHEAD_COLUMNS = ("n", "d", "bound_real", "bound_ceil", "observed_phys", "ratio", "flag")


def write_overhead_csv(rows: Sequence[dict], path: str | PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=OVERHEAD_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in OVERHEAD_COLUMNS})

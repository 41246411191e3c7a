"""Penalty-encoded QUBO and constraint-native model construction.

Conventions: a QUBO is a symmetric matrix ``q`` with energy
``H(z) = z^T q z + offset``, so the coefficient of ``z_i z_j`` (i != j) in the
expanded polynomial is ``2 q_ij``.  Offsets are always carried explicitly so
energies line up with MVT objective values.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import LengthMismatchError
from .instances import ZERO_TOL, ProblemInstance

DEFAULT_PENALTY = 4.0


class PenaltyCancellationWarning(UserWarning):
    """The penalty weight hits the finite exception set; some couplers vanish."""


@dataclass(frozen=True, eq=False)
class EncodedQubo:
    q: np.ndarray
    offset: float
    penalty_a: float
    k: int
    source_instance_id: str = ""

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def to_dict(self, convention: str = "symmetric") -> dict:
        if convention == "symmetric":
            q = self.q
        elif convention == "upper":
            # upper-triangular form: diagonal kept, off-diagonals doubled
            q = np.triu(self.q, 1) * 2.0 + np.diag(np.diag(self.q))
        else:
            raise ValueError(f"unknown convention {convention!r}")
        return {
            "n": self.n,
            "k": self.k,
            "penalty_a": self.penalty_a,
            "offset": self.offset,
            "q": q.tolist(),
            "convention": convention,
            "source_instance_id": self.source_instance_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncodedQubo":
        q = np.asarray(d["q"], dtype=float)
        if d.get("convention", "symmetric") == "upper":
            off = np.triu(q, 1) / 2.0
            q = off + off.T + np.diag(np.diag(q))
        return cls(q=q, offset=float(d["offset"]), penalty_a=float(d["penalty_a"]),
                   k=int(d["k"]), source_instance_id=d.get("source_instance_id", ""))


@dataclass(frozen=True)
class LinearConstraint:
    a: tuple
    b: float
    sense: str = "=="

    @classmethod
    def cardinality(cls, n: int, k: int) -> "LinearConstraint":
        return cls(a=(1.0,) * n, b=float(k))


@dataclass(frozen=True, eq=False)
class ConstrainedModel:
    q_obj: np.ndarray
    linear_obj: np.ndarray
    obj_offset: float
    constraint: LinearConstraint
    source_instance_id: str = ""

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(z @ self.q_obj @ z + self.linear_obj @ z + self.obj_offset)

    def is_feasible(self, z) -> bool:
        a = np.asarray(self.constraint.a, dtype=float)
        return abs(float(a @ np.asarray(z, dtype=float)) - self.constraint.b) <= 1e-9


@dataclass
class SupportReport:
    e_orig: int
    e_enc: int
    d_amp: float
    is_complete: bool
    cancelled_pairs: list = field(default_factory=list)
    theorem_holds: bool = True
    formulation: str = ""
    n: int | None = None
    family: str | None = None
    seed: int | None = None
    instance_id: str | None = None

    def to_dict(self) -> dict:
        return {
            "formulation": self.formulation,
            "instance_id": self.instance_id,
            "n": self.n,
            "family": self.family,
            "seed": self.seed,
            "e_orig": self.e_orig,
            "e_enc": self.e_enc,
            "d_amp": "inf" if math.isinf(self.d_amp) else self.d_amp,
            "is_complete": self.is_complete,
            "theorem_holds": self.theorem_holds,
            "cancelled_pairs": [list(p) for p in self.cancelled_pairs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SupportReport":
        d_amp = d["d_amp"]
        return cls(
            e_orig=int(d["e_orig"]),
            e_enc=int(d["e_enc"]),
            d_amp=math.inf if d_amp == "inf" else float(d_amp),
            is_complete=bool(d["is_complete"]),
            cancelled_pairs=[tuple(p) for p in d.get("cancelled_pairs", [])],
            theorem_holds=bool(d.get("theorem_holds", True)),
            formulation=d.get("formulation", ""),
            n=d.get("n"),
            family=d.get("family"),
            seed=d.get("seed"),
            instance_id=d.get("instance_id"),
        )


def linearize_turnover(z_prev: Sequence[int], tau: Sequence[float]):
    """Rewrite ``tau^T |z - z_prev|`` as ``coeffs^T z + constant`` for binary z."""
    z_prev = np.asarray(z_prev, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if z_prev.shape != tau.shape:
        raise LengthMismatchError(f"z_prev has length {z_prev.size}, tau has length {tau.size}")
    return tau * (1.0 - 2.0 * z_prev), float(tau @ z_prev)


def cancellation_values(c: np.ndarray, a: Sequence[float], tol: float = ZERO_TOL) -> dict:
    """Map each exceptional penalty weight ``-C_ij / (a_i a_j)`` to its pairs."""
    a = np.asarray(a, dtype=float)
    out: dict[float, list] = {}
    n = c.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            aa = a[i] * a[j]
            if abs(aa) > tol:
                out.setdefault(float(-c[i, j] / aa), []).append((i, j))
    return out


def _cancelled(c: np.ndarray, a: np.ndarray, a_penalty: float, tol: float) -> list:
    aa = np.outer(a, a)
    hit = (np.abs(aa) > tol) & (np.abs(c + a_penalty * aa) <= tol)
    iu, ju = np.nonzero(np.triu(hit, 1))
    return [(int(i), int(j)) for i, j in zip(iu, ju)]


def build_penalty_qubo(instance: ProblemInstance, a_penalty: float = DEFAULT_PENALTY) -> EncodedQubo:
    """``-diag(mu) + lam*Sigma + A 11^T - 2AK I + diag(tau_shift)``, offset ``AK^2 + tau^T z_prev``."""
    n, k = instance.n, instance.k
    lin, const = linearize_turnover(instance.z_prev, instance.tau)
    cost = instance.lam * instance.sigma
    q = cost + a_penalty * np.ones((n, n))
    q[np.diag_indices(n)] += -instance.mu - 2.0 * a_penalty * k + lin
    q = 0.5 * (q + q.T)
    cancelled = _cancelled(cost, np.ones(n), a_penalty, ZERO_TOL)
    if cancelled:
        warnings.warn(
            f"penalty A={a_penalty} cancels {len(cancelled)} coupler(s), e.g. {cancelled[0]}",
            PenaltyCancellationWarning,
            stacklevel=2,
        )
    return EncodedQubo(q=q, offset=a_penalty * k * k + const, penalty_a=float(a_penalty), k=k,
                       source_instance_id=instance.instance_id)


def build_cqm(instance: ProblemInstance) -> ConstrainedModel:
    lin, const = linearize_turnover(instance.z_prev, instance.tau)
    return ConstrainedModel(
        q_obj=instance.lam * instance.sigma,
        linear_obj=-instance.mu + lin,
        obj_offset=const,
        constraint=LinearConstraint.cardinality(instance.n, instance.k),
        source_instance_id=instance.instance_id,
    )


def offdiag_support(matrix, tol: float = ZERO_TOL) -> set:
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("offdiag_support needs a square matrix")
    iu, ju = np.nonzero(np.triu(np.abs(m) > tol, 1))
    return {(int(i), int(j)) for i, j in zip(iu, ju)}


def density_amplification(e_enc: int, e_orig: int) -> float:
    if e_enc < 0 or e_orig < 0:
        raise ValueError("edge counts must be nonnegative")
    if e_orig > 0:
        return e_enc / e_orig
    if e_enc > 0:
        return math.inf
    return 1.0


def verify_support_theorem(c, constraint: LinearConstraint, a_penalty: float,
                           tol: float = ZERO_TOL) -> SupportReport:
    """Check ``supp_off(C + A a a^T) = supp_off(C) | {(i,j): a_i a_j != 0}``.

    Pairs where the penalty exactly cancels the cost coupling are listed in
    ``cancelled_pairs`` instead of being treated as a failure; ``theorem_holds``
    is False only if the encoded support disagrees with the prediction
    somewhere outside that exception set.
    """
    c = np.asarray(c, dtype=float)
    a = np.asarray(constraint.a, dtype=float)
    if a.shape != (c.shape[0],):
        raise LengthMismatchError("constraint length does not match cost matrix")
    n = c.shape[0]
    q = c + a_penalty * np.outer(a, a)
    supp_c = offdiag_support(c, tol)
    supp_q = offdiag_support(q, tol)
    penalty_pairs = {(i, j) for i in range(n) for j in range(i + 1, n) if abs(a[i] * a[j]) > tol}
    cancelled = _cancelled(c, a, a_penalty, tol)
    predicted = (supp_c | penalty_pairs) - set(cancelled)
    all_pairs = n * (n - 1) // 2
    return SupportReport(
        e_orig=len(supp_c),
        e_enc=len(supp_q),
        d_amp=density_amplification(len(supp_q), len(supp_c)),
        is_complete=len(supp_q) == all_pairs,
        cancelled_pairs=cancelled,
        theorem_holds=supp_q == predicted,
        formulation="penalty",
    )


def support_report(instance: ProblemInstance, formulation: str = "penalty",
                   a_penalty: float = DEFAULT_PENALTY) -> SupportReport:
    """Support/density report for one instance under one formulation.

    ``formulation`` is ``"penalty"`` (BQM path) or ``"native"`` (CQM path).
    """
    cost = instance.lam * instance.sigma
    if formulation == "penalty":
        rep = verify_support_theorem(cost, LinearConstraint.cardinality(instance.n, instance.k), a_penalty)
    elif formulation == "native":
        model = build_cqm(instance)
        e_orig = len(offdiag_support(instance.sigma))
        e_enc = len(offdiag_support(model.q_obj))
        rep = SupportReport(
            e_orig=e_orig,
            e_enc=e_enc,
            d_amp=density_amplification(e_enc, e_orig),
            is_complete=e_enc == instance.n * (instance.n - 1) // 2,
            theorem_holds=offdiag_support(model.q_obj) == offdiag_support(instance.sigma),
        )
    else:
        raise ValueError(f"unknown formulation {formulation!r}")
    rep.formulation = formulation
    rep.n, rep.family, rep.seed, rep.instance_id = instance.n, instance.family, instance.seed, instance.instance_id
    return rep


def dumps_report(rep: SupportReport) -> str:
    return json.dumps(rep.to_dict(), separators=(",", ":"))

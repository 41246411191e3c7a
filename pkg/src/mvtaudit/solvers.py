"""MVT objective, exact oracle and heuristic solvers.

Solver names used in run records:

=============  ===========================================================
exact          full enumeration of exact-k portfolios (proven optimal)
sa-penalty     simulated annealing on the penalty QUBO + greedy projection
tabu-penalty   single-flip tabu search on the penalty QUBO + projection
swap-native    1-in/1-out swap descent that never leaves the feasible set
=============  ===========================================================

Budgeted solvers (tabu, swap) take an optional ``max_iter``.  When it is given
the run is deterministic: it stops on the iteration cap and the wall-clock
budget is recorded but not enforced.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .encoding import EncodedQubo, linearize_turnover
from .errors import LengthMismatchError, OracleUnavailableError
from .instances import ProblemInstance

ORACLE_CAP = 5_000_000
SOLVER_NAMES = ("exact", "sa-penalty", "tabu-penalty", "swap-native")
_TIE_TOL = 1e-12


@dataclass(frozen=True)
class Portfolio:
    z: tuple
    objective: float
    feasible: bool

    @classmethod
    def from_z(cls, instance: ProblemInstance, z) -> "Portfolio":
        z = tuple(int(v) for v in np.asarray(z).ravel())
        return cls(z=z, objective=evaluate_mvt(instance, z), feasible=sum(z) == instance.k)


@dataclass
class SolveResult:
    best: Portfolio
    raw_best: Portfolio | None
    wall_clock_s: float
    iterations: int
    solver_name: str
    budget_s: float | None
    proven_optimal: bool = False
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AnnealConfig:
    reads: int = 1000
    sweeps: int = 1000
    # (beta_hot, beta_cold); None -> scaled from the QUBO coefficients
    beta_range: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.reads < 1:
            raise ValueError("reads must be >= 1")
        if self.sweeps < 0:
            raise ValueError("sweeps must be >= 0")


def _check_len(instance: ProblemInstance, z) -> np.ndarray:
    z = np.asarray(z, dtype=float).ravel()
    if z.size != instance.n:
        raise LengthMismatchError(f"z has length {z.size}, instance has n={instance.n}")
    return z


def evaluate_mvt(instance: ProblemInstance, z) -> float:
    """``-mu^T z + lam z^T Sigma z + tau^T |z - z_prev|``."""
    z = _check_len(instance, z)
    return float(
        -instance.mu @ z
        + instance.lam * (z @ instance.sigma @ z)
        + instance.tau @ np.abs(z - instance.z_prev)
    )


def qubo_energy(qubo: EncodedQubo, z) -> float:
    z = np.asarray(z, dtype=float).ravel()
    if z.size != qubo.n:
        raise LengthMismatchError(f"z has length {z.size}, QUBO has n={qubo.n}")
    return float(z @ qubo.q @ z + qubo.offset)


# ---------------------------------------------------------------------------
# exact oracle

def exact_solve(instance: ProblemInstance, cap: int = ORACLE_CAP, chunk: int = 200_000) -> SolveResult:
    """Enumerate every exact-k portfolio.

    Ties (within 1e-12) go to the lexicographically smallest bit vector.
    """
    n, k = instance.n, instance.k
    total = math.comb(n, k)
    if total > cap:
        raise OracleUnavailableError(f"C({n},{k}) = {total} exceeds the enumeration cap {cap}")
    t0 = time.perf_counter()
    lin, const = linearize_turnover(instance.z_prev, instance.tau)
    lin = lin - instance.mu
    sig = instance.lam * instance.sigma
    best_val = math.inf
    ties: list[tuple] = []
    combos = itertools.combinations(range(n), k)
    while True:
        block = np.fromiter(itertools.chain.from_iterable(itertools.islice(combos, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        idx = block.reshape(-1, k)
        vals = lin[idx].sum(axis=1) + sig[idx[:, :, None], idx[:, None, :]].sum(axis=(1, 2)) + const
        m = vals.min()
        if m < best_val - _TIE_TOL:
            best_val = float(m)
            ties = []
        if m <= best_val + _TIE_TOL:
            best_val = min(best_val, float(m))
            for row in idx[vals <= best_val + _TIE_TOL]:
                ties.append(tuple(int(i) for i in row))
    wall = time.perf_counter() - t0
    candidates = []
    for sel in ties:
        z = [0] * n
        for i in sel:
            z[i] = 1
        candidates.append(Portfolio.from_z(instance, z))
    best_obj = min(p.objective for p in candidates)
    best = min((p for p in candidates if p.objective <= best_obj + _TIE_TOL), key=lambda p: p.z)
    return SolveResult(best=best, raw_best=None, wall_clock_s=wall, iterations=total,
                       solver_name="exact", budget_s=None, proven_optimal=True)


# ---------------------------------------------------------------------------
# greedy exact-k projection

def _marginals(instance: ProblemInstance, z: np.ndarray) -> np.ndarray:
    """Change in the MVT objective from flipping each bit of ``z`` (one at a time)."""
    lin, _ = linearize_turnover(instance.z_prev, instance.tau)
    lin = lin - instance.mu
    sig = instance.lam * instance.sigma
    d = 1.0 - 2.0 * z
    cross = sig @ z - np.diag(sig) * z
    return d * (lin + np.diag(sig) + 2.0 * cross)


def greedy_project(instance: ProblemInstance, z_raw) -> Portfolio:
    """Move one asset at a time toward ``1^T z = k`` by best marginal objective.

    Too many assets: drop the one whose removal lowers the objective most.
    Too few: add the one whose addition lowers it most.  Ties go to the
    smallest index.
    """
    z = _check_len(instance, z_raw).copy()
    z = (z > 0.5).astype(float)
    k = instance.k
    while z.sum() > k:
        delta = _marginals(instance, z)
        delta[z == 0] = np.inf
        z[int(np.argmin(delta))] = 0.0
    while z.sum() < k:
        delta = _marginals(instance, z)
        delta[z == 1] = np.inf
        z[int(np.argmin(delta))] = 1.0
    return Portfolio.from_z(instance, z)


# ---------------------------------------------------------------------------
# simulated annealing on the penalty QUBO

def default_beta_range(q: np.ndarray) -> tuple:
    """``beta_hot * dE_max ~ 1`` and ``beta_cold * dE_min ~ 10`` for single flips."""
    n = q.shape[0]
    diag = np.abs(np.diag(q))
    off = np.abs(q - np.diag(np.diag(q)))
    de_max = float(np.max(diag + 2.0 * off.sum(axis=1))) if n else 1.0
    mags = np.concatenate([diag, 2.0 * off[np.triu_indices(n, 1)]])
    mags = mags[mags > 1e-12]
    de_min = float(mags.min()) if mags.size else 1.0
    de_max = max(de_max, de_min)
    return 1.0 / de_max, 10.0 / de_min


def _anneal(q: np.ndarray, cfg: AnnealConfig):
    n = q.shape[0]
    rng = np.random.default_rng(cfg.seed)
    z = rng.integers(0, 2, size=(cfg.reads, n)).astype(float)
    if cfg.sweeps == 0 or n == 0:
        return z
    beta_hot, beta_cold = cfg.beta_range or default_beta_range(q)
    betas = np.geomspace(beta_hot, beta_cold, cfg.sweeps)
    h = z @ q
    diag = np.diag(q)
    for beta in betas:
        log_u = np.log(rng.random((cfg.reads, n)))
        for i in range(n):
            d = 1.0 - 2.0 * z[:, i]
            de = diag[i] + 2.0 * d * h[:, i]
            flip = log_u[:, i] < -beta * de
            if not flip.any():
                continue
            step = np.where(flip, d, 0.0)
            z[:, i] += step
            h += np.outer(step, q[i])
    return z


def simulated_annealing(qubo: EncodedQubo, instance: ProblemInstance,
                        cfg: AnnealConfig | None = None) -> SolveResult:
    """Best-of-reads single-flip Metropolis annealing, then greedy projection."""
    cfg = cfg or AnnealConfig()
    t0 = time.perf_counter()
    samples = _anneal(qubo.q, cfg)
    energies = np.einsum("ri,ij,rj->r", samples, qubo.q, samples) + qubo.offset
    best_read = int(np.argmin(energies))
    raw = Portfolio.from_z(instance, samples[best_read])
    best = greedy_project(instance, raw.z)
    wall = time.perf_counter() - t0
    feasible_frac = float(np.mean(samples.sum(axis=1) == instance.k))
    return SolveResult(
        best=best, raw_best=raw, wall_clock_s=wall, iterations=cfg.reads * cfg.sweeps,
        solver_name="sa-penalty", budget_s=None,
        extra={"raw_energy": float(energies[best_read]), "raw_feasible_fraction": feasible_frac,
               "reads": cfg.reads, "sweeps": cfg.sweeps, "penalty_a": qubo.penalty_a},
    )


# ---------------------------------------------------------------------------
# tabu search on the penalty QUBO

def tabu_search(qubo: EncodedQubo, instance: ProblemInstance, budget_s: float = 5.0, seed: int = 0,
                max_iter: int | None = None, tenure: int | None = None,
                stagnation: int | None = None) -> SolveResult:
    """Single-flip tabu search with aspiration and random restarts.

    Every iteration takes the best admissible flip, uphill or not.  A flip is
    admissible if it is not tabu, or if it would beat the incumbent.  When all
    flips are tabu the one whose tenure expires first is taken.  After
    ``stagnation`` iterations without improving the incumbent the search
    restarts from a fresh random state.
    """
    if budget_s is not None and budget_s <= 0:
        raise ValueError("budget_s must be > 0")
    q = qubo.q
    n = q.shape[0]
    tenure = min(20, n) if tenure is None else tenure
    stagnation = max(100, 10 * n) if stagnation is None else stagnation
    rng = np.random.default_rng(seed)
    diag = np.diag(q)

    t0 = time.perf_counter()
    z = rng.integers(0, 2, size=n).astype(float)
    h = q @ z
    energy = float(z @ h)
    best_z, best_e = z.copy(), energy
    tabu_until = np.zeros(n, dtype=np.int64)
    it = since_improve = restarts = 0
    while True:
        if max_iter is not None:
            if it >= max_iter:
                break
        elif time.perf_counter() - t0 >= budget_s:
            break
        d = 1.0 - 2.0 * z
        delta = diag + 2.0 * d * h
        allowed = (tabu_until <= it) | (energy + delta < best_e - 1e-12)
        if allowed.any():
            i = int(np.argmin(np.where(allowed, delta, np.inf)))
        else:
            i = int(np.argmin(tabu_until))
        z[i] += d[i]
        h += d[i] * q[:, i]
        energy += float(delta[i])
        tabu_until[i] = it + tenure + 1
        it += 1
        if energy < best_e - 1e-12:
            best_e, best_z = energy, z.copy()
            since_improve = 0
        else:
            since_improve += 1
        if since_improve >= stagnation:
            z = rng.integers(0, 2, size=n).astype(float)
            h = q @ z
            energy = float(z @ h)
            tabu_until[:] = 0
            since_improve = 0
            restarts += 1
    raw = Portfolio.from_z(instance, best_z)
    best = greedy_project(instance, raw.z)
    wall = time.perf_counter() - t0
    return SolveResult(
        best=best, raw_best=raw, wall_clock_s=wall, iterations=it, solver_name="tabu-penalty",
        budget_s=budget_s,
        extra={"raw_energy": best_e + qubo.offset, "restarts": restarts, "tenure": tenure,
               "penalty_a": qubo.penalty_a, "deterministic": max_iter is not None},
    )


# ---------------------------------------------------------------------------
# constraint-native swap search

def feasible_swap_search(instance: ProblemInstance, budget_s: float = 5.0, seed: int = 0,
                         max_iter: int | None = None, callback=None) -> SolveResult:
    """Steepest-descent 1-in/1-out swaps over exact-k portfolios with random restarts.

    ``max_iter`` caps the number of swap evaluations (descent steps).
    ``callback(z)`` is called with every visited state.
    """
    if budget_s is not None and budget_s <= 0:
        raise ValueError("budget_s must be > 0")
    n, k = instance.n, instance.k
    rng = np.random.default_rng(seed)
    sig = instance.lam * instance.sigma
    lin, _ = linearize_turnover(instance.z_prev, instance.tau)
    lin = lin - instance.mu
    sdiag = np.diag(sig)
    t0 = time.perf_counter()

    def random_start():
        z = np.zeros(n)
        z[rng.choice(n, size=k, replace=False)] = 1.0
        return z

    best: Portfolio | None = None
    it = restarts = 0
    if k == n:
        best = Portfolio.from_z(instance, np.ones(n))
        if callback is not None:
            callback(best.z)
        return SolveResult(best=best, raw_best=None, wall_clock_s=time.perf_counter() - t0,
                           iterations=0, solver_name="swap-native", budget_s=budget_s)

    def out_of_budget():
        if max_iter is not None:
            return it >= max_iter
        return time.perf_counter() - t0 >= budget_s

    while True:
        z = random_start()
        if callback is not None:
            callback(tuple(int(v) for v in z))
        while not out_of_budget():
            cross = sig @ z
            # removing i (in S): -(lin_i + sig_ii + 2 sum_{j in S, j != i} sig_ij)
            remove = -(lin + sdiag + 2.0 * (cross - sdiag * z))
            # adding j (not in S) to S \ {i}: lin_j + sig_jj + 2 (cross_j - sig_ij)
            add = lin + sdiag + 2.0 * cross
            swap = remove[:, None] + add[None, :] - 2.0 * sig
            mask = (z[:, None] == 1.0) & (z[None, :] == 0.0)
            swap = np.where(mask, swap, np.inf)
            it += 1
            flat = int(np.argmin(swap))
            i, j = divmod(flat, n)
            if swap[i, j] >= -1e-14:
                break
            z[i], z[j] = 0.0, 1.0
            if callback is not None:
                callback(tuple(int(v) for v in z))
        cand = Portfolio.from_z(instance, z)
        if best is None or cand.objective < best.objective - _TIE_TOL:
            best = cand
        restarts += 1
        if out_of_budget():
            break
    wall = time.perf_counter() - t0
    return SolveResult(best=best, raw_best=None, wall_clock_s=wall, iterations=it,
                       solver_name="swap-native", budget_s=budget_s,
                       extra={"restarts": restarts, "deterministic": max_iter is not None})

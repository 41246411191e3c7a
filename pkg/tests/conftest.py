import itertools

import numpy as np
import pytest


def mvt_loops(inst, z):
    """Plain-loop MVT objective, kept independent of the package code."""
    n = inst.n
    total = 0.0
    for i in range(n):
        total -= inst.mu[i] * z[i]
        total += inst.tau[i] * abs(z[i] - int(inst.z_prev[i]))
        for j in range(n):
            total += inst.lam * inst.sigma[i, j] * z[i] * z[j]
    return total


def brute_force_optimum(inst):
    best, best_z = None, None
    for combo in itertools.combinations(range(inst.n), inst.k):
        z = [0] * inst.n
        for i in combo:
            z[i] = 1
        f = mvt_loops(inst, z)
        if best is None or f < best - 1e-12:
            best, best_z = f, tuple(z)
    return best, best_z


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_instance(mu, sigma, tau=None, z_prev=None, k=1, lam=0.5, family="dense", seed=0):
    from mvtaudit.instances import ProblemInstance

    n = len(mu)
    return ProblemInstance(
        n=n, k=k, mu=np.asarray(mu, float), sigma=np.asarray(sigma, float),
        tau=np.zeros(n) if tau is None else np.asarray(tau, float),
        z_prev=np.zeros(n, dtype=int) if z_prev is None else np.asarray(z_prev),
        lam=lam, family=family, seed=seed, instance_id=f"hand-{n}-{seed}",
    )


def all_bitstrings(n):
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=float)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

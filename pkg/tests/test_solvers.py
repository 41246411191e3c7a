import numpy as np
import pytest
from conftest import brute_force_optimum, make_instance, mvt_loops
from hypothesis import given, settings
from hypothesis import strategies as st

from mvtaudit.encoding import build_penalty_qubo
from mvtaudit.errors import LengthMismatchError, OracleUnavailableError
from mvtaudit.instances import FAMILIES, generate
from mvtaudit.solvers import (
    AnnealConfig,
    Portfolio,
    default_beta_range,
    evaluate_mvt,
    exact_solve,
    feasible_swap_search,
    greedy_project,
    qubo_energy,
    simulated_annealing,
    tabu_search,
)


def test_evaluate_worked_example():
    inst = make_instance([0.1, 0.2, 0.3], 0.1 * np.eye(3), tau=[0.01] * 3, z_prev=[1, 0, 0], k=2)
    assert evaluate_mvt(inst, (0, 1, 1)) == pytest.approx(-0.37, abs=1e-15)


def test_evaluate_zero_turnover_and_exit_cost():
    inst = generate("block", 10, 0)
    z = inst.z_prev
    assert evaluate_mvt(inst, z) == pytest.approx(-inst.mu @ z + inst.lam * z @ inst.sigma @ z)
    assert evaluate_mvt(inst, np.zeros(10)) == pytest.approx(float(inst.tau @ inst.z_prev))


def test_evaluate_length_mismatch():
    with pytest.raises(LengthMismatchError):
        evaluate_mvt(generate("dense", 5, 0), [1, 0])


def test_qubo_energy_cases():
    inst = generate("dense", 7, 3)
    q = build_penalty_qubo(inst)
    assert qubo_energy(q, np.zeros(7)) == q.offset
    z = np.zeros(7)
    z[: inst.k] = 1
    assert qubo_energy(q, z) == pytest.approx(evaluate_mvt(inst, z), abs=1e-12)
    z[-1] = 1
    assert qubo_energy(q, z) == pytest.approx(evaluate_mvt(inst, z) + 4.0, abs=1e-12)


def test_exact_four_assets():
    inst = make_instance([0.1, 0.2, 0.3, 0.4], np.zeros((4, 4)), k=2)
    res = exact_solve(inst)
    assert res.best.z == (0, 0, 1, 1)
    assert res.best.objective == pytest.approx(-0.7)
    assert res.proven_optimal


def test_exact_singleton_feasible_set():
    inst = make_instance([0.1, 0.2], np.eye(2), k=2)
    assert exact_solve(inst).best.z == (1, 1)


def test_exact_tie_goes_lexicographically_smallest():
    inst = make_instance([0.1, 0.1, 0.1], np.zeros((3, 3)), k=1)
    assert exact_solve(inst).best.z == (0, 0, 1)


def test_exact_cap():
    with pytest.raises(OracleUnavailableError):
        exact_solve(generate("dense", 30, 0), cap=1000)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("seed", [0, 1])
def test_exact_matches_brute_force(family, seed):
    inst = generate(family, 11, seed)
    f, z = brute_force_optimum(inst)
    res = exact_solve(inst, chunk=17)
    assert res.best.objective == pytest.approx(f, abs=1e-12)
    assert res.best.z == z


def test_project_identity_on_feasible():
    inst = generate("dense", 8, 0)
    z = tuple(int(v) for v in inst.z_prev)
    assert greedy_project(inst, z).z == z


def test_project_drops_smallest_mu():
    inst = make_instance([0.4, 0.1, 0.3, 0.2], np.zeros((4, 4)), k=2)
    assert greedy_project(inst, (1, 1, 1, 0)).z == (1, 0, 1, 0)


def test_project_adds_best_single_asset():
    inst = generate("diagonal", 9, 4)
    inst1 = make_instance(inst.mu, inst.sigma, inst.tau, inst.z_prev, k=1)
    best = min(range(9), key=lambda i: (mvt_loops(inst1, [int(j == i) for j in range(9)]), i))
    out = greedy_project(inst1, np.zeros(9))
    assert out.z == tuple(int(j == best) for j in range(9))


@settings(max_examples=50, deadline=None)
@given(family=st.sampled_from(FAMILIES), n=st.integers(4, 14), seed=st.integers(0, 500),
       bits=st.lists(st.integers(0, 1), min_size=14, max_size=14))
def test_projection_feasible_and_idempotent(family, n, seed, bits):
    inst = generate(family, n, seed)
    p = greedy_project(inst, bits[:n])
    assert p.feasible and sum(p.z) == inst.k
    assert greedy_project(inst, p.z) == p
    assert p.objective == pytest.approx(mvt_loops(inst, p.z), abs=1e-12)


def test_sa_zero_sweeps_returns_initial_state():
    inst = generate("dense", 6, 0)
    q = build_penalty_qubo(inst)
    res = simulated_annealing(q, inst, AnnealConfig(reads=1, sweeps=0, seed=7))
    init = np.random.default_rng(7).integers(0, 2, size=(1, 6))[0]
    assert res.raw_best.z == tuple(int(v) for v in init)
    assert res.extra["raw_energy"] == pytest.approx(qubo_energy(q, init))


def test_sa_deterministic():
    inst = generate("block", 10, 1)
    q = build_penalty_qubo(inst)
    cfg = AnnealConfig(reads=20, sweeps=100, seed=3)
    a, b = simulated_annealing(q, inst, cfg), simulated_annealing(q, inst, cfg)
    assert a.best == b.best and a.raw_best == b.raw_best


def test_sa_default_config_hits_optimum_n10():
    inst = generate("dense", 10, 0)
    res = simulated_annealing(build_penalty_qubo(inst), inst)
    assert res.best.objective == pytest.approx(exact_solve(inst).best.objective, abs=1e-12)


def test_anneal_config_validation():
    with pytest.raises(ValueError):
        AnnealConfig(reads=0)


def test_beta_range_scaling():
    q = np.array([[-2.0, 1.0], [1.0, -2.0]])
    hot, cold = default_beta_range(q)
    assert hot == pytest.approx(1 / 4.0)
    assert cold == pytest.approx(10 / 2.0)


@pytest.mark.parametrize("family", FAMILIES)
def test_tabu_reaches_optimum(family):
    inst = generate(family, 14, 2)
    res = tabu_search(build_penalty_qubo(inst), inst, seed=1, max_iter=5000)
    assert res.best.objective == pytest.approx(exact_solve(inst).best.objective, abs=1e-12)


def test_tabu_tiny_budget_still_feasible():
    inst = generate("dense", 16, 0)
    res = tabu_search(build_penalty_qubo(inst), inst, budget_s=0.01, seed=0)
    assert res.best.feasible


def test_tabu_deterministic_mode():
    inst = generate("dense", 12, 0)
    q = build_penalty_qubo(inst)
    a = tabu_search(q, inst, seed=4, max_iter=700)
    b = tabu_search(q, inst, seed=4, max_iter=700)
    assert a.best == b.best and a.raw_best == b.raw_best and a.iterations == b.iterations == 700


def test_budget_must_be_positive():
    inst = generate("dense", 6, 0)
    with pytest.raises(ValueError):
        tabu_search(build_penalty_qubo(inst), inst, budget_s=0)
    with pytest.raises(ValueError):
        feasible_swap_search(inst, budget_s=-1)


@pytest.mark.parametrize("family", FAMILIES)
def test_swap_reaches_optimum_and_stays_feasible(family):
    inst = generate(family, 15, 1)
    seen = []
    res = feasible_swap_search(inst, seed=0, max_iter=800, callback=seen.append)
    assert res.best.objective == pytest.approx(exact_solve(inst).best.objective, abs=1e-12)
    assert seen and all(sum(z) == inst.k for z in seen)


def test_swap_k_equals_n():
    inst = make_instance([0.1, 0.2, 0.3], np.eye(3), k=3)
    res = feasible_swap_search(inst, budget_s=1.0)
    assert res.best.z == (1, 1, 1) and res.iterations == 0


@settings(max_examples=15, deadline=None)
@given(family=st.sampled_from(FAMILIES), n=st.integers(5, 11), seed=st.integers(0, 300))
def test_oracle_dominance(family, n, seed):
    inst = generate(family, n, seed)
    f_star = exact_solve(inst).best.objective
    q = build_penalty_qubo(inst)
    for res in (tabu_search(q, inst, seed=seed, max_iter=200),
                feasible_swap_search(inst, seed=seed, max_iter=20),
                simulated_annealing(q, inst, AnnealConfig(reads=5, sweeps=20, seed=seed))):
        assert res.best.objective >= f_star - 1e-9
        assert res.best.objective == pytest.approx(evaluate_mvt(inst, res.best.z), abs=1e-12)


def test_portfolio_from_z():
    inst = generate("dense", 5, 0)
    p = Portfolio.from_z(inst, [1, 1, 0, 0, 0])
    assert p.feasible == (inst.k == 2)

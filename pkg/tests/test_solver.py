import itertools
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sched_mdp import (MaxIterations, MdpState, SolverOptions, SystemConfig, TruncationTooTight,
                       ValidationError, build_mdp, discounted_value_iteration, evaluate_policy,
                       min_mean_cycle_oracle, relative_value_iteration, solve)
from sched_mdp.solver import aoe_residual, greedy_policy, policy_cycles, vanishing_discount

from conftest import example_models, random_instances, twin_models


def brute_force_min_mean_cycle(cost, nxt):
    """Enumerate simple cycles of the multigraph s -> nxt[s, a]."""
    N = len(cost)
    edges = {(s, int(t)) for s in range(N) for t in nxt[s]}
    best = np.inf
    for k in range(1, N + 1):
        for cyc in itertools.permutations(range(N), k):
            if cyc[0] != min(cyc):
                continue
            if all((cyc[i], cyc[(i + 1) % k]) in edges for i in range(k)):
                best = min(best, float(np.mean(cost[list(cyc)])))
    return best


@settings(max_examples=60, deadline=None)
@given(N=st.integers(1, 6), A=st.integers(1, 3), seed=st.integers(0, 2 ** 32 - 1))
def test_karp_matches_brute_force(N, A, seed):
    rng = np.random.default_rng(seed)
    g = SimpleNamespace(cost=rng.uniform(0, 10, N), next=rng.integers(0, N, (N, A)), n_states=N)
    rho, cycle = min_mean_cycle_oracle(g)
    assert rho == pytest.approx(brute_force_min_mean_cycle(g.cost, g.next), rel=1e-12, abs=1e-12)
    assert cycle
    assert np.mean(g.cost[cycle]) == pytest.approx(rho, rel=1e-9)
    for s, t in zip(cycle, cycle[1:] + cycle[:1]):
        assert t in g.next[s]


def test_rvi_matches_oracle_on_example_instance(example_mdp, example_sol):
    rho, cycle = min_mean_cycle_oracle(example_mdp)
    assert abs(example_sol.rho_star - rho) / rho < 1e-9
    assert aoe_residual(example_mdp, example_sol) < 1e-6 * example_sol.rho_star
    assert example_sol.V[example_mdp.ref] == 0.0


def test_optimal_cycle_of_example_instance(example_mdp, example_sol):
    rho, cycle = evaluate_policy(example_mdp, example_sol.policy)
    assert rho == pytest.approx(example_sol.rho_star, rel=1e-9)
    states = {example_mdp.state(s) for s in cycle}
    assert MdpState((7, 4), (3, 4)) in states
    assert len(cycle) == 7
    assert not example_mdp.clamped[cycle].any()


@pytest.mark.parametrize("cfg", random_instances(6, seed=11, tau_max=25), ids=lambda c: str(c.d))
def test_rvi_matches_oracle_random(cfg):
    mdp = build_mdp(cfg)
    sol = solve(mdp)
    rho, _ = min_mean_cycle_oracle(mdp)
    assert abs(sol.rho_star - rho) / rho < 1e-8
    rho_pol, _ = evaluate_policy(mdp, sol.policy)
    assert rho_pol == pytest.approx(rho, rel=1e-8)


def test_twin_instance_value_and_alternation(twin_mdp, twin_sol):
    assert twin_sol.rho_star == pytest.approx(8.0448, abs=1e-3)
    rho, cycle = evaluate_policy(twin_mdp, twin_sol.policy)
    assert rho == pytest.approx(twin_sol.rho_star, rel=1e-9)
    acts = [twin_mdp.actions[twin_sol.policy[s]] for s in cycle]
    assert sorted(acts) == [(0,), (1,)]


def test_discounted_policy_matches_rvi_on_twin(twin_mdp, twin_sol):
    sol = discounted_value_iteration(twin_mdp, SolverOptions(mode="discounted_vi", alpha=0.999))
    keep = ~twin_mdp.clamped
    assert np.array_equal(sol.policy[keep], twin_sol.policy[keep])
    assert sol.rho_star == pytest.approx(twin_sol.rho_star, rel=1e-2)


def test_vanishing_discount_estimates_approach_rho(twin_mdp, twin_sol):
    sols = vanishing_discount(twin_mdp, (0.9, 0.99, 0.999))
    gaps = [abs(s.rho_star - twin_sol.rho_star) for s in sols.values()]
    assert gaps[0] > gaps[1] > gaps[2]


def test_greedy_ties_prefer_lowest_action():
    values = np.array([1.0, 1.0, 0.5])
    nxt = np.array([[0, 1], [1, 0], [2, 2]])
    assert greedy_policy(values, nxt).tolist() == [0, 0, 0]
    values = np.array([1.0, 1.0 - 1e-12, 3.0])
    assert greedy_policy(values, np.array([[0, 1]] * 3)).tolist() == [0, 0, 0]
    assert greedy_policy(values, np.array([[2, 1]] * 3)).tolist() == [1, 1, 1]


def test_iteration_cap_raises(example_mdp):
    with pytest.raises(MaxIterations) as exc:
        relative_value_iteration(example_mdp, SolverOptions(max_iters=3))
    assert exc.value.iterations == 3
    with pytest.raises(MaxIterations):
        discounted_value_iteration(example_mdp, SolverOptions(mode="discounted_vi", max_iters=3))


def test_explicit_span_tolerance(twin_mdp):
    loose = relative_value_iteration(twin_mdp, SolverOptions(span_tol=1e-3))
    tight = relative_value_iteration(twin_mdp, SolverOptions(span_tol=1e-11))
    assert loose.span_residual < 1e-3 and tight.span_residual < 1e-11
    assert loose.iterations <= tight.iterations


def test_always_one_sensor_is_truncation_artefact(example_mdp):
    always_first = np.zeros(example_mdp.n_states, dtype=int)
    with pytest.raises(TruncationTooTight):
        evaluate_policy(example_mdp, always_first)


def test_policy_cycles_partition_recurrent_states(twin_mdp, twin_sol):
    cycles = policy_cycles(twin_mdp, twin_sol.policy)
    flat = [s for c in cycles for s in c]
    assert len(flat) == len(set(flat))


@pytest.mark.parametrize("kwargs", [dict(mode="policy_iteration"), dict(alpha=1.0),
                                    dict(span_tol=0.0), dict(max_iters=0), dict(damping=0.0)])
def test_solver_options_validation(kwargs):
    with pytest.raises(ValidationError) as exc:
        SolverOptions(**kwargs)
    assert exc.value.field.startswith("solver.")


def test_solution_to_dict(twin_mdp, twin_sol):
    doc = twin_sol.to_dict(twin_mdp)
    assert doc["mode"] == "relative_vi"
    assert len(doc["states"]) == twin_mdp.n_states
    assert {s["action"] for s in doc["states"]} <= {"1", "2"}

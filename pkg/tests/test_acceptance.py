"""One pass/fail check per acceptance criterion, at the stated tolerances."""

import time

import numpy as np
import pytest

from sched_mdp import (McConfig, MdpState, SolverOptions, build_mdp, discounted_value_iteration,
                       evaluate_policy, min_mean_cycle_oracle, monte_carlo_validate,
                       riccati_steady_state, rollout, solve, transition)
from sched_mdp.cli import main
from sched_mdp.structure import analyze

from conftest import example_models, random_instances

MC_SEED = 2019


def _action(mdp, sol, tau, nu):
    return mdp.actions[sol.policy[mdp.index(MdpState(tau, nu))]]


def test_criterion_1_riccati_reproduction():
    t0 = time.perf_counter()
    m1, m2 = example_models()
    P1 = riccati_steady_state(m1)
    P2 = riccati_steady_state(m2)
    elapsed = time.perf_counter() - t0
    assert abs(P1[0, 0] - 0.70) <= 0.01
    assert np.abs(P2 - np.array([[0.84, 0.40], [0.40, 2.00]])).max() <= 0.01
    assert elapsed < 1.0


def test_criterion_2a_optimal_action_at_6_6_3_4_is_sensor_1(example_mdp, example_sol):
    assert example_mdp.cfg.tau_max >= 30
    a = _action(example_mdp, example_sol, (6, 6), (3, 4))
    assert a == (0,), f"optimal action at (6,6,3,4) is sensor {a[0] + 1}"


def test_criterion_2b_consistency_chain_takes_sensor_1(example_mdp, example_sol):
    cfg = example_mdp.cfg
    chain = [MdpState((6, 6), (3, 4)), MdpState((7, 7), (2, 4)), MdpState((8, 8), (1, 4))]
    for s, t in zip(chain, chain[1:]):
        assert transition(s, (0,), cfg) == t
    for s in chain[1:]:
        assert _action(example_mdp, example_sol, s.tau, s.nu) == (0,)


@pytest.fixture(scope="module")
def structural_runs(example_mdp, example_sol):
    """Solve and verify the two-sensor example plus 25 random instances (tau_max = 40)."""
    t0 = time.perf_counter()
    runs = [("example", example_mdp, example_sol, analyze(example_mdp, example_sol))]
    for k, cfg in enumerate(random_instances(25, seed=7, tau_max=40)):
        mdp = build_mdp(cfg)
        sol = solve(mdp)
        runs.append((f"random{k}", mdp, sol, analyze(mdp, sol)))
    return runs, time.perf_counter() - t0


def test_criterion_3_structural_properties(structural_runs):
    runs, elapsed = structural_runs
    assert len(runs) >= 21
    bad = {name: (len(r.consistency_violations), len(r.threshold_violations),
                  len(r.monotonicity_violations), len(r.staircase_violations))
           for name, _, _, r in runs if not r.ok}
    assert bad == {}
    assert all(r.boundary is not None for _, _, _, r in runs)
    assert elapsed < 120


def test_criterion_4_oracle_equivalence(structural_runs):
    runs, _ = structural_runs
    gaps = {}
    for name, mdp, sol, _ in runs:
        rho_k, _ = min_mean_cycle_oracle(mdp)
        gaps[name] = abs(sol.rho_star - rho_k) / rho_k
    assert max(gaps.values()) < 1e-6, gaps


@pytest.mark.parametrize("alpha", [0.999, 0.9999])
def test_criterion_5_vanishing_discount_policy(example_mdp, example_sol, alpha):
    sol = discounted_value_iteration(example_mdp, SolverOptions(mode="discounted_vi", alpha=alpha))
    keep = ~example_mdp.clamped
    differ = np.flatnonzero(sol.policy[keep] != example_sol.policy[keep])
    assert differ.size == 0


def test_criterion_6_closed_loop_consistency(example_mdp, example_sol):
    t0 = time.perf_counter()
    tr = rollout(example_mdp, example_sol.policy, horizon=10_000)
    assert abs(tr.running_average[-1] - example_sol.rho_star) / example_sol.rho_star < 0.01
    cfg = McConfig(horizon=160, runs=10_000, seed=MC_SEED, burn_in=100)
    res = monte_carlo_validate(example_mdp, example_sol.policy, cfg)
    b = res.burn_in
    for emp, pred, se in zip(res.empirical, res.predicted, res.stderr):
        assert np.all(np.abs(emp[b:] - pred[b:]) <= 3 * se[b:])
    assert res.age_mismatches == 0
    assert all(p[b] < 1e-6 for p in res.local_P_dev)
    assert time.perf_counter() - t0 < 300


def test_criterion_7_identical_sensors(twin_mdp, twin_sol):
    assert abs(twin_sol.rho_star - 8.0448) <= 1e-3
    rho_k, _ = min_mean_cycle_oracle(twin_mdp)
    assert abs(twin_sol.rho_star - rho_k) / rho_k < 1e-6
    rho_c, cycle = evaluate_policy(twin_mdp, twin_sol.policy)
    acts = [twin_mdp.actions[twin_sol.policy[s]][0] for s in cycle]
    assert len(acts) % 2 == 0
    assert all(a != b for a, b in zip(acts, acts[1:] + acts[:1]))
    assert rho_c == pytest.approx(rho_k, rel=1e-9)


def test_criterion_8_truncation_audit(tmp_path, example_mdp, example_sol):
    assert main(["solve", "--config", "paper_example.json", "--tau-max", "4",
                 "--out", str(tmp_path)]) == 4
    _, cycle = evaluate_policy(example_mdp, example_sol.policy)
    assert example_mdp.cfg.tau_max == 30
    assert not example_mdp.clamped[cycle].any()
    assert main(["solve", "--config", "paper_example.json", "--out", str(tmp_path)]) == 0

import itertools
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sched_mdp import (InvalidAction, MdpState, StateExplosion, SystemConfig, TruncationTooTight,
                       ValidationError, build_mdp, enumerate_reachable, stage_cost, transition)
from sched_mdp.mdp import action_sets

from conftest import example_models, twin_models


def test_transition_mid_transmission(example_cfg):
    s = MdpState((6, 6), (3, 4))
    assert transition(s, (0,), example_cfg) == MdpState((7, 7), (2, 4))
    assert transition(MdpState((7, 7), (2, 4)), (0,), example_cfg) == MdpState((8, 8), (1, 4))


def test_transition_completion_and_interruption(example_cfg):
    done = transition(MdpState((8, 8), (1, 4)), (0,), example_cfg)
    assert done == MdpState((3, 9), (3, 4))
    # switching away discards the partial packet count
    cut = transition(MdpState((7, 7), (2, 4)), (1,), example_cfg)
    assert cut == MdpState((8, 8), (3, 3))


def test_transition_clamps_at_tau_max(example_cfg):
    s = MdpState((30, 29), (3, 4))
    assert transition(s, (0,), example_cfg).tau == (30, 30)


def test_transition_rejects_bad_input(example_cfg):
    with pytest.raises(InvalidAction):
        transition(MdpState((5, 5), (3, 4)), (0, 1), example_cfg)
    with pytest.raises(InvalidAction):
        transition(MdpState((5, 5), (3, 4)), (2,), example_cfg)
    with pytest.raises(ValidationError):
        transition(MdpState((5, 5), (2, 3)), (0,), example_cfg)  # two sensors busy with m=1


def test_stage_cost_at_fresh_state(example_cfg, example_mdp):
    c = stage_cost(MdpState((0, 0), (3, 4)), example_mdp.tables)
    assert c == pytest.approx(3.54, abs=0.02)
    assert example_mdp.cost[example_mdp.ref] == pytest.approx(c)


def test_system_config_validation():
    m1, m2 = example_models()
    with pytest.raises(ValidationError):
        SystemConfig((m1,), 1, 30)
    with pytest.raises(ValidationError):
        SystemConfig((m1, m2), 2, 30)
    with pytest.raises(TruncationTooTight):
        SystemConfig((m1, m2), 1, 4)
    SystemConfig((m1, m2), 1, 5)


def brute_force_reachable(cfg, start):
    seen = {start}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        for a in action_sets(cfg.n, cfg.m):
            t = transition(s, a, cfg)
            if t not in seen:
                seen.add(t)
                queue.append(t)
    return seen


@pytest.mark.parametrize("T", [3, 5, 8])
def test_reachable_count_unit_packets(T):
    cfg = SystemConfig(twin_models(), 1, T)
    start = MdpState((0, 0), (1, 1))
    mdp = enumerate_reachable(cfg, [np.arange(T + 1.0)] * 2, initial=start)
    assert mdp.n_states == 2 * T
    got = {mdp.state(i) for i in range(mdp.n_states)}
    assert got == brute_force_reachable(cfg, start)


def _small_cfg(ds, m, T):
    models = [twin_models(d)[0] for d in ds]
    return SystemConfig(tuple(models), m, T)


@settings(max_examples=25, deadline=None)
@given(ds=st.lists(st.integers(1, 3), min_size=2, max_size=3), m=st.integers(1, 2),
       extra=st.integers(0, 3))
def test_enumeration_agrees_with_transition(ds, m, extra):
    if m >= len(ds):
        m = len(ds) - 1
    cfg = _small_cfg(ds, m, max(ds) + 1 + extra)
    tables = [np.arange(cfg.tau_max + 1.0) * (i + 1) for i in range(cfg.n)]
    mdp = enumerate_reachable(cfg, tables)
    assert np.all(np.diff(mdp.codes) > 0)
    for s in range(mdp.n_states):
        state = mdp.state(s)
        assert mdp.index(state) == s
        assert sum(v < d for v, d in zip(state.nu, cfg.d)) <= cfg.m
        for k, a in enumerate(mdp.actions):
            assert mdp.state(mdp.next[s, k]) == transition(state, a, cfg)
        assert mdp.cost[s] == stage_cost(state, tables)
    fresh = mdp.index(cfg.fresh_state())
    assert mdp.ref == fresh
    sub = enumerate_reachable(cfg, tables, initial=cfg.fresh_state())
    assert sub.n_states == mdp.reachable_from(fresh).sum()


def test_action_sets_are_lexicographic():
    assert action_sets(3, 2) == ((0, 1), (0, 2), (1, 2))
    assert len(action_sets(5, 2)) == 10


def test_masks(example_mdp):
    s = example_mdp.index(MdpState((6, 6), (3, 4)))
    assert example_mdp.decision_epoch[s] and not example_mdp.startup[s] and not example_mdp.clamped[s]
    assert example_mdp.startup[example_mdp.index(MdpState((2, 9), (3, 4)))]
    assert example_mdp.clamped[example_mdp.index(MdpState((30, 9), (3, 4)))]
    with pytest.raises(KeyError):
        example_mdp.index(MdpState((5, 5), (2, 3)))


def test_state_explosion():
    cfg = SystemConfig(twin_models(), 1, 10)
    with pytest.raises(StateExplosion):
        build_mdp(cfg, max_states=50)


def test_to_dict_uses_one_based_actions(twin_mdp):
    d = twin_mdp.to_dict()
    assert d["actions"] == [[1], [2]]
    assert len(d["states"]) == twin_mdp.n_states

"""State space, transition law and stage cost of the scheduling MDP.

A state is ``(tau_1..tau_n, nu_1..nu_n)``: holding times and remaining-packet
counters.  Actions are the m-subsets of sensors allowed on the channel in one
step.  Transitions are deterministic:

* a scheduled sensor with ``nu > 1`` sends one packet (``tau + 1``, ``nu - 1``);
* a scheduled sensor with ``nu == 1`` completes, so ``tau' = nu' = d``;
* an unscheduled sensor ages (``tau + 1``) and any partial transmission
  restarts (``nu' = d``).

Holding times saturate at ``tau_max``; states touching the cap are flagged as
clamped so callers can tell when truncation matters.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidAction, StateExplosion, TruncationTooTight, ValidationError
from .estimation import ProcessModel, steady_state

MAX_STATES = 5_000_000


@dataclass(frozen=True)
class SystemConfig:
    models: tuple[ProcessModel, ...]
    m: int = 1
    tau_max: int = 30

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        n = len(self.models)
        if n < 2:
            raise ValidationError(f"need at least two sensors, got {n}", "system.sensors")
        if not 1 <= self.m < n:
            raise ValidationError(f"channel slots must satisfy 1 <= m < n = {n}, got {self.m}", "system.m")
        need = max(self.d) + 1
        if self.tau_max < need:
            raise TruncationTooTight(
                f"tau_max={self.tau_max} is below max packet length + 1 = {need}; "
                "completed transmissions would land on the clamp")

    @property
    def n(self):
        return len(self.models)

    @property
    def d(self):
        return tuple(mod.d for mod in self.models)

    def fresh_state(self):
        return MdpState((0,) * self.n, self.d)


@dataclass(frozen=True)
class MdpState:
    tau: tuple[int, ...]
    nu: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tau", tuple(int(t) for t in self.tau))
        object.__setattr__(self, "nu", tuple(int(v) for v in self.nu))

    @classmethod
    def from_flat(cls, flat):
        flat = [int(x) for x in flat]
        n = len(flat) // 2
        return cls(tuple(flat[:n]), tuple(flat[n:]))

    def flat(self):
        return self.tau + self.nu

    def check(self, cfg):
        if len(self.tau) != cfg.n or len(self.nu) != cfg.n:
            raise ValidationError(f"state {self} does not have {cfg.n} sensors")
        for i, (t, v, d) in enumerate(zip(self.tau, self.nu, cfg.d)):
            if not 0 <= t <= cfg.tau_max:
                raise ValidationError(f"tau_{i + 1}={t} outside 0..{cfg.tau_max}")
            if not 1 <= v <= d:
                raise ValidationError(f"nu_{i + 1}={v} outside 1..{d}")
        busy = sum(v < d for v, d in zip(self.nu, cfg.d))
        if busy > cfg.m:
            raise ValidationError(f"{busy} sensors mid-transmission but only {cfg.m} slots")

    def __str__(self):
        return "(" + ",".join(map(str, self.flat())) + ")"


def action_sets(n, m):
    """All m-subsets of ``range(n)`` in lexicographic order."""
    return tuple(itertools.combinations(range(n), m))


def _normalize_action(a, cfg):
    try:
        a = tuple(sorted({int(i) for i in a}))
    except TypeError:
        a = (int(a),)
    if len(a) != cfg.m or any(not 0 <= i < cfg.n for i in a):
        raise InvalidAction(f"action {a} must be {cfg.m} distinct sensor indices in 0..{cfg.n - 1}")
    return a


def transition(s, a, cfg):
    """Successor of ``s`` when the sensors in ``a`` (0-based) hold the channel."""
    a = _normalize_action(a, cfg)
    s.check(cfg)
    tau = [min(t + 1, cfg.tau_max) for t in s.tau]
    nu = list(cfg.d)
    for i in a:
        if s.nu[i] == 1:
            tau[i] = nu[i] = cfg.d[i]
        else:
            nu[i] = s.nu[i] - 1
    return MdpState(tuple(tau), tuple(nu))


def stage_cost(s, tables):
    """Sum over sensors of ``Tr(h_i^{tau_i}(Pbar_i))``; independent of action and nu."""
    return float(sum(tab[t] for tab, t in zip(tables, s.tau)))


def _step_batch(flat, action, d, tau_max):
    n = len(d)
    tau, nu = flat[:, :n], flat[:, n:]
    out = np.empty_like(flat)
    out[:, :n] = np.minimum(tau + 1, tau_max)
    out[:, n:] = d
    for i in action:
        done = nu[:, i] == 1
        out[:, i] = np.where(done, d[i], out[:, i])
        out[:, n + i] = np.where(done, d[i], nu[:, i] - 1)
    return out


class _Codec:
    """Mixed-radix code over (tau, nu); code order is lexicographic state order."""

    def __init__(self, d, tau_max):
        self.radices = np.array([tau_max + 1] * len(d) + list(d), dtype=np.int64)
        self.offsets = np.array([0] * len(d) + [1] * len(d), dtype=np.int64)
        size = 1
        for r in self.radices:
            size *= int(r)
        self.size = size

    def encode(self, flat):
        code = np.zeros(len(flat), dtype=np.int64)
        for j, r in enumerate(self.radices):
            code = code * r + (flat[:, j] - self.offsets[j])
        return code


def _all_valid_states(cfg):
    n, d, T = cfg.n, cfg.d, cfg.tau_max
    taus = np.array(list(itertools.product(range(T + 1), repeat=n)), dtype=np.int64)
    nus = [nu for nu in itertools.product(*(range(1, di + 1) for di in d))
           if sum(v < di for v, di in zip(nu, d)) <= cfg.m]
    nus = np.array(nus, dtype=np.int64)
    flat = np.empty((len(taus) * len(nus), 2 * n), dtype=np.int64)
    flat[:, :n] = np.repeat(taus, len(nus), axis=0)
    flat[:, n:] = np.tile(nus, (len(taus), 1))
    return flat


@dataclass(frozen=True, eq=False)
class MdpInstance:
    """Enumerated deterministic MDP.

    ``states`` is an ``(S, 2n)`` integer array of flattened ``(tau, nu)``
    rows sorted lexicographically; ``next[s, a]`` is the successor index of
    state ``s`` under ``actions[a]``; ``cost[s]`` is the stage cost.
    """

    cfg: SystemConfig
    tables: tuple[np.ndarray, ...] = field(repr=False)
    states: np.ndarray = field(repr=False)
    actions: tuple[tuple[int, ...], ...]
    next: np.ndarray = field(repr=False)
    cost: np.ndarray = field(repr=False)
    ref: int
    codes: np.ndarray = field(repr=False)

    @property
    def n_states(self):
        return len(self.states)

    @property
    def n(self):
        return self.cfg.n

    @cached_property
    def tau(self):
        return self.states[:, :self.n]

    @cached_property
    def nu(self):
        return self.states[:, self.n:]

    @cached_property
    def clamped(self):
        return (self.tau >= self.cfg.tau_max).any(axis=1)

    @cached_property
    def decision_epoch(self):
        return (self.nu == np.array(self.cfg.d)).all(axis=1)

    @cached_property
    def startup(self):
        """States where some sensor has never completed a delivery (``tau_i < d_i``)."""
        return (self.tau < np.array(self.cfg.d)).any(axis=1)

    def index(self, state):
        flat = np.array(state.flat() if isinstance(state, MdpState) else state, dtype=np.int64)
        code = _Codec(self.cfg.d, self.cfg.tau_max).encode(flat[None, :])[0]
        pos = int(np.searchsorted(self.codes, code))
        if pos == len(self.codes) or self.codes[pos] != code:
            raise KeyError(f"state {tuple(flat)} is not in the enumerated state space")
        return pos

    def state(self, idx):
        return MdpState.from_flat(self.states[idx])

    def reachable_from(self, start):
        """Boolean mask of states reachable from index ``start`` under any actions."""
        seen = np.zeros(self.n_states, dtype=bool)
        seen[start] = True
        frontier = np.array([start])
        while len(frontier):
            succ = np.unique(self.next[frontier].ravel())
            succ = succ[~seen[succ]]
            seen[succ] = True
            frontier = succ
        return seen

    def to_dict(self):
        return {
            "d": list(self.cfg.d),
            "m": self.cfg.m,
            "tau_max": self.cfg.tau_max,
            "actions": [[i + 1 for i in a] for a in self.actions],
            "ref": self.ref,
            "states": self.states.tolist(),
            "next": self.next.tolist(),
            "cost": self.cost.tolist(),
            "clamped": self.clamped.tolist(),
        }


def enumerate_reachable(cfg, tables, initial=None, max_states=MAX_STATES):
    """Closure of ``initial`` under every action.

    ``initial`` may be one ``MdpState``, an iterable of them, or ``None`` for
    the whole valid state space (every state satisfying the counter
    invariants), which is itself closed.  The reference state is the fresh
    start ``(0.., d..)`` when present, otherwise the first seed.
    """
    codec = _Codec(cfg.d, cfg.tau_max)
    if initial is None:
        seeds = _all_valid_states(cfg)
    else:
        if isinstance(initial, MdpState):
            initial = [initial]
        for s in initial:
            s.check(cfg)
        seeds = np.array([s.flat() for s in initial], dtype=np.int64)
    if len(seeds) > max_states:
        raise StateExplosion(f"{len(seeds)} seed states exceed the ceiling of {max_states}")

    actions = action_sets(cfg.n, cfg.m)
    d = np.array(cfg.d, dtype=np.int64)
    seen_codes = set(codec.encode(seeds).tolist())
    found = [seeds]
    frontier = seeds
    while len(frontier):
        succ = np.concatenate([_step_batch(frontier, a, d, cfg.tau_max) for a in actions])
        codes = codec.encode(succ)
        codes, first = np.unique(codes, return_index=True)
        fresh = np.array([c not in seen_codes for c in codes.tolist()], dtype=bool)
        frontier = succ[first[fresh]]
        seen_codes.update(codes[fresh].tolist())
        if len(seen_codes) > max_states:
            raise StateExplosion(f"reachable set exceeds the ceiling of {max_states} states")
        found.append(frontier)

    states = np.concatenate(found)
    codes = codec.encode(states)
    order = np.argsort(codes, kind="stable")
    states, codes = states[order], codes[order]
    _, keep = np.unique(codes, return_index=True)
    states, codes = states[keep], codes[keep]

    nxt = np.empty((len(states), len(actions)), dtype=np.int64)
    for k, a in enumerate(actions):
        nxt[:, k] = np.searchsorted(codes, codec.encode(_step_batch(states, a, d, cfg.tau_max)))
    cost = np.zeros(len(states))
    for i, tab in enumerate(tables):
        cost += np.asarray(tab)[states[:, i]]

    fresh_code = codec.encode(np.array([cfg.fresh_state().flat()]))[0]
    pos = int(np.searchsorted(codes, fresh_code))
    if pos < len(codes) and codes[pos] == fresh_code:
        ref = pos
    else:
        ref = int(np.searchsorted(codes, codec.encode(seeds[:1])[0]))
    for arr in (states, nxt, cost, codes):
        arr.setflags(write=False)
    return MdpInstance(cfg, tuple(np.asarray(t) for t in tables), states, actions, nxt, cost, ref, codes)


def build_mdp(cfg, initial=None, steady=None, max_states=MAX_STATES):
    """Steady states, cost tables and the enumerated MDP in one call."""
    if steady is None:
        steady = [steady_state(mod, cfg.tau_max) for mod in cfg.models]
    return enumerate_reachable(cfg, [s.cost_table for s in steady], initial, max_states)

"""Average-cost and discounted dynamic programming on an enumerated MDP.

Transitions are deterministic, so a Bellman backup is a gather over the
``next`` table followed by a min across actions.  Besides relative and
discounted value iteration this module carries an independent check: in a
deterministic MDP the optimal average cost is the minimum mean cycle of the
state graph, computed here with Karp's characterization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import MaxIterations, TruncationTooTight, ValidationError

log = logging.getLogger(__name__)

MODES = ("relative_vi", "discounted_vi")
TIE_RTOL = 1e-9
STALL_WINDOW = 1000


class _StallDetector:
    """Flags an iteration whose residual stopped shrinking at the rounding floor."""

    def __init__(self, window=STALL_WINDOW):
        self.window = window
        self.best = np.inf
        self.since = 0

    def __call__(self, residual, magnitude):
        if residual < self.best:
            self.best = residual
            self.since = 0
            return False
        self.since += 1
        return self.since >= self.window and residual <= 64 * np.finfo(float).eps * magnitude


@dataclass(frozen=True)
class SolverOptions:
    mode: str = "relative_vi"
    alpha: float = 0.999
    span_tol: float | None = None  # None: 1e-9 * min stage cost, a lower bound on rho*
    max_iters: int = 1_000_000
    damping: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}, expected one of {MODES}", "solver.mode")
        if not 0 < self.alpha < 1:
            raise ValidationError(f"must lie in (0, 1), got {self.alpha}", "solver.alpha")
        if self.span_tol is not None and not self.span_tol > 0:
            raise ValidationError(f"must be positive, got {self.span_tol}", "solver.span_tol")
        if self.max_iters < 1:
            raise ValidationError(f"must be >= 1, got {self.max_iters}", "solver.max_iters")
        if not 0 < self.damping <= 1:
            raise ValidationError(f"must lie in (0, 1], got {self.damping}", "solver.damping")

    def tolerance(self, mdp):
        if self.span_tol is not None:
            return self.span_tol
        scale = float(np.abs(mdp.cost).min()) or float(np.abs(mdp.cost).max())
        return 1e-9 * scale


@dataclass(frozen=True, eq=False)
class Solution:
    """Optimal average cost, relative values (zero at ``ref``) and greedy policy.

    ``policy[s]`` indexes ``mdp.actions``.  In discounted mode ``V`` holds the
    normalized discounted values and ``rho_star`` the estimate ``(1 - alpha) J(ref)``.
    """

    rho_star: float
    V: np.ndarray = field(repr=False)
    policy: np.ndarray = field(repr=False)
    iterations: int
    span_residual: float
    mode: str = "relative_vi"
    alpha: float | None = None
    ref: int = 0
    tol: float = 0.0

    def to_dict(self, mdp):
        from .export import fmt_float, label_action

        return {
            "mode": self.mode,
            "alpha": self.alpha,
            "rho_star": fmt_float(self.rho_star),
            "iterations": self.iterations,
            "span_residual": fmt_float(self.span_residual),
            "span_tol": fmt_float(self.tol),
            "reference_state": mdp.states[self.ref].tolist(),
            "states": [
                {"state": mdp.states[s].tolist(), "V": fmt_float(self.V[s]),
                 "action": label_action(mdp.actions[self.policy[s]])}
                for s in range(mdp.n_states)
            ],
        }


def _min_successor(values, nxt):
    out = values[nxt[:, 0]]
    for k in range(1, nxt.shape[1]):
        np.minimum(out, values[nxt[:, k]], out=out)
    return out


def greedy_policy(values, nxt, rtol=TIE_RTOL):
    """Action minimizing the successor value; near-ties go to the lowest action index.

    Since the stage cost does not depend on the action, comparing successor
    values is the same as comparing full Bellman right-hand sides.
    """
    succ = values[nxt]
    best = succ.min(axis=1, keepdims=True)
    slack = rtol * np.maximum(1.0, np.abs(best))
    return np.argmax(succ <= best + slack, axis=1)


def relative_value_iteration(mdp, opts=None):
    """Damped relative value iteration normalized at ``mdp.ref``.

    Iterates ``w <- (1 - lam) w + lam (Tw - Tw(ref))`` until the span of the
    update drops below the tolerance.  Damping breaks the periodicity that
    deterministic schedules induce.
    """
    opts = opts or SolverOptions()
    tol = opts.tolerance(mdp)
    lam = opts.damping
    c, nxt, ref = mdp.cost, mdp.next, mdp.ref
    w = np.zeros(mdp.n_states)
    span = np.inf
    stalled = _StallDetector()
    for it in range(1, opts.max_iters + 1):
        Tw = c + _min_successor(w, nxt)
        w_new = (1 - lam) * w + lam * (Tw - Tw[ref])
        diff = w_new - w
        w = w_new
        span = float(diff.max() - diff.min())
        if span < tol or stalled(span, np.abs(w).max()):
            break
    else:
        raise MaxIterations(
            f"relative value iteration did not reach span {tol:.3g} in {opts.max_iters} "
            f"iterations (last span {span:.3g}); try smaller damping or discounted mode",
            iterations=opts.max_iters, residual=span)
    rho = float(c[ref] + _min_successor(w, nxt)[ref])
    log.debug("RVI converged in %d iterations, rho*=%.12g", it, rho)
    return Solution(rho, w, greedy_policy(w, nxt), it, span, "relative_vi", None, ref, tol)


def discounted_value_iteration(mdp, opts=None):
    """Value iteration with the discounted operator ``T_alpha``.

    Stops when successive iterates differ by less than
    ``span_tol (1 - alpha) / (2 alpha)`` in sup norm, which bounds the distance
    to the fixed point by ``span_tol / 2``.  Returns values normalized to zero
    at ``mdp.ref``.
    """
    opts = opts or SolverOptions(mode="discounted_vi")
    alpha = opts.alpha
    tol = opts.tolerance(mdp) * (1 - alpha) / (2 * alpha)
    c, nxt = mdp.cost, mdp.next
    u = np.zeros(mdp.n_states)
    delta = np.inf
    stalled = _StallDetector()
    for it in range(1, opts.max_iters + 1):
        u_new = c + alpha * _min_successor(u, nxt)
        delta = float(np.abs(u_new - u).max())
        u = u_new
        if delta < tol or stalled(delta, np.abs(u).max()):
            break
    else:
        raise MaxIterations(
            f"discounted value iteration did not reach {tol:.3g} in {opts.max_iters} iterations",
            iterations=opts.max_iters, residual=delta)
    rho = float((1 - alpha) * u[mdp.ref])
    u = u - u[mdp.ref]
    return Solution(rho, u, greedy_policy(u, nxt), it, delta, "discounted_vi", alpha, mdp.ref, tol)


def solve(mdp, opts=None):
    opts = opts or SolverOptions()
    if opts.mode == "discounted_vi":
        return discounted_value_iteration(mdp, opts)
    return relative_value_iteration(mdp, opts)


def aoe_residual(mdp, sol):
    """``max_s |min_a [c(s) + V(next(s,a))] - V(s) - rho*|``."""
    rhs = mdp.cost + _min_successor(sol.V, mdp.next)
    return float(np.abs(rhs - sol.V - sol.rho_star).max())


def min_mean_cycle_oracle(mdp):
    """Minimum mean cycle of the state graph by Karp's theorem.

    Edge ``s -> next(s, a)`` carries weight ``c(s)``.  With ``E_k(s)`` the
    cheapest ``k``-edge walk leaving ``s`` (a virtual source feeding every
    vertex), the minimum cycle mean is
    ``min_s max_{0<=k<N} (E_N(s) - E_k(s)) / (N - k)``.

    Returns ``(rho, cycle)`` with ``cycle`` a list of state indices.
    """
    c, nxt = mdp.cost, mdp.next
    N = mdp.n_states
    E = np.zeros(N)
    for _ in range(N):
        E = c + _min_successor(E, nxt)
    E_N = E
    ratio = np.full(N, -np.inf)
    E = np.zeros(N)
    for k in range(N):
        np.maximum(ratio, (E_N - E) / (N - k), out=ratio)
        E = c + _min_successor(E, nxt)
    rho = float(ratio.min())
    return rho, _critical_cycle(mdp, rho)


def _critical_cycle(mdp, rho):
    # Shortest-walk potentials under reduced costs c - rho (no negative cycles).
    # Every cycle made of tight edges has mean exactly rho.
    r = mdp.cost - rho
    nxt = mdp.next
    N = mdp.n_states
    F = np.zeros(N)
    pot = np.zeros(N)
    for _ in range(N):
        F = r + _min_successor(F, nxt)
        np.minimum(pot, F, out=pot)
    slack = r[:, None] + pot[nxt] - pot[:, None]
    scale = np.abs(rho) + np.abs(pot)[:, None] + np.abs(mdp.cost)[:, None]
    tight = slack <= 1e-9 * scale * max(1.0, np.log2(N))
    alive = np.ones(N, dtype=bool)
    while True:
        ok = (tight & alive[nxt]).any(axis=1) & alive
        if (ok == alive).all():
            break
        alive = ok
    if not alive.any():
        return []
    first = np.argmax(tight & alive[nxt], axis=1)
    s = int(np.flatnonzero(alive)[0])
    seen = {}
    path = []
    while s not in seen:
        seen[s] = len(path)
        path.append(s)
        s = int(nxt[s, first[s]])
    return path[seen[s]:]


def policy_successor(mdp, policy):
    return mdp.next[np.arange(mdp.n_states), np.asarray(policy)]


def policy_cycles(mdp, policy):
    """All cycles of the functional graph ``s -> next(s, policy[s])``, in discovery order."""
    succ = policy_successor(mdp, policy)
    color = np.zeros(mdp.n_states, dtype=np.int8)  # 0 new, 1 on current walk, 2 done
    cycles = []
    for start in range(mdp.n_states):
        if color[start]:
            continue
        walk = []
        s = start
        while color[s] == 0:
            color[s] = 1
            walk.append(s)
            s = int(succ[s])
        if color[s] == 1:
            cycles.append(walk[walk.index(s):])
        color[walk] = 2
    return cycles


def trajectory_cycle(mdp, policy, start):
    """Cycle eventually reached from ``start`` under ``policy``."""
    succ = policy_successor(mdp, policy)
    seen = {}
    path = []
    s = int(start)
    while s not in seen:
        seen[s] = len(path)
        path.append(s)
        s = int(succ[s])
    return path[seen[s]:]


def evaluate_policy(mdp, policy, start=None):
    """Average cost of a deterministic stationary policy.

    Returns ``(rho, cycle)`` for the cycle reached from ``start`` (default
    ``mdp.ref``).  Raises ``TruncationTooTight`` if any recurrent class of the
    policy contains a clamped state, since its cost is then an artefact of
    the holding-time cap.
    """
    policy = np.asarray(policy)
    if policy.shape != (mdp.n_states,):
        raise ValidationError(f"policy must have one action per state ({mdp.n_states})")
    for cyc in policy_cycles(mdp, policy):
        if mdp.clamped[cyc].any():
            bad = mdp.state(cyc[int(np.argmax(mdp.clamped[cyc]))])
            raise TruncationTooTight(
                f"recurrent class of length {len(cyc)} visits clamped state {bad} "
                f"(tau_max={mdp.cfg.tau_max}); increase tau_max and re-solve")
    cycle = trajectory_cycle(mdp, policy, mdp.ref if start is None else start)
    return float(mdp.cost[cycle].mean()), cycle


def vanishing_discount(mdp, alphas=(0.99, 0.999, 0.9999), opts=None):
    """Discounted solutions for a sequence of discount factors."""
    opts = opts or SolverOptions()
    return {a: discounted_value_iteration(mdp, replace(opts, mode="discounted_vi", alpha=a))
            for a in alphas}

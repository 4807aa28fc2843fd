"""Empirical checks of the structural properties of an optimal schedule.

* consistency: a sensor that starts a multi-packet transmission at a decision
  epoch keeps the channel until the estimate is delivered;
* threshold: at decision epochs, the set of holding times for which sensor
  ``i`` is scheduled is upward-closed in ``tau_i`` with the other holding
  times fixed; for two sensors the switching curve is a monotone staircase;
* monotonicity: the value function is non-decreasing in every ``tau_i``.

By default the examined set is the non-clamped part of the post-start-up
region (every ``tau_i >= d_i``).  The start-up states, where some sensor has
never delivered an estimate, are checked too but reported separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .export import fmt_float, label_action


@dataclass(frozen=True)
class ConsistencyViolation:
    epoch: int  # decision-epoch state where the transmission started
    state: int  # first state on the walk that drops the sensor
    sensor: int
    action: tuple[int, ...]


@dataclass(frozen=True)
class ThresholdViolation:
    sensor: int
    lower: int  # state scheduling the sensor
    upper: int  # next state along tau_sensor that does not
    lower_action: tuple[int, ...]
    upper_action: tuple[int, ...]


@dataclass(frozen=True)
class MonotonicityViolation:
    sensor: int
    lower: int
    upper: int
    V_lower: float
    V_upper: float


@dataclass
class StructureReport:
    consistency_violations: list = field(default_factory=list)
    threshold_violations: list = field(default_factory=list)
    monotonicity_violations: list = field(default_factory=list)
    staircase_violations: list = field(default_factory=list)
    boundary: dict | None = None
    thresholds: dict = field(default_factory=dict)
    examined: int = 0
    startup: dict = field(default_factory=dict)

    @property
    def ok(self):
        return not (self.consistency_violations or self.threshold_violations
                    or self.monotonicity_violations or self.staircase_violations)

    def to_dict(self, mdp):
        st = lambda s: mdp.states[s].tolist()
        return {
            "ok": self.ok,
            "examined_states": self.examined,
            "consistency_violations": [
                {"epoch": st(v.epoch), "state": st(v.state), "expected_sensor": v.sensor + 1,
                 "actual_action": label_action(v.action)} for v in self.consistency_violations],
            "threshold_violations": [
                {"sensor": v.sensor + 1, "lower": st(v.lower), "upper": st(v.upper),
                 "lower_action": label_action(v.lower_action),
                 "upper_action": label_action(v.upper_action)} for v in self.threshold_violations],
            "monotonicity_violations": [
                {"sensor": v.sensor + 1, "lower": st(v.lower), "upper": st(v.upper),
                 "V_lower": fmt_float(v.V_lower), "V_upper": fmt_float(v.V_upper)}
                for v in self.monotonicity_violations],
            "staircase_violations": [list(map(_plain, p)) for p in self.staircase_violations],
            "boundary": None if self.boundary is None else
                [{"tau2": t2, "min_tau1_for_sensor1": _plain(t1)} for t2, t1 in self.boundary.items()],
            "thresholds": [
                {"sensor": i + 1, "others": list(others), "phi": _plain(phi)}
                for (i, others), phi in self.thresholds.items()],
            "startup_region": self.startup,
        }


def _plain(x):
    return None if x is None else int(x)


def examined_mask(mdp, include_startup=False):
    mask = ~mdp.clamped
    if not include_startup:
        mask &= ~mdp.startup
    return mask


def _has_sensor(mdp, policy):
    """``(S, n)`` boolean: does the chosen action schedule sensor i."""
    member = np.zeros((len(mdp.actions), mdp.n), dtype=bool)
    for k, a in enumerate(mdp.actions):
        member[k, list(a)] = True
    return member[np.asarray(policy)]


def check_consistency(mdp, policy, mask=None):
    """Walk each started transmission and report the first state that drops it."""
    policy = np.asarray(policy)
    mask = examined_mask(mdp) if mask is None else mask
    has = _has_sensor(mdp, policy)
    d = mdp.cfg.d
    out = []
    for s in np.flatnonzero(mask & mdp.decision_epoch):
        a = mdp.actions[policy[s]]
        for i in a:
            x = s
            for _ in range(d[i] - 1):
                x = mdp.next[x, policy[x]]
                if not mask[x]:
                    break
                if not has[x, i]:
                    out.append(ConsistencyViolation(int(s), int(x), i, mdp.actions[policy[x]]))
                    break
    return out


def _lines(mdp, idx, i):
    """Sort ``idx`` into lines along ``tau_i``; returns (sorted idx, same-line-as-previous flags)."""
    tau = mdp.tau[idx]
    others = np.delete(tau, i, axis=1)
    keys = [tau[:, i]] + [others[:, j] for j in reversed(range(others.shape[1]))]
    order = np.lexsort(keys)
    idx = idx[order]
    others = others[order]
    same = np.zeros(len(idx), dtype=bool)
    same[1:] = (others[1:] == others[:-1]).all(axis=1)
    return idx, same


def check_threshold(mdp, policy, mask=None):
    """Upward-closedness of each sensor's scheduling set along its own holding time.

    Returns ``(violations, thresholds, boundary)``.  ``thresholds`` maps
    ``(i, tau_without_i)`` to the smallest examined ``tau_i`` at which sensor
    ``i`` is scheduled (``None`` if never).  For two sensors ``boundary`` maps
    ``tau_2`` to that threshold for sensor 1.
    """
    policy = np.asarray(policy)
    mask = examined_mask(mdp) if mask is None else mask
    has = _has_sensor(mdp, policy)
    epochs = np.flatnonzero(mask & mdp.decision_epoch)
    violations = []
    thresholds = {}
    for i in range(mdp.n):
        idx, same = _lines(mdp, epochs, i)
        drops = np.flatnonzero(same[1:] & has[idx[:-1], i] & ~has[idx[1:], i]) + 1
        for k in drops:
            lo, hi = idx[k - 1], idx[k]
            violations.append(ThresholdViolation(i, int(lo), int(hi), mdp.actions[policy[lo]],
                                                 mdp.actions[policy[hi]]))
        for s, first in zip(idx, ~same):
            key = (i, tuple(int(t) for t in np.delete(mdp.tau[s], i)))
            if first:
                thresholds[key] = None
            if thresholds[key] is None and has[s, i]:
                thresholds[key] = int(mdp.tau[s, i])
    violations.sort(key=lambda v: (v.lower, v.sensor))
    boundary = None
    if mdp.n == 2:
        boundary = {t[0]: phi for (i, t), phi in sorted(thresholds.items()) if i == 0}
    return violations, thresholds, boundary


def staircase_violations(boundary):
    """Rows where sensor 1's threshold decreases as ``tau_2`` grows (``None`` counts as infinity)."""
    if not boundary:
        return []
    rows = sorted(boundary.items())
    inf = float("inf")
    return [(t2a, t1a, t2b, t1b) for (t2a, t1a), (t2b, t1b) in zip(rows, rows[1:])
            if (inf if t1b is None else t1b) < (inf if t1a is None else t1a)]


def check_value_monotonicity(mdp, V, mask=None, tol=0.0):
    """Pairs of examined states, adjacent along some ``tau_i`` with everything else
    equal, where ``V`` decreases by more than ``tol`` plus a rounding allowance."""
    V = np.asarray(V, dtype=float)
    mask = examined_mask(mdp) if mask is None else mask
    idx_all = np.flatnonzero(mask)
    eps = np.finfo(float).eps
    out = []
    for i in range(mdp.n):
        # lines along tau_i must also share nu
        sub = []
        for nu in np.unique(mdp.nu[idx_all], axis=0):
            sel = idx_all[(mdp.nu[idx_all] == nu).all(axis=1)]
            idx, same = _lines(mdp, sel, i)
            lo, hi = idx[:-1][same[1:]], idx[1:][same[1:]]
            slack = tol + 64 * eps * np.maximum(np.abs(V[lo]), np.abs(V[hi]))
            bad = V[hi] < V[lo] - slack
            sub.extend(zip(lo[bad], hi[bad]))
        out.extend(MonotonicityViolation(i, int(a), int(b), float(V[a]), float(V[b])) for a, b in sub)
    out.sort(key=lambda v: (v.lower, v.sensor))
    return out


def analyze(mdp, sol, include_startup=False):
    """Run all checks for a solution and assemble a report."""
    tol = 10 * sol.tol
    mask = examined_mask(mdp, include_startup)
    report = StructureReport(examined=int(mask.sum()))
    report.consistency_violations = check_consistency(mdp, sol.policy, mask)
    report.threshold_violations, report.thresholds, report.boundary = check_threshold(mdp, sol.policy, mask)
    report.monotonicity_violations = check_value_monotonicity(mdp, sol.V, mask, tol)
    report.staircase_violations = staircase_violations(report.boundary)
    if not include_startup and mdp.startup.any():
        full = examined_mask(mdp, include_startup=True)
        touches = lambda *states: any(mdp.startup[s] for s in states)
        report.startup = {
            "states": int((full & mdp.startup).sum()),
            "consistency_violations": sum(touches(v.epoch, v.state)
                                          for v in check_consistency(mdp, sol.policy, full)),
            "threshold_violations": sum(touches(v.lower, v.upper)
                                        for v in check_threshold(mdp, sol.policy, full)[0]),
            "monotonicity_violations": sum(touches(v.lower, v.upper)
                                           for v in check_value_monotonicity(mdp, sol.V, full, tol)),
        }
    return report

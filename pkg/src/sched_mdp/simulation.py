"""Closed-loop evaluation of a schedule.

``rollout`` follows the deterministic state trajectory and accumulates stage
costs.  ``monte_carlo_validate`` simulates the processes themselves: local
time-varying Kalman filters, packetized delivery over the shared channel and
the remote predictor, and compares the empirical squared error with the
covariance the MDP predicts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import TruncationTooTight, ValidationError
from .estimation import kalman_step
from .mdp import MdpState

CHUNK_RUNS = 2000


@dataclass(frozen=True, eq=False)
class Trace:
    """Deterministic trajectory: state indices, chosen actions and stage costs."""

    mdp: object = field(repr=False)
    indices: np.ndarray = field(repr=False)
    actions: np.ndarray = field(repr=False)
    costs: np.ndarray = field(repr=False)

    @property
    def horizon(self):
        return len(self.indices)

    @property
    def running_average(self):
        return np.cumsum(self.costs) / np.arange(1, self.horizon + 1)

    @property
    def states(self):
        return [self.mdp.state(s) for s in self.indices]

    @property
    def tau(self):
        return self.mdp.tau[self.indices]

    def write_csv(self, path):
        n = self.mdp.n
        avg = self.running_average
        from .export import fmt_float, label_action

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step"] + [f"tau{i + 1}" for i in range(n)] + [f"nu{i + 1}" for i in range(n)]
                       + ["action", "cost", "running_average"])
            for k, s in enumerate(self.indices):
                w.writerow([k] + self.mdp.states[s].tolist()
                           + [label_action(self.mdp.actions[self.actions[k]]),
                              fmt_float(self.costs[k]), fmt_float(avg[k])])


def _start_index(mdp, s0):
    if s0 is None:
        return mdp.ref
    if isinstance(s0, MdpState):
        return mdp.index(s0)
    return int(s0)


def rollout(mdp, policy, s0=None, horizon=10_000):
    """Follow ``policy`` for ``horizon`` steps from ``s0`` (default: the reference state)."""
    if horizon < 1:
        raise ValidationError(f"must be >= 1, got {horizon}", "horizon")
    policy = np.asarray(policy)
    s = _start_index(mdp, s0)
    idx = np.empty(horizon, dtype=np.int64)
    for k in range(horizon):
        if mdp.clamped[s]:
            raise TruncationTooTight(f"rollout entered clamped state {mdp.state(s)} at step {k}; "
                                     f"increase tau_max (currently {mdp.cfg.tau_max})")
        idx[k] = s
        s = mdp.next[s, policy[s]]
    return Trace(mdp, idx, policy[idx], mdp.cost[idx])


@dataclass(frozen=True)
class McConfig:
    horizon: int = 200
    runs: int = 10_000
    seed: int = 0
    burn_in: int | None = None  # None: 50 * largest state dimension
    rollout_horizon: int = 10_000

    def __post_init__(self):
        if self.runs < 1:
            raise ValidationError(f"must be >= 1, got {self.runs}", "simulation.runs")
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError("must be an unsigned 64-bit integer", "simulation.seed")
        if self.burn_in is not None and not 0 <= self.burn_in < self.horizon:
            raise ValidationError(f"need 0 <= burn_in < horizon={self.horizon}, got {self.burn_in}",
                                  "simulation.burn_in")
        if self.rollout_horizon < 1:
            raise ValidationError(f"must be >= 1, got {self.rollout_horizon}",
                                  "simulation.rollout_horizon")

    def resolved_burn_in(self, models):
        b = 50 * max(mod.dim for mod in models) if self.burn_in is None else self.burn_in
        if b >= self.horizon:
            raise ValidationError(f"burn-in {b} leaves no measured steps in horizon {self.horizon}",
                                  "simulation.horizon")
        return b


@dataclass(frozen=True, eq=False)
class McResult:
    """Per-sensor ``(horizon,)`` traces of predicted and empirical squared error."""

    predicted: list
    empirical: list
    stderr: list
    local_P_dev: list  # max-abs distance of the simulated local covariance from Pbar
    burn_in: int
    runs: int
    age_mismatches: int  # steps after burn-in where delivered age != MDP holding time

    @property
    def horizon(self):
        return len(self.predicted[0])

    def z_scores(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return [(e - p) / s for e, p, s in zip(self.empirical, self.predicted, self.stderr)]

    def max_abs_z(self):
        return [float(np.abs(z[self.burn_in:]).max()) for z in self.z_scores()]

    def consistent(self, k=3.0):
        """Every post-burn-in step within ``k`` standard errors, for every sensor."""
        return all(np.all(np.abs(e - p)[self.burn_in:] <= k * s[self.burn_in:])
                   for e, p, s in zip(self.empirical, self.predicted, self.stderr))

    def write_csv(self, path):
        from .export import fmt_float

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "sensor", "predicted", "empirical", "stderr"])
            for k in range(self.horizon):
                for i in range(len(self.predicted)):
                    w.writerow([k, i + 1, fmt_float(self.predicted[i][k]),
                                fmt_float(self.empirical[i][k]), fmt_float(self.stderr[i][k])])


def _sqrt_psd(X):
    lam, U = np.linalg.eigh(X)
    return U * np.sqrt(np.clip(lam, 0, None))


def _noise(seed, run, sensor, model, horizon):
    """Standard-normal draws for one (run, sensor) from its own substream."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(run, sensor)))
    n, p = model.dim, model.C.shape[0]
    z = rng.standard_normal(n + horizon * (n + p))
    return z[:n], z[n:n + horizon * n].reshape(horizon, n), z[n + horizon * n:].reshape(horizon, p)


def _deliveries(actions, sensor, d, horizon):
    """``src[k]``: transmission start whose estimate becomes available at step ``k`` (or -1).

    Packets of one estimate go out on consecutive scheduled slots; being left
    off the channel discards a partial transmission.  The estimate formed at
    the start slot is usable from the step after the last packet.
    """
    src = np.full(horizon, -1, dtype=np.int64)
    sent, start = 0, 0
    for k in range(horizon):
        if sensor in actions[k]:
            if sent == 0:
                start = k
            sent += 1
            if sent == d:
                if k + 1 < horizon:
                    src[k + 1] = start
                sent = 0
        else:
            sent = 0
    return src


def _simulate_sensor(model, src, runs, seed, sensor, horizon, direct=False):
    """Squared remote error ``(runs, horizon)`` and local posterior covariances.

    By default the recursion runs on estimation errors rather than on the
    state itself: for an unstable ``A`` the state grows geometrically and
    ``x - xhat`` loses all precision once the state reaches about 1e16.  With
    ``direct=True`` the plant, measurements, local filter and remote
    predictor are simulated literally; both paths consume identical noise.
    """
    A, C = model.A, model.C
    n = model.dim
    LQ, LR, LP = _sqrt_psd(model.Q), _sqrt_psd(model.R), _sqrt_psd(model.Pi0)
    gains, covs = [], []
    P_prior = model.Pi0
    for _ in range(horizon):
        P, K = kalman_step(P_prior, model)
        gains.append(K)
        covs.append(P)
        P_prior = A @ P @ A.T + model.Q
    powers = [np.eye(n)]
    for _ in range(horizon):
        powers.append(A @ powers[-1])

    err2 = np.empty((runs, horizon))
    for lo in range(0, runs, CHUNK_RUNS):
        r = np.arange(lo, min(lo + CHUNK_RUNS, runs))
        draws = [_noise(seed, int(j), sensor, model, horizon) for j in r]
        x = np.stack([z0 for z0, _, _ in draws]) @ LP.T
        W = np.stack([w for _, w, _ in draws]) @ LQ.T
        V = np.stack([v for _, _, v in draws]) @ LR.T
        step = _direct if direct else _error_form
        err2[r] = step(model, x, W, V, gains, powers, src, horizon)
    return err2, covs


def _direct(model, x, W, V, gains, powers, src, horizon):
    A, C = model.A, model.C
    local = np.empty((len(x), horizon, model.dim))
    xhat_prior = np.zeros_like(x)
    out = np.empty((len(x), horizon))
    for k in range(horizon):
        y = x @ C.T + V[:, k]
        xhat = xhat_prior + (y - xhat_prior @ C.T) @ gains[k].T
        local[:, k] = xhat
        if k == 0:
            remote = xhat.copy()  # fresh start: remote holds the first local estimate
        elif src[k] >= 0:
            remote = local[:, src[k]] @ powers[k - src[k]].T
        else:
            remote = remote @ A.T
        out[:, k] = ((x - remote) ** 2).sum(axis=1)
        x = x @ A.T + W[:, k]
        xhat_prior = xhat @ A.T
    return out


def _error_form(model, x0, W, V, gains, powers, src, horizon):
    # local error e = x - xhat, remote error r = x - xhat_remote
    A, C = model.A, model.C
    I = np.eye(model.dim)
    local = np.empty((len(x0), horizon, model.dim))
    e_prior = x0
    out = np.empty((len(x0), horizon))
    for k in range(horizon):
        K = gains[k]
        e = e_prior @ (I - K @ C).T - V[:, k] @ K.T
        local[:, k] = e
        if k == 0:
            r = e.copy()
        elif src[k] >= 0:
            ell = src[k]
            r = local[:, ell] @ powers[k - ell].T
            for j in range(ell, k):
                r += W[:, j] @ powers[k - 1 - j].T
        else:
            r = r @ A.T + W[:, k - 1]
        out[:, k] = (r ** 2).sum(axis=1)
        e_prior = e @ A.T + W[:, k]
    return out


def monte_carlo_validate(mdp, policy, cfg, s0=None, steady=None):
    """Simulate every sensor under the schedule ``policy`` induces from ``s0``.

    Returns an ``McResult`` whose predicted trace is ``Tr(h^tau_k(Pbar))``
    read from the MDP cost tables along the deterministic trajectory.
    """
    models = mdp.cfg.models
    burn_in = cfg.resolved_burn_in(models)
    trace = rollout(mdp, policy, s0, cfg.horizon)
    acts = [mdp.actions[a] for a in trace.actions]
    tau = trace.tau
    if steady is None:
        from .estimation import riccati_steady_state
        pbars = [riccati_steady_state(mod) for mod in models]
    else:
        pbars = [s.Pbar for s in steady]
    predicted, empirical, stderr, pdev = [], [], [], []
    mismatches = 0
    for i, mod in enumerate(models):
        src = _deliveries(acts, i, mod.d, cfg.horizon)
        age = np.empty(cfg.horizon, dtype=np.int64)
        held = 0
        for k in range(cfg.horizon):
            held = src[k] if src[k] >= 0 else held
            age[k] = k - held
        mismatches += int((age[burn_in:] != tau[burn_in:, i]).sum())
        err2, covs = _simulate_sensor(mod, src, cfg.runs, cfg.seed, i, cfg.horizon)
        predicted.append(np.asarray(mdp.tables[i])[tau[:, i]])
        empirical.append(err2.mean(axis=0))
        se = err2.std(axis=0, ddof=1) / np.sqrt(cfg.runs) if cfg.runs > 1 else np.full(cfg.horizon, np.nan)
        stderr.append(se)
        pdev.append(np.array([np.abs(P - pbars[i]).max() for P in covs]))
    return McResult(predicted, empirical, stderr, pdev, burn_in, cfg.runs, mismatches)

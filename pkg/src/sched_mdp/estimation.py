"""Per-sensor Kalman steady state and open-loop covariance growth.

Each sensor runs a local Kalman filter whose posterior covariance settles at a
fixed point ``Pbar``.  When the remote estimator's newest copy of a sensor's
estimate is ``ell`` steps old, its error covariance is ``h^ell(Pbar)`` with
``h(X) = A X A^T + Q``.  The traces of these matrices are the stage costs of
the scheduling problem, so they are tabulated once per sensor.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonConvergence, SingularInnovation, ValidationError

TOL_PSD = 1e-9
RICCATI_TOL = 1e-10
RICCATI_MAX_ITER = 100_000


def _as_matrix(value, name):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"not a numeric matrix ({exc})", name) from None
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {arr.shape}", name)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("contains non-finite entries", name)
    return arr


def symmetrize(X):
    return 0.5 * (X + X.T)


def _check_psd(X, name, strict=False):
    if X.shape[0] != X.shape[1]:
        raise DimensionMismatch(f"must be square, got {X.shape}", name)
    X = symmetrize(X)
    lam = np.linalg.eigvalsh(X).min()
    if strict and lam <= 0:
        raise ValidationError(f"not positive definite (min eigenvalue {lam:.3g})", name)
    if lam < -TOL_PSD:
        raise ValidationError(f"not positive semidefinite (min eigenvalue {lam:.3g})", name)
    return X


@dataclass(frozen=True, eq=False)
class ProcessModel:
    """One LTI process ``x+ = A x + w``, ``y = C x + v`` and its packet length.

    ``Q`` and ``Pi0`` are symmetrized and checked PSD, ``R`` must be positive
    definite, ``d`` is the number of channel slots one local estimate needs.
    ``Pi0`` defaults to the identity.
    """

    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    d: int = 1
    Pi0: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        C = _as_matrix(self.C, "C")
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"must be square, got {A.shape}", "A")
        n = A.shape[0]
        if C.shape[1] != n:
            raise DimensionMismatch(f"needs {n} columns to match A, got {C.shape}", "C")
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        if Q.shape != (n, n):
            raise DimensionMismatch(f"expected shape {(n, n)}, got {Q.shape}", "Q")
        if R.shape != (C.shape[0], C.shape[0]):
            raise DimensionMismatch(f"expected shape {(C.shape[0],) * 2}, got {R.shape}", "R")
        Pi0 = np.eye(n) if self.Pi0 is None else _as_matrix(self.Pi0, "Pi0")
        if Pi0.shape != (n, n):
            raise DimensionMismatch(f"expected shape {(n, n)}, got {Pi0.shape}", "Pi0")
        if isinstance(self.d, bool) or int(self.d) != self.d or self.d < 1:
            raise ValidationError(f"packet length must be an integer >= 1, got {self.d!r}", "d")
        for key, val in (("A", A), ("C", C), ("Q", _check_psd(Q, "Q")),
                         ("R", _check_psd(R, "R", strict=True)), ("Pi0", _check_psd(Pi0, "Pi0")),
                         ("d", int(self.d))):
            if isinstance(val, np.ndarray):
                val.setflags(write=False)
            object.__setattr__(self, key, val)

    @property
    def dim(self):
        return self.A.shape[0]

    @property
    def spectral_radius(self):
        return float(np.abs(np.linalg.eigvals(self.A)).max())

    def __eq__(self, other):
        if not isinstance(other, ProcessModel):
            return NotImplemented
        return (self.d == other.d and self.name == other.name
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("A", "C", "Q", "R", "Pi0")))

    __hash__ = None


@dataclass(frozen=True)
class SteadyState:
    """Steady-state posterior covariance and its trace table ``Tr(h^ell(Pbar))``."""

    Pbar: np.ndarray
    cost_table: np.ndarray = field(repr=False)

    @property
    def tau_max(self):
        return len(self.cost_table) - 1


def kalman_step(P_prior, model):
    """One measurement update: returns (posterior covariance, gain)."""
    A, C, R = model.A, model.C, model.R
    S = C @ P_prior @ C.T + R
    if np.linalg.cond(S) > 1e12:
        raise SingularInnovation(f"innovation covariance is numerically singular (cond={np.linalg.cond(S):.3g})")
    K = np.linalg.solve(S, C @ P_prior).T
    P = (np.eye(A.shape[0]) - K @ C) @ P_prior
    return symmetrize(P), K


def riccati_steady_state(model, tol=RICCATI_TOL, max_iter=RICCATI_MAX_ITER):
    """Fixed point of the local filter's posterior covariance recursion.

    Starts from ``Pi0`` as the first prior and alternates measurement update and
    time update until successive posteriors agree to ``tol`` in max-abs norm.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter at least 1")
    P_prior = model.Pi0
    P_prev = None
    residual = np.inf
    for _ in range(max_iter):
        P, _ = kalman_step(P_prior, model)
        if P_prev is not None:
            residual = np.abs(P - P_prev).max()
            if residual < tol:
                return P
        if not np.all(np.isfinite(P)):
            break
        P_prev = P
        P_prior = model.A @ P @ model.A.T + model.Q
    raise NonConvergence(
        f"Riccati iteration did not converge after {max_iter} steps (residual {residual:.3g}); "
        "check stabilizability of (A, sqrt(Q)) and detectability of (A, C)",
        iterations=max_iter, residual=residual)


def lyapunov_apply(X, model, ell):
    """``h^ell(X)`` by repeated application of ``X -> A X A^T + Q``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    if X.shape != model.A.shape:
        raise DimensionMismatch(f"expected shape {model.A.shape}, got {X.shape}", "X")
    if ell < 0:
        raise ValueError("ell must be nonnegative")
    A, Q = model.A, model.Q
    for _ in range(ell):
        X = symmetrize(A @ X @ A.T + Q)
    return X


def build_cost_table(steady, model, tau_max):
    """Traces ``[Tr(h^0(P)), ..., Tr(h^tau_max(P))]``; length ``tau_max + 1``."""
    if tau_max < 1:
        raise ValueError("tau_max must be at least 1")
    X = np.asarray(steady, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    table = np.empty(tau_max + 1)
    table[0] = np.trace(X)
    with np.errstate(over="ignore", invalid="ignore"):
        for ell in range(1, tau_max + 1):
            X = lyapunov_apply(X, model, 1)
            table[ell] = np.trace(X)
    if not np.all(np.isfinite(table)):
        raise ValidationError("cost table overflows; lower tau_max", "tau_max")
    return table


def steady_state(model, tau_max, tol=RICCATI_TOL, max_iter=RICCATI_MAX_ITER):
    if model.spectral_radius < 1:
        warnings.warn(f"process {model.name or ''} is stable (spectral radius "
                      f"{model.spectral_radius:.3g} < 1); structural results are only "
                      "established for unstable processes", stacklevel=2)
    Pbar = riccati_steady_state(model, tol, max_iter)
    return SteadyState(Pbar, build_cost_table(Pbar, model, tau_max))

"""Core problem abstraction: bounds, dual vectors, and the per-period primitives.

A problem instance bundles the revenue f(z; theta, w), the cost vector
c(z; theta, w) in R^K, an argmax oracle for the penalized objective
f - lambda^T c, and a context sampler.  The per-period budget rates b and
the spend-floor fractions alpha define the aggregate constraint

    T * (alpha ⊙ b)  <=  sum_t c(z^t; theta*, w^t)  <=  T * b,

where alpha_k may be the NEG_INF sentinel meaning "no lower bound on
coordinate k".  Coordinates with a lower bound carry a free (sign-unrestricted)
dual variable; coordinates without one carry a nonnegative dual variable.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import DomainError, InfeasibleError, InvariantViolation

NEG_INF = float("-inf")

_BOUND_SLACK = 1e-9


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DomainError(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True)
class BoundSpec:
    """Per-period budget rates b > 0 and spend-floor fractions alpha.

    alpha_k is either a real in [-1, 1) or NEG_INF (no lower bound).
    """

    b: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        b = _as_vector(self.b, "b")
        alpha = _as_vector(self.alpha, "alpha")
        if b.shape != alpha.shape:
            raise DomainError("b and alpha must have the same length")
        if np.any(b <= 0.0):
            raise DomainError("every budget rate b_k must be positive")
        finite = np.isfinite(alpha)
        bad = alpha[finite]
        if np.any(bad < -1.0) or np.any(bad >= 1.0):
            raise DomainError("finite alpha_k must lie in [-1, 1)")
        if np.any(~finite & (alpha != NEG_INF)):
            raise DomainError("non-finite alpha_k must be the NEG_INF sentinel")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "_nonneg", alpha == NEG_INF)

    @property
    def k(self) -> int:
        return self.b.size

    @property
    def b_lo(self) -> float:
        return float(self.b.min())

    @property
    def b_hi(self) -> float:
        return float(self.b.max())

    @property
    def nonneg_cone(self) -> np.ndarray:
        """Boolean mask: True where the dual variable is sign-restricted."""
        return self._nonneg


@dataclass(frozen=True)
class DualVector:
    """Dual vector lambda with its per-coordinate cone signature.

    nonneg[k] is True exactly when alpha_k = NEG_INF, in which case
    lambda_k must be >= 0.
    """

    values: np.ndarray
    nonneg: np.ndarray

    def __post_init__(self):
        values = _as_vector(self.values, "lambda")
        nonneg = np.asarray(self.nonneg, dtype=bool).reshape(-1)
        if values.shape != nonneg.shape:
            raise DomainError("lambda and cone mask must have the same length")
        if np.any(values[nonneg] < 0.0):
            raise DomainError("lambda_k < 0 on a nonnegative-cone coordinate")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "nonneg", nonneg)

    @classmethod
    def for_bounds(cls, values, bounds: BoundSpec) -> "DualVector":
        return cls(np.asarray(values, dtype=float), bounds.nonneg_cone)

    @classmethod
    def zeros(cls, bounds: BoundSpec) -> "DualVector":
        return cls(np.zeros(bounds.k), bounds.nonneg_cone)

    @classmethod
    def _trusted(cls, values: np.ndarray, nonneg: np.ndarray) -> "DualVector":
        """Validation-free constructor for values already known to respect
        the cone (hot path of the dual update)."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "values", values)
        object.__setattr__(obj, "nonneg", nonneg)
        return obj

    @property
    def k(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class ContextDraw:
    """One sampled context with its (mean-zero) observed-revenue noise."""

    w: Any
    xi: float = 0.0
    label: str = ""


@dataclass(frozen=True)
class ProblemInstance:
    """Immutable description of one constrained online problem.

    Evaluators must be pure functions of their arguments; all randomness
    flows through the rng handed to ``sample_context``.  ``observation``
    maps a taken decision to the (feature, observed reward) pair fed to a
    learner, or None when the period produced nothing to learn from.
    """

    horizon: int
    bounds: BoundSpec
    rev_bound: float
    cost_bound: float
    theta_star: np.ndarray
    revenue: Callable[[Any, np.ndarray, Any], float]
    cost: Callable[[Any, np.ndarray, Any], np.ndarray]
    oracle: Callable[[np.ndarray, np.ndarray, Any], Any]
    sample_context: Callable[[np.random.Generator], ContextDraw]
    observation: Callable[[Any, Any, float], tuple | None] = field(
        default=lambda z, w, r: None
    )
    decision_digest: Callable[[Any], str] = field(default=lambda z: str(z))

    def __post_init__(self):
        if self.horizon < 1:
            raise DomainError("horizon must be >= 1")
        if self.rev_bound <= 0 or self.cost_bound <= 0:
            raise DomainError("rev_bound and cost_bound must be positive")
        theta = np.array(self.theta_star, dtype=float)
        theta.setflags(write=False)
        object.__setattr__(self, "theta_star", theta)

    @property
    def k(self) -> int:
        return self.bounds.k

    def eval_cost(self, z, theta, w) -> np.ndarray:
        """Evaluate c(z; theta, w), spot-checking |c_k| <= cost_bound."""
        c = _as_vector(self.cost(z, theta, w), "cost")
        if c.size != self.k:
            raise DomainError(f"cost evaluator returned length {c.size}, expected {self.k}")
        if np.any(np.abs(c) > self.cost_bound + _BOUND_SLACK):
            raise InvariantViolation(
                f"|c_k| = {np.abs(c).max():.6g} exceeds cost bound {self.cost_bound:.6g}"
            )
        return c

    def eval_revenue(self, z, theta, w) -> float:
        """Evaluate f(z; theta, w); the bound is checked at the true parameter."""
        f = float(self.revenue(z, theta, w))
        if theta is self.theta_star or np.array_equal(theta, self.theta_star):
            if f > self.rev_bound + _BOUND_SLACK:
                raise InvariantViolation(
                    f"f(z; theta*, w) = {f:.6g} exceeds revenue bound {self.rev_bound:.6g}"
                )
        return f


def dual_price(lam: DualVector, bounds: BoundSpec) -> float:
    """Support-style price p(lambda) = sum_k b_k ([lambda_k]_+ - alpha_k [-lambda_k]_+).

    Convex in lambda.  Requires finite alpha on every coordinate where
    lambda_k < 0 (guaranteed by the DualVector cone invariant).
    """
    v = lam.values
    if np.any((v < 0.0) & bounds.nonneg_cone):
        raise DomainError("lambda_k < 0 on a coordinate with alpha_k = -inf")
    pos = np.maximum(v, 0.0)
    neg = np.maximum(-v, 0.0)
    # alpha is -inf only where neg == 0; mask before multiplying.
    alpha_term = np.where(neg > 0.0, bounds.alpha, 0.0) * neg
    return float(np.dot(bounds.b, pos - alpha_term))


def subgradient_from_cost(
    lam: DualVector, cost_vec: np.ndarray, bounds: BoundSpec
) -> np.ndarray:
    """Stochastic dual subgradient from an already-evaluated period cost.

    g_k = -c_k + b_k * (1{lambda_k >= 0} + alpha_k * 1{lambda_k < 0}).
    """
    neg = lam.values < 0.0
    if not neg.any():
        return bounds.b - np.asarray(cost_vec, dtype=float)
    if np.any(neg & bounds.nonneg_cone):
        raise DomainError("lambda_k < 0 on a coordinate with alpha_k = -inf")
    indicator = np.where(neg, bounds.alpha, 1.0)
    return -np.asarray(cost_vec, dtype=float) + bounds.b * indicator


def stochastic_subgradient(
    instance: ProblemInstance, lam: DualVector, z, theta, w
) -> np.ndarray:
    """Stochastic subgradient of the dual function at lambda.

    z must be the oracle decision for (lambda, theta, w); its estimated cost
    c(z; theta, w) is what enters the subgradient.  In expectation over the
    context distribution this is a subgradient of D(.; theta), and
    ||g||_inf <= cost_bound + max_k b_k.
    """
    c = instance.eval_cost(z, theta, w)
    return subgradient_from_cost(lam, c, instance.bounds)


def primal_oracle(instance: ProblemInstance, lam: DualVector, theta, w):
    """Solve z(lambda; theta, w) in argmax_z f(z; theta, w) - lambda^T c(z; theta, w).

    Tie-breaking is the instance oracle's contract: lowest index.  Raises
    InfeasibleError if the decision set is empty.
    """
    v = lam.values
    neg = v < 0.0
    if neg.any() and np.any(neg & instance.bounds.nonneg_cone):
        raise DomainError("lambda_k < 0 on a coordinate with alpha_k = -inf")
    z = instance.oracle(v, np.asarray(theta, dtype=float), w)
    if z is None:
        raise InfeasibleError("primal oracle returned no decision (empty Z?)")
    return z


def digest_array(arr: np.ndarray) -> str:
    """Short stable digest of an array's contents, used in run traces."""
    return format(zlib.crc32(np.ascontiguousarray(arr).tobytes()), "08x")

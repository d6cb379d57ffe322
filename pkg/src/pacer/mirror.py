"""Reference-function geometries and the dual mirror-descent step.

The dual update solves, coordinate-separably for the supported geometries,

    lambda+  =  argmin_{lambda in Lambda}  lambda^T g + (1/eta) V_h(lambda, lambda_t),

where V_h is the Bregman divergence of the reference function h and Lambda
restricts sign-constrained coordinates to be nonnegative.  Closed forms:

 * euclidean  h = 0.5 ||.||^2      ->  lambda - eta g, clipped at 0 on
                                       nonnegative-cone coordinates
 * entropy    h = sum l log l      ->  lambda * exp(-eta g)  (multiplicative
                                       update; requires every cone nonnegative)
 * quadratic  h = lambda^T Q lambda -> lambda - (eta/2) Q^{-1} g; exact clipping
                                       only when Q is diagonal, otherwise a
                                       small active-set QP (gated by a flag)

Every step satisfies grad h(lambda+) >= grad h(lambda_t) - eta g coordinate-wise,
with equality on free coordinates and wherever lambda+_k > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DualVector
from .errors import DomainError, NumericError

EUCLIDEAN = "euclidean"
QUADRATIC = "quadratic"
ENTROPY = "entropy"

_KINDS = (EUCLIDEAN, QUADRATIC, ENTROPY)


@dataclass(frozen=True)
class ReferenceFunction:
    """Separable strongly convex reference function.

    sigma1 is the strong convexity constant used in diagnostics: 1 for the
    euclidean case, twice the smallest eigenvalue of Q for the quadratic
    case, and caller-configured for entropy (which is not uniformly strongly
    convex on an unbounded domain; bounding the iterates is the caller's
    responsibility, and runs record ||grad h(lambda_t)||_inf to monitor it).
    """

    kind: str
    q: np.ndarray | None = None
    sigma1: float = 1.0
    allow_general_q: bool = False
    _q_diagonal: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DomainError(f"unknown reference function kind: {self.kind!r}")
        if self.kind == QUADRATIC:
            q = np.asarray(self.q, dtype=float)
            if q.ndim != 2 or q.shape[0] != q.shape[1]:
                raise DomainError("Q must be a square matrix")
            if not np.allclose(q, q.T, atol=1e-12):
                raise DomainError("Q must be symmetric")
            try:
                np.linalg.cholesky(q)
            except np.linalg.LinAlgError as exc:
                raise DomainError("Q must be positive definite") from exc
            diagonal = bool(np.allclose(q, np.diag(np.diag(q)), atol=0.0))
            if not diagonal and not self.allow_general_q:
                raise DomainError(
                    "non-diagonal Q is gated; construct with allow_general_q=True"
                )
            object.__setattr__(self, "q", q)
            object.__setattr__(self, "sigma1", 2.0 * float(np.linalg.eigvalsh(q)[0]))
            object.__setattr__(self, "_q_diagonal", diagonal)
        elif self.q is not None:
            raise DomainError("Q is only meaningful for the quadratic kind")

    @classmethod
    def euclidean(cls) -> "ReferenceFunction":
        return cls(EUCLIDEAN)

    @classmethod
    def quadratic(cls, q, allow_general_q: bool = False) -> "ReferenceFunction":
        return cls(QUADRATIC, q=np.asarray(q, dtype=float), allow_general_q=allow_general_q)

    @classmethod
    def entropy(cls, sigma1: float = 1.0) -> "ReferenceFunction":
        return cls(ENTROPY, sigma1=sigma1)

    @property
    def q_is_diagonal(self) -> bool:
        return self._q_diagonal

    def initial_dual(self, nonneg: np.ndarray, epsilon: float = 1e-3) -> DualVector:
        """Default starting dual: zero, except epsilon*1 for entropy whose
        domain excludes the origin."""
        k = np.asarray(nonneg).size
        if self.kind == ENTROPY:
            return DualVector(np.full(k, epsilon), nonneg)
        return DualVector(np.zeros(k), nonneg)


@dataclass(frozen=True)
class StepSchedule:
    """Constant step size eta = step_scale / sqrt(T)."""

    eta: float
    rule: str = "constant"

    def __post_init__(self):
        if self.eta <= 0.0:
            raise DomainError("eta must be positive")
        if self.rule != "constant":
            raise DomainError("only the constant step-size rule is supported")

    @classmethod
    def for_horizon(cls, horizon: int, step_scale: float = 1.0) -> "StepSchedule":
        return cls(eta=step_scale / np.sqrt(horizon))


def _check_entropy_domain(values: np.ndarray):
    if np.any(values <= 0.0):
        raise DomainError("entropy geometry requires strictly positive coordinates")


def grad_h(h: ReferenceFunction, values: np.ndarray) -> np.ndarray:
    """Gradient of the reference function at a point of its domain."""
    v = np.asarray(values, dtype=float)
    if h.kind == EUCLIDEAN:
        return v.copy()
    if h.kind == QUADRATIC:
        return 2.0 * (h.q @ v)
    _check_entropy_domain(v)
    return np.log(v) + 1.0


def grad_h_rows(h: ReferenceFunction, rows: np.ndarray) -> np.ndarray:
    """grad_h applied to every row of a (T, K) array of dual iterates."""
    rows = np.asarray(rows, dtype=float)
    if h.kind == EUCLIDEAN:
        return rows
    if h.kind == QUADRATIC:
        return 2.0 * rows @ h.q
    _check_entropy_domain(rows)
    return np.log(rows) + 1.0


def bregman(h: ReferenceFunction, lam: DualVector, lam_prev: DualVector) -> float:
    """Bregman divergence V_h(lambda, lambda') = h(l) - h(l') - grad h(l')^T (l - l')."""
    x = lam.values
    y = lam_prev.values
    if x.shape != y.shape:
        raise DomainError("points must have the same dimension")
    if h.kind == EUCLIDEAN:
        d = x - y
        return 0.5 * float(d @ d)
    if h.kind == QUADRATIC:
        d = x - y
        return float(d @ (h.q @ d))
    _check_entropy_domain(x)
    _check_entropy_domain(y)
    return float(np.sum(x * np.log(x / y) - x + y))


def dual_step(h: ReferenceFunction, lam: DualVector, g, eta: float) -> DualVector:
    """One mirror-descent step from lam with subgradient g and step size eta."""
    g = np.asarray(g, dtype=float)
    if g.shape != lam.values.shape:
        raise DomainError("subgradient dimension mismatch")
    if not math.isfinite(float(g.sum())):
        raise DomainError("subgradient must be finite")
    if eta <= 0.0:
        raise DomainError("eta must be positive")

    v = lam.values
    nonneg = lam.nonneg
    if h.kind == EUCLIDEAN:
        new = v - eta * g
        new = np.where(nonneg, np.maximum(new, 0.0), new)
        return DualVector._trusted(new, nonneg)
    if h.kind == ENTROPY:
        if not np.all(nonneg):
            raise DomainError("entropy geometry requires all cones nonnegative")
        _check_entropy_domain(v)
        return DualVector._trusted(v * np.exp(-eta * g), nonneg)
    if h.q_is_diagonal:
        new = v - eta * g / (2.0 * np.diag(h.q))
        new = np.where(nonneg, np.maximum(new, 0.0), new)
        return DualVector._trusted(new, nonneg)
    return DualVector(_quadratic_active_set(h.q, v, g, eta, nonneg), nonneg)


def _quadratic_active_set(
    q: np.ndarray, v: np.ndarray, g: np.ndarray, eta: float, nonneg: np.ndarray
) -> np.ndarray:
    """Minimize l^T g + (1/eta)(l-v)^T Q (l-v) with l_k >= 0 on nonneg coords.

    Primal active-set method: fix a working set of nonneg coordinates at zero,
    solve the reduced equality-constrained system, then add the most violated
    bound or drop the coordinate with the most negative multiplier.
    """
    k = v.size
    if k > 64:
        raise DomainError("general-Q steps are supported only for K <= 64")
    active = np.zeros(k, dtype=bool)
    scale = 2.0 / eta
    for _ in range(10 * k + 10):
        free = ~active
        lam_new = np.zeros(k)
        if free.any():
            # Stationarity on free coords: g_F + (2/eta) [Q (l - v)]_F = 0 with l_A = 0.
            qff = q[np.ix_(free, free)]
            rhs = scale * (q[free] @ v) - g[free]
            try:
                lam_new[free] = np.linalg.solve(qff, rhs) / scale
            except np.linalg.LinAlgError as exc:
                raise NumericError("reduced quadratic system is singular") from exc
        violated = free & nonneg & (lam_new < -1e-12)
        if violated.any():
            worst = np.argmin(np.where(violated, lam_new, np.inf))
            active[worst] = True
            continue
        lam_new[free & nonneg] = np.maximum(lam_new[free & nonneg], 0.0)
        if active.any():
            grad_obj = g + scale * (q @ (lam_new - v))
            drop = active & (grad_obj < -1e-10)
            if drop.any():
                worst = np.argmin(np.where(drop, grad_obj, np.inf))
                active[worst] = False
                continue
        return lam_new
    raise NumericError("active-set iteration did not converge")


def step_objective(
    h: ReferenceFunction, candidate: DualVector, lam: DualVector, g, eta: float
) -> float:
    """Objective lambda^T g + (1/eta) V_h(lambda, lam) evaluated at candidate."""
    g = np.asarray(g, dtype=float)
    return float(candidate.values @ g) + bregman(h, candidate, lam) / eta


def kkt_gap(
    h: ReferenceFunction, lam_new: DualVector, lam_prev: DualVector, g, eta: float
) -> np.ndarray:
    """Coordinate-wise grad h(lambda+) - (grad h(lambda') - eta g).

    Nonnegative everywhere; zero on free coordinates and wherever
    lambda+_k > 0.
    """
    g = np.asarray(g, dtype=float)
    return grad_h(h, lam_new.values) - (grad_h(h, lam_prev.values) - eta * g)

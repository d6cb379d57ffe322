"""Parameter-learning subroutines plugged into the decision loop.

Five kinds are provided:

 * known          -- always emits the true parameter (pure online optimization)
 * lsq            -- regularized least squares theta = B^{-1} sum x_s r_s with
                     B = I + sum x_s x_s^T (identity prior, never singular)
 * ridge          -- lsq behaviour for the first sqrt(T)/2 actions, then a
                     ridge solve (X^T X + a I)^{-1} X^T r with a = 0.001
 * ridge_perturb  -- ridge plus per-coordinate Uniform(-0.3, 0.3)/sqrt(#actions)
                     noise once the ridge phase starts
 * thompson       -- Gaussian posterior sample N(theta_hat, nu^2 B^{-1})

Only periods where an action was taken update the state.  For thompson the
posterior scale defaults to nu = 0.1 when rewards are noiseless and to
nu = (rev_err / 10) * sqrt(log(T) * p) when a reward-noise half-width
rev_err > 0 is configured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, NumericError

KNOWN = "known"
LSQ = "lsq"
RIDGE = "ridge"
RIDGE_PERTURB = "ridge_perturb"
THOMPSON = "thompson"

KINDS = (KNOWN, LSQ, RIDGE, RIDGE_PERTURB, THOMPSON)


@dataclass(frozen=True)
class LearnerSpec:
    """Learner kind plus hyperparameters, as carried by experiment configs."""

    kind: str
    nu: float | None = None
    ridge_penalty: float = 0.001
    perturb_scale: float = 0.3
    warm_actions: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown learner kind: {self.kind!r}")


def default_nu(rev_err: float, horizon: int, dim: int) -> float:
    """Posterior scale rule: 0.1 noiseless, else (rev_err/10) sqrt(log T * dim)."""
    if rev_err <= 0.0:
        return 0.1
    return (rev_err / 10.0) * math.sqrt(math.log(horizon) * dim)


def theory_nu(rev_err: float, horizon: int, dim: int) -> float:
    """Exploration scale from the linear Thompson-sampling regret theory
    (Agrawal & Goyal 2013): rev_err * sqrt(9 * dim * log T).  Much more
    aggressive than default_nu; with noisy rewards it keeps the posterior
    samples noise-dominated for the whole horizon."""
    return rev_err * math.sqrt(9.0 * dim * math.log(horizon))


@dataclass
class LearnerState:
    """Mutable per-episode state of one learning subroutine.

    B starts at the identity and stays symmetric positive definite; resp
    accumulates sum x_s r_s over action periods.
    """

    kind: str
    dim: int
    theta_star: np.ndarray
    horizon: int
    nu: float = 0.1
    ridge_penalty: float = 0.001
    perturb_scale: float = 0.3
    warm_actions: float = 0.0
    B: np.ndarray = field(init=False)
    resp: np.ndarray = field(init=False)
    n_actions: int = field(init=False, default=0)
    _chol: np.ndarray | None = field(init=False, default=None, repr=False)

    def __post_init__(self):
        self.B = np.eye(self.dim)
        self.resp = np.zeros(self.dim)
        self.theta_star = np.asarray(self.theta_star, dtype=float)

    @property
    def theta_hat(self) -> np.ndarray:
        """Point estimate: 1/sqrt(dim) on every coordinate until the first
        observation, then B^{-1} resp."""
        if self.n_actions == 0:
            return np.full(self.dim, 1.0 / math.sqrt(self.dim))
        return np.linalg.solve(self.B, self.resp)

    def _cholesky(self) -> np.ndarray:
        if self._chol is None:
            try:
                self._chol = np.linalg.cholesky(self.B)
            except np.linalg.LinAlgError as exc:
                raise NumericError("posterior covariance factorization failed") from exc
        return self._chol


def make_learner(
    spec: LearnerSpec,
    dim: int,
    theta_star: np.ndarray,
    horizon: int,
    rev_err: float = 0.0,
) -> LearnerState:
    """Instantiate fresh per-episode learner state from a spec."""
    nu = spec.nu if spec.nu is not None else default_nu(rev_err, horizon, dim)
    warm = spec.warm_actions if spec.warm_actions is not None else math.sqrt(horizon) / 2.0
    return LearnerState(
        kind=spec.kind,
        dim=dim,
        theta_star=np.asarray(theta_star, dtype=float),
        horizon=horizon,
        nu=nu,
        ridge_penalty=spec.ridge_penalty,
        perturb_scale=spec.perturb_scale,
        warm_actions=warm,
    )


def learner_update(state: LearnerState, observation: tuple | None) -> LearnerState:
    """Fold one (feature, observed reward) pair into the state.

    None means no action was taken this period: a no-op.  The known kind
    ignores observations entirely.
    """
    if observation is None or state.kind == KNOWN:
        return state
    x, r = observation
    x = np.asarray(x, dtype=float)
    if x.shape != (state.dim,):
        raise DimensionError(f"feature has shape {x.shape}, expected ({state.dim},)")
    state.B += np.outer(x, x)
    state.resp += float(r) * x
    state.n_actions += 1
    state._chol = None
    return state


def _in_ridge_phase(state: LearnerState) -> bool:
    return state.n_actions >= state.warm_actions and state.n_actions > 0


def _ridge_solution(state: LearnerState) -> np.ndarray:
    # B - I recovers X^T X exactly (B accumulates the identity prior).
    gram = state.B - (1.0 - state.ridge_penalty) * np.eye(state.dim)
    return np.linalg.solve(gram, state.resp)


def learner_emit(state: LearnerState, rng: np.random.Generator) -> np.ndarray:
    """Produce theta_t for the coming period.  Treat the result as read-only;
    the known kind hands back the true parameter itself."""
    if state.kind == KNOWN:
        return state.theta_star
    if state.kind == LSQ:
        return state.theta_hat
    if state.kind == THOMPSON:
        u = rng.standard_normal(state.dim)
        if state.nu == 0.0:
            return state.theta_hat
        chol = state._cholesky()
        # cov(L^-T u) = B^{-1}, so theta_hat + nu L^-T u ~ N(theta_hat, nu^2 B^{-1}).
        spread = np.linalg.solve(chol.T, u)
        return state.theta_hat + state.nu * spread
    # ridge kinds
    if not _in_ridge_phase(state):
        return state.theta_hat
    theta = _ridge_solution(state)
    if state.kind == RIDGE_PERTURB:
        noise = rng.uniform(-state.perturb_scale, state.perturb_scale, state.dim)
        theta = theta + noise / math.sqrt(state.n_actions)
    return theta

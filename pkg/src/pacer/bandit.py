"""Linear contextual bandits with lower and upper bounds on total action cost.

Each period the agent sees a d x n matrix whose rows are arm features, may
play at most one arm (or pass), pays rho per action, and earns the played
row's inner product with the true parameter.  Mapped into the general
template with a single scalar constraint: K = 1, b = 1, alpha = 0.5,
c(z) = rho * sum_i z_i, so total spend must land in [0.5 T, T].

The hindsight optimum reduces to a prefix knapsack: sort the per-period best
arm values descending and take the best prefix whose length lies in
[ceil(T / 2 rho), floor(T / rho)].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BoundSpec, ContextDraw, ProblemInstance
from .errors import ConfigError, DomainError, InfeasibleError

NO_ACTION = -1


@dataclass(frozen=True)
class BanditInstance:
    """One generated problem: unit-norm mean rows and true parameter."""

    d: int
    n: int
    horizon: int
    rho: float
    w_mean: np.ndarray
    theta_star: np.ndarray
    context_noise: float = 0.0
    reward_noise: float = 0.0

    def __post_init__(self):
        if self.rho < 0.5:
            raise DomainError("rho must be >= 0.5 for the constraint to be feasible")
        if self.w_mean.shape != (self.d, self.n):
            raise DomainError("mean matrix shape mismatch")
        if self.theta_star.shape != (self.n,):
            raise DomainError("theta_star shape mismatch")


def generate_instance(
    d: int,
    n: int,
    horizon: int,
    rho: float = 4.0,
    context_noise: float = 0.0,
    reward_noise: float = 0.0,
    seed=0,
) -> BanditInstance:
    """Sample W and theta_star i.i.d. Uniform(-0.5, 0.5), then normalize
    theta_star and every row of W to unit 2-norm.  Deterministic per seed."""
    if d < 1 or n < 1:
        raise DomainError("d and n must be >= 1")
    rng = np.random.default_rng(seed)
    w = rng.uniform(-0.5, 0.5, size=(d, n))
    theta = rng.uniform(-0.5, 0.5, size=n)
    w = w / np.linalg.norm(w, axis=1, keepdims=True)
    theta = theta / np.linalg.norm(theta)
    return BanditInstance(
        d=d,
        n=n,
        horizon=horizon,
        rho=float(rho),
        w_mean=w,
        theta_star=theta,
        context_noise=float(context_noise),
        reward_noise=float(reward_noise),
    )


def bandit_oracle(bi: BanditInstance, lam_value: float, theta: np.ndarray, w_t: np.ndarray) -> int:
    """Penalized argmax over the simplex-capped decision set.

    The objective (w_t theta)^T z - lam * rho * sum z is linear in z, so a
    vertex is optimal: play argmax_i w_i^T theta iff its value beats the
    dual charge lam * rho, else take no action.  Lowest index wins ties.
    """
    vals = w_t @ theta
    best = int(np.argmax(vals))
    if float(vals[best]) - float(lam_value) * bi.rho > 0.0:
        return best
    return NO_ACTION


def _oracle_with_charge(rho: float):
    def oracle(lam: np.ndarray, theta: np.ndarray, w_t: np.ndarray) -> int:
        vals = w_t @ theta
        best = int(np.argmax(vals))
        if float(vals[best]) - float(lam[0]) * rho > 0.0:
            return best
        return NO_ACTION

    return oracle


def to_problem_instance(bi: BanditInstance) -> ProblemInstance:
    """Wrap a bandit instance in the generic template (K = 1)."""
    rho = bi.rho
    d, n = bi.d, bi.n
    ctx_scale = 2.0 * bi.context_noise
    rew_scale = 2.0 * bi.reward_noise
    w_mean = bi.w_mean
    # ||W_i + noise||_2 <= 1 + context_noise * sqrt(n), theta has unit norm.
    rev_bound = 1.0 + bi.context_noise * math.sqrt(n) + 1e-12

    def revenue(z: int, theta: np.ndarray, w_t: np.ndarray) -> float:
        if z == NO_ACTION:
            return 0.0
        return float(w_t[z] @ theta)

    def cost(z: int, theta: np.ndarray, w_t: np.ndarray) -> np.ndarray:
        return np.array([0.0 if z == NO_ACTION else rho])

    def sample_context(rng: np.random.Generator) -> ContextDraw:
        if ctx_scale > 0.0:
            w_t = w_mean + (rng.random((d, n)) - 0.5) * ctx_scale
        else:
            w_t = w_mean
        xi = (rng.random() - 0.5) * rew_scale if rew_scale > 0.0 else 0.0
        return ContextDraw(w=w_t, xi=xi)

    def observation(z: int, w_t: np.ndarray, r_obs: float):
        if z == NO_ACTION:
            return None
        return w_t[z].copy(), r_obs

    return ProblemInstance(
        horizon=bi.horizon,
        bounds=BoundSpec(b=np.array([1.0]), alpha=np.array([0.5])),
        rev_bound=rev_bound,
        cost_bound=rho,
        theta_star=bi.theta_star,
        revenue=revenue,
        cost=cost,
        oracle=_oracle_with_charge(rho),
        sample_context=sample_context,
        observation=observation,
        decision_digest=str,
    )


@dataclass(frozen=True)
class KnapsackSolution:
    """Hindsight optimum: best descending-prefix sum with an admissible length.

    value equals the sum of the first i_max sorted maxima; i_max lies in
    [ceil(T / 2 rho), floor(T / rho)] by construction.
    """

    value: float
    i_max: int
    sorted_maxima: np.ndarray


def prefix_range(horizon: int, rho: float) -> tuple[int, int]:
    """Admissible prefix lengths [ceil(T / 2 rho), floor(T / rho)]."""
    lo = math.ceil(horizon / (2.0 * rho))
    hi = math.floor(horizon / rho)
    if lo > hi:
        raise InfeasibleError(
            f"no admissible action count for T={horizon}, rho={rho}"
        )
    return lo, hi


def knapsack_from_maxima(per_period_max: np.ndarray, rho: float) -> KnapsackSolution:
    """Solve the prefix knapsack given the per-period best-arm values."""
    m = np.asarray(per_period_max, dtype=float)
    lo, hi = prefix_range(m.size, rho)
    ordered = np.sort(m)[::-1]
    prefix = np.cumsum(ordered)
    window = prefix[lo - 1 : hi]
    best = int(np.argmax(window))
    return KnapsackSolution(
        value=float(window[best]), i_max=lo + best, sorted_maxima=ordered
    )


def hindsight_opt(bi: BanditInstance, contexts) -> KnapsackSolution:
    """Hindsight optimum on an explicit realized arrival sequence."""
    m = np.array([float(np.max(w_t @ bi.theta_star)) for w_t in contexts])
    if m.size != bi.horizon:
        raise DomainError("arrival sequence length must equal the horizon")
    return knapsack_from_maxima(m, bi.rho)


def hindsight_value(bi: BanditInstance, arrival_seed, chunk: int = 1024) -> KnapsackSolution:
    """Hindsight optimum for the arrival stream of a given episode seed.

    Regenerates the stream from the arrival RNG in chunks; draws raw uniforms
    in the same order as sample_context so the replay is bit-exact.
    """
    rng = np.random.default_rng(arrival_seed)
    T, d, n = bi.horizon, bi.d, bi.n
    ctx_scale = 2.0 * bi.context_noise
    draws_xi = bi.reward_noise > 0.0
    if ctx_scale == 0.0:
        m_const = float(np.max(bi.w_mean @ bi.theta_star))
        return knapsack_from_maxima(np.full(T, m_const), bi.rho)
    m = np.empty(T)
    base = bi.w_mean @ bi.theta_star
    pos = 0
    while pos < T:
        size = min(chunk, T - pos)
        if draws_xi:
            raw = rng.random((size, d * n + 1))
            noise = raw[:, : d * n].reshape(size, d, n)
        else:
            noise = rng.random((size, d, n))
        vals = base + ((noise - 0.5) * ctx_scale) @ bi.theta_star
        m[pos : pos + size] = vals.max(axis=1)
        pos += size
    return knapsack_from_maxima(m, bi.rho)


def write_instance_csv(bi: BanditInstance, path, seed=None) -> None:
    """Dump W and theta_star as CSV blocks with a seed header for cross-
    implementation reproduction."""
    try:
        with open(path, "w", newline="") as fh:
            fh.write(f"# seed,{seed if seed is not None else ''}\n")
            fh.write(f"# d,{bi.d}\n# n,{bi.n}\n# T,{bi.horizon}\n# rho,{bi.rho!r}\n")
            fh.write(
                f"# context_noise,{bi.context_noise!r}\n# reward_noise,{bi.reward_noise!r}\n"
            )
            fh.write("theta_star," + ",".join(format(v, ".17g") for v in bi.theta_star) + "\n")
            for row in bi.w_mean:
                fh.write("W," + ",".join(format(v, ".17g") for v in row) + "\n")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def read_instance_csv(path) -> BanditInstance:
    """Inverse of write_instance_csv."""
    meta: dict[str, str] = {}
    theta = None
    rows = []
    try:
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, value = line[1:].strip().partition(",")
                    meta[key.strip()] = value.strip()
                elif line.startswith("theta_star,"):
                    theta = np.array([float(v) for v in line.split(",")[1:]])
                elif line.startswith("W,"):
                    rows.append([float(v) for v in line.split(",")[1:]])
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if theta is None or not rows:
        raise ConfigError(f"{path}: missing theta_star or W blocks")
    return BanditInstance(
        d=int(meta["d"]),
        n=int(meta["n"]),
        horizon=int(meta["T"]),
        rho=float(meta["rho"]),
        w_mean=np.array(rows),
        theta_star=theta,
        context_noise=float(meta.get("context_noise", 0.0)),
        reward_noise=float(meta.get("reward_noise", 0.0)),
    )

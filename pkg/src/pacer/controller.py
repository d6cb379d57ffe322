"""Episode driver: learner update, context draw, primal decision, budget
ledger, stopping rule, subgradient, and the dual step, with full tracing.

Per period, in order: emit theta_t from the learner, draw the context,
solve the penalized argmax at the current dual, charge the true cost to the
ledger and earn the (noisy) revenue, feed the learner its observation, stop
if some remaining budget fell below the per-period cost cap, and otherwise
take one dual mirror-descent step using the estimated cost.  The dual step
is skipped on the halting period since the dual state is never used again.

Upper bounds are never violated: a period only runs when every remaining
budget is at least the cost cap, so cumulative spend stays within T*b.  This
is asserted after every charge.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (
    DualVector,
    ProblemInstance,
    digest_array,
    primal_oracle,
    subgradient_from_cost,
)
from .errors import InvariantViolation, MismatchError
from .learners import LearnerSpec, learner_emit, learner_update, make_learner
from .mirror import ReferenceFunction, StepSchedule, dual_step, grad_h_rows, kkt_gap


@dataclass
class BudgetLedger:
    """Remaining budgets, the halt flag, and the realized stopping time."""

    remaining: np.ndarray
    cost_cap: float
    tau: int | None = None
    halted: bool = False

    def charge(self, cost_vec: np.ndarray, t: int) -> bool:
        """Apply one period's true cost; returns True when the episode halts.

        Halts as soon as any remaining budget drops strictly below the
        per-period cost cap.  Because a period only runs with every
        remaining budget >= cost_cap and |c_k| <= cost_cap, remaining
        budgets can never go negative.
        """
        if self.halted:
            raise InvariantViolation("charge() called after the episode halted")
        self.remaining -= cost_vec
        lowest = float(self.remaining.min())
        if lowest < -1e-9:
            raise InvariantViolation(
                f"remaining budget went negative at t={t}: {self.remaining}"
            )
        if lowest < self.cost_cap:
            self.halted = True
            self.tau = t
        return self.halted


@dataclass
class RunTrace:
    """Columnar per-period record of one episode (rows 1..tau)."""

    seed: int | str
    horizon: int
    k: int
    tau: int
    t: np.ndarray
    context_ids: list[str]
    theta_digests: list[str]
    lam: np.ndarray
    z_digest: list[str]
    rev_true: np.ndarray
    rev_obs: np.ndarray
    cost_true: np.ndarray
    cost_est: np.ndarray
    remaining: np.ndarray

    def write_csv(self, path) -> None:
        """Serialize one row per period; floats carry 9 significant digits."""
        k = self.k
        header = (
            ["t"]
            + [f"lambda_{i + 1}" for i in range(k)]
            + ["z_digest", "rev_true", "rev_obs"]
            + [f"cost_true_{i + 1}" for i in range(k)]
            + [f"cost_est_{i + 1}" for i in range(k)]
            + [f"remaining_{i + 1}" for i in range(k)]
        )

        def fmt(x: float) -> str:
            return format(float(x), ".9g")

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(self.tau):
                row = [str(int(self.t[i]))]
                row += [fmt(v) for v in self.lam[i]]
                row.append(self.z_digest[i])
                row += [fmt(self.rev_true[i]), fmt(self.rev_obs[i])]
                row += [fmt(v) for v in self.cost_true[i]]
                row += [fmt(v) for v in self.cost_est[i]]
                row += [fmt(v) for v in self.remaining[i]]
                writer.writerow(row)


@dataclass
class RunReport:
    """Episode summary: revenue, spend, bound violations, and diagnostics."""

    seed: int
    revenue: float
    spend: np.ndarray
    violation: np.ndarray
    tau: int
    horizon: int
    grad_h_max: float
    learn_gap_weighted: float
    learn_gap_inf: float
    error: str | None = None

    @classmethod
    def from_trace(
        cls, trace: RunTrace, bounds, h: ReferenceFunction
    ) -> "RunReport":
        spend = trace.cost_true[: trace.tau].sum(axis=0)
        cap = trace.horizon * bounds.b
        if np.any(spend > cap + 1e-9):
            raise InvariantViolation("cumulative spend exceeds T*b")
        floor = trace.horizon * bounds.alpha * bounds.b
        violation = np.maximum(floor - spend, 0.0)
        lam_rows = trace.lam[: trace.tau]
        grad_max = float(np.abs(grad_h_rows(h, lam_rows)).max()) if trace.tau else 0.0
        gap = trace.cost_true[: trace.tau] - trace.cost_est[: trace.tau]
        return cls(
            seed=trace.seed,
            revenue=float(trace.rev_true[: trace.tau].sum()),
            spend=spend,
            violation=violation,
            tau=trace.tau,
            horizon=trace.horizon,
            grad_h_max=grad_max,
            learn_gap_weighted=float(np.sum(gap * lam_rows)),
            learn_gap_inf=float(np.abs(gap.sum(axis=0)).max()),
        )


def _as_seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def _child_seed(ss: np.random.SeedSequence, index: int) -> np.random.SeedSequence:
    """Stateless replacement for ss.spawn(): the same child every call."""
    return np.random.SeedSequence(
        entropy=ss.entropy, spawn_key=tuple(ss.spawn_key) + (index,)
    )


def episode_arrival_seed(seed) -> np.random.SeedSequence:
    """The arrival-stream seed an episode derives from its seed; lets callers
    replay the context sequence (e.g. for hindsight benchmarks)."""
    return _child_seed(_as_seed_sequence(seed), 0)


def episode_rngs(seed) -> tuple[np.random.Generator, np.random.Generator]:
    """Per-episode arrival and learner streams, derived deterministically
    and without mutating the passed seed."""
    ss = _as_seed_sequence(seed)
    return (
        np.random.default_rng(_child_seed(ss, 0)),
        np.random.default_rng(_child_seed(ss, 1)),
    )


def run_episode(
    instance: ProblemInstance,
    learner: LearnerSpec,
    h: ReferenceFunction,
    schedule: StepSchedule,
    seed,
    lam_init: DualVector | None = None,
    rev_err: float = 0.0,
    verify_steps: bool = True,
) -> RunTrace:
    """Run one episode for t = 1..T or until the budget stop fires.

    Deterministic given the seed.  verify_steps checks the dual-step
    gradient inequality after every update (cheap; raises on violation).
    """
    T = instance.horizon
    bounds = instance.bounds
    k = bounds.k
    arrival_rng, learner_rng = episode_rngs(seed)
    state = make_learner(
        learner, instance.theta_star.size, instance.theta_star, T, rev_err
    )
    lam = lam_init if lam_init is not None else h.initial_dual(bounds.nonneg_cone)
    ledger = BudgetLedger(remaining=T * bounds.b.copy(), cost_cap=instance.cost_bound)

    ts = np.zeros(T, dtype=int)
    context_ids: list[str] = []
    theta_digests: list[str] = []
    lam_hist = np.zeros((T, k))
    z_digests: list[str] = []
    rev_true = np.zeros(T)
    rev_obs = np.zeros(T)
    cost_true = np.zeros((T, k))
    cost_est = np.zeros((T, k))
    remaining_hist = np.zeros((T, k))

    tau = T
    theta_star = instance.theta_star
    last_theta = last_w = None
    theta_digest = w_digest = ""
    for t in range(1, T + 1):
        theta_t = learner_emit(state, learner_rng)
        draw = instance.sample_context(arrival_rng)
        z = primal_oracle(instance, lam, theta_t, draw.w)
        c_true = instance.eval_cost(z, theta_star, draw.w)
        # identity shortcut: the known learner hands back theta_star itself
        c_est = c_true if theta_t is theta_star else instance.eval_cost(z, theta_t, draw.w)
        f_true = instance.eval_revenue(z, theta_star, draw.w)
        f_observed = f_true + draw.xi

        i = t - 1
        ts[i] = t
        if draw.label:
            context_ids.append(draw.label)
        else:
            if draw.w is not last_w:
                last_w = draw.w
                w_digest = digest_array(np.asarray(draw.w, dtype=float))
            context_ids.append(w_digest)
        if theta_t is not last_theta:
            last_theta = theta_t
            theta_digest = digest_array(theta_t)
        theta_digests.append(theta_digest)
        lam_hist[i] = lam.values
        z_digests.append(instance.decision_digest(z))
        rev_true[i] = f_true
        rev_obs[i] = f_observed
        cost_true[i] = c_true
        cost_est[i] = c_est

        halted = ledger.charge(c_true, t)
        remaining_hist[i] = ledger.remaining
        learner_update(state, instance.observation(z, draw.w, f_observed))
        if halted:
            tau = t
            break

        g = subgradient_from_cost(lam, c_est, bounds)
        lam_next = dual_step(h, lam, g, schedule.eta)
        if verify_steps:
            gap = kkt_gap(h, lam_next, lam, g, schedule.eta)
            if float(gap.min()) < -1e-7:
                raise InvariantViolation(
                    f"dual-step gradient inequality violated at t={t}: min gap {gap.min():.3e}"
                )
        lam = lam_next

    seed_label = int(seed) if np.isscalar(seed) else str(seed.entropy)
    return RunTrace(
        seed=seed_label,
        horizon=T,
        k=k,
        tau=tau,
        t=ts[:tau],
        context_ids=context_ids,
        theta_digests=theta_digests,
        lam=lam_hist[:tau],
        z_digest=z_digests,
        rev_true=rev_true[:tau],
        rev_obs=rev_obs[:tau],
        cost_true=cost_true[:tau],
        cost_est=cost_est[:tau],
        remaining=remaining_hist[:tau],
    )


def _batch_seeds(seed_base: int, index: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Disjoint instance / episode streams for run `index` of a batch."""
    return (
        np.random.SeedSequence(entropy=(seed_base, index, 0)),
        np.random.SeedSequence(entropy=(seed_base, index, 1)),
    )


def _run_one(args) -> RunReport:
    factory, learner, h, schedule, seed_base, index, rev_err = args
    instance_ss, episode_ss = _batch_seeds(seed_base, index)
    try:
        instance = factory(instance_ss)
        trace = run_episode(
            instance, learner, h, schedule, episode_ss, rev_err=rev_err
        )
        report = RunReport.from_trace(trace, instance.bounds, h)
        report.seed = index
        return report
    except InvariantViolation:
        raise
    except Exception as exc:  # collect per-run failures without killing the batch
        return RunReport(
            seed=index,
            revenue=float("nan"),
            spend=np.array([]),
            violation=np.array([]),
            tau=0,
            horizon=0,
            grad_h_max=float("nan"),
            learn_gap_weighted=float("nan"),
            learn_gap_inf=float("nan"),
            error=f"{type(exc).__name__}: {exc}",
        )


def run_batch(
    factory: Callable[[np.random.SeedSequence], ProblemInstance],
    learner: LearnerSpec,
    h: ReferenceFunction,
    schedule: StepSchedule,
    n_sims: int,
    seed_base: int,
    rev_err: float = 0.0,
    workers: int = 1,
) -> list[RunReport]:
    """Independent episodes seeded (seed_base, i); order-stable, and
    identical whether run serially or across worker processes."""
    if n_sims < 1:
        raise MismatchError("n_sims must be >= 1")
    jobs = [
        (factory, learner, h, schedule, seed_base, i, rev_err) for i in range(n_sims)
    ]
    if workers <= 1:
        return [_run_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))

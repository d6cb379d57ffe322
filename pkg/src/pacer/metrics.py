"""Regret and violation metrics, Monte-Carlo aggregation, and report files.

Relative revenue compares each run's realized true revenue against its own
hindsight benchmark (bandits: the prefix knapsack on the realized arrivals;
fixtures: the exact interpolated optimum).  Lower-bound violations are
reported raw and scaled by sqrt(T).  Reports are emitted as CSV plus a text
table with one row per learner and one column per noise pair; all floats use
a fixed format so identical configs and seeds give byte-identical files.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bandit import generate_instance, hindsight_value, to_problem_instance
from .controller import (
    RunReport,
    RunTrace,
    episode_arrival_seed,
    run_episode,
)
from .errors import ConfigError, DomainError, InvariantViolation, MismatchError
from .exact import TinyInstance, opt_benchmark, tiny_to_problem_instance
from .learners import LearnerSpec
from .mirror import ReferenceFunction, StepSchedule

DEFAULT_WINDOW = 250


def moving_average(series: np.ndarray, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Sliding mean; output length is len(series) - window + 1."""
    series = np.asarray(series, dtype=float)
    if window < 1 or window > series.size:
        raise DomainError("window must be in [1, len(series)]")
    csum = np.concatenate(([0.0], np.cumsum(series)))
    return (csum[window:] - csum[:-window]) / window


@dataclass
class AggregateReport:
    """Monte-Carlo summary for one (learner, noise) cell."""

    label: str
    noise: tuple[float, float]
    horizon: int
    n_sims: int
    mean_rel_revenue: float
    std_rel_revenue: float
    mean_revenue: float
    mean_opt: float
    mean_violation: float
    violation_per_sqrt_t: float
    mean_tau: float
    mean_grad_h_max: float
    n_errors: int = 0
    moving_avg: np.ndarray | None = None
    window: int = DEFAULT_WINDOW


def _relative(revenue: float, opt: float) -> float:
    if opt == 0.0:
        raise InvariantViolation("hindsight value is zero; relative revenue undefined")
    rel = revenue / opt
    if rel < -1e-9:
        raise InvariantViolation(
            f"relative revenue {rel:.3g} negative (revenue {revenue:.6g}, opt {opt:.6g})"
        )
    return max(rel, 0.0)


def compute_regret(
    runs,
    opts,
    bounds=None,
    h: ReferenceFunction | None = None,
    label: str = "",
    noise: tuple[float, float] = (0.0, 0.0),
    moving_avg: np.ndarray | None = None,
    window: int = DEFAULT_WINDOW,
) -> AggregateReport:
    """Aggregate runs against their per-run hindsight values.

    Accepts RunReports, or RunTraces together with the bounds and geometry
    needed to summarize them.  Raises MismatchError when the run and
    benchmark counts differ.
    """
    runs = list(runs)
    opts = [float(v) for v in opts]
    if len(runs) != len(opts):
        raise MismatchError(f"{len(runs)} runs vs {len(opts)} hindsight values")
    reports: list[RunReport] = []
    for run in runs:
        if isinstance(run, RunTrace):
            if bounds is None or h is None:
                raise MismatchError("traces need bounds and a geometry to summarize")
            reports.append(RunReport.from_trace(run, bounds, h))
        else:
            reports.append(run)
    ok = [(r, o) for r, o in zip(reports, opts) if r.error is None]
    n_errors = len(reports) - len(ok)
    if not ok:
        raise MismatchError("every run in the batch failed")
    rel = np.array([_relative(r.revenue, o) for r, o in ok])
    violations = np.array([float(np.max(r.violation)) if r.violation.size else 0.0 for r, _ in ok])
    horizon = max(r.horizon for r, _ in ok)
    return AggregateReport(
        label=label,
        noise=noise,
        horizon=horizon,
        n_sims=len(ok),
        mean_rel_revenue=float(rel.mean()),
        std_rel_revenue=float(rel.std(ddof=1)) if rel.size > 1 else 0.0,
        mean_revenue=float(np.mean([r.revenue for r, _ in ok])),
        mean_opt=float(np.mean([o for _, o in ok])),
        mean_violation=float(violations.mean()),
        violation_per_sqrt_t=float(violations.mean() / np.sqrt(max(horizon, 1))),
        mean_tau=float(np.mean([r.tau for r, _ in ok])),
        mean_grad_h_max=float(np.mean([r.grad_h_max for r, _ in ok])),
        n_errors=n_errors,
        moving_avg=moving_avg,
        window=window,
    )


# ---------------------------------------------------------------------------
# bandits experiment plumbing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BanditRunConfig:
    """Picklable payload describing one bandits Monte-Carlo cell."""

    d: int
    n: int
    horizon: int
    rho: float
    context_noise: float
    reward_noise: float
    learner: LearnerSpec
    geometry: str = "euclidean"
    q_diag: tuple | None = None
    step_scale: float = 1.0
    verify_steps: bool = True
    want_series: bool = False


def make_reference(geometry: str, q_diag=None) -> ReferenceFunction:
    if geometry == "euclidean":
        return ReferenceFunction.euclidean()
    if geometry == "entropy":
        return ReferenceFunction.entropy()
    if geometry == "quadratic":
        if q_diag is None:
            raise ConfigError("quadratic geometry needs q_diag")
        return ReferenceFunction.quadratic(np.diag(np.asarray(q_diag, dtype=float)))
    raise ConfigError(f"unknown geometry {geometry!r}")


def _bandit_seeds(seed_base: int, index: int):
    return (
        np.random.SeedSequence(entropy=(seed_base, index, 0)),
        np.random.SeedSequence(entropy=(seed_base, index, 1)),
    )


def _bandit_one(args):
    cfg, seed_base, index = args
    instance_ss, episode_ss = _bandit_seeds(seed_base, index)
    bi = generate_instance(
        cfg.d,
        cfg.n,
        cfg.horizon,
        rho=cfg.rho,
        context_noise=cfg.context_noise,
        reward_noise=cfg.reward_noise,
        seed=instance_ss,
    )
    pi = to_problem_instance(bi)
    h = make_reference(cfg.geometry, cfg.q_diag)
    schedule = StepSchedule.for_horizon(cfg.horizon, cfg.step_scale)
    trace = run_episode(
        pi,
        cfg.learner,
        h,
        schedule,
        episode_ss,
        rev_err=cfg.reward_noise,
        verify_steps=cfg.verify_steps,
    )
    report = RunReport.from_trace(trace, pi.bounds, h)
    report.seed = index
    opt = hindsight_value(bi, episode_arrival_seed(episode_ss)).value
    series = None
    if cfg.want_series:
        series = np.zeros(cfg.horizon)
        series[: trace.tau] = trace.rev_true
    return report, opt, series


def run_bandit_cell(
    cfg: BanditRunConfig, n_sims: int, seed_base: int, workers: int = 1
):
    """All simulations of one cell; paired arrival streams across learners
    because seeds depend only on (seed_base, index)."""
    jobs = [(cfg, seed_base, i) for i in range(n_sims)]
    if workers <= 1:
        results = [_bandit_one(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_bandit_one, jobs))
    reports = [r for r, _, _ in results]
    opts = [o for _, o, _ in results]
    series = [s for _, _, s in results]
    return reports, opts, series


def aggregate_bandit_cell(
    cfg: BanditRunConfig,
    n_sims: int,
    seed_base: int,
    workers: int = 1,
    window: int = DEFAULT_WINDOW,
) -> AggregateReport:
    reports, opts, series = run_bandit_cell(cfg, n_sims, seed_base, workers)
    mov = None
    if cfg.want_series and cfg.horizon >= window:
        # window revenue relative to the proportional hindsight share
        stacks = []
        for s, opt in zip(series, opts):
            if s is None or opt == 0.0:
                continue
            stacks.append(moving_average(s, window) / (opt * window / cfg.horizon))
        if stacks:
            mov = np.mean(np.stack(stacks), axis=0)
    return compute_regret(
        reports,
        opts,
        label=cfg.learner.kind,
        noise=(cfg.reward_noise, cfg.context_noise),
        moving_avg=mov,
        window=window,
    )


# ---------------------------------------------------------------------------
# fixture experiment plumbing
# ---------------------------------------------------------------------------

def run_fixture_sims(
    ti: TinyInstance,
    n_sims: int,
    seed_base: int,
    step_scale: float = 1.0,
    geometry: str = "euclidean",
) -> AggregateReport:
    """Run the dual-descent controller on a tiny fixture with the known
    parameter and compare against the exact interpolated benchmark."""
    pi = tiny_to_problem_instance(ti)
    h = make_reference(geometry)
    schedule = StepSchedule.for_horizon(ti.horizon, step_scale)
    opt, _ = opt_benchmark(ti)
    spec = LearnerSpec(kind="known")
    reports = []
    for i in range(n_sims):
        _, episode_ss = _bandit_seeds(seed_base, i)
        trace = run_episode(pi, spec, h, schedule, episode_ss)
        reports.append(RunReport.from_trace(trace, pi.bounds, h))
    return compute_regret(
        reports, [opt] * n_sims, label=f"fixture:{ti.name}", noise=(0.0, 0.0)
    )


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def emit_report(reports, out_dir, formats=("csv", "text")) -> list[str]:
    """Write aggregate.csv / report.txt (and moving-average CSVs when
    present) with a stable column order.  Returns the written paths."""
    reports = list(reports)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    if "csv" in formats:
        path = os.path.join(out_dir, "aggregate.csv")
        columns = [
            "learner",
            "reward_noise",
            "context_noise",
            "horizon",
            "n_sims",
            "mean_rel_revenue",
            "std_rel_revenue",
            "mean_revenue",
            "mean_opt",
            "mean_violation",
            "violation_per_sqrt_t",
            "mean_tau",
            "mean_grad_h_max",
            "n_errors",
        ]
        try:
            with open(path, "w", newline="") as fh:
                fh.write(",".join(columns) + "\n")
                for r in reports:
                    row = [
                        r.label,
                        _fmt(r.noise[0]),
                        _fmt(r.noise[1]),
                        str(r.horizon),
                        str(r.n_sims),
                        _fmt(r.mean_rel_revenue),
                        _fmt(r.std_rel_revenue),
                        _fmt(r.mean_revenue),
                        _fmt(r.mean_opt),
                        _fmt(r.mean_violation),
                        _fmt(r.violation_per_sqrt_t),
                        _fmt(r.mean_tau),
                        _fmt(r.mean_grad_h_max),
                        str(r.n_errors),
                    ]
                    fh.write(",".join(row) + "\n")
        except OSError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        paths.append(path)
        for r in reports:
            if r.moving_avg is None:
                continue
            tag = f"{r.label}_rn{r.noise[0]:g}_cn{r.noise[1]:g}".replace(".", "p")
            mpath = os.path.join(out_dir, f"movavg_{tag}.csv")
            try:
                with open(mpath, "w", newline="") as fh:
                    fh.write("window_start,relative_revenue\n")
                    for i, v in enumerate(r.moving_avg):
                        fh.write(f"{i + 1},{_fmt(v)}\n")
            except OSError as exc:
                raise ConfigError(f"{mpath}: {exc}") from exc
            paths.append(mpath)
    if "text" in formats:
        path = os.path.join(out_dir, "report.txt")
        try:
            with open(path, "w") as fh:
                fh.write(render_table(reports) + "\n")
        except OSError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        paths.append(path)
    return paths


def render_table(reports) -> str:
    """Text table: one row per learner, one column per noise pair."""
    reports = list(reports)
    noises = []
    learners = []
    for r in reports:
        if r.noise not in noises:
            noises.append(r.noise)
        if r.label not in learners:
            learners.append(r.label)
    cell = {(r.label, r.noise): r for r in reports}
    head = ["learner"] + [f"({n[0]:g},{n[1]:g})" for n in noises]
    widths = [max(len(head[0]), max((len(l) for l in learners), default=0))]
    widths += [max(len(h), 8) for h in head[1:]]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    for label in learners:
        row = [label.ljust(widths[0])]
        for noise, w in zip(noises, widths[1:]):
            r = cell.get((label, noise))
            row.append(("-" if r is None else f"{100 * r.mean_rel_revenue:.1f}%").rjust(w))
        lines.append("  ".join(row))
    return "\n".join(lines)

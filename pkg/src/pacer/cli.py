"""Command-line entry points.

    pacer bandits --config F [--learner X] [--T N] [--sims N] [--seed S] [--out DIR]
    pacer bidding [--policy P] [--gamma G] [--logs F] [--seeds N] [...]
    pacer fixture --name NAME [--file F] [--simulate]
    pacer verify
    pacer config --print-defaults

Exit codes: 0 success, 1 configuration or I/O error, 2 invariant violation
(including failed verification checks).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import bidding as bid
from .config import ExperimentConfig, load_config, to_ini
from .errors import ConfigError, InvariantViolation, PacerError
from .exact import (
    builtin_fixture,
    load_fixture_file,
    opt_benchmark,
    opt_gamma,
    oracle_verify_suite,
    random_duals,
    weak_duality_check,
)
from .learners import LearnerSpec
from .metrics import (
    BanditRunConfig,
    aggregate_bandit_cell,
    emit_report,
    render_table,
    run_fixture_sims,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; config errors are 1
        raise ConfigError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="pacer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bandits", help="contextual-bandits benchmark")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--learner", help="comma list overriding configured learners")
    p.add_argument("--T", type=int, dest="horizon", help="horizon override")
    p.add_argument("--sims", type=int, help="number of simulations")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("bidding", help="second-price bidding benchmark")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--policy", choices=("dual", "greedy", "both"), default="both")
    p.add_argument("--gamma", help="comma list of greedy multipliers")
    p.add_argument("--logs", help="auction log CSV to ingest instead of synthesizing")
    p.add_argument("--seeds", type=int, help="number of simulations")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("fixture", help="exact-oracle analysis of a worked example")
    p.add_argument("--name", help="builtin fixture name")
    p.add_argument("--file", help="fixture definition file")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--simulate", action="store_true", help="also run controller episodes")
    p.add_argument("--sims", type=int, help="episodes when simulating")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--out", help="output directory")

    sub.add_parser("verify", help="run the exact-oracle verification suite")

    p = sub.add_parser("config", help="configuration helpers")
    p.add_argument("--print-defaults", action="store_true")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(getattr(args, "config", None))
    for attr, key in (
        ("horizon", "horizon"),
        ("sims", "n_sims"),
        ("seed", "seed"),
        ("out", "out"),
        ("seeds", "seeds"),
        ("logs", "logs_path"),
        ("file", "fixture_file"),
        ("name", "fixture_name"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "learner", None):
        cfg.learners = tuple(s.strip() for s in args.learner.split(",") if s.strip())
    if getattr(args, "gamma", None):
        cfg.gammas = tuple(float(v) for v in args.gamma.split(","))
    return cfg.validate()


def _cmd_bandits(args) -> int:
    cfg = _load(args)
    reports = []
    for reward_noise, context_noise in cfg.noise_pairs:
        for kind in cfg.learners:
            spec = LearnerSpec(
                kind=kind,
                nu=cfg.nu,
                ridge_penalty=cfg.ridge_penalty,
                perturb_scale=cfg.perturb_scale,
                warm_actions=cfg.warm_actions,
            )
            cell = BanditRunConfig(
                d=cfg.d,
                n=cfg.n,
                horizon=cfg.horizon,
                rho=cfg.rho,
                context_noise=context_noise,
                reward_noise=reward_noise,
                learner=spec,
                geometry=cfg.geometry,
                q_diag=cfg.q_diag,
                step_scale=cfg.step_scale,
                want_series=cfg.moving_average,
            )
            reports.append(
                aggregate_bandit_cell(
                    cell, cfg.n_sims, cfg.seed, workers=cfg.workers, window=cfg.window
                )
            )
    paths = emit_report(reports, cfg.out)
    print(render_table(reports))
    print("wrote: " + ", ".join(paths))
    return 0


def _client_table(path, reports: list[bid.BiddingReport]) -> None:
    """Per-client means across seeds for one policy."""
    k = reports[0].budget.size
    n_auctions = reports[0].n_auctions
    spend = np.mean([r.spend for r in reports], axis=0)
    budget = np.mean([r.budget for r in reports], axis=0)
    util = np.mean([r.utilization for r in reports], axis=0)
    depletion = np.mean(
        [np.where(r.depletion_period < 0, n_auctions, r.depletion_period) for r in reports],
        axis=0,
    )
    with open(path, "w", newline="") as fh:
        fh.write("client_id,budget,spend,utilization,depletion_period\n")
        for i in range(k):
            fh.write(
                f"{i},{budget[i]:.9g},{spend[i]:.9g},{util[i]:.9g},{depletion[i]:.9g}\n"
            )


def _cmd_bidding(args) -> int:
    cfg = _load(args)
    os.makedirs(cfg.out, exist_ok=True)
    log_cfg = bid.LogConfig(
        n_clients=cfg.k_clients,
        n_auctions=cfg.t_logs,
        conv_a=cfg.conv_a,
        conv_b=cfg.conv_b,
        conv_const=cfg.conv_const,
        q_low=cfg.q_low,
        q_high=cfg.q_high,
        mp_mu=cfg.mp_mu,
        mp_sigma=cfg.mp_sigma,
        budget_frac=cfg.budget_frac,
        budget_spread=cfg.budget_spread,
        alpha=cfg.alpha,
        batch_size=cfg.batch,
    )
    policies: list = []
    if args.policy in ("dual", "both"):
        policies.append(("dual", None))
    if args.policy in ("greedy", "both"):
        policies.extend(("greedy", g) for g in cfg.gammas)
    results: dict = {name_g: [] for name_g in policies}
    for s in range(cfg.seeds):
        if cfg.logs_path:
            logs = bid.read_logs_csv(cfg.logs_path, batch_size=cfg.batch)
            budgets = bid.baseline_budgets(logs, cfg.budget_frac)
        else:
            logs, budgets = bid.generate_logs(log_cfg, seed=(cfg.seed, s))
        n_batches = max(1, int(np.ceil(logs.n_auctions / logs.batch_size)))
        eta = cfg.bid_step_scale / np.sqrt(n_batches)
        for name_g in policies:
            name, gamma = name_g
            book = bid.ClientBook.uniform(budgets, alpha=cfg.alpha)
            policy = (
                bid.DualDescentPolicy(eta=eta, lam_init=cfg.bid_lam_init)
                if name == "dual"
                else bid.GreedyPolicy(gamma=gamma)
            )
            results[name_g].append(bid.run_auction_sim(logs, policy, book))
    summary_path = os.path.join(cfg.out, "bidding_summary.csv")
    with open(summary_path, "w", newline="") as fh:
        fh.write(
            "policy,seeds,mean_profit,std_profit,mean_wins,"
            "frac_clients_in_range,mean_negative_profit_wins\n"
        )
        for name_g, reports in results.items():
            name, gamma = name_g
            label = "dual" if name == "dual" else f"greedy({gamma:g})"
            profits = np.array([r.profit for r in reports])
            in_range = np.mean(
                [
                    np.mean((r.utilization >= cfg.alpha) & (r.utilization <= 1.0))
                    for r in reports
                ]
            )
            fh.write(
                f"{label},{len(reports)},{profits.mean():.9g},"
                f"{profits.std(ddof=1) if profits.size > 1 else 0.0:.9g},"
                f"{np.mean([r.wins for r in reports]):.9g},"
                f"{in_range:.9g},"
                f"{np.mean([r.negative_profit_wins for r in reports]):.9g}\n"
            )
            tag = label.replace("(", "_").replace(")", "").replace(".", "p")
            _client_table(os.path.join(cfg.out, f"clients_{tag}.csv"), reports)
            print(
                f"{label}: mean profit {profits.mean():.4f} over {len(reports)} seeds, "
                f"{100 * in_range:.1f}% clients in [{cfg.alpha:g}, 1] utilization"
            )
    print(f"wrote: {summary_path}")
    return 0


def _cmd_fixture(args) -> int:
    cfg = _load(args)
    if cfg.fixture_file:
        ti = load_fixture_file(cfg.fixture_file)
    else:
        ti = builtin_fixture(cfg.fixture_name)
    os.makedirs(cfg.out, exist_ok=True)
    gammas = np.linspace(0.0, 1.0, cfg.gamma_grid)
    values = [opt_gamma(ti, g) for g in gammas]
    opt, argmax = opt_benchmark(ti, cfg.gamma_grid)
    path = os.path.join(cfg.out, f"fixture_{ti.name}.csv")
    with open(path, "w", newline="") as fh:
        fh.write("gamma,value\n")
        for g, v in zip(gammas, values):
            fh.write(f"{g:.9g},{'-inf' if v == float('-inf') else format(v, '.9g')}\n")
    print(f"fixture {ti.name}: OPT(P) = {opt:.9g}")
    if argmax:
        lo, hi = min(argmax), max(argmax)
        print(f"maximizing gamma: {len(argmax)} grid points in [{lo:.4g}, {hi:.4g}]")
    else:
        print("maximizing gamma: none (infeasible for every gamma)")
    rng = np.random.default_rng(cfg.seed)
    wd = weak_duality_check(ti, random_duals(ti, cfg.n_lambdas, rng))
    status = "holds" if wd.passed else "FAILS"
    print(
        f"weak duality {status} over {wd.n_checked} random duals "
        f"(min T*D = {wd.min_dual_bound:.9g})"
    )
    if args.simulate:
        report = run_fixture_sims(ti, cfg.n_sims, cfg.seed, step_scale=cfg.step_scale)
        print(
            f"dual-descent episodes: mean relative revenue "
            f"{report.mean_rel_revenue:.4f} over {report.n_sims} sims"
        )
    print(f"wrote: {path}")
    if not wd.passed:
        raise InvariantViolation("weak duality check failed")
    return 0


def _cmd_verify(_args) -> int:
    checks = oracle_verify_suite()
    failed = 0
    for check in checks:
        mark = "ok " if check.passed else "FAIL"
        detail = f"  ({check.detail})" if check.detail else ""
        print(f"[{mark}] {check.name}{detail}")
        failed += not check.passed
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    if failed:
        raise InvariantViolation(f"{failed} verification checks failed")
    return 0


def _cmd_config(args) -> int:
    if args.print_defaults:
        print(to_ini(ExperimentConfig()), end="")
        return 0
    raise ConfigError("nothing to do; try --print-defaults")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "bandits": _cmd_bandits,
            "bidding": _cmd_bidding,
            "fixture": _cmd_fixture,
            "verify": _cmd_verify,
            "config": _cmd_config,
        }[args.command]
        return handler(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PacerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

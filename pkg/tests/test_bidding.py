"""Second-price bidding: oracles, simulator accounting, and log generation."""

import os
import tempfile

import numpy as np
import pytest

from pacer.bidding import (
    BidLog,
    ClientBook,
    DualDescentPolicy,
    GreedyPolicy,
    LogConfig,
    _dual_sim_slow,
    _greedy_sim_slow,
    baseline_budgets,
    bid_oracle,
    generate_logs,
    greedy_baseline,
    read_logs_csv,
    run_auction_sim,
    write_logs_csv,
)
from pacer.core import BoundSpec, DualVector
from pacer.errors import DomainError, InvariantViolation


def dual(values, k=None):
    values = np.atleast_1d(np.asarray(values, dtype=float))
    return DualVector(values, np.zeros(values.size, dtype=bool))


class TestBidOracle:
    def test_zero_dual_truthful(self):
        bid, k = bid_oracle(dual([0.0, 0.0]), np.array([0.3, 0.7]))
        assert k == 1 and bid == pytest.approx(0.7)

    def test_all_shaded_out(self):
        bid, k = bid_oracle(dual([1.5, 1.2]), np.array([0.3, 0.7]))
        assert k is None and bid == 0.0

    def test_adjusted_value_comparison(self):
        bid, k = bid_oracle(dual([0.0, 0.5]), np.array([2.0, 3.0]))
        assert k == 0 and bid == pytest.approx(2.0)

    def test_mask_excludes_depleted(self):
        bid, k = bid_oracle(
            dual([0.0, 0.0]), np.array([0.3, 0.7]), active=np.array([True, False])
        )
        assert k == 0

    def test_no_active_clients(self):
        bid, k = bid_oracle(dual([0.0]), np.array([0.5]), active=np.array([False]))
        assert k is None


class TestGreedyBaseline:
    def test_truthful_at_gamma_one(self):
        book = ClientBook.uniform(10.0, k=2)
        bid, k = greedy_baseline(1.0, np.array([0.4, 0.9]), book)
        assert k == 1 and bid == pytest.approx(0.9)

    def test_all_depleted(self):
        book = ClientBook.uniform(10.0, k=2)
        book.depleted[:] = True
        bid, k = greedy_baseline(1.0, np.array([0.4, 0.9]), book)
        assert k is None

    def test_hand_value(self):
        book = ClientBook.uniform(10.0, k=2)
        bid, k = greedy_baseline(0.5, np.array([4.0, 1.0]), book)
        assert k == 0 and bid == pytest.approx(2.0)

    def test_rejects_nonpositive_gamma(self):
        with pytest.raises(DomainError):
            greedy_baseline(0.0, np.array([1.0]), ClientBook.uniform(1.0, k=1))


class TestSimulatorAccounting:
    def test_unwinnable_market(self):
        logs = BidLog(rewards=np.full((20, 2), 0.5), mp=np.full(20, 99.0), batch_size=4)
        book = ClientBook.uniform(5.0, k=2)
        report = run_auction_sim(logs, DualDescentPolicy(eta=0.1), book)
        assert report.profit == 0.0 and report.wins == 0
        assert np.all(report.spend == 0.0)

    def test_free_market_single_client(self):
        rng = np.random.default_rng(2)
        r = rng.uniform(0.1, 1.0, size=(30, 1))
        logs = BidLog(rewards=r, mp=np.zeros(30), batch_size=8)
        book = ClientBook.uniform(1000.0, k=1)
        report = run_auction_sim(logs, GreedyPolicy(gamma=1.0), book)
        assert report.profit == pytest.approx(float(r.sum()))
        assert report.wins == 30

    def test_hand_scripted_two_batches(self):
        # lambda starts at 0; after batch one the averaged subgradient is
        # (0.02, 0.22), so with eta = 0.5 lambda becomes (-0.01, -0.11) and
        # batch two bids above value (multipliers 1.01 and 1.11).
        rewards = np.array(
            [
                [1.0, 0.5],
                [0.2, 0.8],
                [0.6, 0.6],
                [0.3, 0.1],
                [0.4, 0.9],
                [0.5, 0.4],
                [0.0, 0.0],
                [0.7, 0.65],
                [0.2, 0.6],
                [1.0, 0.95],
            ]
        )
        mp = np.array([0.5, 1.0, 0.55, 0.2, 0.3, 0.6, 0.1, 0.7, 0.7, 0.9])
        logs = BidLog(rewards=rewards, mp=mp, batch_size=5)
        book = ClientBook.uniform(4.0, k=2, alpha=0.95)
        report = run_auction_sim(logs, DualDescentPolicy(eta=0.5), book)
        # batch 1 wins: a0 (+0.5), a2 tie->client0 (+0.05), a3 (+0.1), a4 (+0.6)
        # batch 2 wins: a7 at -0.05 (bid 0.7215 over value 0.65), a9 at +0.05
        assert report.profit == pytest.approx(1.25)
        assert report.wins == 6
        assert report.negative_profit_wins == 1
        assert np.allclose(report.spend, [1.9, 2.5])
        assert np.allclose(report.utilization, [1.9 / 4.0, 2.5 / 4.0])
        assert list(report.depletion_period) == [-1, -1]

    def test_second_price_payment_never_exceeds_bid(self):
        cfg = LogConfig(n_clients=4, n_auctions=500)
        logs, budgets = generate_logs(cfg, seed=5)
        book = ClientBook.uniform(budgets, alpha=0.95)
        report = run_auction_sim(logs, DualDescentPolicy(eta=0.3, lam_init=0.5), book)
        assert report.wins > 0
        # profit equals spend minus payments, payments bounded by spend
        assert report.profit <= report.spend.sum()


class TestFastSlowEquivalence:
    def test_dual_paths_agree(self):
        cfg = LogConfig(n_clients=5, n_auctions=700, budget_frac=0.3)
        logs, budgets = generate_logs(cfg, seed=11)
        fast = run_auction_sim(
            logs, DualDescentPolicy(eta=0.4, lam_init=0.2), ClientBook.uniform(budgets)
        )
        slow = _dual_sim_slow(
            logs, DualDescentPolicy(eta=0.4, lam_init=0.2), ClientBook.uniform(budgets)
        )
        assert fast.profit == pytest.approx(slow.profit)
        assert fast.wins == slow.wins
        assert np.allclose(fast.spend, slow.spend)
        assert list(fast.depletion_period) == list(slow.depletion_period)

    def test_greedy_paths_agree(self):
        cfg = LogConfig(n_clients=5, n_auctions=700, budget_frac=0.3)
        logs, budgets = generate_logs(cfg, seed=12)
        for gamma in (0.5, 1.0, 1.4):
            fast = run_auction_sim(
                logs, GreedyPolicy(gamma=gamma), ClientBook.uniform(budgets)
            )
            slow = _greedy_sim_slow(
                logs, GreedyPolicy(gamma=gamma), ClientBook.uniform(budgets)
            )
            assert fast.profit == pytest.approx(slow.profit)
            assert fast.wins == slow.wins
            assert np.allclose(fast.spend, slow.spend)
            assert list(fast.depletion_period) == list(slow.depletion_period)


class TestSpendSafety:
    def test_soft_mode_single_overshoot(self):
        cfg = LogConfig(n_clients=3, n_auctions=1000, budget_frac=0.15)
        logs, budgets = generate_logs(cfg, seed=3)
        book = ClientBook.uniform(budgets, alpha=0.95, allow_overshoot=True)
        report = run_auction_sim(logs, GreedyPolicy(gamma=1.0), book)
        assert np.all(book.overshoots <= 1)
        assert np.all(report.utilization <= 1.0)
        # raw spend may exceed the budget by at most one auction's payment
        overshoot = report.spend - report.budget
        assert np.all(overshoot <= logs.rewards.max() + 1e-12)

    def test_hard_mode_never_overspends(self):
        cfg = LogConfig(n_clients=3, n_auctions=1000, budget_frac=0.15)
        logs, budgets = generate_logs(cfg, seed=3)
        for policy in (GreedyPolicy(gamma=1.0), DualDescentPolicy(eta=0.3)):
            book = ClientBook.uniform(budgets, alpha=0.95, allow_overshoot=False)
            report = run_auction_sim(logs, policy, book)
            assert np.all(report.spend <= report.budget + 1e-9)

    def test_overshoot_twice_is_fatal(self):
        book = ClientBook.uniform(1.0, k=1)
        book.record_win(0, 1.5, 0)  # first overshoot allowed
        with pytest.raises(InvariantViolation):
            book.record_win(0, 0.5, 1)


class TestLogGeneration:
    def test_determinism(self):
        cfg = LogConfig(n_clients=4, n_auctions=100)
        (a, ba), (b, bb) = generate_logs(cfg, seed=9), generate_logs(cfg, seed=9)
        assert np.array_equal(a.rewards, b.rewards)
        assert np.array_equal(a.mp, b.mp)
        assert np.array_equal(ba, bb)

    def test_payment_multiplier_mean(self):
        # with a constant conversion rate the per-client multiplier is
        # rewards / conv_const; it is Uniform(0.5, 1.5) and averages 1
        cfg = LogConfig(n_clients=10_000, n_auctions=1, conv_const=0.2, budget_frac=1.0)
        logs, _ = generate_logs(cfg, seed=21)
        q = logs.rewards[0] / 0.2
        assert q.mean() == pytest.approx(1.0, abs=0.02)
        assert q.min() >= 0.5 and q.max() <= 1.5

    def test_zero_variance_value_model(self):
        cfg = LogConfig(n_clients=3, n_auctions=50, conv_const=0.25)
        logs, _ = generate_logs(cfg, seed=2)
        assert np.allclose(logs.rewards, logs.rewards[0][None, :])

    def test_budget_anchoring(self):
        cfg = LogConfig(n_clients=4, n_auctions=2000, budget_frac=0.5, budget_spread=0.0)
        logs, budgets = generate_logs(cfg, seed=31)
        assert np.allclose(budgets, 0.5 * baseline_budgets(logs, 1.0), atol=1e-9)


class TestLogCsv:
    def test_round_trip(self):
        cfg = LogConfig(n_clients=3, n_auctions=40)
        logs, _ = generate_logs(cfg, seed=1)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "logs.csv")
            write_logs_csv(logs, path)
            back = read_logs_csv(path, batch_size=logs.batch_size)
        assert np.allclose(back.rewards, logs.rewards, atol=1e-8)
        assert np.allclose(back.mp, logs.mp, atol=1e-8)

    def test_report_csv_columns(self):
        cfg = LogConfig(n_clients=2, n_auctions=60)
        logs, budgets = generate_logs(cfg, seed=14)
        report = run_auction_sim(
            logs, GreedyPolicy(gamma=1.0), ClientBook.uniform(budgets)
        )
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "report.csv")
            report.write_csv(path)
            with open(path) as fh:
                header = fh.readline().strip().split(",")
        assert header == ["client_id", "budget", "spend", "utilization", "depletion_period"]

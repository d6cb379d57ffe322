"""Centralized second-price bidding for K clients with per-client spend bounds.

A single bidder handles K clients.  Each auction exposes a payment vector
r(w) (what client k pays the bidder on a win assigned to k) and the highest
competing bid mp.  The dual policy bids the adjusted value

    k* = argmax_k r_k (1 - lambda_k),    bid z = r_{k*} (1 - lambda_{k*})

whenever that value is nonnegative; winning pays mp to the seller, earns
r_{k*} - mp in profit, and consumes r_{k*} of client k*'s budget.  Duals are
updated once per batch of logs (default 128) with the batch-averaged
subgradient; spend floors alpha_k (default 0.95) make every dual coordinate
sign-free, so a client can be pushed above truthful value when underspending.

Depletion is soft here: a client may overshoot its budget on at most one
auction, after which it is out for the rest of the simulation.

The greedy baseline bids gamma * r_{k*} on behalf of the highest-value
non-depleted client.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import BoundSpec, DualVector, subgradient_from_cost
from .errors import ConfigError, DomainError, InvariantViolation
from .mirror import ReferenceFunction, dual_step

DEFAULT_BATCH = 128


@dataclass(frozen=True)
class BidLog:
    """Auction log: per-auction client payments and the highest competing bid."""

    rewards: np.ndarray  # (T, K), nonnegative
    mp: np.ndarray       # (T,), nonnegative
    batch_size: int = DEFAULT_BATCH

    def __post_init__(self):
        rewards = np.asarray(self.rewards, dtype=float)
        mp = np.asarray(self.mp, dtype=float)
        if rewards.ndim != 2 or mp.ndim != 1 or rewards.shape[0] != mp.size:
            raise DomainError("rewards must be (T, K) and mp length T")
        if np.any(rewards < 0) or np.any(mp < 0):
            raise DomainError("rewards and mp must be nonnegative")
        if self.batch_size < 1:
            raise DomainError("batch size must be >= 1")
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "mp", mp)

    @property
    def n_auctions(self) -> int:
        return self.mp.size

    @property
    def n_clients(self) -> int:
        return self.rewards.shape[1]


@dataclass
class ClientBook:
    """Per-client budgets, spend floors, and depletion state."""

    budget: np.ndarray
    alpha: np.ndarray
    allow_overshoot: bool = True
    spend: np.ndarray = field(init=False)
    depleted: np.ndarray = field(init=False)
    depletion_period: np.ndarray = field(init=False)
    overshoots: np.ndarray = field(init=False)

    def __post_init__(self):
        self.budget = np.asarray(self.budget, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.budget.shape != self.alpha.shape:
            raise DomainError("budget and alpha must have the same length")
        if np.any(self.budget <= 0):
            raise DomainError("budgets must be positive")
        k = self.budget.size
        self.spend = np.zeros(k)
        self.depleted = np.zeros(k, dtype=bool)
        self.depletion_period = np.full(k, -1, dtype=int)
        self.overshoots = np.zeros(k, dtype=int)

    @classmethod
    def uniform(cls, budget, k: int | None = None, alpha: float = 0.95,
                allow_overshoot: bool = True) -> "ClientBook":
        budget = np.atleast_1d(np.asarray(budget, dtype=float))
        if k is not None and budget.size == 1:
            budget = np.full(k, budget[0])
        return cls(budget=budget, alpha=np.full(budget.size, alpha),
                   allow_overshoot=allow_overshoot)

    @property
    def k(self) -> int:
        return self.budget.size

    def can_bid(self, client: int, amount: float) -> bool:
        if self.depleted[client]:
            return False
        if self.allow_overshoot:
            return True
        return self.spend[client] + amount <= self.budget[client] + 1e-12

    def record_win(self, client: int, amount: float, period: int) -> None:
        before = self.spend[client]
        self.spend[client] = before + amount
        if self.spend[client] >= self.budget[client]:
            if self.spend[client] > self.budget[client] + 1e-12:
                if not self.allow_overshoot:
                    raise InvariantViolation(
                        f"client {client} overspent with soft mode off"
                    )
                if before > self.budget[client]:
                    raise InvariantViolation(
                        f"client {client} overshot more than once"
                    )
                self.overshoots[client] += 1
            self.depleted[client] = True
            self.depletion_period[client] = period

    def utilization(self) -> np.ndarray:
        """Fraction of each budget consumed (a soft-mode overshoot counts as
        full utilization; raw spend is reported separately)."""
        return np.minimum(self.spend, self.budget) / self.budget


def bid_oracle(lam: DualVector, r: np.ndarray, active=None):
    """Adjusted-value bid: (bid, client index) or (0.0, None) when every
    adjusted value is negative or no client is active.  Lowest index wins ties."""
    r = np.asarray(r, dtype=float)
    adjusted = r * (1.0 - lam.values)
    if active is not None:
        adjusted = np.where(active, adjusted, -np.inf)
    k_star = int(np.argmax(adjusted))
    best = float(adjusted[k_star])
    if best >= 0.0:
        return best, k_star
    return 0.0, None


def greedy_baseline(gamma: float, r: np.ndarray, book: ClientBook):
    """Bid gamma * r_{k*} for the highest-payment non-depleted client."""
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    r = np.asarray(r, dtype=float)
    active = ~book.depleted
    if not active.any():
        return 0.0, None
    masked = np.where(active, r, -np.inf)
    k_star = int(np.argmax(masked))
    return gamma * float(r[k_star]), k_star


@dataclass(frozen=True)
class DualDescentPolicy:
    eta: float
    lam_init: float = 0.0


@dataclass(frozen=True)
class GreedyPolicy:
    gamma: float


@dataclass
class BiddingReport:
    """Simulation outcome for one policy on one log corpus."""

    policy: str
    profit: float
    wins: int
    negative_profit_wins: int
    spend: np.ndarray
    budget: np.ndarray
    utilization: np.ndarray
    depletion_period: np.ndarray
    n_auctions: int

    def write_csv(self, path) -> None:
        try:
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(
                    ["client_id", "budget", "spend", "utilization", "depletion_period"]
                )
                for k in range(self.budget.size):
                    period = self.depletion_period[k]
                    writer.writerow(
                        [
                            k,
                            format(self.budget[k], ".9g"),
                            format(self.spend[k], ".9g"),
                            format(self.utilization[k], ".9g"),
                            int(period) if period >= 0 else self.n_auctions,
                        ]
                    )
        except OSError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


class _Tally:
    """Profit/win accounting shared by the simulator paths."""

    def __init__(self):
        self.profit = 0.0
        self.wins = 0
        self.negative_wins = 0

    def settle(self, paid: float, mp: float) -> float:
        gain = paid - mp
        self.profit += gain
        self.wins += 1
        if gain < 0:
            self.negative_wins += 1
        return gain


def _report(name: str, tally: _Tally, book: ClientBook, n_auctions: int) -> BiddingReport:
    return BiddingReport(
        policy=name,
        profit=tally.profit,
        wins=tally.wins,
        negative_profit_wins=tally.negative_wins,
        spend=book.spend.copy(),
        budget=book.budget.copy(),
        utilization=book.utilization(),
        depletion_period=book.depletion_period.copy(),
        n_auctions=n_auctions,
    )


def _eligible(book: ClientBook, r_row: np.ndarray) -> np.ndarray:
    """Clients allowed to be allocated this auction.  In hard mode a client
    whose win would overshoot its remaining budget is skipped."""
    active = ~book.depleted
    if book.allow_overshoot:
        return active
    return active & (book.spend + r_row <= book.budget + 1e-12)


def _dual_sim_slow(logs: BidLog, policy: DualDescentPolicy, book: ClientBook) -> BiddingReport:
    """Per-auction reference path (used in hard mode and as the test oracle)."""
    k = logs.n_clients
    bounds = BoundSpec(b=book.budget / logs.n_auctions, alpha=book.alpha)
    h = ReferenceFunction.euclidean()
    lam = DualVector.for_bounds(np.full(k, policy.lam_init), bounds)
    tally = _Tally()
    t = 0
    while t < logs.n_auctions:
        stop = min(t + logs.batch_size, logs.n_auctions)
        g_sum = np.zeros(k)
        for i in range(t, stop):
            r_row = logs.rewards[i]
            cost = np.zeros(k)
            bid, k_star = bid_oracle(lam, r_row, active=_eligible(book, r_row))
            if k_star is not None and bid >= logs.mp[i]:
                paid = float(r_row[k_star])
                tally.settle(paid, float(logs.mp[i]))
                cost[k_star] = paid
                book.record_win(k_star, paid, i)
            g_sum += subgradient_from_cost(lam, cost, bounds)
        lam = dual_step(h, lam, g_sum / (stop - t), policy.eta)
        t = stop
    return _report("dual", tally, book, logs.n_auctions)


def _dual_sim_fast(logs: BidLog, policy: DualDescentPolicy, book: ClientBook) -> BiddingReport:
    """Soft-mode path: the batch argmax is vectorized and only recomputed on
    the (at most K) depletion events."""
    k = logs.n_clients
    bounds = BoundSpec(b=book.budget / logs.n_auctions, alpha=book.alpha)
    h = ReferenceFunction.euclidean()
    lam = DualVector.for_bounds(np.full(k, policy.lam_init), bounds)
    tally = _Tally()
    t = 0
    while t < logs.n_auctions:
        stop = min(t + logs.batch_size, logs.n_auctions)
        batch_r = logs.rewards[t:stop]
        batch_mp = logs.mp[t:stop]
        adjusted = batch_r * (1.0 - lam.values)[None, :]
        active = ~book.depleted
        masked = np.where(active[None, :], adjusted, -np.inf)
        k_stars = np.argmax(masked, axis=1)
        g_sum = np.zeros(k)
        for i in range(stop - t):
            k_star = int(k_stars[i])
            bid = float(masked[i, k_star])
            cost = np.zeros(k)
            if bid >= 0.0 and bid >= batch_mp[i]:
                paid = float(batch_r[i, k_star])
                tally.settle(paid, float(batch_mp[i]))
                cost[k_star] = paid
                book.record_win(k_star, paid, t + i)
                if book.depleted[k_star] and i + 1 < masked.shape[0]:
                    active = ~book.depleted
                    masked[i + 1 :] = np.where(
                        active[None, :], adjusted[i + 1 :], -np.inf
                    )
                    k_stars[i + 1 :] = np.argmax(masked[i + 1 :], axis=1)
            g_sum += subgradient_from_cost(lam, cost, bounds)
        lam = dual_step(h, lam, g_sum / (stop - t), policy.eta)
        t = stop
    return _report("dual", tally, book, logs.n_auctions)


def _greedy_sim_slow(logs: BidLog, policy: GreedyPolicy, book: ClientBook) -> BiddingReport:
    tally = _Tally()
    for i in range(logs.n_auctions):
        r_row = logs.rewards[i]
        eligible = _eligible(book, r_row)
        if not eligible.any():
            continue
        masked = np.where(eligible, r_row, -np.inf)
        k_star = int(np.argmax(masked))
        bid = policy.gamma * float(r_row[k_star])
        if bid >= logs.mp[i]:
            paid = float(r_row[k_star])
            tally.settle(paid, float(logs.mp[i]))
            book.record_win(k_star, paid, i)
    return _report(f"greedy({policy.gamma:g})", tally, book, logs.n_auctions)


def _greedy_sim_fast(logs: BidLog, policy: GreedyPolicy, book: ClientBook) -> BiddingReport:
    """Soft-mode path: between depletion events the winner of every auction
    is independent of the book, so whole segments are processed vectorized."""
    gamma = policy.gamma
    rewards = logs.rewards
    mp = logs.mp
    tally = _Tally()
    t = 0
    while t < logs.n_auctions:
        active = ~book.depleted
        if not active.any():
            break
        masked = np.where(active[None, :], rewards[t:], -np.inf)
        k_stars = np.argmax(masked, axis=1)
        values = masked[np.arange(masked.shape[0]), k_stars]
        win_rows = gamma * values >= mp[t:]
        # locate the first budget crossing in auction order
        cut = masked.shape[0] - 1
        crossing_client = None
        for client in np.flatnonzero(active):
            rows = np.flatnonzero(win_rows & (k_stars == client))
            if rows.size == 0:
                continue
            cum = book.spend[client] + np.cumsum(rewards[t + rows, client])
            crossed = np.flatnonzero(cum >= book.budget[client])
            if crossed.size and int(rows[crossed[0]]) <= cut:
                cut = int(rows[crossed[0]])
                crossing_client = client
        for client in np.flatnonzero(active):
            rows = np.flatnonzero(win_rows[: cut + 1] & (k_stars[: cut + 1] == client))
            if rows.size == 0:
                continue
            amounts = rewards[t + rows, client]
            gains = amounts - mp[t + rows]
            tally.profit += float(gains.sum())
            tally.wins += int(rows.size)
            tally.negative_wins += int((gains < 0).sum())
            if client == crossing_client:
                book.spend[client] += float(amounts[:-1].sum())
                book.record_win(client, float(amounts[-1]), int(t + rows[-1]))
            else:
                book.spend[client] += float(amounts.sum())
        t += cut + 1
    return _report(f"greedy({gamma:g})", tally, book, logs.n_auctions)


def run_auction_sim(logs: BidLog, policy, book: ClientBook, seed=None) -> BiddingReport:
    """Process the logs in order under the given policy.

    The seed argument is accepted for interface symmetry; both policies are
    deterministic given the logs and the book.
    """
    if logs.n_auctions == 0:
        raise DomainError("empty log")
    if logs.n_clients != book.k:
        raise DomainError("log and book disagree on the number of clients")
    if isinstance(policy, DualDescentPolicy):
        return (_dual_sim_fast if book.allow_overshoot else _dual_sim_slow)(
            logs, policy, book
        )
    if isinstance(policy, GreedyPolicy):
        if policy.gamma <= 0:
            raise DomainError("gamma must be positive")
        return (_greedy_sim_fast if book.allow_overshoot else _greedy_sim_slow)(
            logs, policy, book
        )
    raise DomainError(f"unknown policy {policy!r}")


@dataclass(frozen=True)
class LogConfig:
    """Synthetic corpus: r = conv_prob * q with conv_prob ~ Beta(a, b) per
    auction/client (or a constant), q_k ~ Uniform(q_low, q_high) per
    simulation, mp lognormal, budgets a fraction of unconstrained truthful
    spend."""

    n_clients: int = 20
    n_auctions: int = 20_000
    conv_a: float = 2.0
    conv_b: float = 6.0
    conv_const: float | None = None
    q_low: float = 0.5
    q_high: float = 1.5
    mp_mu: float = float(np.log(0.35))
    mp_sigma: float = 0.5
    budget_frac: float = 0.4
    budget_spread: float = 0.5
    alpha: float = 0.95
    batch_size: int = DEFAULT_BATCH


def generate_logs(config: LogConfig, seed) -> tuple[BidLog, np.ndarray]:
    """Sample one synthetic corpus; returns the log and per-client budgets."""
    if config.n_clients < 1 or config.n_auctions < 1:
        raise DomainError("need at least one client and one auction")
    rng = np.random.default_rng(seed)
    shape = (config.n_auctions, config.n_clients)
    if config.conv_const is not None:
        conv = np.full(shape, float(config.conv_const))
    else:
        conv = rng.beta(config.conv_a, config.conv_b, size=shape)
    q = rng.uniform(config.q_low, config.q_high, size=config.n_clients)
    rewards = conv * q[None, :]
    mp = rng.lognormal(config.mp_mu, config.mp_sigma, size=config.n_auctions)
    # Unconstrained truthful pass: highest-value client wins iff r_max >= mp.
    k_stars = np.argmax(rewards, axis=1)
    values = rewards[np.arange(config.n_auctions), k_stars]
    won = values >= mp
    baseline_spend = np.bincount(
        k_stars[won], weights=values[won], minlength=config.n_clients
    )
    # Per-client budget appetites vary independently of value (spread around
    # the common fraction), so no single bid multiplier fits every client.
    frac = config.budget_frac * rng.uniform(
        1.0 - config.budget_spread, 1.0 + config.budget_spread, size=config.n_clients
    )
    budgets = np.maximum(frac * baseline_spend, 1e-9)
    return (
        BidLog(rewards=rewards, mp=mp, batch_size=config.batch_size),
        budgets,
    )


def baseline_budgets(logs: BidLog, budget_frac: float) -> np.ndarray:
    """Budgets for an ingested corpus: budget_frac times each client's spend
    under unconstrained truthful bidding."""
    k_stars = np.argmax(logs.rewards, axis=1)
    values = logs.rewards[np.arange(logs.n_auctions), k_stars]
    won = values >= logs.mp
    spend = np.bincount(k_stars[won], weights=values[won], minlength=logs.n_clients)
    return np.maximum(budget_frac * spend, 1e-9)


def write_logs_csv(logs: BidLog, path) -> None:
    """Schema: auction_id, mp, r_1..r_K (one row per auction)."""
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            k = logs.n_clients
            writer.writerow(["auction_id", "mp"] + [f"r_{i + 1}" for i in range(k)])
            for t in range(logs.n_auctions):
                writer.writerow(
                    [t, format(logs.mp[t], ".9g")]
                    + [format(v, ".9g") for v in logs.rewards[t]]
                )
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def read_logs_csv(path, batch_size: int = DEFAULT_BATCH) -> BidLog:
    try:
        with open(path) as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["auction_id", "mp"]:
                raise ConfigError(f"{path}: unexpected header {header[:2]}")
            mp = []
            rewards = []
            for row in reader:
                mp.append(float(row[1]))
                rewards.append([float(v) for v in row[2:]])
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return BidLog(
        rewards=np.array(rewards), mp=np.array(mp), batch_size=batch_size
    )

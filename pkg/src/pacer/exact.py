"""Exact small-scale oracles for finite-support, tiny-horizon instances.

For a finite context set with probabilities and a finite decision grid, the
interpolated benchmark

    OPT(P, gamma) = E over arrival sequences of the best feasible decision
                    tuple under rev/cost blended with their expectations,
    OPT(P)        = max over gamma in [0, 1] of OPT(P, gamma),

is computed by full enumeration (all |W|^T sequences, all grid^T decision
tuples), guarded by a node budget.  The same tables give the exact dual
function D(lambda; theta*) = E max_z [f - lambda^T c] + p(lambda), which
upper-bounds OPT(P) / T for every admissible lambda -- the weak-duality
checker verifies exactly that.

Instances are declared with a small expression grammar over the scalar
decision z: signed sums of constants, c*z, and c*z^2 terms (e.g. "1-z",
"2*z", "0.5*z^2").
"""

from __future__ import annotations

import configparser
import itertools
import re
from dataclasses import dataclass, field

import numpy as np

from .core import BoundSpec, ContextDraw, DualVector, NEG_INF, ProblemInstance, dual_price
from .errors import CapacityError, ConfigError, DomainError

_FEAS_SLACK = 1e-12
DEFAULT_NODE_BUDGET = 50_000_000
DEFAULT_GAMMA_GRID = 1001

_TERM_RE = re.compile(
    r"^\s*(?:(?P<coef>[0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)\s*(?:\*\s*)?)?"
    r"(?P<var>z(?:\s*(?:\^|\*\*)\s*2)?)?\s*$"
)


def parse_expression(text: str):
    """Compile an expression over z into a vectorized evaluator.

    Grammar: signed sum of terms; a term is a constant, z, z^2 (also z**2),
    or a constant times either, e.g. "0", "-z", "2*z", "1-z", "0.5*z^2".
    """
    s = text.strip()
    if not s:
        raise ConfigError("empty expression")

    def is_separator(i: int) -> bool:
        if s[i] not in "+-":
            return False
        prev = s[:i].rstrip()
        return bool(prev) and prev[-1] not in "eE*^"

    const = 0.0
    lin = 0.0
    quad = 0.0
    pos = 0
    sign = 1.0
    if s[0] in "+-":
        sign = -1.0 if s[0] == "-" else 1.0
        pos = 1
    while pos <= len(s):
        cut = next((i for i in range(pos, len(s)) if is_separator(i)), len(s))
        term = s[pos:cut].replace("**", "^").strip()
        m = _TERM_RE.match(term)
        if not m or (m.group("coef") is None and m.group("var") is None):
            raise ConfigError(f"cannot parse term {term!r} in expression {text!r}")
        coef = sign * float(m.group("coef") if m.group("coef") is not None else 1.0)
        var = m.group("var")
        if var is None:
            const += coef
        elif var.replace(" ", "") == "z":
            lin += coef
        else:
            quad += coef
        if cut == len(s):
            break
        sign = -1.0 if s[cut] == "-" else 1.0
        pos = cut + 1

    def evaluate(z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return const + lin * z + quad * z * z

    return evaluate


@dataclass(frozen=True)
class TinyInstance:
    """Finite-support instance with tabulated revenue and costs at theta*.

    f_table has shape (n_contexts, grid), c_table (n_contexts, grid, K);
    probabilities sum to one.
    """

    name: str
    labels: tuple
    probs: np.ndarray
    grid: np.ndarray
    f_table: np.ndarray
    c_table: np.ndarray
    horizon: int
    bounds: BoundSpec

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if abs(probs.sum() - 1.0) > 1e-12 or np.any(probs < 0):
            raise DomainError("context probabilities must be nonnegative and sum to 1")
        if self.grid.size == 0:
            raise DomainError("decision grid must be non-empty")
        if self.horizon < 1 or self.horizon > 6:
            raise DomainError("exact enumeration supports 1 <= T <= 6")
        n_ctx, g = self.f_table.shape
        if self.c_table.shape[:2] != (n_ctx, g) or probs.size != n_ctx:
            raise DomainError("table shapes are inconsistent")
        object.__setattr__(self, "probs", probs)

    @property
    def k(self) -> int:
        return self.c_table.shape[2]

    @property
    def f_mean(self) -> np.ndarray:
        return np.tensordot(self.probs, self.f_table, axes=1)

    @property
    def c_mean(self) -> np.ndarray:
        return np.tensordot(self.probs, self.c_table, axes=1)

    @property
    def cost_bound(self) -> float:
        return max(float(np.abs(self.c_table).max()), 1e-12)

    @property
    def rev_bound(self) -> float:
        return max(float(self.f_table.max()), 1e-12)


def build_tiny_instance(
    name: str,
    contexts: list[tuple[str, float, str, str]],
    horizon: int = 1,
    b=1.0,
    alpha=0.5,
    grid_resolution: int = 100,
) -> TinyInstance:
    """Assemble a TinyInstance from (label, prob, f_expr, c_exprs) rows.

    c_exprs may contain several '|'-separated expressions for K > 1.
    The decision grid is {0, 1/r, ..., 1} with r = grid_resolution.
    """
    grid = np.linspace(0.0, 1.0, grid_resolution + 1)
    labels = tuple(row[0] for row in contexts)
    probs = np.array([row[1] for row in contexts], dtype=float)
    f_rows = []
    c_rows = []
    for _, _, f_expr, c_expr in contexts:
        f_rows.append(parse_expression(f_expr)(grid))
        parts = [p for p in str(c_expr).split("|")]
        c_rows.append(np.stack([parse_expression(p)(grid) for p in parts], axis=1))
    bounds = BoundSpec(
        b=np.atleast_1d(np.asarray(b, dtype=float)),
        alpha=np.atleast_1d(np.asarray(alpha, dtype=float)),
    )
    return TinyInstance(
        name=name,
        labels=labels,
        probs=probs,
        grid=grid,
        f_table=np.stack(f_rows),
        c_table=np.stack(c_rows),
        horizon=horizon,
        bounds=bounds,
    )


def load_fixture_file(path) -> TinyInstance:
    """Parse a declarative fixture file (INI sections: [fixture], [context X])."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if "fixture" not in parser:
        raise ConfigError(f"{path}: missing [fixture] section")
    fx = parser["fixture"]
    contexts = []
    for section in parser.sections():
        if not section.startswith("context"):
            continue
        sec = parser[section]
        contexts.append(
            (
                section.split(None, 1)[-1],
                float(sec.get("prob")),
                sec.get("f"),
                sec.get("c"),
            )
        )
    if not contexts:
        raise ConfigError(f"{path}: no [context ...] sections")
    b = [float(v) for v in fx.get("b", "1").split(",")]
    alpha = [
        NEG_INF if v.strip().lower() in ("-inf", "neg_inf") else float(v)
        for v in fx.get("alpha", "0.5").split(",")
    ]
    return build_tiny_instance(
        name=fx.get("name", "fixture"),
        contexts=contexts,
        horizon=int(fx.get("T", "1")),
        b=b,
        alpha=alpha,
        grid_resolution=int(fx.get("grid", "100")),
    )


# Worked analytic examples: T = 1, two equiprobable contexts, b = 1,
# alpha = 0.5, decisions in [0, 1].  The gamma-half instance needs 1/3 on
# the grid, hence the finer resolution.
_BUILTIN_ROWS = {
    "infinite-solutions": (("w1", 0.5, "z", "z"), ("w2", 0.5, "z", "z")),
    "no-solution": (("w1", 0.5, "z", "0"), ("w2", 0.5, "0", "0")),
    "gamma-half": (("w1", 0.5, "z", "0"), ("w2", 0.5, "-z", "2*z")),
    "gamma-zero": (("w1", 0.5, "z^2", "z"), ("w2", 0.5, "-z", "1-z")),
    "gamma-one": (("w1", 0.5, "z", "0"), ("w2", 0.5, "z", "z")),
}
_BUILTIN_GRID = {"gamma-half": 300}

FIXTURE_NAMES = tuple(sorted(_BUILTIN_ROWS))


def builtin_fixture(name: str) -> TinyInstance:
    if name not in _BUILTIN_ROWS:
        raise ConfigError(
            f"unknown fixture {name!r}; choose from {', '.join(FIXTURE_NAMES)}"
        )
    return build_tiny_instance(
        name,
        list(_BUILTIN_ROWS[name]),
        grid_resolution=_BUILTIN_GRID.get(name, 100),
    )


def _interp_tables(ti: TinyInstance, gamma: float):
    rev = (1.0 - gamma) * ti.f_table + gamma * ti.f_mean[None, :]
    cost = (1.0 - gamma) * ti.c_table + gamma * ti.c_mean[None, :, :]
    return rev, cost


def _enumeration_size(ti: TinyInstance) -> float:
    return float(ti.probs.size**ti.horizon) * float(ti.grid.size**ti.horizon)


def opt_gamma(
    ti: TinyInstance, gamma: float, node_budget: int = DEFAULT_NODE_BUDGET
) -> float:
    """Exact OPT(P, gamma) by enumeration; -inf when any positive-probability
    sequence admits no feasible decision tuple."""
    if not 0.0 <= gamma <= 1.0:
        raise DomainError("gamma must lie in [0, 1]")
    if _enumeration_size(ti) > node_budget:
        raise CapacityError(
            f"enumeration needs {_enumeration_size(ti):.3g} nodes > budget {node_budget}"
        )
    rev, cost = _interp_tables(ti, gamma)
    T = ti.horizon
    lo = T * ti.bounds.alpha * ti.bounds.b
    hi = T * ti.bounds.b
    total = 0.0
    for seq in itertools.product(range(ti.probs.size), repeat=T):
        prob = float(np.prod(ti.probs[list(seq)]))
        if prob == 0.0:
            continue
        rev_sum = np.zeros(1)
        cost_sum = np.zeros((1, ti.k))
        for w in seq:
            rev_sum = (rev_sum[:, None] + rev[w][None, :]).ravel()
            cost_sum = (cost_sum[:, None, :] + cost[w][None, :, :]).reshape(-1, ti.k)
        feasible = np.all(cost_sum >= lo - _FEAS_SLACK, axis=1) & np.all(
            cost_sum <= hi + _FEAS_SLACK, axis=1
        )
        if not feasible.any():
            return NEG_INF
        total += prob * float(rev_sum[feasible].max())
    return total


def opt_benchmark(
    ti: TinyInstance,
    gamma_grid: int = DEFAULT_GAMMA_GRID,
    node_budget: int = DEFAULT_NODE_BUDGET,
    argmax_tol: float = 1e-9,
) -> tuple[float, list[float]]:
    """OPT(P) over a gamma grid; returns (value, all grid maximizers).

    The maximizer set is empty when the value is -inf (no feasible gamma).
    """
    gammas = np.linspace(0.0, 1.0, gamma_grid)
    values = np.array([opt_gamma(ti, g, node_budget) for g in gammas])
    best = float(values.max())
    if best == NEG_INF:
        return NEG_INF, []
    argmax = [float(g) for g, v in zip(gammas, values) if v >= best - argmax_tol]
    return best, argmax


def dual_function(ti: TinyInstance, lam: DualVector) -> float:
    """Exact D(lambda; theta*) = E max_z [f - lambda^T c] + p(lambda)."""
    penal = ti.f_table - np.tensordot(ti.c_table, lam.values, axes=([2], [0]))
    return float(ti.probs @ penal.max(axis=1)) + dual_price(lam, ti.bounds)


@dataclass
class WeakDualityReport:
    """Outcome of checking OPT(P) <= T * D(lambda) over supplied duals."""

    passed: bool
    opt_value: float
    n_checked: int
    min_dual_bound: float
    argmin_lambda: np.ndarray | None
    failures: list = field(default_factory=list)


def weak_duality_check(
    ti: TinyInstance,
    lambdas,
    tol: float = 1e-9,
    gamma_grid: int = DEFAULT_GAMMA_GRID,
) -> WeakDualityReport:
    """Verify OPT(P) <= T * D(lambda; theta*) for every supplied lambda."""
    opt, _ = opt_benchmark(ti, gamma_grid)
    best_bound = np.inf
    best_lam = None
    failures = []
    count = 0
    for lam in lambdas:
        if not isinstance(lam, DualVector):
            lam = DualVector.for_bounds(np.atleast_1d(lam), ti.bounds)
        bound = ti.horizon * dual_function(ti, lam)
        count += 1
        if bound < best_bound:
            best_bound = bound
            best_lam = lam.values.copy()
        if opt > bound + tol:
            failures.append((lam.values.copy(), bound))
    return WeakDualityReport(
        passed=not failures,
        opt_value=opt,
        n_checked=count,
        min_dual_bound=float(best_bound),
        argmin_lambda=best_lam,
        failures=failures,
    )


def hindsight_enumeration(ti: TinyInstance) -> float:
    """Expected hindsight optimum by independent sequence-by-sequence
    enumeration (plain loops; the agreement oracle for opt_gamma at 0)."""
    T = ti.horizon
    lo = T * ti.bounds.alpha * ti.bounds.b
    hi = T * ti.bounds.b
    total = 0.0
    for seq in itertools.product(range(ti.probs.size), repeat=T):
        prob = 1.0
        for w in seq:
            prob *= float(ti.probs[w])
        best = None
        for choice in itertools.product(range(ti.grid.size), repeat=T):
            rev = 0.0
            cost = np.zeros(ti.k)
            for w, z in zip(seq, choice):
                rev += float(ti.f_table[w, z])
                cost += ti.c_table[w, z]
            if np.all(cost >= lo - _FEAS_SLACK) and np.all(cost <= hi + _FEAS_SLACK):
                if best is None or rev > best:
                    best = rev
        if best is None:
            return NEG_INF
        total += prob * best
    return total


def deterministic_program(ti: TinyInstance) -> float:
    """The gamma = 1 program solved directly: one maximization with all
    randomness replaced by expectations."""
    T = ti.horizon
    lo = T * ti.bounds.alpha * ti.bounds.b
    hi = T * ti.bounds.b
    f_mean = ti.f_mean
    c_mean = ti.c_mean
    best = None
    for choice in itertools.product(range(ti.grid.size), repeat=T):
        rev = float(sum(f_mean[z] for z in choice))
        cost = np.sum(c_mean[list(choice)], axis=0)
        if np.all(cost >= lo - _FEAS_SLACK) and np.all(cost <= hi + _FEAS_SLACK):
            if best is None or rev > best:
                best = rev
    return NEG_INF if best is None else best


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def random_duals(ti: TinyInstance, count: int, rng: np.random.Generator, scale: float = 2.0):
    """Admissible random dual vectors: free coordinates uniform on
    [-scale, scale], sign-restricted ones on [0, scale]."""
    nonneg = ti.bounds.nonneg_cone
    out = []
    for _ in range(count):
        vals = rng.uniform(-scale, scale, size=ti.k)
        vals = np.where(nonneg, np.abs(vals), vals)
        out.append(DualVector(vals, nonneg))
    return out


def oracle_verify_suite(seed: int = 20_24, n_lambdas: int = 50) -> list[CheckResult]:
    """Every exact-oracle check in one battery: worked-example values,
    two-oracle agreements, gamma-dominance, bound slack, and weak duality."""
    rng = np.random.default_rng(seed)
    checks: list[CheckResult] = []

    def record(name: str, passed: bool, detail: str = ""):
        checks.append(CheckResult(name, bool(passed), detail))

    half = builtin_fixture("gamma-half")
    v_half = opt_gamma(half, 0.5)
    v_one = opt_gamma(half, 1.0)
    record(
        "gamma-half: OPT(P,0.5) = 1/6",
        abs(v_half - 1.0 / 6.0) <= 1e-3,
        f"got {v_half:.6f}",
    )
    record("gamma-half: OPT(P,1) = 0", abs(v_one) <= 1e-3, f"got {v_one:.6f}")
    _, argmax_half = opt_benchmark(half)
    record(
        "gamma-half: unique maximizer 0.5",
        len(argmax_half) >= 1 and all(abs(g - 0.5) < 1e-6 for g in argmax_half),
        f"argmax {argmax_half[:3]}",
    )

    nosol = builtin_fixture("no-solution")
    gammas = np.linspace(0.0, 1.0, DEFAULT_GAMMA_GRID)
    all_neg = all(opt_gamma(nosol, g) == NEG_INF for g in gammas)
    record("no-solution: infeasible on the whole gamma grid", all_neg)

    inf_sol = builtin_fixture("infinite-solutions")
    vals = np.array([opt_gamma(inf_sol, g) for g in gammas])
    record(
        "infinite-solutions: gamma-constant value",
        float(vals.max() - vals.min()) <= 1e-6,
        f"spread {vals.max() - vals.min():.2e}",
    )

    _, argmax_zero = opt_benchmark(builtin_fixture("gamma-zero"))
    record("gamma-zero: maximizer set contains 0", any(g <= 1e-12 for g in argmax_zero))
    _, argmax_one = opt_benchmark(builtin_fixture("gamma-one"))
    record("gamma-one: maximizer set contains 1", any(g >= 1 - 1e-12 for g in argmax_one))

    for name in FIXTURE_NAMES:
        ti = builtin_fixture(name)
        agree0 = opt_gamma(ti, 0.0)
        indep = hindsight_enumeration(ti)
        record(
            f"{name}: gamma=0 agrees with sequence enumeration",
            (agree0 == indep == NEG_INF) or abs(agree0 - indep) <= 1e-12,
            f"{agree0:.9g} vs {indep:.9g}",
        )
        agree1 = opt_gamma(ti, 1.0)
        direct = deterministic_program(ti)
        record(
            f"{name}: gamma=1 agrees with the deterministic program",
            (agree1 == direct == NEG_INF) or abs(agree1 - direct) <= 1e-12,
            f"{agree1:.9g} vs {direct:.9g}",
        )
        duals = [DualVector.zeros(ti.bounds)] + random_duals(ti, n_lambdas, rng)
        wd = weak_duality_check(ti, duals)
        record(
            f"{name}: weak duality over {wd.n_checked} duals",
            wd.passed,
            f"OPT {wd.opt_value:.6g} <= min T*D {wd.min_dual_bound:.6g}",
        )
        upper_relaxed = _with_relaxed_upper(ti)
        v_base, _ = opt_benchmark(ti)
        v_relaxed, _ = opt_benchmark(upper_relaxed)
        record(
            f"{name}: upper bounds are slack",
            (v_base == v_relaxed == NEG_INF) or abs(v_base - v_relaxed) <= 1e-12,
            f"{v_base:.9g} vs relaxed {v_relaxed:.9g}",
        )

    # gamma dominance for a bandits-style family: context-independent costs
    family = build_tiny_instance(
        "bandit-family",
        [("w1", 0.5, "z", "z"), ("w2", 0.5, "0.5*z", "z")],
        grid_resolution=100,
    )
    base = opt_gamma(family, 0.0)
    dominated = all(opt_gamma(family, g) <= base + 1e-12 for g in np.linspace(0, 1, 101))
    record("bandit family: OPT(P,gamma) <= OPT(P,0) on the grid", dominated)
    return checks


def _with_relaxed_upper(ti: TinyInstance) -> TinyInstance:
    """Same instance with the upper bounds pushed far out (slackness probe)."""
    return TinyInstance(
        name=ti.name + "+relaxed",
        labels=ti.labels,
        probs=ti.probs,
        grid=ti.grid,
        f_table=ti.f_table,
        c_table=ti.c_table,
        horizon=ti.horizon,
        bounds=BoundSpec(b=ti.bounds.b * 10.0, alpha=ti.bounds.alpha * 0.1),
    )


def tiny_to_problem_instance(ti: TinyInstance) -> ProblemInstance:
    """Expose a TinyInstance through the generic online template.

    Decisions are grid indices; the tables are taken as the truth, so the
    parameter is a dummy scalar and only the known-parameter learner makes
    sense here.
    """
    f_table = ti.f_table
    c_table = ti.c_table
    probs = ti.probs
    labels = ti.labels

    def revenue(z: int, theta, w: int) -> float:
        return float(f_table[w, z])

    def cost(z: int, theta, w: int) -> np.ndarray:
        return c_table[w, z].copy()

    def oracle(lam: np.ndarray, theta, w: int) -> int:
        scores = f_table[w] - c_table[w] @ lam
        return int(np.argmax(scores))

    def sample_context(rng: np.random.Generator) -> ContextDraw:
        w = int(rng.choice(probs.size, p=probs))
        return ContextDraw(w=w, label=str(labels[w]))

    return ProblemInstance(
        horizon=ti.horizon,
        bounds=ti.bounds,
        rev_bound=ti.rev_bound,
        cost_bound=ti.cost_bound,
        theta_star=np.array([1.0]),
        revenue=revenue,
        cost=cost,
        oracle=oracle,
        sample_context=sample_context,
        decision_digest=str,
    )

"""Core primitives: dual price, stochastic subgradient, primal oracle."""

import numpy as np
import pytest

from pacer.core import (
    NEG_INF,
    BoundSpec,
    ContextDraw,
    DualVector,
    ProblemInstance,
    dual_price,
    primal_oracle,
    stochastic_subgradient,
    subgradient_from_cost,
)
from pacer.errors import DomainError, InvariantViolation


def make_bounds(b, alpha):
    return BoundSpec(b=np.asarray(b, dtype=float), alpha=np.asarray(alpha, dtype=float))


class TestBoundSpec:
    def test_extremes(self):
        bs = make_bounds([2.0, 0.5, 1.0], [0.5, NEG_INF, -0.25])
        assert bs.b_lo == 0.5 and bs.b_hi == 2.0
        assert list(bs.nonneg_cone) == [False, True, False]

    def test_rejects_nonpositive_budget(self):
        with pytest.raises(DomainError):
            make_bounds([1.0, 0.0], [0.5, 0.5])

    def test_rejects_alpha_out_of_range(self):
        with pytest.raises(DomainError):
            make_bounds([1.0], [1.0])
        with pytest.raises(DomainError):
            make_bounds([1.0], [-1.5])

    def test_alpha_one_sided_interval(self):
        make_bounds([1.0], [-1.0])  # closed below
        make_bounds([1.0], [0.999])


class TestDualVector:
    def test_cone_enforced(self):
        bs = make_bounds([1.0, 1.0], [NEG_INF, 0.5])
        DualVector.for_bounds([0.0, -3.0], bs)
        with pytest.raises(DomainError):
            DualVector.for_bounds([-0.1, 0.0], bs)


class TestDualPrice:
    def test_zero_vector(self):
        bs = make_bounds([3.0, 7.0], [0.5, NEG_INF])
        assert dual_price(DualVector.zeros(bs), bs) == 0.0

    def test_positive_branch(self):
        bs = make_bounds([2.0], [0.5])
        lam = DualVector.for_bounds([1.0], bs)
        assert dual_price(lam, bs) == pytest.approx(2.0)

    def test_negative_branch(self):
        bs = make_bounds([2.0], [0.5])
        lam = DualVector.for_bounds([-1.0], bs)
        assert dual_price(lam, bs) == pytest.approx(-1.0)

    def test_domain_error_on_cone_violation(self):
        bs = make_bounds([2.0], [NEG_INF])
        bad = DualVector(np.array([-1.0]), np.array([False]))  # wrong cone mask
        with pytest.raises(DomainError):
            dual_price(bad, bs)

    def test_midpoint_convexity(self):
        rng = np.random.default_rng(5)
        bs = make_bounds([1.0, 2.0, 0.3], [0.5, -0.9, NEG_INF])
        for _ in range(200):
            a = rng.uniform(-3, 3, 3)
            b = rng.uniform(-3, 3, 3)
            a[2] = abs(a[2])
            b[2] = abs(b[2])
            la, lb = DualVector.for_bounds(a, bs), DualVector.for_bounds(b, bs)
            mid = DualVector.for_bounds((a + b) / 2, bs)
            lhs = dual_price(mid, bs)
            rhs = 0.5 * (dual_price(la, bs) + dual_price(lb, bs))
            assert lhs <= rhs + 1e-12


class TestSubgradient:
    def test_zero_cost_gives_budget_rates(self):
        bs = make_bounds([1.0, 2.0], [0.5, NEG_INF])
        lam = DualVector.for_bounds([0.3, 0.1], bs)
        g = subgradient_from_cost(lam, np.zeros(2), bs)
        assert np.allclose(g, [1.0, 2.0])

    def test_value_from_step_formula(self):
        bs = make_bounds([1.0], [0.95])
        lam = DualVector.for_bounds([0.2], bs)
        g = subgradient_from_cost(lam, np.array([0.5]), bs)
        assert g[0] == pytest.approx(0.5)

    def test_negative_lambda_uses_alpha(self):
        bs = make_bounds([2.0], [0.5])
        lam = DualVector.for_bounds([-0.4], bs)
        g = subgradient_from_cost(lam, np.array([0.25]), bs)
        assert g[0] == pytest.approx(-0.25 + 2.0 * 0.5)

    def test_domain_error_on_cone_violation(self):
        bs = make_bounds([1.0], [NEG_INF])
        bad = DualVector(np.array([-0.5]), np.array([False]))
        with pytest.raises(DomainError):
            subgradient_from_cost(bad, np.array([0.0]), bs)

    def test_sup_norm_bound(self):
        rng = np.random.default_rng(11)
        bs = make_bounds([1.5, 0.4], [0.9, -0.8])
        cap = 2.0
        for _ in range(300):
            lam = DualVector.for_bounds(rng.uniform(-2, 2, 2), bs)
            cost = rng.uniform(-cap, cap, 2)
            g = subgradient_from_cost(lam, cost, bs)
            assert np.abs(g).max() <= cap + bs.b_hi + 1e-12


# -- finite-support instance used for exact expectation checks --------------

def table_instance(f_table, c_table, probs, bounds, horizon=4):
    """Decisions are grid indices; tables are (n_ctx, G) and (n_ctx, G, K)."""
    f_table = np.asarray(f_table, dtype=float)
    c_table = np.asarray(c_table, dtype=float)
    probs = np.asarray(probs, dtype=float)

    def oracle(lam, theta, w):
        return int(np.argmax(f_table[w] - c_table[w] @ lam))

    def sample(rng):
        return ContextDraw(w=int(rng.choice(probs.size, p=probs)), label="w")

    return ProblemInstance(
        horizon=horizon,
        bounds=bounds,
        rev_bound=float(f_table.max()) + 1.0,
        cost_bound=float(np.abs(c_table).max()) + 1.0,
        theta_star=np.array([1.0]),
        revenue=lambda z, theta, w: float(f_table[w, z]),
        cost=lambda z, theta, w: c_table[w, z].copy(),
        oracle=oracle,
        sample_context=sample,
    )


class TestSubgradientInequalityExact:
    """E[g] is a subgradient of the exact dual function on finite support."""

    def setup_method(self):
        rng = np.random.default_rng(42)
        self.bounds = make_bounds([1.0, 0.7], [0.4, NEG_INF])
        self.probs = np.array([0.35, 0.65])
        self.f = rng.uniform(-1, 1, size=(2, 9))
        self.c = rng.uniform(-1, 1, size=(2, 9, 2))
        self.instance = table_instance(self.f, self.c, self.probs, self.bounds)

    def exact_dual(self, lam: DualVector) -> float:
        penal = self.f - np.tensordot(self.c, lam.values, axes=([2], [0]))
        return float(self.probs @ penal.max(axis=1)) + dual_price(lam, self.bounds)

    def exact_expected_subgradient(self, lam: DualVector) -> np.ndarray:
        total = np.zeros(2)
        for w, p in enumerate(self.probs):
            z = primal_oracle(self.instance, lam, self.instance.theta_star, w)
            total += p * stochastic_subgradient(
                self.instance, lam, z, self.instance.theta_star, w
            )
        return total

    def random_dual(self, rng) -> DualVector:
        v = rng.uniform(-2, 2, 2)
        v[1] = abs(v[1])
        return DualVector.for_bounds(v, self.bounds)

    def test_on_random_pairs(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            lam = self.random_dual(rng)
            other = self.random_dual(rng)
            g = self.exact_expected_subgradient(lam)
            lhs = self.exact_dual(other)
            rhs = self.exact_dual(lam) + g @ (other.values - lam.values)
            assert lhs >= rhs - 1e-9

    def test_on_grid(self):
        lam = DualVector.for_bounds([0.3, 0.2], self.bounds)
        g = self.exact_expected_subgradient(lam)
        base = self.exact_dual(lam)
        for a in np.linspace(-1.5, 1.5, 5):
            for b in np.linspace(0.0, 1.5, 5):
                other = DualVector.for_bounds([a, b], self.bounds)
                assert self.exact_dual(other) >= base + g @ (
                    other.values - lam.values
                ) - 1e-9


class TestPrimalOracle:
    def test_huge_dual_prefers_no_action(self):
        # positive costs everywhere except a zero-cost "pass" decision
        f = np.array([[0.0, 0.9, 0.8]])
        c = np.array([[[0.0], [1.0], [1.0]]])
        inst = table_instance(f, c, [1.0], make_bounds([1.0], [0.5]))
        lam = DualVector.for_bounds([1e6], inst.bounds)
        assert primal_oracle(inst, lam, inst.theta_star, 0) == 0

    def test_deterministic_lowest_index_ties(self):
        f = np.array([[0.5, 0.5, 0.2]])
        c = np.zeros((1, 3, 1))
        inst = table_instance(f, c, [1.0], make_bounds([1.0], [0.5]))
        lam = DualVector.zeros(inst.bounds)
        z1 = primal_oracle(inst, lam, inst.theta_star, 0)
        z2 = primal_oracle(inst, lam, inst.theta_star, 0)
        assert z1 == z2 == 0

    def test_domain_error_on_bad_dual(self):
        f = np.zeros((1, 2))
        c = np.zeros((1, 2, 1))
        inst = table_instance(f, c, [1.0], make_bounds([1.0], [NEG_INF]))
        bad = DualVector(np.array([-0.5]), np.array([False]))
        with pytest.raises(DomainError):
            primal_oracle(inst, bad, inst.theta_star, 0)


class TestEvaluationSpotChecks:
    def test_cost_bound_violation_raises(self):
        inst = table_instance(
            np.zeros((1, 2)), np.ones((1, 2, 1)) * 5.0, [1.0], make_bounds([1.0], [0.5])
        )
        object.__setattr__(inst, "cost_bound", 1.0)
        with pytest.raises(InvariantViolation):
            inst.eval_cost(1, inst.theta_star, 0)

    def test_revenue_bound_checked_at_theta_star(self):
        inst = table_instance(
            np.ones((1, 2)) * 9.0, np.zeros((1, 2, 1)), [1.0], make_bounds([1.0], [0.5])
        )
        object.__setattr__(inst, "rev_bound", 1.0)
        with pytest.raises(InvariantViolation):
            inst.eval_revenue(0, inst.theta_star, 0)
        # other parameters are not held to the true-parameter bound
        inst.eval_revenue(0, np.array([2.0]), 0)


class TestContextNoise:
    def test_noise_mean_zero(self):
        from pacer.bandit import generate_instance, to_problem_instance

        bi = generate_instance(3, 4, 100, context_noise=0.1, reward_noise=0.5, seed=9)
        pi = to_problem_instance(bi)
        rng = np.random.default_rng(123)
        xs = np.array([pi.sample_context(rng).xi for _ in range(100_000)])
        assert abs(xs.mean()) < 3 * 0.5 / np.sqrt(3 * 100_000)

"""Parameter-learning subroutines: updates, emissions, and hyperparameter rules."""

import math

import numpy as np
import pytest

from pacer.errors import DimensionError
from pacer.learners import (
    LearnerSpec,
    default_nu,
    learner_emit,
    learner_update,
    make_learner,
    theory_nu,
)


def fresh(kind, dim=2, horizon=10000, rev_err=0.0, **kw):
    theta_star = np.zeros(dim)
    theta_star[0] = 1.0
    return make_learner(LearnerSpec(kind=kind, **kw), dim, theta_star, horizon, rev_err)


class TestUpdates:
    def test_no_action_is_noop(self):
        state = fresh("lsq")
        before_B = state.B.copy()
        learner_update(state, None)
        assert np.array_equal(state.B, before_B) and state.n_actions == 0

    def test_single_observation_hand_solve(self):
        state = fresh("lsq", dim=2)
        learner_update(state, (np.array([1.0, 0.0]), 1.0))
        assert np.allclose(state.B, [[2.0, 0.0], [0.0, 1.0]])
        assert np.allclose(state.theta_hat, [0.5, 0.0])

    def test_known_ignores_observations(self):
        state = fresh("known", dim=3)
        rng = np.random.default_rng(0)
        out1 = learner_emit(state, rng)
        learner_update(state, (np.array([1.0, 1.0, 1.0]), 5.0))
        out2 = learner_emit(state, rng)
        assert np.array_equal(out1, out2)
        assert np.array_equal(out1, state.theta_star)

    def test_dimension_mismatch(self):
        state = fresh("lsq", dim=2)
        with pytest.raises(DimensionError):
            learner_update(state, (np.ones(3), 1.0))

    def test_initial_estimate_unit_diagonal(self):
        state = fresh("lsq", dim=4)
        assert np.allclose(state.theta_hat, 0.5)  # 1/sqrt(4)
        assert np.allclose(state.B, np.eye(4))


class TestEmissions:
    def test_thompson_zero_nu_degenerates(self):
        state = fresh("thompson", dim=3, nu=0.0)
        learner_update(state, (np.array([1.0, 0.0, 0.0]), 0.7))
        rng = np.random.default_rng(1)
        assert np.allclose(learner_emit(state, rng), state.theta_hat)

    def test_ridge_small_penalty_matches_plain_least_squares(self):
        # independent oracle: numpy lstsq on the same 10-sample dataset
        rng = np.random.default_rng(8)
        X = rng.uniform(-1, 1, size=(10, 3))
        theta_true = np.array([0.4, -0.2, 0.9])
        y = X @ theta_true
        state = fresh("ridge", dim=3, horizon=4, ridge_penalty=1e-12)
        for x, r in zip(X, y):
            learner_update(state, (x, r))
        assert state.n_actions >= state.warm_actions
        emitted = learner_emit(state, np.random.default_rng(2))
        oracle, *_ = np.linalg.lstsq(X, y, rcond=None)
        assert np.allclose(emitted, oracle, atol=1e-8)

    def test_nu_rule_arithmetic(self):
        assert default_nu(0.5, 10000, 50) == pytest.approx(1.073, abs=2e-3)
        assert default_nu(0.0, 10000, 50) == 0.1
        assert theory_nu(0.5, 10000, 50) == pytest.approx(
            0.5 * math.sqrt(9 * 50 * math.log(10000))
        )

    def test_warm_start_switch_counts_actions(self):
        # horizon 64 -> ridge phase from the 4th action on
        state = fresh("ridge", dim=2, horizon=64, ridge_penalty=0.5)
        rng = np.random.default_rng(3)
        xs = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])]
        for i, x in enumerate(xs):
            learner_update(state, (x, 1.0))
            emitted = learner_emit(state, rng)
            if state.n_actions < 4:
                assert np.allclose(emitted, state.theta_hat)
        learner_update(state, (np.array([0.5, 0.5]), 1.0))
        emitted = learner_emit(state, rng)
        assert not np.allclose(emitted, state.theta_hat)


class TestConsistency:
    def test_lsq_recovery_after_p_independent_observations(self):
        # The identity prior biases the estimate by O(1/scale^2); with
        # large-scale features, p observations pin theta to within 1e-6.
        dim = 4
        state = fresh("lsq", dim=dim)
        theta_true = np.array([0.3, -0.5, 0.8, 0.1])
        state.theta_star = theta_true
        scale = 1e4
        for i in range(dim):
            x = np.zeros(dim)
            x[i] = scale
            learner_update(state, (x, float(x @ theta_true)))
        err = np.linalg.norm(state.theta_hat - theta_true)
        assert err < 1e-6

    def test_thompson_covariance_matches_posterior(self):
        state = fresh("thompson", dim=2, nu=0.3)
        learner_update(state, (np.array([1.0, 0.5]), 1.0))
        learner_update(state, (np.array([0.2, 1.0]), -0.5))
        rng = np.random.default_rng(99)
        draws = np.stack([learner_emit(state, rng) for _ in range(100_000)])
        emp = np.cov(draws.T)
        target = 0.3**2 * np.linalg.inv(state.B)
        assert np.all(np.abs(emp - target) <= 0.05 * np.abs(target))

    def test_perturbation_decays_with_action_count(self):
        spec_kw = dict(nu=None, ridge_penalty=0.001, warm_actions=1.0)
        rng_data = np.random.default_rng(5)
        state = fresh("ridge_perturb", dim=3, horizon=10000, **spec_kw)
        scales = {}
        for count in (4, 16, 64):
            while state.n_actions < count:
                x = rng_data.uniform(-1, 1, 3)
                learner_update(state, (x, float(x @ state.theta_star)))
            ridge_theta = learner_emit(
                fresh_ridge_copy(state), np.random.default_rng(0)
            )
            draws = np.stack(
                [learner_emit(state, np.random.default_rng(s)) for s in range(400)]
            )
            noise = draws - ridge_theta
            # per-coordinate noise is Uniform(-0.3, 0.3)/sqrt(count)
            bound = 0.3 / math.sqrt(count)
            assert np.abs(noise).max() <= bound + 1e-12
            scales[count] = np.abs(noise).mean()
        assert scales[16] == pytest.approx(scales[4] / 2, rel=0.15)
        assert scales[64] == pytest.approx(scales[16] / 2, rel=0.15)


def fresh_ridge_copy(state):
    """Same data, plain ridge kind, to expose the unperturbed solution."""
    twin = make_learner(
        LearnerSpec(kind="ridge", ridge_penalty=state.ridge_penalty, warm_actions=1.0),
        state.dim,
        state.theta_star,
        state.horizon,
    )
    twin.B = state.B.copy()
    twin.resp = state.resp.copy()
    twin.n_actions = state.n_actions
    return twin

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisymdp.mdp import (
    RewardFunction,
    RMatrix,
    TransitionModel,
    ValueFunction,
    ValueIterationError,
    bellman_update,
    evaluate_policy,
    optimal_policy,
    transition_matrix,
    value_iteration,
)


def random_model(rng, n, m):
    kernels = rng.dirichlet(np.ones(n), size=(m, n))
    return TransitionModel(kernels)


class TestTransitionModel:
    def test_rejects_non_stochastic_rows(self):
        bad = np.zeros((1, 2, 2))
        bad[0, 0] = [0.5, 0.4]
        bad[0, 1] = [0.5, 0.5]
        with pytest.raises(ValueError):
            TransitionModel(bad)

    def test_rejects_negative_entries(self):
        bad = np.array([[[1.2, -0.2], [0.5, 0.5]]])
        with pytest.raises(ValueError):
            TransitionModel(bad)

    def test_shape_accessors(self):
        model = random_model(np.random.default_rng(0), 4, 3)
        assert model.num_states == 4
        assert model.num_actions == 3

    def test_json_round_trip(self):
        model = random_model(np.random.default_rng(1), 3, 2)
        text = model.to_json()
        doc = json.loads(text)
        assert doc["N"] == 3 and doc["M"] == 2
        back = TransitionModel.from_json(text)
        np.testing.assert_allclose(back.kernels, model.kernels)


class TestValueFunction:
    def test_sum_zero_enforced(self):
        with pytest.raises(ValueError):
            ValueFunction([1.0, 1.0], sum_zero=True)
        vf = ValueFunction([1.0, -1.0], sum_zero=True)
        assert len(vf) == 2

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            ValueFunction([np.inf, 0.0])


class TestValueIteration:
    def test_single_state_geometric_series(self):
        model = TransitionModel(np.ones((1, 1, 1)))
        v = value_iteration(model, RewardFunction([1.0]), beta=0.5, tol=1e-10)
        assert v.values[0] == pytest.approx(2.0, abs=1e-8)

    def test_tiny_discount_returns_reward(self):
        rng = np.random.default_rng(2)
        model = random_model(rng, 5, 3)
        r = rng.normal(size=5)
        v = value_iteration(model, RewardFunction(r), beta=1e-12, tol=1e-14)
        np.testing.assert_allclose(v.values, r, atol=1e-6)

    def test_absorbing_chain_matches_path_enumeration(self):
        # deterministic 3-state chain 0 -> 1 -> 2 with 2 absorbing, r(2) = 0
        kernels = np.zeros((1, 3, 3))
        kernels[0, 0, 1] = 1.0
        kernels[0, 1, 2] = 1.0
        kernels[0, 2, 2] = 1.0
        model = TransitionModel(kernels)
        r = np.array([1.0, 2.0, 0.0])
        beta = 0.9
        v = value_iteration(model, RewardFunction(r), beta, tol=1e-12)
        # oracle: walk each deterministic path for 200 steps
        for start in range(3):
            total, x = 0.0, start
            for t in range(200):
                total += beta ** t * r[x]
                x = int(np.argmax(kernels[0, x]))
            assert v.values[start] == pytest.approx(total, abs=1e-8)

    def test_fixed_point_residual_bound(self):
        rng = np.random.default_rng(3)
        model = random_model(rng, 6, 2)
        reward = RewardFunction(rng.normal(size=6))
        tol = 1e-9
        v = value_iteration(model, reward, beta=0.95, tol=tol)
        residual = np.max(np.abs(bellman_update(model, reward, 0.95, v.values) - v.values))
        assert residual <= tol

    def test_non_convergence_error_carries_state(self):
        model = TransitionModel(np.ones((1, 1, 1)))
        with pytest.raises(ValueIterationError) as exc:
            value_iteration(model, RewardFunction([1.0]), beta=0.999,
                            tol=1e-12, max_iters=3)
        assert exc.value.last_iterate.shape == (1,)
        assert exc.value.residual > 0

    def test_invalid_beta_and_tol(self):
        model = TransitionModel(np.ones((1, 1, 1)))
        with pytest.raises(ValueError):
            value_iteration(model, RewardFunction([1.0]), beta=1.0, tol=1e-6)
        with pytest.raises(ValueError):
            value_iteration(model, RewardFunction([1.0]), beta=0.5, tol=0.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.05, 0.95))
    def test_bellman_contraction(self, seed, beta):
        rng = np.random.default_rng(seed)
        model = random_model(rng, 4, 3)
        reward = RewardFunction(rng.normal(size=4))
        for _ in range(4):
            v1 = rng.normal(size=4)
            v2 = rng.normal(size=4)
            lhs = np.max(np.abs(bellman_update(model, reward, beta, v1)
                                - bellman_update(model, reward, beta, v2)))
            assert lhs <= beta * np.max(np.abs(v1 - v2)) + 1e-12


class TestTransitionMatrix:
    def test_full_action_set(self):
        rng = np.random.default_rng(4)
        model = random_model(rng, 5, 3)
        rm = transition_matrix(model, 2)
        assert rm.rows.shape == (3, 5)
        for a in range(3):
            np.testing.assert_allclose(rm.rows[a], model.kernels[a, 2])

    def test_single_action_restriction(self):
        rng = np.random.default_rng(5)
        model = random_model(rng, 4, 3)
        rm = transition_matrix(model, 1, legal_actions=[2])
        assert rm.rows.shape == (1, 4)
        np.testing.assert_allclose(rm.rows[0], model.kernels[2, 1])
        assert rm.action_labels == (2,)

    def test_entrywise_lookup_oracle(self):
        rng = np.random.default_rng(6)
        model = random_model(rng, 6, 4)
        legal = [3, 0, 2]
        rm = transition_matrix(model, 4, legal_actions=legal)
        assert rm.action_labels == (0, 2, 3)  # ascending order
        for i, a in enumerate(rm.action_labels):
            for j in range(6):
                assert rm.rows[i, j] == model.kernels[a, 4, j]

    def test_rows_are_probability_vectors(self):
        rng = np.random.default_rng(7)
        model = random_model(rng, 5, 2)
        rm = transition_matrix(model, 0)
        np.testing.assert_allclose(rm.rows.sum(axis=1), 1.0, atol=1e-12)

    def test_empty_legal_set_fails(self):
        model = random_model(np.random.default_rng(8), 3, 2)
        with pytest.raises(ValueError):
            transition_matrix(model, 0, legal_actions=[])


class TestRMatrix:
    def test_needs_at_least_one_action(self):
        with pytest.raises(ValueError):
            RMatrix(state=0, rows=np.zeros((0, 3)), action_labels=())

    def test_label_count_must_match(self):
        with pytest.raises(ValueError):
            RMatrix(state=0, rows=np.eye(2), action_labels=(0,))


class TestOptimalPolicy:
    def test_zero_value_ties_break_low(self):
        model = random_model(np.random.default_rng(9), 4, 3)
        v = ValueFunction(np.zeros(4))
        assert optimal_policy(v, model, 0) == 0

    def test_deterministic_jump_model(self):
        # action a jumps to state a
        kernels = np.zeros((3, 3, 3))
        for a in range(3):
            kernels[a, :, a] = 1.0
        model = TransitionModel(kernels)
        v = ValueFunction([0.0, 5.0, 0.0])
        assert optimal_policy(v, model, 0) == 1

    def test_brute_force_argmax_oracle(self):
        rng = np.random.default_rng(10)
        model = random_model(rng, 4, 5)
        reward = RewardFunction(rng.normal(size=4))
        v = value_iteration(model, reward, beta=0.9, tol=1e-10)
        for x in range(4):
            scores = [model.kernels[a, x] @ v.values for a in range(5)]
            assert optimal_policy(v, model, x) == int(np.argmax(scores))

    def test_translation_invariance(self):
        rng = np.random.default_rng(11)
        model = random_model(rng, 5, 4)
        vals = rng.normal(size=5)
        for x in range(5):
            base = optimal_policy(ValueFunction(vals), model, x)
            shifted = optimal_policy(ValueFunction(vals + 17.3), model, x)
            assert base == shifted

    def test_basis_mode_rejected(self):
        model = random_model(np.random.default_rng(12), 3, 2)
        with pytest.raises(ValueError):
            optimal_policy(ValueFunction([1.0, 2.0], mode="basis"), model, 0)


class TestEvaluatePolicy:
    def test_single_state_geometric(self):
        model = TransitionModel(np.ones((1, 1, 1)))
        est = evaluate_policy(model, RewardFunction([1.0]), 0.5,
                              policy=lambda x: 0, start_state=0,
                              num_rollouts=50, horizon=60, rng_seed=0)
        assert est.estimate == pytest.approx(2.0, abs=1e-6)

    def test_zero_reward_is_exactly_zero(self):
        model = TransitionModel(np.ones((1, 1, 1)))
        est = evaluate_policy(model, RewardFunction([0.0]), 0.9,
                              policy=lambda x: 0, start_state=0,
                              num_rollouts=10, horizon=50, rng_seed=1)
        assert est.estimate == 0.0

    def test_three_state_cycle_closed_form(self):
        # deterministic cycle 0 -> 1 -> 2 -> 0, rewards (1, 2, 3), beta 0.5
        kernels = np.zeros((1, 3, 3))
        kernels[0, 0, 1] = kernels[0, 1, 2] = kernels[0, 2, 0] = 1.0
        model = TransitionModel(kernels)
        beta = 0.5
        r = [1.0, 2.0, 3.0]
        horizon = 120
        # oracle: hand expansion of the periodic reward stream
        expected = sum(beta ** t * r[t % 3] for t in range(horizon))
        est = evaluate_policy(model, RewardFunction(r), beta,
                              policy=lambda x: 0, start_state=0,
                              num_rollouts=7, horizon=horizon, rng_seed=2)
        assert est.estimate == pytest.approx(expected, abs=1e-9)
        assert est.std_error == pytest.approx(0.0, abs=1e-12)

    def test_truncation_bound_reported(self):
        model = TransitionModel(np.ones((1, 1, 1)))
        est = evaluate_policy(model, RewardFunction([2.0]), 0.9,
                              policy=lambda x: 0, start_state=0,
                              num_rollouts=5, horizon=100, rng_seed=3)
        assert est.truncation_bound == pytest.approx(0.9 ** 100 * 2.0 / 0.1)

    def test_reproducible_given_seed(self):
        rng = np.random.default_rng(13)
        model = random_model(rng, 4, 2)
        reward = RewardFunction(rng.normal(size=4))
        kw = dict(policy=lambda x: x % 2, start_state=1,
                  num_rollouts=30, horizon=40, rng_seed=77)
        a = evaluate_policy(model, reward, 0.8, **kw)
        b = evaluate_policy(model, reward, 0.8, **kw)
        assert a.estimate == b.estimate

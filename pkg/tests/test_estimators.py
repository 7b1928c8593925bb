import math

import numpy as np
import pytest

from opebench.core import Dataset, State, Step, Trajectory, samples_to_dataset
from opebench.envs import generate_trajectories, exact_dp_value
from opebench.envs.policies import ActionTablePolicy, TablePolicy, UniformPolicy
from opebench.envs.tabular import occupancy_weighted_q, q_by_remaining_horizon
from opebench.estimators import (
    DegenerateWeightsError,
    EstimatorReport,
    bandit_dr_estimate,
    dm_estimate,
    dr_estimate,
    dr_per_trajectory,
    is_estimate,
    step_is_estimate,
    step_wis_estimate,
    trajectory_arrays,
    wis_estimate,
)
from opebench.linmodel import LinearQModel, TabularFeatures

from conftest import random_dataset, table_policy


def _one_step_data(entries, gamma=1.0):
    """entries: (state_id, action, reward, pb)"""
    trajs = tuple(
        Trajectory(steps=(Step(State(discrete_id=s), a, r, pb),))
        for s, a, r, pb in entries
    )
    return Dataset(trajectories=trajs, gamma=gamma, horizon=1)


def _on_policy_dataset(env, n, seed):
    return generate_trajectories(env, env.eval_policy, n, seed=seed)


class TestIsFamily:
    def test_on_policy_is_mean_return(self, fail_env):
        data = _on_policy_dataset(fail_env, 200, seed=1)
        returns = [sum(s.reward for s in t.steps) for t in data.trajectories]
        value = is_estimate(data, fail_env.eval_policy, fail_env.eval_policy)
        assert value == pytest.approx(np.mean(returns), rel=1e-12)
        assert wis_estimate(data, fail_env.eval_policy) == pytest.approx(np.mean(returns), rel=1e-12)

    def test_single_trajectory_weighted(self):
        # One step, ratio 2, reward 3: the IS estimate is 6.
        data = _one_step_data([(0, 0, 3.0, 0.25)])
        pi_e = TablePolicy(np.array([[0.5, 0.5]]))
        assert is_estimate(data, pi_e) == pytest.approx(6.0)

    def test_horizon_one_step_is_equals_is(self):
        rng = np.random.default_rng(2)
        data = _one_step_data([(0, int(rng.integers(2)), float(rng.normal()), 0.4) for _ in range(20)])
        pi_e = TablePolicy(np.array([[0.7, 0.3]]))
        assert step_is_estimate(data, pi_e) == pytest.approx(is_estimate(data, pi_e), rel=1e-14)

    def test_modelfail_is_unbiased(self, fail_env):
        # Enumeration oracle: 0.88 * 1 + 0.12 * (-1) = 0.76.
        data = generate_trajectories(fail_env, fail_env.behavior_policy, 100_000, seed=3)
        arr = trajectory_arrays(data, fail_env.eval_policy, fail_env.behavior_policy)
        values = arr.cum[:, -1] * arr.returns
        se = values.std(ddof=1) / math.sqrt(data.n)
        assert abs(values.mean() - 0.76) < 3 * se

    def test_modelwin_step_is_unbiased(self, win_env):
        truth = exact_dp_value(win_env, win_env.eval_policy, 1.0)
        data = generate_trajectories(win_env, win_env.behavior_policy, 100_000, seed=4)
        arr = trajectory_arrays(data, win_env.eval_policy, win_env.behavior_policy)
        values = (arr.cum * arr.rewards) @ arr.discounts
        se = values.std(ddof=1) / math.sqrt(data.n)
        assert abs(values.mean() - truth) < 3 * se

    def test_wis_single_trajectory_ignores_ratio(self):
        data = _one_step_data([(0, 0, 2.5, 0.1)])
        pi_e = TablePolicy(np.array([[0.9, 0.1]]))
        assert wis_estimate(data, pi_e) == pytest.approx(2.5)
        assert step_wis_estimate(data, pi_e) == pytest.approx(2.5)

    def test_wis_is_convex_combination(self):
        rng = np.random.default_rng(5)
        rewards = rng.normal(size=30)
        data = _one_step_data([(0, int(rng.integers(2)), float(r), 0.3) for r in rewards])
        pi_e = TablePolicy(np.array([[0.8, 0.2]]))
        value = wis_estimate(data, pi_e)
        assert rewards.min() <= value <= rewards.max()

    def test_step_wis_equals_step_is_on_policy(self, win_env):
        data = _on_policy_dataset(win_env, 50, seed=6)
        pi = win_env.eval_policy
        assert step_wis_estimate(data, pi, pi) == pytest.approx(
            step_is_estimate(data, pi, pi), rel=1e-12
        )

    def test_degenerate_weights_raise(self):
        data = _one_step_data([(0, 1, 1.0, 0.5)])
        pi_e = ActionTablePolicy(np.array([0]), 2)  # zero mass on logged action
        with pytest.raises(DegenerateWeightsError):
            wis_estimate(data, pi_e)
        with pytest.raises(DegenerateWeightsError):
            step_wis_estimate(data, pi_e)


class TestDm:
    def test_constant_model(self):
        features = TabularFeatures(2, 3)
        model = LinearQModel(np.full(6, 1.75), features)
        states = [State(discrete_id=0), State(discrete_id=1)]
        assert dm_estimate(states, model, UniformPolicy(3)) == pytest.approx(1.75)

    def test_true_q_model_reads_exact_value(self, win_env):
        # Filling the table with the full-horizon DP values makes the
        # start-state readout exact.
        q_full = q_by_remaining_horizon(win_env, win_env.eval_policy, 1.0)[win_env.horizon - 1]
        model = LinearQModel(q_full.ravel(), TabularFeatures(3, 2))
        truth = exact_dp_value(win_env, win_env.eval_policy, 1.0)
        starts = [State(discrete_id=0)] * 5
        assert dm_estimate(starts, model, win_env.eval_policy) == pytest.approx(truth, rel=1e-12)

    def test_deterministic_policy_reads_chosen_action(self):
        features = TabularFeatures(2, 2)
        model = LinearQModel(np.array([1.0, 2.0, 3.0, 4.0]), features)
        pi = ActionTablePolicy(np.array([1, 0]), 2)
        states = [State(discrete_id=0), State(discrete_id=1)]
        assert dm_estimate(states, model, pi) == pytest.approx((2.0 + 3.0) / 2)


class TestDr:
    def test_zero_model_equals_step_is(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            data = random_dataset(rng, n=6, horizon=5)
            pi_e = table_policy(rng)
            model = LinearQModel(np.zeros(6), TabularFeatures(3, 2))
            dr = dr_estimate(data, model, pi_e)
            sis = step_is_estimate(data, pi_e)
            assert abs(dr - sis) <= 1e-12 * max(1.0, abs(sis))

    def test_hand_computed_single_step(self):
        # ratio 2, r 1, Qhat 0.5, Vhat 0.4: 2*1 - (2*0.5 - 1*0.4) = 1.4.
        data = _one_step_data([(0, 0, 1.0, 0.25)])
        pi_e = TablePolicy(np.array([[0.5, 0.5]]))
        model = LinearQModel(np.array([0.5, 0.3]), TabularFeatures(1, 2))
        assert dr_estimate(data, pi_e=pi_e, model=model) == pytest.approx(1.4, abs=1e-12)

    def test_translation_identity(self):
        # Shifting the model by c changes the estimate by
        # mean_i sum_t gamma^t c (w_{0:t-1} - w_{0:t}).
        rng = np.random.default_rng(8)
        features = TabularFeatures(3, 2)
        for _ in range(20):
            data = random_dataset(rng, n=5, horizon=4)
            pi_e = table_policy(rng)
            beta = rng.normal(size=6)
            c = float(rng.normal())
            base = dr_estimate(data, LinearQModel(beta, features), pi_e)
            shifted = dr_estimate(data, LinearQModel(beta + c, features), pi_e)
            arr = trajectory_arrays(data, pi_e)
            predicted = float(np.mean(((arr.cum_prev - arr.cum) * c) @ arr.discounts))
            assert shifted - base == pytest.approx(predicted, abs=1e-12)

    def test_variance_reduction_on_policy(self, win_env):
        # With pi_e = pi_b and the occupancy-weighted DP model, the control
        # variate strictly reduces the per-trajectory variance.
        pi = win_env.eval_policy
        model = LinearQModel(
            occupancy_weighted_q(win_env, pi, 1.0).ravel(), TabularFeatures(3, 2)
        )
        data = generate_trajectories(win_env, pi, 20_000, seed=9)
        dr_terms = dr_per_trajectory(data, model, pi, pi)
        arr = trajectory_arrays(data, pi, pi)
        sis_terms = (arr.cum * arr.rewards) @ arr.discounts
        assert dr_terms.var(ddof=1) < sis_terms.var(ddof=1)


class TestBanditDr:
    def test_zero_model_is_plain_is(self):
        rng = np.random.default_rng(10)
        samples = [
            Step(State(discrete_id=int(rng.integers(2))), int(rng.integers(2)), float(rng.normal()), 0.4)
            for _ in range(30)
        ]
        pi_e = TablePolicy(np.array([[0.7, 0.3], [0.2, 0.8]]))
        model = LinearQModel(np.zeros(4), TabularFeatures(2, 2))
        expected = is_estimate(samples_to_dataset(samples), pi_e)
        assert bandit_dr_estimate(samples, model, pi_e) == pytest.approx(expected, rel=1e-12)

    def test_hand_computed_sample(self):
        # ratio 1.8, r 1, Qhat 1, Vhat 0.9: 1.8*0 + 0.9.
        samples = [Step(State(discrete_id=0), 0, 1.0, 0.5)]
        pi_e = TablePolicy(np.array([[0.9, 0.1]]))
        model = LinearQModel(np.array([1.0, 0.0]), TabularFeatures(1, 2))
        assert bandit_dr_estimate(samples, model, pi_e) == pytest.approx(0.9, abs=1e-12)

    def test_on_policy_plug_in_matches_brute_force(self):
        # pi_e = pi_b with the per-cell empirical-mean model: DR equals the
        # brute-force plug-in sum over cells.
        rng = np.random.default_rng(11)
        pi = TablePolicy(np.array([[0.6, 0.4], [0.3, 0.7]]))
        samples = []
        for _ in range(200):
            s = State(discrete_id=int(rng.integers(2)))
            a = pi.sample(s, rng)
            samples.append(Step(s, a, float(rng.normal(loc=s.discrete_id + a)), pi.prob(s, a)))
        means = np.zeros((2, 2))
        counts = np.zeros((2, 2))
        for smp in samples:
            means[smp.state.discrete_id, smp.action] += smp.reward
            counts[smp.state.discrete_id, smp.action] += 1
        means = means / np.maximum(counts, 1)
        model = LinearQModel(means.ravel(), TabularFeatures(2, 2))
        # Brute force: mean over samples of w*(r - mean_cell) + V(x).
        expected = np.mean(
            [
                (smp.reward - means[smp.state.discrete_id, smp.action])
                + float(pi.table[smp.state.discrete_id] @ means[smp.state.discrete_id])
                for smp in samples
            ]
        )
        assert bandit_dr_estimate(samples, model, pi) == pytest.approx(float(expected), rel=1e-10)


class TestReport:
    def test_round_trip(self):
        report = EstimatorReport("step-is", 0.731, 128, 42)
        assert EstimatorReport.from_json(report.to_json()) == report

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            EstimatorReport("is", float("nan"), 1, 0)

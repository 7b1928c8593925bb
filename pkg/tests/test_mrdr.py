import numpy as np
import pytest

from opebench.core import State, Step, samples_to_dataset
from opebench.envs import generate_trajectories
from opebench.envs.policies import ActionTablePolicy, TablePolicy, UniformPolicy
from opebench.linmodel import GdConfig, LinearQModel, TabularFeatures, check_gradient
from opebench.mrdr import (
    BanditSpec,
    MrdrFitConfig,
    ZeroProbabilityError,
    bandit_dr_variance_closed_form,
    bandit_dr_variance_delta_form,
    bandit_j_exact,
    bandit_spec_policies,
    bandit_variance_constant,
    mrdr_fit,
    mrdr_objective_bandit,
    mrdr_objective_rl,
    mrdr_wls_deterministic,
    omega_matrix,
    q_vector,
    simulate_bandit_dr,
)
from opebench.estimators import dr_per_trajectory

from conftest import random_policy_table


def _spec():
    return BanditSpec(
        p0=[0.4, 0.6],
        pi_b=[[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]],
        pi_e=[[0.7, 0.2, 0.1], [0.1, 0.2, 0.7]],
        mean_reward=[[1.0, 0.2, -0.5], [0.0, 0.8, 0.3]],
        var_reward=[[0.3, 0.1, 0.4], [0.2, 0.0, 0.6]],
    )


def _bandit_samples(spec, n, seed):
    pi_e, pi_b = bandit_spec_policies(spec)
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        x = int(rng.choice(spec.num_contexts, p=spec.p0))
        state = State(discrete_id=x)
        a = pi_b.sample(state, rng)
        r = float(
            rng.normal(spec.mean_reward[x, a], np.sqrt(spec.var_reward[x, a]))
        )
        samples.append(Step(state, a, r, pi_b.prob(state, a)))
    return samples


class TestOmega:
    def test_uniform_two_actions(self):
        pi_b = UniformPolicy(2)
        omega = omega_matrix(pi_b, State(discrete_id=0))
        assert np.array_equal(omega, [[1.0, -1.0], [-1.0, 1.0]])
        assert np.linalg.eigvalsh(omega) == pytest.approx([0.0, 2.0], abs=1e-12)

    @pytest.mark.parametrize("l", [2, 3, 5, 10])
    def test_uniform_l_actions(self, l):
        omega = omega_matrix(UniformPolicy(l), State(discrete_id=0))
        assert np.allclose(omega, l * np.eye(l) - np.ones((l, l)))
        eigs = np.linalg.eigvalsh(omega)
        assert eigs[0] == pytest.approx(0.0, abs=1e-12)
        assert eigs[-1] == pytest.approx(l, abs=1e-12)

    def test_random_policies_psd(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            table = random_policy_table(rng, 1, 4, floor=0.01)
            omega = omega_matrix(TablePolicy(table), State(discrete_id=0))
            assert np.linalg.eigvalsh(omega)[0] >= -1e-10

    def test_zero_probability_raises(self):
        pi_b = TablePolicy(np.array([[1.0, 0.0]]))
        with pytest.raises(ZeroProbabilityError):
            omega_matrix(pi_b, State(discrete_id=0))


class TestQVector:
    def test_zero_model_is_reward_indicator(self):
        model = LinearQModel(np.zeros(3), TabularFeatures(1, 3))
        q = q_vector(State(discrete_id=0), 1, 2.5, model, UniformPolicy(3))
        assert np.array_equal(q, [0.0, -2.5, 0.0])

    def test_zero_reward_is_weighted_model_row(self):
        model = LinearQModel(np.array([1.0, 2.0, 3.0]), TabularFeatures(1, 3))
        pi_e = TablePolicy(np.array([[0.2, 0.3, 0.5]]))
        q = q_vector(State(discrete_id=0), 0, 0.0, model, pi_e)
        assert np.allclose(q, [0.2, 0.6, 1.5])

    def test_deterministic_cancellation(self):
        model = LinearQModel(np.array([4.0, 0.0]), TabularFeatures(1, 2))
        pi_e = ActionTablePolicy(np.array([0]), 2)
        q = q_vector(State(discrete_id=0), 0, 4.0, model, pi_e)
        assert np.array_equal(q, [0.0, 0.0])

    def test_sum_is_value_minus_reward(self):
        rng = np.random.default_rng(1)
        model = LinearQModel(rng.normal(size=3), TabularFeatures(1, 3))
        pi_e = TablePolicy(random_policy_table(rng, 1, 3))
        state = State(discrete_id=0)
        r = 0.7
        q = q_vector(state, 2, r, model, pi_e)
        assert q.sum() == pytest.approx(model.v(state, pi_e) - r, rel=1e-12)


class TestObjectives:
    def test_bandit_gradient_matches_finite_differences(self):
        spec = _spec()
        pi_e, pi_b = bandit_spec_policies(spec)
        samples = _bandit_samples(spec, 60, seed=2)
        features = TabularFeatures(2, 3)
        rng = np.random.default_rng(3)
        for _ in range(5):
            beta = rng.normal(size=6)
            err = check_gradient(
                lambda b: mrdr_objective_bandit(samples, LinearQModel(b, features), pi_e, pi_b),
                beta,
            )
            assert err < 1e-4

    def test_rl_gradient_matches_finite_differences(self, fail_env):
        data = generate_trajectories(fail_env, fail_env.behavior_policy, 40, seed=4)
        features = TabularFeatures(1, 2)
        rng = np.random.default_rng(5)
        for _ in range(5):
            beta = rng.normal(size=2)
            err = check_gradient(
                lambda b: mrdr_objective_rl(
                    data, LinearQModel(b, features), fail_env.eval_policy, fail_env.behavior_policy
                ),
                beta,
            )
            assert err < 1e-4

    def test_objective_nonnegative(self):
        spec = _spec()
        pi_e, pi_b = bandit_spec_policies(spec)
        samples = _bandit_samples(spec, 40, seed=6)
        features = TabularFeatures(2, 3)
        rng = np.random.default_rng(7)
        for _ in range(20):
            value, _ = mrdr_objective_bandit(
                samples, LinearQModel(rng.normal(size=6), features), pi_e, pi_b
            )
            assert value >= 0.0

    def test_horizon_one_matches_bandit_bitwise(self):
        spec = _spec()
        pi_e, pi_b = bandit_spec_policies(spec)
        samples = _bandit_samples(spec, 50, seed=8)
        data = samples_to_dataset(samples)
        features = TabularFeatures(2, 3)
        rng = np.random.default_rng(9)
        for _ in range(5):
            model = LinearQModel(rng.normal(size=6), features)
            vb, gb = mrdr_objective_bandit(samples, model, pi_e, pi_b)
            vr, gr = mrdr_objective_rl(data, model, pi_e, pi_b)
            assert vb == vr
            assert np.array_equal(gb, gr)

    def test_deterministic_reduction_matches_wls_objective(self):
        # For deterministic pi_e the sampled objective equals the weighted
        # least squares with weights (1 - pi_b) / pi_b^2 on matching samples.
        spec = _spec()
        _, pi_b = bandit_spec_policies(spec)
        pi_e = ActionTablePolicy(np.array([0, 2]), 3)
        samples = _bandit_samples(spec, 80, seed=10)
        features = TabularFeatures(2, 3)
        rng = np.random.default_rng(11)

        def wls_value(beta):
            model = LinearQModel(beta, features)
            total = 0.0
            for s in samples:
                if pi_e.action(s.state) != s.action:
                    continue
                pb = s.behavior_prob
                total += (1 - pb) / pb**2 * (s.reward - model.q(s.state, s.action)) ** 2
            return total / len(samples)

        beta1, beta2 = rng.normal(size=6), rng.normal(size=6)
        j1, _ = mrdr_objective_bandit(samples, LinearQModel(beta1, features), pi_e, pi_b)
        j2, _ = mrdr_objective_bandit(samples, LinearQModel(beta2, features), pi_e, pi_b)
        assert j1 - j2 == pytest.approx(wls_value(beta1) - wls_value(beta2), abs=1e-9)


class TestFits:
    def test_gradient_path_matches_deterministic_wls(self):
        spec = _spec()
        _, pi_b = bandit_spec_policies(spec)
        pi_e = ActionTablePolicy(np.array([0, 2]), 3)
        samples = _bandit_samples(spec, 100, seed=12)
        features = TabularFeatures(2, 3)
        gd_model = mrdr_fit(
            samples, pi_e, pi_b, features,
            MrdrFitConfig(solver="gd", gd=GdConfig(max_iters=50_000, grad_tol=1e-11)),
        )
        wls_model = mrdr_wls_deterministic(samples, pi_e, pi_b, features, 1.0, "bandit")
        assert np.max(np.abs(gd_model.beta - wls_model.beta)) < 1e-6

    def test_fit_recovers_deterministic_rewards_on_policy(self):
        # pi_e = pi_b with deterministic per-cell rewards: the population
        # objective reaches its PSD floor at Qhat = r, so on a dataset whose
        # empirical frequencies equal the sampling distribution exactly the
        # fit returns r on every visited cell (the DM warm start pins the
        # objective's flat per-context translation direction).
        pi = TablePolicy(np.array([[0.5, 0.3, 0.2], [0.2, 0.4, 0.4]]))
        rewards = np.array([[1.0, -0.5, 0.25], [0.0, 2.0, -1.0]])
        samples = []
        for x in range(2):
            state = State(discrete_id=x)
            for a in range(3):
                count = int(round(20 * pi.table[x, a]))
                samples += [Step(state, a, float(rewards[x, a]), pi.prob(state, a))] * count
        features = TabularFeatures(2, 3)
        model = mrdr_fit(samples, pi, pi, features)
        for x in range(2):
            for a in range(3):
                assert model.q(State(discrete_id=x), a) == pytest.approx(rewards[x, a], abs=1e-8)

    def test_gradient_small_at_fit(self):
        spec = _spec()
        pi_e, pi_b = bandit_spec_policies(spec)
        samples = _bandit_samples(spec, 100, seed=14)
        features = TabularFeatures(2, 3)
        model = mrdr_fit(samples, pi_e, pi_b, features,
                         MrdrFitConfig(gd=GdConfig(max_iters=50_000, grad_tol=1e-8)))
        _, grad = mrdr_objective_bandit(samples, model, pi_e, pi_b)
        assert np.max(np.abs(grad)) <= 1e-5

    def test_wls_weight_arithmetic(self):
        # Two samples in one cell with pb 0.2 and 0.5: weights 20 and 2.
        state = State(discrete_id=0)
        samples = [Step(state, 0, 1.0, 0.2), Step(state, 0, 0.0, 0.5)]
        pi_e = ActionTablePolicy(np.array([0]), 2)
        pi_b = TablePolicy(np.array([[0.5, 0.5]]))  # only logged pb enters weights
        model = mrdr_wls_deterministic(samples, pi_e, None, TabularFeatures(1, 2), 1.0, "bandit")
        assert model.beta[0] == pytest.approx(20.0 / 22.0, rel=1e-6)

    def test_confident_behavior_gets_no_weight(self):
        state = State(discrete_id=0)
        samples = [Step(state, 0, 5.0, 1.0), Step(state, 0, 1.0, 0.5)]
        pi_e = ActionTablePolicy(np.array([0]), 2)
        model = mrdr_wls_deterministic(samples, pi_e, None, TabularFeatures(1, 2), 1.0, "bandit")
        # (1 - pb) / pb^2 is 0 at pb = 1: only the second sample counts.
        assert model.beta[0] == pytest.approx(1.0, rel=1e-6)

    def test_rl_wls_equivalence_on_modelfail(self, fail_env):
        pi_e = ActionTablePolicy(np.zeros(1, dtype=int), 2)
        data = generate_trajectories(fail_env, fail_env.behavior_policy, 200, seed=15)
        features = TabularFeatures(1, 2)
        gd_model = mrdr_fit(
            data, pi_e, fail_env.behavior_policy, features,
            MrdrFitConfig(solver="gd", gd=GdConfig(max_iters=50_000, grad_tol=1e-11)),
        )
        wls_model = mrdr_wls_deterministic(
            data, pi_e, fail_env.behavior_policy, features, 1.0, "rl"
        )
        assert np.max(np.abs(gd_model.beta - wls_model.beta)) < 1e-6

    def test_fit_on_padded_tile_data(self):
        # Continuous-state path: tile features plus absorbing padding from
        # early goal hits must leave the objective finite and improvable.
        from opebench.envs import generate_trajectories, mountain_car
        from opebench.envs.policies import GreedyLinearPolicy, SoftenedPolicy, SofteningSpec
        from opebench.linmodel import mountaincar_features
        from opebench.estimators import dr_estimate

        env = mountain_car()
        features = mountaincar_features(position_bins=4, velocity_bins=4, horizon_bins=2)
        # A pump-like base policy reaches the goal, so padding shows up.
        base = GreedyLinearPolicy(
            LinearQModel(np.zeros(features.dim), features), env.action_count
        )

        class Pump(GreedyLinearPolicy):
            def action(self, state):
                return 2 if state.features[1] >= 0 else 0

        pi_b = SoftenedPolicy(Pump(base.model, 3), SofteningSpec("friendly", 0.8, 0.0))
        pi_e = SoftenedPolicy(Pump(base.model, 3), SofteningSpec("friendly", 0.9, 0.0))
        data = generate_trajectories(env, pi_b, 12, seed=30)
        assert any(s.state.is_absorbing for t in data.trajectories for s in t.steps)
        model = mrdr_fit(data, pi_e, pi_b, features)
        value, grad = mrdr_objective_rl(data, model, pi_e, pi_b)
        zero_value, _ = mrdr_objective_rl(
            data, LinearQModel(np.zeros(features.dim), features), pi_e, pi_b
        )
        assert np.isfinite(value) and value <= zero_value
        assert np.isfinite(dr_estimate(data, model, pi_e, pi_b))

    def test_mrdr0_minimizes_empirical_second_moment(self, fail_env):
        data = generate_trajectories(fail_env, fail_env.behavior_policy, 64, seed=16)
        features = TabularFeatures(1, 2)
        model = mrdr_fit(
            data, fail_env.eval_policy, fail_env.behavior_policy, features,
            MrdrFitConfig(mode="mrdr0"),
        )

        def second_moment(m):
            terms = dr_per_trajectory(data, m, fail_env.eval_policy, fail_env.behavior_policy)
            return float(np.mean(terms**2))

        best = second_moment(model)
        rng = np.random.default_rng(17)
        for _ in range(20):
            other = LinearQModel(model.beta + rng.normal(scale=0.1, size=2), features)
            assert second_moment(other) >= best - 1e-9


class TestVarianceDiagnostics:
    def test_on_policy_true_model_reduces_to_context_variance(self):
        # pi_e = pi_b, Qhat = true means, deterministic rewards: only the
        # across-context variance of the state values remains.
        pi = np.array([[0.5, 0.3, 0.2], [0.2, 0.4, 0.4]])
        means = np.array([[1.0, 0.0, -1.0], [0.5, 0.5, 0.0]])
        spec = BanditSpec(
            p0=[0.3, 0.7], pi_b=pi, pi_e=pi,
            mean_reward=means, var_reward=np.zeros((2, 3)),
        )
        model = LinearQModel(means.ravel(), TabularFeatures(2, 3))
        v = np.sum(pi * means, axis=1)
        expected = float(spec.p0 @ v**2 - (spec.p0 @ v) ** 2)
        assert bandit_dr_variance_closed_form(spec, model) == pytest.approx(expected, rel=1e-12)

    def test_two_closed_forms_agree(self):
        spec = _spec()
        rng = np.random.default_rng(18)
        features = TabularFeatures(2, 3)
        for _ in range(10):
            model = LinearQModel(rng.normal(size=6), features)
            v1 = bandit_dr_variance_closed_form(spec, model)
            v2 = bandit_dr_variance_delta_form(spec, model)
            assert v1 == pytest.approx(v2, abs=1e-9)

    def test_variance_equals_objective_plus_constant(self):
        spec = _spec()
        c = bandit_variance_constant(spec)
        rng = np.random.default_rng(19)
        features = TabularFeatures(2, 3)
        for _ in range(10):
            model = LinearQModel(rng.normal(size=6), features)
            total = bandit_j_exact(spec, model) + c
            assert total == pytest.approx(bandit_dr_variance_closed_form(spec, model), abs=1e-9)

    def test_monte_carlo_agreement(self):
        spec = _spec()
        model = LinearQModel(np.zeros(6), TabularFeatures(2, 3))
        sims = simulate_bandit_dr(spec, model, 200_000, seed=20)
        closed = bandit_dr_variance_closed_form(spec, model)
        assert sims.var(ddof=1) == pytest.approx(closed, rel=0.05)

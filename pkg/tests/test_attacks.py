import numpy as np
import pytest
from scipy import stats

from aapi.agents.buffer import Batch
from aapi.attacks import (
    AttackCriticConfig,
    AttackSpec,
    attack_critic_targets,
    evaluate,
    exact_attack_values,
    n_score,
    offset_probabilities,
    perturb,
    train_attack_critic,
)
from aapi.envs import DoubleIntegrator, FiniteMdpEnv, make_hazard_gridworld
from aapi.errors import ConfigError, DegenerateBaselineError
from aapi.mdp import TabularPolicy, policy_evaluation, policy_iteration, random_mdp
from aapi.nn import DenseNet, forward
from aapi.oapi import adversary_route_values, oa_policy_iteration

import oracles


@pytest.fixture(scope="module")
def grid():
    return make_hazard_gridworld()


@pytest.fixture(scope="module")
def policies(grid):
    return {"vanilla": policy_iteration(grid)[0], "oa": oa_policy_iteration(grid)[0]}


class TestAttackSpec:
    def test_defaults(self):
        spec = AttackSpec("min_q", 0.1)
        assert spec.pgd_steps == 30 and spec.critic_source == "bench"

    @pytest.mark.parametrize("kwargs", [dict(kind="fgsm"), dict(kind="random", epsilon=-0.1),
                                        dict(kind="min_oa_q", epsilon=0.1, pgd_steps=0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            AttackSpec(**kwargs)

    def test_nominal_ignores_epsilon(self):
        assert AttackSpec("nominal", 5.0).effective_epsilon == 0.0

    def test_dict_round_trip(self):
        spec = AttackSpec("biggest", 0.3, 12)
        assert AttackSpec.from_dict(spec.to_dict()) == spec


class TestPerturb:
    def test_nominal_returns_action(self, rng):
        a = rng.uniform(-1, 1, 3)
        np.testing.assert_array_equal(perturb(AttackSpec("nominal", 0.5), None, a, rng), a)

    def test_biggest_corners_uniform(self):
        rng = np.random.default_rng(0)
        spec = AttackSpec("biggest", 0.2)
        a = np.zeros(2)
        deltas = np.array([perturb(spec, None, a, rng) for _ in range(4000)])
        assert np.all(np.isclose(np.abs(deltas), 0.2, rtol=0, atol=1e-15))
        corners = (deltas[:, 0] > 0) * 2 + (deltas[:, 1] > 0)
        counts = np.bincount(corners, minlength=4)
        assert stats.chisquare(counts).pvalue > 0.01

    def test_random_within_ball(self, rng):
        spec = AttackSpec("random", 0.3)
        for _ in range(500):
            a = rng.uniform(-1, 1, 2)
            out = perturb(spec, None, a, rng)
            assert np.all(np.abs(out) <= 1.0)
            assert np.all(np.abs(out - a) <= 0.3 + 1e-15)

    def test_gradient_attack_needs_critic(self, rng):
        with pytest.raises(ConfigError):
            perturb(AttackSpec("min_q", 0.2), np.zeros(2), np.zeros(1), rng)

    def test_gradient_attack_lowers_critic(self, rng):
        q = DenseNet.mlp(3, 1, rng)
        s, a = rng.normal(size=(20, 2)), rng.uniform(-0.5, 0.5, (20, 1))
        out = perturb(AttackSpec("min_oa_q", 0.2), s, a, rng, {"min_oa_q": q})
        before = forward(q, np.concatenate([s, a], 1))[0]
        after = forward(q, np.concatenate([s, out], 1))[0]
        assert np.all(after <= before) and np.all(np.abs(out - a) <= 0.2)


class TestTabularAttacks:
    def test_min_oa_q_matches_enumerated_argmin(self, grid, policies):
        pi = policies["oa"]
        v = oracles.worst_case_values_lp(grid, pi.probs)
        q_adv = grid.reward + grid.gamma * grid.transition @ v
        emb = np.asarray(grid.action_embeddings)
        offs = oracles.offset_list(emb, grid.epsilon)
        probs = offset_probabilities(AttackSpec("min_oa_q", grid.epsilon), grid, pi)
        for s in range(grid.n_states):
            vals = [sum(pi.probs[s, a] * q_adv[s, oracles.shifted_action(emb, a, d, grid.epsilon)]
                        for a in range(4)) for d in offs]
            best = np.flatnonzero(np.isclose(vals, min(vals), rtol=0, atol=1e-9))
            if len(best) == 1:
                assert probs[s].argmax() == best[0]

    def test_min_oa_q_value_is_worst_case(self, grid, policies):
        for pi in policies.values():
            v = exact_attack_values(grid, pi, AttackSpec("min_oa_q", 1.0))
            np.testing.assert_allclose(v, adversary_route_values(grid, pi), rtol=0, atol=1e-9)

    def test_strength_ordering_on_random_instances(self, rng):
        for _ in range(50):
            mdp = random_mdp(rng, int(rng.integers(2, 8)), int(rng.integers(2, 5)),
                             epsilon=float(rng.uniform(0, 2)))
            p = rng.random((mdp.n_states, mdp.n_actions))
            pi = TabularPolicy(p / p.sum(1, keepdims=True))
            worst = adversary_route_values(mdp, pi)
            for kind in ("random", "biggest", "min_q"):
                assert np.all(exact_attack_values(mdp, pi, AttackSpec(kind, mdp.epsilon)) >= worst - 1e-9)

    def test_random_between_worst_and_nominal_for_optimal_policy(self, rng):
        for _ in range(30):
            mdp = random_mdp(rng, int(rng.integers(2, 8)), int(rng.integers(2, 5)), epsilon=1.0)
            pi = policy_iteration(mdp)[0]
            nominal = exact_attack_values(mdp, pi, AttackSpec("nominal"))
            randomized = exact_attack_values(mdp, pi, AttackSpec("random", 1.0))
            assert np.all(randomized <= nominal + 1e-9)
            assert np.all(randomized >= adversary_route_values(mdp, pi) - 1e-9)


class TestEvaluate:
    def test_nominal_tabular_is_exact(self, grid, policies):
        pi = policies["vanilla"]
        report = evaluate(pi, FiniteMdpEnv(grid), AttackSpec("nominal"), 3, [0, 1], discount=grid.gamma)
        v = policy_evaluation(pi, grid, tol=1e-12)[np.arange(16), pi.actions]
        np.testing.assert_allclose(report.returns, v[4], rtol=0, atol=1e-12)
        assert len(set(report.returns.tolist())) == 1

    @pytest.mark.parametrize("which", ["vanilla", "oa"])
    def test_any_policy_worst_below_random_below_nominal(self, grid, policies, which):
        pi = policies[which]
        env = FiniteMdpEnv(grid)
        worst = adversary_route_values(grid, pi)[4]
        nominal = evaluate(pi, env, AttackSpec("nominal"), 1, [0], discount=grid.gamma).mean
        randomized = evaluate(pi, env, AttackSpec("random", 1.0), 200, range(10), discount=grid.gamma).mean
        assert worst <= randomized <= nominal

    def test_sampled_mean_agrees_with_exact_value(self, grid, policies):
        pi = policies["vanilla"]
        report = evaluate(pi, FiniteMdpEnv(grid), AttackSpec("random", 1.0), 200, range(10),
                          discount=grid.gamma)
        exact = exact_attack_values(grid, pi, AttackSpec("random", 1.0))[4]
        assert abs(report.mean - exact) <= 4 * report.stderr

    def test_report_size_and_seed_order(self):
        env = DoubleIntegrator(max_episode_steps=5)
        report = evaluate(lambda obs: np.zeros(1), env, AttackSpec("random", 0.1), 3, [7, 2, 5])
        assert report.n == 9 and report.seeds == [2, 5, 7]
        assert report.summary()["n"] == 9

    def test_deterministic_given_seeds(self):
        policy = lambda obs: -obs[:1]
        a = evaluate(policy, DoubleIntegrator(), AttackSpec("biggest", 0.3), 2, [0, 1]).returns
        b = evaluate(policy, DoubleIntegrator(), AttackSpec("biggest", 0.3), 2, [1, 0]).returns
        assert a.tobytes() == b.tobytes()

    def test_episode_count_validated(self):
        with pytest.raises(ValueError):
            evaluate(lambda o: np.zeros(1), DoubleIntegrator(), AttackSpec("nominal"), 0, [0])


class TestAttackCritic:
    def test_zero_discount_targets_are_rewards(self, rng):
        policy = DenseNet.mlp(2, 1, rng)
        q = DenseNet.mlp(3, 1, rng)
        batch = Batch(rng.normal(size=(8, 2)), rng.uniform(-1, 1, (8, 1)), rng.normal(size=8),
                      rng.normal(size=(8, 2)), np.zeros(8))
        y = attack_critic_targets(batch, policy, q, 0.2, AttackCriticConfig(gamma=0.0), rng)
        np.testing.assert_array_equal(y, batch.r)

    def test_zero_epsilon_targets_are_plain_td_targets(self, rng):
        policy, q = DenseNet.mlp(2, 1, rng), DenseNet.mlp(3, 1, rng)
        batch = Batch(rng.normal(size=(8, 2)), rng.uniform(-1, 1, (8, 1)), rng.normal(size=8),
                      rng.normal(size=(8, 2)), (rng.random(8) < 0.3).astype(float))
        cfg = AttackCriticConfig()
        y = attack_critic_targets(batch, policy, q, 0.0, cfg, np.random.default_rng(1))
        noise_rng = np.random.default_rng(1)
        a2 = forward(policy, batch.s2)[0]
        a2 = np.clip(a2 + np.clip(noise_rng.normal(0.0, cfg.policy_noise, a2.shape), -0.5, 0.5), -1, 1)
        q2 = forward(q, np.concatenate([batch.s2, a2], 1))[0][:, 0]
        np.testing.assert_array_equal(y, batch.r + cfg.gamma * (1 - batch.d) * q2)

    def test_modes_coincide_at_zero_epsilon(self, rng):
        policy = DenseNet.mlp(2, 1, rng, hidden_act="tanh", out_act="tanh")
        cfg = AttackCriticConfig(total_steps=400, learning_starts=100, seed=3)
        a = train_attack_critic(policy, DoubleIntegrator(), 0.0, "oa", cfg)
        b = train_attack_critic(policy, DoubleIntegrator(), 0.0, "standard", cfg)
        assert a.theta.tobytes() == b.theta.tobytes()

    def test_unknown_mode(self, rng):
        with pytest.raises(ConfigError):
            train_attack_critic(DenseNet.mlp(2, 1, rng), DoubleIntegrator(), 0.1, "robust")


class TestNScore:
    def test_hand_cases(self):
        assert n_score(-20.0, -200.0, -20.0) == 1.0
        assert n_score(-200.0, -200.0, -20.0) == 0.0
        assert n_score(-65.0, -200.0, -20.0) == 0.75

    def test_not_clamped(self):
        assert n_score(0.0, -200.0, -20.0) > 1.0
        assert n_score(-300.0, -200.0, -20.0) < 0.0

    def test_degenerate_baseline(self):
        with pytest.raises(DegenerateBaselineError):
            n_score(1.0, 5.0, 5.0)

import numpy as np
import pytest

from popforge import nets
from popforge.envs import PointMassEnv, pointmass_lqr_gain, riccati_recursion, pointmass_system
from popforge.nets import Layer, NetworkParams
from popforge.optim import HyperparamSet, OptimizerKind
from popforge.td3 import (
    ReplayBuffer,
    compute_targets,
    evaluate,
    make_agent,
    policy_action,
    polyak_update,
    select_action,
    td3_update,
)


class ConstantRewardEnv:
    """Stub environment: fixed reward every step, fixed-length episodes."""

    class _Spec:
        obs_dim = 2
        action_dim = 1
        action_high = 1.0
        episode_limit = 200

    def __init__(self, reward=1.0, episode_limit=200):
        self.spec = self._Spec()
        self.spec.episode_limit = episode_limit
        self.reward = reward
        self.step_count = 0
        self.episode_return = 0.0

    def reset(self, seed=None):
        self.step_count = 0
        self.episode_return = 0.0
        return np.zeros(2)

    def step(self, action):
        self.step_count += 1
        self.episode_return += self.reward
        return np.zeros(2), self.reward, self.step_count >= self.spec.episode_limit


def small_agent(kind=OptimizerKind.ADAM, seed=0, batch=16, damping=None, **kw):
    rng = np.random.default_rng(seed)
    hyper = HyperparamSet(1e-3, 1e-3, batch, damping)
    return make_agent(2, 1, 1.0, kind, hyper, rng, hidden=(8, 8), **kw)


def filled_buffer(agent, n=64, seed=0):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(256, agent.obs_dim, agent.action_dim)
    for _ in range(n):
        s = rng.normal(size=2)
        a = rng.uniform(-1, 1, size=1)
        buf.push(s, a, float(rng.normal()), rng.normal(size=2), False)
    return buf


class TestReplayBuffer:
    def test_ring_overwrites_oldest(self):
        buf = ReplayBuffer(3, 1, 1)
        for i in range(5):
            buf.push([float(i)], [0.0], float(i), [0.0], False)
        assert buf.size == 3
        np.testing.assert_array_equal(buf.rows()[:, 0], [2.0, 3.0, 4.0])

    def test_sample_requires_enough_entries(self):
        buf = ReplayBuffer(10, 1, 1)
        buf.push([0.0], [0.0], 0.0, [0.0], False)
        with pytest.raises(ValueError):
            buf.sample(2, np.random.default_rng(0))

    def test_sampling_is_uniform_within_3_sigma(self):
        buf = ReplayBuffer(100, 1, 1)
        for i in range(100):
            buf.push([float(i)], [0.0], 0.0, [0.0], False)
        rng = np.random.default_rng(0)
        counts = np.zeros(100)
        draws = 50_000
        for _ in range(draws // 100):
            s, *_ = buf.sample(100, rng)
            for v in s[:, 0]:
                counts[int(v)] += 1
        p = 1.0 / 100
        sigma = np.sqrt(draws * p * (1 - p))
        assert np.all(np.abs(counts - draws * p) <= 3 * sigma)

    def test_copy_is_deep(self):
        buf = ReplayBuffer(4, 1, 1)
        buf.push([1.0], [0.5], 1.0, [2.0], True)
        dup = buf.copy()
        buf.push([9.0], [0.0], 0.0, [0.0], False)
        assert dup.size == 1
        np.testing.assert_array_equal(dup.rows(), [[1.0, 0.5, 1.0, 2.0, 1.0]])

    def test_roundtrip_rows(self):
        buf = ReplayBuffer(5, 2, 1)
        rng = np.random.default_rng(1)
        for _ in range(7):
            buf.push(rng.normal(size=2), rng.normal(size=1), 1.0, rng.normal(size=2), False)
        other = ReplayBuffer(5, 2, 1)
        other.load_rows(buf.rows())
        np.testing.assert_array_equal(other.rows(), buf.rows())


class TestSelectAction:
    def test_greedy_is_deterministic_without_rng(self):
        agent = small_agent()
        s = np.array([0.3, -0.2])
        a1 = select_action(agent, s, explore=False)
        a2 = select_action(agent, s, explore=False)
        np.testing.assert_array_equal(a1, a2)

    def test_saturated_actor_plus_noise_clips_to_bound(self):
        actor = NetworkParams([Layer([[50.0, 0.0]], [50.0], "tanh")])
        agent = small_agent()
        agent.actor = actor

        class PositiveNoise:
            def normal(self, loc, scale, size):
                return np.full(size, 0.5)

        a = select_action(agent, np.array([1.0, 0.0]), explore=True, rng=PositiveNoise())
        assert a[0] == 1.0

    def test_fixed_seed_reproducible(self):
        agent = small_agent()
        s = np.array([0.1, 0.9])
        a1 = select_action(agent, s, explore=True, rng=np.random.default_rng(5))
        a2 = select_action(agent, s, explore=True, rng=np.random.default_rng(5))
        np.testing.assert_array_equal(a1, a2)

    def test_explore_requires_rng(self):
        with pytest.raises(ValueError):
            select_action(small_agent(), np.zeros(2), explore=True)


class TestTargets:
    def test_zero_discount_gives_reward(self):
        agent = small_agent()
        agent.gamma = 0.0
        r = np.array([1.5, -2.0])
        y = compute_targets(agent, r, np.zeros((2, 2)), np.zeros(2), np.random.default_rng(0))
        np.testing.assert_allclose(y, r)

    def test_twin_minimum_never_exceeds_single_critics(self):
        agent = small_agent(seed=3)
        rng = np.random.default_rng(1)
        s2 = rng.normal(size=(32, 2))
        r = rng.normal(size=32)
        done = np.zeros(32)
        noise_rng = np.random.default_rng(2)
        y = compute_targets(agent, r, s2, done, noise_rng)
        # recompute the smoothed action with the identical draw
        noise_rng = np.random.default_rng(2)
        noise = np.clip(
            noise_rng.normal(0.0, agent.target_noise, size=(32, 1)), -0.5, 0.5
        )
        a2 = np.clip(policy_action(agent, s2) + noise, -1, 1)
        x2 = np.concatenate([s2, a2], axis=1)
        for critic in (agent.target_critic1, agent.target_critic2):
            q = nets.forward(critic, x2)[:, 0]
            assert np.all(y <= r + agent.gamma * q + 1e-12)

    def test_done_masks_bootstrap(self):
        agent = small_agent()
        r = np.array([2.0])
        y = compute_targets(agent, r, np.zeros((1, 2)), np.ones(1), np.random.default_rng(0))
        assert y[0] == pytest.approx(2.0)


class TestPolyak:
    def test_tau_one_copies_mains(self):
        agent = small_agent(seed=9)
        polyak_update(agent.target_actor, agent.actor, tau=1.0)
        np.testing.assert_array_equal(
            nets.flatten(agent.target_actor), nets.flatten(agent.actor)
        )

    def test_geometric_contraction_toward_frozen_main(self):
        agent = small_agent(seed=11)
        rng = np.random.default_rng(0)
        agent.target_actor = nets.unflatten(
            agent.actor, nets.flatten(agent.actor) + rng.normal(size=agent.actor.num_params)
        )
        gaps = []
        for _ in range(5):
            gaps.append(
                np.linalg.norm(nets.flatten(agent.target_actor) - nets.flatten(agent.actor))
            )
            polyak_update(agent.target_actor, agent.actor, tau=0.1)
        ratios = [b / a for a, b in zip(gaps, gaps[1:])]
        assert all(r == pytest.approx(0.9, rel=1e-9) for r in ratios)


class TestUpdate:
    def test_actor_changes_only_on_delayed_steps(self):
        agent = small_agent()
        buf = filled_buffer(agent)
        rng = np.random.default_rng(0)
        for step in range(1, 7):
            before = nets.flatten(agent.actor)
            record = td3_update(agent, buf, rng)
            changed = not np.array_equal(before, nets.flatten(agent.actor))
            assert changed == (step % agent.policy_delay == 0)
            assert (record.actor_loss is not None) == (step % agent.policy_delay == 0)

    def test_counters_advance(self):
        agent = small_agent()
        buf = filled_buffer(agent)
        rng = np.random.default_rng(0)
        for _ in range(4):
            td3_update(agent, buf, rng)
        assert agent.grad_steps == 4

    def test_critics_move_toward_targets(self):
        agent = small_agent(batch=32)
        buf = ReplayBuffer(64, 2, 1)
        rng = np.random.default_rng(0)
        for _ in range(64):
            buf.push(rng.normal(size=2), rng.uniform(-1, 1, 1), 1.0, rng.normal(size=2), False)
        losses = [td3_update(agent, buf, rng).critic_loss for _ in range(300)]
        assert np.mean(losses[-50:]) < np.mean(losses[:50])


class TestEvaluate:
    def test_zero_reward_env(self):
        agent = small_agent()
        assert evaluate(agent, ConstantRewardEnv(reward=0.0), 400) == 0.0

    def test_constant_reward_env(self):
        agent = small_agent()
        assert evaluate(agent, ConstantRewardEnv(reward=1.0), 1000) == pytest.approx(200.0)

    def test_partial_trailing_episode_discarded(self):
        agent = small_agent()
        env = ConstantRewardEnv(reward=1.0, episode_limit=100)
        # 250 steps: two full episodes plus a discarded 50-step tail
        assert evaluate(agent, env, 250) == pytest.approx(100.0)

    def test_requires_at_least_one_episode(self):
        agent = small_agent()
        with pytest.raises(ValueError):
            evaluate(agent, ConstantRewardEnv(), 100)

    def test_lqr_policy_matches_riccati_oracle_within_5pct(self):
        gain = pointmass_lqr_gain()
        actor = NetworkParams([Layer(-gain, np.zeros(1), "identity")])
        agent = small_agent()
        agent.actor = actor

        reset_range = (0.1, 0.04)  # keeps the optimal action inside the bounds
        episodes = 20
        ret = evaluate(
            agent,
            PointMassEnv(seed=77, reset_range=reset_range),
            episodes * 200,
        )
        p_mat, _ = riccati_recursion(*pointmass_system(), horizon=200)
        replica = PointMassEnv(seed=77, reset_range=reset_range)
        oracle_values = []
        for _ in range(episodes):
            s0 = replica.reset()
            oracle_values.append(float(-(s0 @ p_mat @ s0)))
        oracle = float(np.mean(oracle_values))
        assert abs(ret - oracle) <= 0.05 * abs(oracle)

import math

import numpy as np
import pytest

from popforge.envs import (
    PendulumEnv,
    PointMassEnv,
    make_env,
    pendulum_step,
    pointmass_lqr_return,
    pointmass_step,
    pointmass_system,
    riccati_recursion,
    wrap_angle,
)


class TestWrapAngle:
    def test_half_open_interval(self):
        assert wrap_angle(math.pi) == math.pi
        assert wrap_angle(-math.pi) == math.pi
        assert wrap_angle(0.0) == 0.0
        assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
        assert wrap_angle(2 * math.pi) == pytest.approx(0.0)

    def test_range(self):
        for theta in np.linspace(-20, 20, 401):
            w = wrap_angle(theta)
            assert -math.pi < w <= math.pi


class TestPointMassStep:
    def test_single_euler_step(self):
        x, v, r = pointmass_step(0.0, 0.0, 1.0)
        assert v == pytest.approx(0.1)
        assert x == pytest.approx(0.01)
        assert r == pytest.approx(-0.01)  # reward on the pre-step state

    def test_equilibrium(self):
        x, v, r = pointmass_step(0.0, 0.0, 0.0)
        assert (x, v, r) == (0.0, 0.0, 0.0)

    def test_reward_nonpositive(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            _, _, r = pointmass_step(rng.normal(), rng.normal(), rng.uniform(-1, 1))
            assert r <= 0.0


class TestPendulumStep:
    def test_upright_fixed_point(self):
        theta, theta_dot, r = pendulum_step(0.0, 0.0, 0.0)
        assert (theta, theta_dot, r) == (0.0, 0.0, 0.0)

    def test_hanging_unstable_equilibrium(self):
        theta, theta_dot, r = pendulum_step(math.pi, 0.0, 0.0)
        assert theta_dot == pytest.approx(0.0, abs=1e-15)  # sin(pi) at float precision
        assert theta == pytest.approx(math.pi, abs=1e-15)

    def test_velocity_clipped(self):
        _, theta_dot, _ = pendulum_step(0.5, 7.99, 2.0)
        assert theta_dot <= 8.0

    def test_reward_bounds(self):
        lower = -(math.pi**2 + 0.1 * 64 + 0.001 * 4)
        rng = np.random.default_rng(1)
        for _ in range(200):
            theta = rng.uniform(-10, 10)
            theta_dot = rng.uniform(-8, 8)
            a = rng.uniform(-2, 2)
            _, _, r = pendulum_step(theta, theta_dot, a)
            assert lower <= r <= 0.0


class TestEnvProtocol:
    @pytest.mark.parametrize("name", ["pointmass", "pendulum"])
    def test_seeded_reset_is_deterministic(self, name):
        env = make_env(name, seed=0)
        first = env.reset(seed=0)
        second = env.reset(seed=0)
        np.testing.assert_array_equal(first, second)

    @pytest.mark.parametrize("name", ["pointmass", "pendulum"])
    def test_reset_zeroes_counters(self, name):
        env = make_env(name, seed=3)
        env.reset()
        for _ in range(5):
            env.step(np.array([0.5]))
        env.reset()
        assert env.step_count == 0
        assert env.episode_return == 0.0

    @pytest.mark.parametrize("name", ["pointmass", "pendulum"])
    def test_bit_exact_trajectories(self, name):
        def rollout():
            env = make_env(name, seed=42)
            obs = env.reset()
            rng = np.random.default_rng(7)
            track = [obs]
            for _ in range(150):
                obs, r, done = env.step(rng.uniform(-1, 1, size=1))
                track.append(np.append(obs, r))
            return np.concatenate(track)

        np.testing.assert_array_equal(rollout(), rollout())

    @pytest.mark.parametrize("name", ["pointmass", "pendulum"])
    def test_episode_ends_exactly_at_limit(self, name):
        env = make_env(name, seed=1, episode_limit=50)
        env.reset()
        for step in range(1, 51):
            _, _, done = env.step(np.zeros(1))
            assert done == (step == 50)
        with pytest.raises(RuntimeError):
            env.step(np.zeros(1))

    def test_pendulum_reset_distribution(self):
        env = PendulumEnv(seed=5)
        thetas, theta_dots = [], []
        for _ in range(500):
            env.reset()
            thetas.append(env._theta)
            theta_dots.append(env._theta_dot)
        assert -math.pi <= min(thetas) and max(thetas) <= math.pi
        assert -1.0 <= min(theta_dots) and max(theta_dots) <= 1.0

    def test_unknown_env_rejected(self):
        with pytest.raises(ValueError):
            make_env("cartpole", seed=0)


class TestLqrOracle:
    def test_value_matches_independent_linear_rollout(self):
        a_mat, b_mat, q_mat, r_mat = pointmass_system()
        p_mat, k_mat = riccati_recursion(a_mat, b_mat, q_mat, r_mat, horizon=200)
        s0 = np.array([1.0, 0.0])
        s = s0.copy()
        cost = 0.0
        for _ in range(200):
            a = -(k_mat @ s)
            cost += s @ q_mat @ s + float(a @ r_mat @ a)
            s = a_mat @ s + (b_mat @ a).ravel()
        assert s0 @ p_mat @ s0 == pytest.approx(cost, rel=1e-10)

    def test_discounted_recursion_matches_long_rollout(self):
        a_mat, b_mat, q_mat, r_mat = pointmass_system()
        gamma = 0.99
        p_mat, k_mat = riccati_recursion(a_mat, b_mat, q_mat, r_mat, 3000, gamma=gamma)
        s = np.array([1.0, 0.0])
        cost = 0.0
        for t in range(3000):
            a = -(k_mat @ s)
            cost += gamma**t * (s @ q_mat @ s + float(a @ r_mat @ a))
            s = a_mat @ s + (b_mat @ a).ravel()
        assert np.array([1.0, 0.0]) @ p_mat @ np.array([1.0, 0.0]) == pytest.approx(
            cost, rel=1e-8
        )

    def test_expected_return_formula(self):
        p_mat, _ = riccati_recursion(*pointmass_system(), horizon=200)
        xr, vr = 0.3, 0.1
        want = -(p_mat[0, 0] * xr**2 / 3 + p_mat[1, 1] * vr**2 / 3)
        assert pointmass_lqr_return((xr, vr)) == pytest.approx(want)

    def test_env_rollout_matches_riccati_value(self):
        # the env's reward/dynamics and the (A, B, Q, R) model must agree
        p_mat, k_mat = riccati_recursion(*pointmass_system(), horizon=200)
        env = PointMassEnv(seed=0, reset_range=(0.1, 0.04))
        obs = env.reset()
        value = -(obs @ p_mat @ obs)
        done = False
        while not done:
            action = -(k_mat @ obs)
            obs, _, done = env.step(action)
        assert env.episode_return == pytest.approx(value, rel=1e-9)

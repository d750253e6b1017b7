"""Deterministic, seedable continuous-control environments at desk scale.

A damped point mass (linear dynamics, quadratic cost, so an analytic LQR
yardstick exists) and a torque-limited pendulum swing-up (bimodal
succeed-or-fail learning behavior).  Episodes terminate exactly at the step
limit; there is no early termination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    wrapped = (theta + math.pi) % TWO_PI - math.pi
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    action_high: float  # bounds are symmetric [-high, +high]
    episode_limit: int


def pointmass_step(
    x: float, v: float, a: float, dt: float = 0.1
) -> tuple[float, float, float]:
    """One semi-implicit Euler step; reward uses the pre-step state.

    Returns (x', v', reward) with reward = -(x^2 + 0.1 v^2 + 0.01 a^2).
    """
    reward = -(x * x + 0.1 * v * v + 0.01 * a * a)
    v_next = v + a * dt
    x_next = x + v_next * dt
    return x_next, v_next, reward


def pendulum_step(
    theta: float, theta_dot: float, a: float
) -> tuple[float, float, float]:
    """One pendulum step (g=10, m=1, l=1, dt=0.05); reward on the pre-step state.

    The angular velocity is clipped to [-8, 8].  Returns
    (theta', theta_dot', reward) with
    reward = -(wrap(theta)^2 + 0.1 theta_dot^2 + 0.001 a^2).
    """
    g, m, length, dt = 10.0, 1.0, 1.0, 0.05
    err = wrap_angle(theta)
    reward = -(err * err + 0.1 * theta_dot * theta_dot + 0.001 * a * a)
    acc = (3.0 * g / (2.0 * length)) * math.sin(theta) + (3.0 / (m * length * length)) * a
    theta_dot_next = min(8.0, max(-8.0, theta_dot + acc * dt))
    theta_next = theta + theta_dot_next * dt
    return theta_next, theta_dot_next, reward


class PointMassEnv:
    """1-d point mass; observation is (x, v), action is acceleration in [-1, 1]."""

    def __init__(
        self,
        seed: int | np.random.SeedSequence = 0,
        reset_range: tuple[float, float] = (0.5, 0.25),
        episode_limit: int = 200,
    ):
        self.spec = EnvSpec("pointmass", 2, 1, 1.0, episode_limit)
        self.reset_range = reset_range
        self._rng = np.random.default_rng(seed)
        self._x = 0.0
        self._v = 0.0
        self.step_count = 0
        self.episode_return = 0.0
        self._needs_reset = True

    def observe(self) -> np.ndarray:
        return np.array([self._x, self._v])

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        xr, vr = self.reset_range
        self._x = float(self._rng.uniform(-xr, xr))
        self._v = float(self._rng.uniform(-vr, vr))
        self.step_count = 0
        self.episode_return = 0.0
        self._needs_reset = False
        return self.observe()

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
        if self._needs_reset:
            raise RuntimeError("episode is over; call reset()")
        a = float(np.clip(np.asarray(action).reshape(-1)[0], -1.0, 1.0))
        self._x, self._v, reward = pointmass_step(self._x, self._v, a)
        self.step_count += 1
        self.episode_return += reward
        done = self.step_count >= self.spec.episode_limit
        self._needs_reset = done
        return self.observe(), reward, done


class PendulumEnv:
    """Torque-limited pendulum; observation is (cos, sin, angular velocity)."""

    def __init__(self, seed: int | np.random.SeedSequence = 0, episode_limit: int = 200):
        self.spec = EnvSpec("pendulum", 3, 1, 2.0, episode_limit)
        self._rng = np.random.default_rng(seed)
        self._theta = 0.0
        self._theta_dot = 0.0
        self.step_count = 0
        self.episode_return = 0.0
        self._needs_reset = True

    def observe(self) -> np.ndarray:
        return np.array([math.cos(self._theta), math.sin(self._theta), self._theta_dot])

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._theta = float(self._rng.uniform(-math.pi, math.pi))
        self._theta_dot = float(self._rng.uniform(-1.0, 1.0))
        self.step_count = 0
        self.episode_return = 0.0
        self._needs_reset = False
        return self.observe()

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
        if self._needs_reset:
            raise RuntimeError("episode is over; call reset()")
        a = float(np.clip(np.asarray(action).reshape(-1)[0], -2.0, 2.0))
        self._theta, self._theta_dot, reward = pendulum_step(self._theta, self._theta_dot, a)
        self.step_count += 1
        self.episode_return += reward
        done = self.step_count >= self.spec.episode_limit
        self._needs_reset = done
        return self.observe(), reward, done


ENV_NAMES = ("pointmass", "pendulum")


def make_env(name: str, seed: int | np.random.SeedSequence, **kwargs):
    if name == "pointmass":
        return PointMassEnv(seed=seed, **kwargs)
    if name == "pendulum":
        return PendulumEnv(seed=seed, **kwargs)
    raise ValueError(f"unknown environment {name!r} (choose from {ENV_NAMES})")


# --- analytic LQR oracle for the point mass -------------------------------

def pointmass_system(dt: float = 0.1) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Discrete-time (A, B, Q, R) matching pointmass_step and its reward."""
    a_mat = np.array([[1.0, dt], [0.0, 1.0]])
    b_mat = np.array([[dt * dt], [dt]])
    q_mat = np.diag([1.0, 0.1])
    r_mat = np.array([[0.01]])
    return a_mat, b_mat, q_mat, r_mat


def riccati_recursion(
    a_mat: np.ndarray,
    b_mat: np.ndarray,
    q_mat: np.ndarray,
    r_mat: np.ndarray,
    horizon: int,
    gamma: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Finite-horizon discounted Riccati recursion (zero terminal cost).

    Returns (P0, K0): cost-to-go matrix from the start and the first-step
    optimal gain, for cost sum_t gamma^t (s'Qs + a'Ra) under s' = As + Ba.
    """
    p_mat = np.zeros_like(q_mat)
    k_mat = np.zeros((b_mat.shape[1], a_mat.shape[0]))
    for _ in range(horizon):
        gain_denom = r_mat + gamma * b_mat.T @ p_mat @ b_mat
        k_mat = gamma * np.linalg.solve(gain_denom, b_mat.T @ p_mat @ a_mat)
        closed = a_mat - b_mat @ k_mat
        p_mat = q_mat + k_mat.T @ r_mat @ k_mat + gamma * closed.T @ p_mat @ closed
    return p_mat, k_mat


def pointmass_lqr_gain(horizon: int = 200, gamma: float = 1.0) -> np.ndarray:
    """Stationary LQR feedback gain (1, 2): a = -K s."""
    _, k_mat = riccati_recursion(*pointmass_system(), horizon=horizon, gamma=gamma)
    return k_mat


def pointmass_lqr_return(
    reset_range: tuple[float, float] = (0.5, 0.25),
    horizon: int = 200,
    gamma: float = 1.0,
) -> float:
    """Expected optimal episodic return over the uniform reset distribution."""
    p_mat, _ = riccati_recursion(*pointmass_system(), horizon=horizon, gamma=gamma)
    xr, vr = reset_range
    # E[x^2] = xr^2/3 for x ~ U[-xr, xr]; cross term vanishes by symmetry
    return float(-(p_mat[0, 0] * xr * xr / 3.0 + p_mat[1, 1] * vr * vr / 3.0))

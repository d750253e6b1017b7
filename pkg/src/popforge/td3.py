"""Twin-delayed deterministic policy gradient agent on hand-rolled MLPs.

One agent owns six networks (actor, twin critics, and target copies), a
replay buffer and a single optimizer kind applied to all of its networks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nets
from .curvature import CholeskyFailure
from .nets import NetworkParams
from .optim import HyperparamSet, NetOptimizer, OptimizerKind


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s2: np.ndarray
    done: bool


class ReplayBuffer:
    """Preallocated ring buffer of transitions with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self._s = np.zeros((capacity, obs_dim))
        self._a = np.zeros((capacity, action_dim))
        self._r = np.zeros(capacity)
        self._s2 = np.zeros((capacity, obs_dim))
        self._done = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def push(self, s: np.ndarray, a: np.ndarray, r: float, s2: np.ndarray, done: bool) -> None:
        i = self.cursor
        self._s[i] = s
        self._a[i] = a
        self._r[i] = r
        self._s2[i] = s2
        self._done[i] = 1.0 if done else 0.0
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(
        self, batch_size: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} < batch {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return (
            self._s[idx],
            self._a[idx],
            self._r[idx],
            self._s2[idx],
            self._done[idx],
        )

    def copy(self) -> "ReplayBuffer":
        dup = ReplayBuffer(self.capacity, self.obs_dim, self.action_dim)
        dup._s = self._s.copy()
        dup._a = self._a.copy()
        dup._r = self._r.copy()
        dup._s2 = self._s2.copy()
        dup._done = self._done.copy()
        dup.size = self.size
        dup.cursor = self.cursor
        return dup

    def rows(self) -> np.ndarray:
        """Stored transitions, oldest first, one flat float row each."""
        if self.size < self.capacity:
            order = np.arange(self.size)
        else:
            order = np.concatenate(
                [np.arange(self.cursor, self.capacity), np.arange(self.cursor)]
            )
        return np.concatenate(
            [
                self._s[order],
                self._a[order],
                self._r[order, None],
                self._s2[order],
                self._done[order, None],
            ],
            axis=1,
        )

    def load_rows(self, rows: np.ndarray) -> None:
        """Refill from rows() output (cursor restarts after the loaded block)."""
        n = rows.shape[0]
        if n > self.capacity:
            raise ValueError("more rows than capacity")
        od, ad = self.obs_dim, self.action_dim
        self._s[:n] = rows[:, :od]
        self._a[:n] = rows[:, od : od + ad]
        self._r[:n] = rows[:, od + ad]
        self._s2[:n] = rows[:, od + ad + 1 : 2 * od + ad + 1]
        self._done[:n] = rows[:, 2 * od + ad + 1]
        self.size = n
        self.cursor = n % self.capacity


@dataclass
class TD3Agent:
    actor: NetworkParams
    critic1: NetworkParams
    critic2: NetworkParams
    target_actor: NetworkParams
    target_critic1: NetworkParams
    target_critic2: NetworkParams
    opt_actor: NetOptimizer
    opt_critic1: NetOptimizer
    opt_critic2: NetOptimizer
    kind: OptimizerKind
    hyper: HyperparamSet
    action_high: float
    policy_delay: int = 2
    target_noise: float = 0.2
    noise_clip: float = 0.5
    explore_noise: float = 0.1
    gamma: float = 0.99
    tau: float = 0.005
    grad_steps: int = 0
    env_steps: int = 0
    cholesky_failures: int = 0
    episodes_done: int = 0
    _obs_dim: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        self._obs_dim = self.actor.dim_in

    @property
    def obs_dim(self) -> int:
        return self._obs_dim

    @property
    def action_dim(self) -> int:
        return self.actor.dim_out

    def networks(self) -> list[NetworkParams]:
        """All six networks in checkpoint/transfer order."""
        return [
            self.actor,
            self.critic1,
            self.critic2,
            self.target_actor,
            self.target_critic1,
            self.target_critic2,
        ]

    def set_networks(self, six: list[NetworkParams]) -> None:
        (
            self.actor,
            self.critic1,
            self.critic2,
            self.target_actor,
            self.target_critic1,
            self.target_critic2,
        ) = six

    def reset_optimizer_state(self) -> None:
        self.opt_actor.reset(self.actor.num_params)
        self.opt_critic1.reset(self.critic1.num_params)
        self.opt_critic2.reset(self.critic2.num_params)


def make_agent(
    obs_dim: int,
    action_dim: int,
    action_high: float,
    kind: OptimizerKind,
    hyper: HyperparamSet,
    rng: np.random.Generator,
    hidden: tuple[int, int] = (64, 64),
    kfac_decay: float = 0.95,
    activation: str = "relu",
    **agent_kwargs,
) -> TD3Agent:
    """Build an agent with freshly initialized networks and optimizer state.

    Networks are drawn sequentially from ``rng`` (actor, critic1, critic2),
    so the twin critics start from different parameters; targets start equal
    to their mains.  ``activation`` picks the hidden nonlinearity: relu
    extrapolates on unbounded observations where tanh saturates; the actor
    output stays tanh so actions respect the bounds.
    """
    h1, h2 = hidden
    actor = nets.init_mlp([obs_dim, h1, h2, action_dim], [activation, activation, "tanh"], rng)
    critic1 = nets.init_mlp([obs_dim + action_dim, h1, h2, 1], [activation, activation, "identity"], rng)
    critic2 = nets.init_mlp([obs_dim + action_dim, h1, h2, 1], [activation, activation, "identity"], rng)
    return TD3Agent(
        actor=actor,
        critic1=critic1,
        critic2=critic2,
        target_actor=actor.copy(),
        target_critic1=critic1.copy(),
        target_critic2=critic2.copy(),
        opt_actor=NetOptimizer.fresh(kind, actor.num_params, kfac_decay),
        opt_critic1=NetOptimizer.fresh(kind, critic1.num_params, kfac_decay),
        opt_critic2=NetOptimizer.fresh(kind, critic2.num_params, kfac_decay),
        kind=kind,
        hyper=hyper,
        action_high=action_high,
        **agent_kwargs,
    )


def policy_action(agent: TD3Agent, obs: np.ndarray) -> np.ndarray:
    """Deterministic policy on a (batch, obs_dim) matrix, scaled to bounds."""
    return agent.action_high * nets.forward(agent.actor, obs)


def select_action(
    agent: TD3Agent,
    s: np.ndarray,
    explore: bool,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Policy action for one state, plus exploration noise when asked.

    No random draw happens when ``explore`` is false, so evaluation does not
    advance the caller's stream.
    """
    action = policy_action(agent, np.asarray(s)[None, :])[0]
    if explore:
        if rng is None:
            raise ValueError("exploration requires an rng")
        action = action + rng.normal(0.0, agent.explore_noise, size=action.shape)
    return np.clip(action, -agent.action_high, agent.action_high)


def polyak_update(target: NetworkParams, main: NetworkParams, tau: float) -> None:
    """In-place target <- tau * main + (1 - tau) * target."""
    for t_layer, m_layer in zip(target.layers, main.layers):
        t_layer.weight *= 1.0 - tau
        t_layer.weight += tau * m_layer.weight
        t_layer.bias *= 1.0 - tau
        t_layer.bias += tau * m_layer.bias


@dataclass
class UpdateRecord:
    critic_loss: float
    actor_loss: float | None = None
    cholesky_failures: int = 0


def compute_targets(
    agent: TD3Agent,
    r: np.ndarray,
    s2: np.ndarray,
    done: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Smoothed twin-minimum TD targets y = r + gamma (1-done) min(Q1', Q2')."""
    noise = np.clip(
        rng.normal(0.0, agent.target_noise, size=(s2.shape[0], agent.action_dim)),
        -agent.noise_clip,
        agent.noise_clip,
    )
    a2 = np.clip(
        agent.action_high * nets.forward(agent.target_actor, s2) + noise,
        -agent.action_high,
        agent.action_high,
    )
    x2 = np.concatenate([s2, a2], axis=1)
    q1 = nets.forward(agent.target_critic1, x2)[:, 0]
    q2 = nets.forward(agent.target_critic2, x2)[:, 0]
    return r + agent.gamma * (1.0 - done) * np.minimum(q1, q2)


def td3_update(agent: TD3Agent, buffer: ReplayBuffer, rng: np.random.Generator) -> UpdateRecord:
    """One gradient step: critics every call, actor/targets every policy_delay.

    A CholeskyFailure from the K-FAC path skips that network's step; the
    counter still advances and the failure is tallied on the agent.
    """
    s, a, r, s2, done = buffer.sample(agent.hyper.batch_size, rng)
    y = compute_targets(agent, r, s2, done, rng)[:, None]
    x = np.concatenate([s, a], axis=1)
    failures = 0

    q1 = nets.forward(agent.critic1, x)
    critic_loss = float(np.mean((q1 - y) ** 2))
    try:
        agent.critic1 = agent.opt_critic1.step_supervised(
            agent.critic1, x, y, agent.hyper.lr_critic, agent.hyper.damping
        )
    except CholeskyFailure:
        failures += 1
    try:
        agent.critic2 = agent.opt_critic2.step_supervised(
            agent.critic2, x, y, agent.hyper.lr_critic, agent.hyper.damping
        )
    except CholeskyFailure:
        failures += 1

    agent.grad_steps += 1
    actor_loss = None
    if agent.grad_steps % agent.policy_delay == 0:
        actions = agent.action_high * nets.forward(agent.actor, s)
        x_pi = np.concatenate([s, actions], axis=1)
        q_pi = nets.forward(agent.critic1, x_pi)
        actor_loss = float(-np.mean(q_pi))
        # per-sample d(-Q)/d(critic input), sliced to the action block and
        # chained through the bound scaling
        critic_capture = nets.backward(agent.critic1, x_pi, -np.ones_like(q_pi))
        d_action = critic_capture.input_grads[:, agent.obs_dim :] * agent.action_high
        need_capture = agent.kind is not OptimizerKind.ADAM
        actor_capture = nets.backward(agent.actor, s, d_action, capture=need_capture)
        try:
            agent.actor = agent.opt_actor.step_from_capture(
                agent.actor, actor_capture, agent.hyper.lr_actor, agent.hyper.damping
            )
        except CholeskyFailure:
            failures += 1
        polyak_update(agent.target_actor, agent.actor, agent.tau)
        polyak_update(agent.target_critic1, agent.critic1, agent.tau)
        polyak_update(agent.target_critic2, agent.critic2, agent.tau)

    agent.cholesky_failures += failures
    return UpdateRecord(critic_loss, actor_loss, failures)


def evaluate(agent: TD3Agent, env, eval_steps: int) -> float:
    """Mean return over episodes completed within ``eval_steps`` greedy steps.

    The trailing partial episode is discarded.
    """
    if eval_steps < env.spec.episode_limit:
        raise ValueError("eval_steps must cover at least one episode")
    returns = []
    obs = env.reset()
    for _ in range(eval_steps):
        action = select_action(agent, obs, explore=False)
        obs, _, done = env.step(action)
        if done:
            returns.append(env.episode_return)
            obs = env.reset()
    return float(np.mean(returns))

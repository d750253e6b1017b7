"""Population orchestrator: parallel interval training, exploit/explore.

Each member trains in its own worker for one perturbation interval; at the
barrier the orchestrator ranks members by interval fitness, copies the bottom
quantile from the top quantile, and perturbs the destinations' tunables.
Transfers respect optimizer kinds: same-kind destinations receive weights,
replay buffer and hyperparameters; cross-kind destinations receive weights
and buffer only and keep (perturbed) their own tunables.

Determinism does not depend on worker scheduling: every stochastic draw
comes either from a member-owned stream or from the orchestrator's stream,
which is consumed in rank order at the barrier.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import write_checkpoint
from .envs import make_env
from .optim import HyperparamSet, OptimizerKind, SamplingBand, perturb, sample_hyperparams
from .td3 import ReplayBuffer, TD3Agent, make_agent, select_action, td3_update

NEG_INF = float("-inf")


class TransferMode(Enum):
    SAME_OPTIMIZER = "same"
    CROSS_OPTIMIZER = "cross"

    def __str__(self) -> str:
        return self.value


@dataclass
class TransferEvent:
    interval: int
    src: int
    dst: int
    mode: TransferMode


@dataclass
class TransferPlan:
    entries: list[tuple[int, int, TransferMode]]  # (src id, dst id, mode)


@dataclass
class PopulationConfig:
    env_name: str = "pointmass"
    size: int = 8
    composition: dict[OptimizerKind, int] = field(
        default_factory=lambda: {OptimizerKind.ADAM: 8}
    )
    perturbation_interval: int = 10_000
    intervals: int = 20
    exploit_fraction: float = 0.2
    step_adjusted: bool = False
    seed: int = 0
    warmup_steps: int = 1_000
    hidden: tuple[int, int] = (64, 64)
    activation: str = "relu"
    buffer_capacity: int = 200_000
    batch_bounds: tuple[int, int] = (64, 512)
    bands: dict[OptimizerKind, SamplingBand] = field(default_factory=dict)
    kfac_decay: float = 0.95
    checkpoint_retention: str = "last"  # none | last | all

    def validate(self) -> None:
        if self.size < 2:
            raise ValueError("population size must be >= 2")
        if sum(self.composition.values()) != self.size:
            raise ValueError(
                f"composition counts {self.composition} do not sum to "
                f"population size {self.size}"
            )
        if self.perturbation_interval <= 0 or self.intervals <= 0:
            raise ValueError("interval settings must be positive")
        if self.checkpoint_retention not in ("none", "last", "all"):
            raise ValueError(f"bad retention {self.checkpoint_retention!r}")

    def kinds_in_id_order(self) -> list[OptimizerKind]:
        kinds: list[OptimizerKind] = []
        for kind, count in self.composition.items():
            kinds.extend([kind] * count)
        return kinds


@dataclass
class PopulationMember:
    id: int
    agent: TD3Agent
    env: object
    buffer: ReplayBuffer
    rng: np.random.Generator
    fitness: float = NEG_INF
    lineage: list[TransferEvent] = field(default_factory=list)
    pending_obs: np.ndarray | None = None
    grad_steps_last_interval: int = 0
    failures_last_interval: int = 0


def make_member(member_id: int, config: PopulationConfig) -> PopulationMember:
    """Build member ``member_id`` with its own rng stream (seed + id)."""
    kind = config.kinds_in_id_order()[member_id]
    rng = np.random.default_rng(config.seed + member_id)
    band = config.bands.get(kind, SamplingBand.default_for(kind))
    hyper = sample_hyperparams(kind, rng, band)
    hyper.validate(kind, config.batch_bounds)
    env = make_env(
        config.env_name, seed=np.random.SeedSequence([config.seed + member_id, 1])
    )
    agent = make_agent(
        env.spec.obs_dim,
        env.spec.action_dim,
        env.spec.action_high,
        kind,
        hyper,
        rng,
        hidden=config.hidden,
        kfac_decay=config.kfac_decay,
        activation=config.activation,
    )
    buffer = ReplayBuffer(config.buffer_capacity, env.spec.obs_dim, env.spec.action_dim)
    member = PopulationMember(member_id, agent, env, buffer, rng)
    member.pending_obs = env.reset()
    return member


def rank(members: list[PopulationMember]) -> list[int]:
    """Member ids by descending fitness; ties break toward the lower id."""
    return [m.id for m in sorted(members, key=lambda m: (-m.fitness, m.id))]


def exploit(
    members: list[PopulationMember],
    config: PopulationConfig,
    rng: np.random.Generator,
) -> TransferPlan:
    """Bottom-quantile members each draw a donor uniformly from the top quantile."""
    if len(members) < 2:
        raise ValueError("exploit needs at least two members")
    order = rank(members)
    k = max(1, round(config.exploit_fraction * len(members)))
    top, bottom = order[:k], order[-k:]
    by_id = {m.id: m for m in members}
    entries = []
    for dst in bottom:
        src = top[int(rng.integers(k))]
        mode = (
            TransferMode.SAME_OPTIMIZER
            if by_id[src].agent.kind is by_id[dst].agent.kind
            else TransferMode.CROSS_OPTIMIZER
        )
        entries.append((src, dst, mode))
    return TransferPlan(entries)


def transfer(
    src: PopulationMember,
    dst: PopulationMember,
    mode: TransferMode,
    rng: np.random.Generator,
    batch_bounds: tuple[int, int] = (64, 512),
    interval: int = -1,
) -> None:
    """Copy src into dst per the transfer mode, then perturb dst's tunables.

    All six networks and the replay buffer are deep-copied in both modes.
    Same-kind transfers also adopt the donor's hyperparameters before the
    perturbation; cross-kind destinations keep their own.  The destination's
    optimizer moments/factors are reset (they describe the old weights) and
    its optimizer kind never changes.
    """
    dst.agent.set_networks([net.copy() for net in src.agent.networks()])
    dst.buffer = src.buffer.copy()
    if mode is TransferMode.SAME_OPTIMIZER:
        dst.agent.hyper = replace(src.agent.hyper)
    dst.agent.hyper = perturb(dst.agent.hyper, dst.agent.kind, rng, batch_bounds)
    dst.agent.reset_optimizer_state()
    dst.lineage.append(TransferEvent(interval, src.id, dst.id, mode))


def gradient_schedule(
    kind: OptimizerKind, step_adjusted: bool, interval_env_steps: int = 10_000
) -> int:
    """Gradient steps a member runs per interval.

    Without adjustment every kind updates once per environment step.  The
    runtime-normalized schedule gives the slower optimizers proportionally
    fewer steps: full / half / three-tenths for Adam / Diag-GGN / K-FAC.
    """
    if not step_adjusted:
        return interval_env_steps
    if kind is OptimizerKind.ADAM:
        return interval_env_steps
    if kind is OptimizerKind.DIAG_GGN:
        return interval_env_steps // 2
    return (3 * interval_env_steps) // 10


def run_interval(member: PopulationMember, config: PopulationConfig) -> float:
    """Train one member for one perturbation interval; returns its fitness.

    Gradient steps are spread evenly by an integer accumulator that gains
    the per-interval step target every environment step and fires whenever
    it reaches one interval's worth.  Fitness is the mean return of episodes
    completed inside the interval, or -inf if none completed.
    """
    agent, env, buffer, rng = member.agent, member.env, member.buffer, member.rng
    interval_steps = config.perturbation_interval
    target = gradient_schedule(agent.kind, config.step_adjusted, interval_steps)
    acc = 0
    grad_start = agent.grad_steps
    fail_start = agent.cholesky_failures
    completed: list[float] = []
    obs = member.pending_obs if member.pending_obs is not None else env.reset()

    for _ in range(interval_steps):
        if agent.env_steps < config.warmup_steps:
            action = rng.uniform(-agent.action_high, agent.action_high, size=agent.action_dim)
        else:
            action = select_action(agent, obs, explore=True, rng=rng)
        obs2, reward, done = env.step(action)
        buffer.push(obs, action, reward, obs2, done)
        agent.env_steps += 1
        if done:
            completed.append(env.episode_return)
            agent.episodes_done += 1
            obs2 = env.reset()
        obs = obs2
        acc += target
        while acc >= interval_steps:
            acc -= interval_steps
            if agent.env_steps >= config.warmup_steps and buffer.size >= agent.hyper.batch_size:
                td3_update(agent, buffer, rng)

    member.pending_obs = obs
    member.grad_steps_last_interval = agent.grad_steps - grad_start
    member.failures_last_interval = agent.cholesky_failures - fail_start
    member.fitness = float(np.mean(completed)) if completed else NEG_INF
    return member.fitness


@dataclass
class IntervalRow:
    interval: int
    member: int
    kind: OptimizerKind
    fitness: float
    hyper: HyperparamSet
    grad_steps: int
    cholesky_failures: int
    events: list[TransferEvent] = field(default_factory=list)


@dataclass
class PbtResult:
    members: list[PopulationMember]
    rows: list[IntervalRow]
    transfers: list[TransferEvent]


def _worker_count(n: int) -> int:
    cap = os.environ.get("POPFORGE_THREADS", "")
    if cap.strip():
        return max(1, min(n, int(cap)))
    return n


def run_pbt(
    config: PopulationConfig,
    out_dir: str | Path | None = None,
    on_interval: Callable[[list[IntervalRow]], None] | None = None,
) -> PbtResult:
    """Train a full population: interval loop with an exploit/explore barrier.

    Members train in parallel worker threads; ranking, exploitation and
    perturbation run single-threaded between intervals (never after the
    last).  ``on_interval`` sees each interval's rows as they are finalized
    so callers can flush partial logs.  Checkpoints are written per the
    retention policy after the barrier settles.
    """
    config.validate()
    members = [make_member(i, config) for i in range(config.size)]
    orch_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 999_331]))
    rows: list[IntervalRow] = []
    transfers: list[TransferEvent] = []
    out_path = Path(out_dir) if out_dir is not None else None

    for interval in range(config.intervals):
        if config.size > 1:
            with ThreadPoolExecutor(max_workers=_worker_count(config.size)) as pool:
                futures = [pool.submit(run_interval, m, config) for m in members]
            for future in futures:
                future.result()  # surfaces worker exceptions, aborting the run
        else:
            run_interval(members[0], config)

        hyper_snapshot = {m.id: replace(m.agent.hyper) for m in members}
        events_by_dst: dict[int, list[TransferEvent]] = {}
        if interval < config.intervals - 1:
            plan = exploit(members, config, orch_rng)
            by_id = {m.id: m for m in members}
            for src_id, dst_id, mode in plan.entries:
                transfer(
                    by_id[src_id],
                    by_id[dst_id],
                    mode,
                    orch_rng,
                    config.batch_bounds,
                    interval,
                )
                event = by_id[dst_id].lineage[-1]
                transfers.append(event)
                events_by_dst.setdefault(dst_id, []).append(event)

        interval_rows = [
            IntervalRow(
                interval=interval,
                member=m.id,
                kind=m.agent.kind,
                fitness=m.fitness,
                hyper=hyper_snapshot[m.id],
                grad_steps=m.grad_steps_last_interval,
                cholesky_failures=m.failures_last_interval,
                events=events_by_dst.get(m.id, []),
            )
            for m in members
        ]
        rows.extend(interval_rows)
        if on_interval is not None:
            on_interval(interval_rows)

        if out_path is not None and config.checkpoint_retention != "none":
            ckpt_dir = out_path / "checkpoints"
            for m in members:
                if config.checkpoint_retention == "all":
                    name = f"member_{m.id:02d}_interval_{interval:03d}.pbtc"
                else:
                    name = f"member_{m.id:02d}.pbtc"
                write_checkpoint(ckpt_dir / name, m.agent, m.buffer)

    return PbtResult(members, rows, transfers)

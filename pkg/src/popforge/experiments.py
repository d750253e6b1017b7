"""Experiment drivers and report generation.

Each mode writes a directory tree of delimited records plus rendered
figures, and a ``result.json`` per run that ``summarize`` aggregates into
mean +/- sample-std tables with percent deltas against a baseline group.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import figures
from .config import ExperimentConfig, composition_label, serialize_config
from .envs import make_env
from .optim import HyperparamSet, OptimizerKind
from .pbt import IntervalRow, PopulationConfig, run_pbt
from .td3 import ReplayBuffer, evaluate, make_agent, select_action, td3_update


def _train_env(env_name: str, seed: int, **kw):
    return make_env(env_name, seed=np.random.SeedSequence([seed, 1]), **kw)


def _eval_env(env_name: str, seed: int, **kw):
    return make_env(env_name, seed=np.random.SeedSequence([seed, 2]), **kw)


def train_single_agent(
    config: ExperimentConfig,
    seed: int,
    out_dir: Path | None = None,
    lr: float | None = None,
    damping: float | None = None,
    train_steps: int | None = None,
) -> dict:
    """Train one agent for the configured budget and evaluate it greedily.

    Returns the result record; when ``out_dir`` is given, also writes
    records.csv (episode returns), curves.png and result.json there.
    """
    lr_actor = lr if lr is not None else config.lr_actor
    lr_critic = lr if lr is not None else config.lr_critic
    damping = damping if damping is not None else config.damping
    steps = train_steps if train_steps is not None else config.train_steps
    hyper = HyperparamSet(lr_actor, lr_critic, config.batch_size, damping)
    hyper.validate(config.optimizer, (config.batch_min, config.batch_max))

    rng = np.random.default_rng(seed)
    env = _train_env(config.env, seed)
    agent = make_agent(
        env.spec.obs_dim,
        env.spec.action_dim,
        env.spec.action_high,
        config.optimizer,
        hyper,
        rng,
        hidden=config.hidden,
        kfac_decay=config.kfac_decay,
    )
    buffer = ReplayBuffer(config.buffer_capacity, env.spec.obs_dim, env.spec.action_dim)

    episodes: list[tuple[int, float]] = []
    obs = env.reset()
    for step in range(1, steps + 1):
        if agent.env_steps < config.warmup_steps:
            action = rng.uniform(-agent.action_high, agent.action_high, agent.action_dim)
        else:
            action = select_action(agent, obs, explore=True, rng=rng)
        obs2, reward, done = env.step(action)
        buffer.push(obs, action, reward, obs2, done)
        agent.env_steps += 1
        if done:
            episodes.append((step, env.episode_return))
            obs2 = env.reset()
        obs = obs2
        if agent.env_steps >= config.warmup_steps and buffer.size >= hyper.batch_size:
            td3_update(agent, buffer, rng)

    final = evaluate(agent, _eval_env(config.env, seed), config.eval_steps)
    result = {
        "mode": "single",
        "env": config.env,
        "label": config.optimizer.value,
        "seed": seed,
        "final_return": final,
        "train_steps": steps,
        "lr_actor": lr_actor,
        "lr_critic": lr_critic,
        "batch_size": config.batch_size,
        "damping": damping,
        "cholesky_failures": agent.cholesky_failures,
    }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "records.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["env_step", "episode", "episode_return"])
            for idx, (step, ret) in enumerate(episodes):
                writer.writerow([step, idx, repr(ret)])
        if episodes:
            figures.render_episode_curve(
                [e[0] for e in episodes],
                [e[1] for e in episodes],
                out_dir / "curves.png",
                title=f"{config.env} / {config.optimizer.value} / seed {seed}",
            )
        (out_dir / "result.json").write_text(json.dumps(result, indent=2), encoding="utf-8")
    return result


_PBT_COLUMNS = [
    "interval",
    "member",
    "kind",
    "fitness",
    "lr_actor",
    "lr_critic",
    "batch_size",
    "damping",
    "grad_steps",
    "cholesky_failures",
    "events",
]


def _pbt_row_to_csv(row: IntervalRow) -> list:
    events = ";".join(f"{e.src}>{e.dst}:{e.mode.value}" for e in row.events)
    return [
        row.interval,
        row.member,
        row.kind.value,
        repr(row.fitness),
        repr(row.hyper.lr_actor),
        repr(row.hyper.lr_critic),
        row.hyper.batch_size,
        "" if row.hyper.damping is None else repr(row.hyper.damping),
        row.grad_steps,
        row.cholesky_failures,
        events,
    ]


def population_config(config: ExperimentConfig, seed: int, size: int | None = None,
                      composition=None) -> PopulationConfig:
    return PopulationConfig(
        env_name=config.env,
        size=size if size is not None else config.population_size,
        composition=composition if composition is not None else config.resolved_composition(),
        perturbation_interval=config.perturbation_interval,
        intervals=config.intervals,
        exploit_fraction=config.exploit_fraction,
        step_adjusted=config.step_adjusted,
        seed=seed,
        warmup_steps=config.warmup_steps,
        hidden=config.hidden,
        buffer_capacity=config.buffer_capacity,
        batch_bounds=(config.batch_min, config.batch_max),
        bands=config.bands(),
        kfac_decay=config.kfac_decay,
        checkpoint_retention=config.checkpoint_retention,
    )


def run_pbt_seed(config: ExperimentConfig, seed: int, out_dir: Path,
                 size: int | None = None, composition=None) -> dict:
    """One full PBT run: incremental records.csv, checkpoints, member evals.

    The per-seed population score is the best member's evaluation return.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    pop_config = population_config(config, seed, size=size, composition=composition)
    label = composition_label(pop_config.composition)

    records_path = out_dir / "records.csv"
    with open(records_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_PBT_COLUMNS)
        fh.flush()

        def flush_rows(rows: list[IntervalRow]) -> None:
            for row in rows:
                writer.writerow(_pbt_row_to_csv(row))
            fh.flush()

        result = run_pbt(pop_config, out_dir=out_dir, on_interval=flush_rows)

    member_returns = []
    for member in result.members:
        eval_env = _eval_env(config.env, seed + member.id)
        member_returns.append(evaluate(member.agent, eval_env, config.eval_steps))

    series = {
        m.id: (
            m.agent.kind.value,
            [row.fitness for row in result.rows if row.member == m.id],
        )
        for m in result.members
    }
    figures.render_pbt_curves(
        series, out_dir / "curves.png", title=f"{config.env} / {label} / seed {seed}"
    )

    cross = sum(1 for t in result.transfers if t.mode.value == "cross")
    record = {
        "mode": "pbt",
        "env": config.env,
        "label": label,
        "seed": seed,
        "final_return": max(member_returns),
        "member_returns": member_returns,
        "best_member": int(np.argmax(member_returns)),
        "transfers": len(result.transfers),
        "cross_transfers": cross,
        "cholesky_failures": sum(m.agent.cholesky_failures for m in result.members),
    }
    (out_dir / "result.json").write_text(json.dumps(record, indent=2), encoding="utf-8")
    return record


def run_grid(config: ExperimentConfig, out_root: Path) -> list[dict]:
    """Grid search over (learning rate, damping) cells for one optimizer.

    K-FAC cells with damping below the floor fail validation and are recorded
    FAILED without aborting the remaining cells.  Best cell is the highest
    mean return; ties go to the smaller learning rate, then smaller damping.
    """
    out_root.mkdir(parents=True, exist_ok=True)
    kind = config.optimizer
    dampings: tuple[float | None, ...]
    if kind is OptimizerKind.ADAM:
        dampings = (None,)
    else:
        dampings = config.grid_damping
    rows = []
    for lr in config.grid_lr:
        for damping in dampings:
            cell = {
                "lr": lr,
                "damping": damping,
                "status": "ok",
                "n_seeds": 0,
                "mean_return": math.nan,
                "std_return": math.nan,
            }
            try:
                HyperparamSet(lr, lr, config.batch_size, damping).validate(
                    kind, (config.batch_min, config.batch_max)
                )
            except ValueError:
                cell["status"] = "failed"
                rows.append(cell)
                continue
            returns = []
            for seed in config.seeds:
                result = train_single_agent(config, seed, None, lr=lr, damping=damping)
                returns.append(result["final_return"])
            cell["n_seeds"] = len(returns)
            cell["mean_return"] = float(np.mean(returns))
            cell["std_return"] = float(np.std(returns, ddof=1)) if len(returns) > 1 else 0.0
            rows.append(cell)

    with open(out_root / "grid.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lr", "damping", "status", "n_seeds", "mean_return", "std_return"])
        for cell in rows:
            writer.writerow(
                [
                    repr(cell["lr"]),
                    "" if cell["damping"] is None else repr(cell["damping"]),
                    cell["status"],
                    cell["n_seeds"],
                    "" if math.isnan(cell["mean_return"]) else repr(cell["mean_return"]),
                    "" if math.isnan(cell["std_return"]) else repr(cell["std_return"]),
                ]
            )

    lrs = list(config.grid_lr)
    damps = [0.0 if d is None else d for d in dampings]
    means = np.full((len(lrs), len(damps)), np.nan)
    statuses = np.zeros((len(lrs), len(damps)), dtype=bool)
    for cell in rows:
        i = lrs.index(cell["lr"])
        j = damps.index(0.0 if cell["damping"] is None else cell["damping"])
        means[i, j] = cell["mean_return"]
        statuses[i, j] = cell["status"] == "ok"
    figures.render_grid_heatmap(
        lrs, damps, means, statuses, out_root / "grid.png",
        title=f"{config.env} / {kind.value} grid",
    )

    ok_cells = [c for c in rows if c["status"] == "ok"]
    if ok_cells:
        best = max(
            ok_cells,
            key=lambda c: (
                c["mean_return"],
                -c["lr"],
                -(c["damping"] if c["damping"] is not None else 0.0),
            ),
        )
        (out_root / "best_cell.json").write_text(json.dumps(best, indent=2), encoding="utf-8")
        print(
            f"best cell: lr={best['lr']:g} damping="
            f"{'-' if best['damping'] is None else best['damping']} "
            f"mean={best['mean_return']:.1f}"
        )
    return rows


def _sample_std(values: list[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def summarize_dirs(
    run_dirs: list[Path], baseline: str = "", out_dir: Path | None = None
) -> list[dict]:
    """Aggregate result.json records into a per-(env, label) summary table.

    Writes summary.csv (full precision) plus a bar figure, and prints the
    paper-style rounded table.  ``baseline`` names the label whose mean the
    percent-delta column compares against within each environment.
    """
    records = []
    for run_dir in run_dirs:
        for path in sorted(Path(run_dir).rglob("result.json")):
            records.append(json.loads(path.read_text(encoding="utf-8")))
    if not records:
        raise ValueError(f"no result.json files under {run_dirs}")

    groups: dict[tuple[str, str], list[float]] = {}
    for record in records:
        key = (record["env"], record["label"])
        groups.setdefault(key, []).append(float(record["final_return"]))

    baselines = {
        env: float(np.mean(vals))
        for (env, label), vals in groups.items()
        if baseline and label == baseline
    }

    rows = []
    for (env, label), values in sorted(groups.items()):
        mean = float(np.mean(values))
        std = _sample_std(values)
        if len(values) == 1:
            print(f"warning: single seed for ({env}, {label}); std reported as 0")
        delta = ""
        if env in baselines and label != baseline:
            base = baselines[env]
            delta = 100.0 * (mean - base) / abs(base)
        rows.append(
            {
                "env": env,
                "label": label,
                "n_seeds": len(values),
                "mean_return": mean,
                "std_return": std,
                "delta_pct": delta,
            }
        )

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        delta_col = f"delta_pct_vs_{baseline}" if baseline else "delta_pct"
        with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["env", "label", "n_seeds", "mean_return", "std_return", delta_col])
            for row in rows:
                writer.writerow(
                    [
                        row["env"],
                        row["label"],
                        row["n_seeds"],
                        repr(row["mean_return"]),
                        repr(row["std_return"]),
                        "" if row["delta_pct"] == "" else repr(row["delta_pct"]),
                    ]
                )
        figures.render_summary_bars(
            [f"{r['env']}\n{r['label']}" for r in rows],
            [r["mean_return"] for r in rows],
            [r["std_return"] for r in rows],
            out_dir / "summary.png",
        )

    header = f"{'env':<12} {'group':<24} {'n':>3} {'mean +/- std':>18} {'delta%':>7}"
    print(header)
    print("-" * len(header))
    for row in rows:
        delta = "" if row["delta_pct"] == "" else f"{round(row['delta_pct']):+d}"
        mean_std = f"{round(row['mean_return'])} +/- {round(row['std_return'])}"
        print(
            f"{row['env']:<12} {row['label']:<24} {row['n_seeds']:>3} "
            f"{mean_std:>18} {delta:>7}"
        )
    return rows


def run_experiment(config: ExperimentConfig) -> Path:
    """Execute the configured mode over all seeds; returns the output root."""
    out_root = Path(config.out)
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "config.txt").write_text(serialize_config(config), encoding="utf-8")

    if config.mode == "single":
        for seed in config.seeds:
            train_single_agent(config, seed, out_root / f"seed_{seed}")
        summarize_dirs([out_root], baseline=config.baseline, out_dir=out_root)
    elif config.mode == "pbt":
        for seed in config.seeds:
            run_pbt_seed(config, seed, out_root / f"seed_{seed}")
        summarize_dirs([out_root], baseline=config.baseline, out_dir=out_root)
    elif config.mode == "sweep":
        for size in config.sweep_sizes:
            for seed in config.seeds:
                run_pbt_seed(
                    config,
                    seed,
                    out_root / f"size_{size}" / f"seed_{seed}",
                    size=size,
                    composition={OptimizerKind.ADAM: size},
                )
        summarize_dirs([out_root], baseline=config.baseline, out_dir=out_root)
    elif config.mode == "grid":
        run_grid(config, out_root)
    else:
        raise ValueError(f"unknown mode {config.mode!r}")
    return out_root

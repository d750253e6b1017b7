"""Figure rendering for run reports. Always file-based (Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KIND_COLORS = {"adam": "tab:blue", "diag_ggn": "tab:orange", "kfac": "tab:green"}


def render_episode_curve(steps, returns, path: str | Path, title: str = "") -> Path:
    """Training-episode returns against environment steps, with a running mean."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = np.asarray(steps)
    returns = np.asarray(returns, dtype=float)
    ax.plot(steps, returns, lw=0.6, alpha=0.4, color="gray", label="episode")
    if len(returns) >= 5:
        window = max(5, len(returns) // 50)
        kernel = np.ones(window) / window
        smooth = np.convolve(returns, kernel, mode="valid")
        ax.plot(steps[window - 1 :], smooth, lw=1.8, color="tab:blue", label="running mean")
    ax.set_xlabel("environment steps")
    ax.set_ylabel("episode return")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_pbt_curves(
    series: dict[int, tuple[str, list[float]]], path: str | Path, title: str = ""
) -> Path:
    """Per-member fitness trajectories over intervals, colored by optimizer kind."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    seen_kinds = set()
    for member_id, (kind, fitnesses) in sorted(series.items()):
        xs = np.arange(len(fitnesses))
        ys = np.array([f if np.isfinite(f) else np.nan for f in fitnesses])
        label = kind if kind not in seen_kinds else None
        seen_kinds.add(kind)
        ax.plot(xs, ys, lw=1.0, color=KIND_COLORS.get(kind, "black"), alpha=0.8, label=label)
    ax.set_xlabel("interval")
    ax.set_ylabel("interval fitness (mean episode return)")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_grid_heatmap(
    lrs: list[float],
    dampings: list[float],
    means: np.ndarray,
    statuses: np.ndarray,
    path: str | Path,
    title: str = "",
) -> Path:
    """Mean-reward heatmap over the (learning rate, damping) grid.

    Failed cells (validation rejections) are hatched and annotated FAILED.
    """
    path = Path(path)
    means = np.asarray(means, dtype=float)
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(dampings), 1.0 + 0.8 * len(lrs)))
    masked = np.ma.masked_invalid(means)
    im = ax.imshow(masked, aspect="auto", cmap="viridis")
    for i in range(len(lrs)):
        for j in range(len(dampings)):
            if statuses[i, j]:
                ax.text(
                    j, i, f"{means[i, j]:.0f}", ha="center", va="center", fontsize=8,
                    color="white",
                )
            else:
                ax.text(j, i, "FAILED", ha="center", va="center", fontsize=7, color="red")
    ax.set_xticks(range(len(dampings)), [f"{d:g}" for d in dampings])
    ax.set_yticks(range(len(lrs)), [f"{lr:g}" for lr in lrs])
    ax.set_xlabel("damping")
    ax.set_ylabel("learning rate")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label="mean reward")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_summary_bars(
    labels: list[str], means: list[float], stds: list[float], path: str | Path,
    title: str = "",
) -> Path:
    """Mean final return per group with sample-standard-deviation error bars."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(labels)), 4))
    xs = np.arange(len(labels))
    ax.bar(xs, means, yerr=stds, capsize=4, color="tab:blue", alpha=0.85)
    ax.set_xticks(xs, labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("final evaluation return")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path

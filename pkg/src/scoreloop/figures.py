"""Figure rendering for the report path: every figure lands next to the CSV
it visualises.  All rendering uses the Agg backend; nothing here opens a
window."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_regime_map",
    "save_gap_map",
    "save_epoch_trace",
    "save_cobweb",
    "save_metric_bars",
    "save_control_trace",
    "save_reward_trace",
]

_CLASS_COLORS = {
    "converged": "#2a7fff",
    "oscillating": "#e8000b",
    "undetermined": "#bfbfbf",
    "converged-to-eq": "#2a7fff",
    "chaotic-or-nonconverged": "#e8000b",
}


def _grid_from_rows(rows, value_key):
    xs = sorted({row["x_s"] for row in rows})
    xa = sorted({row["x_a"] for row in rows})
    index = {(row["x_s"], row["x_a"]): row[value_key] for row in rows}
    grid = np.array([[index[(s, a)] for a in xa] for s in xs])
    return np.asarray(xs), np.asarray(xa), grid


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def save_regime_map(rows, path, title="recursion regime map"):
    """Categorical heatmap of per-cell classifications over (x_s, x_a)."""
    xs, xa, grid = _grid_from_rows(rows, "classification")
    classes = sorted({c for row in grid for c in row})
    coded = np.array([[classes.index(c) for c in row] for row in grid])
    colors = [_CLASS_COLORS.get(c, "#555555") for c in classes]
    fig, ax = plt.subplots(figsize=(6, 5))
    ax.imshow(
        coded.T, origin="lower", aspect="auto",
        extent=(xs[0], xs[-1], xa[0], xa[-1]),
        cmap=matplotlib.colors.ListedColormap(colors),
        vmin=-0.5, vmax=len(classes) - 0.5,
        interpolation="nearest",
    )
    handles = [plt.Rectangle((0, 0), 1, 1, color=c) for c in colors]
    ax.legend(handles, classes, loc="upper right", fontsize=8, framealpha=0.9)
    ax.set_xlabel("x_s")
    ax.set_ylabel("x_a")
    ax.set_title(title)
    return _save(fig, path)


def save_gap_map(rows, path, value_key="gap_to_eq", title="gap to equivocal score"):
    """Diverging heatmap of a signed per-cell quantity."""
    xs, xa, grid = _grid_from_rows(rows, value_key)
    grid = grid.astype(float)
    limit = max(np.abs(grid).max(), 1e-12)
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(
        grid.T, origin="lower", aspect="auto",
        extent=(xs[0], xs[-1], xa[0], xa[-1]),
        cmap="RdBu_r", vmin=-limit, vmax=limit,
        interpolation="nearest",
    )
    fig.colorbar(im, ax=ax, label=value_key)
    ax.set_xlabel("x_s")
    ax.set_ylabel("x_a")
    ax.set_title(title)
    return _save(fig, path)


def save_epoch_trace(values, path, ylabel="value", title="epoch trace"):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(len(values)), values, marker="o", ms=3, lw=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def save_cobweb(hmap, trace, path, title="update-map cobweb"):
    """The update map, the diagonal, and the staircase of one recursion."""
    z = np.linspace(0.0, 1.0, 401)
    h = np.array([hmap(v) for v in z])
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(z, h, lw=1.5, label="h(z)")
    ax.plot(z, z, lw=1.0, ls="--", color="grey", label="z")
    px, py = [trace[0]], [trace[0]]
    for a, b in zip(trace, trace[1:]):
        px += [a, b]
        py += [b, b]
    ax.plot(px, py, lw=0.8, color="#e8000b", alpha=0.8)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("score")
    ax.set_ylabel("next score")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def save_metric_bars(labels, values, targets, path, title="metric estimates vs targets"):
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(x - 0.2, values, width=0.4, label="computed")
    ax.bar(x + 0.2, targets, width=0.4, label="target", alpha=0.7)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("metric")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def save_control_trace(records, path, title="controlled interventions"):
    epochs = [r.epoch for r in records]
    fig, axes = plt.subplots(3, 1, figsize=(6, 7), sharex=True)
    axes[0].plot(epochs, [float(r.theta[0]) for r in records], marker="o", ms=3)
    axes[0].set_ylabel("theta")
    axes[1].plot(epochs, [r.cost for r in records], marker="o", ms=3)
    axes[1].set_ylabel("cost")
    axes[2].plot(epochs, [r.mean_outcome for r in records], marker="o", ms=3)
    axes[2].set_ylabel("event rate")
    axes[2].set_xlabel("epoch")
    axes[0].set_title(title)
    for ax in axes:
        ax.grid(alpha=0.3)
    return _save(fig, path)


def save_reward_trace(rewards, path, title="rollout rewards"):
    return save_epoch_trace(rewards, path, ylabel="reward (event rate)", title=title)

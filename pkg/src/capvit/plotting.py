"""Figure rendering for the report paths; every figure lands next to its CSV."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def save_loss_curve(rows, path) -> Path:
    """Loss and learning rate over steps, stage boundaries marked."""
    path = Path(path)
    steps = [r.step for r in rows]
    losses = [r.loss for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, lw=1.0, color="tab:blue", label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    boundaries = [rows[i].step for i in range(1, len(rows)) if rows[i].stage != rows[i - 1].stage]
    for b in boundaries:
        ax.axvline(b, color="gray", ls="--", lw=0.8)
    ax2 = ax.twinx()
    ax2.plot(steps, [r.lr for r in rows], lw=0.8, color="tab:orange", label="lr")
    ax2.set_ylabel("learning rate")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_sweep_figure(rows: list[dict], path) -> Path:
    """Final loss / exact match / probe accuracy as functions of keep ratio."""
    path = Path(path)
    ratios = [r["keep_ratio"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    panels = [("final_loss", "final loss"), ("exact_match", "exact match"), ("probe_acc", "probe accuracy")]
    for ax, (key, label) in zip(axes, panels):
        ax.plot(ratios, [r[key] for r in rows], marker="o", lw=1.2)
        ax.set_xlabel("keep ratio")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_cost_figure(report_rows: list[dict], path) -> Path:
    """Grouped bars: training GFLOPs per image and per-device memory."""
    path = Path(path)
    labels = [f"{r['name']}\n{r['pipeline']}" for r in report_rows]
    x = range(len(report_rows))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.bar(x, [r["train_gflops_per_image"] for r in report_rows], color="tab:blue")
    ax1.set_xticks(list(x), labels, fontsize=8)
    ax1.set_ylabel("train GFLOPs / image")
    ax2.bar(x, [r["memory_gb_per_device"] for r in report_rows], color="tab:orange")
    ax2.set_xticks(list(x), labels, fontsize=8)
    ax2.set_ylabel("memory GB / device")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

"""Matplotlib figures rendered next to the delimited report files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import ScoreReport


def save_bucket_figure(reports: list[ScoreReport], path: str, title: str = "") -> None:
    """Bar chart of E-F1 per token-length bucket (shortest sequences first)."""
    fig, ax = plt.subplots(figsize=(7, 4))
    xs = list(range(1, len(reports) + 1))
    ax.bar(xs, [r.f1 for r in reports], color="#4878cf")
    ax.set_xticks(xs)
    ax.set_xlabel("token-length bucket (short to long)")
    ax.set_ylabel("E-F1")
    ax.set_ylim(0.0, 1.05)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_curves(history: list[dict], path: str, title: str = "") -> None:
    """Per-epoch line plot of every numeric series found in the history rows."""
    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = [row.get("epoch", i + 1) for i, row in enumerate(history)]
    keys = [k for k in history[0] if k != "epoch"] if history else []
    for key in keys:
        ax.plot(epochs, [row[key] for row in history], marker="o", label=key)
    ax.set_xlabel("epoch")
    if keys:
        ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_class_figure(report: ScoreReport, path: str, title: str = "") -> None:
    """Horizontal per-class F1 bars for an evaluation report."""
    names = list(report.per_class)
    fig, ax = plt.subplots(figsize=(7, max(2.0, 0.5 * len(names) + 1)))
    ax.barh(names, [report.per_class[n].f1 for n in names], color="#6acc64")
    ax.set_xlabel("F1")
    ax.set_xlim(0.0, 1.05)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

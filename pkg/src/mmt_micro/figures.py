"""Matplotlib renderings for the report path.

Every report emitted by the CLI is accompanied by figure files rendered
next to the delimited output: a mean/std bar chart per system and, when
per-epoch metrics are available, training curves.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .metrics import EvalReport  # noqa: E402

BAR_COLOR = "#4878a8"
SEED_COLOR = "#30303080"


def save_score_bars(report: EvalReport, path: str | Path, metric: str = "BLEU") -> Path:
    """One bar per system with a +/- std whisker and per-seed dots."""
    path = Path(path)
    names = [s.name for s in report.systems]
    means = [s.mean for s in report.systems]
    stds = [s.std for s in report.systems]

    fig, ax = plt.subplots(figsize=(1.8 + 1.3 * len(names), 3.2))
    xs = range(len(names))
    ax.bar(xs, means, yerr=stds, capsize=4, color=BAR_COLOR, width=0.6, zorder=2)
    for x, system in zip(xs, report.systems):
        ax.scatter([x] * len(system.scores), system.scores, s=12, color=SEED_COLOR, zorder=3)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names)
    ax.set_ylabel(metric)
    ax.grid(axis="y", alpha=0.3, zorder=0)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_training_curves(metrics_by_run: dict[str, list[dict]], path: str | Path) -> Path:
    """Loss and dev score vs. epoch, one line per run.

    ``metrics_by_run`` maps a label to parsed metrics rows (dicts with
    ``epoch``, ``loss``, ``dev_bleu``).
    """
    path = Path(path)
    fig, (ax_loss, ax_bleu) = plt.subplots(1, 2, figsize=(8.0, 3.2), sharex=True)
    for label, rows in metrics_by_run.items():
        epochs = [r["epoch"] for r in rows]
        ax_loss.plot(epochs, [r["loss"] for r in rows], label=label, linewidth=1.2)
        ax_bleu.plot(epochs, [r["dev_bleu"] for r in rows], label=label, linewidth=1.2)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_bleu.set_xlabel("epoch")
    ax_bleu.set_ylabel("dev BLEU")
    for ax in (ax_loss, ax_bleu):
        ax.grid(alpha=0.3)
    if metrics_by_run:
        ax_bleu.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path

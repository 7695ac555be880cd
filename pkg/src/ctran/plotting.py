"""Figures and delimited tables written next to training reports."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def write_csv(rows: Sequence[Mapping], path) -> Path:
    path = Path(path)
    if not rows:
        path.write_text("")
        return path
    fields = list(rows[0].keys())
    for r in rows[1:]:
        fields += [k for k in r if k not in fields]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    return path


def plot_history(history: Sequence[Mapping], path, title: str = "") -> Path:
    """Training losses and dev metrics per epoch."""
    epochs = [h["epoch"] for h in history]
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_dev) = plt.subplots(1, 2, figsize=(9, 3.4))
        for key, label in (("loss_total", "total"), ("loss_intent", "intent"),
                           ("loss_slot", "slot")):
            ax_loss.plot(epochs, [h[key] for h in history], label=label)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("train loss")
        ax_loss.set_yscale("log")
        ax_loss.legend()
        ax_dev.plot(epochs, [h["dev_slot_f1"] for h in history], label="slot F1")
        ax_dev.plot(epochs, [h["dev_intent_accuracy"] for h in history], label="intent acc")
        ax_dev.set_xlabel("epoch")
        ax_dev.set_ylabel("dev")
        ax_dev.set_ylim(0, 1.02)
        ax_dev.legend(loc="lower right")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_ablation(rows: Sequence[Mapping], path, title: str = "") -> Path:
    """Grouped bars of median test slot F1 and intent accuracy per variant."""
    names = [r["variant"] for r in rows]
    x = range(len(rows))
    width = 0.38
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(rows) + 2), 3.6))
        f1 = ax.bar([i - width / 2 for i in x], [r["slot_f1"] for r in rows], width,
                    label="slot F1")
        acc = ax.bar([i + width / 2 for i in x], [r["intent_accuracy"] for r in rows], width,
                     label="intent acc")
        ax.bar_label(f1, fmt="%.3f", fontsize=7)
        ax.bar_label(acc, fmt="%.3f", fontsize=7)
        ax.set_xticks(list(x), names, rotation=20 if len(rows) > 3 else 0)
        ax.set_ylim(0, 1.1)
        ax.legend(loc="lower right")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_mask(mask, path, title: str = "") -> Path:
    import numpy as np

    m = np.isfinite(np.asarray(mask)).astype(float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 3.2))
        ax.imshow(m, cmap="Greys", vmin=0, vmax=1)
        ax.set_xlabel("key position")
        ax.set_ylabel("query position")
        ax.grid(False)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)

"""Figures written to files: training curves, metric bars and swap comparisons."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_history(history: list[dict], path) -> Path:
    """Loss curves per epoch; validation accuracy on a second axis when present."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.4))
        epochs = [r["epoch"] for r in history]
        keys = [k for k in history[0] if k.endswith("loss") or k in ("stc", "stm", "vtc", "vtm", "mlm", "gen")]
        for key in dict.fromkeys(keys):
            if key == "gen" and "train_loss" in history[0]:
                continue
            ax.plot(epochs, [r.get(key, float("nan")) for r in history], marker="o", ms=3, label=key)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_title(f"stage {history[0]['stage']}")
        if "val_acc" in history[0]:
            ax2 = ax.twinx()
            ax2.plot(epochs, [r["val_acc"] for r in history], color="k", ls="--", label="val_acc")
            ax2.set_ylabel("token accuracy")
            ax2.set_ylim(0, 1.02)
            ax2.grid(False)
            ax2.legend(loc="center right", fontsize=7)
        ax.legend(fontsize=7, ncol=2)
        return _save(fig, path)


def plot_metrics(metrics: dict[str, float], path, title: str = "") -> Path:
    """Bar chart of a metric report; CIDEr is drawn on its own 0-10 scale."""
    with plt.rc_context(STYLE):
        unit = {k: v for k, v in metrics.items() if k not in ("C", "mean_rank")}
        fig, axes = plt.subplots(1, 2 if "C" in metrics else 1, figsize=(6, 3),
                                 gridspec_kw={"width_ratios": [5, 1]} if "C" in metrics else None)
        ax = axes[0] if "C" in metrics else axes
        ax.bar(list(unit), list(unit.values()), color="#4c72b0")
        ax.set_ylim(0, 1.05)
        ax.set_title(title)
        if "C" in metrics:
            axes[1].bar(["C"], [metrics["C"]], color="#dd8452")
            axes[1].set_ylim(0, 10.5)
        return _save(fig, path)


def plot_swaps(rows: dict[str, dict[str, float]], path, metric_keys=("B-1", "M", "R")) -> Path:
    """Grouped bars of NLG scores per routing (identity first)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.5, 3.2))
        names = list(rows)
        width = 0.8 / len(metric_keys)
        for i, key in enumerate(metric_keys):
            xs = [j + i * width for j in range(len(names))]
            ax.bar(xs, [rows[n][key] for n in names], width=width, label=key)
        ax.set_xticks([j + width * (len(metric_keys) - 1) / 2 for j in range(len(names))])
        ax.set_xticklabels(names, rotation=15, fontsize=7)
        ax.set_ylim(0, 1.05)
        ax.legend(fontsize=7)
        ax.set_title("expert swaps")
        return _save(fig, path)

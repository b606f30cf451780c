"""Figure rendering for evaluation reports (Agg backend, file output only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_confusion_heatmap(matrix: np.ndarray, path: str | Path,
                           pivot: str, target: str) -> None:
    """Row-normalized confusion heatmap: pivot argmax topic on the y axis,
    target-language argmax topic on the x axis."""
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(matrix, cmap="viridis", vmin=0.0, vmax=1.0,
                   interpolation="nearest", aspect="auto")
    ax.set_xlabel(f"{target} topic")
    ax.set_ylabel(f"{pivot} topic")
    ax.set_title(f"Topic assignments: {pivot} vs {target}")
    fig.colorbar(im, ax=ax, label="row-normalized frequency")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_topic_count_bars(counts: np.ndarray, path: str | Path,
                          title: str = "Most probable topic counts") -> None:
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.bar(np.arange(len(counts)), counts, width=0.9)
    ax.set_xlabel("topic")
    ax.set_ylabel("documents")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_curve(table: dict[int, float], path: str | Path) -> None:
    """NPMI coherence as a function of the LDA topic count."""
    taus = sorted(table)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(taus, [table[t] for t in taus], marker="o")
    ax.set_xlabel("topic count")
    ax.set_ylabel("NPMI coherence")
    ax.set_title("Topic-count search")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

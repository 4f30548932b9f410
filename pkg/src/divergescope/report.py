"""Figure rendering for the report path: score distributions, threshold
sweeps, and training curves are written next to the delimited outputs.
"""

from __future__ import annotations

import math
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .corpus import Label
from .evaluation import predict_with_threshold, prf_report


def render_score_histogram(
    scores: Sequence[float], labels: Sequence[Label], path, title: str = "score distribution"
) -> None:
    eq_scores = [s for s, l in zip(scores, labels) if l is Label.EQUIVALENT]
    dv_scores = [s for s, l in zip(scores, labels) if l is Label.DIVERGENT]
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = 30
    ax.hist(eq_scores, bins=bins, alpha=0.6, label="equivalent", color="tab:blue")
    ax.hist(dv_scores, bins=bins, alpha=0.6, label="divergent", color="tab:red")
    ax.set_xlabel("divergence score (higher = less divergent)")
    ax.set_ylabel("pairs")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_threshold_curve(
    scores: Sequence[float],
    labels: Sequence[Label],
    chosen: float,
    path,
    average: str = "weighted",
    title: str = "threshold sweep",
) -> None:
    distinct = sorted(set(scores))
    candidates = [(a + b) / 2.0 for a, b in zip(distinct, distinct[1:])]
    if not candidates:
        candidates = distinct or [0.0]
    f_values = [
        prf_report(predict_with_threshold(scores, t), labels, average).overall_f
        for t in candidates
    ]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(candidates, f_values, color="tab:blue")
    if math.isfinite(chosen):
        ax.axvline(chosen, color="tab:red", linestyle="--", label=f"chosen = {chosen:.4f}")
        ax.legend()
    ax.set_xlabel("threshold")
    ax.set_ylabel(f"overall F ({average})")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_training_curve(history: Sequence[dict], path, title: str = "training") -> None:
    epochs = [h["epoch"] for h in history]
    losses = [h["loss"] for h in history]
    pearsons = [h["pearson"] for h in history]
    fig, ax_loss = plt.subplots(figsize=(6, 4))
    ax_loss.plot(epochs, losses, color="tab:blue", label="mean KL loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("mean KL loss", color="tab:blue")
    ax_pearson = ax_loss.twinx()
    ax_pearson.plot(epochs, pearsons, color="tab:green", label="validation Pearson")
    ax_pearson.set_ylabel("validation Pearson", color="tab:green")
    ax_loss.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)

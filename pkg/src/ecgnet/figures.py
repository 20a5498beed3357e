"""Figure rendering for reports: loss curves, metric bars, model comparison.

Everything draws through the Agg backend and writes PNG files, so the
report path works headless and produces the same bytes for the same inputs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curves(histories: dict, path) -> None:
    """Training-loss curves, one line per (model, seed)."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, runs in sorted(histories.items()):
        for si, curve in enumerate(runs):
            if not curve:
                continue
            label = name if len(runs) == 1 else f"{name} (seed {si})"
            ax.plot(np.arange(1, len(curve) + 1), curve, label=label, alpha=0.85)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    if ax.lines:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metrics_bars(table_dict: dict, path, title: str = "") -> None:
    """Grouped precision/recall/F1 bars per class from a metrics table dict."""
    classes = list(table_dict)
    x = np.arange(len(classes))
    width = 0.27
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(classes) + 2), 4.5))
    for offset, key in zip((-width, 0.0, width), ("precision", "recall", "f1")):
        vals = [table_dict[c][key] for c in classes]
        ax.bar(x + offset, vals, width, label=key)
    ax.set_xticks(x)
    ax.set_xticklabels(classes, rotation=45, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_comparison_chart(report, path) -> None:
    """Mean F1 per class and model with min-max whiskers across seeds."""
    classes = report.classes
    models = report.model_names
    x = np.arange(len(classes))
    width = 0.8 / max(len(models), 1)
    fig, ax = plt.subplots(figsize=(max(7, 1.1 * len(classes) + 2), 5))
    for mi, model in enumerate(models):
        xs, means, lo, hi = [], [], [], []
        for ci, cls in enumerate(classes):
            mean = report.mean_f1(model, cls)
            if mean is None:
                continue
            rng = report.f1_range(model, cls)
            xs.append(x[ci] + (mi - (len(models) - 1) / 2) * width)
            means.append(mean)
            lo.append(mean - rng[0])
            hi.append(rng[1] - mean)
        if not xs:
            continue
        ax.bar(xs, means, width * 0.95, label=model,
               yerr=np.vstack([lo, hi]) if any(lo) or any(hi) else None,
               capsize=2, error_kw={"alpha": 0.6})
    ax.set_xticks(x)
    ax.set_xticklabels(classes, rotation=45, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("held-out F1")
    ax.set_title(f"per-class F1: {report.name}")
    ax.legend(fontsize=8)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_record_strip(voltages: np.ndarray, path, title: str = "",
                      sample_rate: int = 250) -> None:
    """Stacked 12-lead strip of one record, for visual inspection."""
    n_leads, length = voltages.shape
    times = np.arange(length) / sample_rate
    offsets = np.arange(n_leads)[::-1] * 2.2
    fig, ax = plt.subplots(figsize=(11, 8))
    for i in range(n_leads):
        ax.plot(times, voltages[i] + offsets[i], lw=0.6, color="navy")
    ax.set_yticks(offsets)
    ax.set_yticklabels(["I", "II", "III", "aVR", "aVL", "aVF",
                        "V1", "V2", "V3", "V4", "V5", "V6"][:n_leads])
    ax.set_xlabel("seconds")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.25)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

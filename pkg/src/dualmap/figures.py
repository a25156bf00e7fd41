"""Matplotlib renderings written next to the data exports.

These figures are a convenience view of the JSON/CSV outputs, not a contract:
the delimited exports remain the authoritative artifacts.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvalReport


def plot_loss_trace(trace: list[dict], path: str | Path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = [rec["step"] for rec in trace]
    for key, label in [("total", "total"), ("iou", "iou (agnostic)"),
                       ("mm", "mutual matching"), ("conditioned", "iou (conditioned)")]:
        ax.plot(steps, [rec[key] for rec in trace], label=label, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False, fontsize=8)
    ax.set_title("training loss trace")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_recall_report(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / len(report.ns)
    x = np.arange(len(report.thetas))
    for i, n in enumerate(report.ns):
        vals = [report.value(n, theta) for theta in report.thetas]
        ax.bar(x + i * width, vals, width=width, label=f"R@{n}")
    ax.set_xticks(x + width * (len(report.ns) - 1) / 2)
    ax.set_xticklabels([f"IoU@{theta:g}" for theta in report.thetas])
    ax.set_ylim(0, 1.0)
    ax.set_ylabel("recall")
    ax.legend(frameon=False)
    ax.set_title(f"recall over {report.query_count} queries")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_top1_iou_hist(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(report.top1_iou, bins=np.linspace(0, 1, 21), edgecolor="white")
    ax.set_xlabel("top-1 IoU vs ground truth")
    ax.set_ylabel("queries")
    ax.set_title("top-1 localization quality")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_score_map(export: dict, path: str | Path) -> Path:
    """Heatmaps of the two map scores and their joint product; invalid cells
    are blanked. The ground-truth cell region is outlined on each panel."""
    path = Path(path)
    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    for ax, name, title in zip(axes, ["p_a", "p_c", "joint"],
                               ["query-agnostic", "query-conditioned", "joint"]):
        grid = np.array([[np.nan if v is None else v for v in row] for row in export[name]])
        im = ax.imshow(np.ma.masked_invalid(grid), origin="upper", cmap="viridis",
                       vmin=0.0, interpolation="nearest")
        ax.set_title(title, fontsize=10)
        ax.set_xlabel("end clip")
        ax.set_ylabel("start clip")
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.suptitle(f"{export['query_id']}: {export['sentence'][:60]}", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path

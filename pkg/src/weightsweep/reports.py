"""Report rendering: delimited files plus matplotlib figures.

Every table the pipeline emits gets a figure next to it.  CSV floats are
written with repr (shortest round-trip decimal), which keeps reruns
byte-identical and re-reads exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .ope import FrontierPoint  # noqa: E402


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_json(path: str | Path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


FRONTIER_HEADER = [
    "alpha", "delta_repin_pct", "delta_p2p_pct", "hit_count",
    "stderr_repin", "stderr_p2p", "dominated", "selected_role",
]


def frontier_rows(points: list[FrontierPoint]) -> list[list]:
    return [
        [
            p.alpha, p.delta_repin_pct, p.delta_p2p_pct, p.hit_count,
            p.stderr_repin_pct, p.stderr_p2p_pct, p.dominated, p.selected_role,
        ]
        for p in points
    ]


def write_frontier_csv(path: str | Path, points: list[FrontierPoint]) -> None:
    write_csv(path, FRONTIER_HEADER, frontier_rows(points))


def plot_frontier(path: str | Path, points: list[FrontierPoint], title: str = "Offline trade-off frontier") -> None:
    supported = [p for p in points if p.supported]
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    if supported:
        xs = np.array([p.delta_repin_pct for p in supported])
        ys = np.array([p.delta_p2p_pct for p in supported])
        dom = np.array([p.dominated for p in supported])
        ax.scatter(xs[dom], ys[dom], s=28, c="lightgray", label="dominated")
        front = [p for p in supported if not p.dominated]
        order = np.argsort([p.delta_repin_pct for p in front])
        fx = np.array([front[i].delta_repin_pct for i in order])
        fy = np.array([front[i].delta_p2p_pct for i in order])
        ax.plot(fx, fy, "o-", color="tab:blue", label="frontier")
        for p in supported:
            if p.selected_role:
                ax.annotate(p.selected_role, (p.delta_repin_pct, p.delta_p2p_pct),
                            textcoords="offset points", xytext=(5, 5), fontsize=8)
    ax.axhline(0.0, color="k", lw=0.6, alpha=0.5)
    ax.axvline(0.0, color="k", lw=0.6, alpha=0.5)
    ax.set_xlabel("repin lift vs production (%)")
    ax.set_ylabel("p2p lift vs production (%)")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss_curve(path: str | Path, curve: list[tuple[int, float]]) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    epochs = [c[0] for c in curve]
    losses = [c[1] for c in curve]
    ax.plot(epochs, losses, "o-")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training MSE")
    ax.set_title("Value-model training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bars(path: str | Path, labels: list[str], values: list[float], ylabel: str, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.bar(range(len(labels)), values, color="tab:blue")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_decile_bars(path: str | Path, per_objective: dict[str, list[float]]) -> None:
    fig, axes = plt.subplots(1, len(per_objective), figsize=(10.5, 4.0))
    if len(per_objective) == 1:
        axes = [axes]
    for ax, (name, means) in zip(axes, per_objective.items()):
        ax.bar(range(1, len(means) + 1), means, color="tab:blue")
        ax.set_xlabel("decile")
        ax.set_ylabel(f"mean {name} count")
        ax.set_title(f"{name} engagement by decile")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_contribution_curves(path: str | Path, curves: dict[str, list[tuple[float, float]]]) -> None:
    """curves: label -> [(weight, mean_contribution)]"""
    fig, axes = plt.subplots(1, len(curves), figsize=(10.5, 4.0))
    if len(curves) == 1:
        axes = [axes]
    for ax, (label, pts) in zip(axes, curves.items()):
        ws = [p[0] for p in pts]
        cs = [100.0 * p[1] for p in pts]
        ax.plot(ws, cs, "o-")
        ax.set_xlabel(f"{label} weight")
        ax.set_ylabel("mean utility contribution (%)")
        ax.set_title(f"Contribution vs {label} weight")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_offline_vs_online(
    path: str | Path,
    offline: np.ndarray,
    online: np.ndarray,
    labels: list[str],
    correlations: dict[str, float | None],
) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(10.5, 4.4))
    names = ("repin", "p2p")
    for i, (ax, name) in enumerate(zip(axes, names)):
        ax.scatter(offline[:, i], online[:, i], color="tab:blue")
        for j, lab in enumerate(labels):
            ax.annotate(lab, (offline[j, i], online[j, i]), fontsize=7,
                        textcoords="offset points", xytext=(4, 4))
        lo = min(offline[:, i].min(), online[:, i].min())
        hi = max(offline[:, i].max(), online[:, i].max())
        ax.plot([lo, hi], [lo, hi], "k--", lw=0.7, alpha=0.6)
        r = correlations.get(name)
        ax.set_title(f"{name}: offline vs simulated online (r={r:.3f})" if r is not None else name)
        ax.set_xlabel("offline lift (%)")
        ax.set_ylabel("online lift (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_frontier_overlay(path: str | Path, series: dict[str, list[FrontierPoint]], title: str) -> None:
    fig, ax = plt.subplots(figsize=(6.8, 5.0))
    for label, points in series.items():
        pts = [p for p in points if p.supported and not p.dominated]
        pts.sort(key=lambda p: p.delta_repin_pct)
        if not pts:
            continue
        ax.plot(
            [p.delta_repin_pct for p in pts],
            [p.delta_p2p_pct for p in pts],
            "o-", label=label, alpha=0.85,
        )
    ax.axhline(0.0, color="k", lw=0.6, alpha=0.5)
    ax.axvline(0.0, color="k", lw=0.6, alpha=0.5)
    ax.set_xlabel("repin lift vs production (%)")
    ax.set_ylabel("p2p lift vs production (%)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

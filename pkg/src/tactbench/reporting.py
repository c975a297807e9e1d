"""Delimited report files and the matplotlib figures rendered beside them."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

# Keep rerenders byte-stable: no timestamps or host-dependent metadata.
_SAVEFIG_KW = {"dpi": 120, "metadata": {"Software": "tactbench"}}


def _prepare(path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path: str | Path, payload: dict) -> None:
    with open(_prepare(path), "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def write_results_csv(path: str | Path, records: list[dict]) -> None:
    path = _prepare(path)
    if not records:
        path.write_text("")
        return
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(records[0].keys()))
        writer.writeheader()
        writer.writerows(records)


def write_trial_outcomes(path: str | Path, table) -> None:
    with open(_prepare(path), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["name", "trial", "success"])
        for row in table.rows:
            for i, ok in enumerate(row.outcomes):
                writer.writerow([row.name, i, int(ok)])


def plot_success_bars(path: str | Path, records: list[dict]) -> None:
    names = [r["name"] for r in records]
    rates = [r["success_rate"] for r in records]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(names)), 3.2))
    ax.bar(range(len(names)), rates, color="#4878cf")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1)
    ax.set_ylabel("success rate")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(_prepare(path), **_SAVEFIG_KW)
    plt.close(fig)


def write_points_csv(
    path: str | Path, points: np.ndarray, labels: np.ndarray, label_names: tuple[str, ...]
) -> None:
    with open(_prepare(path), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "group"])
        for (x, y), lab in zip(points, labels):
            writer.writerow([f"{x:.6f}", f"{y:.6f}", label_names[int(lab)]])


def plot_embedding_map(
    path: str | Path, points: np.ndarray, labels: np.ndarray, label_names: tuple[str, ...]
) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    colors = ("#4878cf", "#d1495b", "#3fa34d", "#edae49")
    for lab in np.unique(labels):
        mask = labels == lab
        ax.scatter(
            points[mask, 0],
            points[mask, 1],
            s=8,
            alpha=0.7,
            color=colors[int(lab) % len(colors)],
            label=label_names[int(lab)],
        )
    ax.legend(fontsize=8)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(_prepare(path), **_SAVEFIG_KW)
    plt.close(fig)


def plot_training_curve(path: str | Path, history: list[float], ylabel: str = "loss") -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3))
    ax.plot(history, lw=0.9, color="#4878cf")
    ax.set_xlabel("update")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(_prepare(path), **_SAVEFIG_KW)
    plt.close(fig)

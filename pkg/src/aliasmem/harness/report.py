"""Figures written next to the CSV tables of a run directory."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def loss_curve(history: list[dict], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = [r["step"] for r in history]
    for key in ("loss", "flow", "holo2d", "holo3d"):
        ax.plot(steps, [r[key] for r in history], label=key, linewidth=1)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def metrics_chart(rows: list[dict], path) -> None:
    """Grouped bars of SR, DSR, MSR, kappa and CSR per variant; NA cells are left empty."""
    keys = ("SR", "DSR", "MSR", "kappa", "CSR")
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / max(len(rows), 1)
    for i, row in enumerate(rows):
        vals = [float("nan") if row[k] == "NA" else float(row[k]) for k in keys]
        ax.bar([k + i * width for k in range(len(keys))], vals, width, label=f"{row['task']}/{row['variant']}")
    ax.set_xticks([k + 0.4 - width / 2 for k in range(len(keys))])
    ax.set_xticklabels(keys)
    ax.axhline(0.0, color="black", linewidth=0.5)
    ax.set_ylim(-1.0, 1.0)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)

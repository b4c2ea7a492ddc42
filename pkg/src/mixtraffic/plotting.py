"""Static figures for sweep tables and learning curves (file output only)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

METRIC_LABELS = {
    "W_avg": "average wait (s)",
    "Theta_int": "intersection throughput (veh / 500 s)",
    "Theta_net": "network throughput (veh / 500 s)",
    "D_avg": "average delay (s)",
    "W_max": "max starvation (s)",
    "W_p99": "p99 wait (s)",
    "C_rate": "conflict rate",
    "F_avg": "fuel rate (ml/s)",
}


def plot_sweep(table: dict, out_dir: str | Path, prefix: str = "sweep") -> list[Path]:
    """One errorbar panel per metric against RV penetration rate.

    ``table`` is the output of :func:`mixtraffic.engine.aggregate`.
    """
    out_dir = Path(out_dir)
    rates = sorted(table)
    names = list(METRIC_LABELS)
    fig, axes = plt.subplots(2, 4, figsize=(14, 6), constrained_layout=True)
    for ax, name in zip(axes.ravel(), names):
        xs, ys, es = [], [], []
        for r in rates:
            mean, std, _n = table[r][name]
            if mean is not None:
                xs.append(100 * r)
                ys.append(mean)
                es.append(std)
        ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3)
        ax.set_title(name)
        ax.set_xlabel("RV rate (%)")
        ax.set_ylabel(METRIC_LABELS[name])
        ax.grid(alpha=0.3)
    path = out_dir / f"{prefix}_metrics.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def plot_learning_curve(curve, out_path: str | Path, losses=None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    ax.plot(range(len(curve)), curve, lw=1, label="mean episode return")
    ax.set_xlabel("iteration")
    ax.set_ylabel("return")
    if losses:
        ax2 = ax.twinx()
        ax2.plot(range(len(losses)), losses, lw=0.8, color="tab:orange", alpha=0.6, label="TD loss")
        ax2.set_ylabel("TD loss")
        ax2.set_yscale("log")
    ax.grid(alpha=0.3)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def plot_shortage(series: dict[str, list[tuple]], out_path: str | Path) -> Path:
    """Total predicted shortage over time, one line per label."""
    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    for label, rows in series.items():
        ax.plot([r[0] for r in rows], [r[2] for r in rows], label=label)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("total predicted shortage")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)

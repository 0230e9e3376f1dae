"""Figures for training reports and the eps-sweep diagnostic.  Files only, no display."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "lines.linewidth": 1.5,
    "axes.labelsize": 11,
    "axes.titlesize": 11,
    "font.size": 10,
    "legend.fontsize": 9,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
}


def _figure(width=6.0, ratio=0.62):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, width * ratio))
    return fig, ax


def read_metrics(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["epoch"] = int(r["epoch"])
        for key in ("elbo", "recon", "kl", "wall_seconds"):
            r[key] = float(r[key])
    return rows


def plot_elbo_curves(runs: dict[str, list[dict]], path: str, split: str = "train") -> str:
    """ELBO against epoch, one line per run."""
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        for label, rows in runs.items():
            pts = [(r["epoch"], r["elbo"]) for r in rows if r["split"] == split]
            if pts:
                e, v = zip(*pts)
                ax.plot(e, v, marker="o", ms=3, label=label)
        ax.set_xlabel("epoch")
        ax.set_ylabel(f"{split} ELBO (nats)")
        ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path)
    plt.close(fig)
    return path


def plot_eps_sweep(epsilons, det_gaps, inv_gaps, path: str) -> str:
    """Log-log plot of the first-order gaps with an eps^2 guide."""
    eps = np.asarray(epsilons, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = _figure(5.0, 0.8)
        ax.loglog(eps, det_gaps, "o-", label="|det B - (1 + eps tr UV)|")
        ax.loglog(eps, inv_gaps, "s-", label="max|B^-1 - (I - eps UV)|")
        ref = det_gaps[0] * (eps / eps[0]) ** 2
        ax.loglog(eps, ref, "k--", lw=1, label="slope 2")
        ax.set_xlabel("eps")
        ax.set_ylabel("gap")
        ax.legend(loc="upper left")
        fig.tight_layout()
        fig.savefig(path)
    plt.close(fig)
    return path


def write_summary(runs: dict[str, list[dict]], path: str) -> str:
    """Last-epoch row per (run, split) as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "split", "epoch", "elbo", "recon", "kl"])
        for label, rows in runs.items():
            last = {}
            for r in rows:
                last[r["split"]] = r
            for split, r in last.items():
                w.writerow([label, split, r["epoch"], repr(r["elbo"]), repr(r["recon"]), repr(r["kl"])])
    return path


def render_report(metrics_paths: list[str], labels: list[str] | None, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    labels = labels or [os.path.basename(os.path.dirname(os.path.abspath(p))) for p in metrics_paths]
    runs = {lab: read_metrics(p) for lab, p in zip(labels, metrics_paths)}
    written = [write_summary(runs, os.path.join(out_dir, "summary.csv")),
               plot_elbo_curves(runs, os.path.join(out_dir, "elbo_train.png"), "train")]
    if any(r["split"] == "valid" for rows in runs.values() for r in rows):
        written.append(plot_elbo_curves(runs, os.path.join(out_dir, "elbo_valid.png"), "valid"))
    return written

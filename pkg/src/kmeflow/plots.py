"""Figure rendering for the experiment reports.

Every experiment command writes its figures next to the CSV output; the
``plot`` subcommand re-renders them from the CSV files alone.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .output import read_table

_HIST_KW = dict(bins=40, density=True, alpha=0.55, edgecolor="none")


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_toy(out_dir, case, x0, x1, grid, target_pdf, problem=None) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4), sharex=True)
    lo, hi = np.percentile(np.concatenate([x0, x1]), [0, 100])
    pad = 0.15 * (hi - lo)
    window = (grid >= lo - pad) & (grid <= hi + pad)
    axes[0].hist(x0, color="tab:blue", label="$t=0$ samples", **_HIST_KW)
    if problem is not None:
        axes[0].plot(grid[window], np.atleast_1d(problem.prior.pdf(grid[window].reshape(-1, 1))),
                     "k-", lw=1.2, label="prior pdf")
    axes[0].set_title("prior ensemble")
    axes[1].hist(x1, color="tab:red", label="$t=1$ samples", **_HIST_KW)
    axes[1].plot(grid[window], target_pdf[window], "k-", lw=1.2, label="target pdf")
    axes[1].set_title("transported ensemble")
    for ax in axes:
        ax.set_xlim(lo - pad, hi + pad)
        ax.legend(frameon=False, fontsize=8)
    fig.suptitle(case)
    return _save(fig, Path(out_dir) / f"toy_{case}.png")


def plot_skew(out_dir, rows) -> Path:
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    combos = sorted({(int(r[1]), r[2]) for r in rows})
    for n, kern in combos:
        pts = sorted((int(r[0]), float(r[4]), float(r[5])) for r in rows
                     if int(r[1]) == n and r[2] == kern)
        d = [p[0] for p in pts]
        ax.errorbar(d, [p[1] for p in pts], yerr=[p[2] for p in pts],
                    marker="o", ms=3, capsize=2, label=f"{kern}, N={n}")
    ax.set_xlabel("dimension $d$")
    ax.set_ylabel("$W_2$ (first component)")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, Path(out_dir) / "skew_w2.png")


def plot_bandwidth(out_dir, rows) -> Path:
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    sig = [float(r[0]) for r in rows]
    w2 = [float(r[1]) for r in rows]
    err = [float(r[2]) for r in rows]
    ax.errorbar(sig, w2, yerr=err, marker="o", ms=3, capsize=2)
    ax.set_xscale("log")
    ax.set_xlabel(r"bandwidth $\sigma$")
    ax.set_ylabel("$W_2$ (first component)")
    return _save(fig, Path(out_dir) / "bandwidth_w2.png")


def plot_lorenz(out_dir, rows) -> Path:
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    methods = sorted({r[0] for r in rows})
    for method in methods:
        sizes = sorted({int(r[1]) for r in rows if r[0] == method})
        means, errs = [], []
        for n in sizes:
            vals = np.array([float(r[3]) for r in rows if r[0] == method and int(r[1]) == n])
            means.append(vals.mean())
            errs.append(vals.std(ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else 0.0)
        ax.errorbar(sizes, means, yerr=errs, marker="o", ms=3, capsize=2, label=method)
    ax.set_xlabel("ensemble size $N$")
    ax.set_ylabel("spacetime-averaged RMSE")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, Path(out_dir) / "lorenz_rmse.png")


def plot_lorenz_trace(out_dir, trace_csv: Path) -> Path:
    cols, rows = read_table(trace_csv)
    data = np.array(rows, dtype=float)
    fig, axes = plt.subplots(3, 1, figsize=(6.4, 5.2), sharex=True)
    for i, coord in enumerate("xyz"):
        axes[i].plot(data[:, 0], data[:, 1 + i], "k.", ms=3, label="observation")
        axes[i].plot(data[:, 0], data[:, 4 + i], "-", lw=1, label="posterior mean")
        axes[i].set_ylabel(coord)
    axes[0].legend(frameon=False, fontsize=8)
    axes[-1].set_xlabel("cycle")
    return _save(fig, Path(out_dir) / (trace_csv.stem + ".png"))


def regenerate_figures(out_dir) -> list[Path]:
    """Re-render every figure supported by the CSV files in a result directory."""
    out_dir = Path(out_dir)
    made = []
    metrics = out_dir / "metrics.csv"
    if metrics.exists() and (out_dir / "samples_t1.csv").exists():
        cols, rows = read_table(metrics)
        case = rows[0][cols.index("case")]
        x0 = np.array([float(r[0]) for r in read_table(out_dir / "samples_t0.csv")[1]])
        x1 = np.array([float(r[0]) for r in read_table(out_dir / "samples_t1.csv")[1]])
        gp = np.array(read_table(out_dir / "target_pdf.csv")[1], dtype=float)
        made.append(plot_toy(out_dir, case, x0, x1, gp[:, 0], gp[:, 1]))
    if (out_dir / "skew_w2.csv").exists():
        made.append(plot_skew(out_dir, read_table(out_dir / "skew_w2.csv")[1]))
    if (out_dir / "bandwidth_w2.csv").exists():
        made.append(plot_bandwidth(out_dir, read_table(out_dir / "bandwidth_w2.csv")[1]))
    if (out_dir / "lorenz_rmse.csv").exists():
        made.append(plot_lorenz(out_dir, read_table(out_dir / "lorenz_rmse.csv")[1]))
    for trace in sorted(out_dir.glob("lorenz_trace_*.csv")):
        made.append(plot_lorenz_trace(out_dir, trace))
    return made

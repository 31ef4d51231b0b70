"""Figures and plain-text plot scripts for experiment reports."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def loglog_figure(path, series, title=""):
    """Log-log probabilities with Wilson error bars and predicted-slope reference lines.

    ``series`` is a list of dicts with keys ``label``, ``eps``, ``p``, ``lo``,
    ``hi`` and optionally ``slope`` (fitted), ``intercept`` and ``predicted``.
    """
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for s in series:
        eps = np.asarray(s["eps"], float)
        p = np.asarray(s["p"], float)
        ok = p > 0
        if not ok.any():
            continue
        yerr = np.vstack([p - np.asarray(s["lo"]), np.asarray(s["hi"]) - p])[:, ok]
        line = ax.errorbar(eps[ok], p[ok], yerr=yerr, fmt="o", ms=4, capsize=3, label=s["label"])
        color = line[0].get_color()
        grid = np.geomspace(eps.min(), eps.max(), 20)
        if s.get("slope") is not None:
            ax.plot(grid, np.exp(s["intercept"]) * grid ** s["slope"], "-", color=color, lw=1)
        if s.get("predicted") is not None:
            # anchor the reference line at the largest scale with data
            j = int(np.flatnonzero(ok)[np.argmax(eps[ok])])
            ax.plot(grid, p[j] * (grid / eps[j]) ** s["predicted"], "--", color=color, lw=1,
                    label=f"slope {s['predicted']:.3g}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("eps")
    ax.set_ylabel("probability")
    if title:
        ax.set_title(title)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ratio_figure(path, tables):
    """Per-scale ratios with intervals; ``tables`` maps a name to ``(eps, value, lo, hi)``."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for name, (eps, v, lo, hi) in tables.items():
        eps, v, lo, hi = (np.asarray(a, float) for a in (eps, v, lo, hi))
        ok = np.isfinite(v) & (v > 0)
        if not ok.any():
            continue
        ax.errorbar(eps[ok], v[ok], yerr=np.vstack([v - lo, hi - v])[:, ok], fmt="s-", ms=4,
                    capsize=3, label=name)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("eps")
    ax.set_ylabel("ratio")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def gnuplot_script(series, header, png_name="loglog.png"):
    """Self-contained gnuplot script with inline data blocks."""
    out = [f"# {header}", "set terminal pngcairo size 800,600", f"set output '{png_name}'",
           "set logscale xy", "set xlabel 'eps'", "set ylabel 'probability'", "set key left top"]
    plots = []
    for n, s in enumerate(series):
        name = f"$d{n}"
        out.append(f"{name} << EOD")
        for e, p, lo, hi in zip(s["eps"], s["p"], s["lo"], s["hi"]):
            if p > 0 and math.isfinite(p):
                out.append(f"{e:.10g} {p:.10g} {lo:.10g} {hi:.10g}")
        out.append("EOD")
        plots.append(f"{name} using 1:2:3:4 with yerrorbars title '{s['label']}'")
        if s.get("predicted") is not None:
            pos = [(e, p) for e, p in zip(s["eps"], s["p"]) if p > 0]
            if pos:
                e0, p0 = max(pos)
                plots.append(f"{p0:.10g}*(x/{e0:.10g})**{s['predicted']:.10g} with lines dt 2 "
                             f"title 'predicted {s['predicted']:.4g}'")
    if plots:
        out.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(out) + "\n"

"""SVG figures for sweep results.

All figures are written with matplotlib's SVG backend, with a fixed hash salt
and no date stamp so identical data produces identical files.
"""

from __future__ import annotations

import logging
from math import sqrt
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .simulation import Summary  # noqa: E402

log = logging.getLogger(__name__)

PLOT_KINDS = ("removal", "precision_recall", "solve_cdf")

golden_mean = (sqrt(5.0) - 1.0) / 2.0
fig_width = 5.0

rc = {
    "axes.labelsize": 10,
    "font.size": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "font.family": "DejaVu Sans",
    "figure.figsize": [fig_width, fig_width * golden_mean],
    "svg.hashsalt": "ratetune",
    "svg.fonttype": "none",
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_removal(summaries: Sequence[Summary], path) -> Path | None:
    """% TP removed against % FP removed with the y = x reference line."""
    pts = [s for s in summaries if s.tp_removed_pct is not None and s.fp_removed_pct is not None]
    if not pts:
        log.warning("removal plot skipped: no summary has both TP and FP totals")
        return None
    with plt.rc_context(rc):
        fig, ax = plt.subplots()
        ax.plot([0, 100], [0, 100], "k--", lw=0.8, label="equal loss")
        for overlap, marker in ((False, "o"), (True, "^")):
            sel = [s for s in pts if s.overlap == overlap]
            if sel:
                ax.scatter(
                    [s.tp_removed_pct for s in sel],
                    [s.fp_removed_pct for s in sel],
                    marker=marker,
                    s=18,
                    label="overlap" if overlap else "no overlap",
                )
        ax.set_xlim(0, 100)
        ax.set_ylim(0, 100)
        ax.set_xlabel("true positives removed (%)")
        ax.set_ylabel("false positives removed (%)")
        ax.legend(frameon=False, loc="lower right")
        fig.tight_layout()
        return _save(fig, Path(path))


def plot_precision_recall(summaries: Sequence[Summary], path) -> Path | None:
    """Precision and recall against theta, one line per beta, a column per overlap mode."""
    pts = [s for s in summaries if s.precision is not None or s.recall is not None]
    if not pts:
        log.warning("precision/recall plot skipped: no defined precision or recall")
        return None
    overlaps = sorted({s.overlap for s in pts})
    betas = sorted({s.beta for s in pts})
    with plt.rc_context(rc):
        fig, axes = plt.subplots(
            2, len(overlaps), squeeze=False, sharex=True,
            figsize=(fig_width * 0.6 * len(overlaps) + 1.0, fig_width * 0.9),
        )
        for col, overlap in enumerate(overlaps):
            for row, metric in enumerate(("precision", "recall")):
                ax = axes[row][col]
                for beta in betas:
                    sel = sorted(
                        (s for s in pts if s.overlap == overlap and s.beta == beta),
                        key=lambda s: s.theta,
                    )
                    xs = [s.theta for s in sel if getattr(s, metric) is not None]
                    ys = [getattr(s, metric) for s in sel if getattr(s, metric) is not None]
                    if xs:
                        ax.plot(xs, ys, marker="o", ms=3, lw=1, label=f"beta={beta:g}")
                ax.set_ylim(0, 1.02)
                if row == 0:
                    ax.set_title("overlap" if overlap else "no overlap", fontsize=9)
                if row == 1:
                    ax.set_xlabel("theta")
                if col == 0:
                    ax.set_ylabel(metric)
        axes[0][0].legend(frameon=False, loc="lower left")
        fig.tight_layout()
        return _save(fig, Path(path))


def plot_solve_cdf(solve_ms: Mapping[str, Sequence[float]], path) -> Path | None:
    """Empirical CDF of per-update solve time (selection + inference)."""
    series = {k: np.sort(np.asarray(v, dtype=float)) for k, v in solve_ms.items() if len(v)}
    if not series:
        log.warning("solve-time CDF skipped: no timed updates")
        return None
    with plt.rc_context(rc):
        fig, ax = plt.subplots()
        for label, xs in series.items():
            ys = np.arange(1, len(xs) + 1) / len(xs)
            ax.step(xs / 1e3, ys, where="post", lw=1, label=label)
        ax.set_xscale("log")
        ax.set_xlabel("solve time per update (s)")
        ax.set_ylabel("fraction of updates")
        ax.set_ylim(0, 1.0)
        ax.legend(frameon=False, loc="lower right")
        fig.tight_layout()
        return _save(fig, Path(path))


def emit_plots(
    summaries: Sequence[Summary],
    out_dir,
    kinds: Iterable[str] = PLOT_KINDS,
    solve_ms: Mapping[str, Sequence[float]] | None = None,
) -> list[Path]:
    """Write the requested figures into ``out_dir``; returns the files written."""
    kinds = set(kinds)
    unknown = kinds - set(PLOT_KINDS)
    if unknown:
        raise ValueError(f"unknown plot kinds: {sorted(unknown)}")
    if not kinds:
        return []
    if not summaries:
        raise ValueError("emit_plots needs at least one summary")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "removal" in kinds:
        written.append(plot_removal(summaries, out / "removal.svg"))
    if "precision_recall" in kinds:
        written.append(plot_precision_recall(summaries, out / "precision_recall.svg"))
    if "solve_cdf" in kinds:
        written.append(plot_solve_cdf(solve_ms or {}, out / "solve_time_cdf.svg"))
    return [p for p in written if p is not None]

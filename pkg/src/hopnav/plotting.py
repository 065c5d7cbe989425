"""Static report figures (SVG/PNG) rendered with matplotlib.

SVG output is made reproducible by fixing the hash salt used for element
ids and dropping the creation date, so identical input gives identical
bytes. Plot elements carry stable ``gid`` attributes (``path-gt``,
``path-<label>``, ``registered-<label>``, ``outlier-<label>``) so tests
and downstream tools can find them in the SVG.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geodata import DataError, GroundTruthRow, TrajectoryRow  # noqa: E402

STYLE = {
    "svg.hashsalt": "hopnav",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

# line color per trajectory label; the ground truth is always red
PATH_COLORS = {"of_only": "#8c564b", "hop": "#2ca02c", "hop_no_of": "#9467bd"}


def _save(fig, path):
    path = Path(path)
    fmt = path.suffix.lstrip(".").lower() or "svg"
    meta = {"Date": None} if fmt == "svg" else {}
    fig.savefig(path, format=fmt, metadata=meta)
    plt.close(fig)


def plot_paths(trajectories: Dict[str, Sequence[TrajectoryRow]], gt: Optional[Sequence[GroundTruthRow]],
               out_path, title: str = "") -> None:
    """Overlay estimated paths (meters) on the ground truth.

    Registered fixes are drawn as green dots and predicted frames
    (outliers) as blue crosses on top of each estimated line.
    """
    if not trajectories or not any(len(t) for t in trajectories.values()):
        raise DataError("nothing to plot: no trajectory rows")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        if gt:
            g = np.array([(r.x_m, r.y_m) for r in gt])
            ax.plot(g[:, 0], g[:, 1], color="red", lw=1.2, label="ground truth", gid="path-gt")
        for k, (label, rows) in enumerate(sorted(trajectories.items())):
            p = np.array([(r.x_m, r.y_m) for r in rows])
            src = np.array([r.source for r in rows])
            color = PATH_COLORS.get(label, f"C{k}")
            ax.plot(p[:, 0], p[:, 1], color=color, lw=0.9, label=label, gid=f"path-{label}")
            reg = src != "predicted"
            if label != "of_only":
                ax.plot(p[reg, 0], p[reg, 1], ls="none", marker=".", ms=3, color="green",
                        label=f"{label} registered", gid=f"registered-{label}")
                ax.plot(p[~reg, 0], p[~reg, 1], ls="none", marker="x", ms=4, color="blue",
                        label=f"{label} outliers", gid=f"outlier-{label}")
        ax.set_xlabel("x east [m]")
        ax.set_ylabel("y south [m]")
        ax.invert_yaxis()  # image rows grow southwards; keep north up
        ax.set_aspect("equal", adjustable="datalim")
        if title:
            ax.set_title(title)
        ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        _save(fig, out_path)


def _minmax(v):
    v = np.asarray(v, dtype=np.float64)
    ok = np.isfinite(v)
    if not ok.any():
        return v
    lo, hi = v[ok].min(), v[ok].max()
    return np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)


def plot_match_statistics(rows: Sequence[TrajectoryRow], out_path, tau_d: Optional[float] = None,
                          segment: Optional[Tuple[int, int]] = None) -> None:
    """Minimum distance and peak-to-sidelobe ratio per frame.

    The top panel shows both statistics min-max normalized over the
    sequence so their responses can be compared; the bottom panel shows the
    raw minimum distance against the rejection threshold.
    """
    if not rows:
        raise DataError("nothing to plot: no trajectory rows")
    idx = np.array([r.frame_index for r in rows])
    md = np.array([r.min_distance for r in rows])
    psr = np.array([r.psr for r in rows])
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(6.0, 4.5), sharex=True)
        ax0.plot(idx, _minmax(md), color="C0", lw=0.8, label="MD (normalized)", gid="series-md")
        ax0.plot(idx, _minmax(psr), color="C1", lw=0.8, label="PSR (normalized)", gid="series-psr")
        ax0.legend(loc="upper right", frameon=False)
        ax1.plot(idx, md, color="C0", lw=0.8, gid="series-md-raw")
        if tau_d is not None:
            ax1.axhline(tau_d, color="k", ls="--", lw=0.8, label=f"tau_d = {tau_d:.3f}", gid="tau")
            ax1.legend(loc="upper right", frameon=False)
        for ax in (ax0, ax1):
            if segment is not None:
                ax.axvspan(segment[0], segment[1], color="0.85", zorder=0, gid="segment")
        ax1.set_xlabel("frame")
        ax1.set_ylabel("min distance")
        fig.tight_layout()
        _save(fig, out_path)


def plot_error_series(errors: Dict[str, np.ndarray], out_path) -> None:
    if not errors:
        raise DataError("nothing to plot: no error series")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.0))
        for k, (label, e) in enumerate(sorted(errors.items())):
            ax.plot(np.arange(len(e)), e, lw=0.8, color=PATH_COLORS.get(label, f"C{k}"), label=label,
                    gid=f"error-{label}")
        ax.set_xlabel("frame")
        ax.set_ylabel("position error [m]")
        ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        _save(fig, out_path)


def plot_calibration(match, mismatch, tau_d: float, out_path) -> None:
    """Histograms of match and mismatch distances with the chosen threshold."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        both = np.concatenate([np.asarray(match), np.asarray(mismatch)])
        bins = np.linspace(both.min(), both.max(), 40) if both.size else 10
        ax.hist(match, bins=bins, alpha=0.6, color="green", label="near true window", gid="hist-match")
        ax.hist(mismatch, bins=bins, alpha=0.6, color="gray", label="displaced window", gid="hist-mismatch")
        ax.axvline(tau_d, color="k", ls="--", lw=0.8, gid="tau")
        ax.set_xlabel("HOG distance")
        ax.set_ylabel("count")
        ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        _save(fig, out_path)

"""Trajectory accuracy against ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .geodata import DataError, GroundTruthRow, TrajectoryRow

REFERENCE_FOOTER = "reference real-flight values: hop 6.773 m, of_only 169.188 m"


@dataclass
class Metrics:
    frames: int
    rmse_m: float
    errors_m: np.ndarray
    registered_fraction: float
    predicted_fraction: float
    reinit_count: int
    rmse_registered_m: float
    rmse_outlier_m: float

    def summary(self) -> dict:
        return {
            "frames": self.frames,
            "rmse_m": round(self.rmse_m, 6),
            "rmse_registered_m": _round(self.rmse_registered_m),
            "rmse_outlier_m": _round(self.rmse_outlier_m),
            "registered_fraction": round(self.registered_fraction, 6),
            "predicted_fraction": round(self.predicted_fraction, 6),
            "reinit_count": self.reinit_count,
        }


def _round(v):
    return None if not np.isfinite(v) else round(float(v), 6)


def _rmse(e):
    return float(np.sqrt(np.mean(np.square(e)))) if len(e) else float("nan")


def position_errors(traj: Sequence[TrajectoryRow], gt: Sequence[GroundTruthRow]) -> np.ndarray:
    """Per-frame Euclidean error in meters between window centers and true positions."""
    truth = {r.frame_index: r for r in gt}
    missing = [r.frame_index for r in traj if r.frame_index not in truth]
    if missing:
        raise DataError(f"trajectory frames without ground truth: {missing[:5]}")
    est = np.array([(r.x_m, r.y_m) for r in traj], dtype=np.float64).reshape(-1, 2)
    ref = np.array([(truth[r.frame_index].x_m, truth[r.frame_index].y_m) for r in traj],
                   dtype=np.float64).reshape(-1, 2)
    return np.hypot(*(est - ref).T)


def evaluate(traj: Sequence[TrajectoryRow], gt: Sequence[GroundTruthRow]) -> Metrics:
    if not traj:
        raise DataError("empty trajectory")
    err = position_errors(traj, gt)
    src = np.array([r.source for r in traj])
    n = len(traj)
    # the initial global fix counts as registered; everything predicted is an outlier
    registered = src != "predicted"
    return Metrics(
        frames=n,
        rmse_m=_rmse(err),
        errors_m=err,
        registered_fraction=float(np.mean(src == "registered")),
        predicted_fraction=float(np.mean(src == "predicted")),
        reinit_count=int(np.sum(src == "reinit")),
        rmse_registered_m=_rmse(err[registered]),
        rmse_outlier_m=_rmse(err[~registered]),
    )


def format_report(m: Metrics, label: str = "") -> List[str]:
    head = f"{label}: " if label else ""
    lines = [
        f"{head}frames {m.frames}",
        f"rmse_m {m.rmse_m:.3f}",
        f"rmse registered / outlier m {m.rmse_registered_m:.3f} / {m.rmse_outlier_m:.3f}",
        f"registered {100 * m.registered_fraction:.1f}%  predicted {100 * m.predicted_fraction:.1f}%"
        f"  reinit {m.reinit_count}",
        f"max error m {float(np.max(m.errors_m)):.3f}  final error m {float(m.errors_m[-1]):.3f}",
        REFERENCE_FOOTER,
    ]
    return lines

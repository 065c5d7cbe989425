"""Particle-filter registration around the optical-flow prediction.

Particles are candidate map windows, drawn fresh every frame on a lattice
around the predicted position; there is no propagation or resampling.
Weights come from a Gaussian of the HOG distance and the estimate is their
weighted mean. A coarse pass (wide area, sparse lattice) is tried first;
only if its best distance exceeds ``tau_d`` is a fine pass run, and if that
also fails the prediction is kept.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np

from .descriptor import HogTable, compute_hog, hog_distance
from .geodata import FrameRecord, GeoMap, MapPoint, PositionEstimate, Trajectory
from .globalinit import DegenerateFrameError, NoFixError, global_localize
from .motion import MotionEstimator, MotionParams, predict_position
from .preprocess import PreprocessedFrame, preprocess_frame

log = logging.getLogger(__name__)

MODES = ("hop", "hop_no_of", "of_only")


class PipelineAbort(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchParams:
    n_particles: int = 50
    coarse_side: int = 40
    coarse_step: int = 4
    fine_side: int = 20
    fine_step: int = 1
    sigma_w: float = 0.01
    tau_d: float = 0.75
    reinit_dist_px: Optional[float] = None
    psr_radius: float = 5.0

    def __post_init__(self):
        vals = (self.n_particles, self.coarse_side, self.coarse_step, self.fine_side,
                self.fine_step, self.sigma_w, self.tau_d)
        if min(vals) <= 0:
            raise ValueError("search parameters must be positive")
        if self.fine_side > self.coarse_side or self.fine_step > self.coarse_step:
            raise ValueError("fine search must not be wider or sparser than coarse search")
        if self.reinit_dist_px is None:
            object.__setattr__(self, "reinit_dist_px", 2.0 * self.coarse_side)


class Particle(NamedTuple):
    x: int
    y: int
    H_x: int
    H_y: int
    w: float
    d: float


@dataclass
class ParticleSet:
    """Particles as parallel arrays; ``xy`` are window top-lefts in map pixels."""

    xy: np.ndarray
    window: int
    w: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None
    w_raw: Optional[np.ndarray] = None
    flat: bool = False

    def __post_init__(self):
        n = len(self.xy)
        if self.w is None:
            self.w = np.full(n, 1.0 / n) if n else np.empty(0)

    def __len__(self):
        return len(self.xy)

    def __iter__(self):
        d = self.d if self.d is not None else np.full(len(self), np.nan)
        for (x, y), wi, di in zip(self.xy.tolist(), self.w.tolist(), d.tolist()):
            yield Particle(x, y, self.window, self.window, wi, di)

    @property
    def d_min(self) -> float:
        return float(self.d.min())


class OutlierStats(NamedTuple):
    d_min: float
    mu: float
    sigma_s: float
    theta: float
    degenerate: bool


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def lattice_points(center, area_side, interval, max_xy):
    """Distinct lattice points of the search square, clamped to valid offsets, row-major."""
    cx, cy = int(round(center[0])), int(round(center[1]))
    k = int(area_side // (2 * interval))
    steps = np.arange(-k, k + 1) * interval
    xs = np.clip(cx + steps, 0, max_xy[0])
    ys = np.clip(cy + steps, 0, max_xy[1])
    xs = np.unique(xs)
    ys = np.unique(ys)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()]).astype(np.int64)


def draw_particles(center, area_side, interval, N, rng_seed, max_xy, window=180) -> ParticleSet:
    """Draw up to ``N`` distinct lattice windows around ``center``.

    When the lattice has no more than ``N`` points all of them are used;
    otherwise ``N`` are sampled uniformly without replacement.
    """
    if area_side < interval:
        raise ValueError("area_side must be >= interval")
    pts = lattice_points(center, area_side, interval, max_xy)
    if len(pts) == 0:
        raise ValueError("empty particle lattice")
    if len(pts) > N:
        idx = np.sort(_as_rng(rng_seed).choice(len(pts), N, replace=False))
        pts = pts[idx]
    return ParticleSet(pts, window)


def gaussian_likelihood(d, sigma_w):
    return np.exp(-np.square(d) / (2 * sigma_w ** 2)) / math.sqrt(2 * math.pi * sigma_w ** 2)


def weigh_particles(ps: ParticleSet, frame_desc, table: HogTable, sigma_w: float) -> ParticleSet:
    """Gaussian-of-distance weights normalized to sum to one.

    Normalization happens in the log domain so that the best particles keep
    their relative weights even when every raw likelihood underflows.
    """
    if len(ps) == 0:
        raise ValueError("no particles to weigh")
    descs = table.lookup(ps.xy[:, 0], ps.xy[:, 1])
    d = np.atleast_1d(hog_distance(frame_desc, descs))
    logw = -np.square(d) / (2 * sigma_w ** 2)
    ps.d = d
    ps.w_raw = gaussian_likelihood(d, sigma_w)
    if np.all(np.isfinite(logw)):
        e = np.exp(logw - logw.max())
        ps.w = e / e.sum()
        ps.flat = False
    else:
        ps.w = np.full(len(ps), 1.0 / len(ps))
        ps.flat = True
    return ps


def estimate_state(ps: ParticleSet) -> MapPoint:
    x, y = (ps.w[:, None] * ps.xy).sum(axis=0)
    return MapPoint(float(x), float(y))


def compute_psr(ps: ParticleSet, radius: float = 5.0) -> OutlierStats:
    """Peak-to-sidelobe ratio of the distance surface (negative for a distinct minimum)."""
    d = ps.d
    i = int(np.argmin(d))
    dist = np.hypot(*(ps.xy - ps.xy[i]).T.astype(np.float64))
    side = d[dist > radius]
    d_min = float(d[i])
    if side.size < 2:
        return OutlierStats(d_min, float("nan"), float("nan"), float("nan"), True)
    mu = float(side.mean())
    sigma = float(side.std())
    if sigma == 0:
        return OutlierStats(d_min, mu, 0.0, float("nan"), True)
    return OutlierStats(d_min, mu, sigma, (d_min - mu) / sigma, False)


@dataclass
class StepInfo:
    """Per-frame diagnostics beyond the trajectory row."""

    frame_index: int
    predicted: MapPoint
    passes: int = 0
    coarse_min: float = float("nan")
    fine_min: float = float("nan")
    n_matches: int = 0


class Tracker:
    """Single-owner coarse-to-fine tracker over one map and its HOG table."""

    def __init__(self, gmap: GeoMap, table: HogTable, search: SearchParams = SearchParams(),
                 seed: int = 0, min_peak: float = 0.3,
                 on_confidence: Optional[Callable] = None):
        self.map = gmap
        self.table = table
        self.search = search
        self.seed = int(seed)
        self.min_peak = min_peak
        self.window = table.params.window
        self.max_xy = (gmap.w - self.window, gmap.h - self.window)
        self.on_confidence = on_confidence

    def _rng(self, frame_index, stage):
        return np.random.default_rng([self.seed, int(frame_index), stage])

    def global_fix(self, frame: PreprocessedFrame) -> PositionEstimate:
        peak, conf = global_localize(frame, self.map, self.min_peak, return_map=True)
        if self.on_confidence is not None:
            self.on_confidence(frame.source_index, conf)
        d = float("nan")
        if self.table is not None:
            desc = compute_hog(frame.image, self.table.params)
            d = hog_distance(desc, self.table.lookup(peak.x, peak.y))
        return PositionEstimate(peak, "reinit", d, float("nan"), self.window)

    def _search(self, center, side, step, desc, frame_index, stage):
        ps = draw_particles(center, side, step, self.search.n_particles,
                            self._rng(frame_index, stage), self.max_xy, self.window)
        return weigh_particles(ps, desc, self.table, self.search.sigma_w)

    def step(self, prev: MapPoint, frame: PreprocessedFrame, T_pred, yaw: float,
             info: Optional[StepInfo] = None) -> PositionEstimate:
        sp = self.search
        T = np.zeros(3) if T_pred is None else np.asarray(T_pred, dtype=np.float64)
        predicted = predict_position(prev, T, yaw, self.map, self.window)
        if info is not None:
            info.predicted = predicted

        if math.hypot(predicted.x - prev[0], predicted.y - prev[1]) > sp.reinit_dist_px:
            try:
                return self.global_fix(frame)
            except (NoFixError, DegenerateFrameError):
                log.info("frame %d: re-initialization failed, tracking locally", frame.source_index)

        desc = compute_hog(frame.image, self.table.params)
        last = None
        for stage, (side, step) in enumerate(((sp.coarse_side, sp.coarse_step),
                                              (sp.fine_side, sp.fine_step))):
            ps = self._search(predicted, side, step, desc, frame.source_index, stage)
            last = ps
            if info is not None:
                info.passes = stage + 1
                if stage == 0:
                    info.coarse_min = ps.d_min
                else:
                    info.fine_min = ps.d_min
            if ps.d_min <= sp.tau_d:
                stats = compute_psr(ps, sp.psr_radius)
                return PositionEstimate(estimate_state(ps), "registered", ps.d_min, stats.theta, self.window)
        stats = compute_psr(last, sp.psr_radius)
        return PositionEstimate(predicted, "predicted", last.d_min, stats.theta, self.window)


def track_step(prev, frame, table, gmap, params: SearchParams, T_pred, yaw=0.0, seed=0):
    """Functional form of :meth:`Tracker.step` for a single frame."""
    return Tracker(gmap, table, params, seed).step(prev, frame, T_pred, yaw)


@dataclass
class PipelineResult:
    trajectory: Trajectory
    steps: List[StepInfo] = field(default_factory=list)


def run_pipeline(frames: Sequence[FrameRecord], gmap: GeoMap, table: HogTable,
                 search: SearchParams = SearchParams(), motion: Optional[MotionParams] = None,
                 mode: str = "hop", seed: int = 0, min_peak: float = 0.3, max_init_frames: int = 10,
                 on_confidence: Optional[Callable] = None) -> PipelineResult:
    """Global fix on the first usable frame, then predict + register every frame."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    s_i = table.params.window
    tracker = Tracker(gmap, table, search, seed, min_peak, on_confidence)
    motion_est = MotionEstimator(motion) if mode != "hop_no_of" else None
    result = PipelineResult(Trajectory())

    start = None
    for k, rec in enumerate(frames[:max_init_frames]):
        try:
            est = tracker.global_fix(preprocess_frame(rec, gmap, s_i))
        except (NoFixError, DegenerateFrameError) as exc:
            log.info("frame %d: %s", rec.index, exc)
            continue
        result.trajectory.append(rec.index, est)
        result.steps.append(StepInfo(rec.index, est.position))
        start = k
        break
    if start is None:
        raise PipelineAbort(f"no confident global fix in the first {min(len(frames), max_init_frames)} frames")

    prev_pos = result.trajectory.entries[-1][1].position
    for k in range(start + 1, len(frames)):
        prev_rec, rec = frames[k - 1], frames[k]
        info = StepInfo(rec.index, prev_pos)
        T = None
        if motion_est is not None:
            dt = rec.t - prev_rec.t
            noise_rng = np.random.default_rng([int(seed), int(rec.index), 7])
            T, info.n_matches = motion_est.estimate(prev_rec.image, rec.image, dt, rec.omega,
                                                    rec.altitude, rec.focal_px, noise_rng)
            if T is None:
                log.debug("frame %d: optical flow failed (%d matches)", rec.index, info.n_matches)
        if mode == "of_only":
            pos = predict_position(prev_pos, np.zeros(3) if T is None else T, prev_rec.yaw, gmap, s_i)
            info.predicted = pos
            est = PositionEstimate(pos, "predicted", float("nan"), float("nan"), s_i)
        else:
            frame = preprocess_frame(rec, gmap, s_i)
            est = tracker.step(prev_pos, frame, T, prev_rec.yaw, info)
        result.trajectory.append(rec.index, est)
        result.steps.append(info)
        prev_pos = est.position
    return result


@dataclass
class ThresholdCalibration:
    """Distances of frames to their true windows and to displaced windows."""

    match: np.ndarray
    mismatch: np.ndarray
    tau_d: float
    separable: bool


def calibrate_tau(frames: Sequence[FrameRecord], true_topleft: Sequence, gmap: GeoMap, table: HogTable,
                  near_px: float = 4.0, far_px: float = 20.0, n_offsets: int = 8, quantile: float = 0.01,
                  seed: int = 0) -> ThresholdCalibration:
    """Pick a rejection threshold from labelled frames.

    The best particle is rarely exactly on the true window, so matches are
    sampled ``near_px`` from the truth (one coarse lattice step by default)
    and mismatches ``far_px`` away (half the coarse search side), each in
    ``n_offsets`` random directions. The threshold is the midpoint between
    the upper ``quantile`` of the match distances and the lower ``quantile``
    of the mismatch distances.
    """
    s_i = table.params.window
    max_x, max_y = table.max_offset
    match, mismatch = [], []
    for rec, (tx, ty) in zip(frames, true_topleft):
        desc = compute_hog(preprocess_frame(rec, gmap, s_i).image, table.params)
        angles = np.random.default_rng([int(seed), int(rec.index), 11]).uniform(0, 2 * np.pi, n_offsets)
        for radius, out in ((near_px, match), (far_px, mismatch)):
            xs = np.clip(np.round(tx + radius * np.cos(angles)), 0, max_x)
            ys = np.clip(np.round(ty + radius * np.sin(angles)), 0, max_y)
            out.extend(hog_distance(desc, table.lookup(xs, ys)).tolist())
    match, mismatch = np.asarray(match), np.asarray(mismatch)
    if not len(match):
        raise ValueError("calibration needs at least one frame")
    hi = float(np.quantile(match, 1.0 - quantile))
    lo = float(np.quantile(mismatch, quantile))
    return ThresholdCalibration(match, mismatch, (hi + lo) / 2.0, hi < lo)

"""Synthetic flights over a reference map.

Frames are rendered by sampling the map under a nadir pinhole camera at the
true pose, then perturbed (gamma, brightness, contrast, sensor noise and
"outdated map" patches that exist only in the frame). Avionics are the
true values plus configured noise.

Randomness uses numpy's PCG64 seeded through ``SeedSequence([seed, index,
stream])`` so each frame draws from its own stream and rendering order
cannot change the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .geodata import (DataError, FrameRecord, GeoMap, GroundTruthRow, write_dataset,
                      write_groundtruth)
from .imaging import sample_bilinear, to_u8

_STREAM_RENDER = 1
_STREAM_SENSOR = 2


@dataclass
class SimConfig:
    # trajectory
    kind: str = "lawnmower"
    waypoints_m: List[Tuple[float, float]] = field(default_factory=list)
    rows: int = 3
    spacing_m: float = 30.0
    row_length_m: float = 150.0
    start_m: Optional[Tuple[float, float]] = None
    duration_s: Optional[float] = 180.0
    speed_m_s: float = 2.0
    frame_rate_hz: float = 5.0
    altitude_m: float = 80.0
    focal_px: float = 252.0
    frame_px: int = 264
    crop_px: int = 180
    yaw_mode: str = "path_tangent"
    yaw_fixed_rad: float = 0.0
    # inserted displacement (map px) applied from jump_frame onwards
    jump_frame: Optional[int] = None
    jump_px: Tuple[float, float] = (0.0, 0.0)
    # photometric
    gamma_range: Tuple[float, float] = (1.0, 1.0)
    brightness_range: Tuple[float, float] = (0.0, 0.0)
    noise_sigma: float = 0.0
    # strong illumination change over a frame interval [start, end)
    segment_start: Optional[int] = None
    segment_end: Optional[int] = None
    segment_gamma: float = 1.0
    segment_brightness: float = 0.0
    segment_contrast: float = 1.0
    # outdated map
    patch_count: int = 0
    patch_size_px: int = 30
    # avionics noise
    yaw_sigma_rad: float = 0.0
    altitude_sigma_m: float = 0.0
    omega_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.speed_m_s > 0 and self.frame_rate_hz > 0 and self.altitude_m > 0):
            raise ValueError("speed, frame rate and altitude must be positive")
        if self.focal_px <= 0 or self.frame_px <= 0:
            raise ValueError("focal_px and frame_px must be positive")
        for name in ("gamma_range", "brightness_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is not ordered")
        if self.gamma_range[0] <= 0:
            raise ValueError("gamma must be positive")
        if self.kind not in ("lawnmower", "waypoints"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.yaw_mode not in ("path_tangent", "fixed"):
            raise ValueError(f"unknown yaw mode {self.yaw_mode!r}")

    @classmethod
    def from_flat(cls, flat: dict) -> "SimConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(flat) - names
        if unknown:
            raise ValueError(f"unknown simulator keys: {', '.join(sorted(unknown))}")
        kw = dict(flat)
        for k in ("gamma_range", "brightness_range", "jump_px", "start_m"):
            if kw.get(k) is not None:
                kw[k] = tuple(float(v) for v in kw[k])
        if "waypoints_m" in kw:
            kw["waypoints_m"] = [tuple(float(v) for v in p) for p in kw["waypoints_m"]]
        return cls(**kw)


@dataclass
class Pose:
    x_m: float
    y_m: float
    yaw: float
    altitude: float
    omega: Tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class GroundTruth:
    poses: List[Pose]
    frame_dt: float

    def __len__(self):
        return len(self.poses)

    def rows(self) -> List[GroundTruthRow]:
        return [GroundTruthRow(i, p.x_m, p.y_m, p.yaw, p.altitude) for i, p in enumerate(self.poses)]


def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def _lawnmower_path(cfg: SimConfig, gmap: GeoMap):
    """Polyline approximation of back-and-forth rows joined by half circles."""
    r = cfg.spacing_m / 2.0
    if cfg.start_m is not None:
        x0, y0 = cfg.start_m
    else:
        w_m, h_m = gmap.w / gmap.px_per_m, gmap.h / gmap.px_per_m
        x0 = (w_m - cfg.row_length_m) / 2.0
        y0 = (h_m - (cfg.rows - 1) * cfg.spacing_m) / 2.0
    pts = [(x0, y0)]
    direction = 1.0
    x, y = x0, y0
    n_arc = 64
    for row in range(cfg.rows):
        x = x + direction * cfg.row_length_m
        pts.append((x, y))
        if row == cfg.rows - 1:
            break
        cx, cy = x, y + r
        for k in range(1, n_arc + 1):
            a = -math.pi / 2 + math.pi * k / n_arc  # from top of circle to bottom
            pts.append((cx + direction * r * math.cos(a), cy + r * math.sin(a)))
        y = y + cfg.spacing_m
        direction = -direction
    return np.array(pts, dtype=np.float64)


def _sample_path(pts, spacing, n=None):
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    keep = seg_len > 0
    pts = np.vstack([pts[:1], pts[1:][keep]])
    seg, seg_len = seg[keep], seg_len[keep]
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    if n is None:
        n = int(math.floor(total / spacing + 1e-9)) + 1
    s = np.arange(n) * spacing
    if s[-1] > total + 1e-6:
        raise DataError(f"path of {total:.1f} m too short for {n} frames at {spacing:.3f} m spacing")
    if len(seg) == 0:
        return np.repeat(pts[:1], n, axis=0), np.zeros((n, 2))
    i = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    t = (s - cum[i]) / seg_len[i]
    pos = pts[i] + seg[i] * t[:, None]
    tangent = seg[i] / seg_len[i, None]
    return pos, tangent


def generate_trajectory(cfg: SimConfig, gmap: GeoMap) -> GroundTruth:
    dt = 1.0 / cfg.frame_rate_hz
    spacing = cfg.speed_m_s * dt
    if cfg.kind == "lawnmower":
        path = _lawnmower_path(cfg, gmap)
    else:
        if not cfg.waypoints_m:
            raise ValueError("waypoint trajectory needs at least one waypoint")
        path = np.asarray(cfg.waypoints_m, dtype=np.float64).reshape(-1, 2)
    if len(path) == 1:
        n = 1 if cfg.duration_s is None else max(1, int(round(cfg.duration_s * cfg.frame_rate_hz)))
        pos, tangent = np.repeat(path, n, axis=0), np.zeros((n, 2))
    else:
        n = None if cfg.duration_s is None else int(round(cfg.duration_s * cfg.frame_rate_hz))
        pos, tangent = _sample_path(path, spacing, n)

    if cfg.jump_frame is not None and 0 < cfg.jump_frame < len(pos):
        pos = pos.copy()
        pos[cfg.jump_frame:] += np.asarray(cfg.jump_px) / gmap.px_per_m

    if cfg.yaw_mode == "fixed" or not np.any(tangent):
        yaws = np.full(len(pos), cfg.yaw_fixed_rad)
    else:
        yaws = np.arctan2(tangent[:, 0], -tangent[:, 1])  # clockwise from north
    margin = cfg.crop_px / 2.0 + 2.0
    px = pos * gmap.px_per_m
    if (px[:, 0].min() < margin or px[:, 1].min() < margin
            or px[:, 0].max() > gmap.w - margin or px[:, 1].max() > gmap.h - margin):
        raise DataError("trajectory leaves the map margin")

    poses = []
    for k in range(len(pos)):
        wz = 0.0 if k == 0 else _wrap(yaws[k] - yaws[k - 1]) / dt
        poses.append(Pose(float(pos[k, 0]), float(pos[k, 1]), float(_wrap(yaws[k])),
                          cfg.altitude_m, (0.0, 0.0, wz)))
    return GroundTruth(poses, dt)


def frame_rng(seed, index, stream):
    return np.random.default_rng([int(seed), int(index), stream])


def render_view(gmap: GeoMap, pose: Pose, cfg: SimConfig):
    """Noise-free camera image at ``pose`` (float, zero outside the map)."""
    n = cfg.frame_px
    k = pose.altitude / cfg.focal_px * gmap.px_per_m  # map px per camera px
    c = (n - 1) / 2.0
    u = (np.arange(n) - c) * k
    U, V = np.meshgrid(u, u)
    cs, sn = math.cos(pose.yaw), math.sin(pose.yaw)
    # pixel (i, j) covers [i, i+1) x [j, j+1), so its sample sits at i + 0.5
    px = pose.x_m * gmap.px_per_m - 0.5 + U * cs - V * sn
    py = pose.y_m * gmap.px_per_m - 0.5 + U * sn + V * cs
    return sample_bilinear(gmap.raster, px, py, fill=0.0)


def photometric(img, gamma=1.0, brightness=0.0, contrast=1.0):
    out = 255.0 * np.power(np.clip(img, 0, 255) / 255.0, gamma)
    if contrast != 1.0:
        out = 128.0 + contrast * (out - 128.0)
    return out + brightness


def render_frame(gmap: GeoMap, pose: Pose, cfg: SimConfig, index: int = 0, t: float = 0.0) -> FrameRecord:
    margin = cfg.crop_px / 2.0
    x, y = pose.x_m * gmap.px_per_m, pose.y_m * gmap.px_per_m
    if not (margin <= x <= gmap.w - margin and margin <= y <= gmap.h - margin):
        raise DataError(f"pose ({x:.1f}, {y:.1f}) px outside the map margin")
    rng = frame_rng(cfg.seed, index, _STREAM_RENDER)
    img = render_view(gmap, pose, cfg)

    gamma = rng.uniform(*cfg.gamma_range)
    bright = rng.uniform(*cfg.brightness_range)
    img = photometric(img, gamma, bright)
    if cfg.segment_start is not None and cfg.segment_start <= index < (cfg.segment_end or 0):
        img = photometric(img, cfg.segment_gamma, cfg.segment_brightness, cfg.segment_contrast)
    if cfg.noise_sigma > 0:
        img = img + rng.normal(0.0, cfg.noise_sigma, img.shape)
    n = cfg.frame_px
    for _ in range(cfg.patch_count):
        s = cfg.patch_size_px
        px0, py0 = rng.integers(0, max(n - s, 1), size=2)
        img[py0:py0 + s, px0:px0 + s] = 128.0

    srng = frame_rng(cfg.seed, index, _STREAM_SENSOR)
    yaw = pose.yaw + srng.normal(0.0, cfg.yaw_sigma_rad) if cfg.yaw_sigma_rad > 0 else pose.yaw
    alt = pose.altitude + srng.normal(0.0, cfg.altitude_sigma_m) if cfg.altitude_sigma_m > 0 else pose.altitude
    omega = np.asarray(pose.omega, dtype=np.float64)
    if cfg.omega_sigma > 0:
        omega = omega + srng.normal(0.0, cfg.omega_sigma, 3)
    return FrameRecord(to_u8(img), t, float(_wrap(yaw)), 0.0, 0.0, tuple(omega.tolist()),
                       float(max(alt, 1e-3)), cfg.focal_px, index)


def simulate(cfg: SimConfig, gmap: GeoMap):
    gt = generate_trajectory(cfg, gmap)
    frames = [render_frame(gmap, p, cfg, k, k * gt.frame_dt) for k, p in enumerate(gt.poses)]
    return frames, gt


def emit_dataset(cfg: SimConfig, gmap: GeoMap, out_dir):
    """Write frames, ``metadata.jsonl`` and ``groundtruth.csv``; returns the ground truth."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames, gt = simulate(cfg, gmap)
    write_dataset(frames, out_dir)
    write_groundtruth(gt.rows(), out_dir / "groundtruth.csv")
    return gt


# -- procedural reference map ------------------------------------------------------

def _blob_noise(rng, shape, sigma):
    return ndimage.gaussian_filter(rng.normal(0.0, 1.0, shape), sigma, mode="wrap")


def synthetic_map(w: int = 850, h: int = 500, px_per_m: float = 3.15, seed: int = 0) -> GeoMap:
    """A textured village-like raster: fields, roads, houses with shadows, trees."""
    rng = np.random.default_rng([int(seed), 0xA11])
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = _blob_noise(rng, (h, w), 40)
    img = 120.0 + 30.0 * (img - img.mean()) / (img.std() + 1e-9)

    # field parcels with crop stripes
    for _ in range(14):
        x0, y0 = rng.uniform(0, w), rng.uniform(0, h)
        pw, ph = rng.uniform(80, 220), rng.uniform(60, 160)
        ang = rng.uniform(0, math.pi)
        u = (xx - x0) * math.cos(ang) + (yy - y0) * math.sin(ang)
        v = -(xx - x0) * math.sin(ang) + (yy - y0) * math.cos(ang)
        m = (np.abs(u) < pw / 2) & (np.abs(v) < ph / 2)
        period = rng.uniform(6, 14)
        base = rng.uniform(80, 170)
        img[m] = base + 12.0 * np.sin(2 * math.pi * u[m] / period)

    # roads
    for _ in range(7):
        x0, y0 = rng.uniform(0, w), rng.uniform(0, h)
        ang = rng.uniform(0, math.pi)
        width = rng.uniform(5, 10)
        dist = np.abs(-(xx - x0) * math.sin(ang) + (yy - y0) * math.cos(ang))
        img[dist < width / 2] = rng.uniform(70, 100)
        img[(dist >= width / 2) & (dist < width / 2 + 1.5)] = 190.0

    # houses with cast shadows
    for _ in range(110):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        bw, bh = rng.uniform(12, 36), rng.uniform(10, 28)
        ang = rng.uniform(0, math.pi)
        roof = rng.choice([rng.uniform(30, 80), rng.uniform(150, 230)])
        for dx, dy, val in ((4, 4, None), (0, 0, roof)):
            u = (xx - cx - dx) * math.cos(ang) + (yy - cy - dy) * math.sin(ang)
            v = -(xx - cx - dx) * math.sin(ang) + (yy - cy - dy) * math.cos(ang)
            m = (np.abs(u) < bw / 2) & (np.abs(v) < bh / 2)
            if val is None:
                img[m] *= 0.55
            else:
                img[m] = val + 18.0 * (u[m] > 0)  # two roof faces

    # trees
    for _ in range(160):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        r = rng.uniform(3, 9)
        m = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        img[m] = rng.uniform(25, 60)

    img += 3.0 * rng.normal(0.0, 1.0, (h, w))
    img = ndimage.gaussian_filter(img, 0.7)
    return GeoMap(to_u8(img), px_per_m, f"synthetic village seed={seed}")

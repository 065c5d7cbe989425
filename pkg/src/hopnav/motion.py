"""Inter-frame camera translation from optical flow.

Camera frame: x right, y down (image axes), z along the optical axis
toward the ground. ``T`` is the camera displacement over one frame interval
in meters and ``omega`` the body rate in rad/s, so scene points move with
velocity ``-T - omega x P``.

Two estimators are provided:

* motion field: the flow of every tracked point, minus the rotational part
  predicted from the gyro, is linear in ``T`` given depth and focal length;
* homography: a plane-induced homography ``H = R + T N^T / h`` with ``R``,
  ``N`` and ``h`` from the avionics, so ``T = h (H - R) N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .geodata import GeoMap, MapPoint


class DegenerateMotionError(ValueError):
    pass


@dataclass
class FlowField:
    """Point matches between two frames, in pixels relative to the principal point."""

    prev: np.ndarray
    curr: np.ndarray
    frame_dt: float = 1.0

    def __post_init__(self):
        self.prev = np.asarray(self.prev, dtype=np.float64).reshape(-1, 2)
        self.curr = np.asarray(self.curr, dtype=np.float64).reshape(-1, 2)
        if self.prev.shape != self.curr.shape:
            raise ValueError("prev/curr match arrays differ in shape")
        if not self.frame_dt > 0:
            raise ValueError("frame_dt must be positive")

    def __len__(self):
        return len(self.prev)

    @property
    def displacement(self):
        return self.curr - self.prev

    @classmethod
    def from_pixels(cls, prev_px, curr_px, image_shape, frame_dt=1.0):
        h, w = image_shape
        c = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
        return cls(np.asarray(prev_px) - c, np.asarray(curr_px) - c, frame_dt)


@dataclass
class CameraMotion:
    T: np.ndarray
    omega: np.ndarray
    Z: float
    f: float

    def __post_init__(self):
        if not (self.Z > 0 and self.f > 0):
            raise ValueError("Z and f must be positive")


def rotational_flow(x, y, rot, f):
    """Image motion (px per frame) of points at ``(x, y)`` due to a small rotation ``rot`` (rad)."""
    wx, wy, wz = rot
    bx = -wy * f + wz * y + wx * x * y / f - wy * x * x / f
    by = wx * f - wz * x + wx * y * y / f - wy * x * y / f
    return bx, by


def motion_field_flow(points, T, rot, Z, f):
    """Forward model: flow of points at ``points`` for translation ``T`` and rotation ``rot``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    bx, by = rotational_flow(x, y, rot, f)
    vx = bx + (T[2] * x - T[0] * f) / Z
    vy = by + (T[2] * y - T[1] * f) / Z
    return np.column_stack([vx, vy])


def solve_translation_motion_field(flow: FlowField, omega, Z: float, f: float,
                                   trim_rounds: int = 3, trim_sigma: float = 2.0):
    """Least-squares ``(T_x, T_y, T_z)`` in meters per frame, with residual trimming."""
    if len(flow) < 2:
        raise DegenerateMotionError("need at least 2 flow matches")
    rot = np.asarray(omega, dtype=np.float64) * flow.frame_dt
    x, y = flow.prev[:, 0], flow.prev[:, 1]
    v = flow.displacement
    bx, by = rotational_flow(x, y, rot, f)
    n = len(x)
    A = np.zeros((2 * n, 3))
    A[0::2, 0] = -f
    A[0::2, 2] = x
    A[1::2, 1] = -f
    A[1::2, 2] = y
    rhs = np.empty(2 * n)
    rhs[0::2] = (v[:, 0] - bx) * Z
    rhs[1::2] = (v[:, 1] - by) * Z

    keep = np.ones(n, dtype=bool)
    T = _lstsq(A, rhs, keep)
    for _ in range(trim_rounds):
        r = (A @ T - rhs).reshape(n, 2)
        rn = np.hypot(r[:, 0], r[:, 1])
        sigma = math.sqrt(np.mean(rn[keep] ** 2))
        new_keep = rn <= trim_sigma * sigma if sigma > 0 else keep
        if new_keep.sum() < 2 or np.array_equal(new_keep, keep):
            break
        keep = new_keep
        T = _lstsq(A, rhs, keep)
    return T


def _lstsq(A, rhs, keep):
    rows = np.repeat(keep, 2)
    sol, _, rank, _ = np.linalg.lstsq(A[rows], rhs[rows], rcond=None)
    if rank < 3:
        raise DegenerateMotionError("rank-deficient motion-field system")
    return sol


# -- homography ---------------------------------------------------------------

def _normalize_points(p):
    c = p.mean(axis=0)
    d = np.sqrt(((p - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    M = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    return (p - c) * s, M


def _collinear(p, tol=1e-9):
    q = p - p.mean(axis=0)
    sv = np.linalg.svd(q, compute_uv=False)
    return sv.size < 2 or sv[1] <= tol * max(sv[0], 1.0)


def dlt_homography(src, dst):
    """Normalized DLT: ``dst ~ H src`` from >= 4 correspondences."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if len(src) < 4:
        raise DegenerateMotionError("need at least 4 correspondences")
    if _collinear(src) or _collinear(dst):
        raise DegenerateMotionError("degenerate (collinear) configuration")
    ps, Ms = _normalize_points(src)
    pd, Md = _normalize_points(dst)
    n = len(ps)
    A = np.zeros((2 * n, 9))
    x, y = ps[:, 0], ps[:, 1]
    u, v = pd[:, 0], pd[:, 1]
    A[0::2, 0:3] = np.column_stack([-x, -y, -np.ones(n)])
    A[0::2, 6:9] = np.column_stack([u * x, u * y, u])
    A[1::2, 3:6] = np.column_stack([-x, -y, -np.ones(n)])
    A[1::2, 6:9] = np.column_stack([v * x, v * y, v])
    _, _, vt = np.linalg.svd(A)
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Md) @ Hn @ Ms
    if abs(H[2, 2]) < 1e-15:
        raise DegenerateMotionError("homography at infinity")
    return H / H[2, 2]


def transfer_error(H, src, dst):
    p = np.column_stack([src, np.ones(len(src))]) @ H.T
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = p[:, :2] / p[:, 2:3]
    err = np.sqrt(((proj - dst) ** 2).sum(axis=1))
    return np.where(np.isfinite(err), err, np.inf)


def estimate_homography(flow: FlowField, ransac_thresh_px: float = 1.5, max_iters: int = 500,
                        seed: int = 0):
    """RANSAC + normalized DLT for ``curr ~ H prev``; returns ``(H, inlier_mask)``."""
    src, dst = flow.prev, flow.curr
    n = len(src)
    if n < 4:
        raise DegenerateMotionError("need at least 4 matches")
    rng = np.random.default_rng(seed)
    best = None
    best_count = 0
    for _ in range(max_iters):
        idx = rng.choice(n, 4, replace=False)
        try:
            H = dlt_homography(src[idx], dst[idx])
        except (DegenerateMotionError, np.linalg.LinAlgError):
            continue
        inl = transfer_error(H, src, dst) < ransac_thresh_px
        count = int(inl.sum())
        if count > best_count:
            best, best_count = inl, count
            if count == n:
                break
    if best is None or best_count < 4:
        raise DegenerateMotionError("RANSAC found no consensus")
    H = dlt_homography(src[best], dst[best])
    inl = transfer_error(H, src, dst) < ransac_thresh_px
    if inl.sum() >= 4 and not np.array_equal(inl, best):
        H = dlt_homography(src[inl], dst[inl])
    else:
        inl = best
    return H, inl


@dataclass
class HomographyEstimate:
    """Calibrated homography mapping *current* camera rays to *previous* ones.

    With ``X_prev = R X_curr + T`` and the ground plane ``N^T X_curr = h``
    the homography is ``R + T N^T / h``, so ``T`` comes out as the camera
    displacement in the same convention the motion-field solver uses.
    """

    H: np.ndarray
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    N: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    h: float = 80.0
    inlier_count: int = 0

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        self.N = np.asarray(self.N, dtype=np.float64)
        if abs(self.H[2, 2]) > 0:
            self.H = self.H / self.H[2, 2]
        if not self.h > 0:
            raise ValueError("altitude h must be positive")
        if abs(np.linalg.norm(self.N) - 1.0) > 1e-9:
            raise ValueError("plane normal must be a unit vector")
        if abs(np.linalg.det(self.R) - 1.0) > 1e-6 or not np.allclose(self.R.T @ self.R, np.eye(3), atol=1e-6):
            raise ValueError("R must be a rotation matrix")


def decompose_translation(est: HomographyEstimate):
    """``T = h (H - R) N`` with ``H`` rescaled to unit middle singular value.

    A plane-induced homography of the form ``R + T N^T / h`` always has its
    middle singular value equal to one; the ``H[2,2] = 1`` normalization
    does not preserve that when the motion has a vertical component.
    """
    H = est.H
    sv = np.linalg.svd(H, compute_uv=False)
    H = H / sv[1]
    if np.linalg.det(H) < 0:
        H = -H
    return est.h * (H - est.R) @ est.N


def rotation_from_rates(omega, dt):
    return Rotation.from_rotvec(np.asarray(omega, dtype=np.float64) * dt).as_matrix()


def homography_translation(flow: FlowField, omega, Z: float, f: float, ransac_thresh_px=1.5,
                           max_iters=500, seed=0):
    """Camera translation via a fitted homography and gyro-derived rotation."""
    H_px, inl = estimate_homography(flow, ransac_thresh_px, max_iters, seed)
    K = np.diag([f, f, 1.0])
    Kinv = np.diag([1.0 / f, 1.0 / f, 1.0])
    # pixel coordinates here are already relative to the principal point
    H_back = Kinv @ np.linalg.inv(H_px) @ K
    est = HomographyEstimate(H_back, rotation_from_rates(omega, flow.frame_dt), h=Z,
                             inlier_count=int(inl.sum()))
    return decompose_translation(est)


def camera_to_map(T, yaw: float):
    """Rotate a camera-frame (right, down) displacement into map (east, south) axes."""
    c, s = math.cos(yaw), math.sin(yaw)
    return T[0] * c - T[1] * s, T[0] * s + T[1] * c


def predict_position(prev: MapPoint, T, yaw: float, gmap: GeoMap, s_i: int = 180) -> MapPoint:
    """Accumulate a camera translation (meters) onto a window top-left, clamped to the map."""
    dx_m, dy_m = camera_to_map(T, yaw)
    x = prev[0] + dx_m * gmap.px_per_m
    y = prev[1] + dy_m * gmap.px_per_m
    x = min(max(x, 0.0), float(gmap.w - s_i))
    y = min(max(y, 0.0), float(gmap.h - s_i))
    return MapPoint(x, y)


@dataclass
class MotionParams:
    estimator: str = "motion_field"
    max_count: int = 200
    quality: float = 0.01
    min_dist_px: int = 8
    levels: int = 4
    window_px: int = 21
    max_iters: int = 30
    eps: float = 0.01
    max_residual: float = 24.0
    min_matches: int = 8
    ransac_thresh_px: float = 1.5
    ransac_iters: int = 500
    flow_noise_px: float = 0.0

    def __post_init__(self):
        if self.estimator not in ("motion_field", "homography"):
            raise ValueError(f"unknown translation estimator {self.estimator!r}")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")


class MotionEstimator:
    """Frame-to-frame translation with a reusable LK tracker."""

    def __init__(self, params: Optional[MotionParams] = None):
        from .flow import FlowTracker

        self.params = params or MotionParams()
        p = self.params
        self.tracker = FlowTracker(p.levels, p.window_px, p.max_iters, p.eps, p.max_residual)

    def estimate(self, prev_img, curr_img, dt, omega, altitude, focal_px, rng=None):
        """Return ``(T, n_matches)``; ``T`` is None when too few points survive."""
        from .flow import select_features

        p = self.params
        feats = select_features(prev_img, p.max_count, p.quality, p.min_dist_px,
                                border=max(p.window_px // 2, 1))
        p0, p1 = self.tracker.track(prev_img, curr_img, feats)
        if p.flow_noise_px > 0 and len(p1):
            if rng is None:
                raise ValueError("flow noise requires a random generator")
            p1 = p1 + rng.normal(0.0, p.flow_noise_px, size=p1.shape)
        if len(p0) < p.min_matches:
            return None, len(p0)
        flow = FlowField.from_pixels(p0, p1, np.shape(curr_img), dt)
        try:
            if p.estimator == "motion_field":
                T = solve_translation_motion_field(flow, omega, altitude, focal_px)
            else:
                T = homography_translation(flow, omega, altitude, focal_px,
                                           p.ransac_thresh_px, p.ransac_iters)
        except (DegenerateMotionError, np.linalg.LinAlgError):
            return None, len(p0)
        return np.asarray(T, dtype=np.float64), len(p0)

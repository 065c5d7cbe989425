"""Bring onboard frames to the map's orientation and scale, then crop.

Yaw is the clockwise heading from map north seen from above. A frame
rendered at yaw ``a`` has its "up" pointing along that heading, so it is
de-rotated by ``-a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geodata import DataError, FrameRecord, GeoMap
from .imaging import sample_bilinear, to_u8


@dataclass(frozen=True, eq=False)
class PreprocessedFrame:
    image: np.ndarray
    source_index: int
    gsd_m_per_px: float

    @property
    def size(self) -> int:
        return self.image.shape[0]


def _restore_dtype(out, like):
    return to_u8(out) if np.asarray(like).dtype == np.uint8 else out


def rotated_canvas(w: int, h: int, yaw: float):
    c, s = abs(math.cos(yaw)), abs(math.sin(yaw))
    # the epsilon keeps exact quarter turns from growing by one pixel
    return (int(math.ceil(w * c + h * s - 1e-9)), int(math.ceil(w * s + h * c - 1e-9)))


def rotate_to_north(image, yaw: float):
    """Rotate about the image center by ``-yaw`` onto an enlarged, zero-filled canvas."""
    if not math.isfinite(yaw):
        raise ValueError("yaw must be finite")
    image = np.asarray(image)
    h, w = image.shape
    out_w, out_h = rotated_canvas(w, h, yaw)
    cs, sn = math.cos(yaw), math.sin(yaw)
    X = np.arange(out_w) - (out_w - 1) / 2.0
    Y = np.arange(out_h) - (out_h - 1) / 2.0
    X, Y = np.meshgrid(X, Y)
    u = X * cs + Y * sn + (w - 1) / 2.0
    v = -X * sn + Y * cs + (h - 1) / 2.0
    return _restore_dtype(sample_bilinear(image, u, v, fill=0.0), image)


def scale_factor(altitude: float, focal_px: float, map_px_per_m: float) -> float:
    if not (altitude > 0 and focal_px > 0):
        raise DataError(f"altitude ({altitude}) and focal_px ({focal_px}) must be positive")
    s = (altitude / focal_px) * map_px_per_m
    if not (math.isfinite(s) and s > 0):
        raise DataError(f"invalid scale factor {s}")
    return s


def resample(image, s: float):
    """Scale by ``s`` about the image center (bilinear)."""
    image = np.asarray(image)
    h, w = image.shape
    out_w, out_h = max(1, int(round(w * s))), max(1, int(round(h * s)))
    if out_w == w and out_h == h and s == 1.0:
        return image.copy()
    xs = (np.arange(out_w) - (out_w - 1) / 2.0) / s + (w - 1) / 2.0
    ys = (np.arange(out_h) - (out_h - 1) / 2.0) / s + (h - 1) / 2.0
    # the outermost samples may fall in the last half pixel of the footprint
    xs, ys = np.clip(xs, 0, w - 1), np.clip(ys, 0, h - 1)
    X, Y = np.meshgrid(xs, ys)
    return _restore_dtype(sample_bilinear(image, X, Y, fill=0.0), image)


def rescale_to_map(image, altitude: float, focal_px: float, map_px_per_m: float):
    """Resample so one pixel spans ``1/map_px_per_m`` meters (flat ground, nadir pinhole)."""
    return resample(image, scale_factor(altitude, focal_px, map_px_per_m))


def center_crop(image, s_i: int):
    image = np.asarray(image)
    h, w = image.shape
    if w < s_i or h < s_i:
        raise DataError(f"image {w}x{h} smaller than crop size {s_i}")
    x0 = (w - s_i) // 2
    y0 = (h - s_i) // 2
    return image[y0:y0 + s_i, x0:x0 + s_i].copy()


def preprocess_frame(frame: FrameRecord, gmap: GeoMap, s_i: int) -> PreprocessedFrame:
    rotated = rotate_to_north(frame.image, frame.yaw)
    scaled = rescale_to_map(rotated, frame.altitude, frame.focal_px, gmap.px_per_m)
    cropped = center_crop(scaled, s_i)
    return PreprocessedFrame(to_u8(cropped), frame.index, 1.0 / gmap.px_per_m)

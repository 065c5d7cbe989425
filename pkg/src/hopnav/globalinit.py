"""Whole-map search by frequency-domain correlation.

The frame is mean-subtracted and zero-padded to the map size, both are
transformed, multiplied as ``G = F * conj(H)`` and transformed back. Each
raw score is then divided by the norms of the frame and of the map window
under it (from summed-area tables), giving zero-mean normalized
cross-correlation in ``[-1, 1]`` for every window top-left.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft

from .geodata import DataError, GeoMap, MapPoint
from .preprocess import PreprocessedFrame

_VAR_FLOOR = 1e-9
_TIE_TOL = 1e-9


class NoFixError(RuntimeError):
    """No window correlates with the frame above the confidence floor."""

    def __init__(self, msg, confidence=None):
        super().__init__(msg)
        self.confidence = confidence


class DegenerateFrameError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class ConfidenceMap:
    scores: np.ndarray
    peak: MapPoint
    peak_score: float


def _window_sums(img, k_h, k_w):
    s = np.zeros((img.shape[0] + 1, img.shape[1] + 1))
    np.cumsum(np.cumsum(img, axis=0), axis=1, out=s[1:, 1:])
    return s[k_h:, k_w:] - s[:-k_h, k_w:] - s[k_h:, :-k_w] + s[:-k_h, :-k_w]


def correlate(frame, gmap: GeoMap) -> ConfidenceMap:
    tpl = np.asarray(getattr(frame, "image", frame), dtype=np.float64)
    img = np.asarray(gmap.raster, dtype=np.float64)
    th, tw = tpl.shape
    h, w = img.shape
    if th > h or tw > w:
        raise DataError(f"frame {tw}x{th} larger than map {w}x{h}")
    n = th * tw
    tpl = tpl - tpl.mean()
    t_norm = np.sqrt((tpl * tpl).sum())
    if t_norm <= np.sqrt(n * _VAR_FLOOR):
        raise DegenerateFrameError("frame has zero variance; correlation is undefined")

    shape = (h, w)
    F = fft.rfft2(img, shape)
    H = fft.rfft2(tpl, shape)
    G = F * np.conj(H)
    raw = fft.irfft2(G, shape)[: h - th + 1, : w - tw + 1]

    s1 = _window_sums(img, th, tw)
    s2 = _window_sums(img * img, th, tw)
    var = np.maximum(s2 - s1 * s1 / n, 0.0)
    ok = var > n * _VAR_FLOOR
    scores = np.zeros_like(raw)
    scores[ok] = raw[ok] / (t_norm * np.sqrt(var[ok]))
    np.clip(scores, -1.0, 1.0, out=scores)

    # scores within FFT rounding of the maximum count as ties; take the first row-major one
    flat = int(np.argmax(scores >= scores.max() - _TIE_TOL))
    py, px = divmod(flat, scores.shape[1])
    return ConfidenceMap(scores, MapPoint(float(px), float(py)), float(scores[py, px]))


def global_localize(frame, gmap: GeoMap, min_peak: float = 0.3, return_map: bool = False):
    """Window top-left of the best whole-map correlation, or :class:`NoFixError`."""
    conf = correlate(frame, gmap)
    if conf.peak_score < min_peak:
        raise NoFixError(f"no confident global fix (peak {conf.peak_score:.3f} < {min_peak})", conf)
    return (conf.peak, conf) if return_map else conf.peak


def zncc_direct(frame, gmap_or_img):
    """Sliding-window ZNCC in the spatial domain; a slow reference for :func:`correlate`."""
    tpl = np.asarray(getattr(frame, "image", frame), dtype=np.float64)
    img = np.asarray(getattr(gmap_or_img, "raster", gmap_or_img), dtype=np.float64)
    th, tw = tpl.shape
    t = tpl - tpl.mean()
    tn = np.sqrt((t * t).sum())
    out = np.zeros((img.shape[0] - th + 1, img.shape[1] - tw + 1))
    for y in range(out.shape[0]):
        for x in range(out.shape[1]):
            win = img[y:y + th, x:x + tw]
            wz = win - win.mean()
            wn = np.sqrt((wz * wz).sum())
            out[y, x] = (t * wz).sum() / (tn * wn) if wn > 0 else 0.0
    return out


def confidence_to_pgm(conf: ConfidenceMap, path) -> None:
    """Write the scores as an 8-bit PGM heat image (black = lowest, white = highest)."""
    s = conf.scores
    lo, hi = float(s.min()), float(s.max())
    scaled = np.zeros_like(s) if hi <= lo else (s - lo) / (hi - lo)
    pix = np.round(scaled * 255).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())

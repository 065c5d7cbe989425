"""Small raster helpers shared by the preprocessor, simulator and flow tracker."""

import numpy as np

_EDGE_TOL = 1e-6


def sample_bilinear(img, xs, ys, fill=0.0):
    """Bilinearly sample ``img`` at real-valued (x=col, y=row) coordinates.

    Samples outside ``[0, w-1] x [0, h-1]`` (beyond a tiny tolerance) get ``fill``.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inside = (xs >= -_EDGE_TOL) & (xs <= w - 1 + _EDGE_TOL) & (ys >= -_EDGE_TOL) & (ys <= h - 1 + _EDGE_TOL)
    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    return np.where(inside, out, fill)


def to_u8(img):
    return np.clip(np.round(img), 0, 255).astype(np.uint8)

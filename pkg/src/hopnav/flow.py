"""Shi-Tomasi corner selection and pyramidal Lucas-Kanade tracking."""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy import ndimage

_GAUSS5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
_SCHARR_D = np.array([-1.0, 0.0, 1.0]) / 2.0
_SCHARR_S = np.array([3.0, 10.0, 3.0]) / 16.0


def select_features(image, max_count=200, quality=0.01, min_dist_px=8, block=3, border=10):
    """Strongest Shi-Tomasi corners as an ``(n, 2)`` array of ``(x, y)``.

    A pixel qualifies when the smaller eigenvalue of its structure tensor is
    a 3x3 local maximum and at least ``quality`` times the global maximum.
    Candidates are accepted strongest-first unless closer than
    ``min_dist_px`` to an accepted one.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    gx = ndimage.sobel(img, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(img, axis=0, mode="nearest") / 8.0
    a = ndimage.uniform_filter(gx * gx, block, mode="nearest")
    b = ndimage.uniform_filter(gx * gy, block, mode="nearest")
    c = ndimage.uniform_filter(gy * gy, block, mode="nearest")
    lam = (a + c) / 2.0 - np.sqrt(((a - c) / 2.0) ** 2 + b * b)
    lam_max = lam.max() if lam.size else 0.0
    if not lam_max > 1e-9:
        return np.empty((0, 2))

    peaks = (lam >= quality * lam_max) & (lam == ndimage.maximum_filter(lam, 3, mode="nearest"))
    if border > 0:
        peaks[:border] = peaks[-border:] = False
        peaks[:, :border] = peaks[:, -border:] = False
    ys, xs = np.nonzero(peaks)
    order = np.argsort(-lam[ys, xs], kind="stable")
    xs, ys = xs[order], ys[order]

    cell = max(float(min_dist_px), 1.0)
    grid = {}
    out = []
    d2 = float(min_dist_px) ** 2
    for x, y in zip(xs.tolist(), ys.tolist()):
        gxi, gyi = int(x // cell), int(y // cell)
        ok = True
        for nx in (gxi - 1, gxi, gxi + 1):
            for ny in (gyi - 1, gyi, gyi + 1):
                for px, py in grid.get((nx, ny), ()):
                    if (px - x) ** 2 + (py - y) ** 2 < d2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            grid.setdefault((gxi, gyi), []).append((x, y))
            out.append((x, y))
            if len(out) >= max_count:
                break
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def build_pyramid(image, levels):
    pyr = [np.asarray(image, dtype=np.float64)]
    for _ in range(1, levels):
        prev = pyr[-1]
        if min(prev.shape) < 4:
            break
        sm = ndimage.correlate1d(prev, _GAUSS5, axis=0, mode="mirror")
        sm = ndimage.correlate1d(sm, _GAUSS5, axis=1, mode="mirror")
        pyr.append(sm[::2, ::2])
    return pyr


def _gradients(img):
    gx = ndimage.correlate1d(ndimage.correlate1d(img, _SCHARR_D, axis=1, mode="nearest"),
                             _SCHARR_S, axis=0, mode="nearest")
    gy = ndimage.correlate1d(ndimage.correlate1d(img, _SCHARR_D, axis=0, mode="nearest"),
                             _SCHARR_S, axis=1, mode="nearest")
    return gx, gy


@njit(cache=True)
def _bilinear(img, x, y):
    h, w = img.shape
    if x < 0.0:
        x = 0.0
    elif x > w - 1:
        x = w - 1.0
    if y < 0.0:
        y = 0.0
    elif y > h - 1:
        y = h - 1.0
    x0 = min(int(x), w - 2)
    y0 = min(int(y), h - 2)
    fx = x - x0
    fy = y - y0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x0 + 1] * fx
    bot = img[y0 + 1, x0] * (1.0 - fx) + img[y0 + 1, x0 + 1] * fx
    return top * (1.0 - fy) + bot * fy


@njit(cache=True)
def _lk_level(prev, gx, gy, curr, pts, guess, ok, half, max_iters, eps, min_eig):
    """One pyramid level of iterative LK for every still-valid point (in place)."""
    n = 2 * half + 1
    n_win = n * n
    T = np.empty((n, n))
    Ix = np.empty((n, n))
    Iy = np.empty((n, n))
    for p in range(pts.shape[0]):
        if not ok[p]:
            continue
        ux = pts[p, 0]
        uy = pts[p, 1]
        gxx = 0.0
        gxy = 0.0
        gyy = 0.0
        for i in range(n):
            for j in range(n):
                sx = ux + (j - half)
                sy = uy + (i - half)
                T[i, j] = _bilinear(prev, sx, sy)
                a = _bilinear(gx, sx, sy)
                b = _bilinear(gy, sx, sy)
                Ix[i, j] = a
                Iy[i, j] = b
                gxx += a * a
                gxy += a * b
                gyy += b * b
        det = gxx * gyy - gxy * gxy
        lam = ((gxx + gyy) / 2.0 - np.sqrt(((gxx - gyy) / 2.0) ** 2 + gxy * gxy)) / n_win
        if not (det > 0.0 and lam > min_eig):
            ok[p] = False
            continue
        nx = 0.0
        ny = 0.0
        for _ in range(max_iters):
            dx = guess[p, 0] + nx
            dy = guess[p, 1] + ny
            bx = 0.0
            by = 0.0
            for i in range(n):
                for j in range(n):
                    e = T[i, j] - _bilinear(curr, ux + (j - half) + dx, uy + (i - half) + dy)
                    bx += e * Ix[i, j]
                    by += e * Iy[i, j]
            ex = (gyy * bx - gxy * by) / det
            ey = (gxx * by - gxy * bx) / det
            nx += ex
            ny += ey
            if ex * ex + ey * ey < eps * eps:
                break
        guess[p, 0] += nx
        guess[p, 1] += ny


@njit(cache=True)
def _residuals(prev, curr, pts, disp, ok, half):
    n = 2 * half + 1
    out = np.zeros(pts.shape[0])
    diff = np.empty((n, n))
    for p in range(pts.shape[0]):
        if not ok[p]:
            continue
        mean = 0.0
        for i in range(n):
            for j in range(n):
                sx = pts[p, 0] + (j - half)
                sy = pts[p, 1] + (i - half)
                d = _bilinear(prev, sx, sy) - _bilinear(curr, sx + disp[p, 0], sy + disp[p, 1])
                diff[i, j] = d
                mean += d
        mean /= n * n
        acc = 0.0
        for i in range(n):
            for j in range(n):
                acc += abs(diff[i, j] - mean)
        out[p] = acc / (n * n)
    return out


class FlowTracker:
    """Pyramidal LK between consecutive frames, caching the last pyramid.

    Each level refines the displacement until the update falls below
    ``eps`` px or ``max_iters`` is reached; the estimate is doubled on the
    way down. Points with a weak structure tensor, a large mean-removed
    residual or a destination outside the frame are dropped.
    """

    def __init__(self, levels=4, window_px=21, max_iters=30, eps=0.01,
                 max_residual=24.0, min_eig=1e-3):
        self.levels = levels
        self.window_px = window_px
        self.max_iters = max_iters
        self.eps = eps
        self.max_residual = max_residual
        self.min_eig = min_eig
        self._cache = None

    def _pyramid(self, image):
        if self._cache is not None and self._cache[0] is image:
            return self._cache[1]
        pyr = build_pyramid(image, self.levels)
        return pyr, [_gradients(level) for level in pyr]

    def track(self, prev_image, curr_image, points):
        """Return ``(prev_pts, curr_pts)`` for the points that tracked successfully."""
        if np.shape(prev_image) != np.shape(curr_image):
            raise ValueError("frames must have equal size")
        pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
        prev_pyr, prev_grads = self._pyramid(prev_image)
        curr = self._pyramid(curr_image)
        self._cache = (curr_image, curr)
        curr_pyr = curr[0]
        if len(pts) == 0:
            return pts, pts.copy()

        half = self.window_px // 2
        ok = np.ones(len(pts), dtype=np.bool_)
        guess = np.zeros_like(pts)
        for lev in range(len(prev_pyr) - 1, -1, -1):
            scale = 2.0 ** lev
            _lk_level(prev_pyr[lev], prev_grads[lev][0], prev_grads[lev][1], curr_pyr[lev],
                      pts / scale, guess, ok, half, self.max_iters, self.eps, self.min_eig)
            if lev > 0:
                guess *= 2.0

        new = pts + guess
        h, w = curr_pyr[0].shape
        ok &= np.all(np.isfinite(new), axis=1)
        ok &= (new[:, 0] >= 0) & (new[:, 0] <= w - 1) & (new[:, 1] >= 0) & (new[:, 1] <= h - 1)
        resid = _residuals(prev_pyr[0], curr_pyr[0], pts, guess, ok, half)
        ok &= resid <= self.max_residual
        return pts[ok], new[ok]


def track_flow(prev_image, curr_image, points, levels=4, window_px=21, max_iters=30, eps=0.01,
               max_residual=24.0):
    tracker = FlowTracker(levels, window_px, max_iters, eps, max_residual)
    return tracker.track(prev_image, curr_image, points)

"""Holistic HOG descriptors and the per-pixel map lookup table.

Gradient votes are quantized to fixed point (``2**-VOTE_BITS`` intensity
units) through a lookup table over every integer ``(gx, gy)`` pair an 8-bit
image can produce. Cell histograms are therefore exact integer sums, which
is what lets the integral-histogram table reproduce :func:`compute_hog`
bit-for-bit. Block normalization only uses elementwise IEEE operations for
the same reason: numpy reductions may reassociate depending on array size.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .geodata import DataError, GeoMap

VOTE_BITS = 12
_VOTE_SCALE = float(2 ** VOTE_BITS)
_HYS_CLIP = 0.2
_EPS2 = 1e-12

CACHE_MAGIC = b"HOPTBL1"
_HEADER = struct.Struct("<7sB6I2I2IIII")  # magic, pad, params, map wh, lattice nx ny, D, map crc, data crc


@dataclass(frozen=True)
class HogParams:
    cell: int = 32
    block: int = 64
    block_stride: int = 32
    bins: int = 9
    window: int = 180

    def __post_init__(self):
        if min(self.cell, self.block, self.block_stride, self.bins, self.window) <= 0:
            raise ValueError("HOG parameters must be positive")
        if self.block % self.cell:
            raise ValueError("block must be a multiple of cell")
        if self.block % self.block_stride:
            raise ValueError("block_stride must divide block")
        if self.window < self.block:
            raise ValueError("window must be at least one block")
        if self.bins < 2:
            raise ValueError("need at least 2 orientation bins")

    @property
    def blocks_per_side(self) -> int:
        return (self.window - self.block) // self.block_stride + 1

    @property
    def cells_per_block(self) -> int:
        return self.block // self.cell

    @property
    def block_len(self) -> int:
        return self.cells_per_block ** 2 * self.bins

    @property
    def descriptor_len(self) -> int:
        return self.blocks_per_side ** 2 * self.block_len

    def cell_offsets(self):
        """Sorted distinct cell origins (along one axis) used by any block."""
        offs = {b * self.block_stride + k * self.cell
                for b in range(self.blocks_per_side) for k in range(self.cells_per_block)}
        return sorted(offs)


def compute_gradients(image):
    """Centered differences with replicated borders.

    Returns ``(magnitude, orientation)``; orientation is unsigned, in degrees
    within ``[0, 180)``.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 3:
        raise ValueError("image must be 2-D and at least 3x3")
    gx, gy = _centered_diff(img)
    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    ang[ang >= 180.0] = 0.0
    return mag, ang


def _centered_diff(img):
    p = np.pad(img, 1, mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    return gx, gy


@lru_cache(maxsize=8)
def _vote_lut(bins: int):
    g = np.arange(-255, 256, dtype=np.float64)
    gx, gy = np.meshgrid(g, g)  # indexed [gy + 255, gx + 255]
    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    ang[ang >= 180.0] = 0.0
    pos = ang / (180.0 / bins) - 0.5
    lo = np.floor(pos)
    frac = pos - lo
    b0 = (lo.astype(np.int64) % bins).astype(np.intp)
    mq = np.round(mag * _VOTE_SCALE).astype(np.int64)
    v1 = np.round(mq * frac).astype(np.int64)
    v0 = mq - v1
    for arr in (b0, v0, v1):
        arr.setflags(write=False)
    return b0, v0, v1


def _votes(gx, gy, bins):
    """Per-pixel integer histograms (shape ``gx.shape + (bins,)``) for integer gradients."""
    b0_lut, v0_lut, v1_lut = _vote_lut(bins)
    iy = gy.astype(np.intp) + 255
    ix = gx.astype(np.intp) + 255
    b0 = b0_lut[iy, ix]
    b1 = b0 + 1
    b1[b1 == bins] = 0
    out = np.zeros(gx.shape + (bins,), dtype=np.int64)
    flat = out.reshape(-1, bins)
    rows = np.arange(flat.shape[0])
    flat[rows, b0.ravel()] = v0_lut[iy, ix].ravel()
    flat[rows, b1.ravel()] += v1_lut[iy, ix].ravel()
    return out


def _as_u8(image):
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.round(img), 0, 255).astype(np.uint8)
    return img


def _normalize_blocks(cells, params: HogParams):
    """L2-Hys normalize cell histograms into descriptors.

    ``cells`` has shape ``(..., n_off, n_off, bins)`` indexed by the cell
    origins of :meth:`HogParams.cell_offsets`.
    """
    offs = params.cell_offsets()
    where = {o: i for i, o in enumerate(offs)}
    nb, cpb = params.blocks_per_side, params.cells_per_block
    blocks = []
    for by in range(nb):
        for bx in range(nb):
            parts = []
            for ky in range(cpb):
                iy = where[by * params.block_stride + ky * params.cell]
                for kx in range(cpb):
                    ix = where[bx * params.block_stride + kx * params.cell]
                    parts.append(cells[..., iy, ix, :])
            blocks.append(np.concatenate(parts, axis=-1))
    v = np.stack(blocks, axis=-2) / _VOTE_SCALE  # (..., n_blocks, block_len)
    v = v / np.sqrt(_sumsq(v) + _EPS2)[..., None]
    v = np.minimum(v, _HYS_CLIP)
    v = v / np.sqrt(_sumsq(v) + _EPS2)[..., None]
    return v.reshape(v.shape[:-2] + (-1,)).astype(np.float32)


def _sumsq(v):
    # fixed-order accumulation; see module docstring
    acc = v[..., 0] * v[..., 0]
    for k in range(1, v.shape[-1]):
        acc = acc + v[..., k] * v[..., k]
    return acc


def compute_hog(image, params: HogParams = HogParams()):
    """HOG descriptor of a whole ``window x window`` image, blocks in row-major order."""
    img = _as_u8(image)
    if img.shape != (params.window, params.window):
        raise ValueError(f"expected {params.window}x{params.window} image, got {img.shape}")
    gx, gy = _centered_diff(img.astype(np.int64))
    votes = _votes(gx, gy, params.bins)
    offs = params.cell_offsets()
    c = params.cell
    cells = np.empty((len(offs), len(offs), params.bins), dtype=np.int64)
    for i, oy in enumerate(offs):
        for j, ox in enumerate(offs):
            cells[i, j] = votes[oy:oy + c, ox:ox + c].sum(axis=(0, 1))
    return _normalize_blocks(cells, params)


def hog_distance(a, b):
    """Euclidean distance between unit-normalized descriptors, halved into ``[0, 1]``.

    ``b`` may be a single descriptor or a stack of them (one per row). An
    all-zero descriptor stands in as the first basis vector.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.shape[-1] != a.shape[0]:
        raise ValueError(f"descriptor length mismatch: {a.shape} vs {b.shape}")
    ua = _unit(a[None, :])[0]
    ub = _unit(b.reshape(-1, a.shape[0]))
    d = np.sqrt(((ub - ua) ** 2).sum(axis=1)) / 2.0
    return float(d[0]) if b.ndim == 1 else d


def _unit(v):
    n = np.sqrt((v * v).sum(axis=1))
    out = np.zeros_like(v)
    ok = n > 0
    out[ok] = v[ok] / n[ok, None]
    out[~ok, 0] = 1.0
    return out


def map_crc(gmap: GeoMap) -> int:
    return zlib.crc32(np.ascontiguousarray(gmap.raster).tobytes()) & 0xFFFFFFFF


@dataclass(frozen=True, eq=False)
class HogTable:
    """Map descriptors for every lattice window top-left.

    ``descriptors[iy, ix]`` belongs to the window at
    ``(ix * lattice_stride, iy * lattice_stride)``.
    """

    map_size: tuple
    lattice_stride: int
    descriptors: np.ndarray
    params: HogParams
    map_crc: int = 0

    @property
    def shape(self):
        return self.descriptors.shape[:2]

    @property
    def n_entries(self) -> int:
        ny, nx = self.shape
        return ny * nx

    @property
    def max_offset(self):
        w, h = self.map_size
        return w - self.params.window, h - self.params.window

    def _snap(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        mx, my = self.max_offset
        if np.any((x < 0) | (y < 0) | (x > mx) | (y > my)) or not np.all(np.isfinite(x + y)):
            raise IndexError(f"window offset out of range: ({x}, {y})")
        ny, nx = self.shape
        ix = np.minimum(np.floor(x / self.lattice_stride + 0.5).astype(np.intp), nx - 1)
        iy = np.minimum(np.floor(y / self.lattice_stride + 0.5).astype(np.intp), ny - 1)
        return ix, iy

    def lookup(self, x, y):
        ix, iy = self._snap(x, y)
        return self.descriptors[iy, ix]


def table_lookup(table: HogTable, x, y):
    return table.lookup(x, y)


def _border_votes(m, bins):
    """Votes for every pixel under each window-border gradient variant."""
    m = m.astype(np.int64)
    p = np.pad(m, 1, mode="edge")
    right, left = p[1:-1, 2:], p[1:-1, :-2]
    down, up = p[2:, 1:-1], p[:-2, 1:-1]
    gx = {"c": right - left, "L": right - m, "R": m - left}
    gy = {"c": down - up, "T": down - m, "B": m - up}
    return {kx + ky: _votes(gx[kx], gy[ky], bins) for kx in gx for ky in gy}


def _lattice(n, stride):
    return np.arange(0, n, stride, dtype=np.intp)


def build_table(gmap: GeoMap, params: HogParams = HogParams(), lattice_stride: int = 1,
                chunk_rows: int = 24) -> HogTable:
    """Descriptors at every lattice offset via integral histograms.

    Cost is linear in map area: cell sums come from a summed-area table of
    per-pixel votes, plus 1-D running sums that swap in the replicated-border
    gradients a standalone window would see along its own edges.
    """
    W = params.window
    h, w = gmap.h, gmap.w
    if W > w or W > h:
        raise DataError(f"window {W} larger than map {w}x{h}")
    if lattice_stride < 1:
        raise ValueError("lattice_stride must be >= 1")

    V = _border_votes(gmap.raster, params.bins)
    base = V["cc"]
    integral = np.zeros((h + 1, w + 1, params.bins), dtype=np.int64)
    np.cumsum(np.cumsum(base, axis=0), axis=1, out=integral[1:, 1:])

    def col_run(diff):  # running sums down each column
        out = np.zeros((h + 1, w, params.bins), dtype=np.int64)
        np.cumsum(diff, axis=0, out=out[1:])
        return out

    def row_run(diff):  # running sums along each row
        out = np.zeros((h, w + 1, params.bins), dtype=np.int64)
        np.cumsum(diff, axis=1, out=out[:, 1:])
        return out

    run_L, run_R = col_run(V["Lc"] - base), col_run(V["Rc"] - base)
    run_T, run_B = row_run(V["cT"] - base), row_run(V["cB"] - base)
    corner = {k: V[k] - V[k[0] + "c"] - V["c" + k[1]] + base for k in ("LT", "RT", "LB", "RB")}
    del V

    xs = _lattice(w - W + 1, lattice_stride)
    ys = _lattice(h - W + 1, lattice_stride)
    offs = params.cell_offsets()
    c = params.cell
    desc = np.empty((len(ys), len(xs), params.descriptor_len), dtype=np.float32)

    for start in range(0, len(ys), chunk_rows):
        yy = ys[start:start + chunk_rows]
        cells = np.empty((len(yy), len(xs), len(offs), len(offs), params.bins), dtype=np.int64)
        for i, oy in enumerate(offs):
            r0, r1 = (yy + oy)[:, None], (yy + oy + c)[:, None]
            for j, ox in enumerate(offs):
                c0, c1 = (xs + ox)[None, :], (xs + ox + c)[None, :]
                box = integral[r1, c1] - integral[r0, c1] - integral[r1, c0] + integral[r0, c0]
                left, right = ox == 0, ox + c == W
                top, bottom = oy == 0, oy + c == W
                if left:
                    box += run_L[r1, xs[None, :]] - run_L[r0, xs[None, :]]
                if right:
                    box += run_R[r1, (xs + W - 1)[None, :]] - run_R[r0, (xs + W - 1)[None, :]]
                if top:
                    box += run_T[yy[:, None], c1] - run_T[yy[:, None], c0]
                if bottom:
                    box += run_B[(yy + W - 1)[:, None], c1] - run_B[(yy + W - 1)[:, None], c0]
                rows = {"T": yy[:, None], "B": (yy + W - 1)[:, None]}
                cols = {"L": xs[None, :], "R": (xs + W - 1)[None, :]}
                for kx, on_x in (("L", left), ("R", right)):
                    for ky, on_y in (("T", top), ("B", bottom)):
                        if on_x and on_y:
                            box += corner[kx + ky][rows[ky], cols[kx]]
                cells[:, :, i, j] = box
        desc[start:start + len(yy)] = _normalize_blocks(cells, params)

    return HogTable((w, h), lattice_stride, desc, params, map_crc(gmap))


def save_table(table: HogTable, path) -> None:
    data = np.ascontiguousarray(table.descriptors, dtype="<f4")
    p = table.params
    ny, nx, D = data.shape
    header = _HEADER.pack(
        CACHE_MAGIC, 0, p.cell, p.block, p.block_stride, p.bins, p.window, table.lattice_stride,
        table.map_size[0], table.map_size[1], nx, ny, D, table.map_crc,
        zlib.crc32(memoryview(data).cast("B")) & 0xFFFFFFFF,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        data.tofile(fh)


class CacheError(DataError):
    pass


def load_table(path) -> HogTable:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing table cache: {path}")
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise CacheError(f"{path}: truncated header")
        (magic, _, cell, block, stride, bins, window, lattice, w, h, nx, ny, D,
         mcrc, dcrc) = _HEADER.unpack(raw)
        if magic != CACHE_MAGIC:
            raise CacheError(f"{path}: not a HOG table cache")
        data = np.fromfile(fh, dtype="<f4")
    try:
        params = HogParams(cell, block, stride, bins, window)
    except ValueError as exc:
        raise CacheError(f"{path}: bad parameters in header") from exc
    if data.size != nx * ny * D or D != params.descriptor_len:
        raise CacheError(f"{path}: size mismatch (truncated or corrupted)")
    if zlib.crc32(memoryview(data).cast("B")) & 0xFFFFFFFF != dcrc:
        raise CacheError(f"{path}: checksum error")
    return HogTable((w, h), lattice, data.reshape(ny, nx, D).astype(np.float32, copy=False), params, mcrc)


def expected_entries(w: int, h: int, window: int, stride: int = 1) -> int:
    return math.ceil((w - window + 1) / stride) * math.ceil((h - window + 1) / stride)

"""Raster maps, flight datasets and trajectory files.

Every position in this package lives in the map pixel frame: origin at the
top-left of the reference raster, ``x`` grows to the east (columns) and ``y``
to the south (rows).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from PIL import Image


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


SOURCES = ("registered", "predicted", "reinit")
TRAJECTORY_HEADER = ["frame_index", "x_px", "y_px", "x_m", "y_m", "source", "min_distance", "psr"]
METADATA_FILE = "metadata.jsonl"
FRAME_PATTERN = "frame_{:06d}.png"


class MapPoint(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True, eq=False)
class GeoMap:
    raster: np.ndarray
    px_per_m: float
    origin_label: Optional[str] = None

    def __post_init__(self):
        if not (math.isfinite(self.px_per_m) and self.px_per_m > 0):
            raise DataError(f"px_per_m must be positive and finite, got {self.px_per_m}")
        raster = np.asarray(self.raster)
        if raster.ndim != 2:
            raise DataError("map raster must be a 2-D grayscale image")
        if raster.dtype != np.uint8:
            raster = np.clip(np.round(raster), 0, 255).astype(np.uint8)
        raster.setflags(write=False)
        object.__setattr__(self, "raster", raster)

    @property
    def w(self) -> int:
        return self.raster.shape[1]

    @property
    def h(self) -> int:
        return self.raster.shape[0]

    def check_window(self, s_i: int) -> None:
        """Raise unless the map fits at least a 2x2 arrangement of ``s_i`` windows."""
        if self.w < 2 * s_i or self.h < 2 * s_i:
            raise DataError(f"map {self.w}x{self.h} too small for crop size {s_i}")


@dataclass(frozen=True, eq=False)
class FrameRecord:
    image: np.ndarray
    t: float
    yaw: float
    roll: float = 0.0
    pitch: float = 0.0
    omega: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    altitude: float = 80.0
    focal_px: float = 252.0
    index: int = 0

    def __post_init__(self):
        if not self.altitude > 0:
            raise DataError(f"altitude must be > 0, got {self.altitude}")
        if not self.focal_px > 0:
            raise DataError(f"focal_px must be > 0, got {self.focal_px}")
        object.__setattr__(self, "omega", tuple(float(v) for v in self.omega))


@dataclass(frozen=True)
class PositionEstimate:
    """Per-frame tracker output.

    ``position`` is the top-left pixel of the matched map window; the UAV
    itself sits at the window center, see :attr:`center`.
    """

    position: MapPoint
    source: str
    min_distance: float = float("nan")
    psr: float = float("nan")
    window: int = 0

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")

    @property
    def center(self) -> MapPoint:
        half = self.window / 2.0
        return MapPoint(self.position[0] + half, self.position[1] + half)


@dataclass
class Trajectory:
    entries: List[Tuple[int, PositionEstimate]] = field(default_factory=list)

    def append(self, frame_index: int, estimate: PositionEstimate) -> None:
        if self.entries and frame_index <= self.entries[-1][0]:
            raise ValueError("trajectory frame indices must strictly increase")
        self.entries.append((frame_index, estimate))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def to_gray_u8(img) -> np.ndarray:
    """Convert a PIL image or array to 8-bit luma (BT.601 weights for color)."""
    if isinstance(img, Image.Image):
        if img.mode in ("I;16", "I", "F"):
            arr = np.asarray(img, dtype=np.float64)
            return np.clip(np.round(arr), 0, 255).astype(np.uint8)
        return np.asarray(img.convert("L"), dtype=np.uint8)
    arr = np.asarray(img)
    if arr.ndim == 3:
        rgb = arr[..., :3].astype(np.float64)
        arr = rgb @ np.array([0.299, 0.587, 0.114])
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr), 0, 255).astype(np.uint8)
    return arr


def read_image(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing image file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            return to_gray_u8(im)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"unreadable image {path}: {exc}") from exc


def write_image(path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="L").save(path, optimize=False)


def load_map(map_image_path, map_meta_path, s_i: Optional[int] = None) -> GeoMap:
    raster = read_image(map_image_path)
    meta_path = Path(map_meta_path)
    if not meta_path.is_file():
        raise DataError(f"missing map meta file: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
        px_per_m = float(meta["px_per_m"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"bad map meta {meta_path}: {exc}") from exc
    gmap = GeoMap(raster, px_per_m, meta.get("origin_label"))
    if s_i is not None:
        gmap.check_window(s_i)
    return gmap


def save_map(gmap: GeoMap, image_path, meta_path) -> None:
    write_image(image_path, gmap.raster)
    meta = {"px_per_m": gmap.px_per_m}
    if gmap.origin_label is not None:
        meta["origin_label"] = gmap.origin_label
    Path(meta_path).write_text(json.dumps(meta, indent=2) + "\n")


def meters_to_px(d_m, gmap: GeoMap):
    return d_m * gmap.px_per_m


def px_to_meters(d_px, gmap: GeoMap):
    return d_px / gmap.px_per_m


def _record_from_meta(meta: dict, image: np.ndarray) -> FrameRecord:
    omega = meta.get("omega", [0.0, 0.0, 0.0])
    if len(omega) != 3:
        raise DataError(f"frame {meta.get('index')}: omega must have 3 components")
    return FrameRecord(
        image=image,
        t=float(meta["t"]),
        yaw=float(meta["yaw"]),
        roll=float(meta.get("roll", 0.0)),
        pitch=float(meta.get("pitch", 0.0)),
        omega=tuple(float(v) for v in omega),
        altitude=float(meta["altitude"]),
        focal_px=float(meta["focal_px"]),
        index=int(meta["index"]),
    )


def read_metadata(dir_path) -> List[dict]:
    meta_path = Path(dir_path) / METADATA_FILE
    if not meta_path.is_file():
        raise DataError(f"missing {METADATA_FILE} in {dir_path}")
    rows = []
    for lineno, line in enumerate(meta_path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{meta_path}:{lineno}: {exc}") from exc
    return rows


def load_dataset(dir_path) -> List[FrameRecord]:
    """Read ``frame_%06d.png`` images plus ``metadata.jsonl`` into time-ordered records."""
    dir_path = Path(dir_path)
    if not dir_path.is_dir():
        raise DataError(f"dataset directory not found: {dir_path}")
    rows = read_metadata(dir_path)
    indices = set()
    for row in rows:
        try:
            idx = int(row["index"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"metadata row without index: {row}") from exc
        if idx in indices:
            raise DataError(f"duplicate frame index {idx}")
        indices.add(idx)
    on_disk = {p.name for p in dir_path.glob("frame_*.png")}
    described = {FRAME_PATTERN.format(i) for i in indices}
    orphans = sorted(on_disk - described)
    if orphans:
        raise DataError(f"no metadata line for image(s): {', '.join(orphans[:3])}")

    rows.sort(key=lambda r: float(r["t"]))
    records = []
    for row in rows:
        image = read_image(dir_path / FRAME_PATTERN.format(int(row["index"])))
        try:
            rec = _record_from_meta(row, image)
        except KeyError as exc:
            raise DataError(f"frame {row.get('index')}: missing field {exc}") from exc
        if records and not rec.t > records[-1].t:
            raise DataError(f"timestamps not strictly increasing at frame {rec.index}")
        records.append(rec)
    return records


def frame_metadata(rec: FrameRecord) -> dict:
    return {
        "index": rec.index,
        "t": rec.t,
        "yaw": rec.yaw,
        "roll": rec.roll,
        "pitch": rec.pitch,
        "omega": list(rec.omega),
        "altitude": rec.altitude,
        "focal_px": rec.focal_px,
    }


def write_dataset(records: Iterable[FrameRecord], dir_path) -> None:
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    lines = []
    for rec in records:
        write_image(dir_path / FRAME_PATTERN.format(rec.index), rec.image)
        lines.append(json.dumps(frame_metadata(rec)))
    (dir_path / METADATA_FILE).write_text("".join(line + "\n" for line in lines))


def _fmt(v: float) -> str:
    return "nan" if not math.isfinite(v) else f"{v:.6f}"


def write_trajectory(traj: Trajectory, gmap: GeoMap, path) -> None:
    """Write one CSV row per frame; positions are the UAV (window center) in px and m."""
    try:
        fh = open(path, "w", newline="")
    except OSError as exc:
        raise DataError(f"cannot write trajectory to {path}: {exc}") from exc
    with fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_HEADER)
        for idx, est in traj:
            cx, cy = est.center
            writer.writerow([
                idx, _fmt(cx), _fmt(cy),
                _fmt(px_to_meters(cx, gmap)), _fmt(px_to_meters(cy, gmap)),
                est.source, _fmt(est.min_distance), _fmt(est.psr),
            ])


class TrajectoryRow(NamedTuple):
    frame_index: int
    x_px: float
    y_px: float
    x_m: float
    y_m: float
    source: str
    min_distance: float
    psr: float


def read_trajectory(path) -> List[TrajectoryRow]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing trajectory file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRAJECTORY_HEADER:
            raise DataError(f"{path}: unexpected trajectory header {header}")
        rows = []
        for rec in reader:
            if not rec:
                continue
            try:
                rows.append(TrajectoryRow(
                    int(rec[0]), float(rec[1]), float(rec[2]), float(rec[3]), float(rec[4]),
                    rec[5], float(rec[6]), float(rec[7]),
                ))
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}: bad row {rec}") from exc
    return rows


GROUNDTRUTH_HEADER = ["frame_index", "x_m", "y_m", "yaw_rad", "altitude_m"]


class GroundTruthRow(NamedTuple):
    frame_index: int
    x_m: float
    y_m: float
    yaw_rad: float
    altitude_m: float


def write_groundtruth(rows: Sequence[GroundTruthRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GROUNDTRUTH_HEADER)
        for r in rows:
            writer.writerow([r.frame_index, f"{r.x_m:.6f}", f"{r.y_m:.6f}",
                             f"{r.yaw_rad:.9f}", f"{r.altitude_m:.6f}"])


def read_groundtruth(path) -> List[GroundTruthRow]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing ground-truth file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != GROUNDTRUTH_HEADER:
            raise DataError(f"{path}: unexpected ground-truth header {header}")
        try:
            return [GroundTruthRow(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]))
                    for r in reader if r]
        except (ValueError, IndexError) as exc:
            raise DataError(f"{path}: malformed row") from exc

"""Run configuration from INI files flattened to dotted keys.

Every ``[section]`` entry ``key = value`` becomes ``section.key``. Values
are parsed as Python literals where possible (numbers, tuples, lists,
``true``/``false``/``none``) and kept as strings otherwise. Relative paths
are resolved against the directory of the config file.

Sections and keys::

    [paths]   map, map_meta, dataset, table, groundtruth
    [map]     width, height, px_per_m, seed       (synthetic map for simulate)
    [hog]     cell, block, block_stride, bins, window, lattice_stride
    [search]  n_particles, coarse_side, coarse_step, fine_side, fine_step,
              sigma_w, tau_d, reinit_dist_px, psr_radius
    [motion]  estimator, max_count, quality, min_dist_px, levels, window_px,
              max_iters, eps, max_residual, min_matches, ransac_thresh_px,
              ransac_iters, flow_noise_px
    [sim]     any SimConfig field
    [run]     mode, seed, min_peak, max_init_frames, emit_confidence_maps,
              emit_plot
"""

from __future__ import annotations

import ast
import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .descriptor import HogParams
from .motion import MotionParams
from .simulator import SimConfig
from .tracker import MODES, SearchParams


class ConfigError(ValueError):
    pass


PATH_KEYS = ("map", "map_meta", "dataset", "table", "groundtruth")


def parse_value(text: str):
    s = text.strip()
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(s)
    except (ValueError, SyntaxError):
        return s


def read_flat(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    flat = {}
    for sect in cp.sections():
        for key, value in cp.items(sect):
            flat[f"{sect}.{key.replace('-', '_')}"] = parse_value(value)
    return flat


def _section(flat, name):
    pre = name + "."
    return {k[len(pre):]: v for k, v in flat.items() if k.startswith(pre)}


def _build(cls, kw, what):
    names = {f.name for f in fields(cls)}
    unknown = set(kw) - names
    if unknown:
        raise ConfigError(f"unknown {what} keys: {', '.join(sorted(unknown))}")
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what} parameters: {exc}") from exc


@dataclass
class MapSpec:
    width: int = 850
    height: int = 500
    px_per_m: float = 3.15
    seed: int = 0


@dataclass
class RunConfig:
    paths: dict = field(default_factory=dict)
    map: MapSpec = field(default_factory=MapSpec)
    hog: HogParams = field(default_factory=HogParams)
    lattice_stride: int = 1
    search: SearchParams = field(default_factory=SearchParams)
    motion: MotionParams = field(default_factory=MotionParams)
    sim: SimConfig = field(default_factory=SimConfig)
    mode: str = "hop"
    seed: int = 0
    min_peak: float = 0.3
    max_init_frames: int = 10
    emit_confidence_maps: bool = False
    emit_plot: bool = True

    def path(self, key) -> Optional[Path]:
        v = self.paths.get(key)
        return None if v is None else Path(v)

    @classmethod
    def from_flat(cls, flat: dict, base_dir=None) -> "RunConfig":
        known = {"paths", "map", "hog", "search", "motion", "sim", "run"}
        bad = sorted({k.split(".", 1)[0] for k in flat} - known)
        if bad:
            raise ConfigError(f"unknown config section(s): {', '.join(bad)}")
        base = Path(base_dir) if base_dir is not None else None

        paths = _section(flat, "paths")
        unknown = set(paths) - set(PATH_KEYS)
        if unknown:
            raise ConfigError(f"unknown paths keys: {', '.join(sorted(unknown))}")
        for k, v in list(paths.items()):
            if v is not None:
                p = Path(str(v))
                paths[k] = str(base / p) if base is not None and not p.is_absolute() else str(p)

        hog_kw = _section(flat, "hog")
        stride = int(hog_kw.pop("lattice_stride", 1))
        if stride < 1:
            raise ConfigError("hog.lattice_stride must be >= 1")
        try:
            sim = SimConfig.from_flat(_section(flat, "sim"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid sim parameters: {exc}") from exc

        run = _section(flat, "run")
        run_keys = {"mode", "seed", "min_peak", "max_init_frames", "emit_confidence_maps", "emit_plot"}
        unknown = set(run) - run_keys
        if unknown:
            raise ConfigError(f"unknown run keys: {', '.join(sorted(unknown))}")
        cfg = cls(
            paths=paths,
            map=_build(MapSpec, _section(flat, "map"), "map"),
            hog=_build(HogParams, hog_kw, "hog"),
            lattice_stride=stride,
            search=_build(SearchParams, _section(flat, "search"), "search"),
            motion=_build(MotionParams, _section(flat, "motion"), "motion"),
            sim=sim,
            **run,
        )
        cfg.validate()
        return cfg

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not -1.0 <= self.min_peak <= 1.0:
            raise ConfigError("run.min_peak must lie in [-1, 1]")
        if self.max_init_frames < 1:
            raise ConfigError("run.max_init_frames must be >= 1")


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Read ``path`` (optional), apply dotted-key ``overrides`` and validate."""
    flat = read_flat(path) if path is not None else {}
    flat.update(overrides or {})
    base = Path(path).resolve().parent if path is not None else None
    return RunConfig.from_flat(flat, base)


def parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    key, value = text.split("=", 1)
    key = key.strip().replace("-", "_")
    if "." not in key:
        raise ConfigError(f"override key must be dotted (section.key), got {key!r}")
    return key, parse_value(value)

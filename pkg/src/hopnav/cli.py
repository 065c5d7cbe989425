"""Command-line entry point: simulate, build-table, localize, evaluate, plot, calibrate.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 pipeline abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import ConfigError, RunConfig, load_config, parse_override
from .descriptor import CacheError, build_table, load_table, map_crc, save_table
from .evaluate import evaluate, format_report
from .geodata import (DataError, GeoMap, load_dataset, load_map, read_groundtruth, read_trajectory,
                      save_map, write_trajectory)
from .globalinit import confidence_to_pgm
from .tracker import MODES, PipelineAbort, calibrate_tau, run_pipeline

log = logging.getLogger("hopnav")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ABORT = 0, 1, 2, 3
TABLE_FILE = "map.hogtbl"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _say(args, *lines):
    if not args.quiet:
        for line in lines:
            print(line)


def _out_dir(args, default="out") -> Path:
    out = Path(args.out if args.out is not None else default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> RunConfig:
    overrides = dict(parse_override(s) for s in args.set or ())
    if args.seed is not None:
        overrides["run.seed"] = args.seed
        overrides["sim.seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        overrides["run.mode"] = args.mode
    if args.emit_confidence_maps:
        overrides["run.emit_confidence_maps"] = True
    for key in ("dataset", "map", "map_meta", "table", "groundtruth"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[f"paths.{key}"] = str(Path(v).resolve())
    return load_config(args.config, overrides)


def _dataset_dir(cfg: RunConfig) -> Path:
    d = cfg.path("dataset")
    if d is None:
        raise UsageError("no dataset given (use --dataset or paths.dataset)")
    return d


def _load_map(cfg: RunConfig) -> GeoMap:
    img = cfg.path("map")
    if img is None:
        d = cfg.path("dataset")
        if d is None:
            raise UsageError("no map given (use --map or paths.map)")
        img = d / "map.png"
    meta = cfg.path("map_meta") or img.with_suffix(".json")
    return load_map(img, meta, cfg.hog.window)


def _groundtruth_path(cfg: RunConfig) -> Optional[Path]:
    p = cfg.path("groundtruth")
    if p is not None:
        return p
    d = cfg.path("dataset")
    if d is not None and (d / "groundtruth.csv").is_file():
        return d / "groundtruth.csv"
    return None


def cmd_simulate(args) -> int:
    from .simulator import emit_dataset, synthetic_map

    cfg = _config(args)
    out = Path(args.out) if args.out is not None else cfg.path("dataset")
    if out is None:
        raise UsageError("no output directory (use --out or paths.dataset)")
    if cfg.path("map") is not None:
        gmap = _load_map(cfg)
    else:
        m = cfg.map
        gmap = synthetic_map(m.width, m.height, m.px_per_m, m.seed)
    out.mkdir(parents=True, exist_ok=True)
    gt = emit_dataset(cfg.sim, gmap, out)
    save_map(gmap, out / "map.png", out / "map.json")
    _say(args, f"wrote {len(gt)} frames to {out}")
    return EXIT_OK


def cmd_build_table(args) -> int:
    cfg = _config(args)
    gmap = _load_map(cfg)
    if args.out is None and cfg.path("table") is not None:
        dest = cfg.path("table")
        dest.parent.mkdir(parents=True, exist_ok=True)
    else:
        dest = _out_dir(args) / TABLE_FILE
    t0 = time.perf_counter()
    table = build_table(gmap, cfg.hog, cfg.lattice_stride)
    save_table(table, dest)
    _say(args, f"{table.n_entries} entries ({table.params.descriptor_len} floats each) -> {dest}"
               f" in {time.perf_counter() - t0:.1f} s")
    return EXIT_OK


def _table_for(cfg: RunConfig, gmap: GeoMap, out: Path):
    cand = cfg.path("table") or out / TABLE_FILE
    if cand.is_file():
        table = load_table(cand)
        if table.map_crc != map_crc(gmap) or table.params != cfg.hog:
            raise CacheError(f"{cand} was built for a different map or HOG parameters")
        return table
    if cfg.path("table") is not None:
        raise DataError(f"table cache not found: {cand}")
    log.info("no table cache, building in memory")
    return build_table(gmap, cfg.hog, cfg.lattice_stride)


def cmd_localize(args) -> int:
    from .evaluate import evaluate as _eval
    from .plotting import plot_match_statistics, plot_paths

    cfg = _config(args)
    out = _out_dir(args)
    frames = load_dataset(_dataset_dir(cfg))
    if not frames:
        raise DataError("dataset has no frames")
    gmap = _load_map(cfg)
    table = _table_for(cfg, gmap, out)

    on_conf = None
    if cfg.emit_confidence_maps:
        conf_dir = out / "confidence"
        conf_dir.mkdir(exist_ok=True)

        def on_conf(index, conf):
            confidence_to_pgm(conf, conf_dir / f"frame_{index:06d}.pgm")

    t0 = time.perf_counter()
    result = run_pipeline(frames, gmap, table, cfg.search, cfg.motion, cfg.mode, cfg.seed,
                          cfg.min_peak, cfg.max_init_frames, on_conf)
    wall = time.perf_counter() - t0

    traj_path = out / f"trajectory_{cfg.mode}.csv"
    write_trajectory(result.trajectory, gmap, traj_path)
    rows = read_trajectory(traj_path)
    src = [r.source for r in rows]
    summary = {
        "mode": cfg.mode,
        "seed": int(cfg.seed),
        "frames": len(rows),
        "registered_fraction": round(src.count("registered") / len(rows), 6),
        "predicted_fraction": round(src.count("predicted") / len(rows), 6),
        "reinit_count": src.count("reinit"),
        "rmse_m": None,
    }
    gt_path = _groundtruth_path(cfg)
    gt = read_groundtruth(gt_path) if gt_path is not None else None
    if gt is not None:
        summary["rmse_m"] = round(_eval(rows, gt).rmse_m, 6)
    _write_json(out / f"summary_{cfg.mode}.json", summary)
    timing = {"wall_s": round(wall, 3), "hz": round(len(rows) / wall, 3) if wall > 0 else None}
    _write_json(out / f"timing_{cfg.mode}.json", timing)

    if cfg.emit_plot:
        plot_paths({cfg.mode: rows}, gt, out / f"paths_{cfg.mode}.svg")
        if cfg.mode != "of_only":
            plot_match_statistics(rows, out / f"stats_{cfg.mode}.svg", cfg.search.tau_d)

    rmse = "n/a" if summary["rmse_m"] is None else f"{summary['rmse_m']:.3f} m"
    _say(args,
         f"mode {cfg.mode}: {len(rows)} frames",
         f"registered {100 * summary['registered_fraction']:.1f}%  "
         f"predicted {100 * summary['predicted_fraction']:.1f}%  reinit {summary['reinit_count']}",
         f"rmse {rmse}",
         f"wall {wall:.1f} s  ({timing['hz']} Hz)",
         f"trajectory -> {traj_path}")
    return EXIT_OK


def _label(path: Path) -> str:
    stem = path.stem
    return stem[len("trajectory_"):] if stem.startswith("trajectory_") else stem


def cmd_evaluate(args) -> int:
    from .plotting import plot_error_series

    cfg = _config(args)
    out = _out_dir(args)
    gt_path = _groundtruth_path(cfg)
    if gt_path is None:
        raise UsageError("no ground truth given (use --groundtruth or paths.groundtruth)")
    gt = read_groundtruth(gt_path)
    errors = {}
    for p in map(Path, args.trajectories):
        rows = read_trajectory(p)
        m = evaluate(rows, gt)
        label = _label(p)
        errors[label] = m.errors_m
        _write_json(out / f"metrics_{label}.json", m.summary())
        with open(out / f"errors_{label}.csv", "w") as fh:
            fh.write("frame_index,error_m,source\n")
            for r, e in zip(rows, m.errors_m):
                fh.write(f"{r.frame_index},{e:.6f},{r.source}\n")
        _say(args, *format_report(m, label))
    if cfg.emit_plot:
        plot_error_series(errors, out / "errors.svg")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_match_statistics, plot_paths

    cfg = _config(args)
    out = _out_dir(args)
    trajs = {_label(Path(p)): read_trajectory(p) for p in args.trajectories}
    gt_path = _groundtruth_path(cfg)
    gt = read_groundtruth(gt_path) if gt_path is not None else None
    plot_paths(trajs, gt, out / "paths.svg")
    written = ["paths.svg"]
    tau = args.tau if args.tau is not None else cfg.search.tau_d
    for label, rows in trajs.items():
        if any(np.isfinite(r.min_distance) for r in rows):
            plot_match_statistics(rows, out / f"stats_{label}.svg", tau,
                                  tuple(args.segment) if args.segment else None)
            written.append(f"stats_{label}.svg")
    _say(args, *(f"wrote {out / w}" for w in written))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .plotting import plot_calibration

    cfg = _config(args)
    out = _out_dir(args)
    frames = load_dataset(_dataset_dir(cfg))
    gmap = _load_map(cfg)
    gt_path = _groundtruth_path(cfg)
    if gt_path is None:
        raise UsageError("calibration needs ground truth")
    truth = {r.frame_index: r for r in read_groundtruth(gt_path)}
    half = cfg.hog.window / 2.0
    sel = [f for f in frames[::args.every] if f.index in truth]
    topleft = [(truth[f.index].x_m * gmap.px_per_m - half, truth[f.index].y_m * gmap.px_per_m - half)
               for f in sel]
    table = _table_for(cfg, gmap, out)
    cal = calibrate_tau(sel, topleft, gmap, table, near_px=cfg.search.coarse_step,
                        far_px=cfg.search.coarse_side / 2.0, seed=cfg.seed)
    _write_json(out / "calibration.json", {
        "tau_d": round(cal.tau_d, 6),
        "separable": bool(cal.separable),
        "frames": len(sel),
        "match_max": round(float(cal.match.max()), 6),
        "mismatch_min": round(float(cal.mismatch.min()), 6),
    })
    if cfg.emit_plot:
        plot_calibration(cal.match, cal.mismatch, cal.tau_d, out / "calibration.svg")
    _say(args, f"suggested search.tau_d = {cal.tau_d:.4f}"
               + ("" if cal.separable else "  (distributions overlap)"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--emit-confidence-maps", action="store_true",
                        help="write a PGM of every global-correlation surface")
    common.add_argument("--quiet", action="store_true")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override a config key (repeatable)")

    data = _Parser(add_help=False)
    data.add_argument("--dataset")
    data.add_argument("--map", help="map image")
    data.add_argument("--map-meta", help="map meta JSON (default: image path with .json)")
    data.add_argument("--table", help="HOG table cache")
    data.add_argument("--groundtruth")

    mode = _Parser(add_help=False)
    mode.add_argument("--mode", choices=MODES)

    p = _Parser(prog="hopnav", description="Map-aided UAV localization with HOG matching.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    s = sub.add_parser("simulate", parents=[common, data], help="render a synthetic flight")
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("build-table", parents=[common, data], help="precompute the map HOG table")
    s.set_defaults(func=cmd_build_table)
    s = sub.add_parser("localize", parents=[common, data, mode], help="run the tracker on a dataset")
    s.set_defaults(func=cmd_localize)
    s = sub.add_parser("evaluate", parents=[common, data], help="RMSE against ground truth")
    s.add_argument("trajectories", nargs="+")
    s.set_defaults(func=cmd_evaluate)
    s = sub.add_parser("plot", parents=[common, data], help="path and match-statistics figures")
    s.add_argument("trajectories", nargs="+")
    s.add_argument("--tau", type=float, help="threshold line for the statistics plot")
    s.add_argument("--segment", type=int, nargs=2, metavar=("START", "END"),
                   help="highlight a frame interval")
    s.set_defaults(func=cmd_plot)
    s = sub.add_parser("calibrate", parents=[common, data], help="suggest tau_d from ground truth")
    s.add_argument("--every", type=int, default=5, help="use every n-th frame")
    s.set_defaults(func=cmd_calibrate)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"hopnav: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"hopnav: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PipelineAbort as exc:
        print(f"hopnav: aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (DataError, OSError) as exc:
        print(f"hopnav: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

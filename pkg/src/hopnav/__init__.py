"""Map-aided UAV localization: optical-flow prediction plus HOG registration on a geo-referenced map."""

from .descriptor import HogParams, HogTable, build_table, compute_hog, hog_distance, load_table, save_table
from .geodata import DataError, FrameRecord, GeoMap, MapPoint, PositionEstimate, Trajectory
from .globalinit import NoFixError, global_localize
from .motion import MotionParams
from .tracker import PipelineAbort, SearchParams, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "DataError", "FrameRecord", "GeoMap", "HogParams", "HogTable", "MapPoint", "MotionParams",
    "NoFixError", "PipelineAbort", "PositionEstimate", "SearchParams", "Trajectory", "build_table",
    "compute_hog", "global_localize", "hog_distance", "load_table", "run_pipeline", "save_table",
]

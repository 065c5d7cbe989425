import numpy as np
import pytest

from hopnav.geodata import DataError, FrameRecord, GeoMap
from hopnav.globalinit import (DegenerateFrameError, NoFixError, confidence_to_pgm, correlate,
                               global_localize, zncc_direct)
from hopnav.preprocess import preprocess_frame
from conftest import random_map, textured_map


def test_exact_window_is_found():
    gmap = textured_map(400, 300, seed=1)
    frame = gmap.raster[40:220, 120:300]
    conf = correlate(frame, gmap)
    assert conf.scores.shape == (300 - 180 + 1, 400 - 180 + 1)
    assert (conf.peak.x, conf.peak.y) == (120.0, 40.0)
    assert conf.peak_score >= 0.999


def test_frame_equal_to_map():
    gmap = random_map(64, 48)
    conf = correlate(gmap.raster, gmap)
    assert conf.scores.shape == (1, 1)
    assert tuple(conf.peak) == (0.0, 0.0)
    assert conf.peak_score == pytest.approx(1.0)


def test_constant_frame_is_degenerate():
    gmap = random_map(100, 100)
    with pytest.raises(DegenerateFrameError):
        correlate(np.full((20, 20), 7.0), gmap)


def test_frame_larger_than_map():
    with pytest.raises(DataError):
        correlate(np.ones((50, 50)), random_map(40, 60))


@pytest.mark.parametrize("seed", range(10))
def test_fft_matches_direct_zncc(seed):
    r = np.random.default_rng(seed)
    img = r.integers(0, 256, (128, 128)).astype(np.uint8)
    gmap = GeoMap(img, 1.0)
    frame = r.integers(0, 256, (48, 48))
    ours = correlate(frame, gmap).scores
    assert np.max(np.abs(ours - zncc_direct(frame, gmap))) <= 1e-6
    assert ours.min() >= -1 - 1e-6 and ours.max() <= 1 + 1e-6


def test_flat_map_regions_score_zero():
    img = np.zeros((60, 60), np.uint8)
    img[:, 30:] = np.random.default_rng(0).integers(0, 256, (60, 30))
    conf = correlate(np.random.default_rng(1).integers(0, 256, (10, 10)), GeoMap(img, 1.0))
    assert np.all(conf.scores[:, :20] == 0.0)
    assert np.all(np.isfinite(conf.scores))


def test_shift_equivariance():
    gmap = textured_map(300, 260, seed=2)
    base = correlate(gmap.raster[50:130, 60:140], gmap).peak
    for dx, dy in [(1, 0), (0, 3), (-7, 5), (33, -20)]:
        p = correlate(gmap.raster[50 + dy:130 + dy, 60 + dx:140 + dx], gmap).peak
        assert (p.x - base.x, p.y - base.y) == (dx, dy)


def test_ties_resolve_to_first_row_major_index():
    tile = np.random.default_rng(3).integers(0, 256, (16, 16)).astype(np.uint8)
    gmap = GeoMap(np.tile(tile, (5, 5)), 1.0)
    conf = correlate(gmap.raster[32:48, 48:64], gmap)
    assert tuple(conf.peak) == (0.0, 0.0)


def test_rendered_takeoff_frame_is_localized():
    from hopnav.simulator import Pose, SimConfig, render_frame
    gmap = textured_map(850, 500, seed=0)
    cfg = SimConfig(gamma_range=(0.9, 1.1), noise_sigma=4.0)
    for k, (cx, cy, yaw) in enumerate([(300.0, 250.0, 0.3), (512.5, 190.0, -2.0), (140.0, 400.0, 3.0)]):
        rec = render_frame(gmap, Pose(cx / 3.15, cy / 3.15, yaw, 80.0), cfg, index=k)
        peak = global_localize(preprocess_frame(rec, gmap, 180), gmap)
        assert abs(peak.x - (cx - 90)) <= 2 and abs(peak.y - (cy - 90)) <= 2


def test_white_noise_gives_no_fix():
    gmap = textured_map(850, 500, seed=0)
    noise = np.random.default_rng(9).integers(0, 256, (180, 180))
    with pytest.raises(NoFixError) as exc:
        global_localize(noise, gmap, min_peak=0.3)
    assert exc.value.confidence.peak_score < 0.3
    peak = global_localize(noise, gmap, min_peak=-1.0)
    conf = correlate(noise, gmap)
    assert tuple(peak) == tuple(conf.peak)


def test_confidence_pgm(tmp_path):
    gmap = random_map(60, 50)
    conf = correlate(gmap.raster[5:25, 7:27], gmap)
    confidence_to_pgm(conf, tmp_path / "c.pgm")
    data = (tmp_path / "c.pgm").read_bytes()
    head = b"P5\n41 31\n255\n"
    assert data.startswith(head) and len(data) == len(head) + 41 * 31
    pix = np.frombuffer(data[len(head):], np.uint8).reshape(31, 41)
    assert pix[5, 7] == 255

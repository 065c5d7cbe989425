import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hopnav.descriptor import (CacheError, HogParams, build_table, compute_gradients, compute_hog,
                               expected_entries, hog_distance, load_table, save_table, table_lookup)
from hopnav.geodata import GeoMap
from conftest import random_map, textured_map


def reference_hog(image, p: HogParams):
    """Plain floating-point HOG: one loop per pixel, cell and block."""
    img = np.asarray(image, dtype=np.float64)
    pad = np.pad(img, 1, mode="edge")
    gx = pad[1:-1, 2:] - pad[1:-1, :-2]
    gy = pad[2:, 1:-1] - pad[:-2, 1:-1]
    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    width = 180.0 / p.bins

    def cell_hist(y0, x0):
        h = np.zeros(p.bins)
        for y in range(y0, y0 + p.cell):
            for x in range(x0, x0 + p.cell):
                pos = ang[y, x] / width - 0.5
                lo = math.floor(pos)
                f = pos - lo
                h[lo % p.bins] += mag[y, x] * (1 - f)
                h[(lo + 1) % p.bins] += mag[y, x] * f
        return h

    out = []
    n_blocks = (p.window - p.block) // p.block_stride + 1
    k = p.block // p.cell
    for by, bx in itertools.product(range(n_blocks), repeat=2):
        v = np.concatenate([cell_hist(by * p.block_stride + i * p.cell, bx * p.block_stride + j * p.cell)
                            for i in range(k) for j in range(k)])
        v = v / math.sqrt(v @ v + 1e-12)
        v = np.minimum(v, 0.2)
        v = v / math.sqrt(v @ v + 1e-12)
        out.append(v)
    return np.concatenate(out)


def test_constant_image_has_no_gradient():
    mag, _ = compute_gradients(np.full((10, 10), 77))
    assert not mag.any()


def test_vertical_step_edge():
    img = np.zeros((8, 8))
    img[:, 4:] = 100
    mag, ang = compute_gradients(img)
    assert mag[:, 3].all() and mag[:, 4].all()
    assert not mag[:, :3].any() and not mag[:, 5:].any()
    assert np.all(ang[:, 3:5] == 0.0)


def test_ramp_orientation():
    y, x = np.mgrid[0:20, 0:20]
    _, ang = compute_gradients((x + y).astype(float))
    assert np.allclose(ang[1:-1, 1:-1], 45.0)
    _, ang = compute_gradients((x - y).astype(float))
    assert np.allclose(ang[1:-1, 1:-1], 135.0)


def test_gradient_needs_3x3():
    with pytest.raises(ValueError):
        compute_gradients(np.zeros((2, 5)))


def test_default_descriptor_length():
    p = HogParams()
    assert p.descriptor_len == 576
    assert compute_hog(np.random.default_rng(0).integers(0, 256, (180, 180)), p).shape == (576,)


def _enumerated_len(p):
    blocks = [(y, x) for y in range(0, p.window - p.block + 1, p.block_stride)
              for x in range(0, p.window - p.block + 1, p.block_stride)]
    return len(blocks) * (p.block // p.cell) ** 2 * p.bins


@settings(max_examples=60, deadline=None)
@given(cell=st.sampled_from([4, 8, 16, 32]), k=st.integers(1, 3), s=st.integers(1, 3),
       extra=st.integers(0, 70), bins=st.integers(2, 12))
def test_length_formula_matches_enumeration(cell, k, s, extra, bins):
    block = cell * k
    if block % s:
        return
    p = HogParams(cell, block, block // s, bins, block + extra)
    assert p.descriptor_len == _enumerated_len(p)


def test_invalid_params():
    for kw in (dict(block=48), dict(block_stride=24), dict(window=60), dict(bins=1), dict(cell=0)):
        with pytest.raises(ValueError):
            HogParams(**kw)


def test_constant_and_repeat():
    p = HogParams()
    assert not compute_hog(np.full((180, 180), 90, np.uint8), p).any()
    img = np.random.default_rng(1).integers(0, 256, (180, 180), dtype=np.uint8)
    assert np.array_equal(compute_hog(img, p), compute_hog(img, p))
    with pytest.raises(ValueError):
        compute_hog(np.zeros((100, 180)), p)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_matches_floating_point_reference(seed):
    p = HogParams()
    img = textured_map(400, 400, seed=seed).raster[100:280, 150:330]
    ours = compute_hog(img, p)
    ref = reference_hog(img, p)
    # integer votes carry 12 fractional bits, hence the loose-ish tolerance
    assert np.max(np.abs(ours - ref)) < 2e-4


def test_block_norms_and_sign():
    p = HogParams()
    d = compute_hog(textured_map(300, 300, seed=5).raster[:180, :180], p)
    blocks = d.reshape(-1, p.block_len)
    assert np.all(np.linalg.norm(blocks, axis=1) <= 1 + 1e-6)
    assert np.all(d >= 0) and np.all(np.isfinite(d))


def test_distance_basics():
    a = np.array([1.0, 2.0, 0.0])
    assert hog_distance(a, a) == 0.0
    assert hog_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(math.sqrt(2) / 2)
    # zero descriptors behave like e1
    assert hog_distance(np.zeros(3), np.array([5.0, 0, 0])) == 0.0
    with pytest.raises(ValueError):
        hog_distance(np.ones(3), np.ones(4))


def test_distance_symmetric_bounded_and_direct():
    r = np.random.default_rng(0)
    for _ in range(1000):
        a, b = r.random(20) * r.integers(0, 2, 20), r.random(20)
        d = hog_distance(a, b)
        assert d == pytest.approx(hog_distance(b, a), abs=1e-15)
        assert 0 <= d <= 1
        ua = a / np.linalg.norm(a) if a.any() else np.eye(20)[0]
        assert d == pytest.approx(np.linalg.norm(ua - b / np.linalg.norm(b)) / 2, abs=1e-12)


def test_distance_against_stack():
    r = np.random.default_rng(1)
    a, B = r.random(9), r.random((5, 9))
    assert np.allclose(hog_distance(a, B), [hog_distance(a, b) for b in B])


def test_table_sizes():
    assert expected_entries(850, 500, 180) == 215391
    assert expected_entries(850, 500, 180, 4) == 13608
    t = build_table(random_map(180, 180), HogParams())
    assert t.n_entries == 1
    t4 = build_table(random_map(260, 230, seed=1), HogParams(), lattice_stride=4)
    assert t4.n_entries == expected_entries(260, 230, 180, 4) == 21 * 13


def test_table_equals_direct_everywhere_on_small_map():
    gmap = textured_map(300, 300, seed=7)
    p = HogParams()
    t = build_table(gmap, p)
    r = gmap.raster
    for y in range(121):
        for x in range(121):
            assert np.array_equal(t.lookup(x, y), compute_hog(r[y:y + 180, x:x + 180], p)), (x, y)


def test_table_random_offsets_and_snapping(village, village_table):
    r = np.random.default_rng(3)
    p = village_table.params
    for _ in range(100):
        x, y = int(r.integers(0, 671)), int(r.integers(0, 321))
        assert np.array_equal(table_lookup(village_table, x, y),
                              compute_hog(village.raster[y:y + 180, x:x + 180], p))
    assert np.array_equal(village_table.lookup(10.4, 20.6), village_table.lookup(10, 21))
    assert np.array_equal(village_table.lookup(0, 0), compute_hog(village.raster[:180, :180], p))
    with pytest.raises(IndexError):
        village_table.lookup(850, 500)
    with pytest.raises(IndexError):
        village_table.lookup(-1, 0)


def test_strided_table_snaps_to_lattice():
    gmap = textured_map(260, 240, seed=2)
    p = HogParams()
    t = build_table(gmap, p, lattice_stride=4)
    assert np.array_equal(t.lookup(9, 6), compute_hog(gmap.raster[8:188, 8:188], p))
    assert np.array_equal(t.lookup(10, 6), compute_hog(gmap.raster[8:188, 12:192], p))


def test_other_parameter_set_bit_exact():
    gmap = textured_map(200, 190, seed=4)
    p = HogParams(cell=8, block=16, block_stride=8, bins=6, window=64)
    t = build_table(gmap, p)
    r = np.random.default_rng(0)
    for _ in range(40):
        x, y = int(r.integers(0, 137)), int(r.integers(0, 127))
        assert np.array_equal(t.lookup(x, y), compute_hog(gmap.raster[y:y + 64, x:x + 64], p))


def test_window_larger_than_map():
    with pytest.raises(ValueError):
        build_table(GeoMap(np.zeros((100, 100), np.uint8), 1.0), HogParams())


def test_cache_round_trip_and_corruption(tmp_path):
    gmap = textured_map(230, 210, seed=1)
    t = build_table(gmap, HogParams())
    save_table(t, tmp_path / "a.hogtbl")
    save_table(build_table(gmap, HogParams()), tmp_path / "b.hogtbl")
    assert (tmp_path / "a.hogtbl").read_bytes() == (tmp_path / "b.hogtbl").read_bytes()
    back = load_table(tmp_path / "a.hogtbl")
    assert np.array_equal(back.descriptors, t.descriptors)
    assert back.params == t.params and back.map_size == (230, 210) and back.map_crc == t.map_crc

    raw = bytearray((tmp_path / "a.hogtbl").read_bytes())
    raw[-7] ^= 0xFF
    (tmp_path / "c.hogtbl").write_bytes(bytes(raw))
    with pytest.raises(CacheError):
        load_table(tmp_path / "c.hogtbl")
    (tmp_path / "d.hogtbl").write_bytes(bytes(raw[:-40]))
    with pytest.raises(CacheError):
        load_table(tmp_path / "d.hogtbl")
    (tmp_path / "e.hogtbl").write_bytes(b"NOTATBL" + bytes(raw[7:]))
    with pytest.raises(CacheError):
        load_table(tmp_path / "e.hogtbl")


def test_gamma_change_is_closer_than_displacement():
    gmap = textured_map(500, 400, seed=11)
    p = HogParams()
    r = np.random.default_rng(5)
    for _ in range(20):
        x, y = int(r.integers(20, 280)), int(r.integers(20, 180))
        win = gmap.raster[y:y + 180, x:x + 180].astype(float)
        d0 = compute_hog(win, p)
        a = r.uniform(0, 2 * np.pi)
        dx, dy = int(round(20 * np.cos(a))), int(round(20 * np.sin(a)))
        shifted = compute_hog(gmap.raster[y + dy:y + dy + 180, x + dx:x + dx + 180], p)
        for g in (0.7, 1.4):
            pert = 255.0 * (win / 255.0) ** g
            assert hog_distance(d0, compute_hog(pert, p)) < hog_distance(d0, shifted)

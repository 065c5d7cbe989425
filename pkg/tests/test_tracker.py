import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hopnav.descriptor import HogParams, compute_hog, hog_distance
from hopnav.geodata import FrameRecord, MapPoint
from hopnav.preprocess import PreprocessedFrame
from hopnav.tracker import (ParticleSet, PipelineAbort, SearchParams, StepInfo, Tracker, compute_psr,
                            draw_particles, estimate_state, gaussian_likelihood, lattice_points,
                            run_pipeline, track_step, weigh_particles)

MAX_XY = (670, 320)


def _ps(xy, d):
    ps = ParticleSet(np.asarray(xy, dtype=np.int64), 180)
    ps.d = np.asarray(d, dtype=float)
    return ps


def test_lattice_sizes():
    assert len(lattice_points((300, 150), 20, 1, MAX_XY)) == 441
    assert len(lattice_points((300, 150), 40, 4, MAX_XY)) == 121
    ps = draw_particles((300, 150), 20, 1, 50, 0, MAX_XY)
    assert len(ps) == 50 and len({tuple(p) for p in ps.xy.tolist()}) == 50
    assert len(draw_particles((300, 150), 40, 4, 50, 0, MAX_XY)) == 50
    assert np.allclose(ps.w, 1 / 50)


def test_exhaustive_when_lattice_is_small():
    ps = draw_particles((300.4, 150.6), 40, 4, 121, 0, MAX_XY)
    assert len(ps) == 121
    assert np.array_equal(ps.xy, lattice_points((300, 151), 40, 4, MAX_XY))
    assert ps.xy[:, 0].min() == 280 and ps.xy[:, 1].max() == 171


def test_lattice_is_clamped_to_map():
    pts = lattice_points((2, 318), 40, 4, MAX_XY)
    assert pts[:, 0].min() == 0 and pts[:, 1].max() == 320
    assert len({tuple(p) for p in pts.tolist()}) == len(pts)


def test_draws_are_seeded():
    a = draw_particles((300, 150), 20, 1, 50, 7, MAX_XY)
    b = draw_particles((300, 150), 20, 1, 50, 7, MAX_XY)
    c = draw_particles((300, 150), 20, 1, 50, 8, MAX_XY)
    assert np.array_equal(a.xy, b.xy) and not np.array_equal(a.xy, c.xy)


def test_area_smaller_than_interval():
    with pytest.raises(ValueError):
        draw_particles((300, 150), 2, 4, 50, 0, MAX_XY)


def test_likelihood_values():
    assert gaussian_likelihood(0.0, 0.01) == pytest.approx(39.894228, abs=1e-6)
    assert gaussian_likelihood(0.02, 0.01) == pytest.approx(39.894228 * math.exp(-2), abs=1e-6)
    assert gaussian_likelihood(0.02, 0.01) == pytest.approx(5.399, abs=1e-3)


class _FakeTable:
    """Lookup returning preset descriptors keyed by position."""

    def __init__(self, mapping):
        self.mapping = mapping

    def lookup(self, xs, ys):
        return np.array([self.mapping[(int(x), int(y))] for x, y in zip(xs, ys)])


def test_weights_equal_distances_are_uniform():
    xy = [(0, 0), (4, 0), (8, 0)]
    table = _FakeTable({p: np.array([1.0, 1.0]) for p in xy})
    ps = weigh_particles(ParticleSet(np.array(xy), 180), np.array([1.0, 0.0]), table, 0.01)
    assert np.allclose(ps.w, 1 / 3)
    assert np.allclose(ps.d, hog_distance(np.array([1.0, 0.0]), np.array([1.0, 1.0])))


def test_weights_follow_gaussian_ratio():
    ps = _ps([(0, 0), (1, 0)], [0.0, 0.02])
    e = np.array([1.0, 0.0])
    table = _FakeTable({(0, 0): e, (1, 0): None})
    # choose a descriptor at distance 0.02 from e
    ang = 2 * math.asin(0.02)
    table.mapping[(1, 0)] = np.array([math.cos(ang), math.sin(ang)])
    ps = weigh_particles(ParticleSet(ps.xy, 180), e, table, 0.01)
    assert ps.d[1] == pytest.approx(0.02)
    assert ps.w[1] / ps.w[0] == pytest.approx(math.exp(-2))
    assert ps.w_raw[0] == pytest.approx(39.894228, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=60), st.floats(0.001, 1.0))
def test_weights_always_normalized(ds, sigma):
    xy = [(i, 0) for i in range(len(ds))]

    class T:
        def lookup(self, xs, ys):
            return np.array([[math.cos(2 * math.asin(ds[int(x)])), math.sin(2 * math.asin(ds[int(x)]))]
                             for x in xs])

    ps = weigh_particles(ParticleSet(np.array(xy), 180), np.array([1.0, 0.0]), T(), sigma)
    assert abs(ps.w.sum() - 1) <= 1e-9
    est = estimate_state(ps)
    assert 0 - 1e-9 <= est.x <= len(ds) - 1 + 1e-9 and est.y == 0


def test_estimate_state_examples():
    ps = ParticleSet(np.array([(0, 0), (10, 10)]), 180, w=np.array([0.5, 0.5]))
    assert estimate_state(ps) == (5.0, 5.0)
    assert estimate_state(ParticleSet(np.array([(7, 3)]), 180, w=np.array([1.0]))) == (7.0, 3.0)
    ps = ParticleSet(np.array([(0, 0), (4, 0)]), 180, w=np.array([0.25, 0.75]))
    assert estimate_state(ps) == (3.0, 0.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 100), st.integers(0, 100), st.floats(0.01, 1.0)), min_size=1,
                max_size=30))
def test_estimate_inside_bounding_box(parts):
    xy = np.array([(x, y) for x, y, _ in parts])
    w = np.array([v for *_, v in parts])
    est = estimate_state(ParticleSet(xy, 180, w=w / w.sum()))
    assert xy[:, 0].min() - 1e-9 <= est.x <= xy[:, 0].max() + 1e-9
    assert xy[:, 1].min() - 1e-9 <= est.y <= xy[:, 1].max() + 1e-9


def test_psr_examples():
    st_ = compute_psr(_ps([(0, 0), (10, 0), (0, 10)], [0.2, 0.5, 0.7]))
    assert (st_.d_min, st_.mu, st_.sigma_s, st_.theta) == pytest.approx((0.2, 0.6, 0.1, -4.0))
    assert not st_.degenerate
    assert compute_psr(_ps([(0, 0), (10, 0), (0, 10)], [0.3, 0.3, 0.3])).degenerate


def test_psr_excludes_five_pixel_circle():
    xy = [(0, 0), (3, 4), (5, 0), (6, 0), (0, 6)]
    st_ = compute_psr(_ps(xy, [0.1, 0.11, 0.12, 0.5, 0.7]))
    # (3,4) and (5,0) are exactly 5 px away and belong to the excluded peak
    assert st_.mu == pytest.approx(0.6) and st_.sigma_s == pytest.approx(0.1)


def test_psr_monotone_in_minimum():
    xy = [(0, 0), (10, 0), (0, 10), (10, 10)]
    thetas = [compute_psr(_ps(xy, [d, 0.5, 0.6, 0.7])).theta for d in (0.4, 0.3, 0.2, 0.1)]
    assert all(a > b for a, b in zip(thetas, thetas[1:]))


def _pframe(img, index=1):
    return PreprocessedFrame(np.asarray(img, dtype=np.uint8), index, 1 / 3.15)


def test_registered_on_exact_window(village, village_table):
    params = SearchParams(tau_d=0.16)
    frame = _pframe(village.raster[150:330, 400:580])
    est = track_step(MapPoint(400.0, 150.0), frame, village_table, village, params, (0, 0, 0))
    assert est.source == "registered"
    assert abs(est.position.x - 400) <= 4 and abs(est.position.y - 150) <= 4
    assert est.min_distance <= params.tau_d


def test_prediction_moves_the_search(village, village_table):
    params = SearchParams(tau_d=0.16)
    frame = _pframe(village.raster[150:330, 430:610])
    # 30 px east is outside a 40-px coarse square around the previous position unless predicted
    est = track_step(MapPoint(400.0, 150.0), frame, village_table, village, params, (30 / 3.15, 0, 0))
    assert est.source == "registered" and abs(est.position.x - 430) <= 4


def test_noise_frame_falls_back_to_prediction(village, village_table):
    params = SearchParams(tau_d=0.16)
    noise = np.random.default_rng(0).integers(0, 256, (180, 180))
    info = StepInfo(1, MapPoint(0, 0))
    tr = Tracker(village, village_table, params)
    est = tr.step(MapPoint(400.0, 150.0), _pframe(noise), (1.0, 0.5, 0.0), 0.0, info)
    assert est.source == "predicted"
    assert est.position == (400.0 + 3.15, 150.0 + 0.5 * 3.15)
    assert info.passes == 2 and info.coarse_min > 0.16 and info.fine_min > 0.16
    assert est.min_distance == info.fine_min


def test_large_prediction_triggers_reinit(village, village_table):
    frame = _pframe(village.raster[100:280, 200:380])
    est = track_step(MapPoint(500.0, 100.0), frame, village_table, village, SearchParams(),
                     (-300 / 3.15, 0.0, 0.0))
    assert est.source == "reinit"
    assert tuple(est.position) == (200.0, 100.0)


def test_default_reinit_distance():
    assert SearchParams().reinit_dist_px == 80.0
    assert SearchParams(coarse_side=30).reinit_dist_px == 60.0
    with pytest.raises(ValueError):
        SearchParams(fine_side=50)
    with pytest.raises(ValueError):
        SearchParams(n_particles=0)


def _flight(village, n, **kw):
    from hopnav.simulator import SimConfig, simulate
    cfg = SimConfig(duration_s=n / 5.0, gamma_range=(0.9, 1.1), noise_sigma=4.0, **kw)
    return simulate(cfg, village)


def test_single_frame_pipeline(village, village_table):
    frames, gt = _flight(village, 1)
    res = run_pipeline(frames, village, village_table)
    assert len(res.trajectory) == 1
    (idx, est), = res.trajectory
    assert est.source == "reinit"
    assert abs(est.center.x / 3.15 - gt.poses[0].x_m) < 1.0


def test_pipeline_modes_and_determinism(village, village_table):
    frames, gt = _flight(village, 40)
    params = SearchParams(tau_d=0.16)
    a = run_pipeline(frames, village, village_table, params, mode="hop", seed=3)
    b = run_pipeline(frames, village, village_table, params, mode="hop", seed=3)
    assert [(i, tuple(e.position), e.source, e.min_distance) for i, e in a.trajectory] == \
           [(i, tuple(e.position), e.source, e.min_distance) for i, e in b.trajectory]
    assert all(e.source == "registered" for _, e in list(a.trajectory)[1:])
    err = [math.hypot(e.center.x / 3.15 - p.x_m, e.center.y / 3.15 - p.y_m) for (_, e), p in zip(a.trajectory, gt.poses)]
    assert max(err) < 3.0
    of = run_pipeline(frames, village, village_table, params, mode="of_only")
    assert [e.source for _, e in of.trajectory][1:] == ["predicted"] * 39
    with pytest.raises(ValueError):
        run_pipeline(frames, village, village_table, params, mode="gps")


def test_pipeline_aborts_without_global_fix(village, village_table):
    r = np.random.default_rng(1)
    frames = [FrameRecord(r.integers(0, 256, (264, 264), dtype=np.uint8), 0.2 * k, 0.0, 0.0, 0.0,
                          (0.0, 0.0, 0.0), 80.0, 252.0, k) for k in range(12)]
    with pytest.raises(PipelineAbort):
        run_pipeline(frames, village, village_table)


def test_hop_no_of_ignores_motion(village, village_table):
    frames, _ = _flight(village, 6)
    res = run_pipeline(frames, village, village_table, SearchParams(tau_d=0.16), mode="hop_no_of")
    assert all(s.n_matches == 0 for s in res.steps)
    assert [tuple(s.predicted) for s in res.steps[1:]] == \
           [tuple(e.position) for _, e in list(res.trajectory)[:-1]]


def test_brute_force_equivalence_sample(village, village_table):
    """Exhaustive coarse lattice: best particle equals a direct scan of the same lattice."""
    r = np.random.default_rng(2)
    p = HogParams()
    for _ in range(5):
        x, y = int(r.integers(40, 630)), int(r.integers(40, 280))
        desc = compute_hog(village.raster[y:y + 180, x:x + 180], p)
        center = (x + int(r.integers(-10, 11)), y + int(r.integers(-10, 11)))
        ps = weigh_particles(draw_particles(center, 40, 4, 121, 0, MAX_XY), desc, village_table, 0.01)
        scan = {(px, py): hog_distance(desc, compute_hog(village.raster[py:py + 180, px:px + 180], p))
                for px, py in lattice_points(center, 40, 4, MAX_XY).tolist()}
        assert tuple(ps.xy[np.argmin(ps.d)]) == min(scan, key=scan.get)


def test_sensitivity_floor(standard_flight, village, village_table):
    """The default particle budget and coarse area do no worse than a starved configuration."""
    frames, gt = standard_flight

    def rmse(params):
        res = run_pipeline(frames, village, village_table, params, mode="hop", seed=0)
        err = [math.hypot(e.center.x / 3.15 - p.x_m, e.center.y / 3.15 - p.y_m)
               for (_, e), p in zip(res.trajectory, gt.poses)]
        return math.sqrt(np.mean(np.square(err)))

    default = rmse(SearchParams())
    starved = rmse(SearchParams(n_particles=20, coarse_side=20))
    print(f"RMSE N=50/s_c=40 {default:.3f} m, N=20/s_c=20 {starved:.3f} m")
    assert default <= starved

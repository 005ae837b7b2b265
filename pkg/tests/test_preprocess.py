import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ghosteval.errors import FrameMismatch, InvalidScanOrFireId
from ghosteval.model import Frame, Label, PointCloud, Pose, SensorModel, quat_from_yaw
from ghosteval.preprocess import (DownsampleParams, downsample_frame, downsample_mask, scatter_keys, to_world,
                                  voxel_filter, voxel_keys, voxel_representatives)
from ghosteval.synthetic import Box, Pole, Scene, simulate_scan

from conftest import random_pose

SENSOR = SensorModel()


def one(pos, s, f, label):
    return PointCloud([pos], [s], [f], [label])


def test_params_for_default_sensor():
    p = DownsampleParams.for_sensor(SENSOR)
    assert p.eta_ground == 150
    assert p.eta_vec == ((5.0, 30), (10.0, 20), (20.0, 10), (900.0, 5))
    assert p.xi == 112.5


def test_params_floor_and_clamp():
    p = DownsampleParams.for_sensor(SensorModel(angular_resolution_deg=7.0))
    assert p.eta_ground == 4
    assert [m for _, m in p.eta_vec] == [1, 1, 1, 1]  # floor(6/7) = 0 clamps to 1
    with pytest.raises(ValueError):
        DownsampleParams(10, ((5.0, 3), (5.0, 2)), 1.0)


def test_pole_always_kept():
    for s, f in [(0, 1), (7, 1799), (15, 3)]:
        assert len(downsample_frame(one([30, 0, 0], s, f, Label.POLE), SENSOR)) == 1


def test_ground_lattice():
    assert len(downsample_frame(one([3, 0, -1.8], 0, 300, Label.GROUND), SENSOR)) == 1
    assert len(downsample_frame(one([3, 0, -1.8], 0, 299, Label.GROUND), SENSOR)) == 0


def test_default_hand_trace():
    # f_scat = floor(10 + 2 * 112.5) = 235; 15 m falls in the 20 m band, 235 % 10 = 5
    assert scatter_keys([2], [10], SENSOR).tolist() == [235]
    assert len(downsample_frame(one([15, 0, 0], 2, 10, Label.DEFAULT), SENSOR)) == 0
    assert len(downsample_frame(one([15, 0, 0], 2, 15, Label.DEFAULT), SENSOR)) == 1


def test_scatter_wraps_once():
    assert scatter_keys([15], [1799], SENSOR).tolist() == [(1799 + 1687) - 1800]


def test_beyond_last_band_dropped():
    assert len(downsample_frame(one([901, 0, 0], 0, 0, Label.DEFAULT), SENSOR)) == 0


def test_invalid_ids():
    with pytest.raises(InvalidScanOrFireId):
        downsample_frame(one([1, 0, 0], 16, 0, Label.DEFAULT), SENSOR)
    with pytest.raises(InvalidScanOrFireId):
        downsample_frame(one([1, 0, 0], 0, 1800, Label.DEFAULT), SENSOR)


@pytest.fixture(scope="module")
def scan():
    scene = Scene(
        boxes=(Box((-30, 6, 0), (30, 10, 8)), Box((-30, -14, 0), (30, -12, 8)), Box((3, -3, 0), (4, -2, 2))),
        poles=(Pole(2.0, 2.0, 0.15, 6), Pole(-8.0, -4.5, 0.15, 6)),
    )
    return simulate_scan(scene, Pose(), SENSOR)


def test_subset_and_pole_retention(scan):
    out = downsample_frame(scan, SENSOR)
    mask = downsample_mask(scan, SENSOR)
    assert np.array_equal(out.positions, scan.positions[mask])
    assert np.array_equal(out.scan_id, scan.scan_id[mask])
    assert (out.labels == Label.POLE).sum() == (scan.labels == Label.POLE).sum() > 0
    assert 0 < len(out) < len(scan) / 4


def test_density_spacing_shrinks_with_range(scan):
    out = downsample_frame(scan, SENSOR)
    rng = np.linalg.norm(out.positions, axis=1)
    spacing = []
    for (lo, hi), mod in zip([(0, 5), (5, 10), (10, 20)], (30, 20, 10)):
        gaps = []
        for s in range(SENSOR.n_lasers):
            sel = (out.labels == Label.DEFAULT) & (out.scan_id == s) & (rng >= lo) & (rng < hi)
            f = np.sort(out.fire_id[sel])
            gaps.extend(np.diff(f).tolist())
        med = np.median(gaps) * SENSOR.angular_resolution_deg
        assert mod * SENSOR.angular_resolution_deg / 2 <= med <= mod * SENSOR.angular_resolution_deg * 2
        spacing.append(med)
    assert spacing == sorted(spacing, reverse=True)


def test_to_world():
    c = PointCloud([[1.0, 2.0, 3.0]])
    assert np.array_equal(to_world(c, Pose()).positions, c.positions)
    w = to_world(c, Pose(translation=[100, 0, 0]))
    assert w.frame is Frame.WORLD and w.positions.tolist() == [[101, 2, 3]]
    with pytest.raises(FrameMismatch):
        to_world(w, Pose())


def test_to_world_round_trip(rng):
    pose = random_pose(rng)
    c = PointCloud(rng.normal(size=(50, 3)) * 20)
    back = pose.inverse().apply(to_world(c, pose).positions)
    assert np.allclose(back, c.positions, atol=1e-9)


def test_voxel_collapse_and_split():
    c = PointCloud([[0.001, 0.001, 0.001], [0.006, 0.001, 0.001]])
    out = voxel_filter(c, 0.02)
    assert len(out) == 1 and out.positions[0].tolist() in c.positions.tolist()
    assert len(voxel_filter(PointCloud([[0.001, 0.001, 0.001], [0.051, 0.001, 0.001]]), 0.02)) == 2


def test_voxel_representative_nearest_centroid():
    pts = np.array([[0.001, 0.001, 0.001], [0.009, 0.009, 0.009], [0.019, 0.019, 0.019]])
    assert voxel_representatives(pts, 0.02).tolist() == [1]
    # two-point cells are exact ties: lowest index wins
    tie = np.array([[3, 3, 3], [1, 1, 1]]) / 256
    assert voxel_representatives(tie, 0.02).tolist() == [0]


def test_voxel_random_unique_cells(rng):
    pts = rng.uniform(0, 1, (10000, 3))
    keep = voxel_representatives(pts, 0.02)
    assert len(keep) <= 125000
    keys = voxel_keys(pts[keep], 0.02)
    assert len(np.unique(keys, axis=0)) == len(keep)
    assert len(np.unique(voxel_keys(pts, 0.02), axis=0)) == len(keep)


def test_voxel_filter_preserves_labels():
    c = PointCloud([[0, 0, 0], [1, 1, 1]], labels=[Label.POLE, Label.GROUND])
    assert voxel_filter(c, 0.02).labels.tolist() == [2, 1]


def test_anchored_grid_is_rigid_invariant(rng):
    pts = rng.uniform(-5, 5, (5000, 3))
    anchor = Pose(rotation=quat_from_yaw(0.3), translation=[1, 2, 0])
    g = random_pose(rng)
    a = voxel_representatives(pts, 0.05, anchor)
    b = voxel_representatives(g.apply(pts), 0.05, g @ anchor)
    assert np.array_equal(a, b)


@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 1799), st.sampled_from([0, 1, 2]),
                          st.floats(0.5, 60)), min_size=1, max_size=100))
def test_downsample_is_subsequence(rows):
    s, f, lab, r = map(np.array, zip(*rows))
    c = PointCloud(np.c_[r, np.zeros(len(r)), np.zeros(len(r))], s, f, lab)
    m = downsample_mask(c, SENSOR)
    out = downsample_frame(c, SENSOR)
    assert np.array_equal(out.positions, c.positions[m])
    assert np.all(m[lab == 2])

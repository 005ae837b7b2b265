import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ghosteval.errors import PlanOutOfRange, SpecError
from ghosteval.model import Label, Pose, Rigid, SensorModel, arclength, quat_from_yaw, translations
from ghosteval.synthetic import (Axis, Box, DisturbancePlan, Pole, Scene, Segment, TrajectorySpec,
                                 build_benchmark, inject_disturbance, make_plan, path_directions, sample_path,
                                 simulate_scan)


def single_beam(elev, res=1.0):
    return SensorModel(n_lasers=1, angular_resolution_deg=res, vertical_fov_deg=(elev, elev))


def test_horizontal_beam_misses_bare_ground():
    assert len(simulate_scan(Scene(), Pose(), single_beam(0.0))) == 0


def test_steep_beam_ground_range():
    c = simulate_scan(Scene(), Pose(), single_beam(-45.0, res=90.0))
    assert len(c) == 4
    assert np.all(c.labels == Label.GROUND)
    lidar = c.positions - [0, 0, 1.8]
    assert np.allclose(np.linalg.norm(lidar, axis=1), 1.8 * math.sqrt(2), atol=1e-12)
    assert np.allclose(np.linalg.norm(c.positions[:, :2], axis=1), 1.8, atol=1e-12)
    assert np.allclose(c.positions[:, 2], 0.0, atol=1e-12)


def test_wall_hit_along_x():
    scene = Scene(boxes=(Box((10, -5, 0), (12, 5, 5)),))
    c = simulate_scan(scene, Pose(), single_beam(0.0, res=90.0))
    k = np.flatnonzero(c.fire_id == 0)[0]
    assert np.allclose(c.positions[k], [10, 0, 1.8], atol=1e-12)
    assert c.labels[k] == Label.DEFAULT


def test_max_range():
    scene = Scene(boxes=(Box((81, -5, 0), (82, 5, 5)),))
    assert len(simulate_scan(scene, Pose(), single_beam(0.0, res=90.0))) == 0


def test_ids_and_exact_ranges(rng):
    sensor = SensorModel(angular_resolution_deg=1.0)
    scene = Scene(boxes=(Box((-20, 6, 0), (20, 8, 4)),), poles=(Pole(3, -3, 0.2, 5),))
    pose = Pose(rotation=quat_from_yaw(0.4), translation=[1, -1, 0])
    c = simulate_scan(scene, pose, sensor)
    assert c.scan_id.max() < sensor.n_lasers and c.fire_id.max() < sensor.fire_count
    w = pose.apply(c.positions)
    g = c.labels == Label.GROUND
    assert np.allclose(w[g, 2], 0, atol=1e-9)
    p = c.labels == Label.POLE
    assert p.any()
    assert np.allclose(np.hypot(w[p, 0] - 3, w[p, 1] + 3)[w[p, 2] < 4.99], 0.2, atol=1e-9)
    d = c.labels == Label.DEFAULT
    on_face = np.isclose(w[d, 1], 6, atol=1e-9) | np.isclose(w[d, 2], 4, atol=1e-9) | \
        np.isclose(np.abs(w[d, 0]), 20, atol=1e-9)
    assert on_face.all()


def test_noise_reproducible():
    spec = TrajectorySpec(((0, 0, 0), (3, 0, 0)), sensor=SensorModel(angular_resolution_deg=2.0),
                          range_noise_sigma_m=0.01)
    scene = Scene(boxes=(Box((-10, 5, 0), (10, 6, 3)),))
    _, a = build_benchmark(scene, spec, seed=7)
    _, b = build_benchmark(scene, spec, seed=7)
    _, c = build_benchmark(scene, spec, seed=8)
    assert all(np.array_equal(x.positions, y.positions) for x, y in zip(a, b))
    assert not np.array_equal(a[1].positions, c[1].positions)


def test_sample_path_counts():
    loop = TrajectorySpec(((0, 0, 0), (150, 0, 0), (150, 100, 0), (0, 100, 0)), closed=True)
    poses = sample_path(loop)
    assert len(poses) == 500
    assert [p.index for p in poses] == list(range(500))
    assert np.allclose(poses[150].translation, [150, 0, 0])
    assert np.allclose(poses[151].translation, [150, 1, 0])
    assert np.allclose(poses[151].matrix[:, 0], [0, 1, 0], atol=1e-12)
    assert len(sample_path(TrajectorySpec(((0, 0, 0), (100, 0, 0))))) == 101
    with pytest.raises(SpecError):
        TrajectorySpec(((0, 0, 0),))


def test_corridor_scans_contain_walls_and_ground():
    scene = Scene(boxes=(Box((-5, 6, 0), (105, 7, 4)), Box((-5, -7, 0), (105, -6, 4))))
    spec = TrajectorySpec(((0, 0, 0), (100, 0, 0)), spacing_m=25, sensor=SensorModel(angular_resolution_deg=1.0))
    poses, clouds = build_benchmark(scene, spec)
    assert len(poses) == 5
    for c in clouds:
        assert (c.labels == Label.DEFAULT).any() and (c.labels == Label.GROUND).any()


def test_poles_visible_along_road():
    poles = tuple(Pole(x, 4.5, 0.15, 6) for x in np.arange(0, 200, 10.0))
    spec = TrajectorySpec(((0, 0, 0), (190, 0, 0)), spacing_m=95)
    _, clouds = build_benchmark(Scene(poles=poles), spec)
    for c in clouds:
        assert (c.labels == Label.POLE).sum() > 0


def straight(n=300):
    return [Pose(index=k, translation=[float(k), 0.0, 0.0]) for k in range(n)]


def test_empty_plan_identity():
    traj = straight()
    out = inject_disturbance(traj, DisturbancePlan())
    assert all(a is b for a, b in zip(traj, out))


def test_z_segment():
    traj = straight()
    plan = DisturbancePlan((Segment(100, 50, Axis.Z, 0.2, +1),))
    out = inject_disturbance(traj, plan)
    for k, (a, b) in enumerate(zip(traj, out)):
        if 100 <= k < 150:
            assert b.translation[2] == 0.2 and b.translation[0] == a.translation[0]
            assert np.array_equal(b.rotation, a.rotation)
        else:
            assert b is a
    lowered = inject_disturbance(traj, DisturbancePlan((Segment(100, 50, Axis.Z, 0.2, -1),)))
    assert lowered[120].translation[2] == -0.2


def test_xy_offset_is_left_normal():
    traj = straight()
    out = inject_disturbance(traj, DisturbancePlan((Segment(10, 50, Axis.XY, 0.15),)))
    assert np.allclose(out[30].translation, [30, 0.15, 0])
    assert out[30].translation[2] == 0.0


def test_plan_out_of_range():
    with pytest.raises(PlanOutOfRange):
        inject_disturbance(straight(100), DisturbancePlan((Segment(60, 50, Axis.Z, 0.1),)))


def test_overlapping_segments_rejected():
    with pytest.raises(ValueError):
        DisturbancePlan((Segment(0, 50, Axis.Z, 0.1), Segment(40, 50, Axis.Z, 0.1)))


def test_three_km_plan():
    plan = make_plan(2999.0, "XY", seed=3)
    mags = sorted(g.magnitude_m for g in plan.segments)
    assert len(plan) == 8
    assert mags == [0.1] * 6 + [0.15, 0.2]
    assert all(g.length_m == 50 for g in plan.segments)
    assert make_plan(2999.0, "XY", seed=3) == plan
    assert make_plan(500.0, "Z", seed=0).segments[0].sign == -1


def test_plan_too_short():
    with pytest.raises(PlanOutOfRange):
        make_plan(40.0, "XY")


@given(st.integers(0, 2**31), st.floats(400, 20000))
def test_plan_ratio_and_disjoint(seed, length):
    plan = make_plan(length, "XY", seed=seed)
    mags = [g.magnitude_m for g in plan.segments]
    full = len(mags) // 8 * 8
    assert mags[:full].count(0.1) == 6 * full // 8
    assert all(a.end_arclen_m <= b.start_arclen_m for a, b in zip(plan.segments, plan.segments[1:]))
    assert plan.segments[-1].end_arclen_m <= length


def test_disturbance_locality_on_loop():
    loop = sample_path(TrajectorySpec(((0, 0, 0), (150, 0, 0), (150, 100, 0), (0, 100, 0)), closed=True))
    plan = make_plan(arclength(loop)[-1], "XY", seed=1, pitch_m=62.5)
    out = inject_disturbance(loop, plan)
    inside = set(np.concatenate(plan.pose_indices(loop)).tolist())
    d = np.linalg.norm(translations(out) - translations(loop), axis=1)
    for k in range(len(loop)):
        assert (k in inside) == (d[k] > 0)
    assert np.allclose(d[list(inside)], [plan_mag for plan_mag in
                                          np.concatenate([[g.magnitude_m] * len(ids) for g, ids in
                                                          zip(plan.segments, plan.pose_indices(loop))])])
    dirs = path_directions(loop)
    off = translations(out) - translations(loop)
    assert np.allclose(np.einsum("ij,ij->i", off, dirs), 0, atol=1e-12)

"""Per-pose ghost statistics, bad-pose classification and report aggregation.

Every pose ``i`` is evaluated against a submap built from the other frames
whose poses lie within ``submap_radius_m``. Frame ``i`` is downsampled,
placed in the world and its observation rays are checked for map points in
free space. The pose is bad when too many of its points see ghosts.

Two equivalent submap paths exist. :func:`assemble_submap` concatenates the
neighbour frames, voxel-filters and indexes them, exactly as described.
:class:`MapContext` does the expensive parts once per trajectory (world
transforms, voxel keys, one kd-tree over all frames) and expresses each
submap as an active mask over that shared tree. Both give the same hits.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyInput, EmptySubmap, GhostEvalError, InputMismatch
from .ghosts import FrameGhosts, frame_ghost_arrays
from .model import (EvalConfig, EvaluationReport, Frame, Label, PointCloud, Pose, PoseStats,
                    SensorModel, lidar_origin, translations)
from .preprocess import (DownsampleParams, downsample_mask, group_representatives, pack_keys,
                         tie_tolerance, voxel_keys, voxel_representatives)
from .spatial import SubmapIndex

log = logging.getLogger(__name__)


class SeverityFloorViolation(GhostEvalError):
    """A hit at or below the severity threshold was about to be counted."""


def _check_inputs(trajectory, clouds):
    if len(trajectory) != len(clouds):
        raise InputMismatch(f"{len(trajectory)} poses but {len(clouds)} clouds")
    if len(trajectory) == 0:
        raise EmptyInput("empty trajectory")
    for c in clouds:
        if c.frame is not Frame.BODY:
            raise InputMismatch("clouds must be given in the body frame")


QUAT_GRID = 1e-9
TRANSLATION_GRID_M = 1e-6


def anchored(trajectory: Sequence[Pose]) -> list[Pose]:
    """Poses relative to the first one, snapped to a fine grid.

    A global rigid transform of the trajectory only perturbs the relative
    poses by rounding noise, which the snapping removes, so everything
    computed downstream is bit-identical for any placement of the trajectory.
    """
    inv0 = trajectory[0].inverse()
    out = []
    for p in trajectory:
        r = inv0 @ p
        q = np.round(r.rotation / QUAT_GRID) * QUAT_GRID
        t = np.round(r.translation / TRANSLATION_GRID_M) * TRANSLATION_GRID_M
        out.append(Pose(index=p.index, rotation=q / np.linalg.norm(q), translation=t))
    return out


def neighbour_frames(trajectory: Sequence[Pose], i: int, radius: float) -> np.ndarray:
    """Indices ``j != i`` whose pose translation lies within ``radius`` of pose ``i``."""
    t = translations(trajectory)
    d = np.linalg.norm(t - t[i], axis=1)
    near = d <= radius
    near[i] = False
    return np.flatnonzero(near)


def assemble_submap(trajectory, clouds, i, cfg: EvalConfig, sensor: SensorModel | None = None) -> SubmapIndex:
    """Voxel-filtered world-frame union of the neighbour frames of pose ``i``.

    Points are expressed in the frame of the trajectory's first pose (see
    :func:`anchored`), which also anchors the voxel grid.

    Raises:
        EmptySubmap: no other pose lies within ``cfg.submap_radius_m``.
    """
    _check_inputs(trajectory, clouds)
    trajectory = anchored(trajectory)
    nb = neighbour_frames(trajectory, i, cfg.submap_radius_m)
    if len(nb) == 0:
        raise EmptySubmap(f"pose {i} has no neighbours within {cfg.submap_radius_m} m")
    pts = np.concatenate([trajectory[j].apply(clouds[j].positions) for j in nb])
    labels = np.concatenate([clouds[j].labels for j in nb])
    if len(pts) == 0:
        raise EmptySubmap(f"neighbour frames of pose {i} contain no points")
    keep = voxel_representatives(pts, cfg.voxel_leaf_m)
    return SubmapIndex(pts[keep], labels[keep])


@dataclass(frozen=True)
class PoseResult:
    stats: PoseStats
    frame_points: np.ndarray     # downsampled points of pose i, world frame
    frame_labels: np.ndarray
    ghost_points: np.ndarray     # submap points of counted hits, world frame
    hits: FrameGhosts | None     # every hit, counted or not


def pose_stats(index: int, frame_labels, ghosts: FrameGhosts, cfg: EvalConfig) -> PoseStats:
    """Count pole/ordinary points and their severe ghost hits."""
    is_pole = frame_labels == Label.POLE
    counted = ghosts.d_prj > cfg.ghost_severity_threshold_m
    # the severity floor is rechecked here so no weak hit can slip into the counts
    if np.any(ghosts.d_prj[counted] <= cfg.ghost_severity_threshold_m):
        raise SeverityFloorViolation(f"pose {index}: counted hit with d_prj <= threshold")
    cap = ghosts.capturing_index[counted]
    if len(np.unique(cap)) != len(cap):
        raise SeverityFloorViolation(f"pose {index}: capturing point counted twice")
    m_pole = int(np.count_nonzero(is_pole[cap]))
    return PoseStats.from_counts(index, int(is_pole.sum()), int((~is_pole).sum()),
                                 m_pole, len(cap) - m_pole, cfg)


class MapContext:
    """Shared, read-only state for evaluating every pose of one trajectory.

    Internally all points live in the anchored frame of the first pose;
    ``world`` maps them back for output.
    """

    def __init__(self, trajectory: Sequence[Pose], clouds: Sequence[PointCloud], cfg: EvalConfig,
                 sensor: SensorModel):
        _check_inputs(trajectory, clouds)
        self.world = trajectory[0]
        self.trajectory = anchored(trajectory)
        self.cfg = cfg
        self.sensor = sensor
        self._params = DownsampleParams.for_sensor(sensor)

        sizes = np.array([len(c) for c in clouds], np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.frame_of = np.repeat(np.arange(len(clouds)), sizes)
        world = [p.apply(c.positions) for p, c in zip(self.trajectory, clouds)]
        self.points = np.concatenate(world) if len(world) else np.zeros((0, 3))
        self.labels = np.concatenate([c.labels for c in clouds])

        masks = [downsample_mask(c, sensor, self._params) for c in clouds]
        self.frame_points = [w[m] for w, m in zip(world, masks)]
        self.frame_labels = [c.labels[m] for c, m in zip(clouds, masks)]

        keys = pack_keys(voxel_keys(self.points, cfg.voxel_leaf_m))
        self.order = np.argsort(keys, kind="stable")
        self.sorted_keys = keys[self.order]
        self.sorted_frame = self.frame_of[self.order]
        self.index = SubmapIndex(self.points, self.labels) if len(self.points) else None
        self.translations = translations(self.trajectory)

    def __len__(self):
        return len(self.trajectory)

    def submap_mask(self, i: int) -> np.ndarray:
        nb = neighbour_frames(self.trajectory, i, self.cfg.submap_radius_m)
        if len(nb) == 0:
            raise EmptySubmap(f"pose {i} has no neighbours within {self.cfg.submap_radius_m} m")
        use = np.zeros(len(self.trajectory), bool)
        use[nb] = True
        sel = use[self.sorted_frame]
        if not sel.any():
            raise EmptySubmap(f"neighbour frames of pose {i} contain no points")
        reps = group_representatives(self.points, self.order[sel], self.sorted_keys[sel],
                                     tie_tolerance(self.cfg.voxel_leaf_m))
        active = np.zeros(len(self.points), bool)
        active[reps] = True
        return active

    def submap(self, i: int) -> SubmapIndex:
        return self.index.restrict(self.submap_mask(i))

    def evaluate_pose(self, i: int, method="traverse") -> PoseResult:
        fl = self.frame_labels[i]
        fp = self.frame_points[i]
        try:
            sub = self.submap(i)
        except EmptySubmap:
            log.info("pose %d unevaluated: empty submap", i)
            empty = FrameGhosts(np.zeros(0, np.int64), np.zeros(0, np.int64), *(np.zeros(0),) * 4)
            return PoseResult(PoseStats.unevaluated(i), self.world.apply(fp), fl, np.zeros((0, 3)), empty)
        origin = lidar_origin(self.trajectory[i], self.sensor)
        ghosts = frame_ghost_arrays(fp, origin, sub, self.cfg, method)
        stats = pose_stats(i, fl, ghosts, self.cfg)
        counted = ghosts.d_prj > self.cfg.ghost_severity_threshold_m
        return PoseResult(stats, self.world.apply(fp), fl,
                          self.world.apply(self.points[ghosts.ghost_index[counted]]), ghosts)

    def evaluate(self, threads: int = 1, progress: Callable[[int], None] | None = None,
                 indices=None, method="traverse") -> list[PoseResult]:
        """Evaluate poses (all by default); results are ordered by pose index."""
        todo = sorted(range(len(self)) if indices is None else set(int(k) for k in indices))
        if threads < 1:
            raise ValueError("threads must be >= 1")

        def run(k):
            r = self.evaluate_pose(k, method)
            if progress is not None:
                progress(k)
            return r

        if threads == 1:
            return [run(k) for k in todo]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, todo))


def evaluate_pose(trajectory, clouds, i, cfg: EvalConfig, sensor: SensorModel) -> PoseStats:
    """Statistics of one pose, building its submap from scratch.

    Poses with no neighbour come back with ``evaluated=False``.
    """
    _check_inputs(trajectory, clouds)
    trajectory = anchored(trajectory)
    mask = downsample_mask(clouds[i], sensor)
    fp = trajectory[i].apply(clouds[i].positions[mask])
    fl = clouds[i].labels[mask]
    try:
        sub = assemble_submap(trajectory, clouds, i, cfg, sensor)
    except EmptySubmap:
        return PoseStats.unevaluated(i)
    ghosts = frame_ghost_arrays(fp, lidar_origin(trajectory[i], sensor), sub, cfg)
    return pose_stats(i, fl, ghosts, cfg)


def evaluate_trajectory(trajectory, clouds, cfg: EvalConfig | None = None, sensor: SensorModel | None = None,
                        threads: int = 1, progress=None) -> EvaluationReport:
    """Evaluate every pose and aggregate the bad-pose set and accuracy."""
    cfg = cfg or EvalConfig()
    sensor = sensor or SensorModel()
    ctx = MapContext(trajectory, clouds, cfg, sensor)
    results = ctx.evaluate(threads=threads, progress=progress)
    return EvaluationReport.from_stats([r.stats for r in results], cfg, sensor)

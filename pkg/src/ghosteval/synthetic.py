"""Synthetic lidar benchmarks: scenes, ray-cast scans and pose disturbances.

Scenes are made of a ground plane at z = 0, axis-aligned boxes (buildings,
walls) and vertical cylinders (poles). Scans are rendered by casting every
(laser, azimuth step) ray of a :class:`SensorModel` and keeping the first
hit, so scan ids, fire ids and labels are exact.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .errors import PlanOutOfRange, SpecError
from .model import PointCloud, Pose, Rigid, SensorModel, arclength, quat_from_yaw, translations

T_EPS = 1e-9


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if any(b <= a for a, b in zip(lo, hi)):
            raise SpecError(f"box has non-positive extent: {lo} {hi}")
        if lo[2] < 0:
            raise SpecError("box extends below the ground")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


@dataclass(frozen=True)
class Pole:
    cx: float
    cy: float
    radius: float
    height: float

    def __post_init__(self):
        if not self.radius > 0 or not self.height > 0:
            raise SpecError("pole radius and height must be positive")


@dataclass(frozen=True)
class Scene:
    """Ground plane z = 0 plus boxes (label Default) and poles (label Pole)."""

    boxes: tuple = ()
    poles: tuple = ()

    def box_array(self) -> np.ndarray:
        return np.array([b.lo + b.hi for b in self.boxes], dtype=np.float64).reshape(-1, 6)

    def pole_array(self) -> np.ndarray:
        return np.array([(p.cx, p.cy, p.radius, p.height) for p in self.poles], dtype=np.float64).reshape(-1, 4)


@dataclass(frozen=True)
class TrajectorySpec:
    """Polyline path sampled at fixed spacing, plus the sensor to simulate."""

    waypoints: tuple
    spacing_m: float = 1.0
    closed: bool = False
    sensor: SensorModel = field(default_factory=SensorModel)
    range_noise_sigma_m: float = 0.0

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise SpecError("trajectory spec needs at least two waypoints")
        if not self.spacing_m > 0:
            raise SpecError("spacing must be positive")
        if self.range_noise_sigma_m < 0:
            raise SpecError("range noise sigma must be >= 0")


# --- ray casting -------------------------------------------------------------

@njit(cache=True, nogil=True)
def _cast(origin, dirs, max_range, boxes, poles):
    """First-hit distance and label per ray; label -1 marks a miss."""
    m = dirs.shape[0]
    t_out = np.full(m, np.inf)
    lab = np.full(m, -1, np.int64)
    o = origin
    for i in range(m):
        d0 = dirs[i, 0]
        d1 = dirs[i, 1]
        d2 = dirs[i, 2]
        best = max_range
        best_lab = -1
        if d2 < 0.0:
            t = -o[2] / d2
            if T_EPS < t <= best:
                best = t
                best_lab = 1
        for b in range(boxes.shape[0]):
            tmin = -np.inf
            tmax = np.inf
            ok = True
            for a in range(3):
                da = dirs[i, a]
                lo = boxes[b, a]
                hi = boxes[b, a + 3]
                if da == 0.0:
                    if o[a] < lo or o[a] > hi:
                        ok = False
                        break
                else:
                    t1 = (lo - o[a]) / da
                    t2 = (hi - o[a]) / da
                    if t1 > t2:
                        t1, t2 = t2, t1
                    if t1 > tmin:
                        tmin = t1
                    if t2 < tmax:
                        tmax = t2
            if ok and tmin <= tmax and T_EPS < tmin and (tmin < best or (tmin == best and best_lab < 0)):
                best = tmin
                best_lab = 0
        for p in range(poles.shape[0]):
            cx = poles[p, 0]
            cy = poles[p, 1]
            r = poles[p, 2]
            h = poles[p, 3]
            a = d0 * d0 + d1 * d1
            ex = o[0] - cx
            ey = o[1] - cy
            if a > 0.0:
                bb = 2.0 * (d0 * ex + d1 * ey)
                c = ex * ex + ey * ey - r * r
                disc = bb * bb - 4.0 * a * c
                if disc >= 0.0:
                    t = (-bb - math.sqrt(disc)) / (2.0 * a)
                    z = o[2] + t * d2
                    if T_EPS < t and 0.0 <= z <= h and (t < best or (t == best and best_lab < 0)):
                        best = t
                        best_lab = 2
            if d2 != 0.0:
                t = (h - o[2]) / d2
                if T_EPS < t and (t < best or (t == best and best_lab < 0)):
                    x = o[0] + t * d0 - cx
                    y = o[1] + t * d1 - cy
                    if x * x + y * y <= r * r:
                        best = t
                        best_lab = 2
        if best_lab >= 0:
            t_out[i] = best
            lab[i] = best_lab
    return t_out, lab


def ray_directions(sensor: SensorModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit ray directions in the lidar frame, with their scan and fire ids.

    Rows are ordered laser by laser, azimuth step ``k`` at ``k * resolution``.
    """
    elev = np.radians(sensor.elevations_deg())
    az = np.radians(np.arange(sensor.fire_count) * sensor.angular_resolution_deg)
    E, A = np.meshgrid(elev, az, indexing="ij")
    dirs = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)
    scan, fire = np.meshgrid(np.arange(sensor.n_lasers), np.arange(sensor.fire_count), indexing="ij")
    return dirs, scan.ravel(), fire.ravel()


def simulate_scan(scene: Scene, pose: Rigid, sensor: SensorModel, range_noise_sigma_m: float = 0.0,
                  rng: np.random.Generator | None = None, frame_index=None) -> PointCloud:
    """Render one body-frame scan of ``scene`` from ``pose``.

    Rays that hit nothing within ``sensor.max_range_m`` produce no point.
    With ``range_noise_sigma_m > 0`` each range gets Gaussian noise from
    ``rng`` (required in that case).
    """
    dirs_l, scan, fire = ray_directions(sensor)
    lidar_pose = pose @ sensor.lidar_extrinsic
    R = lidar_pose.matrix
    dirs_w = np.ascontiguousarray(dirs_l @ R.T)
    t, lab = _cast(np.ascontiguousarray(lidar_pose.translation), dirs_w, float(sensor.max_range_m),
                   scene.box_array(), scene.pole_array())
    hit = lab >= 0
    rng_m = t[hit]
    if range_noise_sigma_m > 0:
        if rng is None:
            raise ValueError("range noise requires an rng")
        rng_m = rng_m + rng.normal(0.0, range_noise_sigma_m, size=rng_m.shape)
        ok = rng_m > 0
    else:
        ok = np.ones(len(rng_m), bool)
    idx = np.flatnonzero(hit)[ok]
    pts_l = dirs_l[idx] * rng_m[ok, None]
    pts_b = sensor.lidar_extrinsic.apply(pts_l)
    return PointCloud(pts_b, scan[idx], fire[idx], lab[idx].astype(np.uint8), frame_index=frame_index)


# --- trajectories ------------------------------------------------------------

def sample_path(spec: TrajectorySpec) -> list[Pose]:
    """Poses every ``spacing_m`` along the polyline, heading along the path.

    A closed path is not sampled again at its starting point.
    """
    w = np.asarray(spec.waypoints, dtype=np.float64)
    if w.shape[1] == 2:
        w = np.c_[w, np.zeros(len(w))]
    if spec.closed:
        w = np.vstack([w, w[:1]])
    seg = np.diff(w, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    if np.any(seg_len <= 0):
        raise SpecError("consecutive waypoints coincide")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    if spec.closed:
        n = int(math.ceil(total / spec.spacing_m - 1e-9))
    else:
        n = int(math.floor(total / spec.spacing_m + 1e-9)) + 1
    poses = []
    for k in range(n):
        s = k * spec.spacing_m
        j = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        u = (s - cum[j]) / seg_len[j]
        p = w[j] + u * seg[j]
        yaw = math.atan2(seg[j, 1], seg[j, 0])
        poses.append(Pose(index=k, rotation=quat_from_yaw(yaw), translation=p))
    return poses


def build_benchmark(scene: Scene, spec: TrajectorySpec, seed: int = 0,
                    sensor: SensorModel | None = None, progress=None):
    """Poses along the trajectory spec path and one simulated scan per pose.

    Noise for frame ``k`` is drawn from ``default_rng([seed, k])`` so frames
    can be rendered in any order.
    """
    sensor = sensor or spec.sensor
    poses = sample_path(spec)
    clouds = []
    for p in poses:
        rng = np.random.default_rng([seed, p.index]) if spec.range_noise_sigma_m > 0 else None
        clouds.append(simulate_scan(scene, p, sensor, spec.range_noise_sigma_m, rng, frame_index=p.index))
        if progress is not None:
            progress(p.index)
    return poses, clouds


# --- disturbances ------------------------------------------------------------

class Axis(enum.Enum):
    XY = "XY"
    Z = "Z"
    XYZ = "XYZ"  # both at once; a stress-test mode, not part of the standard protocol


MAGNITUDE_BLOCK = (0.10,) * 6 + (0.15, 0.20)
SEGMENT_LENGTH_M = 50.0
DEFAULT_PITCH_M = 375.0


@dataclass(frozen=True)
class Segment:
    start_arclen_m: float
    length_m: float
    axis: Axis
    magnitude_m: float
    sign: int = 1

    def __post_init__(self):
        object.__setattr__(self, "axis", Axis(self.axis))
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if not self.length_m > 0 or not self.magnitude_m > 0:
            raise ValueError("segment length and magnitude must be positive")

    @property
    def end_arclen_m(self) -> float:
        return self.start_arclen_m + self.length_m

    def contains(self, s) -> np.ndarray:
        return (s >= self.start_arclen_m) & (s < self.end_arclen_m)


@dataclass(frozen=True)
class DisturbancePlan:
    segments: tuple = ()

    def __post_init__(self):
        segs = tuple(sorted(self.segments, key=lambda g: g.start_arclen_m))
        for a, b in zip(segs, segs[1:]):
            if b.start_arclen_m < a.end_arclen_m:
                raise ValueError("disturbance segments overlap")
        object.__setattr__(self, "segments", segs)

    def __len__(self):
        return len(self.segments)

    def pose_indices(self, trajectory) -> list[np.ndarray]:
        s = arclength(trajectory)
        return [np.flatnonzero(g.contains(s)) for g in self.segments]


def default_sign(axis: Axis) -> int:
    # Z disturbances lower the poses: a raised frame's ground lies above the
    # map's ground and is never crossed by the raised frame's own rays.
    return 1 if axis is Axis.XY else -1


def make_plan(total_length_m: float, axis, seed: int = 0, segment_length_m: float = SEGMENT_LENGTH_M,
              pitch_m: float = DEFAULT_PITCH_M) -> DisturbancePlan:
    """Evenly pitched disturbance areas with magnitudes in 6:1:1 proportion.

    Segment ``k`` starts at ``(pitch - length) / 2 + k * pitch``. Each run of
    eight consecutive segments holds six 0.10 m, one 0.15 m and one 0.20 m
    disturbance in a seeded random order.
    """
    axis = Axis(axis)
    if not pitch_m >= segment_length_m:
        raise ValueError("pitch must be at least the segment length")
    lead = 0.5 * (pitch_m - segment_length_m)
    n = int(math.floor((total_length_m - lead - segment_length_m) / pitch_m + 1e-9)) + 1
    if lead + segment_length_m > total_length_m + 1e-9:
        n = 0
    if n < 1:
        raise PlanOutOfRange(f"path of {total_length_m:.1f} m is too short for one {segment_length_m} m area")
    rng = np.random.default_rng(seed)
    mags = []
    while len(mags) < n:
        mags.extend(np.asarray(MAGNITUDE_BLOCK)[rng.permutation(len(MAGNITUDE_BLOCK))].tolist())
    sign = default_sign(axis)
    return DisturbancePlan(tuple(
        Segment(lead + k * pitch_m, segment_length_m, axis, float(mags[k]), sign) for k in range(n)))


def path_directions(trajectory) -> np.ndarray:
    """Unit horizontal path direction at each pose (central differences)."""
    t = translations(trajectory)
    if len(t) < 2:
        raise PlanOutOfRange("need at least two poses to define a path direction")
    d = np.empty_like(t)
    d[1:-1] = t[2:] - t[:-2]
    d[0] = t[1] - t[0]
    d[-1] = t[-1] - t[-2]
    d[:, 2] = 0.0
    norm = np.linalg.norm(d, axis=1)
    if np.any(norm == 0):
        raise PlanOutOfRange("path direction undefined (vertical or repeated poses)")
    return d / norm[:, None]


def inject_disturbance(trajectory: Sequence[Pose], plan: DisturbancePlan) -> list[Pose]:
    """Offset the translations of poses inside each plan segment.

    XY segments move poses along the left horizontal normal of the path,
    Z segments along the vertical; ``sign`` flips either. Rotations and all
    poses outside the segments are returned unchanged.
    """
    out = list(trajectory)
    if not plan.segments:
        return out
    s = arclength(trajectory)
    total = s[-1] if len(s) else 0.0
    for g in plan.segments:
        if g.start_arclen_m < 0 or g.end_arclen_m > total + 1e-9:
            raise PlanOutOfRange(
                f"segment [{g.start_arclen_m}, {g.end_arclen_m}) exceeds path length {total:.3f}")
    dirs = path_directions(trajectory)
    for g in plan.segments:
        for k in np.flatnonzero(g.contains(s)):
            off = np.zeros(3)
            if g.axis in (Axis.XY, Axis.XYZ):
                off += np.array([-dirs[k, 1], dirs[k, 0], 0.0])
            if g.axis in (Axis.Z, Axis.XYZ):
                off[2] += 1.0
            off *= g.sign * g.magnitude_m
            p = out[k]
            out[k] = replace_translation(p, p.translation + off)
    return out


def replace_translation(pose: Pose, t) -> Pose:
    return Pose(index=pose.index, rotation=pose.rotation, translation=t)

"""Core domain types: poses, lidar points, clouds, sensor and evaluation config.

Quaternions are stored scalar-first, ``(w, x, y, z)``. The on-disk trajectory
format uses scalar-last order; the conversion lives in :mod:`ghosteval.io`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from .errors import InputMismatch, NonContiguousIndex

QUAT_NORM_TOL = 1e-9


def _frozen(a, dtype=np.float64, shape=None):
    arr = np.array(a, dtype=dtype)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z) with w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_from_axis_angle(axis, angle_rad) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle_rad
    return np.concatenate([[math.cos(h)], math.sin(h) * axis])


def quat_from_yaw(yaw_rad) -> np.ndarray:
    return np.array([math.cos(0.5 * yaw_rad), 0.0, 0.0, math.sin(0.5 * yaw_rad)])


@dataclass(frozen=True, eq=False, kw_only=True)
class Rigid:
    """Rigid transform ``p -> R p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = _frozen(self.rotation, shape=(4,))
        t = _frozen(self.translation, shape=(3,))
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite transform component")
        if abs(float(np.linalg.norm(q)) - 1.0) > QUAT_NORM_TOL:
            raise ValueError(f"rotation quaternion is not unit norm: |q|={np.linalg.norm(q)!r}")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)
        R = quat_to_matrix(q)
        R.setflags(write=False)
        object.__setattr__(self, "_R", R)

    @property
    def matrix(self) -> np.ndarray:
        """3x3 rotation matrix."""
        return self._R

    def as_matrix4(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self._R
        T[:3, 3] = self.translation
        return T

    def apply(self, points) -> np.ndarray:
        """Map points (3,) or (N, 3) through the transform."""
        # Elementwise rather than BLAS so each row is computed identically
        # whatever the batch size.
        p = np.asarray(points, dtype=np.float64)
        R, t = self._R, self.translation
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        out = np.empty(p.shape)
        out[..., 0] = R[0, 0] * x + R[0, 1] * y + R[0, 2] * z + t[0]
        out[..., 1] = R[1, 0] * x + R[1, 1] * y + R[1, 2] * z + t[1]
        out[..., 2] = R[2, 0] * x + R[2, 1] * y + R[2, 2] * z + t[2]
        return out

    def inverse(self):
        w, x, y, z = self.rotation
        q_inv = np.array([w, -x, -y, -z])
        t_inv = -(self._R.T @ self.translation)
        return self._with(q_inv, t_inv)

    def __matmul__(self, other: "Rigid"):
        """Composition ``self ∘ other``; keeps the left operand's type/index."""
        q = quat_multiply(self.rotation, other.rotation)
        q /= np.linalg.norm(q)
        t = self._R @ other.translation + self.translation
        return self._with(q, t)

    def _with(self, q, t):
        return Rigid(rotation=q, translation=t)

    def _key(self):
        return (type(self), self.rotation.tobytes(), self.translation.tobytes())

    def __eq__(self, other):
        if not isinstance(other, Rigid):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    @classmethod
    def from_matrix(cls, R, t, **kw):
        return cls(rotation=matrix_to_quat(R), translation=t, **kw)


@dataclass(frozen=True, eq=False, kw_only=True)
class Pose(Rigid):
    """Body-to-world transform of one frame."""

    index: int = 0

    def __post_init__(self):
        super().__post_init__()
        if int(self.index) != self.index or self.index < 0:
            raise ValueError(f"pose index must be a non-negative integer, got {self.index!r}")
        object.__setattr__(self, "index", int(self.index))

    def _with(self, q, t):
        return Pose(index=self.index, rotation=q, translation=t)

    def _key(self):
        return super()._key() + (self.index,)

    __eq__ = Rigid.__eq__
    __hash__ = Rigid.__hash__

    def __repr__(self):
        return f"Pose(index={self.index}, rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def compose(pose: Rigid, point_body) -> np.ndarray:
    """World coordinates of a body-frame point: ``R p + t``."""
    return pose.apply(point_body)


def lidar_origin(pose: Rigid, sensor: "SensorModel") -> np.ndarray:
    """World position of the lidar optical centre for this pose."""
    return compose(pose, sensor.lidar_extrinsic.translation)


def validate_trajectory(poses: Sequence[Pose]) -> None:
    for k, p in enumerate(poses):
        if p.index != k:
            raise NonContiguousIndex(f"pose at position {k} has index {p.index}")


def translations(poses: Sequence[Rigid]) -> np.ndarray:
    if len(poses) == 0:
        return np.zeros((0, 3))
    return np.stack([p.translation for p in poses])


def arclength(poses: Sequence[Rigid]) -> np.ndarray:
    """Cumulative path length at each pose, starting at 0."""
    t = translations(poses)
    if len(t) == 0:
        return np.zeros(0)
    steps = np.linalg.norm(np.diff(t, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


class Label(enum.IntEnum):
    DEFAULT = 0
    GROUND = 1
    POLE = 2


class Frame(enum.Enum):
    BODY = "body"
    WORLD = "world"


@dataclass(frozen=True)
class LidarPoint:
    position: tuple
    scan_id: int
    fire_id: int
    label: Label = Label.DEFAULT


class PointCloud:
    """One frame of lidar returns stored column-wise.

    ``positions`` is (N, 3) float64; ``scan_id``/``fire_id`` are int arrays and
    ``labels`` holds :class:`Label` codes. Arrays are made read-only.
    """

    __slots__ = ("frame_index", "frame", "positions", "scan_id", "fire_id", "labels")

    def __init__(self, positions, scan_id=None, fire_id=None, labels=None, *, frame_index=None, frame=Frame.BODY):
        pos = np.array(positions, dtype=np.float64).reshape(-1, 3)
        n = len(pos)
        if not np.all(np.isfinite(pos)):
            raise ValueError("point positions must be finite")
        sid = np.zeros(n, np.int64) if scan_id is None else np.array(scan_id, dtype=np.int64).reshape(-1)
        fid = np.zeros(n, np.int64) if fire_id is None else np.array(fire_id, dtype=np.int64).reshape(-1)
        lab = np.zeros(n, np.uint8) if labels is None else np.array(labels, dtype=np.uint8).reshape(-1)
        if not (len(sid) == len(fid) == len(lab) == n):
            raise InputMismatch("positions, scan_id, fire_id and labels must have equal length")
        if n and (sid.min() < 0 or fid.min() < 0):
            raise ValueError("scan_id and fire_id must be non-negative")
        if n and lab.max() > max(Label):
            raise ValueError(f"unknown label code {int(lab.max())}")
        for a in (pos, sid, fid, lab):
            a.setflags(write=False)
        self.positions = pos
        self.scan_id = sid
        self.fire_id = fid
        self.labels = lab
        self.frame_index = frame_index
        self.frame = Frame(frame)

    @classmethod
    def from_points(cls, points: Iterable[LidarPoint], **kw):
        pts = list(points)
        if not pts:
            return cls(np.zeros((0, 3)), **kw)
        return cls(
            [p.position for p in pts],
            [p.scan_id for p in pts],
            [p.fire_id for p in pts],
            [int(p.label) for p in pts],
            **kw,
        )

    @property
    def points(self) -> list[LidarPoint]:
        return [
            LidarPoint(tuple(p), int(s), int(f), Label(int(l)))
            for p, s, f, l in zip(self.positions.tolist(), self.scan_id, self.fire_id, self.labels)
        ]

    def __len__(self):
        return len(self.positions)

    def subset(self, mask_or_index) -> "PointCloud":
        return PointCloud(
            self.positions[mask_or_index],
            self.scan_id[mask_or_index],
            self.fire_id[mask_or_index],
            self.labels[mask_or_index],
            frame_index=self.frame_index,
            frame=self.frame,
        )

    def with_positions(self, positions, frame=None) -> "PointCloud":
        return PointCloud(
            positions, self.scan_id, self.fire_id, self.labels,
            frame_index=self.frame_index, frame=self.frame if frame is None else frame,
        )

    def __repr__(self):
        return f"PointCloud(n={len(self)}, frame_index={self.frame_index}, frame={self.frame.value})"


@dataclass(frozen=True)
class SensorModel:
    """Multi-beam spinning lidar.

    ``lidar_extrinsic`` is the lidar's pose expressed in the body frame, so its
    translation is the optical centre in body coordinates.
    """

    n_lasers: int = 16
    angular_resolution_deg: float = 0.2
    lidar_extrinsic: Rigid = field(default_factory=lambda: Rigid(translation=[0.0, 0.0, 1.8]))
    vertical_fov_deg: tuple = (-25.0, 15.0)
    max_range_m: float = 80.0

    def __post_init__(self):
        if self.n_lasers < 1:
            raise ValueError("n_lasers must be >= 1")
        if not self.angular_resolution_deg > 0:
            raise ValueError("angular_resolution_deg must be positive")
        if self.fire_count < 1:
            raise ValueError("360 / angular_resolution_deg must be >= 1")
        lo, hi = self.vertical_fov_deg
        if not lo <= hi:
            raise ValueError("vertical_fov_deg must be (low, high)")
        object.__setattr__(self, "vertical_fov_deg", (float(lo), float(hi)))

    @property
    def fire_count(self) -> int:
        """Azimuth steps per revolution (floor of 360 / resolution)."""
        return int(math.floor(360.0 / self.angular_resolution_deg + 1e-9))

    def elevations_deg(self) -> np.ndarray:
        lo, hi = self.vertical_fov_deg
        if self.n_lasers == 1:
            return np.array([0.5 * (lo + hi)])
        return np.linspace(lo, hi, self.n_lasers)

    def to_dict(self) -> dict:
        return {
            "n_lasers": self.n_lasers,
            "angular_resolution_deg": self.angular_resolution_deg,
            "lidar_extrinsic": {
                "rotation_wxyz": self.lidar_extrinsic.rotation.tolist(),
                "translation": self.lidar_extrinsic.translation.tolist(),
            },
            "vertical_fov_deg": list(self.vertical_fov_deg),
            "max_range_m": self.max_range_m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorModel":
        ext = d.get("lidar_extrinsic", {})
        return cls(
            n_lasers=int(d["n_lasers"]),
            angular_resolution_deg=float(d["angular_resolution_deg"]),
            lidar_extrinsic=Rigid(
                rotation=ext.get("rotation_wxyz", [1.0, 0.0, 0.0, 0.0]),
                translation=ext.get("translation", [0.0, 0.0, 1.8]),
            ),
            vertical_fov_deg=tuple(d.get("vertical_fov_deg", (-25.0, 15.0))),
            max_range_m=float(d.get("max_range_m", 80.0)),
        )


@dataclass(frozen=True)
class EvalConfig:
    submap_radius_m: float = 30.0
    ghost_search_radius_m: float = 0.05
    on_ray_tolerance_m: float = 0.03
    grazing_angle_threshold_deg: float = 70.0
    ghost_severity_threshold_m: float = 0.1
    pole_ratio_threshold: float = 0.05
    ordinary_ratio_threshold: float = 0.025
    voxel_leaf_m: float = 0.02
    ray_sample_spacing_m: float = 0.05
    ray_start_offset_m: float = 0.15
    ray_end_margin_m: float = 1.0
    pca_neighborhood_radius_m: float = 0.3
    pca_min_neighbors: int = 8

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "pca_min_neighbors":
                if int(v) != v or v < 3:
                    raise ValueError("pca_min_neighbors must be an integer >= 3")
                object.__setattr__(self, f.name, int(v))
                continue
            v = float(v)
            object.__setattr__(self, f.name, v)
            if not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite")
            if f.name in ("pole_ratio_threshold", "ordinary_ratio_threshold"):
                if not 0.0 < v < 1.0:
                    raise ValueError(f"{f.name} must lie in (0, 1)")
            elif f.name == "grazing_angle_threshold_deg":
                if not 0.0 < v < 90.0:
                    raise ValueError("grazing_angle_threshold_deg must lie in (0, 90)")
            elif not v > 0.0:
                raise ValueError(f"{f.name} must be strictly positive")
        if not self.ghost_search_radius_m > self.on_ray_tolerance_m:
            raise ValueError("ghost_search_radius_m must exceed on_ray_tolerance_m")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class PoseStats:
    index: int
    n_pole: int = 0
    n_ordi: int = 0
    m_pole: int = 0
    m_ordi: int = 0
    pole_ratio: float = 0.0
    ordi_ratio: float = 0.0
    is_bad: bool = False
    evaluated: bool = True

    @classmethod
    def from_counts(cls, index, n_pole, n_ordi, m_pole, m_ordi, cfg: EvalConfig) -> "PoseStats":
        pole_ratio = m_pole / n_pole if n_pole else 0.0
        ordi_ratio = m_ordi / n_ordi if n_ordi else 0.0
        bad = pole_ratio > cfg.pole_ratio_threshold or ordi_ratio > cfg.ordinary_ratio_threshold
        return cls(int(index), int(n_pole), int(n_ordi), int(m_pole), int(m_ordi),
                   float(pole_ratio), float(ordi_ratio), bool(bad), True)

    @classmethod
    def unevaluated(cls, index) -> "PoseStats":
        return cls(int(index), evaluated=False)


@dataclass(frozen=True)
class EvaluationReport:
    per_pose: tuple
    bad_pose_indices: tuple
    unevaluated_indices: tuple
    p_bad: float
    p_acc: float
    config: EvalConfig = field(default_factory=EvalConfig)
    sensor: SensorModel | None = None

    @classmethod
    def from_stats(cls, stats: Sequence[PoseStats], config: EvalConfig, sensor: SensorModel | None = None):
        stats = tuple(sorted(stats, key=lambda s: s.index))
        bad = tuple(s.index for s in stats if s.evaluated and s.is_bad)
        skipped = tuple(s.index for s in stats if not s.evaluated)
        n_eval = sum(1 for s in stats if s.evaluated)
        p_bad = len(bad) / n_eval if n_eval else 0.0
        return cls(stats, bad, skipped, p_bad, 1.0 - p_bad, config, sensor)

    @property
    def n_evaluated(self) -> int:
        return sum(1 for s in self.per_pose if s.evaluated)

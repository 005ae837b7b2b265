"""Frame and submap downsampling, and body-to-world transformation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import FrameMismatch, InvalidScanOrFireId
from .model import Frame, Label, PointCloud, Pose, Rigid, SensorModel


def _floor_mod(x: float) -> int:
    # Scatter moduli are integer counts of azimuth steps; 0 would mean "keep all".
    return max(1, int(math.floor(x + 1e-9)))


@dataclass(frozen=True)
class DownsampleParams:
    """Scatter-pattern thresholds derived from the sensor's angular resolution."""

    eta_ground: int
    eta_vec: tuple  # ((range_m, modulus), ...), ranges strictly increasing
    xi: float

    def __post_init__(self):
        ranges = [r for r, _ in self.eta_vec]
        if any(b <= a for a, b in zip(ranges, ranges[1:])):
            raise ValueError("eta_vec ranges must be strictly increasing")
        if self.eta_ground < 1 or any(m < 1 for _, m in self.eta_vec):
            raise ValueError("moduli must be positive")

    @classmethod
    def for_sensor(cls, sensor: SensorModel) -> "DownsampleParams":
        res = sensor.angular_resolution_deg
        return cls(
            eta_ground=_floor_mod(30.0 / res),
            eta_vec=(
                (5.0, _floor_mod(6.0 / res)),
                (10.0, _floor_mod(4.0 / res)),
                (20.0, _floor_mod(2.0 / res)),
                (900.0, _floor_mod(1.0 / res)),
            ),
            xi=sensor.fire_count / sensor.n_lasers,
        )


def _check_ids(cloud: PointCloud, sensor: SensorModel):
    if len(cloud) == 0:
        return
    if cloud.scan_id.max() >= sensor.n_lasers:
        raise InvalidScanOrFireId(f"scan_id {int(cloud.scan_id.max())} >= n_lasers {sensor.n_lasers}")
    if cloud.fire_id.max() >= sensor.fire_count:
        raise InvalidScanOrFireId(f"fire_id {int(cloud.fire_id.max())} >= f_m {sensor.fire_count}")


def scatter_keys(scan_id, fire_id, sensor: SensorModel, params: DownsampleParams | None = None) -> np.ndarray:
    """Scattered azimuth key ``floor(fire_id + scan_id * xi)`` wrapped once into [0, f_m)."""
    params = params or DownsampleParams.for_sensor(sensor)
    f_m = sensor.fire_count
    f_scat = np.floor(np.asarray(fire_id, np.float64) + np.asarray(scan_id, np.float64) * params.xi).astype(np.int64)
    if f_scat.size and f_scat.max() >= 2 * f_m:
        raise InvalidScanOrFireId("scattered fire key exceeds two revolutions")
    return np.where(f_scat >= f_m, f_scat - f_m, f_scat)


def downsample_mask(cloud: PointCloud, sensor: SensorModel, params: DownsampleParams | None = None) -> np.ndarray:
    params = params or DownsampleParams.for_sensor(sensor)
    _check_ids(cloud, sensor)
    f_scat = scatter_keys(cloud.scan_id, cloud.fire_id, sensor, params)
    labels = cloud.labels
    keep = labels == Label.POLE
    ground = labels == Label.GROUND
    keep |= ground & (f_scat % params.eta_ground == 0)

    other = ~(keep | ground)
    rng = np.linalg.norm(cloud.positions, axis=1)
    decided = np.zeros(len(cloud), dtype=bool)
    for limit, modulus in params.eta_vec:
        band = other & ~decided & (rng < limit)
        keep |= band & (f_scat % modulus == 0)
        decided |= band
    return keep


def downsample_frame(cloud: PointCloud, sensor: SensorModel, params: DownsampleParams | None = None) -> PointCloud:
    """Range-aware scatter downsampling of one body-frame scan.

    Every pole point survives. Ground points survive on a coarse azimuth
    lattice; other points use a lattice that gets finer with range, so the
    retained points are spread roughly evenly in space. Coordinates are never
    modified: the output is a subsequence of the input.
    """
    return cloud.subset(downsample_mask(cloud, sensor, params))


def to_world(cloud: PointCloud, pose: Rigid) -> PointCloud:
    if cloud.frame is Frame.WORLD:
        raise FrameMismatch("cloud is already in the world frame")
    return cloud.with_positions(pose.apply(cloud.positions), frame=Frame.WORLD)


def voxel_keys(positions, leaf: float, anchor: Rigid | None = None) -> np.ndarray:
    """Integer (N, 3) voxel coordinates in the anchor's frame (world if None)."""
    local = positions if anchor is None else anchor.inverse().apply(positions)
    return np.floor(np.asarray(local) / leaf).astype(np.int64)


def pack_keys(ijk: np.ndarray) -> np.ndarray:
    """Order-preserving packing of (i, j, k) rows into one int64 each."""
    if len(ijk) == 0:
        return np.zeros(0, np.int64)
    lo = ijk.min(axis=0)
    span = ijk.max(axis=0) - lo + 1
    if float(span[0]) * float(span[1]) * float(span[2]) >= 2.0**62:
        raise ValueError("voxel grid too large to pack; increase the leaf size")
    rel = ijk - lo
    return (rel[:, 0] * span[1] + rel[:, 1]) * span[2] + rel[:, 2]


@njit(cache=True, nogil=True)
def group_representatives(positions, order, sorted_keys, tie_tol):
    """For each run of equal keys, the member closest to the run's centroid.

    ``order`` lists point indices grouped by key, ascending index within a
    group. Squared distances within ``tie_tol`` count as ties, which go to
    the lowest index; exact ties (two-point cells) would otherwise be
    decided by rounding noise and break rigid invariance.
    """
    n = order.shape[0]
    reps = np.empty(n, np.int64)
    n_rep = 0
    g0 = 0
    while g0 < n:
        g1 = g0 + 1
        while g1 < n and sorted_keys[g1] == sorted_keys[g0]:
            g1 += 1
        sx = 0.0
        sy = 0.0
        sz = 0.0
        for q in range(g0, g1):
            p = order[q]
            sx += positions[p, 0]
            sy += positions[p, 1]
            sz += positions[p, 2]
        cnt = g1 - g0
        cx = sx / cnt
        cy = sy / cnt
        cz = sz / cnt
        best = -1
        best_d = np.inf
        for q in range(g0, g1):
            p = order[q]
            dx = positions[p, 0] - cx
            dy = positions[p, 1] - cy
            dz = positions[p, 2] - cz
            d = dx * dx + dy * dy + dz * dz
            if d < best_d - tie_tol:
                best_d = d
                best = p
        reps[n_rep] = best
        n_rep += 1
        g0 = g1
    return np.sort(reps[:n_rep])


def tie_tolerance(leaf: float) -> float:
    return 1e-10 * leaf * leaf


def voxel_representatives(positions, leaf: float, anchor: Rigid | None = None) -> np.ndarray:
    """Sorted indices of the points kept by the voxel filter."""
    if not leaf > 0:
        raise ValueError("leaf must be positive")
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    if len(positions) == 0:
        return np.zeros(0, np.int64)
    keys = pack_keys(voxel_keys(positions, leaf, anchor))
    order = np.argsort(keys, kind="stable")
    return group_representatives(positions, order, keys[order], tie_tolerance(leaf))


def voxel_filter(cloud: PointCloud, leaf: float, anchor: Rigid | None = None) -> PointCloud:
    """Keep one original point per voxel cell, the one nearest the cell centroid.

    ``anchor`` fixes the grid's frame; by default the grid is aligned with the
    cloud's own coordinates.
    """
    return cloud.subset(voxel_representatives(cloud.positions, leaf, anchor))

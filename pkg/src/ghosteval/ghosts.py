"""Free-space violation ("ghosting") measurement along lidar observation rays.

For a frame point ``pj`` seen from lidar centre ``o``, the segment ``o -> pj``
must be empty in a consistent map. Map points found near that segment are
ghost candidates and are scored by

* ``d_adj``: perpendicular distance of the candidate to the ray,
* ``d_ghs``: depth of the candidate in front of ``pj`` along the ray,
* ``d_prj``: ``d_ghs`` corrected by the angle between the ray and the local
  surface normal at ``pj`` when the ray grazes the surface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateRay
from .model import EvalConfig, PointCloud
from .spatial import SubmapIndex, _box_dist2, _grow, _radius_one

DEGENERATE_EPS = 1e-9


@njit(cache=True, inline="always")
def _metrics(o0, o1, o2, p0, p1, p2, g0, g1, g2):
    # a = O->Pj, b = Pghs->Pj
    a0 = p0 - o0
    a1 = p1 - o1
    a2 = p2 - o2
    b0 = p0 - g0
    b1 = p1 - g1
    b2 = p2 - g2
    la = math.sqrt(a0 * a0 + a1 * a1 + a2 * a2)
    c0 = a1 * b2 - a2 * b1
    c1 = a2 * b0 - a0 * b2
    c2 = a0 * b1 - a1 * b0
    d_adj = math.sqrt(c0 * c0 + c1 * c1 + c2 * c2) / la
    d_ghs = (a0 * b0 + a1 * b1 + a2 * b2) / la
    return d_adj, d_ghs


@njit(cache=True, nogil=True)
def _metrics_many(o, pj, pg):
    n = pg.shape[0]
    d_adj = np.empty(n)
    d_ghs = np.empty(n)
    for i in range(n):
        d_adj[i], d_ghs[i] = _metrics(o[i, 0], o[i, 1], o[i, 2], pj[i, 0], pj[i, 1], pj[i, 2],
                                      pg[i, 0], pg[i, 1], pg[i, 2])
    return d_adj, d_ghs


def ray_metrics(o, pj, pg):
    """Vectorised ``(d_adj, d_ghs)`` for broadcastable (..., 3) inputs."""
    o, pj, pg = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (o, pj, pg)))
    shape = pg.shape[:-1]
    o2, pj2, pg2 = (np.ascontiguousarray(v.reshape(-1, 3)) for v in (o, pj, pg))
    if np.any(np.einsum("ij,ij->i", pj2 - o2, pj2 - o2) < DEGENERATE_EPS**2):
        raise DegenerateRay("lidar centre and point coincide")
    d_adj, d_ghs = _metrics_many(o2, pj2, pg2)
    return d_adj.reshape(shape), d_ghs.reshape(shape)


def _check_ray(o, pj):
    if np.linalg.norm(np.asarray(pj, float) - np.asarray(o, float)) < DEGENERATE_EPS:
        raise DegenerateRay("lidar centre and point coincide")


def point_to_ray_distance(o, pj, pg) -> float:
    """Perpendicular distance from ``pg`` to the line through ``o`` and ``pj``."""
    _check_ray(o, pj)
    return float(ray_metrics(o, pj, pg)[0])


def along_ray_depth(o, pj, pg) -> float:
    """Signed depth of ``pg`` in front of ``pj`` along the ray from ``o``.

    Positive when ``pg`` projects between ``o`` and ``pj``.
    """
    _check_ray(o, pj)
    return float(ray_metrics(o, pj, pg)[1])


def ray_normal_angle(o, pj, n) -> float:
    """Angle in degrees between the ray ``o -> pj`` and the line of normal ``n``, in [0, 90]."""
    a = np.asarray(pj, float) - np.asarray(o, float)
    la = np.linalg.norm(a)
    if la < DEGENERATE_EPS:
        raise DegenerateRay("lidar centre and point coincide")
    n = np.asarray(n, float)
    c = abs(float(a @ n)) / (la * float(np.linalg.norm(n)))
    return math.degrees(math.acos(min(1.0, c)))


def decide_metric(d_adj, d_ghs, theta, cfg: EvalConfig) -> float:
    """Final ghost severity ``d_prj``.

    ``theta`` is None when no reliable surface normal exists; the grazing
    correction is then skipped.
    """
    if d_ghs <= 0.0 or not d_adj < cfg.on_ray_tolerance_m:
        return 0.0
    if theta is not None and theta > cfg.grazing_angle_threshold_deg:
        return d_ghs * math.cos(math.radians(theta))
    return float(d_ghs)


# --- surface normals ---------------------------------------------------------

@njit(cache=True, nogil=True)
def _neighbourhood_cov(pts, perm, start, end, left, right, bmin, bmax, active, centers, r):
    m = centers.shape[0]
    covs = np.zeros((m, 3, 3))
    counts = np.zeros(m, np.int64)
    idx_buf = np.empty(64, np.int64)
    d2_buf = np.empty(64)
    r2 = r * r
    for i in range(m):
        idx_buf, d2_buf, k = _radius_one(pts, perm, start, end, left, right, bmin, bmax, active,
                                         centers[i], r2, idx_buf, d2_buf, 0)
        counts[i] = k
        if k == 0:
            continue
        sel = np.sort(idx_buf[:k])
        mx = 0.0
        my = 0.0
        mz = 0.0
        for q in range(k):
            p = sel[q]
            mx += pts[p, 0]
            my += pts[p, 1]
            mz += pts[p, 2]
        mx /= k
        my /= k
        mz /= k
        for q in range(k):
            p = sel[q]
            dx = pts[p, 0] - mx
            dy = pts[p, 1] - my
            dz = pts[p, 2] - mz
            covs[i, 0, 0] += dx * dx
            covs[i, 0, 1] += dx * dy
            covs[i, 0, 2] += dx * dz
            covs[i, 1, 1] += dy * dy
            covs[i, 1, 2] += dy * dz
            covs[i, 2, 2] += dz * dz
        for a in range(3):
            for b in range(a, 3):
                covs[i, a, b] /= k
                covs[i, b, a] = covs[i, a, b]
    return covs, counts


def _canonical_sign(normals, toward=None):
    n = normals.copy()
    if toward is not None:
        flip = np.einsum("ij,ij->i", n, toward) < 0
    else:
        x, y, z = n[:, 0], n[:, 1], n[:, 2]
        flip = (z < 0) | ((z == 0) & (y < 0)) | ((z == 0) & (y == 0) & (x < 0))
    n[flip] *= -1
    return n


def estimate_normals(index: SubmapIndex, centers, cfg: EvalConfig, origins=None):
    """PCA normals around many centres.

    Returns ``(normals, reliable, smallest_eigenvalue)``; rows with fewer than
    ``cfg.pca_min_neighbors`` neighbours are unreliable and hold NaN.
    """
    centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
    covs, counts = _neighbourhood_cov(index.points, *index.tree, index.active, centers,
                                      float(cfg.pca_neighborhood_radius_m))
    reliable = counts >= cfg.pca_min_neighbors
    normals = np.full((len(centers), 3), np.nan)
    lam0 = np.full(len(centers), np.nan)
    if reliable.any():
        w, v = np.linalg.eigh(covs[reliable])
        n = v[:, :, 0]
        toward = None
        if origins is not None:
            toward = np.broadcast_to(np.asarray(origins, float), centers.shape)[reliable] - centers[reliable]
        normals[reliable] = _canonical_sign(n, toward)
        lam0[reliable] = w[:, 0]
    return normals, reliable, lam0


def estimate_normal(index: SubmapIndex, pj, cfg: EvalConfig, origin=None):
    """Unit surface normal at ``pj`` from the indexed neighbourhood, or None if unreliable.

    The sign points toward ``origin`` when one is given, otherwise toward +Z
    (then +Y, then +X on ties).
    """
    normals, reliable, _ = estimate_normals(index, pj, cfg, origin)
    return normals[0] if reliable[0] else None


# --- ray sampling kernels ----------------------------------------------------

@njit(cache=True, inline="always")
def _ray_frame(p0, p1, p2, o0, o1, o2, s0, ds, end_margin):
    # unit direction from the point back toward the sensor, and the last sample index
    a0 = o0 - p0
    a1 = o1 - p1
    a2 = o2 - p2
    L = math.sqrt(a0 * a0 + a1 * a1 + a2 * a2)
    if L < 1e-9:
        return L, 0.0, 0.0, 0.0, -1
    w0 = a0 / L
    w1 = a1 / L
    w2 = a2 / L
    s_max = L - end_margin
    if s_max < s0:
        return L, w0, w1, w2, -1
    K = int(math.floor((s_max - s0) / ds))
    while s0 + (K + 1) * ds <= s_max:
        K += 1
    while K >= 0 and s0 + K * ds > s_max:
        K -= 1
    return L, w0, w1, w2, K


@njit(cache=True)
def ray_samples(p, o, s0, ds, end_margin):
    """Sample positions walked from ``p`` toward ``o`` (shared by both detectors)."""
    L, w0, w1, w2, K = _ray_frame(p[0], p[1], p[2], o[0], o[1], o[2], s0, ds, end_margin)
    out = np.empty((max(K + 1, 0), 3))
    for k in range(K + 1):
        s = s0 + k * ds
        out[k, 0] = p[0] + s * w0
        out[k, 1] = p[1] + s * w1
        out[k, 2] = p[2] + s * w2
    return out


@njit(cache=True, inline="always")
def _segment_hits_box(bmin, bmax, node, a, b, pad):
    tmin = 0.0
    tmax = 1.0
    for d in range(3):
        lo = bmin[node, d] - pad
        hi = bmax[node, d] + pad
        D = b[d] - a[d]
        if abs(D) < 1e-15:
            if a[d] < lo or a[d] > hi:
                return False
        else:
            t1 = (lo - a[d]) / D
            t2 = (hi - a[d]) / D
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tmin:
                tmin = t1
            if t2 < tmax:
                tmax = t2
            if tmin > tmax:
                return False
    return True


@njit(cache=True, nogil=True)
def _ray_candidates(pts, perm, start, end, left, right, bmin, bmax, active,
                    frame_pts, origin, s0, ds, end_margin, r, d_thre):
    """Candidates within ``r`` of some sample on each ray that lie on the ray (d_adj < d_thre)
    and in front of the capturing point (d_ghs > 0).

    Equivalent to running a radius search at every sample position, but one
    tree traversal per ray covers all of that ray's samples.
    """
    use_mask = active.shape[0] > 0
    r2 = r * r
    pad = r * (1.0 + 1e-9) + 1e-12
    o0 = origin[0]
    o1 = origin[1]
    o2 = origin[2]
    out_ray = np.empty(256, np.int64)
    out_idx = np.empty(256, np.int64)
    out_adj = np.empty(256)
    out_ghs = np.empty(256)
    n_out = 0
    a = np.empty(3)
    b = np.empty(3)
    stack = np.empty(256, np.int64)
    for j in range(frame_pts.shape[0]):
        p0 = frame_pts[j, 0]
        p1 = frame_pts[j, 1]
        p2 = frame_pts[j, 2]
        L, w0, w1, w2, K = _ray_frame(p0, p1, p2, o0, o1, o2, s0, ds, end_margin)
        if K < 0:
            continue
        a[0] = p0 + s0 * w0
        a[1] = p1 + s0 * w1
        a[2] = p2 + s0 * w2
        sK = s0 + K * ds
        b[0] = p0 + sK * w0
        b[1] = p1 + sK * w1
        b[2] = p2 + sK * w2
        stack[0] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _segment_hits_box(bmin, bmax, node, a, b, pad):
                continue
            if left[node] >= 0:
                if sp + 2 > stack.shape[0]:
                    bigger = np.empty(2 * stack.shape[0], np.int64)
                    bigger[:sp] = stack[:sp]
                    stack = bigger
                stack[sp] = right[node]
                stack[sp + 1] = left[node]
                sp += 2
                continue
            for q in range(start[node], end[node]):
                p = perm[q]
                if use_mask and not active[p]:
                    continue
                x0 = pts[p, 0]
                x1 = pts[p, 1]
                x2 = pts[p, 2]
                t = (x0 - p0) * w0 + (x1 - p1) * w1 + (x2 - p2) * w2
                klo = int(math.floor((t - s0 - r) / ds)) - 1
                khi = int(math.ceil((t - s0 + r) / ds)) + 1
                if klo < 0:
                    klo = 0
                if khi > K:
                    khi = K
                hit = False
                for k in range(klo, khi + 1):
                    s = s0 + k * ds
                    dx = x0 - (p0 + s * w0)
                    dy = x1 - (p1 + s * w1)
                    dz = x2 - (p2 + s * w2)
                    if dx * dx + dy * dy + dz * dz <= r2:
                        hit = True
                        break
                if not hit:
                    continue
                d_adj, d_ghs = _metrics(o0, o1, o2, p0, p1, p2, x0, x1, x2)
                if d_adj < d_thre and d_ghs > 0.0:
                    out_ray = _grow(out_ray, n_out)
                    out_idx = _grow(out_idx, n_out)
                    out_adj = _grow(out_adj, n_out)
                    out_ghs = _grow(out_ghs, n_out)
                    out_ray[n_out] = j
                    out_idx[n_out] = p
                    out_adj[n_out] = d_adj
                    out_ghs[n_out] = d_ghs
                    n_out += 1
    return out_ray[:n_out].copy(), out_idx[:n_out].copy(), out_adj[:n_out].copy(), out_ghs[:n_out].copy()


def _walk_candidates(frame_pts, origin, index: SubmapIndex, cfg: EvalConfig):
    """Literal sampler: one radius search per sample position."""
    rays, idxs, adjs, ghss = [], [], [], []
    o = np.asarray(origin, float)
    for j, p in enumerate(frame_pts):
        samples = ray_samples(p, o, cfg.ray_start_offset_m, cfg.ray_sample_spacing_m, cfg.ray_end_margin_m)
        if len(samples) == 0:
            continue
        _, found, _ = index.radius_search_batch(samples, cfg.ghost_search_radius_m)
        found = np.unique(found)
        if len(found) == 0:
            continue
        pg = index.points[found]
        d_adj, d_ghs = _metrics_many(np.broadcast_to(o, pg.shape).copy(), np.broadcast_to(p, pg.shape).copy(), pg)
        keep = (d_adj < cfg.on_ray_tolerance_m) & (d_ghs > 0.0)
        rays.append(np.full(int(keep.sum()), j, np.int64))
        idxs.append(found[keep])
        adjs.append(d_adj[keep])
        ghss.append(d_ghs[keep])
    if not rays:
        e = np.zeros(0)
        return np.zeros(0, np.int64), np.zeros(0, np.int64), e, e.copy()
    return np.concatenate(rays), np.concatenate(idxs), np.concatenate(adjs), np.concatenate(ghss)


@dataclass(frozen=True)
class GhostHit:
    capturing_index: int     # row in the evaluated frame
    ghost_index: int         # row in the submap index
    capturing_point: tuple
    ghost_point: tuple
    d_adj: float
    d_ghs: float
    theta_deg: float         # NaN when no reliable normal was available
    d_prj: float


@dataclass(frozen=True)
class FrameGhosts:
    """Columnar form of the per-frame hits (one row per capturing point)."""

    capturing_index: np.ndarray
    ghost_index: np.ndarray
    d_adj: np.ndarray
    d_ghs: np.ndarray
    theta_deg: np.ndarray
    d_prj: np.ndarray

    def __len__(self):
        return len(self.capturing_index)

    def to_hits(self, frame_pts, index_pts):
        return [
            GhostHit(int(c), int(g), tuple(frame_pts[c].tolist()), tuple(index_pts[g].tolist()),
                     float(a), float(h), float(t), float(d))
            for c, g, a, h, t, d in zip(self.capturing_index, self.ghost_index, self.d_adj,
                                        self.d_ghs, self.theta_deg, self.d_prj)
        ]


def frame_ghost_arrays(frame_pts, origin, index: SubmapIndex, cfg: EvalConfig, method="traverse") -> FrameGhosts:
    frame_pts = np.ascontiguousarray(frame_pts, dtype=np.float64).reshape(-1, 3)
    origin = np.ascontiguousarray(origin, dtype=np.float64).reshape(3)
    if method == "traverse":
        ray, idx, d_adj, d_ghs = _ray_candidates(
            index.points, *index.tree, index.active, frame_pts, origin,
            cfg.ray_start_offset_m, cfg.ray_sample_spacing_m, cfg.ray_end_margin_m,
            cfg.ghost_search_radius_m, cfg.on_ray_tolerance_m)
    elif method == "walk":
        ray, idx, d_adj, d_ghs = _walk_candidates(frame_pts, origin, index, cfg)
    else:
        raise ValueError(f"unknown method {method!r}")

    empty = FrameGhosts(*(np.zeros(0, np.int64),) * 2, *(np.zeros(0),) * 4)
    if len(ray) == 0:
        return empty
    order = np.lexsort((idx, ray))
    ray, idx, d_adj, d_ghs = ray[order], idx[order], d_adj[order], d_ghs[order]

    rays, first = np.unique(ray, return_index=True)
    normals, reliable, _ = estimate_normals(index, frame_pts[rays], cfg, origin)
    a = frame_pts[rays] - origin
    cos_t = np.abs(np.einsum("ij,ij->i", a, np.nan_to_num(normals))) / np.linalg.norm(a, axis=1)
    theta_ray = np.where(reliable, np.degrees(np.arccos(np.minimum(cos_t, 1.0))), np.nan)

    per_cand = np.repeat(np.arange(len(rays)), np.diff(np.append(first, len(ray))))
    theta = theta_ray[per_cand]
    grazing = reliable[per_cand] & (theta > cfg.grazing_angle_threshold_deg)
    d_prj = np.where(grazing, d_ghs * np.cos(np.radians(np.where(grazing, theta, 0.0))), d_ghs)

    # strongest candidate per ray; first (lowest submap index) on ties
    best = np.empty(len(rays), np.int64)
    bounds = np.append(first, len(ray))
    for r_i in range(len(rays)):
        lo, hi = bounds[r_i], bounds[r_i + 1]
        best[r_i] = lo + int(np.argmax(d_prj[lo:hi]))
    keep = d_prj[best] > 0.0
    best = best[keep]
    return FrameGhosts(ray[best], idx[best], d_adj[best], d_ghs[best], theta[best], d_prj[best])


def detect_frame_ghosts(frame: PointCloud, origin, index: SubmapIndex, cfg: EvalConfig,
                        method="traverse") -> list[GhostHit]:
    """Ghost hits for one world-frame cloud observed from ``origin``.

    Samples are taken every ``ray_sample_spacing_m`` from ``ray_start_offset_m``
    in front of each point back to ``ray_end_margin_m`` short of the sensor;
    map points within ``ghost_search_radius_m`` of a sample are candidates.
    At most one hit (the largest ``d_prj``) is kept per frame point.

    ``method="walk"`` runs a radius search per sample; the default traverses
    the tree once per ray and yields the same hits.
    """
    g = frame_ghost_arrays(frame.positions, origin, index, cfg, method)
    return g.to_hits(frame.positions, index.points)

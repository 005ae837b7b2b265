"""Exact kd-tree over 3D points with radius and k-nearest queries.

The tree is stored as flat arrays so the numba kernels here (and the ray
kernels in :mod:`ghosteval.ghosts`) can traverse it without Python overhead.
Construction splits each node at the median of its widest axis.

A :class:`SubmapIndex` may carry an ``active`` mask. Inactive points are
invisible to every query, which lets one tree built over a whole map serve
each per-pose submap as a filtered view.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .errors import EmptyInput

LEAF_SIZE = 16


@njit(cache=True)
def _select(perm, pts, dim, lo, hi, k):
    # Quickselect over perm[lo:hi] so that perm[k] holds the k-th smallest coordinate.
    hi -= 1
    while hi > lo:
        mid = (lo + hi) // 2
        a = pts[perm[lo], dim]
        b = pts[perm[mid], dim]
        c = pts[perm[hi], dim]
        if a < b:
            if b < c:
                pivot = b
            elif a < c:
                pivot = c
            else:
                pivot = a
        else:
            if a < c:
                pivot = a
            elif b < c:
                pivot = c
            else:
                pivot = b
        i = lo
        j = hi
        while i <= j:
            while pts[perm[i], dim] < pivot:
                i += 1
            while pts[perm[j], dim] > pivot:
                j -= 1
            if i <= j:
                tmp = perm[i]
                perm[i] = perm[j]
                perm[j] = tmp
                i += 1
                j -= 1
        if k <= j:
            hi = j
        elif k >= i:
            lo = i
        else:
            break


@njit(cache=True)
def _build(pts, leaf_size):
    n = pts.shape[0]
    perm = np.arange(n)
    half = max(1, (leaf_size + 1) // 2)
    cap = 2 * (n // half + 2)
    start = np.empty(cap, np.int64)
    end = np.empty(cap, np.int64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    bmin = np.empty((cap, 3))
    bmax = np.empty((cap, 3))
    start[0] = 0
    end[0] = n
    n_nodes = 1
    stack = np.empty(cap, np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s = start[node]
        e = end[node]
        for d in range(3):
            bmin[node, d] = np.inf
            bmax[node, d] = -np.inf
        for q in range(s, e):
            p = perm[q]
            for d in range(3):
                v = pts[p, d]
                if v < bmin[node, d]:
                    bmin[node, d] = v
                if v > bmax[node, d]:
                    bmax[node, d] = v
        if e - s <= leaf_size:
            continue
        dim = 0
        spread = bmax[node, 0] - bmin[node, 0]
        for d in range(1, 3):
            w = bmax[node, d] - bmin[node, d]
            if w > spread:
                spread = w
                dim = d
        if spread <= 0.0:
            continue  # all points coincide; keep as an oversized leaf
        mid = (s + e) // 2
        _select(perm, pts, dim, s, e, mid)
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        start[lc] = s
        end[lc] = mid
        start[rc] = mid
        end[rc] = e
        left[node] = lc
        right[node] = rc
        stack[sp] = rc
        stack[sp + 1] = lc
        sp += 2
    return perm, start[:n_nodes].copy(), end[:n_nodes].copy(), left[:n_nodes].copy(), \
        right[:n_nodes].copy(), bmin[:n_nodes].copy(), bmax[:n_nodes].copy()


@njit(cache=True, inline="always")
def _box_dist2(bmin, bmax, node, c0, c1, c2):
    d2 = 0.0
    v = bmin[node, 0] - c0
    if v > 0.0:
        d2 += v * v
    else:
        v = c0 - bmax[node, 0]
        if v > 0.0:
            d2 += v * v
    v = bmin[node, 1] - c1
    if v > 0.0:
        d2 += v * v
    else:
        v = c1 - bmax[node, 1]
        if v > 0.0:
            d2 += v * v
    v = bmin[node, 2] - c2
    if v > 0.0:
        d2 += v * v
    else:
        v = c2 - bmax[node, 2]
        if v > 0.0:
            d2 += v * v
    return d2


@njit(cache=True)
def _grow(buf, n):
    if n < buf.shape[0]:
        return buf
    out = np.empty(max(16, 2 * buf.shape[0]), buf.dtype)
    out[:n] = buf[:n]
    return out


@njit(cache=True, nogil=True)
def _radius_one(pts, perm, start, end, left, right, bmin, bmax, active, c, r2, idx_buf, d2_buf, n_out):
    """Append indices of points within sqrt(r2) of c. Returns (idx_buf, d2_buf, n_out)."""
    use_mask = active.shape[0] > 0
    c0 = c[0]
    c1 = c[1]
    c2 = c[2]
    stack = np.empty(128, np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_dist2(bmin, bmax, node, c0, c1, c2) > r2:
            continue
        if left[node] < 0:
            for q in range(start[node], end[node]):
                p = perm[q]
                if use_mask and not active[p]:
                    continue
                dx = pts[p, 0] - c0
                dy = pts[p, 1] - c1
                dz = pts[p, 2] - c2
                d2 = dx * dx + dy * dy + dz * dz
                if d2 <= r2:
                    idx_buf = _grow(idx_buf, n_out)
                    d2_buf = _grow(d2_buf, n_out)
                    idx_buf[n_out] = p
                    d2_buf[n_out] = d2
                    n_out += 1
        else:
            if sp + 2 > stack.shape[0]:
                bigger = np.empty(2 * stack.shape[0], np.int64)
                bigger[:sp] = stack[:sp]
                stack = bigger
            stack[sp] = right[node]
            stack[sp + 1] = left[node]
            sp += 2
    return idx_buf, d2_buf, n_out


@njit(cache=True, nogil=True)
def _sort_hits(idx, d2):
    # ascending distance, ties by index
    o1 = np.argsort(idx, kind="mergesort")
    idx = idx[o1]
    d2 = d2[o1]
    o2 = np.argsort(d2, kind="mergesort")
    return idx[o2], d2[o2]


@njit(cache=True, nogil=True)
def _radius_batch(pts, perm, start, end, left, right, bmin, bmax, active, centers, r):
    m = centers.shape[0]
    offsets = np.zeros(m + 1, np.int64)
    idx_all = np.empty(64, np.int64)
    d_all = np.empty(64)
    n_all = 0
    idx_buf = np.empty(64, np.int64)
    d2_buf = np.empty(64)
    r2 = r * r
    for i in range(m):
        idx_buf, d2_buf, n = _radius_one(pts, perm, start, end, left, right, bmin, bmax, active,
                                         centers[i], r2, idx_buf, d2_buf, 0)
        si, sd = _sort_hits(idx_buf[:n].copy(), d2_buf[:n].copy())
        while n_all + n > idx_all.shape[0]:
            idx_all = _grow(idx_all, idx_all.shape[0])
            d_all = _grow(d_all, d_all.shape[0])
        for k in range(n):
            idx_all[n_all + k] = si[k]
            d_all[n_all + k] = math.sqrt(sd[k])
        n_all += n
        offsets[i + 1] = n_all
    return offsets, idx_all[:n_all].copy(), d_all[:n_all].copy()


@njit(cache=True, nogil=True)
def _knn_one(pts, perm, start, end, left, right, bmin, bmax, active, c, k):
    use_mask = active.shape[0] > 0
    best_i = np.full(k, -1, np.int64)
    best_d = np.full(k, np.inf)
    stack = np.empty(128, np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_dist2(bmin, bmax, node, c[0], c[1], c[2]) > best_d[k - 1]:
            continue
        if left[node] < 0:
            for q in range(start[node], end[node]):
                p = perm[q]
                if use_mask and not active[p]:
                    continue
                dx = pts[p, 0] - c[0]
                dy = pts[p, 1] - c[1]
                dz = pts[p, 2] - c[2]
                d2 = dx * dx + dy * dy + dz * dz
                last = best_d[k - 1]
                if d2 < last or (d2 == last and p < best_i[k - 1]):
                    j = k - 1
                    while j > 0 and (best_d[j - 1] > d2 or (best_d[j - 1] == d2 and best_i[j - 1] > p)):
                        best_d[j] = best_d[j - 1]
                        best_i[j] = best_i[j - 1]
                        j -= 1
                    best_d[j] = d2
                    best_i[j] = p
        else:
            if sp + 2 > stack.shape[0]:
                bigger = np.empty(2 * stack.shape[0], np.int64)
                bigger[:sp] = stack[:sp]
                stack = bigger
            # visit the nearer child first
            dl = _box_dist2(bmin, bmax, left[node], c[0], c[1], c[2])
            dr = _box_dist2(bmin, bmax, right[node], c[0], c[1], c[2])
            if dl <= dr:
                stack[sp] = right[node]
                stack[sp + 1] = left[node]
            else:
                stack[sp] = left[node]
                stack[sp + 1] = right[node]
            sp += 2
    return best_i, best_d


_NO_MASK = np.zeros(0, np.bool_)


class SubmapIndex:
    """kd-tree over world-frame points (plus their labels).

    Indices returned by queries refer to rows of :attr:`points`.
    """

    def __init__(self, points, labels=None, *, leaf_size=LEAF_SIZE, _tree=None, active=None):
        pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise EmptyInput("cannot index an empty point set")
        if not np.all(np.isfinite(pts)):
            raise ValueError("indexed points must be finite")
        self.points = pts
        self.labels = None if labels is None else np.asarray(labels)
        self.tree = _build(pts, int(leaf_size)) if _tree is None else _tree
        self.active = _NO_MASK if active is None else np.ascontiguousarray(active, dtype=np.bool_)
        if len(self.active) not in (0, len(pts)):
            raise ValueError("active mask length must match the point count")

    @classmethod
    def build(cls, points, labels=None, leaf_size=LEAF_SIZE) -> "SubmapIndex":
        return cls(points, labels, leaf_size=leaf_size)

    def restrict(self, active) -> "SubmapIndex":
        """View sharing this tree in which only ``active`` points exist."""
        view = object.__new__(SubmapIndex)
        view.points = self.points
        view.labels = self.labels
        view.tree = self.tree
        view.active = np.ascontiguousarray(active, dtype=np.bool_)
        if len(view.active) != len(self.points):
            raise ValueError("active mask length must match the point count")
        return view

    def __len__(self):
        if len(self.active):
            return int(np.count_nonzero(self.active))
        return len(self.points)

    def radius_search(self, center, radius):
        """Indices and distances of points with ``|p - center| <= radius``.

        Sorted by ascending distance; equal distances keep index order.
        """
        if not radius > 0:
            raise ValueError("radius must be positive")
        c = np.ascontiguousarray(center, dtype=np.float64).reshape(1, 3)
        _, idx, dist = _radius_batch(self.points, *self.tree, self.active, c, float(radius))
        return idx, dist

    def radius_search_batch(self, centers, radius):
        """CSR result ``(offsets, indices, distances)`` for many centres."""
        if not radius > 0:
            raise ValueError("radius must be positive")
        c = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
        return _radius_batch(self.points, *self.tree, self.active, c, float(radius))

    def knn(self, center, k):
        if k < 1:
            raise ValueError("k must be >= 1")
        c = np.ascontiguousarray(center, dtype=np.float64).reshape(3)
        idx, d2 = _knn_one(self.points, *self.tree, self.active, c, int(k))
        keep = idx >= 0
        return idx[keep], np.sqrt(d2[keep])


def build(points, labels=None) -> SubmapIndex:
    return SubmapIndex.build(points, labels)


def radius_search(index: SubmapIndex, center, radius):
    return index.radius_search(center, radius)

"""Bounding volume hierarchy over triangles with a numba ray traversal kernel."""

from __future__ import annotations

import dataclasses
import os

import numba
import numpy as np

# the probe for TBB warns on older installs; rays are independent, so any layer works
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "workqueue"

LEAF_SIZE = 4
_STACK_DEPTH = 128


@dataclasses.dataclass(frozen=True)
class HitBatch:
    """Nearest hits for a batch of rays; ``face == -1`` marks a miss.

    ``bary`` holds the weights of the face's three vertices (they sum to one).
    """

    t: np.ndarray
    face: np.ndarray
    bary: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.face >= 0


class BVH:
    """Median-split BVH (longest centroid axis, at most ``LEAF_SIZE`` triangles per leaf).

    Node arrays are flat; an inner node stores its two children in ``left`` and
    ``right``, a leaf stores ``count > 0`` triangles starting at ``start`` in
    ``order``.
    """

    def __init__(self, vertices: np.ndarray, faces: np.ndarray, leaf_size: int = LEAF_SIZE):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        self.leaf_size = int(leaf_size)
        tri = self.vertices[self.faces]
        self._tri_min = tri.min(axis=1)
        self._tri_max = tri.max(axis=1)
        self._centroids = tri.mean(axis=1)
        self._build()

    def _build(self) -> None:
        n = len(self.faces)
        order = np.arange(n, dtype=np.int64)
        bmin, bmax, left, right, start, count = [], [], [], [], [], []

        def new_node(lo, hi):
            idx = order[lo:hi]
            bmin.append(self._tri_min[idx].min(axis=0) if hi > lo else np.zeros(3))
            bmax.append(self._tri_max[idx].max(axis=0) if hi > lo else np.zeros(3))
            left.append(-1)
            right.append(-1)
            start.append(lo)
            count.append(hi - lo)
            return len(bmin) - 1

        root = new_node(0, n)
        stack = [(root, 0, n)]
        while stack:
            node, lo, hi = stack.pop()
            if hi - lo <= self.leaf_size:
                continue
            idx = order[lo:hi]
            cent = self._centroids[idx]
            axis = int(np.argmax(cent.max(axis=0) - cent.min(axis=0)))
            order[lo:hi] = idx[np.argsort(cent[:, axis], kind="stable")]
            mid = (lo + hi) // 2
            l_node = new_node(lo, mid)
            r_node = new_node(mid, hi)
            left[node], right[node], count[node] = l_node, r_node, 0
            stack.append((r_node, mid, hi))
            stack.append((l_node, lo, mid))

        self.order = order
        self.node_min = np.asarray(bmin, dtype=np.float64)
        self.node_max = np.asarray(bmax, dtype=np.float64)
        self.node_left = np.asarray(left, dtype=np.int64)
        self.node_right = np.asarray(right, dtype=np.int64)
        self.node_start = np.asarray(start, dtype=np.int64)
        self.node_count = np.asarray(count, dtype=np.int64)

    @property
    def node_total(self) -> int:
        return len(self.node_count)

    def intersect(
        self,
        origins: np.ndarray,
        directions: np.ndarray,
        t_min=0.0,
        t_max=np.inf,
        cull_backfaces: bool = False,
    ) -> HitBatch:
        """Nearest intersection with ``t`` in ``(t_min, t_max]`` for every ray.

        ``t_min``/``t_max`` may be scalars or per-ray arrays. With
        ``cull_backfaces`` only faces whose winding normal opposes the ray count.
        """
        origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
        directions = np.ascontiguousarray(np.atleast_2d(directions), dtype=np.float64)
        n = len(origins)
        t_lo = np.ascontiguousarray(np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n,)))
        t_hi = np.ascontiguousarray(np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,)))
        t = np.full(n, np.inf)
        face = np.full(n, -1, dtype=np.int64)
        uv = np.zeros((n, 2))
        if n and len(self.faces):
            _trace_kernel(
                self.vertices, self.faces, self.order,
                self.node_min, self.node_max, self.node_left, self.node_right,
                self.node_start, self.node_count,
                origins, directions, t_lo, t_hi, bool(cull_backfaces),
                t, face, uv,
            )
        bary = np.stack([1.0 - uv[:, 0] - uv[:, 1], uv[:, 0], uv[:, 1]], axis=1)
        bary[face < 0] = 0.0
        return HitBatch(t=t, face=face, bary=bary)


@numba.njit(cache=True, error_model="numpy", inline="always")
def _ray_triangle(ox, oy, oz, dx, dy, dz, v0, v1, v2, cull):
    # Moller-Trumbore; returns (t, u, v) or t = inf on a miss.
    e1x, e1y, e1z = v1[0] - v0[0], v1[1] - v0[1], v1[2] - v0[2]
    e2x, e2y, e2z = v2[0] - v0[0], v2[1] - v0[1], v2[2] - v0[2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if cull:
        if det <= 1e-15:
            return np.inf, 0.0, 0.0
    elif abs(det) <= 1e-15:
        return np.inf, 0.0, 0.0
    inv = 1.0 / det
    sx, sy, sz = ox - v0[0], oy - v0[1], oz - v0[2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf, 0.0, 0.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    return t, u, v


@numba.njit(cache=True, error_model="numpy", inline="always")
def _axis_span(lo, hi, o, inv):
    t0 = (lo - o) * inv
    t1 = (hi - o) * inv
    if t0 != t0 or t1 != t1:
        # 0 * inf: ray parallel to and lying on the slab plane
        return -np.inf, np.inf
    if t0 < t1:
        return t0, t1
    return t1, t0


@numba.njit(cache=True, error_model="numpy", inline="always")
def _slab(bmin, bmax, ox, oy, oz, ix, iy, iz, t_lo, t_hi):
    ax, bx = _axis_span(bmin[0], bmax[0], ox, ix)
    ay, by = _axis_span(bmin[1], bmax[1], oy, iy)
    az, bz = _axis_span(bmin[2], bmax[2], oz, iz)
    return max(t_lo, ax, ay, az), min(t_hi, bx, by, bz)


@numba.njit(cache=True, error_model="numpy", parallel=True)
def _trace_kernel(verts, faces, order, nmin, nmax, nleft, nright, nstart, ncount,
                  origins, dirs, t_lo, t_hi, cull, out_t, out_face, out_uv):
    n = origins.shape[0]
    for r in numba.prange(n):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        ix, iy, iz = 1.0 / dx, 1.0 / dy, 1.0 / dz
        lo = t_lo[r]
        best = t_hi[r]
        best_face = -1
        bu = 0.0
        bv = 0.0
        stack = np.empty(_STACK_DEPTH, dtype=np.int64)
        top = 0
        near, far = _slab(nmin[0], nmax[0], ox, oy, oz, ix, iy, iz, lo, best)
        if near <= far:
            stack[0] = 0
            top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            near, far = _slab(nmin[node], nmax[node], ox, oy, oz, ix, iy, iz, lo, best)
            if near > far:
                continue
            cnt = ncount[node]
            if cnt > 0:
                s = nstart[node]
                for k in range(s, s + cnt):
                    f = order[k]
                    t, u, v = _ray_triangle(ox, oy, oz, dx, dy, dz,
                                            verts[faces[f, 0]], verts[faces[f, 1]], verts[faces[f, 2]],
                                            cull)
                    if t > lo and t <= best and t < np.inf and (t < best or best_face < 0 or f < best_face):
                        best = t
                        best_face = f
                        bu = u
                        bv = v
            else:
                a = nleft[node]
                b = nright[node]
                na, fa = _slab(nmin[a], nmax[a], ox, oy, oz, ix, iy, iz, lo, best)
                nb, fb = _slab(nmin[b], nmax[b], ox, oy, oz, ix, iy, iz, lo, best)
                # push the farther child first so the nearer one is visited next
                if na <= fa and nb <= fb:
                    if na < nb:
                        stack[top] = b
                        stack[top + 1] = a
                    else:
                        stack[top] = a
                        stack[top + 1] = b
                    top += 2
                elif na <= fa:
                    stack[top] = a
                    top += 1
                elif nb <= fb:
                    stack[top] = b
                    top += 1
        if best_face >= 0:
            out_t[r] = best
            out_face[r] = best_face
            out_uv[r, 0] = bu
            out_uv[r, 1] = bv

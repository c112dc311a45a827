"""Triangle meshes, Wavefront OBJ I/O and BVH-accelerated ray casting."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

LEAF_SIZE = 8
BVH_THRESHOLD = 64
MT_EPS = 1e-12
EDGE_EPS = 1e-10


@dataclass
class RayHits:
    t: np.ndarray
    triangle: np.ndarray
    points: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return np.isfinite(self.t)


@dataclass(eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    dropped: int = 0
    _bvh: "BVH | None" = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle index out of bounds")
        if len(f):
            area2 = np.linalg.norm(np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1)
            keep = area2 > 0
            if not keep.all():
                n_bad = int((~keep).sum())
                logger.warning("dropped %d zero-area triangles", n_bad)
                self.dropped += n_bad
                f = f[keep]
        self.vertices = v
        self.triangles = f

    def __len__(self):
        return len(self.triangles)

    @property
    def diagonal(self) -> float:
        if not len(self.vertices):
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def corners(self):
        v, f = self.vertices, self.triangles
        return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]

    def transformed(self, fn) -> "TriangleMesh":
        return TriangleMesh(fn(self.vertices), self.triangles.copy())

    @property
    def bvh(self) -> "BVH":
        if self._bvh is None:
            self._bvh = BVH(self)
        return self._bvh

    def intersect(self, origins, directions, accelerate=None) -> RayHits:
        """Nearest positive-t hit per ray (two-sided).  Misses have ``t = inf``."""
        o = np.asarray(origins, dtype=float).reshape(-1, 3)
        d = np.asarray(directions, dtype=float).reshape(-1, 3)
        o = np.broadcast_to(o, d.shape) if len(o) == 1 else o
        if len(self) == 0:
            raise ValueError("mesh has no triangles")
        if accelerate is None:
            accelerate = len(self) > BVH_THRESHOLD
        if accelerate:
            t, tri = self.bvh.intersect(o, d)
        else:
            t, tri = brute_force_intersect(self, o, d)
        pts = o + d * np.where(np.isfinite(t), t, 0.0)[:, None]
        pts[~np.isfinite(t)] = np.nan
        return RayHits(t, tri, pts)


def moller_trumbore(o, d, v0, e1, e2):
    """Vectorized ray/triangle test; returns t (inf where no hit)."""
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > MT_EPS
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = o - v0
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = np.einsum("ij,ij->i", d, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    hit = ok & (u >= -EDGE_EPS) & (v >= -EDGE_EPS) & (u + v <= 1 + EDGE_EPS) & (t > MT_EPS)
    return np.where(hit, t, np.inf)


def brute_force_intersect(mesh: TriangleMesh, o, d, chunk=2_000_000):
    """Test every ray against every triangle."""
    v0, v1, v2 = mesh.corners()
    e1, e2 = v1 - v0, v2 - v0
    n_tri = len(mesh)
    best_t = np.full(len(o), np.inf)
    best_i = np.full(len(o), -1, dtype=np.int64)
    rays_per = max(1, chunk // n_tri)
    for start in range(0, len(o), rays_per):
        sl = slice(start, start + rays_per)
        k = len(o[sl])
        ri = np.repeat(np.arange(k), n_tri)
        ti = np.tile(np.arange(n_tri), k)
        t = moller_trumbore(o[sl][ri], d[sl][ri], v0[ti], e1[ti], e2[ti]).reshape(k, n_tri)
        j = np.argmin(t, axis=1)
        tb = t[np.arange(k), j]
        best_t[sl] = tb
        best_i[sl] = np.where(np.isfinite(tb), j, -1)
    return best_t, best_i


class BVH:
    """Median-split bounding volume hierarchy with breadth-first packet traversal."""

    def __init__(self, mesh: TriangleMesh, leaf_size: int = LEAF_SIZE):
        v0, v1, v2 = mesh.corners()
        self.v0, self.e1, self.e2 = v0, v1 - v0, v2 - v0
        tri_min = np.minimum(np.minimum(v0, v1), v2)
        tri_max = np.maximum(np.maximum(v0, v1), v2)
        cent = (tri_min + tri_max) / 2
        order = np.arange(len(mesh))
        lo, hi, left, right, start, count = [], [], [], [], [], []

        def new_node(idx_lo, idx_hi):
            ids = order[idx_lo:idx_hi]
            lo.append(tri_min[ids].min(0))
            hi.append(tri_max[ids].max(0))
            left.append(-1)
            right.append(-1)
            start.append(idx_lo)
            count.append(idx_hi - idx_lo)
            return len(lo) - 1

        stack = [(new_node(0, len(order)), 0, len(order))]
        while stack:
            node, a, b = stack.pop()
            if b - a <= leaf_size:
                continue
            ids = order[a:b]
            c = cent[ids]
            axis = int(np.argmax(c.max(0) - c.min(0)))
            mid = (b - a) // 2
            part = np.argpartition(c[:, axis], mid)
            order[a:b] = ids[part]
            l_node = new_node(a, a + mid)
            r_node = new_node(a + mid, b)
            left[node], right[node] = l_node, r_node
            count[node] = 0
            stack.append((l_node, a, a + mid))
            stack.append((r_node, a + mid, b))
        self.order = order
        self.lo = np.asarray(lo)
        self.hi = np.asarray(hi)
        self.left = np.asarray(left)
        self.right = np.asarray(right)
        self.start = np.asarray(start)
        self.count = np.asarray(count)
        self.leaf_size = leaf_size

    def intersect(self, o, d):
        n = len(o)
        best_t = np.full(n, np.inf)
        best_i = np.full(n, -1, dtype=np.int64)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_d = 1.0 / d
        rays = np.arange(n)
        nodes = np.zeros(n, dtype=np.int64)
        while len(rays):
            # slab test
            t1 = (self.lo[nodes] - o[rays]) * inv_d[rays]
            t2 = (self.hi[nodes] - o[rays]) * inv_d[rays]
            t1 = np.nan_to_num(t1, nan=-np.inf)
            t2 = np.nan_to_num(t2, nan=np.inf)
            tmin = np.minimum(t1, t2).max(1)
            tmax = np.maximum(t1, t2).min(1)
            keep = (tmax >= np.maximum(tmin, 0.0)) & (tmin < best_t[rays])
            rays, nodes = rays[keep], nodes[keep]
            leaf = self.left[nodes] < 0
            lr, ln = rays[leaf], nodes[leaf]
            if len(lr):
                cnt = self.count[ln]
                rep_r = np.repeat(lr, cnt)
                offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
                tri = self.order[np.repeat(self.start[ln], cnt) + offs]
                t = moller_trumbore(o[rep_r], d[rep_r], self.v0[tri], self.e1[tri], self.e2[tri])
                hit = np.isfinite(t)
                if hit.any():
                    hr, ht, htri = rep_r[hit], t[hit], tri[hit]
                    srt = np.lexsort((ht, hr))
                    hr, ht, htri = hr[srt], ht[srt], htri[srt]
                    first = np.ones(len(hr), dtype=bool)
                    first[1:] = hr[1:] != hr[:-1]
                    hr, ht, htri = hr[first], ht[first], htri[first]
                    better = ht < best_t[hr]
                    best_t[hr[better]] = ht[better]
                    best_i[hr[better]] = htri[better]
            ir, inn = rays[~leaf], nodes[~leaf]
            rays = np.concatenate([ir, ir])
            nodes = np.concatenate([self.left[inn], self.right[inn]])
        return best_t, best_i


def load_obj(path) -> TriangleMesh:
    """Read ``v`` and ``f`` records; polygons are fan-triangulated."""
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                    idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed OBJ record") from exc
    if not verts or not faces:
        raise ValueError(f"{path}: mesh has no vertices or faces")
    return TriangleMesh(np.asarray(verts), np.asarray(faces))


def save_obj(path, mesh: TriangleMesh) -> None:
    lines = [f"v {x:.10g} {y:.10g} {z:.10g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def height_field_mesh(fn, x_range, y_range, nx, ny) -> TriangleMesh:
    """Grid mesh of ``z = fn(x, y)``; triangles wound counter-clockwise seen from +z."""
    xs = np.linspace(*x_range, nx)
    ys = np.linspace(*y_range, ny)
    X, Y = np.meshgrid(xs, ys)
    V = np.stack([X, Y, fn(X, Y)], -1).reshape(-1, 3)
    i = np.arange(ny - 1)[:, None] * nx + np.arange(nx - 1)[None, :]
    i = i.reshape(-1)
    tris = np.concatenate([
        np.stack([i, i + 1, i + nx + 1], -1),
        np.stack([i, i + nx + 1, i + nx], -1),
    ])
    return TriangleMesh(V, tris)


def quad_mesh(center, half_x, half_y) -> TriangleMesh:
    """Axis-aligned rectangle in the z = center[2] plane."""
    cx, cy, cz = center
    V = np.array([
        [cx - half_x, cy - half_y, cz], [cx + half_x, cy - half_y, cz],
        [cx + half_x, cy + half_y, cz], [cx - half_x, cy + half_y, cz],
    ])
    return TriangleMesh(V, np.array([[0, 1, 2], [0, 2, 3]]))


def merge_meshes(*meshes: TriangleMesh) -> TriangleMesh:
    verts, tris, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        off += len(m.vertices)
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris))

"""Triangle scenes, watertight ray/triangle intersection and a SAH k-d tree.

Intersection queries run on float values and only decide *which* triangle a
ray hits.  The differentiable hit distance is recomputed afterwards from the
plane of that triangle (:func:`plane_distance`), which keeps the hit topology
fixed for a given evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .scalar import cross, dot, value

SECONDARY_EPSILON = 1e-4  # t_min for rays spawned at a surface, meters


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = np.inf

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        if o.shape != (3,) or d.shape != (3,):
            raise ValueError("ray origin and direction must be 3-vectors")
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not 0.0 <= self.t_min < self.t_max:
            raise ValueError("need 0 <= t_min < t_max")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    normal: np.ndarray  # unit, faces the incoming ray
    front_face: bool  # ray arrived on the side the winding points to
    material_id: int
    triangle: int
    barycentric: np.ndarray


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    material_id: int = 0
    name: str = ""

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.intp).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError(f"mesh {self.name!r}: face index out of range")
        tris = self.triangles()
        area2 = np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=-1)
        if np.any(area2 <= 1e-14):
            raise ValueError(f"mesh {self.name!r}: degenerate triangle")

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]


# -- watertight intersection ---------------------------------------------------


def watertight(origins, directions, p0, p1, p2, t_min, t_max):
    """Shear-and-permute ray/triangle test, broadcast over leading axes.

    Returns ``(t, b0, b1, b2)`` with ``t = inf`` for misses.
    """
    o = np.asarray(origins, dtype=float)
    d = np.asarray(directions, dtype=float)
    shape = np.broadcast_shapes(o.shape, d.shape, np.shape(p0), np.shape(p1), np.shape(p2))
    lead = shape[:-1]
    p0t = np.broadcast_to(p0 - o, shape)
    p1t = np.broadcast_to(p1 - o, shape)
    p2t = np.broadcast_to(p2 - o, shape)
    kz = np.argmax(np.abs(d), axis=-1)[..., None]
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    db = np.broadcast_to(d, shape)

    def pick(a, k):
        return np.take_along_axis(a, np.broadcast_to(k, lead + (1,)), axis=-1)[..., 0]

    dx, dy, dz = pick(db, kx), pick(db, ky), pick(db, kz)
    sx, sy, sz = -dx / dz, -dy / dz, 1.0 / dz
    pts = []
    for p in (p0t, p1t, p2t):
        px, py, pz = pick(p, kx), pick(p, ky), pick(p, kz)
        pts.append((px + sx * pz, py + sy * pz, pz * sz))
    (x0, y0, z0), (x1, y1, z1), (x2, y2, z2) = pts
    e0 = x1 * y2 - y1 * x2
    e1 = x2 * y0 - y2 * x0
    e2 = x0 * y1 - y0 * x1
    miss = ((e0 < 0) | (e1 < 0) | (e2 < 0)) & ((e0 > 0) | (e1 > 0) | (e2 > 0))
    det = e0 + e1 + e2
    miss |= det == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t_scaled = e0 * z0 + e1 * z1 + e2 * z2
        t = t_scaled / det
        b0, b1, b2 = e0 / det, e1 / det, e2 / det
    t_min = np.broadcast_to(t_min, lead)
    t_max = np.broadcast_to(t_max, lead)
    miss |= ~(t >= t_min) | ~(t <= t_max)
    t = np.where(miss, np.inf, t)
    return t, b0, b1, b2


def _geometric_normal(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def intersect_triangle(ray: Ray, tri) -> Optional[Hit]:
    """Intersect one ray with one triangle given as a ``(3, 3)`` vertex array."""
    tri = np.asarray(tri, dtype=float)
    t, b0, b1, b2 = watertight(ray.origin, ray.direction, tri[0], tri[1], tri[2], ray.t_min, ray.t_max)
    if not np.isfinite(t):
        return None
    return _make_hit(ray, tri, float(t), np.array([b0, b1, b2], dtype=float), 0, 0)


def _make_hit(ray, tri, t, bary, material_id, index) -> Hit:
    n = _geometric_normal(tri[0], tri[1], tri[2])
    front = bool(np.dot(n, ray.direction) < 0)
    return Hit(
        t=t,
        point=ray.origin + t * ray.direction,
        normal=n if front else -n,
        front_face=front,
        material_id=int(material_id),
        triangle=int(index),
        barycentric=bary,
    )


def plane_distance(origins, directions, p0, p1, p2):
    """Differentiable distance along the ray to the plane of a triangle."""
    n = cross(p1 - p0, p2 - p0)
    return dot(n, p0 - origins) / dot(n, directions)


def linear_scan(triangles, origins, directions, t_min, t_max, chunk: int = 2_000_000):
    """Nearest hit of each ray over all triangles (reference for the tree)."""
    tris = np.asarray(triangles, dtype=float)
    o = np.asarray(origins, dtype=float).reshape(-1, 3)
    d = np.asarray(directions, dtype=float).reshape(-1, 3)
    n = len(o)
    t_min = np.broadcast_to(np.asarray(t_min, dtype=float), (n,))
    t_max = np.broadcast_to(np.asarray(t_max, dtype=float), (n,))
    best_t = np.full(n, np.inf)
    best_i = np.full(n, -1, dtype=np.intp)
    step = max(1, chunk // max(len(tris), 1))
    for lo in range(0, n, step):
        sl = slice(lo, lo + step)
        t, *_ = watertight(
            o[sl, None], d[sl, None], tris[None, :, 0], tris[None, :, 1], tris[None, :, 2],
            t_min[sl, None], t_max[sl, None],
        )
        idx = np.argmin(t, axis=1)
        best_t[sl] = t[np.arange(len(idx)), idx]
        best_i[sl] = np.where(np.isfinite(best_t[sl]), idx, -1)
    return best_t, best_i


# -- k-d tree ------------------------------------------------------------------

_ISECT_COST = 80.0
_TRAVERSAL_COST = 1.0
_EMPTY_BONUS = 0.5


def _surface_area(lo, hi):
    e = np.maximum(hi - lo, 0.0)
    return 2.0 * (e[..., 0] * e[..., 1] + e[..., 1] * e[..., 2] + e[..., 2] * e[..., 0])


@dataclass
class KdTree:
    triangles: np.ndarray
    bounds: np.ndarray
    axis: list = field(default_factory=list)  # -1 marks a leaf
    split: list = field(default_factory=list)
    children: list = field(default_factory=list)
    leaf_triangles: list = field(default_factory=list)
    max_leaf_size: int = 4

    @property
    def node_count(self) -> int:
        return len(self.axis)

    def reachable_triangles(self) -> np.ndarray:
        leaves = [t for a, t in zip(self.axis, self.leaf_triangles) if a < 0]
        return np.unique(np.concatenate(leaves)) if leaves else np.empty(0, dtype=np.intp)

    def intersect(self, origins, directions, t_min, t_max):
        """Nearest hit per ray: ``(t, triangle index)``; misses give ``(inf, -1)``.

        Equal distances resolve to the lowest triangle index.
        """
        o = np.asarray(origins, dtype=float).reshape(-1, 3)
        d = np.asarray(directions, dtype=float).reshape(-1, 3)
        n = len(o)
        t_min = np.broadcast_to(np.asarray(t_min, dtype=float), (n,))
        t_max = np.broadcast_to(np.asarray(t_max, dtype=float), (n,))
        best_t = np.full(n, np.inf)
        best_i = np.full(n, -1, dtype=np.intp)

        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            ta = (self.bounds[0] - o) * inv
            tb = (self.bounds[1] - o) * inv
            t0 = np.nanmax(np.fmin(ta, tb), axis=1, initial=-np.inf)
            t1 = np.nanmin(np.fmax(ta, tb), axis=1, initial=np.inf)
        t0 = np.maximum(t0 - 1e-9 * (1 + np.abs(t0)), t_min)
        t1 = np.minimum(t1 + 1e-9 * (1 + np.abs(t1)), t_max)
        live = np.flatnonzero(t0 <= t1)
        stack = [(0, live, t0[live], t1[live])]
        tris = self.triangles
        while stack:
            node, rid, a, b = stack.pop()
            keep = best_t[rid] >= a - 1e-9 * (1 + np.abs(a))
            if not keep.all():
                rid, a, b = rid[keep], a[keep], b[keep]
            if rid.size == 0:
                continue
            ax = self.axis[node]
            if ax < 0:
                ids = self.leaf_triangles[node]
                if ids.size == 0:
                    continue
                t, *_ = watertight(
                    o[rid, None], d[rid, None],
                    tris[None, ids, 0], tris[None, ids, 1], tris[None, ids, 2],
                    t_min[rid, None], t_max[rid, None],
                )
                k = np.argmin(t, axis=1)
                tl = t[np.arange(rid.size), k]
                il = ids[k]
                better = (tl < best_t[rid]) | ((tl == best_t[rid]) & np.isfinite(tl) & (il < best_i[rid]))
                best_t[rid[better]] = tl[better]
                best_i[rid[better]] = il[better]
                continue
            s = self.split[node]
            oa, da = o[rid, ax], d[rid, ax]
            with np.errstate(divide="ignore", invalid="ignore"):
                ts = (s - oa) / da
            in_plane = (da == 0) & (oa == s)
            parallel = da == 0
            ts = np.where(parallel, 0.0, ts)
            eps = 1e-9 * (1 + np.abs(ts))
            below_first = (oa < s) | ((oa == s) & (da <= 0))
            go_first = parallel | ~((ts > 0) & (ts < a - eps))
            go_second = (~parallel & (ts <= b + eps) & (ts > -eps)) | in_plane
            first_hi = np.where(go_second & ~in_plane, np.minimum(b, ts + eps), b)
            second_lo = np.where(in_plane, a, np.maximum(a, ts - eps))
            below, above = self.children[node]
            m_below_1 = below_first & go_first
            m_below_2 = ~below_first & go_second
            m_above_1 = ~below_first & go_first
            m_above_2 = below_first & go_second
            for child, m1, m2 in ((above, m_above_1, m_above_2), (below, m_below_1, m_below_2)):
                m = m1 | m2
                if not m.any():
                    continue
                lo = np.where(m1, a, second_lo)[m]
                hi = np.where(m1, first_hi, b)[m]
                stack.append((child, rid[m], lo, hi))
        return best_t, best_i


def build_kdtree(meshes: Sequence[TriangleMesh] | np.ndarray, max_leaf_size: int = 4) -> KdTree:
    """Surface-area-heuristic k-d tree over all triangles of ``meshes``.

    ``meshes`` may also be a raw ``(T, 3, 3)`` triangle array.
    """
    if isinstance(meshes, np.ndarray):
        tris = np.asarray(meshes, dtype=float).reshape(-1, 3, 3)
    else:
        parts = [m.triangles() for m in meshes]
        tris = np.concatenate(parts) if parts else np.empty((0, 3, 3))
    if len(tris) == 0:
        raise ValueError("empty scene: cannot build a k-d tree without triangles")
    tmin = tris.min(axis=1)
    tmax = tris.max(axis=1)
    bounds = np.stack([tmin.min(axis=0), tmax.max(axis=0)])
    pad = 1e-9 * (1 + np.abs(bounds))
    bounds = np.stack([bounds[0] - pad[0], bounds[1] + pad[1]])
    tree = KdTree(triangles=tris, bounds=bounds, max_leaf_size=max_leaf_size)
    max_depth = int(round(8 + 1.3 * np.log2(len(tris))))

    def new_node():
        tree.axis.append(-1)
        tree.split.append(0.0)
        tree.children.append((-1, -1))
        tree.leaf_triangles.append(np.empty(0, dtype=np.intp))
        return len(tree.axis) - 1

    def make_leaf(node, ids):
        tree.leaf_triangles[node] = np.sort(ids)

    root = new_node()
    todo = [(root, np.arange(len(tris), dtype=np.intp), bounds[0], bounds[1], 0, 0)]
    while todo:
        node, ids, lo, hi, depth, bad = todo.pop()
        n = ids.size
        if n <= max_leaf_size or depth >= max_depth:
            make_leaf(node, ids)
            continue
        best = _best_split(tmin[ids], tmax[ids], lo, hi)
        old_cost = _ISECT_COST * n
        if best is None:
            make_leaf(node, ids)
            continue
        cost, ax, s = best
        if cost > old_cost:
            bad += 1
        if (cost > 4 * old_cost and n < 16) or bad == 3:
            make_leaf(node, ids)
            continue
        below_ids = ids[tmin[ids, ax] <= s]
        above_ids = ids[tmax[ids, ax] >= s]
        hi_below = hi.copy()
        hi_below[ax] = s
        lo_above = lo.copy()
        lo_above[ax] = s
        b, a = new_node(), new_node()
        tree.axis[node] = ax
        tree.split[node] = float(s)
        tree.children[node] = (b, a)
        todo.append((a, above_ids, lo_above, hi, depth + 1, bad))
        todo.append((b, below_ids, lo, hi_below, depth + 1, bad))
    return tree


def _best_split(bmin, bmax, lo, hi):
    n = len(bmin)
    total = _surface_area(lo, hi)
    if total <= 0:
        return None
    inv_total = 1.0 / total
    best = None
    extent = hi - lo
    for ax in np.argsort(-extent):
        if extent[ax] <= 0:
            continue
        cand = np.unique(np.concatenate([bmin[:, ax], bmax[:, ax]]))
        cand = cand[(cand > lo[ax]) & (cand < hi[ax])]
        if cand.size == 0:
            continue
        n_below = np.searchsorted(np.sort(bmin[:, ax]), cand, side="right")
        n_above = n - np.searchsorted(np.sort(bmax[:, ax]), cand, side="left")
        o1, o2 = (ax + 1) % 3, (ax + 2) % 3
        cross_area = extent[o1] * extent[o2]
        perim = extent[o1] + extent[o2]
        area_below = 2 * (cross_area + (cand - lo[ax]) * perim)
        area_above = 2 * (cross_area + (hi[ax] - cand) * perim)
        eb = np.where((n_below == 0) | (n_above == 0), _EMPTY_BONUS, 0.0)
        cost = _TRAVERSAL_COST + _ISECT_COST * (1 - eb) * (
            area_below * inv_total * n_below + area_above * inv_total * n_above
        )
        k = int(np.argmin(cost))
        # axes are tried longest-first; later axes only when no candidate exists
        return float(cost[k]), int(ax), float(cand[k])
    return best


# -- scene ---------------------------------------------------------------------


class Scene:
    """Triangle soup with per-triangle material/object ids and a k-d tree.

    ``triangles`` may be a ``Dual`` array when vertex positions depend on
    free parameters; the tree is built from the values and the differentiable
    copy is kept in ``ad_triangles`` for hit-distance evaluation.
    """

    def __init__(self, triangles, material_ids, object_ids=None, materials=None,
                 object_names=None, tree: KdTree | None = None, max_leaf_size: int = 4):
        self.ad_triangles = triangles if hasattr(triangles, "grad") else None
        self.triangles = np.ascontiguousarray(np.asarray(value(triangles), dtype=float).reshape(-1, 3, 3))
        self.material_ids = np.asarray(material_ids, dtype=np.intp).reshape(-1)
        if object_ids is None:
            object_ids = np.zeros(len(self.triangles), dtype=np.intp)
        self.object_ids = np.asarray(object_ids, dtype=np.intp).reshape(-1)
        if len(self.material_ids) != len(self.triangles) or len(self.object_ids) != len(self.triangles):
            raise ValueError("per-triangle id arrays must match the triangle count")
        self.materials = list(materials or [])
        self.object_names = list(object_names or [])
        if tree is None and len(self.triangles):
            tree = build_kdtree(self.triangles, max_leaf_size)
        self.tree = tree

    @classmethod
    def from_meshes(cls, meshes: Sequence[TriangleMesh], materials=None) -> "Scene":
        if not meshes:
            return cls(np.empty((0, 3, 3)), [], [], materials)
        tris = np.concatenate([m.triangles() for m in meshes])
        mats = np.concatenate([np.full(len(m.faces), m.material_id) for m in meshes])
        objs = np.concatenate([np.full(len(m.faces), k) for k, m in enumerate(meshes)])
        return cls(tris, mats, objs, materials, [m.name for m in meshes])

    def __len__(self):
        return len(self.triangles)

    def vertices_for_shading(self):
        return self.ad_triangles if self.ad_triangles is not None else self.triangles

    def nearest(self, origins, directions, t_min, t_max):
        o = np.asarray(value(origins), dtype=float).reshape(-1, 3)
        if self.tree is None:
            return np.full(len(o), np.inf), np.full(len(o), -1, dtype=np.intp)
        return self.tree.intersect(o, value(directions), t_min, t_max)


def intersect_scene(ray: Ray, scene: Scene | KdTree) -> Optional[Hit]:
    """Globally nearest hit of a single ray."""
    tree = scene.tree if isinstance(scene, Scene) else scene
    if tree is None:
        return None
    t, idx = tree.intersect(ray.origin[None], ray.direction[None], ray.t_min, ray.t_max)
    if idx[0] < 0:
        return None
    tri = tree.triangles[idx[0]]
    _, b0, b1, b2 = watertight(ray.origin, ray.direction, tri[0], tri[1], tri[2], ray.t_min, ray.t_max)
    mat = scene.material_ids[idx[0]] if isinstance(scene, Scene) else 0
    return _make_hit(ray, tri, float(t[0]), np.array([b0, b1, b2], dtype=float), mat, idx[0])

"""Whitted-style tracing of laser rays into return events.

Diffuse surfaces end a branch with a direct return to the coaxial detector;
mirrors and dielectrics branch into reflected/transmitted rays.  All rays of
one recursion level are processed together, and the hit topology is decided
on float values so derivatives are those of the current smooth piece.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scalar as sc
from .geometry import SECONDARY_EPSILON, Ray, Scene, plane_distance
from .materials import scatter_arrays

MAX_DEPTH = 5
THROUGHPUT_CUTOFF = 1e-4
MIN_DISTANCE = 1e-9
DEFAULT_HALF_ANGLE = float(np.arctan(0.020 / 4.0))  # 40 mm spot diameter at 4 m


@dataclass
class ReturnEvent:
    path_distance: object
    radiance: object


@dataclass(frozen=True)
class BeamSpec:
    half_angle: float = DEFAULT_HALF_ANGLE
    count: int = 3

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.count, 1.0 / self.count)


@dataclass
class Returns:
    """Flat list of return events of many beams."""

    beam: np.ndarray
    distance: object
    radiance: object
    touched: np.ndarray  # (beam, object id, triangle) of every surface interaction

    def __len__(self):
        return len(self.beam)

    def events(self, beam: int | None = None) -> list[ReturnEvent]:
        idx = np.arange(len(self.beam)) if beam is None else np.flatnonzero(self.beam == beam)
        return [ReturnEvent(self.distance[i], self.radiance[i]) for i in idx]


def attenuate(radiance, distance):
    """Inverse-square falloff over a one-way distance."""
    if np.any(sc.value(distance) <= MIN_DISTANCE):
        raise ValueError("degenerate return at the sensor origin")
    return radiance / (distance * distance)


def beam_directions(directions, half_angle: float, count: int = 3):
    """Sub-ray directions on the divergence cone around each central direction.

    The first sub-ray lies in the horizontal scan plane; the rest follow at
    equal azimuth steps.  Returns shape ``(N, count, 3)``.
    """
    d = directions
    u = sc.cross(np.array([0.0, 0.0, 1.0]) + 0.0 * d, d)
    if np.any(sc.value(sc.norm(u)) < 1e-12):
        raise ValueError("beam directions must not be vertical")
    u = sc.normalize(u)
    v = sc.cross(d, u)
    az = 2.0 * np.pi * np.arange(count) / count
    ca, sa = np.cos(half_angle), np.sin(half_angle)
    offs = u[..., None, :] * np.cos(az)[:, None] + v[..., None, :] * np.sin(az)[:, None]
    return d[..., None, :] * ca + offs * sa


def sample_beam(central: Ray, spec: BeamSpec = BeamSpec()):
    """The sub-rays of one beam with their weights."""
    dirs = beam_directions(central.direction[None], spec.half_angle, spec.count)[0]
    dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    return [
        (Ray(central.origin, dirs[k], central.t_min, central.t_max), float(w))
        for k, w in enumerate(spec.weights)
    ]


def trace_batch(scene: Scene, origins, directions, beam_ids, throughput,
                accumulated=0.0, depth: int = 0, t_min=0.0,
                max_depth: int = MAX_DEPTH, cutoff: float = THROUGHPUT_CUTOFF) -> Returns:
    """Trace a batch of rays to completion and collect every return event."""
    n = len(beam_ids)
    o = sc.broadcast_to(origins, (n, 3))
    d = sc.broadcast_to(directions, (n, 3))
    acc = sc.broadcast_to(accumulated, (n,))
    thr = sc.broadcast_to(throughput, (n,))
    bid = np.asarray(beam_ids, dtype=np.intp)
    tmin = np.broadcast_to(np.asarray(t_min, dtype=float), (n,))
    verts = scene.vertices_for_shading()

    ev_beam, ev_dist, ev_rad, touched = [], [], [], []
    while len(bid) and depth <= max_depth:
        _, tri = scene.nearest(o, d, tmin, np.inf)
        hit = tri >= 0
        if not hit.all():
            o, d, acc, thr, bid, tri = o[hit], d[hit], acc[hit], thr[hit], bid[hit], tri[hit]
        if len(bid) == 0:
            break
        tv = verts[tri]
        p0, p1, p2 = tv[:, 0], tv[:, 1], tv[:, 2]
        t = plane_distance(o, d, p0, p1, p2)
        point = o + d * t[:, None]
        ng = sc.normalize(sc.cross(p1 - p0, p2 - p0))
        front = sc.value(sc.dot(ng, d)) < 0
        nf = sc.where(front[:, None], ng, -ng)
        dist = acc + t
        wo = -d
        touched.append(np.stack([bid, scene.object_ids[tri], tri], axis=1))
        mats = scene.material_ids[tri]

        spawn = []
        for m in np.unique(mats):
            sel = np.flatnonzero(mats == m)
            parts = scatter_arrays(scene.materials[m], wo[sel], nf[sel], front[sel])
            if "diffuse" in parts:
                ev_beam.append(bid[sel])
                ev_dist.append(dist[sel])
                ev_rad.append(attenuate(thr[sel] * parts["diffuse"], dist[sel]))
            if depth == max_depth:
                continue
            for kind in ("reflect", "transmit"):
                if kind not in parts:
                    continue
                direction, weight, ok = parts[kind]
                new_thr = thr[sel] * weight
                keep = np.flatnonzero(ok & (sc.value(new_thr) >= cutoff))
                if keep.size == 0:
                    continue
                spawn.append((point[sel][keep], sc.normalize(direction[keep]),
                              dist[sel][keep], new_thr[keep], bid[sel][keep]))
        depth += 1
        if not spawn:
            break
        o = sc.concatenate([s[0] for s in spawn])
        d = sc.concatenate([s[1] for s in spawn])
        acc = sc.concatenate([s[2] for s in spawn])
        thr = sc.concatenate([s[3] for s in spawn])
        bid = np.concatenate([s[4] for s in spawn])
        tmin = np.full(len(bid), SECONDARY_EPSILON)

    if not ev_beam:
        empty = np.empty(0)
        return Returns(np.empty(0, dtype=np.intp), empty, empty,
                       np.concatenate(touched) if touched else np.empty((0, 3), dtype=np.intp))
    return Returns(
        np.concatenate(ev_beam),
        sc.concatenate(ev_dist),
        sc.concatenate(ev_rad),
        np.concatenate(touched),
    )


def trace_ray(scene: Scene, ray: Ray, depth: int = 0, accumulated_distance=0.0,
              throughput=1.0) -> list[ReturnEvent]:
    """Return events of a single ray tree."""
    if depth > MAX_DEPTH:
        return []
    out = trace_batch(scene, ray.origin[None], ray.direction[None], np.zeros(1, dtype=np.intp),
                      throughput, accumulated_distance, depth, ray.t_min)
    return out.events()


def trace_beam(scene: Scene, central: Ray, spec: BeamSpec = BeamSpec()) -> list[ReturnEvent]:
    """Merged events of the sub-rays of one beam, radiances scaled by the sub-ray weight."""
    events = []
    for ray, w in sample_beam(central, spec):
        events.extend(trace_ray(scene, ray, throughput=w))
    return events

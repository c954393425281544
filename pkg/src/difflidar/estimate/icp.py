"""Point-to-point ICP in the plane, the scan-matching baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..scalar import PoseSE2


class DegenerateCorrespondenceError(ValueError):
    """Point sets without spatial extent cannot fix a rotation."""


@dataclass
class IcpResult:
    transform: PoseSE2
    iterations: int
    converged: bool
    rms: float


def _pose_matrix(p: PoseSE2) -> np.ndarray:
    c, s = np.cos(p.yaw), np.sin(p.yaw)
    return np.array([[c, -s, p.x], [s, c, p.y], [0.0, 0.0, 1.0]])


def _pose_of(m: np.ndarray) -> PoseSE2:
    return PoseSE2(float(m[0, 2]), float(m[1, 2]), float(np.arctan2(m[1, 0], m[0, 0])))


def align_svd(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares rigid transform (3x3 homogeneous) taking ``src`` onto ``dst``."""
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    h = (src - ms).T @ (dst - md)
    u, _, vt = np.linalg.svd(h)
    r = vt.T @ u.T
    if np.linalg.det(r) < 0:
        vt[-1] *= -1
        r = vt.T @ u.T
    out = np.eye(3)
    out[:2, :2] = r
    out[:2, 2] = md - r @ ms
    return out


def icp_2d(source, target, init: PoseSE2 = PoseSE2(0.0, 0.0, 0.0), max_iter: int = 100,
           tol: float = 1e-9) -> IcpResult:
    """Rigid transform ``T`` with ``T(source) ~ target``, refined from ``init``.

    Correspondences are nearest target points; iteration stops once the
    incremental transform moves by less than ``tol``.
    """
    src = np.asarray(source, dtype=float).reshape(-1, 2)
    dst = np.asarray(target, dtype=float).reshape(-1, 2)
    if len(src) == 0 or len(dst) == 0:
        raise ValueError("point sets must be non-empty")
    if np.ptp(src, axis=0).max() < 1e-12 or np.ptp(dst, axis=0).max() < 1e-12:
        raise DegenerateCorrespondenceError("degenerate correspondence: all points coincide")
    tree = cKDTree(dst)
    t = _pose_matrix(init)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        moved = src @ t[:2, :2].T + t[:2, 2]
        _, nn = tree.query(moved)
        step = align_svd(moved, dst[nn])
        t = step @ t
        delta = np.hypot(step[0, 2], step[1, 2]) + abs(np.arctan2(step[1, 0], step[0, 0]))
        if delta < tol:
            converged = True
            break
    moved = src @ t[:2, :2].T + t[:2, 2]
    d, _ = tree.query(moved)
    return IcpResult(_pose_of(t), it, converged, float(np.sqrt(np.mean(d * d))))


def icp_localize(observed_points, reference_points, reference_pose: PoseSE2, init: PoseSE2,
                 max_iter: int = 100) -> IcpResult:
    """Sensor pose estimate from matching sensor-frame points against a reference scan.

    ``observed_points`` and ``reference_points`` are in their own sensor
    frames; the reference was taken at ``reference_pose`` and the estimate
    starts at ``init``.  Returns the result with ``transform`` set to the
    estimated world pose.
    """
    # world <- observed sensor = reference_pose . X, with X aligning observed onto reference
    x0 = reference_pose.inverse().compose(init)
    res = icp_2d(observed_points, reference_points, x0, max_iter)
    res.transform = reference_pose.compose(res.transform)
    return res

"""Forward-mode gradients of the scan loss against central differences."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .. import scalar as sc
from ..cwmeasure import simulate_beams
from ..harness.scenefile import (
    DIODE_SCALE, SceneDescription, build_scene, diode_from, sensor_pose_from,
)
from .loss import Observation, objective, residual_loss, simulate_observation
from .params import Parameter, ParameterVector

FD_STEP = 1e-6
TOLERANCE = 1e-4


@dataclass
class GradientCheck:
    point: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    rejected: int = 0  # candidate points whose stencil crossed a discontinuity

    @property
    def relative_error(self) -> float:
        scale = max(np.linalg.norm(self.numeric), np.linalg.norm(self.analytic), 1e-12)
        return float(np.linalg.norm(self.analytic - self.numeric) / scale)


def full_parameters(desc: SceneDescription, materials=None) -> ParameterVector:
    """Sensor pose, diode polynomial and the reflectance of every diffuse material."""
    x, y, yaw = desc.sensor.pose
    diode = desc.sensor.model().diode
    params = [Parameter("pose.x", x), Parameter("pose.y", y), Parameter("pose.yaw", np.deg2rad(yaw))]
    params += [Parameter(f"diode.{k}", diode[i], scale=DIODE_SCALE) for i, k in enumerate("abc")]
    names = materials if materials is not None else [
        m.name for m in desc.materials.values() if m.type in ("lambertian", "oren_nayar")
    ]
    params += [Parameter(f"material.k_r[{m}]", desc.materials[m].k_r, "logistic") for m in names]
    return ParameterVector(params)


def _perturbed(pv: ParameterVector, rng: np.random.Generator) -> ParameterVector:
    out = []
    for p in pv:
        if p.group in ("pose", "object"):
            spread = 0.05 if p.field == "yaw" else 0.03
            v = p.value + rng.uniform(-spread, spread)
        elif p.group == "diode":
            v = p.value + rng.uniform(-0.01, 0.01)
        else:
            v = rng.uniform(0.2, 0.95)
        out.append(replace(p, value=float(v)))
    return ParameterVector(out)


def observed_scan(desc: SceneDescription, pv: ParameterVector):
    values = pv.as_dict()
    m = simulate_beams(build_scene(desc, values), sensor_pose_from(desc, values),
                       desc.sensor.model(), diode=diode_from(desc, values))
    return m.to_scan(sensor_pose_from(desc, values).values(), desc.sensor.model())


def loss_and_signature(params: ParameterVector, observations, x):
    """Float loss plus a fingerprint of the hit topology (surfaces touched, beam validity)."""
    values = params.external(np.asarray(x, dtype=float))
    total, parts = 0.0, []
    for obs in observations:
        m = simulate_observation(obs, values)
        loss, _ = residual_loss(m.ranges, m.valid, obs.scan)
        total += float(loss)
        parts += [m.touched.tobytes(), m.valid.tobytes()]
    return total, b"".join(parts)


def stencil_difference(params: ParameterVector, observations, x, step: float = FD_STEP):
    """Central differences, or None when the stencil leaves the smooth piece containing ``x``."""
    _, sig = loss_and_signature(params, observations, x)
    g = np.zeros(len(x))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = step
        f_hi, s_hi = loss_and_signature(params, observations, x + e)
        f_lo, s_lo = loss_and_signature(params, observations, x - e)
        if s_hi != sig or s_lo != sig:
            return None
        g[i] = (f_hi - f_lo) / (2.0 * step)
    return g


def check_gradients(desc: SceneDescription, params: ParameterVector | None = None,
                    points: int = 20, seed: int = 0, step: float = FD_STEP,
                    max_rejections: int = 100) -> list[GradientCheck]:
    """AD vs central differences of the scan loss at random feasible points near ``params``.

    A point is feasible when every stencil evaluation has the same hit
    topology as the point itself, i.e. the loss is smooth across the stencil.
    The observation is simulated at ``params`` with a nonzero diode
    polynomial so that reflectances influence the measured ranges.
    """
    rng = np.random.default_rng(seed)
    pv = params if params is not None else full_parameters(desc)
    truth = pv
    if "diode.b" in pv.names and all(v == 0.0 for v in diode_from(desc)):
        truth = pv.with_values(**{"diode.a": 0.004, "diode.b": -0.03, "diode.c": 0.008})
    obs = [Observation(desc, observed_scan(desc, truth))]
    out = []
    rejected = 0
    while len(out) < points:
        at = _perturbed(truth, rng)
        x = at.internal()
        g_fd = stencil_difference(at, obs, x, step)
        if g_fd is None:
            rejected += 1
            if rejected > max_rejections:
                raise RuntimeError("too few feasible points for a gradient check")
            continue
        _, g = objective(at, obs)(x)
        out.append(GradientCheck(x, g, g_fd, rejected))
        rejected = 0
    return out

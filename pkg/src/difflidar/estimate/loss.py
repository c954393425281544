"""Scan-space squared-error loss and its forward-mode gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import scalar as sc
from ..cwmeasure import BeamMeasurements, Scan, SensorModel, simulate_beams
from ..harness.scenefile import SceneDescription, build_scene, diode_from, sensor_pose_from
from .params import ParameterVector


class NoConstraintError(ValueError):
    """No beam is valid in both the simulated and the observed scan."""


class NoGradientSignalError(ValueError):
    """The estimated object is not seen by any beam."""


@dataclass
class Observation:
    """One observed scan together with the scene it was taken in.

    ``pose`` overrides the sensor pose stored in the description; free
    ``pose.*`` parameters override both.
    """

    description: SceneDescription
    scan: Scan
    pose: sc.PoseSE2 | None = None

    def sensor(self) -> SensorModel:
        return self.description.sensor.model()


def residual_loss(predicted, valid_pred, observed: Scan):
    """Sum of squared range residuals over beams valid in both scans."""
    both = np.asarray(valid_pred, bool) & np.asarray(observed.valid, bool)
    if not both.any():
        raise NoConstraintError("no constraint")
    idx = np.flatnonzero(both)
    r = predicted[idx] - observed.ranges[idx]
    return sc.dsum(r * r), len(idx)


def simulate_observation(obs: Observation, values: dict) -> BeamMeasurements:
    """Simulated beams of ``obs`` with the given parameter values bound."""
    scene = build_scene(obs.description, values)
    pose = sensor_pose_from(obs.description, values, obs.pose)
    sensor = obs.sensor()
    return simulate_beams(scene, pose, sensor, diode=diode_from(obs.description, values, sensor))


def evaluate(params: ParameterVector, observations, x=None):
    """Loss at internal coordinates ``x`` (floats or ``Dual``); defaults to ``params``."""
    x = params.internal() if x is None else x
    values = params.external(x)
    total = 0.0
    for obs in observations:
        m = simulate_observation(obs, values)
        loss, _ = residual_loss(m.ranges, m.valid, obs.scan)
        total = total + loss
    return total


def objective(params: ParameterVector, observations):
    """``fun(x) -> (loss, gradient)`` over the internal coordinates of ``params``."""

    def fun(x):
        x = np.asarray(x, dtype=float)
        if len(x) == 0:
            return float(evaluate(params, observations, x)), np.zeros(0)
        out = evaluate(params, observations, sc.variables(x))
        if not sc.is_dual(out):
            return float(out), np.zeros(len(x))
        g = np.asarray(out.grad, dtype=float)
        if not np.isfinite(out.val) or not np.all(np.isfinite(g)):
            bad = np.flatnonzero(~np.isfinite(g))
            raise sc.GradientError("non-finite loss or gradient", int(bad[0]) if bad.size else None)
        return float(out.val), g

    return fun


def scan_loss(params: ParameterVector, observed: Scan, scene_template: SceneDescription,
              sensor: SensorModel | None = None) -> float:
    """L = sum of squared range residuals of the simulated scan against ``observed``."""
    desc = scene_template
    if sensor is not None and sensor != desc.sensor.model():
        overrides = {f: getattr(sensor, f) for f in sensor.__dataclass_fields__}
        desc = SceneDescription(desc.name, type(desc.sensor)(desc.sensor.pose, overrides, desc.sensor.free),
                                desc.materials, desc.objects)
    return float(sc.value(evaluate(params, [Observation(desc, observed)])))

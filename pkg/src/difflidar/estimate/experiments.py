"""Localization, object tracking and diode calibration by scan matching."""

from __future__ import annotations

import copy
import math

import numpy as np

from .. import scalar as sc
from ..cwmeasure import Scan
from ..harness.scenefile import DIODE_SCALE, SceneDescription, build_scene, sensor_pose_from
from ..cwmeasure import simulate_beams
from .loss import NoGradientSignalError, Observation, objective
from .optimize import OptimizeConfig, minimize
from .params import Parameter, ParameterVector


def _pose_of(pv: ParameterVector, prefix: str, suffix: str = "") -> sc.PoseSE2:
    return sc.PoseSE2(pv[f"{prefix}.x{suffix}"], pv[f"{prefix}.y{suffix}"], pv[f"{prefix}.yaw{suffix}"])


def _pose_callback(pv: ParameterVector, prefix: str, suffix: str, truth: sc.PoseSE2 | None):
    if truth is None:
        return None

    def callback(x):
        est = _pose_of(pv.from_internal(x), prefix, suffix)
        return {"se2_error": sc.se2_error(est, truth)}

    return callback


def localize_sensor(observed: Scan, scene: SceneDescription, init: sc.PoseSE2,
                    truth: sc.PoseSE2 | None = None, config: OptimizeConfig = OptimizeConfig()):
    """Sensor SE(2) pose that best reproduces ``observed`` in a known scene."""
    pv = ParameterVector([
        Parameter("pose.x", float(init.x)),
        Parameter("pose.y", float(init.y)),
        Parameter("pose.yaw", float(init.yaw)),
    ])
    fun = objective(pv, [Observation(scene, observed)])
    best, trace = minimize(fun, pv, config, _pose_callback(pv, "pose", "", truth))
    return _pose_of(best, "pose"), trace


def _with_object_pose(scene: SceneDescription, name: str, pose: sc.PoseSE2) -> SceneDescription:
    desc = copy.deepcopy(scene)
    obj = desc.object(name)
    obj.pose = (float(pose.x), float(pose.y), math.degrees(float(pose.yaw)))
    return desc


def object_visible(scene: SceneDescription, name: str) -> bool:
    """Whether any beam of the scene's sensor interacts with object ``name``."""
    built = build_scene(scene)
    m = simulate_beams(built, sensor_pose_from(scene), scene.sensor.model())
    return scene.object_index(name) in m.objects_seen()


def track_object(observed: Scan, scene: SceneDescription, object_id: str, init: sc.PoseSE2,
                 truth: sc.PoseSE2 | None = None, config: OptimizeConfig = OptimizeConfig()):
    """SE(2) pose of one object with the sensor pose held fixed."""
    start = _with_object_pose(scene, object_id, init)
    if not object_visible(start, object_id):
        raise NoGradientSignalError("no gradient signal")
    sfx = f"[{object_id}]"
    pv = ParameterVector([
        Parameter(f"object.x{sfx}", float(init.x)),
        Parameter(f"object.y{sfx}", float(init.y)),
        Parameter(f"object.yaw{sfx}", float(init.yaw)),
    ])
    fun = objective(pv, [Observation(start, observed)])
    best, trace = minimize(fun, pv, config, _pose_callback(pv, "object", sfx, truth))
    return _pose_of(best, "object", sfx), trace


def calibration_parameters(scene: SceneDescription, materials=("white", "black"),
                           k_init: float = 0.5, diode_init=(0.0, 0.0, 0.0)) -> ParameterVector:
    """Neutral starting point: equal reflectances and a zero polynomial."""
    params = [Parameter(f"diode.{k}", float(v), scale=DIODE_SCALE) for k, v in zip("abc", diode_init)]
    params += [Parameter(f"material.k_r[{m}]", float(k_init), "logistic") for m in materials]
    for m in materials:
        if m not in scene.materials:
            raise KeyError(f"no material named {m!r}")
    return ParameterVector(params)


def calibrate(observed, scenes, init: ParameterVector | None = None,
              config: OptimizeConfig = OptimizeConfig()):
    """Jointly fit reflectances and the diode polynomial to one or more scans.

    ``observed`` and ``scenes`` are parallel sequences (a single scene is
    reused for every scan).
    """
    scans = [observed] if isinstance(observed, Scan) else list(observed)
    if isinstance(scenes, SceneDescription):
        scenes = [scenes] * len(scans)
    if len(scenes) != len(scans) or not scans:
        raise ValueError("need one scene per observed scan")
    pv = init if init is not None else calibration_parameters(scenes[0])
    fun = objective(pv, [Observation(d, s) for d, s in zip(scenes, scans)])
    return minimize(fun, pv, config)


def apply_parameters(scene: SceneDescription, params: ParameterVector) -> SceneDescription:
    """Copy of ``scene`` with parameter values written back into its description."""
    desc = copy.deepcopy(scene)
    diode = list(desc.sensor.model().diode)
    pose = list(desc.sensor.pose)
    for p in params:
        if p.group == "diode":
            diode["abc".index(p.field)] = p.value
        elif p.group == "material":
            desc.materials[p.target].k_r = p.value
        elif p.group == "pose":
            k = ("x", "y", "yaw").index(p.field)
            pose[k] = math.degrees(p.value) if p.field == "yaw" else p.value
        elif p.group == "object":
            obj = desc.object(p.target)
            op = list(obj.pose)
            k = ("x", "y", "yaw").index(p.field)
            op[k] = math.degrees(p.value) if p.field == "yaw" else p.value
            obj.pose = tuple(op)
    desc.sensor.pose = tuple(pose)
    desc.sensor.overrides = dict(desc.sensor.overrides, diode=tuple(diode))
    return desc


def predicted_residuals(scene: SceneDescription, observed: Scan) -> np.ndarray:
    """Per-beam residuals of the scene's simulation against ``observed`` (both-valid beams)."""
    m = simulate_beams(build_scene(scene), sensor_pose_from(scene), scene.sensor.model())
    both = m.valid & observed.valid
    return np.asarray(sc.value(m.ranges))[both] - observed.ranges[both]

"""Command-line driver: simulate scans and run the estimation experiments.

Exit codes: 0 success, 1 usage error, 2 data error, 3 convergence failure.
Angles on the command line are in degrees.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from ..cwmeasure import SensorModel, simulate_scan
from ..estimate.experiments import (
    apply_parameters, calibrate, calibration_parameters, localize_sensor, predicted_residuals,
    track_object,
)
from ..estimate.gradcheck import TOLERANCE, check_gradients
from ..estimate.icp import DegenerateCorrespondenceError, icp_2d
from ..estimate.loss import NoConstraintError, NoGradientSignalError
from ..estimate.optimize import OptimizeConfig
from ..scalar import GradientError, PoseSE2, se2_error
from .builtins import build_builtin_scene
from .scanio import ExperimentReport, ScanFormatError, read_scan, trajectory_of, write_scan
from .scenefile import SceneDescription, SceneParseError, build_scene, parse_scene_document, serialize_scene

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def load_scene(spec: str) -> SceneDescription:
    """A scene file path, or the name of a built-in scene."""
    path = Path(spec)
    if path.is_file():
        try:
            return parse_scene_document(path.read_text())
        except SceneParseError as exc:
            raise DataError(f"{spec}: {exc}") from exc
    try:
        return build_builtin_scene(spec)
    except ValueError as exc:
        raise DataError(f"no scene file or built-in scene named {spec!r}") from exc


def _pose(values) -> PoseSE2:
    x, y, yaw = values
    return PoseSE2.from_degrees(x, y, yaw)


def _pose_dict(p: PoseSE2) -> dict:
    return {"x": float(p.x), "y": float(p.y), "yaw_deg": math.degrees(float(p.yaw))}


def _read(path: str):
    try:
        return read_scan(path)
    except FileNotFoundError as exc:
        raise DataError(f"{path}: no such file") from exc
    except ScanFormatError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _config(args, scene: SceneDescription | None = None) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "report", "trace")}
    if scene is not None:
        cfg["scene_document"] = serialize_scene(scene)
    return cfg


def _finish(args, report: ExperimentReport, trace=None) -> int:
    Path(args.report).write_text(report.to_json())
    if trace is not None and getattr(args, "trace", None):
        Path(args.trace).write_text(trace.to_csv())
    status = report.status
    print(f"{report.experiment}: {status.get('summary', 'done')}")
    if trace is not None and not trace.converged:
        print(f"optimizer stopped without converging ({trace.reason})", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


def _optimizer(args) -> OptimizeConfig:
    return OptimizeConfig(max_iter=args.max_iter)


def cmd_simulate(args) -> int:
    scene = load_scene(args.scene)
    pose = _pose(args.pose) if args.pose is not None else scene.sensor_pose()
    sensor = scene.sensor.model()
    start = time.perf_counter()
    scan = simulate_scan(build_scene(scene), pose, sensor, seed=args.seed)
    write_scan(args.out, scan)
    report = ExperimentReport(
        "simulate", _config(args, scene), {"pose": _pose_dict(pose)},
        status={"valid_beams": int(scan.valid.sum()), "summary": f"{int(scan.valid.sum())} valid beams"},
        wall_clock_s=time.perf_counter() - start,
    )
    return _finish(args, report)


def cmd_localize(args) -> int:
    scene = load_scene(args.scene)
    observed = _read(args.observed)
    truth = _pose(args.truth) if args.truth is not None else None
    start = time.perf_counter()
    est, trace = localize_sensor(observed, scene, _pose(args.init), truth, _optimizer(args))
    status = {"reason": trace.reason, "iterations": trace.iterations}
    summary = f"pose {_pose_dict(est)} after {trace.iterations} iterations"
    if truth is not None:
        status["se2_error"] = se2_error(est, truth)
        summary += f", SE(2) error {status['se2_error']:.3g}"
    status["summary"] = summary
    report = ExperimentReport(
        "localize", _config(args, scene), {"pose": _pose_dict(est)},
        _pose_dict(truth) if truth else None, trajectory_of(trace), status,
        time.perf_counter() - start,
    )
    return _finish(args, report, trace)


def cmd_track(args) -> int:
    scene = load_scene(args.scene)
    observed = _read(args.observed)
    try:
        scene.object(args.object)
    except KeyError as exc:
        raise DataError(str(exc)) from exc
    truth = _pose(args.truth) if args.truth is not None else None
    start = time.perf_counter()
    est, trace = track_object(observed, scene, args.object, _pose(args.init), truth, _optimizer(args))
    status = {"reason": trace.reason, "iterations": trace.iterations}
    summary = f"{args.object} at {_pose_dict(est)} after {trace.iterations} iterations"
    if truth is not None:
        status["se2_error"] = se2_error(est, truth)
        summary += f", SE(2) error {status['se2_error']:.3g}"
    status["summary"] = summary
    report = ExperimentReport(
        "track", _config(args, scene), {"object": args.object, "pose": _pose_dict(est)},
        _pose_dict(truth) if truth else None, trajectory_of(trace), status,
        time.perf_counter() - start,
    )
    return _finish(args, report, trace)


def cmd_calibrate(args) -> int:
    scene = load_scene(args.scene)
    scans = [_read(p) for p in args.observed]
    for name in args.materials:
        if name not in scene.materials:
            raise DataError(f"scene has no material named {name!r}")
    start = time.perf_counter()
    init = calibration_parameters(scene, tuple(args.materials))
    params, trace = calibrate(scans, scene, init, _optimizer(args))
    fitted = apply_parameters(scene, params)
    rms = [float(np.sqrt(np.mean(predicted_residuals(fitted, s) ** 2))) for s in scans]
    status = {
        "reason": trace.reason, "iterations": trace.iterations, "residual_rms_m": rms,
        "summary": f"loss {trace.records[-1].loss:.3g} after {trace.iterations} iterations",
    }
    report = ExperimentReport(
        "calibrate", _config(args, scene), params.as_dict(), None, trajectory_of(trace), status,
        time.perf_counter() - start,
    )
    return _finish(args, report, trace)


def cmd_icp(args) -> int:
    source, target = _read(args.source), _read(args.target)
    sensor = SensorModel()
    start = time.perf_counter()
    try:
        res = icp_2d(source.points(sensor), target.points(sensor), _pose(args.init), args.max_iter)
    except (DegenerateCorrespondenceError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    status = {
        "converged": res.converged, "iterations": res.iterations, "rms_m": res.rms,
        "summary": f"transform {_pose_dict(res.transform)} after {res.iterations} iterations",
    }
    report = ExperimentReport(
        "icp", _config(args), {"transform": _pose_dict(res.transform)}, None, [], status,
        time.perf_counter() - start,
    )
    code = _finish(args, report)
    if not res.converged:
        print("ICP reached the iteration limit", file=sys.stderr)
        return EXIT_CONVERGENCE
    return code


def cmd_gradcheck(args) -> int:
    scene = load_scene(args.scene)
    start = time.perf_counter()
    checks = check_gradients(scene, points=args.points, seed=args.seed)
    errors = [c.relative_error for c in checks]
    worst = max(errors)
    ok = worst < TOLERANCE
    status = {
        "max_relative_error": worst, "points": len(checks), "passed": ok,
        "summary": f"{'pass' if ok else 'FAIL'}: worst relative error {worst:.3g} over {len(checks)} points",
    }
    report = ExperimentReport(
        "gradcheck", _config(args, scene), {}, None,
        [{"point": c.point.tolist(), "relative_error": c.relative_error} for c in checks],
        status, time.perf_counter() - start,
    )
    _finish(args, report)
    return EXIT_OK if ok else EXIT_CONVERGENCE


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="difflidar", description="Differentiable continuous-wave LIDAR simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, name, optimizer=False):
        sp.add_argument("--report", default=f"{name}_report.json", help="JSON report path")
        if optimizer:
            sp.add_argument("--trace", help="per-iteration trace CSV path")
            sp.add_argument("--max-iter", type=int, default=200)

    pose = dict(nargs=3, type=float, metavar=("X", "Y", "YAW"))

    sp = sub.add_parser("simulate", help="simulate one scan")
    sp.add_argument("--scene", required=True, help="scene file or built-in name")
    sp.add_argument("--pose", **pose)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    common(sp, "simulate")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("localize", help="estimate the sensor pose")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--observed", required=True)
    sp.add_argument("--init", required=True, **pose)
    sp.add_argument("--truth", **pose)
    common(sp, "localize", optimizer=True)
    sp.set_defaults(func=cmd_localize)

    sp = sub.add_parser("track", help="estimate an object pose")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--object", required=True)
    sp.add_argument("--observed", required=True)
    sp.add_argument("--init", required=True, **pose)
    sp.add_argument("--truth", **pose)
    common(sp, "track", optimizer=True)
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("calibrate", help="fit reflectances and the diode polynomial")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--observed", required=True, nargs="+")
    sp.add_argument("--materials", nargs="+", default=["white", "black"])
    common(sp, "calibrate", optimizer=True)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("icp", help="point-to-point ICP between two scans")
    sp.add_argument("--source", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--init", default=[0.0, 0.0, 0.0], **pose)
    sp.add_argument("--max-iter", type=int, default=100)
    common(sp, "icp")
    sp.set_defaults(func=cmd_icp)

    sp = sub.add_parser("gradcheck", help="compare AD gradients with finite differences")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--points", type=int, default=20)
    common(sp, "gradcheck")
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"difflidar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, NoConstraintError, NoGradientSignalError, GradientError, OSError) as exc:
        print(f"difflidar: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

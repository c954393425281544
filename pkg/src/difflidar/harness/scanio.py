"""Scan CSV files and JSON experiment reports."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..cwmeasure import Scan
from ..scalar import PoseSE2


class ScanFormatError(ValueError):
    pass


def format_scan(scan: Scan) -> str:
    """``# pose: x y yaw_deg`` and sensor headers, then ``index,range_m,valid`` rows."""
    p = scan.pose
    lines = [
        f"# pose: {float(p.x):.6f} {float(p.y):.6f} {math.degrees(float(p.yaw)):.6f}",
        f"# sensor: {scan.sensor_id}",
        "index,range_m,valid",
    ]
    for k, (r, v) in enumerate(zip(scan.ranges, scan.valid)):
        lines.append(f"{k},{(r if v else 0.0):.6f},{int(bool(v))}")
    return "\n".join(lines) + "\n"


def parse_scan(text: str) -> Scan:
    pose = PoseSE2()
    sensor_id = "URG-04LX"
    ranges, valid = [], []
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("pose:"):
                try:
                    x, y, yaw = (float(v) for v in body[5:].split())
                except ValueError as exc:
                    raise ScanFormatError(f"line {lineno}: malformed pose header") from exc
                pose = PoseSE2.from_degrees(x, y, yaw)
            elif body.startswith("sensor:"):
                sensor_id = body[7:].strip()
            continue
        if not header_seen and line.replace(" ", "") == "index,range_m,valid":
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ScanFormatError(f"line {lineno}: expected index,range_m,valid")
        try:
            idx, r, v = int(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as exc:
            raise ScanFormatError(f"line {lineno}: malformed row") from exc
        if idx != len(ranges):
            raise ScanFormatError(f"line {lineno}: beam index {idx} out of sequence")
        if v not in (0, 1) or not math.isfinite(r) or r < 0:
            raise ScanFormatError(f"line {lineno}: invalid range or flag")
        ranges.append(r)
        valid.append(bool(v))
    if not ranges:
        raise ScanFormatError("scan file has no beams")
    return Scan(np.array(ranges), np.array(valid), pose, sensor_id)


def write_scan(path, scan: Scan) -> None:
    Path(path).write_text(format_scan(scan))


def read_scan(path) -> Scan:
    return parse_scan(Path(path).read_text())


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    parameters: dict
    ground_truth: dict | None = None
    trajectory: list = field(default_factory=list)
    status: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config_digest": config_digest(self.config),
            "config": self.config,
            "parameters": self.parameters,
            "ground_truth": self.ground_truth,
            "trajectory": self.trajectory,
            "status": self.status,
            "wall_clock_s": self.wall_clock_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_jsonable) + "\n"


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def trajectory_of(trace) -> list:
    rows = []
    for r in trace.records:
        row = {"iter": r.iteration, "loss": r.loss, "grad_norm": r.grad_norm}
        row.update({k: float(v) for k, v in r.extra.items()})
        rows.append(row)
    return rows

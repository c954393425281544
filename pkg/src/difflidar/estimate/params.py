"""Packing of free simulation parameters into an unconstrained vector."""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

import numpy as np

from ..scalar import wrap_angle

_NAME = re.compile(r"^(?P<group>pose|diode|material|object)\.(?P<field>\w+)(\[(?P<target>[^\]]+)\])?$")


@dataclass(frozen=True)
class Parameter:
    """One free scalar.

    ``name`` follows ``pose.x``, ``pose.yaw``, ``diode.a``,
    ``material.k_r[white]``, ``object.yaw[mirror]``.  ``value`` is the physical
    value; ``logistic`` parameters are optimized through their logit.  The
    optimizer sees the (transformed) value divided by ``scale``.
    """

    name: str
    value: float
    transform: str = "identity"
    scale: float = 1.0

    def __post_init__(self):
        if not _NAME.match(self.name):
            raise ValueError(f"malformed parameter name {self.name!r}")
        if self.transform not in ("identity", "logistic"):
            raise ValueError(f"unknown transform {self.transform!r}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def group(self) -> str:
        return _NAME.match(self.name)["group"]

    @property
    def field(self) -> str:
        return _NAME.match(self.name)["field"]

    @property
    def target(self) -> str | None:
        return _NAME.match(self.name)["target"]


def _logit(p):
    p = np.clip(p, 1e-9, 1 - 1e-9)
    return np.log(p / (1 - p))


def _logistic(u):
    return 1.0 / (1.0 + np.exp(-u))


class ParameterVector:
    """Ordered free parameters; converts between physical and optimizer space."""

    def __init__(self, params):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")

    def __len__(self):
        return len(self.params)

    def __iter__(self):
        return iter(self.params)

    def __repr__(self):
        body = ", ".join(f"{p.name}={p.value:.6g}" for p in self.params)
        return f"ParameterVector({body})"

    def __eq__(self, other):
        return isinstance(other, ParameterVector) and self.params == other.params

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.params], dtype=float)

    def as_dict(self) -> dict:
        return {p.name: p.value for p in self.params}

    def __getitem__(self, name: str) -> float:
        for p in self.params:
            if p.name == name:
                return p.value
        raise KeyError(name)

    def internal(self) -> np.ndarray:
        return np.array(
            [(_logit(p.value) if p.transform == "logistic" else p.value) / p.scale
             for p in self.params],
            dtype=float,
        )

    def external(self, x) -> dict:
        """Physical values from an optimizer vector (floats or ``Dual``)."""
        out = {}
        for k, p in enumerate(self.params):
            xk = x[k] * p.scale if p.scale != 1.0 else x[k]
            out[p.name] = _logistic(xk) if p.transform == "logistic" else xk
        return out

    def from_internal(self, x) -> "ParameterVector":
        ext = self.external(np.asarray(x, dtype=float))
        params = []
        for p in self.params:
            v = float(ext[p.name])
            if p.field == "yaw":
                v = float(wrap_angle(v))
            params.append(replace(p, value=v))
        return ParameterVector(params)

    def with_values(self, **values) -> "ParameterVector":
        return ParameterVector(
            [replace(p, value=float(values.get(p.name, p.value))) for p in self.params]
        )

    def subset(self, names) -> "ParameterVector":
        keep = set(names)
        return ParameterVector([p for p in self.params if p.name in keep])


def pose_parameters(x, y, yaw, group: str = "pose", target: str | None = None) -> list[Parameter]:
    suffix = f"[{target}]" if target else ""
    return [
        Parameter(f"{group}.x{suffix}", float(x)),
        Parameter(f"{group}.y{suffix}", float(y)),
        Parameter(f"{group}.yaw{suffix}", float(yaw)),
    ]

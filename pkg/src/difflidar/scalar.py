"""Forward-mode differentiable scalars, small vector algebra and rigid transforms.

Every numeric routine in the simulator is written against plain numpy
operations.  Passing :class:`Dual` arrays instead of ``ndarray`` carries
first-order tangents through the same code, so a float evaluation and the
value part of a differentiable evaluation are bit-identical.

A ``Dual`` holds ``val`` with shape ``S`` and ``grad`` with shape ``S + (P,)``
where ``P`` is the number of seeded parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.mixins import NDArrayOperatorsMixin
from scipy import sparse

TWO_PI = 2.0 * np.pi


class GradientError(FloatingPointError):
    """Raised when an evaluation produces a non-finite value or derivative."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


def _unbroadcast_free(x):
    return x[..., None]


def _binary_partials(ufunc, a, b, out):
    if ufunc is np.add:
        return 1.0, 1.0
    if ufunc is np.subtract:
        return 1.0, -1.0
    if ufunc is np.multiply:
        return b, a
    if ufunc is np.true_divide:
        return 1.0 / b, -out / b
    if ufunc is np.arctan2:
        r2 = a * a + b * b
        return b / r2, -a / r2
    if ufunc is np.hypot:
        return a / out, b / out
    if ufunc is np.maximum:
        pick = a >= b
        return pick.astype(float), (~pick).astype(float)
    if ufunc is np.minimum:
        pick = a <= b
        return pick.astype(float), (~pick).astype(float)
    if ufunc is np.power:
        with np.errstate(divide="ignore", invalid="ignore"):
            da = b * np.power(a, b - 1.0)
            db = np.where(a > 0, out * np.log(np.where(a > 0, a, 1.0)), 0.0)
        return da, db
    if ufunc is np.remainder:
        return 1.0, -np.floor(a / b)
    raise NotImplementedError(ufunc.__name__)


def _unary_partial(ufunc, x, out):
    if ufunc is np.negative:
        return -1.0
    if ufunc is np.positive:
        return 1.0
    if ufunc is np.sin:
        return np.cos(x)
    if ufunc is np.cos:
        return -np.sin(x)
    if ufunc is np.tan:
        return 1.0 + out * out
    if ufunc is np.arctan:
        return 1.0 / (1.0 + x * x)
    if ufunc is np.tanh:
        return 1.0 - out * out
    if ufunc is np.arcsin:
        return 1.0 / np.sqrt(1.0 - x * x)
    if ufunc is np.sqrt:
        # sqrt(0) only arises behind a clamp at zero; take the one-sided slope 0
        with np.errstate(divide="ignore"):
            return np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), 0.0)
    if ufunc is np.absolute:
        return np.sign(x)
    if ufunc is np.square:
        return 2.0 * x
    if ufunc is np.exp:
        return out
    if ufunc is np.log:
        return 1.0 / x
    if ufunc is np.reciprocal:
        return -out * out
    raise NotImplementedError(ufunc.__name__)


_PIECEWISE_CONSTANT = {np.floor, np.ceil, np.rint, np.sign, np.trunc}
_PREDICATES = {
    np.less, np.less_equal, np.greater, np.greater_equal, np.equal, np.not_equal,
    np.isfinite, np.isnan, np.isinf, np.signbit,
}


class Dual(NDArrayOperatorsMixin):
    """Array of values with forward-mode tangents on a trailing parameter axis."""

    __slots__ = ("val", "grad")

    def __init__(self, val, grad):
        self.val = np.asarray(val, dtype=float)
        self.grad = np.asarray(grad, dtype=float)
        if self.grad.shape[:-1] != self.val.shape:
            self.grad = np.broadcast_to(
                self.grad, self.val.shape + self.grad.shape[-1:]
            ).copy()

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    @property
    def nparams(self) -> int:
        return self.grad.shape[-1]

    def __len__(self):
        return len(self.val)

    def __repr__(self):
        return f"Dual(val={self.val!r}, grad={self.grad!r})"

    def __float__(self):
        return float(self.val)

    def __getitem__(self, idx):
        gidx = idx
        if isinstance(idx, tuple) and any(i is Ellipsis for i in idx):
            gidx = idx + (slice(None),)
        elif idx is Ellipsis:
            gidx = (Ellipsis, slice(None))
        return Dual(self.val[idx], self.grad[gidx])

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs.get("out") is not None:
            return NotImplemented
        vals = [x.val if isinstance(x, Dual) else np.asarray(x) for x in inputs]
        out = ufunc(*vals, **kwargs)
        if ufunc in _PREDICATES:
            return out
        nparams = next(x.nparams for x in inputs if isinstance(x, Dual))
        if ufunc in _PIECEWISE_CONSTANT:
            return Dual(out, np.zeros(np.shape(out) + (nparams,)))
        if len(inputs) == 1:
            (x,) = inputs
            d = _unary_partial(ufunc, vals[0], out)
            return _poisoned(out, x.grad * _unbroadcast_free(np.asarray(d, dtype=float)), vals)
        a, b = inputs
        with np.errstate(divide="ignore", invalid="ignore"):
            da, db = _binary_partials(ufunc, vals[0], vals[1], out)
        grad = np.zeros(np.shape(out) + (nparams,))
        if isinstance(a, Dual):
            grad = grad + a.grad * _unbroadcast_free(np.asarray(da, dtype=float))
        if isinstance(b, Dual):
            grad = grad + b.grad * _unbroadcast_free(np.asarray(db, dtype=float))
        return _poisoned(out, grad, vals)

    def sum(self, axis=None):
        return dsum(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        new = np.reshape(self.val, shape)
        return Dual(new, self.grad.reshape(new.shape + (self.nparams,)))


def _poisoned(out, grad, inputs) -> "Dual":
    """Mark tangents as NaN where this operation turned finite inputs into a non-finite value.

    Only the parameters the offending entry depends on are marked, so the
    first NaN derivative names the parameter that left the function's domain.
    """
    bad = ~np.isfinite(out)
    if np.any(bad):
        for v in inputs:
            bad &= np.broadcast_to(np.isfinite(v), np.shape(out))
    if np.any(bad):
        grad = np.array(grad, dtype=float)
        g = grad[bad]
        grad[bad] = np.where(g != 0.0, np.nan, g)
    return Dual(out, grad)


def value(x):
    """Strip derivative information."""
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def is_dual(x) -> bool:
    return isinstance(x, Dual)


def nparams_of(*xs) -> int | None:
    for x in xs:
        if isinstance(x, Dual):
            return x.nparams
    return None


def variables(values) -> Dual:
    """Seed a parameter vector: ``grad`` is the identity."""
    values = np.asarray(values, dtype=float).ravel()
    return Dual(values, np.eye(values.size))


def constant(x, nparams: int) -> Dual:
    x = np.asarray(x, dtype=float)
    return Dual(x, np.zeros(x.shape + (nparams,)))


def promote(x, nparams: int | None):
    if nparams is None or isinstance(x, Dual):
        return x
    return constant(x, nparams)


def dsum(x, axis=None):
    if not isinstance(x, Dual):
        return np.sum(x, axis=axis)
    if axis is None:
        return Dual(x.val.sum(), x.grad.reshape(-1, x.nparams).sum(axis=0))
    axes = (axis,) if np.isscalar(axis) else tuple(axis)
    axes = tuple(a % x.val.ndim for a in axes)
    return Dual(x.val.sum(axis=axes), x.grad.sum(axis=axes))


def where(cond, a, b):
    """Elementwise select; derivatives follow the selected branch."""
    n = nparams_of(a, b)
    if n is None:
        return np.where(cond, a, b)
    a, b = promote(a, n), promote(b, n)
    cond = np.asarray(cond)
    return Dual(np.where(cond, a.val, b.val), np.where(cond[..., None], a.grad, b.grad))


def concatenate(parts: Sequence, axis: int = 0):
    n = nparams_of(*parts)
    if n is None:
        return np.concatenate([np.asarray(p, dtype=float) for p in parts], axis=axis)
    parts = [promote(p, n) for p in parts]
    ax = axis % parts[0].val.ndim
    return Dual(
        np.concatenate([p.val for p in parts], axis=ax),
        np.concatenate([p.grad for p in parts], axis=ax),
    )


def stack(parts: Sequence, axis: int = 0):
    n = nparams_of(*parts)
    if n is None:
        return np.stack([np.asarray(p, dtype=float) for p in parts], axis=axis)
    parts = [promote(p, n) for p in parts]
    shape = np.broadcast_shapes(*(p.val.shape for p in parts))
    vals = [np.broadcast_to(p.val, shape) for p in parts]
    grads = [np.broadcast_to(p.grad, shape + (n,)) for p in parts]
    ax = axis % (len(shape) + 1)
    return Dual(np.stack(vals, axis=ax), np.stack(grads, axis=ax))


def broadcast_to(x, shape):
    if not isinstance(x, Dual):
        return np.broadcast_to(x, shape)
    return Dual(np.broadcast_to(x.val, shape), np.broadcast_to(x.grad, tuple(shape) + (x.nparams,)))


def _bucket_sum(x: np.ndarray, ids: np.ndarray, n: int) -> np.ndarray:
    flat = x.reshape(len(ids), -1)
    m = sparse.csr_matrix((np.ones(len(ids)), (ids, np.arange(len(ids)))), shape=(n, len(ids)))
    return np.asarray(m @ flat).reshape((n,) + x.shape[1:])


def segment_sum(x, ids, n: int):
    """Sum rows of ``x`` into ``n`` buckets given by integer ``ids`` (axis 0)."""
    ids = np.asarray(ids, dtype=np.intp)
    if not isinstance(x, Dual):
        return _bucket_sum(np.asarray(x, dtype=float), ids, n)
    return Dual(_bucket_sum(x.val, ids, n), _bucket_sum(x.grad, ids, n))


def gradient(f: Callable, at) -> np.ndarray:
    """Derivative of scalar ``f`` with respect to every entry of ``at``.

    ``f`` receives a seeded :class:`Dual` vector.  Branches inside ``f`` are
    decided on values only, so the result is the derivative of the smooth
    piece containing ``at``.
    """
    at = np.asarray(at, dtype=float).ravel()
    out = f(variables(at))
    if not isinstance(out, Dual):
        return np.zeros(at.size)
    if out.val.size != 1:
        raise ValueError("gradient() needs a scalar-valued function")
    grad = out.grad.reshape(-1)
    bad = np.flatnonzero(~np.isfinite(grad))
    if not np.isfinite(out.val):
        index = int(bad[0]) if bad.size else None
        raise GradientError(f"non-finite objective value {float(out.val)}", index)
    if bad.size:
        raise GradientError(f"non-finite derivative for parameter {bad[0]}", int(bad[0]))
    return grad.copy()


def central_difference(f: Callable, at, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of a float-valued ``f`` (reference for AD checks)."""
    at = np.asarray(at, dtype=float).ravel()
    out = np.empty(at.size)
    for k in range(at.size):
        hi, lo = at.copy(), at.copy()
        hi[k] += step
        lo[k] -= step
        out[k] = (float(value(f(hi))) - float(value(f(lo)))) / (2.0 * step)
    return out


# -- vectors (last axis of length 3) ------------------------------------------


def vec3(x, y, z):
    return stack([x, y, z], axis=-1)


def dot(a, b):
    return dsum(a * b, axis=-1)


def cross(a, b):
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def norm(a):
    return np.sqrt(dot(a, a))


def normalize(a):
    return a / norm(a)[..., None]


# -- rigid transforms ---------------------------------------------------------


def wrap_angle(a):
    """Wrap radians to (-pi, pi]."""
    return np.pi - np.remainder(np.pi - a, TWO_PI)


@dataclass(frozen=True)
class PoseSE2:
    """Planar pose; components may be floats or :class:`Dual` scalars."""

    x: object = 0.0
    y: object = 0.0
    yaw: object = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))
        if not isinstance(self.yaw, Dual):
            object.__setattr__(self, "yaw", float(self.yaw))

    @classmethod
    def from_degrees(cls, x, y, yaw_deg):
        return cls(x, y, np.deg2rad(yaw_deg))

    def as_array(self) -> np.ndarray:
        return np.array([float(value(self.x)), float(value(self.y)), float(value(self.yaw))])

    def values(self) -> "PoseSE2":
        return PoseSE2(*self.as_array())

    def compose(self, other: "PoseSE2") -> "PoseSE2":
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return PoseSE2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.yaw + other.yaw,
        )

    def inverse(self) -> "PoseSE2":
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return PoseSE2(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.yaw)

    def transform_points(self, pts):
        """Apply to ``(..., 2)`` planar points."""
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        px, py = pts[..., 0], pts[..., 1]
        return stack([c * px - s * py + self.x, s * px + c * py + self.y], axis=-1)


def se2_error(a: PoseSE2, b: PoseSE2) -> float:
    """Planar pose distance; meters and radians weighted equally."""
    a, b = a.as_array(), b.as_array()
    dyaw = wrap_angle(a[2] - b[2])
    return float(np.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + dyaw**2))


class Transform3:
    """Rotation + translation in 3D, generic over ``Dual`` entries."""

    def __init__(self, rotation, translation):
        self.rotation = rotation
        self.translation = translation

    @classmethod
    def identity(cls) -> "Transform3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_pose(cls, pose: PoseSE2, z: float = 0.0) -> "Transform3":
        c, s = np.cos(pose.yaw), np.sin(pose.yaw)
        zero = c * 0.0
        one = zero + 1.0
        rot = stack(
            [stack([c, -s, zero]), stack([s, c, zero]), stack([zero, zero, one])]
        )
        return cls(rot, stack([pose.x + zero, pose.y + zero, zero + z]))

    def apply(self, points):
        """Transform ``(..., 3)`` points."""
        return self.rotate(points) + self.translation

    def rotate(self, vectors):
        return dsum(self.rotation * vectors[..., None, :], axis=-1)

    def compose(self, other: "Transform3") -> "Transform3":
        rot = dsum(self.rotation[:, :, None] * other.rotation[None, :, :], axis=1)
        return Transform3(rot, self.apply(other.translation))

    def inverse(self) -> "Transform3":
        rt = np.swapaxes(value(self.rotation), 0, 1)
        if isinstance(self.rotation, Dual):
            rt = Dual(np.swapaxes(self.rotation.val, 0, 1), np.swapaxes(self.rotation.grad, 0, 1))
        inv = Transform3(rt, np.zeros(3))
        return Transform3(rt, -inv.rotate(self.translation))

    def is_rigid(self, tol: float = 1e-9) -> bool:
        r = value(self.rotation)
        return bool(
            np.allclose(r @ r.T, np.eye(3), atol=tol) and abs(np.linalg.det(r) - 1.0) <= tol
        )

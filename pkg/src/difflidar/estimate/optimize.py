"""Limited-memory BFGS with a strong-Wolfe line search."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import line_search

from .params import ParameterVector


@dataclass(frozen=True)
class OptimizeConfig:
    c1: float = 1e-4
    c2: float = 0.9
    grad_tol: float = 1e-8
    rel_tol: float = 1e-10
    step_tol: float = 1e-7  # stop once an accepted step moves x by less than this (internal units)
    max_iter: int = 200
    memory: int = 10
    line_search_iter: int = 20
    initial_step: float = 0.1  # length of the first trial step along steepest descent


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    grad_norm: float
    step: float
    params: np.ndarray
    extra: dict = field(default_factory=dict)


@dataclass
class OptimizationTrace:
    records: list = field(default_factory=list)
    names: list = field(default_factory=list)
    reason: str = ""
    line_search_failed: bool = False
    evaluations: int = 0
    backtracking_steps: int = 0  # iterations accepted by the Armijo fallback

    @property
    def iterations(self) -> int:
        return self.records[-1].iteration if self.records else 0

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def converged(self) -> bool:
        return self.reason in ("gradient", "loss-change", "step-size", "zero-loss")

    def to_csv(self) -> str:
        n = len(self.records[0].params) if self.records else 0
        header = ["iter", "loss", "grad_norm"] + [f"param_{k + 1}" for k in range(n)]
        lines = [",".join(header)]
        for r in self.records:
            vals = [str(r.iteration), repr(float(r.loss)), repr(float(r.grad_norm))]
            vals += [repr(float(v)) for v in r.params]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


class _Cached:
    """Evaluate loss and gradient together, once per point."""

    def __init__(self, fun):
        self.fun = fun
        self.x = None
        self.f = None
        self.g = None
        self.count = 0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.x is None or not np.array_equal(x, self.x):
            f, g = self.fun(x)
            self.count += 1
            self.x, self.f, self.g = x.copy(), float(f), np.asarray(g, dtype=float)
        return self.f, self.g

    def f_only(self, x):
        return self(x)[0]

    def g_only(self, x):
        return self(x)[1]


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / np.dot(y, s)
        a = rho * np.dot(s, q)
        q -= a * y
        alphas.append((rho, a))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def minimize(fun: Callable, init, config: OptimizeConfig = OptimizeConfig(),
             callback: Callable | None = None):
    """Minimize ``fun(x) -> (loss, gradient)`` starting from ``init``.

    ``init`` is an array or a :class:`ParameterVector` (optimized in its
    internal coordinates).  Returns the best point seen, in the same type as
    ``init``, and the iteration trace.
    """
    pv = init if isinstance(init, ParameterVector) else None
    x = pv.internal() if pv is not None else np.asarray(init, dtype=float).copy()
    ev = _Cached(fun)
    f, g = ev(x)
    if not np.isfinite(f):
        raise FloatingPointError("loss is not finite at the initial point")
    trace = OptimizationTrace(names=pv.names if pv is not None else [])

    def record(it, f, g, step, x):
        rec = IterationRecord(it, f, float(np.linalg.norm(g)), step, x.copy())
        if callback is not None:
            rec.extra = callback(x) or {}
        trace.records.append(rec)

    record(0, f, g, 0.0, x)
    best_x, best_f = x.copy(), f
    s_hist, y_hist = [], []
    # seeds the line search's first trial at about ``initial_step`` from x
    old_old_f = f + config.initial_step * np.linalg.norm(g) / 2.0
    it = 0
    while True:
        if f == 0.0:
            trace.reason = "zero-loss"
            break
        if np.linalg.norm(g) < config.grad_tol:
            trace.reason = "gradient"
            break
        if it >= config.max_iter:
            trace.reason = "max-iterations"
            break
        p = _two_loop(g, s_hist, y_hist)
        if np.dot(p, g) >= 0:
            s_hist.clear()
            y_hist.clear()
            p = -g
        alpha, strong = _search(ev, x, p, g, f, old_old_f, config)
        if alpha is None and s_hist:
            # drop curvature memory and retry along steepest descent
            s_hist.clear()
            y_hist.clear()
            p = -g
            alpha, strong = _search(ev, x, p, g, f, f + config.initial_step * np.linalg.norm(g) / 2.0, config)
        if alpha is None:
            trace.reason = "line-search"
            trace.line_search_failed = True
            break
        trace.backtracking_steps += 0 if strong else 1
        x_new = x + alpha * p
        f_new, g_new = ev(x_new)
        it += 1
        s, y = x_new - x, g_new - g
        if np.dot(s, y) > 1e-12 * np.dot(y, y):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > config.memory:
                s_hist.pop(0)
                y_hist.pop(0)
        old_old_f, f_prev = f, f
        x, f, g = x_new, f_new, g_new
        record(it, f, g, float(alpha * np.linalg.norm(p)), x)
        if f < best_f:
            best_x, best_f = x.copy(), f
        if abs(f_prev - f) <= config.rel_tol * max(abs(f_prev), np.finfo(float).tiny):
            trace.reason = "loss-change"
            break
        # stalled against a kink of the loss: the gradient stays large but steps vanish
        if np.linalg.norm(s) <= config.step_tol * (1.0 + np.linalg.norm(x)):
            trace.reason = "step-size"
            break
    trace.evaluations = ev.count
    if pv is not None:
        return pv.from_internal(best_x), trace
    return best_x, trace


def _search(ev, x, p, g, f, old_old_f, config):
    """Step length along ``p``: strong Wolfe first, Armijo backtracking as a fallback.

    Returns ``(alpha, strong)``, ``alpha`` being None on failure.
    """
    slope = float(np.dot(g, p))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with np.errstate(all="ignore"):
            alpha, *_rest = line_search(
                ev.f_only, ev.g_only, x, p, gfk=g, old_fval=f, old_old_fval=old_old_f,
                c1=config.c1, c2=config.c2, maxiter=config.line_search_iter,
            )
    if alpha is not None and np.isfinite(alpha) and alpha > 0:
        f_new = ev.f_only(x + alpha * p)
        if np.isfinite(f_new) and f_new <= f + config.c1 * alpha * slope:
            return float(alpha), True
    # piecewise-smooth losses can defeat the curvature condition; settle for sufficient decrease
    alpha = min(1.0, 1.01 * 2.0 * (f - old_old_f) / slope) if slope < 0 else 1.0
    alpha = alpha if alpha > 0 else 1.0
    for _ in range(config.line_search_iter * 2):
        f_new = ev.f_only(x + alpha * p)
        if np.isfinite(f_new) and f_new <= f + config.c1 * alpha * slope and f_new < f:
            return float(alpha), False
        alpha *= 0.5
    return None, False

"""Trajectories of rigid-motion vector fields and boundary invariance checks.

A rigid motion tangential to a boundary piece moves points of that piece
along the piece. The integrator here follows ``x' = r(x)`` with fixed-step
RK4; the closed-form solution serves as its oracle; signed distances to an
analytic boundary measure how far a trajectory drifts off the surface.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import NumericalError, ValidationError
from .geometry import AnalyticBoundary
from .rigid import RigidMotion

DEFAULT_TOL = 1e-8


@dataclass
class FlowTrace:
    """Sampled trajectory with optional deviation and closure statistics."""

    times: np.ndarray
    points: np.ndarray
    max_deviation: Optional[float] = None
    closure_error: Optional[float] = None
    signed_distances: Optional[np.ndarray] = None

    @property
    def endpoint(self) -> np.ndarray:
        return self.points[-1]


@dataclass(frozen=True)
class InvarianceReport:
    max_deviation: float
    time_of_max: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tol


def _orthonormal_frame(sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit ``s1, s2`` with ``(s1, s2, sigma)`` right-handed and orthonormal."""
    k = int(np.argmin(np.abs(sigma)))
    e = np.zeros(3)
    e[k] = 1.0
    s1 = e - (e @ sigma) * sigma
    s1 /= np.linalg.norm(s1)
    return s1, np.cross(sigma, s1)


def analytic_flow(r: RigidMotion, p, t) -> np.ndarray:
    """Closed-form solution of ``x' = r(x)``, ``x(0) = p``.

    In the frame ``(s1, s2, sigma)`` the motion ``r(x) = omega sigma x x + b``
    decouples into a rotation with angular speed ``omega`` about the
    centre ``(-b2/omega, b1/omega)`` of the ``(s1, s2)`` plane and a uniform
    drift ``t <b, sigma>`` along ``sigma``. Planar motions are embedded with
    ``sigma = +-e3``; ``omega = 0`` gives the straight line ``p + t b``.

    Parameters
    ----------
    r : RigidMotion
    p : array_like, shape (N,)
    t : float or array_like
        Time or times.

    Returns
    -------
    numpy.ndarray
        Shape ``(N,)`` for scalar ``t``, otherwise ``(len(t), N)``.
    """
    p = np.asarray(p, dtype=float)
    N = r.dim
    if p.shape != (N,):
        raise ValidationError(f"start point must have {N} coordinates")
    t_arr = np.asarray(t, dtype=float)
    scalar = t_arr.ndim == 0
    t_arr = np.atleast_1d(t_arr)
    if N == 2:
        skew3, b3, p3 = np.array([0.0, 0.0, r.skew[0]]), np.append(r.a, 0.0), np.append(p, 0.0)
    else:
        skew3, b3, p3 = r.skew, r.a, p
    omega = float(np.linalg.norm(skew3))
    if omega == 0.0:
        out = p3 + t_arr[:, None] * b3
    else:
        sigma = skew3 / omega
        s1, s2 = _orthonormal_frame(sigma)
        b1, b2, b_s = b3 @ s1, b3 @ s2, b3 @ sigma
        c1 = p3 @ s1 + b2 / omega
        c2 = p3 @ s2 - b1 / omega
        cos, sin = np.cos(omega * t_arr), np.sin(omega * t_arr)
        u1 = c1 * cos - c2 * sin - b2 / omega
        u2 = c1 * sin + c2 * cos + b1 / omega
        u3 = p3 @ sigma + t_arr * b_s
        out = u1[:, None] * s1 + u2[:, None] * s2 + u3[:, None] * sigma
    out = out[:, :N]
    return out[0] if scalar else out


def integrate_flow(r: Union[RigidMotion, Callable], p, T: float, dt: float,
                   boundary: Optional[AnalyticBoundary] = None) -> FlowTrace:
    """Classical RK4 with ``ceil(T / dt)`` uniform steps ending exactly at ``T``.

    For a :class:`RigidMotion` the closure error against
    :func:`analytic_flow` is filled in; with ``boundary`` the signed
    distance of every sample is recorded.
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise ValidationError(f"time step must be positive, got {dt}")
    if not (T > 0 and math.isfinite(T)):
        raise ValidationError(f"horizon must be positive, got {T}")
    x = np.array(p, dtype=float)
    if isinstance(r, RigidMotion):
        if x.shape != (r.dim,):
            raise ValidationError(f"start point must have {r.dim} coordinates")
        S, a = r.S, r.a
        f = lambda y: S @ y + a  # noqa: E731
    else:
        f = lambda y: np.asarray(r(y), dtype=float)  # noqa: E731
    n = max(1, math.ceil(T / dt - 1e-12))
    h = T / n
    pts = np.empty((n + 1, x.size))
    pts[0] = x
    for i in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        pts[i + 1] = x
    if not np.all(np.isfinite(pts)):
        raise NumericalError("non-finite value while integrating the flow")
    times = np.linspace(0.0, T, n + 1)
    trace = FlowTrace(times, pts)
    if isinstance(r, RigidMotion):
        trace.closure_error = float(np.linalg.norm(pts[-1] - analytic_flow(r, pts[0], T)))
    if boundary is not None:
        rep = invariance_report(trace, boundary)
        trace.max_deviation = rep.max_deviation
    return trace


def invariance_report(trace: FlowTrace, boundary: AnalyticBoundary, tol: float = DEFAULT_TOL) -> InvarianceReport:
    """Largest ``|signed_distance|`` along the trace; passes iff it is ``<= tol``."""
    if trace.points.shape[1] != boundary.dim:
        raise ValidationError(f"trace is {trace.points.shape[1]}D but the boundary is {boundary.dim}D")
    d = np.asarray(boundary.signed_distance(trace.points), dtype=float)
    trace.signed_distances = d
    k = int(np.argmax(np.abs(d)))
    return InvarianceReport(float(abs(d[k])), float(trace.times[k]), tol)


def export_trace_csv(trace: FlowTrace, stream=None) -> str:
    """Columns ``t, x1..xN, signed_distance`` (the last one empty without a boundary)."""
    out = io.StringIO() if stream is None else stream
    N = trace.points.shape[1]
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(N)] + ["signed_distance"])
    d = trace.signed_distances
    for i, (t, x) in enumerate(zip(trace.times, trace.points)):
        sd = "" if d is None else format(d[i], ".17g")
        w.writerow([format(t, ".17g")] + [format(c, ".17g") for c in x] + [sd])
    return out.getvalue() if stream is None else ""

"""Checks of the second-derivative identity behind Korn's second inequality.

Every second derivative of a vector field is a signed combination of first
derivatives of its symmetric gradient ``E = sym grad v``::

    d_i d_j v_k = d_i E_jk + d_j E_ik - d_k E_ij

The identity is algebraic, so polynomial fields verify it to rounding, and
finite differences verify it to the truncation order of the stencil.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import ValidationError

MAX_DEGREE = 6


@dataclass(frozen=True)
class PolyField:
    """Polynomial vector field with dense power-basis coefficient tables.

    ``coeffs[k][a1, ..., aN]`` multiplies ``x1**a1 * ... * xN**aN`` in
    component ``k``; the table has shape ``(N,) + (degree + 1,) * N``.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        N = c.shape[0] if c.ndim else 0
        if N not in (2, 3) or c.ndim != N + 1 or len(set(c.shape[1:])) != 1:
            raise ValidationError(f"coefficient table of shape {c.shape} is not a 2D/3D vector field")
        if c.shape[1] - 1 > MAX_DEGREE:
            raise ValidationError(f"degree {c.shape[1] - 1} exceeds the cap {MAX_DEGREE}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    @classmethod
    def from_terms(cls, N: int, degree: int, terms) -> "PolyField":
        """Build from ``{(component, exponent_tuple): coefficient}``."""
        c = np.zeros((N,) + (degree + 1,) * N)
        for (k, alpha), value in dict(terms).items():
            c[(k,) + tuple(alpha)] = value
        return cls(c)

    @classmethod
    def random(cls, N: int, degree: int, rng: np.random.Generator) -> "PolyField":
        """Standard-normal coefficients on all monomials of total degree <= ``degree``."""
        shape = (degree + 1,) * N
        mask = np.indices(shape).sum(axis=0) <= degree
        return cls(rng.standard_normal((N,) + shape) * mask)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValidationError(f"points must have {self.dim} coordinates")
        ev = P.polyval2d if self.dim == 2 else P.polyval3d
        return np.stack([ev(*np.moveaxis(x, -1, 0), ck) for ck in self.coeffs], axis=-1)


def _d(c: np.ndarray, axis: int) -> np.ndarray:
    """Partial derivative of one coefficient table, keeping its shape."""
    d = P.polyder(c, axis=axis)
    pad = [(0, 0)] * c.ndim
    pad[axis] = (0, c.shape[axis] - d.shape[axis])
    return np.pad(d, pad)


def _sym_grad(c: np.ndarray) -> list:
    N = c.shape[0]
    g = [[_d(c[k], j) for k in range(N)] for j in range(N)]  # g[j][k] = d_j v_k
    return [[0.5 * (g[j][k] + g[k][j]) for k in range(N)] for j in range(N)]


def check_identity(field: PolyField) -> float:
    """Maximum coefficient difference between both sides over all ``(i, j, k)``."""
    c, N = field.coeffs, field.dim
    E = _sym_grad(c)
    worst = 0.0
    for i, j, k in product(range(N), repeat=3):
        lhs = _d(_d(c[k], j), i)
        rhs = _d(E[j][k], i) + _d(E[i][k], j) - _d(E[i][j], k)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def laplacian_identity_residual(field: PolyField) -> float:
    """Residual of the contracted form ``lap v = 2 div E - grad div v`` on coefficients."""
    c, N = field.coeffs, field.dim
    E = _sym_grad(c)
    div = sum(_d(c[j], j) for j in range(N))
    worst = 0.0
    for k in range(N):
        lap = sum(_d(_d(c[k], j), j) for j in range(N))
        rhs = 2.0 * sum(_d(E[j][k], j) for j in range(N)) - _d(div, k)
        worst = max(worst, float(np.max(np.abs(lap - rhs))))
    return worst


def sample_grid(N: int, per_axis: int = 5, lo: float = 0.2, hi: float = 0.8) -> np.ndarray:
    """Tensor grid of sample points, shape ``(per_axis**N, N)``."""
    axes = [np.linspace(lo, hi, per_axis)] * N
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, N)


def check_identity_fd(field_evaluator: Callable, h: float, dim: int, points=None) -> float:
    """Finite-difference residual of the identity on a sample grid.

    The left side uses the standard three-point (pure) and four-point
    (mixed) second differences with step ``h``. The right side nests
    central first differences: ``E`` by central differences, then its
    derivative by central differences. Both sides are second-order
    accurate, so the residual decays like ``h**2`` on smooth fields and
    vanishes up to rounding on cubic polynomials.

    Parameters
    ----------
    field_evaluator : callable
        Maps points ``(..., dim)`` to field values ``(..., dim)``.
    h : float
        Positive step.
    dim : int
        Spatial dimension, 2 or 3.
    points : array_like, optional
        Sample points; defaults to :func:`sample_grid`.

    Returns
    -------
    float
        Maximum absolute residual over all points and index triples.
    """
    if not h > 0:
        raise ValidationError(f"step must be positive, got {h}")
    if dim not in (2, 3):
        raise ValidationError(f"dimension must be 2 or 3, got {dim}")
    x = sample_grid(dim) if points is None else np.asarray(points, dtype=float).reshape(-1, dim)
    e = np.eye(dim) * h

    def v(y):
        out = np.asarray(field_evaluator(y), dtype=float)
        if not np.all(np.isfinite(out)):
            raise ValidationError("field evaluator returned non-finite values")
        return out

    def grad(y):  # grad(y)[..., j, k] ~ d_j v_k
        return np.stack([(v(y + e[j]) - v(y - e[j])) / (2 * h) for j in range(dim)], axis=-2)

    def sym(y):
        g = grad(y)
        return 0.5 * (g + np.swapaxes(g, -1, -2))

    dE = np.stack([(sym(x + e[i]) - sym(x - e[i])) / (2 * h) for i in range(dim)], axis=1)  # [p, i, j, k]
    v0 = v(x)
    worst = 0.0
    for i, j in product(range(dim), repeat=2):
        if i == j:
            lhs = (v(x + e[i]) - 2 * v0 + v(x - e[i])) / h**2
        else:
            lhs = (v(x + e[i] + e[j]) - v(x + e[i] - e[j]) - v(x - e[i] + e[j]) + v(x - e[i] - e[j])) / (4 * h**2)
        for k in range(dim):
            rhs = dE[:, i, j, k] + dE[:, j, i, k] - dE[:, k, i, j]
            worst = max(worst, float(np.max(np.abs(lhs[:, k] - rhs))))
    return worst

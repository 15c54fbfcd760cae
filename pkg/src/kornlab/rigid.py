"""Rigid motions, boundary-condition kernels and rotation axes.

A rigid motion is ``r(x) = S x + a`` with ``S`` skew. Gradients follow the
transposed-Jacobian convention, so ``grad r = S^T = -S``.

Coefficient space: a motion is identified with the vector of its
coordinates in :func:`rigid_basis`, i.e. ``N(N-1)/2`` coefficients of ``S``
in the Frobenius-orthonormal :func:`so_basis` followed by the ``N``
components of ``a``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoAxisError, ValidationError
from .geometry import NORMAL, TANGENTIAL, Mesh, tangent_basis, vertex_constraints

DEFAULT_TOL = 1e-8
_SQRT2 = math.sqrt(2.0)


def _check_dim(N: int) -> int:
    if N not in (2, 3):
        raise ValidationError(f"unsupported dimension N={N}; expected 2 or 3")
    return N


def n_skew(N: int) -> int:
    return N * (N - 1) // 2


def hat(w, N: int) -> np.ndarray:
    """Skew matrix from its independent entries.

    In 2D ``w = (s,)`` gives ``[[0, -s], [s, 0]]``; in 3D ``hat(w) x = w x x``.
    """
    w = np.asarray(w, float).reshape(-1)
    if N == 2:
        return np.array([[0.0, -w[0]], [w[0], 0.0]])
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def axial(S: np.ndarray) -> np.ndarray:
    """Inverse of :func:`hat` (uses the skew part of ``S``)."""
    S = np.asarray(S, float)
    K = 0.5 * (S - S.T)
    if S.shape == (2, 2):
        return np.array([K[1, 0]])
    return np.array([K[2, 1], K[0, 2], K[1, 0]])


def so_basis(N: int) -> list[np.ndarray]:
    """Frobenius-orthonormal basis of the skew-symmetric N x N matrices."""
    _check_dim(N)
    return [hat(e, N) / _SQRT2 for e in np.eye(n_skew(N))]


@dataclass(frozen=True, eq=False)
class RigidMotion:
    """Affine field ``x -> S x + a``.

    ``skew`` holds the independent entries of ``S`` (see :func:`hat`), so
    ``S`` is skew by construction.
    """

    skew: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float).reshape(-1)
        N = _check_dim(a.size)
        skew = np.array(self.skew, dtype=float).reshape(-1)
        if skew.size != n_skew(N):
            raise ValidationError(f"{N}D rigid motion needs {n_skew(N)} skew entries, got {skew.size}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "skew", skew)

    @classmethod
    def from_matrix(cls, S, a) -> "RigidMotion":
        S = np.asarray(S, float)
        if not np.allclose(S, -S.T, atol=1e-14 * (1 + np.abs(S).max())):
            raise ValidationError("S is not skew-symmetric")
        return cls(axial(S), a)

    @classmethod
    def from_axis_form(cls, omega: float, sigma, b) -> "RigidMotion":
        """``r(x) = omega * sigma x x + b`` (3D)."""
        sigma = np.asarray(sigma, float)
        return cls(omega * sigma, b)

    @classmethod
    def rotation_about(cls, sigma, point) -> "RigidMotion":
        """``r(x) = sigma x (x - point)`` (3D)."""
        sigma, point = np.asarray(sigma, float), np.asarray(point, float)
        return cls(sigma, -np.cross(sigma, point))

    @classmethod
    def from_coefficients(cls, c) -> "RigidMotion":
        c = np.asarray(c, float).reshape(-1)
        N = {3: 2, 6: 3}.get(c.size)
        if N is None:
            raise ValidationError(f"coefficient vector of length {c.size} is not a rigid motion")
        k = n_skew(N)
        return cls(c[:k] / _SQRT2, c[k:])

    @property
    def dim(self) -> int:
        return self.a.size

    @property
    def S(self) -> np.ndarray:
        return hat(self.skew, self.dim)

    @property
    def gradient(self) -> np.ndarray:
        """``grad r`` in the transposed-Jacobian convention (``= -S``)."""
        return self.S.T

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate([_SQRT2 * self.skew, self.a])

    @property
    def is_constant(self) -> bool:
        return not np.any(self.skew)

    @property
    def omega(self) -> float:
        """Angular speed ``|axial(S)|`` (3D)."""
        return float(np.linalg.norm(self.skew))

    @property
    def sigma(self) -> np.ndarray:
        return self.skew / np.linalg.norm(self.skew)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return x @ self.S.T + self.a

    def __eq__(self, other):
        if not isinstance(other, RigidMotion):
            return NotImplemented
        return np.array_equal(self.skew, other.skew) and np.array_equal(self.a, other.a)

    __hash__ = None

    def __repr__(self):
        return f"RigidMotion(skew={self.skew.tolist()}, a={self.a.tolist()})"


def rigid_basis(N: int) -> list[RigidMotion]:
    """Rotations (unit-Frobenius ``S``) followed by unit translations."""
    _check_dim(N)
    d = n_skew(N) + N
    return [RigidMotion.from_coefficients(e) for e in np.eye(d)]


def rigid_fields(x: np.ndarray) -> np.ndarray:
    """Values of all :func:`rigid_basis` motions at points ``x``: shape ``(..., N, d)``."""
    x = np.asarray(x, float)
    N = x.shape[-1]
    cols = [r(x) for r in rigid_basis(N)]
    return np.stack(cols, axis=-1)


def skw_mean(mesh: Mesh, gradient_field) -> np.ndarray:
    """Volume-weighted mean of the skew part of a cellwise-constant gradient.

    ``gradient_field`` has one N x N matrix per cell (transposed Jacobian of
    a P1 field). Exact for P1 fields.
    """
    G = np.asarray(gradient_field, float)
    if G.shape != (len(mesh.cells), mesh.dim, mesh.dim):
        raise ValidationError(
            f"expected one {mesh.dim}x{mesh.dim} matrix per cell ({len(mesh.cells)}), got shape {G.shape}"
        )
    vol = mesh.signed_volumes
    skw = 0.5 * (G - G.transpose(0, 2, 1))
    return np.einsum("c,cij->ij", vol, skw) / vol.sum()


@dataclass
class KernelReport:
    """Rigid motions compatible with the boundary labels.

    ``basis`` spans the admissible rigid motions; ``gradient_basis`` holds a
    Frobenius-orthonormal basis of their (nonzero) gradients, i.e. of the
    kernel K. ``constants`` is an orthonormal basis of admissible constant
    fields, reported separately because constants matter for Poincare but
    not for Korn.
    """

    basis: list
    gradient_basis: list
    singular_values: np.ndarray
    tolerance: float
    constants: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def dim(self) -> int:
        return len(self.gradient_basis)

    @property
    def motion_dim(self) -> int:
        return len(self.basis)


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flip so the largest entry is positive; zero out rounding noise."""
    v = np.where(np.abs(v) <= 1e-13 * np.abs(v).max(), 0.0, v)
    k = int(np.argmax(np.abs(v)))
    return v if v[k] >= 0 else -v


def _null_rows(C: np.ndarray, d: int, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Right singular vectors of C with singular value <= tol * max (or tol if C = 0)."""
    if C.shape[0] == 0:
        return np.eye(d), np.zeros(d)
    _, s, vt = np.linalg.svd(C, full_matrices=True)
    s_full = np.zeros(d)
    s_full[: s.size] = s
    scale = s[0] if s.size and s[0] > 0 else 1.0
    keep = s_full <= tol * scale
    return vt[keep], s_full


def boundary_rows(mesh: Mesh, columns) -> np.ndarray:
    """Boundary-condition rows acting on per-vertex linear parametrizations.

    ``columns(x)`` maps points ``(k, N)`` to ``(k, N, d)``: the field value at
    ``x`` as a linear function of ``d`` parameters. On tangential facets the
    tangential components are constrained, on normal facets the normal one;
    each row is weighted by the square root of the vertex share of the facet
    measure.
    """
    vc = vertex_constraints(mesh)
    phi = columns(mesh.vertices[vc.vertex])
    rows = []
    t = vc.label == TANGENTIAL
    if np.any(t):
        tang = tangent_basis(vc.normal[t])
        r = np.einsum("k,kmi,kid->kmd", vc.weight[t], tang, phi[t])
        rows.append(r.reshape(-1, phi.shape[-1]))
    nn = vc.label == NORMAL
    if np.any(nn):
        rows.append(np.einsum("k,ki,kid->kd", vc.weight[nn], vc.normal[nn], phi[nn]))
    if not rows:
        return np.zeros((0, phi.shape[-1]))
    return np.concatenate(rows)


def compute_kernel_K(mesh: Mesh, tol: float = DEFAULT_TOL) -> KernelReport:
    """Admissible rigid motions and the kernel K of the labeled mesh.

    Returns the motions whose boundary-constraint violation is within
    ``tol`` relative to the largest singular value of the constraint matrix.
    """
    if not tol > 0:
        raise ValidationError(f"tolerance must be positive, got {tol}")
    N = mesh.dim
    d = n_skew(N) + N
    C = boundary_rows(mesh, rigid_fields)
    null, s = _null_rows(C, d, tol)
    basis = [RigidMotion.from_coefficients(_canonical_sign(v)) for v in null]

    grads = []
    k = n_skew(N)
    if len(null):
        _, gs, gvt = np.linalg.svd(null[:, :k], full_matrices=False)
        so = so_basis(N)
        for g, row in zip(gs, gvt):
            if g > 1e-8:
                row = _canonical_sign(row)
                S = sum(c * B for c, B in zip(row, so))
                grads.append(S.T)
    return KernelReport(basis, grads, s, tol, compute_constant_kernel(mesh, tol))


def compute_constant_kernel(mesh: Mesh, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal basis (rows) of constant fields satisfying the boundary labels."""
    if not tol > 0:
        raise ValidationError(f"tolerance must be positive, got {tol}")
    N = mesh.dim
    ident = lambda x: np.broadcast_to(np.eye(N), x.shape[:-1] + (N, N))
    C = boundary_rows(mesh, ident)
    null, _ = _null_rows(C, N, tol)
    return np.array([_canonical_sign(v) for v in null]).reshape(-1, N)


@dataclass(frozen=True)
class Axis:
    direction: np.ndarray
    point: np.ndarray
    valid: bool  # <sigma, b> = 0, i.e. the flow is circular about the axis

    def distance(self, x) -> np.ndarray:
        """Euclidean distance of points to the axis line."""
        rel = np.asarray(x, float) - self.point
        along = rel @ self.direction
        return np.linalg.norm(rel - along[..., None] * self.direction, axis=-1)


def detect_axis(r: RigidMotion) -> Axis:
    """Rotation axis ``{lambda sigma + (1/omega) sigma x b}`` of a 3D motion.

    Writing ``r(x) = omega sigma x x + b`` with unit ``sigma``, the axis
    direction is ``sigma`` and ``(1/omega) sigma x b`` is the point of the
    axis closest to the origin when ``<sigma, b> = 0``.
    """
    if r.dim != 3:
        raise ValidationError(f"axis detection needs a 3D motion, got N={r.dim}")
    omega = r.omega
    if omega <= 1e-14 * (1.0 + np.linalg.norm(r.a)):
        raise NoAxisError("no axis: the rigid motion is a pure translation (omega = 0)")
    sigma = r.skew / omega
    b = r.a
    point = np.cross(sigma, b) / omega
    valid = abs(float(sigma @ b)) <= 1e-10 * (np.linalg.norm(b) + 1.0)
    return Axis(sigma, point, bool(valid))


@dataclass
class FacetVerdict:
    facet: int
    label: str
    passed: bool
    residual: float


@dataclass
class MixedClassification:
    axis: Axis
    facets: list
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(f.passed for f in self.facets)

    def failed(self, label=None) -> list:
        return [f for f in self.facets if not f.passed and (label is None or f.label == label)]


def classify_mixed(mesh: Mesh, r: RigidMotion, tol: float = 1e-9) -> MixedClassification:
    """Check the geometric structure forced by a kernel motion on a mixed-labeled 3D mesh.

    Tangential facets pass when their plane contains the rotation axis;
    normal facets pass when ``r`` is tangential at every facet vertex.
    """
    if mesh.dim != 3:
        raise ValidationError("mixed classification is defined for 3D meshes")
    axis = detect_axis(r)
    vc = vertex_constraints(mesh)
    verdicts = []
    for f, lab in enumerate(mesh.labels):
        if lab == TANGENTIAL:
            n = mesh.facet_normals[f]
            res = max(abs(float(n @ axis.direction)), abs(float(n @ (axis.point - mesh.facet_centroids[f]))))
        else:
            sel = vc.facet == f
            x = mesh.vertices[vc.vertex[sel]]
            rx = r(x)
            res = float(np.max(np.abs(np.einsum("ki,ki->k", vc.normal[sel], rx)) / (np.linalg.norm(rx, axis=1) + tol)))
        verdicts.append(FacetVerdict(f, lab, res <= tol, res))
    return MixedClassification(axis, verdicts, tol)

"""Static linear elasticity on the complement of the rigid motions.

Find ``v`` with ``v`` M-orthogonal to every rigid motion such that
``<sym grad v, sym grad phi> = <f, phi>`` for all test fields ``phi`` in the
same space. No boundary conditions are imposed; the rigid motions are
removed by constraints, and the load is made compatible by an M-orthogonal
projection whose removed part is reported.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import NumericalError, ValidationError
from .fem import ConstraintKind, Forms, assemble, build_constraints, reduce
from .geometry import Mesh
from .rigid import RigidMotion, rigid_fields


@dataclass
class EquilibriumSolution:
    """Displacement and diagnostics of one elastic solve.

    Vectors are flat nodal arrays in the ``N * vertex + component`` layout.
    """

    displacement: np.ndarray
    load: np.ndarray
    energy: float
    residual: float
    removed_rigid: RigidMotion
    dim: int

    @property
    def nodal_displacement(self) -> np.ndarray:
        return self.displacement.reshape(-1, self.dim)


def rigid_projection(mesh: Mesh, u, forms: Optional[Forms] = None) -> RigidMotion:
    """M-orthogonal projection of a nodal field onto the interpolated rigid motions."""
    forms = assemble(mesh) if forms is None else forms
    u = _as_field(mesh, u)
    R = rigid_fields(mesh.vertices).reshape(u.size, -1)
    MR = forms.M @ R
    coef = np.linalg.solve(R.T @ MR, MR.T @ u)
    return RigidMotion.from_coefficients(coef)


def _as_field(mesh: Mesh, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    n = mesh.dim * len(mesh.vertices)
    if u.size != n:
        raise ValidationError(f"nodal field has {u.size} entries, expected {n}")
    u = u.reshape(n)
    if not np.all(np.isfinite(u)):
        raise ValidationError("nodal field contains non-finite values")
    return u


def manufactured_load(mesh: Mesh, w, forms: Optional[Forms] = None) -> np.ndarray:
    """Nodal load ``f = M^-1 A_sym w`` whose equilibrium solution is ``w`` minus its rigid part."""
    forms = assemble(mesh) if forms is None else forms
    w = _as_field(mesh, w)
    return spla.spsolve(forms.M.tocsc(), forms.A_sym @ w)


def solve_equilibrium(mesh: Mesh, f, *, forms: Optional[Forms] = None) -> EquilibriumSolution:
    """Solve the elastic problem for the nodal load ``f``.

    Parameters
    ----------
    mesh : Mesh
        Any valid mesh; boundary labels are ignored.
    f : array_like
        Nodal load of length ``N * n_vertices``; the functional is ``<f, phi> = phi^T M f``.
    forms : Forms, optional
        Pre-assembled forms for ``mesh``.

    Returns
    -------
    EquilibriumSolution
        Displacement M-orthogonal to the rigid motions, the projected load,
        the energy ``|sym grad v|^2``, the relative variational residual and
        the rigid part removed from ``f``.
    """
    forms = assemble(mesh) if forms is None else forms
    f = _as_field(mesh, f)
    r = rigid_projection(mesh, f, forms)
    f_proj = f - r(mesh.vertices).reshape(-1)
    rhs = forms.M @ f_proj
    cs = build_constraints(mesh, {ConstraintKind.ORTHO_RIGID}, forms=forms)
    Z = cs.null_basis
    # A_sym restricted to the rigid complement is SPD; reduce() checks it via
    # the (A_sym, A_sym) pair so a spurious kernel surfaces as an error.
    Ar, _ = reduce(forms, cs, ("A_sym", "A_sym"))
    try:
        y = sla.cho_solve(sla.cho_factor(Ar), Z.T @ rhs)
    except np.linalg.LinAlgError:
        raise NumericalError("reduced elasticity matrix is not positive definite") from None
    v = Z @ y
    Av = forms.A_sym @ v
    scale = np.linalg.norm(rhs)
    res = np.linalg.norm(Av - rhs)
    residual = float(res / scale) if scale > 0 else float(res)
    return EquilibriumSolution(v, f_proj, float(v @ Av), residual, r, mesh.dim)


def export_displacement_csv(mesh: Mesh, sol: EquilibriumSolution, stream=None) -> str:
    """Write ``vertex, x1..xN, u1..uN`` rows as comma-separated text."""
    out = io.StringIO() if stream is None else stream
    N = mesh.dim
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["vertex"] + [f"x{i + 1}" for i in range(N)] + [f"u{i + 1}" for i in range(N)])
    for i, (x, u) in enumerate(zip(mesh.vertices, sol.nodal_displacement)):
        w.writerow([i] + [format(c, ".17g") for c in x] + [format(c, ".17g") for c in u])
    return out.getvalue() if stream is None else ""

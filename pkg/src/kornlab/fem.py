"""P1 vector finite elements, MINI enrichment, constraints and reduction.

Degrees of freedom are node-major: dof ``N * vertex + component``. With
bubbles, the velocity space appends ``N`` bubble dofs per cell after the
vertex dofs (cell-major, same component order).

Cell gradients use the transposed-Jacobian convention
``(grad v)[j, c] = d v_c / d x_j``.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import DenominatorSingularError, EmptyConstrainedSpaceError, MeshError, ValidationError
from .geometry import Mesh
from .rigid import KernelReport, boundary_rows, rigid_fields, so_basis


class ConstraintKind(str, Enum):
    BC_TANGENTIAL = "BC_TANGENTIAL"
    BC_NORMAL = "BC_NORMAL"
    ORTHO_K = "ORTHO_K"
    ORTHO_SO = "ORTHO_SO"
    ORTHO_RIGID = "ORTHO_RIGID"
    ORTHO_CONST = "ORTHO_CONST"


BC = frozenset({ConstraintKind.BC_TANGENTIAL, ConstraintKind.BC_NORMAL})

# null-space rank cutoff, relative to the largest singular value of the rows
NULL_RCOND = 1e-10
# reduced denominators with lambda_min <= SINGULAR_RTOL * lambda_max are rejected
SINGULAR_RTOL = 1e-10


def _simplex_monomial(alpha: Sequence[int], N: int) -> float:
    """Integral of prod(lambda_i ** alpha_i) over a simplex of unit volume."""
    return math.factorial(N) * math.prod(math.factorial(a) for a in alpha) / math.factorial(N + sum(alpha))


def barycentric_gradients(mesh: Mesh) -> np.ndarray:
    """Gradients of the N + 1 barycentric coordinates per cell, shape ``(nc, N + 1, N)``."""
    x = mesh.vertices[mesh.cells]
    jac = (x[:, 1:] - x[:, :1]).transpose(0, 2, 1)
    det = np.linalg.det(jac)
    bad = np.flatnonzero(np.abs(det) <= 1e-14 * np.max(np.abs(det)))
    if bad.size:
        raise MeshError(f"cell {bad[0]} is degenerate (zero volume)")
    inv = np.linalg.inv(jac)  # rows: gradients of lambda_1..lambda_N
    g = np.empty((len(mesh.cells), mesh.dim + 1, mesh.dim))
    g[:, 1:] = inv
    g[:, 0] = -inv.sum(axis=1)
    return g


def cell_dofs(mesh: Mesh) -> np.ndarray:
    N = mesh.dim
    return (N * mesh.cells[:, :, None] + np.arange(N)).reshape(len(mesh.cells), -1)


def _local_gradient_operator(grads: np.ndarray) -> np.ndarray:
    """Per-cell map from local dofs (i, c) to flattened gradient entries (j, c)."""
    nc, k, N = grads.shape
    D = np.zeros((nc, N, N, k, N))
    for c in range(N):
        D[:, :, c, :, c] = grads.transpose(0, 2, 1)
    return D.reshape(nc, N * N, k * N)


def gradient_operator(mesh: Mesh) -> sp.csr_matrix:
    """Sparse map from nodal dofs to stacked cell gradients (``nc * N * N`` rows)."""
    D = _local_gradient_operator(barycentric_gradients(mesh))
    nc, nr, nl = D.shape
    rows = np.repeat(np.arange(nc * nr).reshape(nc, nr, 1), nl, axis=2)
    cols = np.repeat(cell_dofs(mesh)[:, None, :], nr, axis=1)
    return sp.csr_matrix((D.ravel(), (rows.ravel(), cols.ravel())), shape=(nc * nr, mesh.dim * len(mesh.vertices)))


def cell_gradients(mesh: Mesh, u) -> np.ndarray:
    """Cellwise gradients ``(nc, N, N)`` of a nodal field ``u`` (flat or ``(nv, N)``)."""
    u = np.asarray(u, float).reshape(-1)
    return (gradient_operator(mesh) @ u).reshape(len(mesh.cells), mesh.dim, mesh.dim)


def interpolate(mesh: Mesh, func) -> np.ndarray:
    """Nodal (flat, node-major) values of a vector field ``func(points) -> (nv, N)``."""
    return np.asarray(func(mesh.vertices), float).reshape(-1)


def evaluate_p1(mesh: Mesh, u, points) -> np.ndarray:
    """Evaluate a P1 vector field at arbitrary points inside the mesh (brute-force location)."""
    u = np.asarray(u, float).reshape(len(mesh.vertices), mesh.dim)
    points = np.atleast_2d(np.asarray(points, float))
    x = mesh.vertices[mesh.cells]
    jac = (x[:, 1:] - x[:, :1]).transpose(0, 2, 1)
    inv = np.linalg.inv(jac)
    out = np.empty((len(points), mesh.dim))
    for p, pt in enumerate(points):
        xi = np.einsum("cij,cj->ci", inv, pt - x[:, 0])
        lam = np.column_stack([1.0 - xi.sum(axis=1), xi])
        c = int(np.argmax(lam.min(axis=1)))
        if lam[c].min() < -1e-9:
            raise ValidationError(f"point {pt.tolist()} lies outside the mesh")
        out[p] = lam[c] @ u[mesh.cells[c]]
    return out


def _assemble(local: np.ndarray, dofs: np.ndarray, n: int) -> sp.csr_matrix:
    nc, k, _ = local.shape
    rows = np.repeat(dofs[:, :, None], k, axis=2)
    cols = np.repeat(dofs[:, None, :], k, axis=1)
    return sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()


@dataclass(frozen=True)
class Forms:
    """Assembled sparse matrices of one mesh.

    ``M``, ``A_grad``, ``A_sym`` act on P1 vector dofs; ``M_p`` on scalar P1
    pressures. ``A_vel``, ``M_vel`` and ``B_div`` act on the velocity space,
    which is P1 or, with bubbles, P1 plus one vector bubble per cell (MINI).
    """

    M: sp.csr_matrix
    A_grad: sp.csr_matrix
    A_sym: sp.csr_matrix
    M_p: sp.csr_matrix
    B_div: sp.csr_matrix
    A_vel: sp.csr_matrix
    M_vel: sp.csr_matrix
    with_bubbles: bool
    dim: int
    n_vertices: int

    @property
    def n_dofs(self) -> int:
        return self.dim * self.n_vertices

    def energy(self, name: str, u) -> float:
        u = np.asarray(u, float).reshape(-1)
        return float(u @ (getattr(self, name) @ u))


def assemble(mesh: Mesh, with_bubbles: bool = False) -> Forms:
    """Exact P1 (optionally MINI) assembly of mass, gradient, symmetric-gradient and divergence forms."""
    N, nv, nc = mesh.dim, len(mesh.vertices), len(mesh.cells)
    vol = mesh.signed_volumes
    grads = barycentric_gradients(mesh)
    dofs = cell_dofs(mesh)
    n = N * nv

    D = _local_gradient_operator(grads)
    sym = np.zeros((N, N, N, N))
    for j in range(N):
        for c in range(N):
            sym[j, c, j, c] += 0.5
            sym[j, c, c, j] += 0.5
    P = sym.reshape(N * N, N * N)
    A_grad = _assemble(vol[:, None, None] * np.einsum("cgi,cgk->cik", D, D), dofs, n)
    A_sym = _assemble(vol[:, None, None] * np.einsum("cgi,gh,chk->cik", D, P, D), dofs, n)

    scal = np.full((N + 1, N + 1), _simplex_monomial([1, 1], N))
    np.fill_diagonal(scal, _simplex_monomial([2], N))
    M_s = vol[:, None, None] * scal
    M_p = _assemble(M_s, mesh.cells, nv)
    M = _assemble(np.einsum("cik,ab->ciakb", M_s, np.eye(N)).reshape(nc, (N + 1) * N, (N + 1) * N), dofs, n)

    # divergence of P1 velocity is constant per cell: div v = sum_i grad(lambda_i) . v_i
    div_local = grads.reshape(nc, -1)  # local (i, c) ordering matches cell_dofs
    B_rows = np.repeat(mesh.cells[:, :, None], (N + 1) * N, axis=2)
    B_cols = np.repeat(dofs[:, None, :], N + 1, axis=1)
    B_vals = (vol / (N + 1))[:, None, None] * div_local[:, None, :] * np.ones((1, N + 1, 1))
    n_vel = n + (N * nc if with_bubbles else 0)
    rows, cols, vals = [B_rows.ravel()], [B_cols.ravel()], [B_vals.ravel()]
    A_vel, M_vel = A_grad, M
    if with_bubbles:
        beta = float((N + 1) ** (N + 1))
        bub_dofs = n + N * np.arange(nc)[:, None] + np.arange(N)
        # int q d_c(b) = -d_c(q) int b for q in P1, b vanishing on the cell boundary
        int_b = beta * _simplex_monomial([1] * (N + 1), N) * vol
        rows.append(np.repeat(mesh.cells, N, axis=1).ravel())
        cols.append(np.tile(bub_dofs, (1, N + 1)).ravel())
        vals.append((-grads * int_b[:, None, None]).ravel())
        # int |grad b|^2: cross terms with P1 functions vanish
        same = _simplex_monomial([0] + [2] * N, N)
        cross = _simplex_monomial([1, 1] + [2] * (N - 1), N)
        gg = np.einsum("cik,cjk->cij", grads, grads)
        w = np.full((N + 1, N + 1), cross)
        np.fill_diagonal(w, same)
        stiff_b = beta**2 * vol * np.einsum("cij,ij->c", gg, w)
        mass_b = beta**2 * vol * _simplex_monomial([2] * (N + 1), N)
        mass_bl = beta * vol * _simplex_monomial([2] + [1] * N, N)
        A_vel = sp.block_diag([A_grad, sp.diags(np.repeat(stiff_b, N))], format="csr")
        mb_rows = [np.arange(n, n_vel)]
        mb_cols = [np.arange(n, n_vel)]
        mb_vals = [np.repeat(mass_b, N)]
        vdofs = dofs.reshape(nc, N + 1, N)
        for i in range(N + 1):
            for c in range(N):
                mb_rows += [bub_dofs[:, c], vdofs[:, i, c]]
                mb_cols += [vdofs[:, i, c], bub_dofs[:, c]]
                mb_vals += [mass_bl, mass_bl]
        M_b = sp.coo_matrix(
            (np.concatenate(mb_vals), (np.concatenate(mb_rows), np.concatenate(mb_cols))), shape=(n_vel, n_vel)
        )
        M_vel = (sp.block_diag([M, sp.csr_matrix((n_vel - n, n_vel - n))]) + M_b).tocsr()
    B_div = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nv, n_vel)
    ).tocsr()
    return Forms(M, A_grad, A_sym, M_p, B_div, A_vel, M_vel, with_bubbles, N, nv)


@dataclass(frozen=True)
class ConstraintSet:
    """Linear constraints on nodal dofs and an orthonormal basis of their joint null space."""

    rows: sp.csr_matrix
    kinds: tuple
    null_basis: np.ndarray

    @property
    def rank(self) -> int:
        return self.rows.shape[1] - self.null_basis.shape[1]

    def count(self, kind: ConstraintKind) -> int:
        return sum(1 for k in self.kinds if k == kind)


def _bc_rows(mesh: Mesh) -> tuple[np.ndarray, list]:
    """Boundary rows acting on all nodal dofs, with their kinds."""
    from .geometry import NORMAL, TANGENTIAL, tangent_basis, vertex_constraints

    N, n = mesh.dim, mesh.dim * len(mesh.vertices)
    vc = vertex_constraints(mesh)
    blocks, kinds = [], []
    for label, kind in ((TANGENTIAL, ConstraintKind.BC_TANGENTIAL), (NORMAL, ConstraintKind.BC_NORMAL)):
        sel = vc.label == label
        if not np.any(sel):
            continue
        vecs = tangent_basis(vc.normal[sel]) if label == TANGENTIAL else vc.normal[sel][:, None, :]
        vecs = vc.weight[sel][:, None, None] * vecs
        k, m, _ = vecs.shape
        R = np.zeros((k, m, n))
        cols = N * vc.vertex[sel][:, None] + np.arange(N)
        for a in range(m):
            np.put_along_axis(R[:, a, :], cols, vecs[:, a, :], axis=1)
        blocks.append(R.reshape(k * m, n))
        kinds += [kind] * (k * m)
    if not blocks:
        return np.zeros((0, n)), []
    return np.concatenate(blocks), kinds


def build_constraints(
    mesh: Mesh,
    which: Iterable,
    *,
    kernel: Optional[KernelReport] = None,
    constants=None,
    forms: Optional[Forms] = None,
) -> ConstraintSet:
    """Assemble constraint rows and the orthonormal null-space basis.

    ``which`` selects among :class:`ConstraintKind` (either BC kind enables
    all boundary rows). ``ORTHO_K`` needs ``kernel``; ``ORTHO_CONST`` uses
    ``constants`` (rows are constant vectors) or, if omitted, all of R^N.
    """
    which = {ConstraintKind(w) for w in which}
    N, n = mesh.dim, mesh.dim * len(mesh.vertices)
    if forms is None:
        forms = assemble(mesh)
    blocks, kinds = [], []
    if which & BC:
        R, k = _bc_rows(mesh)
        blocks.append(R)
        kinds += k
    G = None
    if ConstraintKind.ORTHO_K in which:
        if kernel is None:
            raise ValidationError("ORTHO_K constraints need kernel data")
        mats = list(kernel.gradient_basis)
        if any(np.shape(T) != (N, N) for T in mats):
            raise ValidationError(f"kernel gradients must be {N}x{N} matrices")
        G = gradient_operator(mesh)
        blocks.append(_integrated_gradient_rows(mesh, G, mats))
        kinds += [ConstraintKind.ORTHO_K] * len(mats)
    if ConstraintKind.ORTHO_SO in which:
        G = gradient_operator(mesh) if G is None else G
        mats = so_basis(N)
        blocks.append(_integrated_gradient_rows(mesh, G, mats))
        kinds += [ConstraintKind.ORTHO_SO] * len(mats)
    if ConstraintKind.ORTHO_RIGID in which:
        R = rigid_fields(mesh.vertices).reshape(n, -1)
        blocks.append((forms.M @ R).T)
        kinds += [ConstraintKind.ORTHO_RIGID] * R.shape[1]
    if ConstraintKind.ORTHO_CONST in which:
        C = np.eye(N) if constants is None else np.asarray(constants, float).reshape(-1, N)
        if C.size and C.shape[1] != N:
            raise ValidationError(f"constant vectors must have {N} components")
        F = np.tile(C, (1, len(mesh.vertices))).T  # (n, k) nodal constants
        blocks.append((forms.M @ F).T)
        kinds += [ConstraintKind.ORTHO_CONST] * C.shape[0]
    rows = np.concatenate(blocks) if blocks else np.zeros((0, n))
    null = sla.null_space(rows, rcond=NULL_RCOND) if rows.shape[0] else np.eye(n)
    return ConstraintSet(sp.csr_matrix(rows), tuple(kinds), null)


def _integrated_gradient_rows(mesh: Mesh, G: sp.csr_matrix, mats: list) -> np.ndarray:
    """Rows ``u -> int grad(u) : T`` for each constant matrix ``T``."""
    if not mats:
        return np.zeros((0, G.shape[1]))
    vol = mesh.signed_volumes
    W = np.stack([np.einsum("c,jk->cjk", vol, T).ravel() for T in mats], axis=1)
    return (G.T @ W).T


def reduce(forms: Forms, cs: ConstraintSet, which_pair=("A_sym", "A_grad")) -> tuple[np.ndarray, np.ndarray]:
    """Restrict a pencil to the constrained space: ``(Z^T A Z, Z^T B Z)``.

    Raises
    ------
    EmptyConstrainedSpaceError
        if the constraints leave no degrees of freedom.
    DenominatorSingularError
        if ``Z^T B Z`` is not numerically positive definite; a kernel of the
        denominator was not deflated.
    """
    A, B = (getattr(forms, m) if isinstance(m, str) else m for m in which_pair)
    Z = cs.null_basis
    if Z.shape[1] == 0:
        raise EmptyConstrainedSpaceError("empty constrained space: the constraints remove every degree of freedom")
    if A.shape[0] != Z.shape[0] or B.shape[0] != Z.shape[0]:
        raise ValidationError(f"matrix size {A.shape[0]} does not match constraint space size {Z.shape[0]}")
    Ar = Z.T @ (A @ Z)
    Br = Z.T @ (B @ Z)
    Ar = 0.5 * (Ar + Ar.T)
    Br = 0.5 * (Br + Br.T)
    ev = np.linalg.eigvalsh(Br)
    if ev[-1] <= 0 or ev[0] <= SINGULAR_RTOL * ev[-1]:
        raise DenominatorSingularError(
            f"denominator singular on the constrained space (lambda_min/lambda_max = {ev[0] / max(ev[-1], 1e-300):.2e}); "
            "deflate its kernel with additional constraints"
        )
    return Ar, Br


def export_coo(matrix, stream: Optional[io.TextIOBase] = None) -> str:
    """Write a matrix as ``row col value`` lines (17 significant digits)."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    text = "".join(f"{r} {c} {v:.17g}\n" for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]))
    if stream is not None:
        stream.write(text)
    return text

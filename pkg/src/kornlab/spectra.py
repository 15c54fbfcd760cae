"""Generalized symmetric eigensolvers and inequality-constant estimators.

Each estimator restricts a pair of quadratic forms to the subspace the
corresponding inequality lives on and returns the extremal Rayleigh
quotient. Because the discrete spaces are subspaces of the continuous ones,
every discrete constant is a lower bound for the continuous best constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from dataclasses import field as dc_field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError, NumericalError, ValidationError
from .fem import ConstraintKind as CK
from .fem import ConstraintSet, Forms, assemble, build_constraints, reduce
from .geometry import Mesh
from .rigid import DEFAULT_TOL, compute_constant_kernel, compute_kernel_K

SMALLEST = "smallest"
LARGEST = "largest"
RESIDUAL_TOL = 1e-8
ORACLE_MAX_SIZE = 500
DEGENERATE_LAMBDA = 1e-12


@dataclass
class SpectralResult:
    """Extremal eigenpair of a reduced pencil plus the derived constant.

    ``vector`` is in reduced coordinates; ``field`` is the same vector
    lifted to nodal dofs when the pencil came from a mesh.
    """

    lam: float
    vector: np.ndarray
    constant: float
    residual: float
    iterations: int
    field: Optional[np.ndarray] = None
    details: dict = dc_field(default_factory=dict)


def pencil_residual(A: np.ndarray, B: np.ndarray, lam: float, x: np.ndarray) -> float:
    """Normwise relative residual ``|Ax - lam Bx| / ((|A| + |lam| |B|) |x|)``."""
    r = A @ x - lam * (B @ x)
    scale = (np.linalg.norm(A, 2) + abs(lam) * np.linalg.norm(B, 2)) * np.linalg.norm(x)
    return float(np.linalg.norm(r) / scale) if scale > 0 else 0.0


def _check_pencil(A, B):
    A, B = np.asarray(A, float), np.asarray(B, float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape != B.shape:
        raise ValidationError(f"pencil matrices must be square and of equal size, got {A.shape} and {B.shape}")
    if A.shape[0] == 0:
        raise ValidationError("empty pencil")
    return A, B


def extremal_eig(A, B, which: str = SMALLEST, *, method: str = "dense", seed: int = 0,
                 maxiter: int = 500) -> SpectralResult:
    """Eigenpair of ``A x = lam B x`` at one end of the spectrum.

    ``method="dense"`` uses the LAPACK symmetric-definite solver restricted
    to one eigenvalue; ``method="inverse"`` runs shifted block inverse
    iteration with Rayleigh-Ritz and full reorthogonalization from a seeded
    random start. The eigenvector is B-normalized.
    """
    A, B = _check_pencil(A, B)
    if which not in (SMALLEST, LARGEST):
        raise ValidationError(f"which must be {SMALLEST!r} or {LARGEST!r}")
    n = A.shape[0]
    if method == "dense":
        idx = 0 if which == SMALLEST else n - 1
        try:
            w, v = sla.eigh(A, B, subset_by_index=[idx, idx])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"B is not positive definite ({exc}); deflate its kernel") from None
        lam, x, its = float(w[0]), v[:, 0], 1
    elif method == "inverse":
        lam, x, its = _inverse_iteration(A, B, which, seed, maxiter)
    else:
        raise ValidationError(f"unknown eigensolver method {method!r}")
    x = x / math.sqrt(float(x @ B @ x))
    k = int(np.argmax(np.abs(x)))
    if x[k] < 0:
        x = -x
    res = pencil_residual(A, B, lam, x)
    if res > RESIDUAL_TOL:
        raise ConvergenceError(f"eigenpair residual {res:.2e} exceeds {RESIDUAL_TOL:.0e}")
    return SpectralResult(lam, x, float("nan"), res, its)


def _below_spectrum(C: np.ndarray, shift: float):
    """Cholesky factor of ``C - shift I`` if that matrix is positive definite, else None.

    Success certifies that ``shift`` lies below every eigenvalue of ``C``.
    """
    try:
        return sla.cho_factor(C - shift * np.eye(C.shape[0]))
    except np.linalg.LinAlgError:
        return None


def _inverse_iteration(A, B, which, seed, maxiter, block=8, tol=1e-13):
    n = A.shape[0]
    try:
        L = np.linalg.cholesky(B)
    except np.linalg.LinAlgError:
        raise NumericalError("B is not positive definite; deflate its kernel") from None
    Linv_A = sla.solve_triangular(L, A, lower=True)
    C = sla.solve_triangular(L, Linv_A.T, lower=True)
    sign = 1.0 if which == SMALLEST else -1.0
    # work on sign * C so the wanted end is always the smallest
    Cw = sign * 0.5 * (C + C.T)
    d = np.diag(Cw)
    off = np.abs(Cw).sum(axis=1) - np.abs(d)
    lo, hi = float(np.min(d - off)), float(np.max(d + off))
    width = max(hi - lo, 1e-300)
    shift = lo - 1e-3 * width
    factor = _below_spectrum(Cw, shift)
    while factor is None:  # Gershgorin guarantees this ends at once; guard against rounding
        shift -= width
        factor = _below_spectrum(Cw, shift)
    p = min(n, block)
    rng = np.random.default_rng(seed)
    X, _ = np.linalg.qr(rng.standard_normal((n, p)))
    for it in range(1, maxiter + 1):
        Y = sla.cho_solve(factor, X)
        Y, _ = np.linalg.qr(Y)
        Y, _ = np.linalg.qr(Y)  # second pass: full reorthogonalization
        H = Y.T @ Cw @ Y
        w, V = np.linalg.eigh(0.5 * (H + H.T))
        X = Y @ V
        theta = float(w[0])
        r = float(np.linalg.norm(Cw @ X[:, 0] - theta * X[:, 0]))
        if r <= tol * width and _below_spectrum(Cw, theta - max(r, 1e-12 * width)) is not None:
            break  # small residual and nothing below theta: the smallest eigenpair
        # move the shift toward theta, but only to values certified below the spectrum
        gap = float(w[1] - w[0]) if p > 1 else width
        candidate = theta - max(0.5 * gap, r, 1e-10 * width)
        if candidate > shift:
            trial = _below_spectrum(Cw, candidate)
            if trial is not None:
                shift, factor = candidate, trial
    else:
        raise ConvergenceError(f"inverse iteration did not converge in {maxiter} iterations")
    x = sla.solve_triangular(L.T, X[:, 0], lower=False)
    return sign * theta, x, it


# ---------------------------------------------------------------------------
# Independent oracle: Cholesky whitening + cyclic Jacobi
# ---------------------------------------------------------------------------

def _cholesky(B: np.ndarray) -> np.ndarray:
    n = B.shape[0]
    L = np.zeros_like(B)
    for j in range(n):
        d = B[j, j] - L[j, :j] @ L[j, :j]
        if d <= 0:
            raise NumericalError(f"B is not positive definite (pivot {j})")
        L[j, j] = math.sqrt(d)
        L[j + 1:, j] = (B[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def _forward(L: np.ndarray, X: np.ndarray) -> np.ndarray:
    Y = np.zeros_like(X)
    for i in range(L.shape[0]):
        Y[i] = (X[i] - L[i, :i] @ Y[:i]) / L[i, i]
    return Y


def jacobi_eigenvalues(C: np.ndarray, max_sweeps: int = 60) -> np.ndarray:
    """All eigenvalues of a symmetric matrix by parallel-ordered cyclic Jacobi."""
    A = np.array(C, dtype=float)
    n = A.shape[0]
    if n == 1:
        return A.ravel().copy()
    if n % 2:
        A = np.pad(A, ((0, 1), (0, 1)))
    m = A.shape[0]
    order = np.arange(m)
    scale = np.linalg.norm(A)
    eps = np.finfo(float).eps
    # off-diagonal mass cannot drop below the rounding floor ~ n * eps * |A|
    floor = m * eps * scale
    for _ in range(max_sweeps):
        if np.linalg.norm(A - np.diag(np.diag(A))) <= floor:
            break
        for _ in range(m - 1):
            p, q = order[: m // 2], order[::-1][: m // 2]
            app, aqq, apq = A[p, p], A[q, q], A[p, q]
            # rotate only pairs whose coupling is above rounding relative to their diagonal
            act = np.abs(apq) > eps * np.sqrt(np.abs(app * aqq)) + 1e-300 * scale
            safe = np.where(act, apq, 1.0)
            theta = (aqq - app) / (2.0 * safe)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            t = np.where(act, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            Ap, Aq = A[:, p].copy(), A[:, q].copy()
            A[:, p] = c * Ap - s * Aq
            A[:, q] = s * Ap + c * Aq
            Ap, Aq = A[p, :].copy(), A[q, :].copy()
            A[p, :] = c[:, None] * Ap - s[:, None] * Aq
            A[q, :] = s[:, None] * Ap + c[:, None] * Aq
            order = np.concatenate([order[:1], np.roll(order[1:], 1)])
    else:
        raise ConvergenceError("Jacobi iteration did not converge")
    ev = np.diag(A)
    if m != n:
        ev = np.delete(ev, n)  # padded row stays decoupled with value 0
    return np.sort(ev)


def eig_oracle(A, B) -> np.ndarray:
    """Full spectrum of ``A x = lam B x`` for verification (size <= 500).

    Whitens with a hand-written Cholesky factor, ``C = L^-1 A L^-T``, then
    runs Jacobi; shares no code path with :func:`extremal_eig`.
    """
    A, B = _check_pencil(A, B)
    if A.shape[0] > ORACLE_MAX_SIZE:
        raise ValidationError(f"oracle size {A.shape[0]} exceeds {ORACLE_MAX_SIZE}")
    L = _cholesky(B)
    X = _forward(L, A)
    C = _forward(L, X.T)
    return jacobi_eigenvalues(0.5 * (C + C.T))


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def _solve(forms: Forms, cs: ConstraintSet, pair, which, method, seed) -> SpectralResult:
    Ar, Br = reduce(forms, cs, pair)
    res = extremal_eig(Ar, Br, which, method=method, seed=seed)
    res.field = cs.null_basis @ res.vector
    res.details["constrained_dim"] = int(cs.null_basis.shape[1])
    res.details["constraint_rows"] = {k.value: cs.count(k) for k in CK if cs.count(k)}
    return res


def _inv_sqrt(lam: float) -> float:
    return 1.0 / math.sqrt(lam) if lam > 0 else math.inf


def korn_first_constant(mesh: Mesh, tol: float = DEFAULT_TOL, *, deflate_kernel: bool = True,
                        method: str = "dense", seed: int = 0) -> SpectralResult:
    """Best discrete ``c`` in ``|grad v| <= c |sym grad v|`` under the mesh's labels.

    Constraints: boundary rows, ``grad v`` orthogonal to the kernel K
    (unless ``deflate_kernel`` is false), and orthogonality to admissible
    constants, which lie in the kernel of both forms and do not change the
    quotient. ``lam = min |sym grad v|^2 / |grad v|^2``, ``constant = lam^-1/2``;
    an undeflated kernel (``lam <= 1e-12``) is flagged and gives ``constant = inf``.
    """
    kernel = compute_kernel_K(mesh, tol)
    forms = assemble(mesh)
    which = {CK.BC_TANGENTIAL, CK.BC_NORMAL, CK.ORTHO_CONST}
    if deflate_kernel:
        which.add(CK.ORTHO_K)
    cs = build_constraints(mesh, which, kernel=kernel, constants=kernel.constants, forms=forms)
    res = _solve(forms, cs, ("A_sym", "A_grad"), SMALLEST, method, seed)
    # the quotient is scale-free and at most 1, so an absolute threshold is meaningful
    degenerate = bool(res.lam <= DEGENERATE_LAMBDA)
    res.constant = math.inf if degenerate else _inv_sqrt(res.lam)
    res.details.update(kernel_dim=kernel.dim, constant_kernel_dim=len(kernel.constants), degenerate=degenerate)
    return res


def korn_nobc_constant(mesh: Mesh, *, method: str = "dense", seed: int = 0) -> SpectralResult:
    """Korn's first inequality without boundary conditions: ``grad v`` orthogonal to all skew matrices."""
    forms = assemble(mesh)
    cs = build_constraints(mesh, {CK.ORTHO_SO, CK.ORTHO_CONST}, forms=forms)
    res = _solve(forms, cs, ("A_sym", "A_grad"), SMALLEST, method, seed)
    res.constant = _inv_sqrt(res.lam)
    return res


def korn_second_constant(mesh: Mesh, *, method: str = "dense", seed: int = 0) -> SpectralResult:
    """Quadratic-mean Korn second constant: ``|grad v|^2 <= c2^2 (|sym grad v|^2 + |v|^2)``.

    Solved on the full space as the largest eigenvalue of
    ``(A_grad, A_sym + M)``; the sum form ``|grad v| <= c (|sym grad v| + |v|)``
    then holds with ``c = c2``.
    """
    forms = assemble(mesh)
    A = forms.A_grad.toarray()
    B = (forms.A_sym + forms.M).toarray()
    res = extremal_eig(A, B, LARGEST, method=method, seed=seed)
    res.field = res.vector.copy()
    res.constant = math.sqrt(res.lam)
    res.details.update(sum_form_bound=res.constant, constrained_dim=A.shape[0])
    return res


def poincare_mixed_constant(mesh: Mesh, tol: float = DEFAULT_TOL, *, deflate_constants: bool = True,
                            method: str = "dense", seed: int = 0) -> SpectralResult:
    """Best discrete ``c`` in ``|v| <= c |grad v|`` under the labels, off admissible constants.

    Solved as the largest eigenvalue ``mu`` of ``(M, A_grad)`` so that an
    undeflated admissible constant makes the denominator singular;
    ``lam = 1/mu = min |grad v|^2 / |v|^2`` and ``constant = sqrt(mu)``.
    """
    forms = assemble(mesh)
    constants = compute_constant_kernel(mesh, tol)
    which = {CK.BC_TANGENTIAL, CK.BC_NORMAL}
    if deflate_constants:
        which.add(CK.ORTHO_CONST)
    cs = build_constraints(mesh, which, constants=constants, forms=forms)
    res = _solve(forms, cs, ("M", "A_grad"), LARGEST, method, seed)
    mu = res.lam
    res.lam = 1.0 / mu
    res.constant = math.sqrt(mu)
    res.details.update(constant_kernel_dim=len(constants), solved_pencil="M/A_grad largest")
    return res


def poincare_elasticity_constant(mesh: Mesh, *, method: str = "dense", seed: int = 0) -> SpectralResult:
    """Best discrete ``c`` in ``|v| <= c |sym grad v|`` for ``v`` L2-orthogonal to rigid motions."""
    forms = assemble(mesh)
    cs = build_constraints(mesh, {CK.ORTHO_RIGID}, forms=forms)
    res = _solve(forms, cs, ("A_sym", "M"), SMALLEST, method, seed)
    res.constant = _inv_sqrt(res.lam)
    return res


def infsup_constant(mesh: Mesh, norm: str = "half", *, method: str = "dense", seed: int = 0) -> SpectralResult:
    """Discrete inf-sup constant of the MINI pair.

    Velocities vanish on the whole boundary; pressures have zero mean.
    ``lam`` is the smallest eigenvalue of ``(B A^-1 B^T, M_p)`` on mean-zero
    pressures and ``constant = sqrt(lam)``. ``norm="half"`` uses
    ``|grad v|`` for velocities; ``norm="full"`` adds ``|v|``.
    """
    if norm not in ("half", "full"):
        raise ValidationError(f"norm must be 'half' or 'full', got {norm!r}")
    forms = assemble(mesh, with_bubbles=True)
    N = mesh.dim
    interior = (N * mesh.interior_vertices[:, None] + np.arange(N)).ravel()
    vel = np.concatenate([interior, np.arange(forms.n_dofs, forms.A_vel.shape[0])])
    A = forms.A_vel if norm == "half" else forms.A_vel + forms.M_vel
    A = A[vel][:, vel].toarray()
    Bd = forms.B_div[:, vel].toarray()
    try:
        S = Bd @ sla.cho_solve(sla.cho_factor(A), Bd.T)
    except np.linalg.LinAlgError:
        raise NumericalError("velocity stiffness is singular") from None
    Mp = forms.M_p.toarray()
    Zp = sla.null_space((Mp @ np.ones(len(mesh.vertices)))[None, :])
    Sr, Mr = Zp.T @ S @ Zp, Zp.T @ Mp @ Zp
    res = extremal_eig(0.5 * (Sr + Sr.T), 0.5 * (Mr + Mr.T), SMALLEST, method=method, seed=seed)
    res.field = Zp @ res.vector
    res.constant = math.sqrt(max(res.lam, 0.0))
    bound = math.sqrt(N)
    res.details.update(norm=norm, sqrtN_bound=bound, within_bound=bool(res.constant <= bound * (1 + 1e-12)),
                       velocity_dofs=int(len(vel)), pressure_dofs=int(Zp.shape[1]))
    return res


ESTIMATORS = {
    "korn1": korn_first_constant,
    "korn1-nobc": korn_nobc_constant,
    "korn2": korn_second_constant,
    "poincare": poincare_mixed_constant,
    "poincare-ela": poincare_elasticity_constant,
    "infsup": infsup_constant,
}

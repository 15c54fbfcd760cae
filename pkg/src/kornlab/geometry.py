"""Simplicial meshes of the catalog domains with labeled boundary facets.

Meshes are triangulations (2D) or tetrahedralizations (3D). Every boundary
facet carries one label: ``"t"`` (tangential condition, the field must be
normal there) or ``"n"`` (normal condition, the field must be tangential).
Curved domains carry an :class:`AnalyticBoundary` so that normals and signed
distances can be evaluated on the exact surface rather than on the
polyhedral approximation.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence, Union

import jsonschema
import numpy as np

from .errors import LabelError, MeshError, SchemaError, ValidationError

TANGENTIAL = "t"
NORMAL = "n"
LABELS = (TANGENTIAL, NORMAL)

BOX = "BOX"
DISK = "DISK"
BALL = "BALL"
CYLINDER_SECTOR = "CYLINDER_SECTOR"
KINDS = (BOX, DISK, BALL, CYLINDER_SECTOR)

FACET = "facet"
ANALYTIC = "analytic"

# A boundary vertex counts as lying on a surface piece within this distance
# (relative to the descriptor's length scale).
_ON_SURFACE = 1e-9


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class AnalyticBoundary:
    """Exact description of a catalog domain boundary.

    ``params`` per kind:

    * ``BOX``: ``lo``, ``hi`` (corner vectors)
    * ``DISK``: ``center`` (2-vector), ``radius``
    * ``BALL``: ``center`` (3-vector), ``radius``
    * ``CYLINDER_SECTOR``: ``phi1``, ``phi2``, ``radius``, ``height``; the
      domain is ``{(r cos phi, r sin phi, z) : phi1 < phi < phi2,
      0 < r < radius, 0 < z < height}``.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown boundary kind {self.kind!r}")
        p = self.params
        try:
            if self.kind == BOX:
                lo, hi = np.asarray(p["lo"], float), np.asarray(p["hi"], float)
                if lo.shape != hi.shape or lo.size not in (2, 3) or np.any(hi <= lo):
                    raise ValidationError("BOX needs lo < hi componentwise in 2 or 3 dimensions")
            elif self.kind in (DISK, BALL):
                c = np.asarray(p["center"], float)
                if c.size != (2 if self.kind == DISK else 3) or float(p["radius"]) <= 0:
                    raise ValidationError(f"bad {self.kind} parameters {p}")
            else:
                phi1, phi2 = float(p["phi1"]), float(p["phi2"])
                if not -math.pi <= phi1 < phi2 <= math.pi:
                    raise ValidationError(f"sector needs -pi <= phi1 < phi2 <= pi, got {phi1}, {phi2}")
                if float(p["radius"]) <= 0 or float(p["height"]) <= 0:
                    raise ValidationError("sector radius and height must be positive")
        except KeyError as exc:
            raise ValidationError(f"{self.kind} descriptor is missing parameter {exc}") from None

    def __eq__(self, other):
        if not isinstance(other, AnalyticBoundary):
            return NotImplemented
        return self.kind == other.kind and _params_equal(self.params, other.params)

    __hash__ = None

    @property
    def dim(self) -> int:
        if self.kind == BOX:
            return len(self.params["lo"])
        return 2 if self.kind == DISK else 3

    @property
    def scale(self) -> float:
        """Characteristic length, used to make tolerances relative."""
        p = self.params
        if self.kind == BOX:
            return float(np.max(np.asarray(p["hi"], float) - np.asarray(p["lo"], float)))
        if self.kind in (DISK, BALL):
            return float(p["radius"])
        return max(float(p["radius"]), float(p["height"]))

    def scaled(self, s: float) -> "AnalyticBoundary":
        p = dict(self.params)
        if self.kind == BOX:
            p["lo"] = [s * float(v) for v in p["lo"]]
            p["hi"] = [s * float(v) for v in p["hi"]]
        elif self.kind in (DISK, BALL):
            p["center"] = [s * float(v) for v in p["center"]]
            p["radius"] = s * float(p["radius"])
        else:
            p["radius"] = s * float(p["radius"])
            p["height"] = s * float(p["height"])
        return AnalyticBoundary(self.kind, p)

    # -- surface pieces -------------------------------------------------

    @property
    def pieces(self) -> tuple[str, ...]:
        if self.kind == BOX:
            return tuple(f"x{i}{s}" for i in range(self.dim) for s in "-+")
        if self.kind == DISK:
            return ("circle",)
        if self.kind == BALL:
            return ("sphere",)
        return ("side1", "side2", "mantle", "bottom", "top")

    def _side_normals(self):
        phi1, phi2 = float(self.params["phi1"]), float(self.params["phi2"])
        n1 = np.array([math.sin(phi1), -math.cos(phi1), 0.0])
        n2 = np.array([-math.sin(phi2), math.cos(phi2), 0.0])
        return n1, n2

    def piece_distance(self, piece: str, x) -> np.ndarray:
        """Signed distance to the unbounded surface carrying ``piece``."""
        x = np.asarray(x, float)
        p = self.params
        if self.kind == BOX:
            i, side = int(piece[1:-1]), piece[-1]
            if side == "-":
                return float(p["lo"][i]) - x[..., i]
            return x[..., i] - float(p["hi"][i])
        if self.kind in (DISK, BALL):
            c = np.asarray(p["center"], float)
            return np.linalg.norm(x - c, axis=-1) - float(p["radius"])
        if piece in ("side1", "side2"):
            n = self._side_normals()[0 if piece == "side1" else 1]
            return x @ n
        if piece == "mantle":
            return np.hypot(x[..., 0], x[..., 1]) - float(p["radius"])
        if piece == "bottom":
            return -x[..., 2]
        if piece == "top":
            return x[..., 2] - float(p["height"])
        raise ValidationError(f"unknown piece {piece!r} for {self.kind}")

    def piece_normal(self, piece: str, x) -> np.ndarray:
        """Outward unit normal of ``piece`` evaluated at ``x`` (shape ``(..., N)``)."""
        x = np.asarray(x, float)
        p = self.params
        shape = x.shape
        if self.kind == BOX:
            i, side = int(piece[1:-1]), piece[-1]
            n = np.zeros(self.dim)
            n[i] = -1.0 if side == "-" else 1.0
            return np.broadcast_to(n, shape).copy()
        if self.kind in (DISK, BALL):
            return _unit(x - np.asarray(p["center"], float))
        if piece in ("side1", "side2"):
            n = self._side_normals()[0 if piece == "side1" else 1]
            return np.broadcast_to(n, shape).copy()
        if piece == "mantle":
            n = np.zeros(shape)
            n[..., :2] = x[..., :2]
            return _unit(n)
        n = np.zeros(3)
        n[2] = -1.0 if piece == "bottom" else 1.0
        if piece not in ("bottom", "top"):
            raise ValidationError(f"unknown piece {piece!r} for {self.kind}")
        return np.broadcast_to(n, shape).copy()

    def signed_distance(self, x) -> np.ndarray:
        """Negative inside, zero on the surface, positive outside.

        Exact Euclidean distance for boxes, disks and balls; for sectors the
        max/min combination of piece distances (exact on the surface and
        1-Lipschitz everywhere).
        """
        x = np.asarray(x, float)
        p = self.params
        if self.kind == BOX:
            lo, hi = np.asarray(p["lo"], float), np.asarray(p["hi"], float)
            q = np.abs(x - 0.5 * (lo + hi)) - 0.5 * (hi - lo)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            return outside + np.minimum(np.max(q, axis=-1), 0.0)
        if self.kind in (DISK, BALL):
            return self.piece_distance(self.pieces[0], x)
        d1 = self.piece_distance("side1", x)
        d2 = self.piece_distance("side2", x)
        wedge = np.maximum(d1, d2) if float(p["phi2"]) - float(p["phi1"]) <= math.pi else np.minimum(d1, d2)
        rest = [self.piece_distance(k, x) for k in ("mantle", "bottom", "top")]
        return np.maximum.reduce([wedge, *rest])

    def exact_normal(self, x) -> np.ndarray:
        """Normal of the surface piece nearest to each point of ``x``."""
        x = np.asarray(x, float)
        d = np.stack([np.abs(self.piece_distance(k, x)) for k in self.pieces], axis=-1)
        nearest = np.argmin(d, axis=-1)
        normals = np.stack([self.piece_normal(k, x) for k in self.pieces], axis=-2)
        return np.take_along_axis(normals, nearest[..., None, None], axis=-2)[..., 0, :]

    def piece_of_facet(self, points: np.ndarray, facet_normal: np.ndarray) -> str:
        """Surface piece a boundary facet discretizes.

        Candidates are the pieces on which every facet vertex lies; among
        those the one whose normal best matches the facet normal wins. If no
        piece contains all vertices (chordal facets), the piece nearest to
        the centroid is used.
        """
        eps = _ON_SURFACE * self.scale
        centroid = points.mean(axis=0)
        best, best_dot = None, -np.inf
        for k in self.pieces:
            if np.all(np.abs(self.piece_distance(k, points)) <= eps):
                dot = float(self.piece_normal(k, centroid) @ facet_normal)
                if dot > best_dot:
                    best, best_dot = k, dot
        if best is None:
            d = [abs(float(self.piece_distance(k, centroid))) for k in self.pieces]
            best = self.pieces[int(np.argmin(d))]
        return best


def _params_equal(a, b) -> bool:
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_params_equal(a[k], b[k]) for k in a)
    if isinstance(a, (list, tuple, np.ndarray)) or isinstance(b, (list, tuple, np.ndarray)):
        a, b = np.asarray(a, float), np.asarray(b, float)
        return a.shape == b.shape and bool(np.all(a == b))
    return float(a) == float(b)


def _facet_keys(cells: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All cell facets: (sorted vertex tuples, owning cell, local opposite vertex)."""
    nc, k = cells.shape
    facets, owner, opposite = [], [], []
    for drop in range(k):
        keep = [j for j in range(k) if j != drop]
        facets.append(cells[:, keep])
        owner.append(np.arange(nc))
        opposite.append(np.full(nc, drop))
    facets = np.sort(np.concatenate(facets), axis=1)
    return facets, np.concatenate(owner), np.concatenate(opposite)


def _signed_volumes(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    x = vertices[cells]
    jac = (x[:, 1:] - x[:, :1]).transpose(0, 2, 1)
    return np.linalg.det(jac) / math.factorial(vertices.shape[1])


def _facet_measure_normal(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Measure and (unoriented) unit normal of facets, ``points`` shaped ``(m, N, N)``."""
    if points.shape[-1] == 2:
        t = points[:, 1] - points[:, 0]
        n = np.stack([t[:, 1], -t[:, 0]], axis=-1)
        meas = np.linalg.norm(t, axis=-1)
    else:
        n = np.cross(points[:, 1] - points[:, 0], points[:, 2] - points[:, 0])
        meas = 0.5 * np.linalg.norm(n, axis=-1)
    return meas, _unit(n)


class Mesh:
    """Immutable simplicial mesh with labeled boundary facets.

    Parameters
    ----------
    vertices : array_like, shape (nv, N)
    cells : array_like of int, shape (nc, N + 1)
    boundary_facets : array_like of int, shape (nb, N)
    labels : sequence of {"t", "n"}, length nb
    descriptor : AnalyticBoundary, optional

    All invariants are checked on construction; violations raise
    :class:`MeshError` or :class:`LabelError` naming the offending cell or
    facet.
    """

    def __init__(self, vertices, cells, boundary_facets, labels, descriptor: Optional[AnalyticBoundary] = None):
        vertices = np.array(vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
            raise MeshError(f"vertices must be an (nv, 2) or (nv, 3) array, got shape {vertices.shape}")
        dim = vertices.shape[1]
        if not np.all(np.isfinite(vertices)):
            raise MeshError("vertex coordinates must be finite")
        cells = np.array(cells, dtype=np.int64).reshape(-1, dim + 1)
        boundary = np.array(boundary_facets, dtype=np.int64).reshape(-1, dim)
        labels = tuple(str(s) for s in labels)
        if len(labels) != len(boundary):
            raise LabelError(f"{len(boundary)} boundary facets but {len(labels)} labels")
        if descriptor is not None and descriptor.dim != dim:
            raise MeshError(f"descriptor dimension {descriptor.dim} does not match mesh dimension {dim}")
        for arr in (vertices, cells, boundary):
            arr.flags.writeable = False
        self.dim = dim
        self.vertices = vertices
        self.cells = cells
        self.boundary_facets = boundary
        self.labels = labels
        self.descriptor = descriptor
        self._validate()

    # -- invariants -----------------------------------------------------

    def _validate(self):
        nv = len(self.vertices)
        if len(self.cells) == 0:
            raise MeshError("mesh has no cells")
        for name, arr in (("cell", self.cells), ("boundary facet", self.boundary_facets)):
            bad = np.flatnonzero(np.any((arr < 0) | (arr >= nv), axis=1))
            if bad.size:
                raise MeshError(f"{name} {bad[0]} has a vertex index out of range [0, {nv})")
            srt = np.sort(arr, axis=1)
            dup = np.flatnonzero(np.any(srt[:, 1:] == srt[:, :-1], axis=1))
            if dup.size:
                raise MeshError(f"{name} {dup[0]} repeats a vertex")
        vol = self.signed_volumes
        bad = np.flatnonzero(~(vol > 0))
        if bad.size:
            raise MeshError(f"cell {bad[0]} has non-positive signed volume {vol[bad[0]]:.3e} (orientation)")
        for i, lab in enumerate(self.labels):
            if lab not in LABELS:
                raise LabelError(f"boundary facet {i} has label {lab!r}; expected 't' or 'n'")

        keys, owner, opposite = _facet_keys(self.cells)
        uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        if np.any(counts > 2):
            k = int(np.flatnonzero(counts > 2)[0])
            raise MeshError(f"facet {uniq[k].tolist()} is shared by {counts[k]} cells")
        topo = {tuple(f): i for i, f in enumerate(uniq) if counts[i] == 1}
        given = np.sort(self.boundary_facets, axis=1)
        seen: dict[tuple, int] = {}
        for i, f in enumerate(map(tuple, given)):
            if f not in topo:
                raise MeshError(f"boundary facet {i} {list(f)} is not a boundary facet of the cells")
            if f in seen:
                raise LabelError(f"boundary facet {list(f)} is labeled twice (records {seen[f]} and {i})")
            seen[f] = i
        missing = [f for f in topo if f not in seen]
        if missing:
            raise LabelError(f"boundary facet {list(missing[0])} is unlabeled")

        # adjacent cell of every labeled boundary facet
        first = np.full(len(uniq), -1)
        first[inverse[::-1]] = np.arange(len(keys))[::-1]
        idx = np.array([first[topo[f]] for f in map(tuple, given)], dtype=np.int64)
        self._facet_cell = owner[idx] if len(idx) else np.zeros(0, np.int64)
        outward = self.facet_normals
        cc = self.vertices[self.cells[self._facet_cell]].mean(axis=1)
        if np.any(np.einsum("ij,ij->i", outward, self.facet_centroids - cc) <= 0):
            raise MeshError("outward normal test failed")  # pragma: no cover

    # -- derived geometry -----------------------------------------------

    @cached_property
    def signed_volumes(self) -> np.ndarray:
        return _signed_volumes(self.vertices, self.cells)

    @property
    def volume(self) -> float:
        return float(self.signed_volumes.sum())

    @property
    def facet_cells(self) -> np.ndarray:
        """Index of the unique cell adjacent to each boundary facet."""
        return self._facet_cell

    @cached_property
    def facet_centroids(self) -> np.ndarray:
        return self.vertices[self.boundary_facets].mean(axis=1)

    @cached_property
    def facet_areas(self) -> np.ndarray:
        return _facet_measure_normal(self.vertices[self.boundary_facets])[0]

    @cached_property
    def facet_normals(self) -> np.ndarray:
        """Outward unit normals of the flat boundary facets."""
        _, n = _facet_measure_normal(self.vertices[self.boundary_facets])
        cc = self.vertices[self.cells[self._facet_cell]].mean(axis=1)
        flip = np.einsum("ij,ij->i", n, self.facet_centroids - cc) < 0
        n[flip] *= -1.0
        return n

    @cached_property
    def facet_pieces(self) -> tuple[Optional[str], ...]:
        if self.descriptor is None:
            return (None,) * len(self.boundary_facets)
        pts = self.vertices[self.boundary_facets]
        return tuple(self.descriptor.piece_of_facet(p, n) for p, n in zip(pts, self.facet_normals))

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_facets)

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        mask = np.ones(len(self.vertices), bool)
        mask[self.boundary_vertices] = False
        return np.flatnonzero(mask)

    def facets_with_label(self, label: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.labels) if s == label], dtype=np.int64)

    def relabeled(self, labels: Sequence[str]) -> "Mesh":
        return Mesh(self.vertices, self.cells, self.boundary_facets, labels, self.descriptor)

    def scaled(self, s: float) -> "Mesh":
        """Copy with all coordinates multiplied by ``s > 0``."""
        if not s > 0:
            raise ValidationError("scale factor must be positive")
        desc = None if self.descriptor is None else self.descriptor.scaled(s)
        return Mesh(s * self.vertices, self.cells, self.boundary_facets, self.labels, desc)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.cells, other.cells)
            and np.array_equal(self.boundary_facets, other.boundary_facets)
            and self.labels == other.labels
            and self.descriptor == other.descriptor
        )

    __hash__ = None

    def __repr__(self):
        kind = None if self.descriptor is None else self.descriptor.kind
        return (
            f"Mesh(dim={self.dim}, vertices={len(self.vertices)}, cells={len(self.cells)}, "
            f"boundary={len(self.boundary_facets)}, descriptor={kind})"
        )


def boundary_normal(mesh: Mesh, facet: int, mode: str = FACET) -> np.ndarray:
    """Outward unit normal of a boundary facet.

    ``FACET`` returns the flat facet normal; ``ANALYTIC`` evaluates the exact
    normal of the facet's surface piece at the facet centroid.
    """
    if not 0 <= facet < len(mesh.boundary_facets):
        raise ValidationError(f"facet {facet} is not a boundary facet index")
    if mode == FACET:
        return mesh.facet_normals[facet].copy()
    if mode == ANALYTIC:
        if mesh.descriptor is None:
            raise ValidationError("ANALYTIC normal requested but the mesh has no analytic descriptor")
        return mesh.descriptor.piece_normal(mesh.facet_pieces[facet], mesh.facet_centroids[facet])
    raise ValidationError(f"unknown normal mode {mode!r}")


@dataclass(frozen=True)
class VertexConstraints:
    """Per (boundary facet, facet vertex) data feeding boundary-condition rows."""

    facet: np.ndarray  # (k,)
    vertex: np.ndarray  # (k,)
    weight: np.ndarray  # (k,) square root of the vertex share of the facet measure
    normal: np.ndarray  # (k, N)
    label: np.ndarray  # (k,) of "t"/"n"


def vertex_constraints(mesh: Mesh) -> VertexConstraints:
    """Normals at every (facet, vertex) incidence.

    With a descriptor the normal is the exact normal of the facet's surface
    piece evaluated at the vertex itself, so rigid motions that are exactly
    tangential to a curved surface satisfy the rows to rounding.
    """
    nb, N = mesh.boundary_facets.shape
    facet = np.repeat(np.arange(nb), N)
    vertex = mesh.boundary_facets.reshape(-1)
    weight = np.sqrt(np.repeat(mesh.facet_areas / N, N))
    label = np.repeat(np.array(mesh.labels, dtype="<U1"), N)
    if mesh.descriptor is None:
        normal = np.repeat(mesh.facet_normals, N, axis=0)
    else:
        normal = np.empty((nb * N, N))
        x = mesh.vertices[vertex]
        pieces = np.repeat(np.array(mesh.facet_pieces, dtype=object), N)
        for piece in set(mesh.facet_pieces):
            sel = pieces == piece
            normal[sel] = mesh.descriptor.piece_normal(piece, x[sel])
    return VertexConstraints(facet, vertex, weight, normal, label)


def tangent_basis(normal: np.ndarray) -> np.ndarray:
    """Orthonormal tangent vectors, shape ``(..., N - 1, N)``, for unit normals ``(..., N)``."""
    normal = np.asarray(normal, float)
    if normal.shape[-1] == 2:
        return np.stack([-normal[..., 1], normal[..., 0]], axis=-1)[..., None, :]
    helper = np.zeros_like(normal)
    least = np.argmin(np.abs(normal), axis=-1)
    np.put_along_axis(helper, least[..., None], 1.0, axis=-1)
    t1 = _unit(helper - np.sum(helper * normal, axis=-1, keepdims=True) * normal)
    t2 = np.cross(normal, t1)
    return np.stack([t1, t2], axis=-2)


# ---------------------------------------------------------------------------
# Domain catalog
# ---------------------------------------------------------------------------

DOMAINS = ("square", "cube", "disk", "ball", "half-cylinder", "sector")

LabelRule = Union[str, Callable[[np.ndarray, np.ndarray, Optional[str]], Optional[str]]]


@dataclass(frozen=True)
class DomainSpec:
    """Catalog domain, refinement level and labeling rule.

    ``labels`` is either a rule name (``all-t``, ``all-n``, ``top-bottom-t``,
    ``sides-t``) or a callable ``(centroid, normal, piece) -> "t" | "n"``
    evaluated per boundary facet. Sector parameters are ignored for the
    other domains.
    """

    name: str
    n: int = 1
    labels: LabelRule = "all-t"
    phi1: float = -math.pi / 2
    phi2: float = math.pi / 2
    radius: float = 1.0
    height: float = 1.0

    def __post_init__(self):
        if self.name not in DOMAINS:
            raise ValidationError(f"unknown domain {self.name!r}; expected one of {', '.join(DOMAINS)}")
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"refinement level must be a positive integer, got {self.n}")
        if self.name == "sector" and not self.phi1 < self.phi2:
            raise ValidationError(f"sector needs phi1 < phi2, got {self.phi1}, {self.phi2}")


def _label_rule(rule: LabelRule) -> Callable:
    if callable(rule):
        return rule
    if rule == "all-t":
        return lambda c, nu, piece: TANGENTIAL
    if rule == "all-n":
        return lambda c, nu, piece: NORMAL
    if rule == "top-bottom-t":
        return lambda c, nu, piece: TANGENTIAL if abs(nu[-1]) > 0.5 else NORMAL
    if rule == "sides-t":
        def sides(c, nu, piece):
            if piece is None:
                return None
            return TANGENTIAL if piece in ("side1", "side2") else NORMAL
        return sides
    raise ValidationError(f"unknown labeling rule {rule!r}")


def _orient(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    cells = np.array(cells, dtype=np.int64)
    neg = _signed_volumes(vertices, cells) < 0
    cells[neg, -2:] = cells[neg, -1:-3:-1]
    return cells


def _topological_boundary(cells: np.ndarray) -> np.ndarray:
    keys, _, _ = _facet_keys(cells)
    uniq, counts = np.unique(keys, axis=0, return_counts=True)
    return uniq[counts == 1]


def _square_grid(n: int):
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    idx = lambda i, j: j * (n + 1) + i
    cells = []
    for j in range(n):
        for i in range(n):
            v00, v10, v01, v11 = idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1)
            cells += [(v00, v10, v11), (v00, v11, v01)]
    return vertices, np.array(cells)


def _cube_grid(n: int, lo: float = 0.0, hi: float = 1.0):
    """Kuhn (Freudenthal) split of an n^3 grid: 6 tetrahedra per cube around the main diagonal."""
    t = np.linspace(lo, hi, n + 1)
    Z, Y, X = np.meshgrid(t, t, t, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    idx = lambda i, j, k: (k * (n + 1) + j) * (n + 1) + i
    cells = []
    for k in range(n):
        for j in range(n):
            for i in range(n):
                for perm in itertools.permutations(range(3)):
                    corner = [i, j, k]
                    tet = [idx(*corner)]
                    for axis in perm:
                        corner[axis] += 1
                        tet.append(idx(*corner))
                    cells.append(tet)
    return vertices, _orient(vertices, np.array(cells))


def _merge_rings(inner: list, inner_ang: list, outer: list, outer_ang: list) -> list:
    """Triangulate the strip between two angularly sorted vertex rings."""
    tris = []
    i = j = 0
    while i < len(inner) - 1 or j < len(outer) - 1:
        advance_outer = j < len(outer) - 1 and (i == len(inner) - 1 or outer_ang[j + 1] <= inner_ang[i + 1])
        if advance_outer:
            tris.append((inner[i], outer[j], outer[j + 1]))
            j += 1
        else:
            tris.append((inner[i], outer[j], inner[i + 1]))
            i += 1
    return tris


def _polar_mesh(n: int, radius: float, phi1: float, phi2: float, per_turn: int = 8):
    """Ring mesh of a disk (full turn) or a circular sector about the origin.

    Ring ``k`` (``k = 1..n``) sits at radius ``radius * k / n`` and carries
    ``s * k`` angular segments, ``s = per_turn`` for the full disk.
    """
    span = phi2 - phi1
    closed = abs(span - 2 * math.pi) < 1e-14
    s = per_turn if closed else max(1, round(per_turn * span / (2 * math.pi)))
    vertices = [(0.0, 0.0)]
    rings, angles = [[0]], [[phi1]]
    for k in range(1, n + 1):
        m = s * k
        r = radius * k / n
        ang = [phi1 + span * q / m for q in range(m if closed else m + 1)]
        start = len(vertices)
        vertices += [(r * math.cos(a), r * math.sin(a)) for a in ang]
        ids = list(range(start, start + len(ang)))
        if closed:
            ids, ang = ids + [ids[0]], ang + [phi1 + span]
        rings.append(ids)
        angles.append(ang)
    vertices = np.array(vertices)
    # vertices placed on the circle: r*cos/sin already exact to rounding
    cells = []
    for k in range(1, n + 1):
        inner, inner_ang = rings[k - 1], angles[k - 1]
        if k == 1:
            inner, inner_ang = [0], [phi1]
        cells += _merge_rings(inner, inner_ang, rings[k], angles[k])
    return vertices, _orient(vertices, np.array(cells))


def _extrude(v2: np.ndarray, t2: np.ndarray, n: int, height: float):
    """Extrude a triangle mesh into n prism layers, 3 tetrahedra per prism.

    Prism split uses sorted global indices so neighbouring prisms agree on
    their shared quadrilateral diagonals.
    """
    m = len(v2)
    z = np.linspace(0.0, height, n + 1)
    vertices = np.column_stack([np.tile(v2, (n + 1, 1)), np.repeat(z, m)])
    cells = []
    for layer in range(n):
        off, up = layer * m, (layer + 1) * m
        for tri in t2:
            a, b, c = sorted(int(v) for v in tri)
            cells += [
                (a + off, b + off, c + off, c + up),
                (a + off, b + off, b + up, c + up),
                (a + off, a + up, b + up, c + up),
            ]
    return vertices, _orient(vertices, np.array(cells))


def _ball(n: int, radius: float):
    """Cube [-1, 1]^3 with 2n cells per side mapped radially onto the ball."""
    vertices, cells = _cube_grid(2 * n, -1.0, 1.0)
    norm2 = np.linalg.norm(vertices, axis=1)
    norminf = np.max(np.abs(vertices), axis=1)
    factor = np.divide(norminf, norm2, out=np.ones_like(norm2), where=norm2 > 0)
    vertices = radius * vertices * factor[:, None]
    surface = norminf == 1.0
    vertices[surface] = radius * _unit(vertices[surface])
    return vertices, _orient(vertices, cells)


def generate_mesh(spec: DomainSpec) -> Mesh:
    """Mesh a catalog domain and label its boundary.

    Edge lengths are about ``1/n``; curved boundaries have their vertices
    placed on the exact surface and carry an analytic descriptor.
    """
    n = int(spec.n)
    if spec.name == "square":
        vertices, cells = _square_grid(n)
        desc = AnalyticBoundary(BOX, {"lo": [0.0, 0.0], "hi": [1.0, 1.0]})
    elif spec.name == "cube":
        vertices, cells = _cube_grid(n)
        desc = AnalyticBoundary(BOX, {"lo": [0.0, 0.0, 0.0], "hi": [1.0, 1.0, 1.0]})
    elif spec.name == "disk":
        vertices, cells = _polar_mesh(n, 1.0, 0.0, 2 * math.pi)
        desc = AnalyticBoundary(DISK, {"center": [0.0, 0.0], "radius": 1.0})
    elif spec.name == "ball":
        vertices, cells = _ball(n, 1.0)
        desc = AnalyticBoundary(BALL, {"center": [0.0, 0.0, 0.0], "radius": 1.0})
    else:
        if spec.name == "half-cylinder":
            phi1, phi2, radius, height = -math.pi / 2, math.pi / 2, 1.0, 1.0
        else:
            phi1, phi2, radius, height = spec.phi1, spec.phi2, spec.radius, spec.height
        v2, t2 = _polar_mesh(n, radius, phi1, phi2)
        vertices, cells = _extrude(v2, t2, n, height)
        desc = AnalyticBoundary(
            CYLINDER_SECTOR, {"phi1": phi1, "phi2": phi2, "radius": radius, "height": height}
        )
    boundary = _topological_boundary(cells)
    # unlabeled placeholder mesh to get normals and pieces, then label
    draft = Mesh(vertices, cells, boundary, [TANGENTIAL] * len(boundary), desc)
    rule = _label_rule(spec.labels)
    labels = []
    for i in range(len(boundary)):
        lab = rule(draft.facet_centroids[i], draft.facet_normals[i], draft.facet_pieces[i])
        if lab not in LABELS:
            raise LabelError(
                f"labeling rule left boundary facet {i} {boundary[i].tolist()} unlabeled (got {lab!r})"
            )
        labels.append(lab)
    return Mesh(vertices, cells, boundary, labels, desc)


# ---------------------------------------------------------------------------
# Mesh file format
# ---------------------------------------------------------------------------

MESH_SCHEMA = {
    "type": "object",
    "required": ["dim", "vertices", "cells", "boundary"],
    "additionalProperties": False,
    "properties": {
        "dim": {"enum": [2, 3]},
        "vertices": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "cells": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        },
        "boundary": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["facet", "label"],
                "additionalProperties": False,
                "properties": {
                    "facet": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    "label": {"enum": list(LABELS)},
                },
            },
        },
        "descriptor": {
            "type": "object",
            "required": ["kind", "params"],
            "additionalProperties": False,
            "properties": {"kind": {"enum": list(KINDS)}, "params": {"type": "object"}},
        },
    },
}


def _num(x) -> str:
    return format(float(x), ".17g")


def _dump_value(v) -> str:
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_dump_value(v[k])}" for k in sorted(v)) + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_dump_value(x) for x in v) + "]"
    if isinstance(v, str):
        return json.dumps(v)
    return _num(v)


def save_mesh(mesh: Mesh) -> str:
    """Serialize to the JSON mesh format (numbers with 17 significant digits)."""
    lines = ["{", f'  "dim": {mesh.dim},', '  "vertices": [']
    lines += [f"    {_dump_value(v)}," for v in mesh.vertices]
    lines[-1] = lines[-1].rstrip(",")
    lines += ["  ],", '  "cells": [']
    lines += [f"    {json.dumps(c.tolist())}," for c in mesh.cells]
    lines[-1] = lines[-1].rstrip(",")
    lines += ["  ],", '  "boundary": [']
    lines += [
        f'    {{"facet": {json.dumps(f.tolist())}, "label": "{lab}"}},'
        for f, lab in zip(mesh.boundary_facets, mesh.labels)
    ]
    lines[-1] = lines[-1].rstrip(",")
    if mesh.descriptor is None:
        lines.append("  ]")
    else:
        d = mesh.descriptor
        lines.append("  ],")
        lines.append(f'  "descriptor": {{"kind": "{d.kind}", "params": {_dump_value(d.params)}}}')
    lines.append("}")
    return "\n".join(lines) + "\n"


def load_mesh(text: str) -> Mesh:
    """Parse and validate a mesh file; all invariants are re-checked."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"mesh file is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(data, MESH_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"mesh file schema violation at {where}: {exc.message}") from None
    dim = data["dim"]
    if any(len(v) != dim for v in data["vertices"]):
        raise SchemaError(f"every vertex must have {dim} coordinates")
    if any(len(c) != dim + 1 for c in data["cells"]):
        raise SchemaError(f"every cell must list {dim + 1} vertices")
    if any(len(b["facet"]) != dim for b in data["boundary"]):
        raise SchemaError(f"every boundary facet must list {dim} vertices")
    desc = None
    if "descriptor" in data:
        desc = AnalyticBoundary(data["descriptor"]["kind"], data["descriptor"]["params"])
    return Mesh(
        np.array(data["vertices"], dtype=float).reshape(-1, dim),
        np.array(data["cells"], dtype=np.int64).reshape(-1, dim + 1),
        np.array([b["facet"] for b in data["boundary"]], dtype=np.int64).reshape(-1, dim),
        [b["label"] for b in data["boundary"]],
        desc,
    )

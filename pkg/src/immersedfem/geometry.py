"""Implicit geometry, Cartesian background mesh, and cut-element classification.

The physical domain is described by a level-set function with the convention
phi(x, y) < 0 inside.  Nodes with |phi| below a small vertex tolerance count as
inside, which resolves boundary-through-vertex configurations deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Relative tolerances, both in units of the background cell size h.
VERTEX_TOL = 1e-14   # |phi| below this (times h) counts as "on the boundary -> inside"
CUT_TOL = 1e-12      # classification tolerance on the volume fraction

INTERIOR, CUT, EXTERIOR = 0, 1, 2
_CLASS_NAMES = {INTERIOR: "interior", CUT: "cut", EXTERIOR: "exterior"}


class GeometryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Level sets
# ---------------------------------------------------------------------------

class LevelSet:
    """Base class: callable phi(x, y), vectorized over numpy arrays."""

    def value(self, x, y):
        raise NotImplementedError

    def gradient(self, x, y):
        """Gradient of phi; subclasses override where an analytic form exists."""
        eps = 1e-7
        gx = (self.value(x + eps, y) - self.value(x - eps, y)) / (2 * eps)
        gy = (self.value(x, y + eps) - self.value(x, y - eps)) / (2 * eps)
        return gx, gy

    def __call__(self, x, y):
        return self.value(x, y)


@dataclass(frozen=True)
class Circle(LevelSet):
    """Disk of radius r centered at (cx, cy); phi = dist - r."""
    cx: float
    cy: float
    r: float

    def value(self, x, y):
        return np.hypot(np.asarray(x) - self.cx, np.asarray(y) - self.cy) - self.r

    def gradient(self, x, y):
        dx, dy = np.asarray(x) - self.cx, np.asarray(y) - self.cy
        d = np.hypot(dx, dy)
        d = np.where(d == 0, 1.0, d)
        return dx / d, dy / d


@dataclass(frozen=True)
class Plane(LevelSet):
    """Half plane n . x < c with |n| = 1 (normalized at construction)."""
    nx: float
    ny: float
    c: float

    def __post_init__(self):
        norm = float(np.hypot(self.nx, self.ny))
        if norm == 0:
            raise GeometryError("plane normal must be nonzero")
        object.__setattr__(self, "nx", self.nx / norm)
        object.__setattr__(self, "ny", self.ny / norm)
        object.__setattr__(self, "c", self.c / norm)

    def value(self, x, y):
        return self.nx * np.asarray(x) + self.ny * np.asarray(y) - self.c

    def gradient(self, x, y):
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        return np.full(shape, self.nx), np.full(shape, self.ny)


@dataclass(frozen=True)
class Corner(LevelSet):
    """Lower-left quadrant region x < a+s and y < b+s; phi = max of the two planes."""
    a: float
    b: float
    s: float

    def value(self, x, y):
        return np.maximum(np.asarray(x) - (self.a + self.s),
                          np.asarray(y) - (self.b + self.s))

    def gradient(self, x, y):
        fx = np.asarray(x) - (self.a + self.s)
        fy = np.asarray(y) - (self.b + self.s)
        takex = fx >= fy
        return np.where(takex, 1.0, 0.0), np.where(takex, 0.0, 1.0)


@dataclass(frozen=True)
class Annulus(LevelSet):
    """Ring r0 < dist < r1 around (cx, cy)."""
    cx: float
    cy: float
    r0: float
    r1: float

    def __post_init__(self):
        if not 0 <= self.r0 < self.r1:
            raise GeometryError("annulus requires 0 <= r0 < r1")

    def value(self, x, y):
        d = np.hypot(np.asarray(x) - self.cx, np.asarray(y) - self.cy)
        return np.maximum(self.r0 - d, d - self.r1)

    def gradient(self, x, y):
        dx, dy = np.asarray(x) - self.cx, np.asarray(y) - self.cy
        d = np.hypot(dx, dy)
        d = np.where(d == 0, 1.0, d)
        outer = (d - self.r1) >= (self.r0 - d)
        sign = np.where(outer, 1.0, -1.0)
        return sign * dx / d, sign * dy / d


@dataclass(frozen=True)
class BooleanCombination(LevelSet):
    """Union/intersection of level sets (min/max of phi), or complement."""
    op: str                      # "union" | "intersection" | "complement"
    parts: tuple

    def __post_init__(self):
        if self.op not in ("union", "intersection", "complement"):
            raise GeometryError(f"unknown boolean op {self.op!r}")
        if self.op == "complement" and len(self.parts) != 1:
            raise GeometryError("complement takes exactly one operand")

    def value(self, x, y):
        vals = [p.value(x, y) for p in self.parts]
        if self.op == "union":
            return np.minimum.reduce(vals)
        if self.op == "intersection":
            return np.maximum.reduce(vals)
        return -vals[0]


def parse_geometry(literal: str) -> LevelSet:
    """Parse a geometry literal: circle:cx,cy,r | plane:nx,ny,c | corner:a,b,s |
    annulus:cx,cy,r0,r1."""
    try:
        kind, _, rest = literal.partition(":")
        params = [float(t) for t in rest.split(",")] if rest else []
    except ValueError as exc:
        raise GeometryError(f"cannot parse geometry literal {literal!r}") from exc
    table = {"circle": (Circle, 3), "plane": (Plane, 3),
             "corner": (Corner, 3), "annulus": (Annulus, 4)}
    if kind not in table:
        raise GeometryError(f"unknown geometry kind {kind!r}")
    cls, nparams = table[kind]
    if len(params) != nparams:
        raise GeometryError(f"{kind} expects {nparams} parameters, got {len(params)}")
    return cls(*params)


# ---------------------------------------------------------------------------
# Background mesh
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BackgroundMesh:
    """Uniform axis-aligned grid of nx x ny cells over a rectangular box."""
    origin: tuple = (0.0, 0.0)
    extent: tuple = (1.0, 1.0)
    nx: int = 8
    ny: int = 8

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise GeometryError("cell counts must be positive")
        hx, hy = self.extent[0] / self.nx, self.extent[1] / self.ny
        if abs(hx - hy) > 1e-12 * hx:
            raise GeometryError(f"mesh must be quasi-uniform, got hx={hx}, hy={hy}")

    @property
    def h(self) -> float:
        return self.extent[0] / self.nx

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    def element_id(self, i: int, j: int) -> int:
        return j * self.nx + i

    def element_ij(self, e: int):
        return e % self.nx, e // self.nx

    def element_box(self, e: int):
        i, j = self.element_ij(e)
        x0 = self.origin[0] + i * self.h
        y0 = self.origin[1] + j * self.h
        return x0, y0, x0 + self.h, y0 + self.h

    def neighbors(self, e: int):
        """Face neighbors (left, right, bottom, top), omitting off-grid ones."""
        i, j = self.element_ij(e)
        out = []
        if i > 0:
            out.append(self.element_id(i - 1, j))
        if i < self.nx - 1:
            out.append(self.element_id(i + 1, j))
        if j > 0:
            out.append(self.element_id(i, j - 1))
        if j < self.ny - 1:
            out.append(self.element_id(i, j + 1))
        return out

    def interior_faces(self):
        """Yield (axis, i, j, e_minus, e_plus) for all interior grid faces.

        axis 0: face normal along x, between elements (i, j) and (i+1, j).
        axis 1: face normal along y, between elements (i, j) and (i, j+1).
        """
        for j in range(self.ny):
            for i in range(self.nx - 1):
                yield 0, i, j, self.element_id(i, j), self.element_id(i + 1, j)
        for j in range(self.ny - 1):
            for i in range(self.nx):
                yield 1, i, j, self.element_id(i, j), self.element_id(i, j + 1)

    def face_segment(self, axis: int, i: int, j: int):
        """Physical endpoints of the shared face between the two elements."""
        h = self.h
        if axis == 0:
            x = self.origin[0] + (i + 1) * h
            y0 = self.origin[1] + j * h
            return (x, y0), (x, y0 + h)
        y = self.origin[1] + (j + 1) * h
        x0 = self.origin[0] + i * h
        return (x0, y), (x0 + h, y)


@dataclass(frozen=True)
class Face:
    axis: int     # 0: normal along x, 1: normal along y
    i: int
    j: int
    e_minus: int
    e_plus: int


# ---------------------------------------------------------------------------
# Active mesh
# ---------------------------------------------------------------------------

@dataclass
class ActiveMesh:
    mesh: BackgroundMesh
    levelset: LevelSet
    element_class: np.ndarray        # int per background element
    eta: np.ndarray                  # volume fraction per background element
    active_elements: list = field(default_factory=list)
    interior_elements: list = field(default_factory=list)
    cut_elements: list = field(default_factory=list)
    ghost_face_list: list = field(default_factory=list)

    def is_active(self, e: int) -> bool:
        return self.element_class[e] != EXTERIOR

    @property
    def eta_min(self) -> float:
        """Smallest volume fraction among cut elements (1.0 if none are cut)."""
        if not self.cut_elements:
            return 1.0
        return float(min(self.eta[e] for e in self.cut_elements))


def volume_fraction(element_box, geo: LevelSet, quadcfg) -> float:
    """|T intersect Omega| / |T| from the bulk cut-quadrature rule."""
    from .quadrature import cut_cell_bulk_weight_sum

    x0, y0, x1, y1 = element_box
    area = (x1 - x0) * (y1 - y0)
    return cut_cell_bulk_weight_sum(element_box, geo, quadcfg) / area


def _corner_sign_grid(mesh: BackgroundMesh, geo: LevelSet, samples_per_edge: int):
    """phi signs on a refined vertex grid; -1 inside (phi <= vertex tol), +1 outside."""
    m = samples_per_edge
    xs = mesh.origin[0] + np.arange(m * mesh.nx + 1) * (mesh.h / m)
    ys = mesh.origin[1] + np.arange(m * mesh.ny + 1) * (mesh.h / m)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    phi = geo.value(X, Y)
    return np.where(phi <= VERTEX_TOL * mesh.h, -1, 1)


def classify_elements(mesh: BackgroundMesh, geo: LevelSet, quadcfg=None) -> ActiveMesh:
    """Classify every background element as interior, cut, or exterior.

    Elements whose sign samples disagree get a volume fraction from the cut
    quadrature; eta within CUT_TOL of 0 or 1 snaps to exterior/interior.
    Raises GeometryError("empty active mesh") if no element intersects Omega.
    """
    from .quadrature import QuadConfig

    if quadcfg is None:
        quadcfg = QuadConfig()

    # 5x5 sign samples per element catch boundary bulges that corner signs miss.
    m = 4
    signs = _corner_sign_grid(mesh, geo, m)
    n = mesh.n_elements
    element_class = np.empty(n, dtype=int)
    eta = np.zeros(n)
    for e in range(n):
        i, j = mesh.element_ij(e)
        block = signs[m * i:m * i + m + 1, m * j:m * j + m + 1]
        if np.all(block < 0):
            element_class[e] = INTERIOR
            eta[e] = 1.0
        elif np.all(block > 0):
            element_class[e] = EXTERIOR
        else:
            frac = volume_fraction(mesh.element_box(e), geo, quadcfg)
            eta[e] = frac
            if frac <= CUT_TOL:
                element_class[e] = EXTERIOR
                eta[e] = 0.0
            elif frac >= 1.0 - CUT_TOL:
                element_class[e] = INTERIOR
                eta[e] = 1.0
            else:
                element_class[e] = CUT

    active = [e for e in range(n) if element_class[e] != EXTERIOR]
    if not active:
        raise GeometryError("empty active mesh")
    interior = [e for e in active if element_class[e] == INTERIOR]
    cut = [e for e in active if element_class[e] == CUT]
    am = ActiveMesh(mesh=mesh, levelset=geo, element_class=element_class, eta=eta,
                    active_elements=active, interior_elements=interior,
                    cut_elements=cut)
    am.ghost_face_list = ghost_faces(am)
    return am


def ghost_faces(active: ActiveMesh) -> list:
    """Interior faces of the active mesh with at least one cut neighbor."""
    cls = active.element_class
    faces = []
    for axis, i, j, em, ep in active.mesh.interior_faces():
        if cls[em] == EXTERIOR or cls[ep] == EXTERIOR:
            continue
        if cls[em] == CUT or cls[ep] == CUT:
            faces.append(Face(axis, i, j, em, ep))
    return faces

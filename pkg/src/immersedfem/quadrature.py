"""Cut-cell quadrature: recursive quadtree bisection with tessellation at the
lowest level.

Bulk rules integrate over the part of an element inside the domain, boundary
rules over the immersed boundary inside the element, with unit outward normals.
All bulk weights are strictly positive by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import VERTEX_TOL, CUT, EXTERIOR, INTERIOR, LevelSet

INSIDE_CELL = "inside"
OUTSIDE_CELL = "outside"
CUT_CELL = "cut-at-max-depth"

_ZERO_LENGTH = 1e-14


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class QuadConfig:
    """Quadtree depth and Gauss orders. `order` should track p+1 of the space."""
    depth: int = 6
    order: int = 2
    boundary_order: int = 2

    def __post_init__(self):
        if self.depth < 0:
            raise QuadratureError("depth must be >= 0")
        if self.order < 1 or self.boundary_order < 1:
            raise QuadratureError("Gauss orders must be >= 1")


@dataclass
class QuadRule:
    points: np.ndarray    # (n, 2) physical coordinates
    weights: np.ndarray   # (n,)


@dataclass
class CutQuadrature:
    bulk: QuadRule
    boundary_points: np.ndarray    # (m, 2)
    boundary_weights: np.ndarray   # (m,)
    boundary_normals: np.ndarray   # (m, 2), unit, pointing out of Omega


def gauss_legendre(n: int):
    """Gauss-Legendre points and weights on [0, 1]; exact to degree 2n-1."""
    if not 1 <= n <= 20:
        raise QuadratureError(f"gauss_legendre order {n} out of range [1, 20]")
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


# ---------------------------------------------------------------------------
# Quadtree
# ---------------------------------------------------------------------------

def _subdivide_batch(element_box, geo: LevelSet, depth: int):
    """Level-synchronous quadtree bisection.

    Returns (inside_boxes, outside_boxes, cut_boxes, cut_phi) with boxes as
    (m, 4) arrays and cut_phi the 3x3 sample values of each cut leaf, indexed
    phi[m, ix, iy].
    """
    x0, y0, x1, y1 = element_box
    tol = VERTEX_TOL * max(x1 - x0, y1 - y0)
    pending = np.array([[x0, y0, x1, y1]], dtype=float)
    inside, outside = [], []
    cut = np.zeros((0, 4))
    cut_phi = np.zeros((0, 3, 3))
    for level in range(depth + 1):
        if not len(pending):
            break
        bx0, by0, bx1, by1 = pending.T
        fx = np.stack([bx0, 0.5 * (bx0 + bx1), bx1], axis=1)
        fy = np.stack([by0, 0.5 * (by0 + by1), by1], axis=1)
        X = np.repeat(fx[:, :, None], 3, axis=2)
        Y = np.repeat(fy[:, None, :], 3, axis=1)
        phi = np.asarray(geo.value(X, Y), dtype=float)
        pmax = phi.max(axis=(1, 2))
        pmin = phi.min(axis=(1, 2))
        is_in = pmax <= tol
        is_out = ~is_in & (pmin >= -tol)
        mixed = ~is_in & ~is_out
        if is_in.any():
            inside.append(pending[is_in])
        if is_out.any():
            outside.append(pending[is_out])
        if level == depth:
            cut = pending[mixed]
            cut_phi = phi[mixed]
            break
        boxes = pending[mixed]
        mx = 0.5 * (boxes[:, 0] + boxes[:, 2])
        my = 0.5 * (boxes[:, 1] + boxes[:, 3])
        pending = np.vstack([
            np.column_stack([boxes[:, 0], boxes[:, 1], mx, my]),
            np.column_stack([mx, boxes[:, 1], boxes[:, 2], my]),
            np.column_stack([boxes[:, 0], my, mx, boxes[:, 3]]),
            np.column_stack([mx, my, boxes[:, 2], boxes[:, 3]]),
        ])
    stack = (lambda parts: np.vstack(parts) if parts else np.zeros((0, 4)))
    return stack(inside), stack(outside), cut, cut_phi


def quadtree_subdivide(element_box, geo: LevelSet, cfg: QuadConfig):
    """Recursively bisect an element; returns a list of (sub-box, status).

    A sub-cell is inside when no sample of the 3x3 stencil exceeds the vertex
    tolerance, outside when no sample falls below it, and otherwise bisected
    until `cfg.depth`, where it is reported as cut.
    """
    ins, outs, cut, _ = _subdivide_batch(element_box, geo, cfg.depth)
    leaves = [(tuple(b), INSIDE_CELL) for b in ins]
    leaves += [(tuple(b), OUTSIDE_CELL) for b in outs]
    leaves += [(tuple(b), CUT_CELL) for b in cut]
    return leaves


# ---------------------------------------------------------------------------
# Tessellation (marching squares with linear edge roots)
# ---------------------------------------------------------------------------

def _edge_root(pa, pb, fa, fb):
    denom = fa - fb
    t = 0.5 if denom == 0 else fa / denom
    t = min(max(t, 0.0), 1.0)
    return (pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]))


def _tessellate_values(box, corner_phi, center_phi, tol):
    """Marching squares given phi at the corners (BL, BR, TR, TL) and center."""
    x0, y0, x1, y1 = box
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    phi = corner_phi
    inside = [f <= tol for f in phi]
    k = sum(inside)

    if k == 0:
        return [], []
    if k == 4:
        return [np.array(corners)], []

    roots = {}
    for a in range(4):
        b = (a + 1) % 4
        if inside[a] != inside[b]:
            roots[(a, b)] = _edge_root(corners[a], corners[b], phi[a], phi[b])

    if k == 2 and inside[0] == inside[2]:
        # diagonal (saddle) pattern: connect through the center or split
        center_in = center_phi <= tol
        r01, r12 = roots[(0, 1)], roots[(1, 2)]
        r23, r30 = roots[(2, 3)], roots[(3, 0)]
        if inside[0]:
            if center_in:
                polys = [np.array([corners[0], r01, r12, corners[2], r23, r30])]
                segs = [(r01, r12), (r23, r30)]
            else:
                polys = [np.array([corners[0], r01, r30]),
                         np.array([corners[2], r23, r12])]
                segs = [(r01, r30), (r12, r23)]
        else:
            if center_in:
                polys = [np.array([corners[1], r12, r23, corners[3], r30, r01])]
                segs = [(r12, r23), (r30, r01)]
            else:
                polys = [np.array([corners[1], r12, r01]),
                         np.array([corners[3], r30, r23])]
                segs = [(r01, r12), (r23, r30)]
        return polys, segs

    # non-saddle: walk the cell boundary, keeping inside corners and crossings
    poly, seg_pts = [], []
    for a in range(4):
        b = (a + 1) % 4
        if inside[a]:
            poly.append(corners[a])
        if (a, b) in roots:
            poly.append(roots[(a, b)])
            seg_pts.append(roots[(a, b)])
    segments = [(seg_pts[0], seg_pts[1])] if len(seg_pts) == 2 else []
    return [np.array(poly)], segments


def tessellate(box, geo: LevelSet):
    """Marching squares on one cut sub-cell.

    Returns (polygons, segments): polygons cover the inside part of the cell,
    segments reconstruct the boundary.  The ambiguous saddle configuration is
    resolved by the sign of phi at the cell center.
    """
    x0, y0, x1, y1 = box
    tol = VERTEX_TOL * max(x1 - x0, y1 - y0)
    corner_phi = [float(geo.value(px, py))
                  for px, py in ((x0, y0), (x1, y0), (x1, y1), (x0, y1))]
    center_phi = float(geo.value(0.5 * (x0 + x1), 0.5 * (y0 + y1)))
    return _tessellate_values(box, corner_phi, center_phi, tol)


def _polygon_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


# ---------------------------------------------------------------------------
# Batched rules
# ---------------------------------------------------------------------------

def _tensor_rule_batch(boxes, n):
    """Tensor Gauss rules on (m, 4) boxes, concatenated."""
    if not len(boxes):
        return np.zeros((0, 2)), np.zeros(0)
    g, w = gauss_legendre(n)
    gx = boxes[:, 0:1] + (boxes[:, 2:3] - boxes[:, 0:1]) * g   # (m, n)
    gy = boxes[:, 1:2] + (boxes[:, 3:4] - boxes[:, 1:2]) * g
    X = np.repeat(gx[:, :, None], n, axis=2)
    Y = np.repeat(gy[:, None, :], n, axis=1)
    area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    W = area[:, None, None] * np.outer(w, w)[None, :, :]
    return (np.column_stack([X.ravel(), Y.ravel()]), W.ravel())


def _triangle_rule_batch(tris, n):
    """Duffy rules on (m, 3, 2) triangles; weights stay positive."""
    if not len(tris):
        return np.zeros((0, 2)), np.zeros(0)
    g, w = gauss_legendre(n)
    U, V = np.meshgrid(g, g, indexing="ij")
    U, V = U.ravel()[None, :], V.ravel()[None, :]
    WU = np.outer(w, w).ravel()[None, :]
    v0, v1, v2 = tris[:, 0], tris[:, 1], tris[:, 2]
    e1, e2 = v1 - v0, v2 - v0
    jac = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])[:, None]
    px = v0[:, 0:1] + U * (v1[:, 0:1] - v0[:, 0:1]) + U * V * (v2[:, 0:1] - v1[:, 0:1])
    py = v0[:, 1:2] + U * (v1[:, 1:2] - v0[:, 1:2]) + U * V * (v2[:, 1:2] - v1[:, 1:2])
    wts = (WU * U * jac).ravel()
    pts = np.column_stack([px.ravel(), py.ravel()])
    keep = wts > 0
    return pts[keep], wts[keep]


def _fan_triangles(poly):
    centroid = poly.mean(axis=0)
    m = len(poly)
    return [(centroid, poly[k], poly[(k + 1) % m]) for k in range(m)]


def _segment_rule_batch(segments, geo, n, h):
    """1D Gauss rules on boundary segments with sign-corrected unit normals."""
    segs = np.asarray([(a[0], a[1], b[0], b[1]) for a, b in segments])
    lengths = np.hypot(segs[:, 2] - segs[:, 0], segs[:, 3] - segs[:, 1])
    keep = lengths >= _ZERO_LENGTH * h
    segs, lengths = segs[keep], lengths[keep]
    if not len(segs):
        return np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2))
    g, w = gauss_legendre(n)
    px = segs[:, 0:1] + (segs[:, 2:3] - segs[:, 0:1]) * g   # (m, n)
    py = segs[:, 1:2] + (segs[:, 3:4] - segs[:, 1:2]) * g
    wts = lengths[:, None] * w[None, :]
    gx, gy = geo.gradient(px, py)
    gx, gy = np.asarray(gx, dtype=float), np.asarray(gy, dtype=float)
    norm = np.hypot(gx, gy)
    norm = np.where(norm == 0, 1.0, norm)
    nx, ny = gx / norm, gy / norm
    eps = 1e-6 * h
    ahead = geo.value(px + eps * nx, py + eps * ny)
    behind = geo.value(px - eps * nx, py - eps * ny)
    flip = np.asarray(ahead < behind)
    nx = np.where(flip, -nx, nx)
    ny = np.where(flip, -ny, ny)
    return (np.column_stack([px.ravel(), py.ravel()]), wts.ravel(),
            np.column_stack([nx.ravel(), ny.ravel()]))


# ---------------------------------------------------------------------------
# Assembled rules
# ---------------------------------------------------------------------------

def cut_quadrature(element_box, geo: LevelSet, cfg: QuadConfig,
                   element_class=CUT) -> CutQuadrature:
    """Bulk + boundary rule for one element.

    Interior elements get the plain tensor Gauss rule; exterior elements get
    empty rules; cut elements are treated by quadtree subdivision with
    marching-squares tessellation at the lowest level.
    """
    empty2 = np.zeros((0, 2))
    empty1 = np.zeros(0)
    if element_class == EXTERIOR:
        return CutQuadrature(QuadRule(empty2, empty1), empty2, empty1, empty2)
    if element_class == INTERIOR:
        pts, wts = _tensor_rule_batch(np.array([element_box], dtype=float),
                                      cfg.order)
        return CutQuadrature(QuadRule(pts, wts), empty2, empty1, empty2)

    h = max(element_box[2] - element_box[0], element_box[3] - element_box[1])
    tol = VERTEX_TOL * h
    ins, _, cut, cut_phi = _subdivide_batch(element_box, geo, cfg.depth)
    pts_in, wts_in = _tensor_rule_batch(ins, cfg.order)

    tris, segments = [], []
    for box, phi in zip(cut, cut_phi):
        corner_phi = [phi[0, 0], phi[2, 0], phi[2, 2], phi[0, 2]]
        polys, segs = _tessellate_values(tuple(box), corner_phi, phi[1, 1], tol)
        for poly in polys:
            if _polygon_area(poly) >= _ZERO_LENGTH * h * h:
                tris.extend(_fan_triangles(poly))
        segments.extend(segs)

    # Duffy maps and segment restrictions raise the polynomial degree, so the
    # tessellated pieces need 2n-1 points to match the exactness of the
    # order-n tensor rule on the square sub-cells.
    pts_tri, wts_tri = _triangle_rule_batch(np.asarray(tris), 2 * cfg.order - 1)
    bulk = QuadRule(np.vstack([pts_in, pts_tri]),
                    np.concatenate([wts_in, wts_tri]))
    if segments:
        bp, bw, bn = _segment_rule_batch(segments, geo,
                                         2 * cfg.boundary_order - 1, h)
    else:
        bp, bw, bn = empty2, empty1, empty2
    return CutQuadrature(bulk, bp, bw, bn)


def cut_cell_bulk_weight_sum(element_box, geo: LevelSet, cfg: QuadConfig) -> float:
    """Measure of the inside part of an element (area-only fast path)."""
    h = max(element_box[2] - element_box[0], element_box[3] - element_box[1])
    tol = VERTEX_TOL * h
    ins, _, cut, cut_phi = _subdivide_batch(element_box, geo, cfg.depth)
    total = float(((ins[:, 2] - ins[:, 0]) * (ins[:, 3] - ins[:, 1])).sum()) \
        if len(ins) else 0.0
    for box, phi in zip(cut, cut_phi):
        corner_phi = [phi[0, 0], phi[2, 0], phi[2, 2], phi[0, 2]]
        polys, _ = _tessellate_values(tuple(box), corner_phi, phi[1, 1], tol)
        total += sum(_polygon_area(p) for p in polys)
    return total


def segment_cut_rule(p0, p1, geo: LevelSet, order: int, depth: int, h: float):
    """1D cut quadrature on the segment p0 -> p1 restricted to the inside of
    the domain (used for fitted box sides crossed by the immersed boundary)."""
    tol = VERTEX_TOL * h
    g, w = gauss_legendre(order)
    pts, wts = [], []
    full = np.hypot(p1[0] - p0[0], p1[1] - p0[1])

    def emit_interval(t0, t1):
        seg_len = (t1 - t0) * full
        if seg_len < _ZERO_LENGTH * h:
            return
        tq = t0 + (t1 - t0) * g
        pts.append(np.column_stack([p0[0] + (p1[0] - p0[0]) * tq,
                                    p0[1] + (p1[1] - p0[1]) * tq]))
        wts.append(w * seg_len)

    def recurse(t0, t1, depth_left):
        ts = np.array([t0, 0.5 * (t0 + t1), t1])
        phi = np.asarray(geo.value(p0[0] + (p1[0] - p0[0]) * ts,
                                   p0[1] + (p1[1] - p0[1]) * ts), dtype=float)
        if phi.max() <= tol:
            emit_interval(t0, t1)
        elif phi.min() >= -tol:
            return
        elif depth_left == 0:
            f0, f1 = float(phi[0]), float(phi[2])
            ta, tb, fa, fb = (t0, t1, f0, f1) if f0 <= f1 else (t1, t0, f1, f0)
            tr = ta + (tb - ta) * (0.5 if fa == fb else fa / (fa - fb))
            emit_interval(min(ta, tr), max(ta, tr))
        else:
            tm = 0.5 * (t0 + t1)
            recurse(t0, tm, depth_left - 1)
            recurse(tm, t1, depth_left - 1)

    recurse(0.0, 1.0, depth)
    if not pts:
        return np.zeros((0, 2)), np.zeros(0)
    return np.vstack(pts), np.concatenate(wts)


def active_mesh_quadrature(active, cfg: QuadConfig):
    """Cut quadrature for every active element, keyed by element id."""
    rules = {}
    for e in active.active_elements:
        rules[e] = cut_quadrature(active.mesh.element_box(e), active.levelset,
                                  cfg, active.element_class[e])
    return rules

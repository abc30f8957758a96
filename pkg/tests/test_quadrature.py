import numpy as np
import pytest

from immersedfem.geometry import CUT, INTERIOR, BackgroundMesh, Circle, Plane, \
    classify_elements, parse_geometry
from immersedfem.quadrature import (CUT_CELL, INSIDE_CELL, OUTSIDE_CELL,
                                    QuadConfig, QuadratureError, cut_quadrature,
                                    gauss_legendre, quadtree_subdivide,
                                    segment_cut_rule, tessellate)


def test_gauss_legendre_basic():
    x, w = gauss_legendre(1)
    assert x[0] == pytest.approx(0.5) and w[0] == pytest.approx(1.0)
    x, w = gauss_legendre(2)
    assert np.allclose(sorted(x), [0.5 - 1 / (2 * np.sqrt(3)), 0.5 + 1 / (2 * np.sqrt(3))])
    assert np.allclose(w, [0.5, 0.5])
    # degree-3 exactness: int_0^1 x^3 dx = 1/4
    assert np.dot(w, x ** 3) == pytest.approx(0.25, abs=1e-15)
    for n in range(1, 21):
        x, w = gauss_legendre(n)
        assert w.sum() == pytest.approx(1.0, abs=1e-13)
        assert np.all(w > 0)
    with pytest.raises(QuadratureError):
        gauss_legendre(0)
    with pytest.raises(QuadratureError):
        gauss_legendre(21)


def test_quadtree_aligned_plane_no_cut_cells():
    geo = Plane(1, 0, 0.5)
    leaves = quadtree_subdivide((0.0, 0.0, 1.0, 1.0), geo, QuadConfig(depth=1))
    statuses = sorted(s for _, s in leaves)
    assert statuses == [INSIDE_CELL, INSIDE_CELL, OUTSIDE_CELL, OUTSIDE_CELL]


def test_quadtree_depth_zero_returns_cut_element():
    geo = Plane(1, 0, 0.37)
    leaves = quadtree_subdivide((0.0, 0.0, 1.0, 1.0), geo, QuadConfig(depth=0))
    assert leaves == [((0.0, 0.0, 1.0, 1.0), CUT_CELL)]


def test_quadtree_inside_cells_have_negative_corners():
    geo = Circle(0.5, 0.5, 0.4)
    leaves = quadtree_subdivide((0.0, 0.0, 1.0, 1.0), geo, QuadConfig(depth=3))
    inside = [box for box, s in leaves if s == INSIDE_CELL]
    assert inside
    for x0, y0, x1, y1 in inside:
        corners = geo.value(np.array([x0, x1, x1, x0]), np.array([y0, y0, y1, y1]))
        assert np.all(corners <= 1e-13)


def test_tessellate_full_square():
    polys, segs = tessellate((0.0, 0.0, 1.0, 1.0), Plane(1, 0, 5.0))
    assert len(polys) == 1 and len(segs) == 0
    assert polys[0].shape == (4, 2)


def test_tessellate_corner_triangle():
    # roots at the midpoints of the two edges at the inside corner
    geo = Plane(1, 1, 0.5)   # x + y < 0.5 (c is normalized with n)
    polys, segs = tessellate((0.0, 0.0, 1.0, 1.0), geo)
    assert len(polys) == 1 and len(segs) == 1
    x, y = polys[0][:, 0], polys[0][:, 1]
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
    assert area == pytest.approx(1.0 / 8.0, abs=1e-14)
    (a, b), = [segs[0]]
    length = np.hypot(b[0] - a[0], b[1] - a[1])
    assert length == pytest.approx(np.sqrt(2) / 2, abs=1e-14)


def test_tessellate_handles_all_sign_patterns():
    # sweep planes through the cell in many orientations plus saddle cases
    rng = np.random.default_rng(7)
    for _ in range(200):
        nx, ny = rng.standard_normal(2)
        if abs(nx) + abs(ny) < 1e-3:
            continue
        c = rng.uniform(-1, 1)
        polys, segs = tessellate((0.0, 0.0, 1.0, 1.0), Plane(nx, ny, c))
        for p in polys:
            assert len(p) >= 3
    # genuine saddle: product level set, alternating corner signs
    class Saddle:
        def value(self, x, y):
            return (np.asarray(x) - 0.5) * (np.asarray(y) - 0.5)

        def gradient(self, x, y):
            return np.asarray(y) - 0.5, np.asarray(x) - 0.5

    polys, segs = tessellate((0.0, 0.0, 1.0, 1.0), Saddle())
    assert len(segs) == 2 and len(polys) >= 1
    # at the cell level the saddle is only topological; the refined rule
    # recovers the true measure of the two inside quadrants
    q = cut_quadrature((0.0, 0.0, 1.0, 1.0), Saddle(), QuadConfig(depth=8), CUT)
    assert q.bulk.weights.sum() == pytest.approx(0.5, abs=1e-4)


def test_cut_quadrature_slab():
    h = 0.25
    c = 0.1 + 0.17 * h   # interior to the first element
    geo = parse_geometry(f"plane:1,0,{c}")
    q = cut_quadrature((0.1, 0.3, 0.1 + h, 0.3 + h), geo, QuadConfig(depth=6), CUT)
    assert q.bulk.weights.sum() == pytest.approx(0.17 * h * h, abs=1e-12)
    assert q.boundary_weights.sum() == pytest.approx(h, abs=1e-12)
    assert np.allclose(q.boundary_normals, [1.0, 0.0])


def test_cut_quadrature_interior_equals_tensor_rule():
    geo = Plane(1, 0, 10.0)
    cfg = QuadConfig(depth=6, order=3)
    q = cut_quadrature((0.0, 0.0, 0.5, 0.5), geo, cfg, INTERIOR)
    g, w = gauss_legendre(3)
    expected = np.outer(w, w).ravel() * 0.25
    assert np.array_equal(np.sort(q.bulk.weights), np.sort(expected))
    assert q.bulk.weights.sum() == pytest.approx(0.25, abs=1e-15)
    assert len(q.boundary_weights) == 0


def test_circle_arc_length_and_area_depth8():
    mesh = BackgroundMesh(nx=8, ny=8)
    geo = Circle(0.5, 0.5, 0.3)
    cfg = QuadConfig(depth=8)
    am = classify_elements(mesh, geo, cfg)
    area = arc = 0.0
    for e in am.active_elements:
        q = cut_quadrature(mesh.element_box(e), geo, cfg, am.element_class[e])
        area += q.bulk.weights.sum()
        arc += q.boundary_weights.sum()
    assert abs(area - np.pi * 0.09) / (np.pi * 0.09) < 1e-4
    assert abs(arc - 2 * np.pi * 0.3) / (2 * np.pi * 0.3) < 1e-4


def test_depth_refinement_richardson():
    # error of the bulk measure drops by more than 4x per two extra levels
    geo = Circle(0.35, 0.42, 0.27)
    box = (0.0, 0.0, 1.0, 1.0)
    errs = {}
    ref = cut_quadrature(box, geo, QuadConfig(depth=12), CUT).bulk.weights.sum()
    for d in (2, 4, 6):
        val = cut_quadrature(box, geo, QuadConfig(depth=d), CUT).bulk.weights.sum()
        errs[d] = abs(val - ref)
    assert errs[4] < errs[2] / 4
    assert errs[6] < errs[4] / 4


def test_area_error_monotone_with_depth():
    geo = Circle(0.5, 0.5, 0.3)
    box = (0.5, 0.625, 0.625, 0.75)
    ref = cut_quadrature(box, geo, QuadConfig(depth=12), CUT).bulk.weights.sum()
    prev = np.inf
    for d in range(1, 7):
        err = abs(cut_quadrature(box, geo, QuadConfig(depth=d), CUT).bulk.weights.sum() - ref)
        assert err < prev + 1e-14
        prev = err


def test_bulk_weights_positive_random_cuts():
    rng = np.random.default_rng(42)
    cfg = QuadConfig(depth=4)
    for _ in range(50):
        kind = rng.integers(3)
        if kind == 0:
            geo = Circle(rng.uniform(-0.5, 1.5), rng.uniform(-0.5, 1.5),
                         rng.uniform(0.1, 1.0))
        elif kind == 1:
            geo = Plane(rng.standard_normal() or 1.0, rng.standard_normal(),
                        rng.uniform(-0.5, 1.5))
        else:
            geo = parse_geometry(
                f"corner:{rng.uniform(0, 1)},{rng.uniform(0, 1)},{rng.uniform(0.01, 0.5)}")
        q = cut_quadrature((0.0, 0.0, 1.0, 1.0), geo, cfg, CUT)
        assert np.all(q.bulk.weights > 0)


def test_boundary_normals_unit_and_outward():
    # The eps-window check needs the quadrature points within eps of the zero
    # level: exact for planes at any depth, depth 10 for the curved boundary.
    cases = [(Plane(2, 1, 0.8), QuadConfig(depth=3)),
             (Circle(0.5, 0.5, 0.3), QuadConfig(depth=10))]
    mesh = BackgroundMesh(nx=8, ny=8)
    eps = 1e-6 * mesh.h
    for geo, cfg in cases:
        am = classify_elements(mesh, geo, cfg)
        for e in am.cut_elements:
            q = cut_quadrature(mesh.element_box(e), geo, cfg, am.element_class[e])
            if not len(q.boundary_weights):
                continue
            n = q.boundary_normals
            assert np.all(np.abs(np.hypot(n[:, 0], n[:, 1]) - 1.0) < 1e-12)
            x, y = q.boundary_points[:, 0], q.boundary_points[:, 1]
            ahead = geo.value(x + eps * n[:, 0], y + eps * n[:, 1])
            behind = geo.value(x - eps * n[:, 0], y - eps * n[:, 1])
            assert np.all(ahead > 0) and np.all(behind < 0)


def test_segment_cut_rule():
    geo = Plane(1, 0, 0.4)
    pts, wts = segment_cut_rule((0.0, 0.0), (1.0, 0.0), geo, 3, 8, 1.0)
    assert wts.sum() == pytest.approx(0.4, abs=1e-12)
    assert np.all(pts[:, 0] < 0.4 + 1e-9)
    # fully outside segment
    _, wts = segment_cut_rule((0.6, 0.0), (1.0, 0.0), geo, 3, 8, 1.0)
    assert wts.sum() == 0.0


def test_quadconfig_validation():
    with pytest.raises(QuadratureError):
        QuadConfig(depth=-1)
    with pytest.raises(QuadratureError):
        QuadConfig(order=0)

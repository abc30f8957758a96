import numpy as np
import pytest

from immersedfem.geometry import (Annulus, BackgroundMesh, Circle, Corner,
                                  GeometryError, INTERIOR, CUT, EXTERIOR,
                                  classify_elements, ghost_faces,
                                  parse_geometry, volume_fraction)
from immersedfem.quadrature import QuadConfig


def brute_force_classes(mesh, geo, m=64):
    """Sign-sampling oracle on an m x m point grid per element."""
    out = []
    for e in range(mesh.n_elements):
        x0, y0, x1, y1 = mesh.element_box(e)
        X, Y = np.meshgrid(np.linspace(x0, x1, m), np.linspace(y0, y1, m))
        frac = (geo.value(X, Y) < 0).mean()
        out.append(INTERIOR if frac == 1.0 else (EXTERIOR if frac == 0.0 else CUT))
    return np.array(out)


def test_parse_geometry_literals():
    c = parse_geometry("circle:0.5,0.5,0.3")
    assert isinstance(c, Circle) and c.r == 0.3
    p = parse_geometry("plane:2,0,1.0")
    assert abs(p.nx - 1.0) < 1e-15 and abs(p.c - 0.5) < 1e-15  # normalized
    assert isinstance(parse_geometry("corner:0.5,0.5,0.1"), Corner)
    a = parse_geometry("annulus:0.5,0.5,0.2,0.4")
    assert isinstance(a, Annulus)
    with pytest.raises(GeometryError):
        parse_geometry("blob:1,2,3")
    with pytest.raises(GeometryError):
        parse_geometry("circle:1,2")
    with pytest.raises(GeometryError):
        parse_geometry("annulus:0.5,0.5,0.4,0.2")


def test_level_set_values():
    c = Circle(0.5, 0.5, 0.3)
    assert c.value(0.5, 0.5) < 0 < c.value(0.0, 0.0)
    k = Corner(0.5, 0.5, 0.1)
    assert k.value(0.55, 0.55) < 0 < k.value(0.65, 0.55)
    a = Annulus(0.5, 0.5, 0.2, 0.4)
    assert a.value(0.8, 0.5) < 0  # distance 0.3 inside the ring
    assert a.value(0.5, 0.5) > 0


def test_mesh_indexing():
    mesh = BackgroundMesh(nx=4, ny=3, extent=(4.0, 3.0))
    assert mesh.h == 1.0
    for e in range(mesh.n_elements):
        i, j = mesh.element_ij(e)
        assert mesh.element_id(i, j) == e
    with pytest.raises(GeometryError):
        BackgroundMesh(nx=4, ny=3)  # not quasi-uniform on the unit box


def test_plane_all_inside_is_interior():
    mesh = BackgroundMesh(nx=4, ny=4)
    am = classify_elements(mesh, parse_geometry("plane:1,0,2.0"))
    assert np.all(am.element_class == INTERIOR)
    assert np.allclose(am.eta, 1.0)


def test_plane_column_classification_eta_equals_delta():
    # column k is cut with eta = delta, columns < k interior, > k exterior
    mesh = BackgroundMesh(nx=4, ny=4)
    h = mesh.h
    k, delta = 1, 0.3
    am = classify_elements(mesh, parse_geometry(f"plane:1,0,{(k + delta) * h}"))
    for j in range(4):
        assert am.element_class[mesh.element_id(0, j)] == INTERIOR
        assert am.element_class[mesh.element_id(k, j)] == CUT
        assert abs(am.eta[mesh.element_id(k, j)] - delta) < 1e-12
        for i in (2, 3):
            assert am.element_class[mesh.element_id(i, j)] == EXTERIOR


def test_circle_classification_against_brute_force():
    # oracle counts frozen from 64x64 sign sampling per element
    mesh = BackgroundMesh(nx=4, ny=4)
    geo = Circle(0.5, 0.5, 0.3)
    oracle = brute_force_classes(mesh, geo)
    assert [int((oracle == k).sum()) for k in (INTERIOR, CUT, EXTERIOR)] == [0, 12, 4]
    am = classify_elements(mesh, geo)
    assert np.array_equal(am.element_class, oracle)

    mesh8 = BackgroundMesh(nx=8, ny=8)
    oracle8 = brute_force_classes(mesh8, geo)
    am8 = classify_elements(mesh8, geo)
    assert np.array_equal(am8.element_class, oracle8)
    assert [int((oracle8 == k).sum()) for k in (INTERIOR, CUT, EXTERIOR)] == [12, 20, 32]


def test_empty_active_mesh_error():
    mesh = BackgroundMesh(nx=4, ny=4)
    with pytest.raises(GeometryError, match="empty active mesh"):
        classify_elements(mesh, Circle(5.0, 5.0, 0.3))


def test_volume_fraction_cases():
    cfg = QuadConfig(depth=8)
    assert volume_fraction((0.0, 0.0, 0.25, 0.25), parse_geometry("plane:1,0,2"),
                           cfg) == pytest.approx(1.0, abs=1e-14)
    # corner bite of side s = 0.25 h at the element vertex
    h = 0.25
    geo = Corner(0.5, 0.5, 0.25 * h)
    frac = volume_fraction((0.5, 0.5, 0.75, 0.75), geo, cfg)
    assert frac == pytest.approx(0.0625, abs=1e-12)


def test_volume_fraction_circular_segment():
    # circle dipping into the unit element from above: exact segment area
    r, d = 0.5, 0.2
    geo = Circle(0.5, 1.0 + d, r)
    theta = np.arccos(d / r)
    exact = r * r * (theta - np.sin(theta) * np.cos(theta))
    frac = volume_fraction((0.0, 0.0, 1.0, 1.0), geo, QuadConfig(depth=8))
    assert abs(frac - exact) / exact < 1e-4


def test_classification_deterministic():
    mesh = BackgroundMesh(nx=8, ny=8)
    geo = Circle(0.51, 0.49, 0.31)
    a = classify_elements(mesh, geo)
    b = classify_elements(mesh, geo)
    assert np.array_equal(a.element_class, b.element_class)
    assert np.array_equal(a.eta, b.eta)


def test_ghost_faces_all_interior_empty():
    mesh = BackgroundMesh(nx=4, ny=4)
    am = classify_elements(mesh, parse_geometry("plane:1,0,5"))
    assert ghost_faces(am) == []


def test_ghost_faces_single_cut_element():
    # box minus a small disk centered in element (1, 1): one cut element
    mesh = BackgroundMesh(nx=4, ny=4)
    geo = parse_geometry("annulus:0.375,0.375,0.05,10.0")
    am = classify_elements(mesh, geo)
    cut = [e for e in range(16) if am.element_class[e] == CUT]
    assert cut == [mesh.element_id(1, 1)]
    faces = ghost_faces(am)
    assert len(faces) == 4
    for f in faces:
        assert mesh.element_id(1, 1) in (f.e_minus, f.e_plus)


def test_ghost_faces_plane_cut_enumeration():
    # hand enumeration: column 1 cut, column 0 interior, columns 2,3 exterior
    mesh = BackgroundMesh(nx=4, ny=4)
    am = classify_elements(mesh, parse_geometry("plane:1,0,0.3125"))
    faces = ghost_faces(am)
    expected = set()
    for j in range(4):
        expected.add((0, 0, j))        # vertical faces between columns 0 and 1
    for j in range(3):
        expected.add((1, 1, j))        # horizontal faces within column 1
    assert {(f.axis, f.i, f.j) for f in faces} == expected
    # none between the cut column and the exterior column
    for f in faces:
        assert am.element_class[f.e_minus] != EXTERIOR
        assert am.element_class[f.e_plus] != EXTERIOR


def test_class_eta_partition_invariant():
    mesh = BackgroundMesh(nx=8, ny=8)
    am = classify_elements(mesh, Circle(0.47, 0.53, 0.29))
    for e in range(mesh.n_elements):
        if am.element_class[e] == INTERIOR:
            assert am.eta[e] == 1.0
        elif am.element_class[e] == EXTERIOR:
            assert am.eta[e] == 0.0
        else:
            assert 0.0 < am.eta[e] < 1.0
    active = set(am.active_elements)
    assert active == set(am.interior_elements) | set(am.cut_elements)


def test_boundary_through_vertex_is_inside():
    # plane exactly on a grid line: zero-measure column counts as exterior
    mesh = BackgroundMesh(nx=4, ny=4)
    am = classify_elements(mesh, parse_geometry("plane:1,0,0.5"))
    for j in range(4):
        assert am.element_class[mesh.element_id(1, j)] == INTERIOR
        assert am.element_class[mesh.element_id(2, j)] == EXTERIOR

import numpy as np
import pytest

from immersedfem.geometry import BackgroundMesh, classify_elements, parse_geometry
from immersedfem.quadrature import QuadConfig
from immersedfem.spaces import (SpaceError, aggregate, build_constraints,
                                build_space, classify_dofs, interpolate,
                                lagrange_1d, shape_eval)


def make_active(geometry, n=4, depth=6):
    mesh = BackgroundMesh(nx=n, ny=n)
    return classify_elements(mesh, parse_geometry(geometry), QuadConfig(depth=depth))


def test_build_space_dof_counts():
    am = make_active("plane:1,0,5", n=2)
    assert build_space(am, 1).ndof == 9
    assert build_space(am, 2).ndof == 25
    am4 = make_active("plane:1,0,5", n=4)
    assert build_space(am4, 2).ndof == 81
    with pytest.raises(SpaceError):
        build_space(am4, 3)


def test_build_space_drops_exterior_corner_node():
    # diagonal cut making the (1,1) element of a 2x2 mesh fully exterior
    am = make_active("plane:1,1,0.99", n=2)
    assert sorted(am.active_elements) == [0, 1, 2]
    assert build_space(am, 1).ndof == 8


def test_shape_eval_examples():
    assert np.allclose(shape_eval(1, [[0, 0]]), [[1, 0, 0, 0]])
    assert np.allclose(shape_eval(1, [[2, 0]]), [[-1, 2, 0, 0]])
    # second derivative of the p=2 center function along the midline
    for x in (0.0, 0.3, 1.7):
        vals = shape_eval(2, [[x, 0.5]], dx=2)
        assert vals[0, 4] == pytest.approx(-8.0)


def test_shape_eval_partition_of_unity():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-1.5, 2.5, size=(40, 2))
    for p in (1, 2):
        vals = shape_eval(p, pts)
        assert np.allclose(vals.sum(axis=1), 1.0, atol=1e-12)


def test_shape_eval_derivative_order_error():
    with pytest.raises(SpaceError):
        lagrange_1d(1, 0.5, 3)


def test_aggregate_eta_star_zero_trivial():
    am = make_active("circle:0.5,0.5,0.4", n=8)
    agg = aggregate(am, 0.0)
    assert all(agg.root[e] == e for e in am.active_elements)
    assert all(len(m) == 1 for m in agg.members.values())


def test_aggregate_eta_star_one_all_cut_aggregated():
    am = make_active("circle:0.5,0.5,0.4", n=8)
    agg = aggregate(am, 1.0)
    for e in am.cut_elements:
        assert agg.root[e] in am.interior_elements
        assert agg.root[e] != e
    for r, members in agg.members.items():
        seeds = [m for m in members if m in agg.seeds]
        assert seeds == [r]                # exactly one root per aggregate


def test_aggregate_single_cut_neighbor():
    # box minus a small disk bites one element; it must join a neighbor root
    am = make_active("annulus:0.375,0.375,0.05,10.0", n=4)
    cut = am.cut_elements
    assert len(cut) == 1
    agg = aggregate(am, 1.0)
    e = cut[0]
    assert agg.chain_length(e) == 1
    assert len(agg.members[agg.root[e]]) == 2


def test_aggregate_unreachable_error():
    # thin ring resolved only by cut elements: no interior seed anywhere
    am = make_active("annulus:0.5,0.5,0.25,0.3", n=8)
    assert not am.interior_elements
    assert am.cut_elements
    with pytest.raises(SpaceError, match="unreachable"):
        aggregate(am, 1.0)


def test_classify_dofs_all_interior():
    am = make_active("plane:1,0,5", n=4)
    space = build_space(am, 1)
    agg = aggregate(am, 1.0)
    well, ill, ownership = classify_dofs(space, agg)
    assert len(ill) == 0 and len(well) == space.ndof


def test_classify_dofs_far_nodes_ill_posed():
    am = make_active("plane:1,0,0.53125", n=4)   # column 2 cut, eta = 1/8
    space = build_space(am, 1)
    agg = aggregate(am, 1.0)
    well, ill, ownership = classify_dofs(space, agg)
    # nodes on the right edge of the cut column touch no interior element
    right_edge = [d for d in range(space.ndof)
                  if abs(space.node_coords[d, 0] - 0.75) < 1e-12]
    assert set(right_edge) <= set(ill.tolist())
    for d in ill:
        assert ownership[int(d)] in am.interior_elements


def test_ownership_tie_break_lowest_aggregate_id():
    # plane cut: each right-edge node sits between two aggregates whose roots
    # are equidistant; the tie goes to the lower aggregate id
    am = make_active("plane:1,0,0.53125", n=4)
    space = build_space(am, 1)
    agg = aggregate(am, 1.0)
    _, ill, ownership = classify_dofs(space, agg)
    mesh = am.mesh
    for d in ill:
        x, y = space.node_coords[d]
        containing = {agg.root[e] for e in am.cut_elements
                      if d in space.elem_dofs[e]}
        if len(containing) > 1:
            h = mesh.h

            def dist(r):
                x0, y0, x1, y1 = mesh.element_box(r)
                return max(x0 - x, 0, x - x1), max(y0 - y, 0, y - y1)

            dists = {r: max(dist(r)) for r in containing}
            dmin = min(dists.values())
            nearest = [r for r
                       in containing if abs(dists[r] - dmin) < 1e-12]
            assert ownership[int(d)] == min(nearest)


def test_constraints_examples():
    am = make_active("plane:1,0,0.53125", n=4)
    space = build_space(am, 1)
    agg = aggregate(am, 1.0)
    well, ill, ownership = classify_dofs(space, agg)
    cons = build_constraints(space, agg, ownership)
    # every constrained row sums to one (partition of unity of the root basis)
    for d, entries in cons.rows.items():
        assert sum(c for _, c in entries) == pytest.approx(1.0, abs=1e-12)
    # a node one cell right of the root, aligned in y: coefficients (-1, 2)
    d = next(int(d) for d in ill
             if abs(space.node_coords[d, 0] - 0.75) < 1e-12
             and abs(space.node_coords[d, 1] - 0.25) < 1e-12)
    coeffs = sorted(c for _, c in cons.rows[d] if abs(c) > 1e-14)
    assert coeffs == pytest.approx([-1.0, 2.0])


def test_constraints_node_on_root_is_identityish():
    # ill-posed node that coincides with a root node: single coefficient 1
    am = make_active("plane:1,0,0.53125", n=4)
    space = build_space(am, 1)
    agg = aggregate(am, 1.0)
    _, _, ownership = classify_dofs(space, agg)
    cons = build_constraints(space, agg, ownership)
    for d, entries in cons.rows.items():
        x, y = space.node_coords[d]
        r = ownership[d]
        x0, y0, x1, y1 = am.mesh.element_box(r)
        on_root_node = (min(abs(x - x0), abs(x - x1)) < 1e-12
                        and min(abs(y - y0), abs(y - y1)) < 1e-12)
        if on_root_node:
            nz = [(j, c) for j, c in entries if abs(c) > 1e-14]
            assert len(nz) == 1 and nz[0][1] == pytest.approx(1.0)


def test_constraints_max_chain_guard():
    am = make_active("plane:1,0,0.53125", n=4)
    space = build_space(am, 1)
    agg = aggregate(am, 1.0)
    _, _, ownership = classify_dofs(space, agg)
    with pytest.raises(SpaceError, match="max chain"):
        build_constraints(space, agg, ownership, max_chain=0)


def test_interpolate_constant_and_bilinear():
    am = make_active("circle:0.5,0.5,0.4", n=8)
    space = build_space(am, 1)
    agg = aggregate(am, 1.0)
    _, _, ownership = classify_dofs(space, agg)
    cons = build_constraints(space, agg, ownership)
    ones = interpolate(space, lambda x, y: np.ones_like(np.asarray(x) + np.asarray(y)))
    assert np.allclose(ones, 1.0)
    ones_ag = interpolate(space, lambda x, y: np.ones_like(np.asarray(x) + np.asarray(y)), cons)
    assert np.allclose(ones_ag, 1.0, atol=1e-12)
    # global Q1 polynomial is reproduced exactly in the aggregated space
    xy = interpolate(space, lambda x, y: np.asarray(x) * np.asarray(y))
    xy_ag = interpolate(space, lambda x, y: np.asarray(x) * np.asarray(y), cons)
    assert np.allclose(xy, xy_ag, atol=1e-12)


def test_polynomial_reproduction_p2():
    am = make_active("circle:0.5,0.5,0.4", n=8)
    space = build_space(am, 2)
    agg = aggregate(am, 1.0)
    _, _, ownership = classify_dofs(space, agg)
    cons = build_constraints(space, agg, ownership)
    poly = lambda x, y: (np.asarray(x) ** 2) * (np.asarray(y) ** 2) - 3 * np.asarray(x)
    direct = interpolate(space, poly)
    extended = interpolate(space, poly, cons)
    assert np.allclose(direct, extended, atol=1e-11)


def test_interpolation_error_scaling():
    # nodal interpolation of sinsin: exact at nodes, O(h^2) at edge midpoints
    u = lambda x, y: np.sin(np.pi * np.asarray(x)) * np.sin(np.pi * np.asarray(y))
    errs = []
    for n in (8, 16):
        am = make_active("plane:1,0,5", n=n)
        space = build_space(am, 1)
        coeffs = interpolate(space, u)
        assert np.allclose(coeffs, u(space.node_coords[:, 0], space.node_coords[:, 1]))
        # midpoints of horizontal edges
        xm = space.node_coords[:, 0] + 0.5 / n
        keep = xm < 1.0
        vals_mid = np.zeros(keep.sum())
        pts = np.column_stack([xm[keep], space.node_coords[keep, 1]])
        err = 0.0
        for e in space.active.active_elements:
            x0, y0, x1, y1 = space.mesh.element_box(e)
            inside = (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & \
                     (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
            if not inside.any():
                continue
            local = space.tabulate(e, pts[inside]) @ coeffs[space.elem_dofs[e]]
            err = max(err, np.abs(local - u(pts[inside, 0], pts[inside, 1])).max())
        errs.append(err)
    assert errs[1] < errs[0] / 3   # between O(h^2) = 4x and slack


def test_extended_stability_gradient_rayleigh():
    # aggregated-space gradient control is cut-position independent
    from immersedfem.quadrature import active_mesh_quadrature
    from immersedfem.studies import rayleigh_extended_control

    n = 8
    vals = []
    for delta in (1e-1, 1e-3, 1e-5, 1e-8):
        am = make_active(f"plane:1,0,{(4 + delta) / n}", n=n)
        space = build_space(am, 1)
        agg = aggregate(am, 1.0)
        _, _, ownership = classify_dofs(space, agg)
        cons = build_constraints(space, agg, ownership)
        quads = active_mesh_quadrature(am, QuadConfig(depth=6))
        vals.append(rayleigh_extended_control(space, quads, "agfem",
                                              constraints=cons))
    assert max(vals) / min(vals) < 2.0

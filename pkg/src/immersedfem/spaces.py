"""C0 Lagrange Q_p spaces on the active mesh and the aggregation machinery.

Aggregation attaches every ill-posed cut element to a well-posed seed through
face neighbors; ill-posed DOFs are then constrained to the extension of the
owner aggregate's root-element polynomial.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import CUT, INTERIOR, ActiveMesh


class SpaceError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Reference shape functions (equispaced Lagrange nodes on [0, 1])
# ---------------------------------------------------------------------------

def lagrange_1d(p: int, t, deriv: int = 0):
    """Values (or derivatives) of the p+1 one-dimensional Lagrange functions.

    Valid for any real t, including outside [0, 1] (canonical polynomial
    extension).  Only p in {1, 2} and deriv <= 2 are supported.
    """
    t = np.asarray(t, dtype=float)
    if deriv > 2:
        raise SpaceError("derivative order > 2 not supported")
    one = np.ones_like(t)
    zero = np.zeros_like(t)
    if p == 1:
        if deriv == 0:
            return np.stack([1.0 - t, t], axis=-1)
        if deriv == 1:
            return np.stack([-one, one], axis=-1)
        return np.stack([zero, zero], axis=-1)
    if p == 2:
        if deriv == 0:
            return np.stack([2 * t * t - 3 * t + 1,
                             -4 * t * t + 4 * t,
                             2 * t * t - t], axis=-1)
        if deriv == 1:
            return np.stack([4 * t - 3, -8 * t + 4, 4 * t - 1], axis=-1)
        return np.stack([4 * one, -8 * one, 4 * one], axis=-1)
    raise SpaceError(f"unsupported order p={p}")


def shape_eval(p: int, xi, dx: int = 0, dy: int = 0):
    """Tensor-product basis values at reference points xi (n, 2).

    Local ordering is x-fastest: local index = iy*(p+1) + ix.  Reference
    derivatives only; divide by h**(dx+dy) for physical derivatives.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    vx = lagrange_1d(p, xi[:, 0], dx)
    vy = lagrange_1d(p, xi[:, 1], dy)
    return np.einsum("qy,qx->qyx", vy, vx).reshape(xi.shape[0], (p + 1) ** 2)


# ---------------------------------------------------------------------------
# Finite element space
# ---------------------------------------------------------------------------

@dataclass
class FeSpace:
    p: int
    active: ActiveMesh
    ndof: int
    node_coords: np.ndarray          # (N, 2)
    elem_dofs: dict                  # active element -> (p+1)^2 global dofs
    grid_dof: np.ndarray             # (p*nx+1)*(p*ny+1) node grid -> dof or -1

    @property
    def mesh(self):
        return self.active.mesh

    @property
    def h(self) -> float:
        return self.active.mesh.h

    def active_elements_iter(self):
        return iter(self.active.active_elements)

    def element_ref_coords(self, e: int, pts):
        """Map physical points to the element's reference square."""
        x0, y0, _, _ = self.mesh.element_box(e)
        pts = np.atleast_2d(pts)
        return (pts - np.array([x0, y0])) / self.h

    def tabulate(self, e: int, pts, dx: int = 0, dy: int = 0):
        """Physical-derivative basis values of element e at physical points."""
        ref = self.element_ref_coords(e, pts)
        return shape_eval(self.p, ref, dx, dy) / self.h ** (dx + dy)


def build_space(active: ActiveMesh, p: int) -> FeSpace:
    """Q_p space on the active elements, DOFs numbered lexicographically by
    node index (i, j)."""
    if p not in (1, 2):
        raise SpaceError(f"unsupported order p={p}")
    mesh = active.mesh
    gnx, gny = p * mesh.nx + 1, p * mesh.ny + 1
    touched = np.zeros((gnx, gny), dtype=bool)
    for e in active.active_elements:
        i, j = mesh.element_ij(e)
        touched[p * i:p * i + p + 1, p * j:p * j + p + 1] = True

    grid_dof = -np.ones(gnx * gny, dtype=int)
    flat = np.flatnonzero(touched.ravel())     # C-order: lexicographic by (i, j)
    grid_dof[flat] = np.arange(len(flat))

    gi, gj = np.unravel_index(flat, (gnx, gny))
    dh = mesh.h / p
    node_coords = np.column_stack([mesh.origin[0] + gi * dh,
                                   mesh.origin[1] + gj * dh])

    elem_dofs = {}
    for e in active.active_elements:
        i, j = mesh.element_ij(e)
        loc = []
        for iy in range(p + 1):
            for ix in range(p + 1):
                loc.append(grid_dof[(p * i + ix) * gny + (p * j + iy)])
        elem_dofs[e] = np.array(loc, dtype=int)

    return FeSpace(p=p, active=active, ndof=len(flat), node_coords=node_coords,
                   elem_dofs=elem_dofs, grid_dof=grid_dof)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

@dataclass
class AggregateMap:
    eta_star: float
    seeds: set                       # well-posed seed elements
    root: dict                       # element -> root (seed) element id
    chain: dict                      # element -> [element, ..., root]
    members: dict = field(default_factory=dict)   # root -> member elements

    def chain_length(self, e: int) -> int:
        return len(self.chain[e]) - 1

    def aggregate_ids(self):
        return sorted(self.members)


def aggregate(active: ActiveMesh, eta_star: float = 1.0) -> AggregateMap:
    """Front-marching aggregation of ill-posed cut elements onto seeds.

    Seeds are interior elements and cut elements with eta > eta_star.  Each
    pass attaches unassigned ill-posed elements to the face neighbor with the
    shortest chain (lowest element id breaks ties).
    """
    seeds = set(active.interior_elements)
    seeds.update(e for e in active.cut_elements if active.eta[e] > eta_star)

    root = {e: e for e in seeds}
    chain = {e: [e] for e in seeds}
    unassigned = [e for e in active.active_elements if e not in seeds]

    while unassigned:
        attach = {}
        for e in unassigned:
            candidates = [nb for nb in active.mesh.neighbors(e)
                          if nb in root]
            if not candidates:
                continue
            best = min(candidates, key=lambda nb: (len(chain[nb]), nb))
            attach[e] = best
        if not attach:
            raise SpaceError(
                f"cut element {unassigned[0]} is unreachable from any "
                "interior element")
        for e, nb in attach.items():
            root[e] = root[nb]
            chain[e] = [e] + chain[nb]
        unassigned = [e for e in unassigned if e not in attach]

    members = {}
    for e, r in root.items():
        members.setdefault(r, []).append(e)
    for r in members:
        members[r].sort()
    return AggregateMap(eta_star=eta_star, seeds=seeds, root=root, chain=chain,
                        members=members)


def classify_dofs(space: FeSpace, agg: AggregateMap):
    """Split DOFs into well-posed/ill-posed and assign ill-posed owners.

    A DOF is well-posed when supported on at least one seed element.  Among
    the aggregates containing an ill-posed DOF, the owner is the one whose
    root is nearest to the node (constraint coefficients grow fast with the
    extrapolation distance); remaining ties go to the lowest aggregate id.
    """
    supported_on_seed = np.zeros(space.ndof, dtype=bool)
    candidates = {}
    for e, dofs in space.elem_dofs.items():
        if e in agg.seeds:
            supported_on_seed[dofs] = True
        else:
            r = agg.root[e]
            for d in dofs:
                candidates.setdefault(int(d), set()).add(r)
    well_posed = np.flatnonzero(supported_on_seed)
    ill_posed = np.flatnonzero(~supported_on_seed)

    mesh = space.mesh
    h = mesh.h

    def root_distance(d, r):
        x0, y0, x1, y1 = mesh.element_box(r)
        px, py = space.node_coords[d]
        dx = max(x0 - px, 0.0, px - x1)
        dy = max(y0 - py, 0.0, py - y1)
        return round(max(dx, dy) / h, 9)

    ownership = {}
    for d in ill_posed:
        ownership[int(d)] = min(candidates[int(d)],
                                key=lambda r: (root_distance(int(d), r), r))
    return well_posed, ill_posed, ownership


@dataclass
class ConstraintSet:
    well_posed: np.ndarray           # ascending well-posed dof ids
    ill_posed: np.ndarray
    col_of: np.ndarray               # full dof -> column in C (-1 if ill-posed)
    C: sp.csr_matrix                 # (N, N_wp) extension matrix
    rows: dict                       # ill-posed dof -> [(well-posed dof, coeff)]

    @property
    def n_well_posed(self) -> int:
        return len(self.well_posed)


def build_constraints(space: FeSpace, agg: AggregateMap, ownership: dict,
                      max_chain: int = 10) -> ConstraintSet:
    """Constrain each ill-posed DOF to the extension of its owner's root
    polynomial: c_ij = phi_j(alpha_i) on the root element's basis."""
    well_posed, ill_posed, _ = classify_dofs(space, agg)
    col_of = -np.ones(space.ndof, dtype=int)
    col_of[well_posed] = np.arange(len(well_posed))

    rows_i, cols_j, vals = [], [], []
    rows = {}
    rows_i.extend(well_posed.tolist())
    cols_j.extend(range(len(well_posed)))
    vals.extend([1.0] * len(well_posed))

    for d in ill_posed:
        r = ownership[int(d)]
        supporting = [e for e in agg.members[r]
                      if d in space.elem_dofs[e]]
        dist = min(agg.chain_length(e) for e in supporting)
        if dist > max_chain:
            raise SpaceError(
                f"dof {int(d)} is {dist} elements away from root {r} "
                f"(max chain {max_chain})")
        coeffs = space.tabulate(r, space.node_coords[d][None, :])[0]
        entries = []
        for loc, dof_j in enumerate(space.elem_dofs[r]):
            c = float(coeffs[loc])
            if col_of[dof_j] < 0:
                raise SpaceError(f"root element {r} carries ill-posed dof {dof_j}")
            rows_i.append(int(d))
            cols_j.append(int(col_of[dof_j]))
            vals.append(c)
            entries.append((int(dof_j), c))
        rows[int(d)] = entries

    C = sp.coo_matrix((vals, (rows_i, cols_j)),
                      shape=(space.ndof, len(well_posed))).tocsr()
    return ConstraintSet(well_posed=well_posed, ill_posed=ill_posed,
                         col_of=col_of, C=C, rows=rows)


def interpolate(space: FeSpace, u, constraints: ConstraintSet | None = None):
    """Nodal interpolation; with constraints, well-posed nodal values are
    extended through C so the result lands in the aggregated space."""
    values = np.asarray(u(space.node_coords[:, 0], space.node_coords[:, 1]),
                        dtype=float)
    if constraints is None:
        return values
    return constraints.C @ values[constraints.well_posed]

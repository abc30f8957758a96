"""Assembly of the immersed Poisson problem.

Builds the Nitsche bilinear/linear forms on the cut Dirichlet boundary, adds
ghost-penalty stabilization (face- or element-based), applies aggregation
constraints, eliminates strong Dirichlet DOFs on fitted box sides, and
evaluates the norms used in the analysis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import CUT, EXTERIOR, ActiveMesh
from .quadrature import QuadConfig, gauss_legendre, segment_cut_rule
from .spaces import ConstraintSet, FeSpace, shape_eval

_SIDES = ("left", "right", "bottom", "top")


class AssemblyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Problem and stabilization specifications
# ---------------------------------------------------------------------------

@dataclass
class ProblemSpec:
    """Manufactured Poisson problem; g_D and g_N are derived from u."""
    name: str
    u: callable
    grad: callable                  # (x, y) -> (du/dx, du/dy)
    f: callable                     # source, -laplace(u)
    bc_cut: str = "dirichlet"       # boundary condition on the immersed boundary
    fitted: str = "strong-dirichlet"   # treatment of fitted ambient-box sides

    def g_n(self, x, y, nx, ny):
        ux, uy = self.grad(x, y)
        return nx * ux + ny * uy


def manufactured_solution(name: str, bc_cut: str = "dirichlet",
                          fitted: str = "strong-dirichlet") -> ProblemSpec:
    zero = lambda x, y: 0.0 * (np.asarray(x, dtype=float) + np.asarray(y, dtype=float))
    if name == "xy":
        return ProblemSpec(name, lambda x, y: np.asarray(x) * np.asarray(y),
                           lambda x, y: (np.asarray(y, dtype=float) + 0.0,
                                         np.asarray(x, dtype=float) + 0.0),
                           zero, bc_cut, fitted)
    if name == "x2-y2":
        return ProblemSpec(name, lambda x, y: np.asarray(x) ** 2 - np.asarray(y) ** 2,
                           lambda x, y: (2.0 * np.asarray(x), -2.0 * np.asarray(y)),
                           zero, bc_cut, fitted)
    if name == "sinsin":
        pi = np.pi
        return ProblemSpec(
            name,
            lambda x, y: np.sin(pi * x) * np.sin(pi * y),
            lambda x, y: (pi * np.cos(pi * x) * np.sin(pi * y),
                          pi * np.sin(pi * x) * np.cos(pi * y)),
            lambda x, y: 2 * pi ** 2 * np.sin(pi * x) * np.sin(pi * y),
            bc_cut, fitted)
    raise AssemblyError(f"unknown manufactured solution {name!r}")


@dataclass
class StabilizationSpec:
    mode: str = "none"          # none | ghost-face | ghost-elem-s0 | ghost-elem-s1 | agfem
    tau: tuple = (0.1, 0.1)     # per derivative order j = 1..p (or j = 0/1 elementwise)
    neumann_scaling: bool = False   # h^(2j+1) instead of h^(2j-1) in the face penalty
    beta_mode: str = None       # "local" | "global"; default: local iff mode == "none"
    beta_c: float = 10.0

    def __post_init__(self):
        modes = ("none", "ghost-face", "ghost-elem-s0", "ghost-elem-s1", "agfem")
        if self.mode not in modes:
            raise AssemblyError(f"unknown stabilization mode {self.mode!r}")
        if self.mode.startswith("ghost") and any(t <= 0 for t in self.tau):
            raise AssemblyError("ghost penalty requires tau > 0")
        if self.beta_mode is None:
            self.beta_mode = "local" if self.mode == "none" else "global"


@dataclass
class SparseSystem:
    """Assembled (possibly constrained and strongly reduced) linear system."""
    matrix: sp.csr_matrix
    rhs: np.ndarray
    space: FeSpace
    free: np.ndarray                 # kept indices in the stage-1 numbering
    n_stage1: int                    # N (plain space) or N_wp (aggregated)
    full_matrix: sp.csr_matrix       # stage-1 matrix before strong elimination
    strong_values: np.ndarray        # stage-1 vector of strong BC values
    constraints: ConstraintSet | None = None
    ghost: sp.csr_matrix | None = None    # s_h on the full space, if any
    beta: dict | float | None = None
    stab_mode: str = "none"

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def recover(self, x_reduced: np.ndarray) -> np.ndarray:
        """Full-space coefficient vector from the reduced solution."""
        y = self.strong_values.copy()
        y[self.free] = x_reduced
        if self.constraints is not None:
            return self.constraints.C @ y
        return y

    def solve_direct(self) -> np.ndarray:
        return self.recover(spla.spsolve(self.matrix.tocsc(), self.rhs))


# ---------------------------------------------------------------------------
# Local Nitsche parameter
# ---------------------------------------------------------------------------

def nitsche_parameter_local(space: FeSpace, e: int, cutquad) -> float:
    """Element Nitsche parameter from the local generalized eigenproblem.

    E v = lambda G v with E the boundary normal-flux product and G the bulk
    gradient product; the near-nullspace of G (relative 1e-12) is projected
    out and beta = 2 lambda_max provides the coercivity margin.
    """
    q = cutquad
    if len(q.bulk.weights) == 0:
        raise AssemblyError(f"degenerate cut on element {e}: no bulk quadrature")
    gx = space.tabulate(e, q.bulk.points, 1, 0)
    gy = space.tabulate(e, q.bulk.points, 0, 1)
    w = q.bulk.weights
    G = np.einsum("q,qi,qj->ij", w, gx, gx) + np.einsum("q,qi,qj->ij", w, gy, gy)

    bx = space.tabulate(e, q.boundary_points, 1, 0)
    by = space.tabulate(e, q.boundary_points, 0, 1)
    dn = q.boundary_normals[:, 0:1] * bx + q.boundary_normals[:, 1:2] * by
    E = np.einsum("q,qi,qj->ij", q.boundary_weights, dn, dn)

    lam, vec = sla.eigh(G)
    lmax = lam[-1]
    if lmax <= 0:
        raise AssemblyError(f"degenerate cut on element {e}: zero gradient energy")
    keep = lam >= 1e-12 * lmax
    W = vec[:, keep] / np.sqrt(lam[keep])
    M = W.T @ E @ W
    return 2.0 * float(sla.eigvalsh(M)[-1])


# ---------------------------------------------------------------------------
# Ghost penalties
# ---------------------------------------------------------------------------

def _face_normal_axis(face):
    return face.axis


def ghost_penalty_face(space: FeSpace, faces, tau, neumann_scaling=False,
                       order=None) -> sp.csr_matrix:
    """Face-based penalty on jumps of normal derivatives up to order p.

    s_h(w, v) = sum_F sum_{j=1..p} tau_j h^(2j-1) ([d_n^j w], [d_n^j v])_F,
    with exponent 2j+1 when `neumann_scaling` is set.  Faces are uncut grid
    faces, so full-face Gauss rules apply.
    """
    p = space.p
    if p > 2:
        raise AssemblyError("face ghost penalty implemented for p <= 2 only")
    h = space.h
    n = space.ndof
    order = order or p + 1
    g, gw = gauss_legendre(order)
    rows, cols, vals = [], [], []
    for face in faces:
        (ax_, ay_), (bx_, by_) = space.mesh.face_segment(face.axis, face.i, face.j)
        pts = np.column_stack([ax_ + (bx_ - ax_) * g, ay_ + (by_ - ay_) * g])
        w = gw * h
        dofs_m = space.elem_dofs[face.e_minus]
        dofs_p = space.elem_dofs[face.e_plus]
        union = np.concatenate([dofs_m, dofs_p])
        nb = len(dofs_m)
        M = np.zeros((len(union), len(union)))
        for j in range(1, p + 1):
            dxdy = (j, 0) if face.axis == 0 else (0, j)
            dm = space.tabulate(face.e_minus, pts, *dxdy)
            dp = space.tabulate(face.e_plus, pts, *dxdy)
            jump = np.hstack([dm, -dp])
            scale = tau[j - 1] * h ** (2 * j + 1 if neumann_scaling else 2 * j - 1)
            M += scale * np.einsum("q,qa,qb->ab", w, jump, jump)
        rows.extend(np.repeat(union, len(union)))
        cols.extend(np.tile(union, len(union)))
        vals.extend(M.ravel())
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def ghost_penalty_element(space: FeSpace, faces, tau, variant="s1",
                          order=None) -> sp.csr_matrix:
    """Element-based penalty on differences of canonically extended polynomials.

    For each ghost face with element pair (T1, T2):
      s0: tau_0 h^-2 ([w], [v]) over T1 union T2,
      s1: tau_1 ([grad w], [grad v]) over T1 union T2,
    where [v] = v_1 - v_2 and each v_i is the polynomial of T_i extended onto
    the full pair (integrals include the fictitious parts).
    """
    if variant not in ("s0", "s1"):
        raise AssemblyError(f"unknown element-penalty variant {variant!r}")
    p = space.p
    h = space.h
    n = space.ndof
    order = order or p + 1
    tau0 = tau[0]
    rows, cols, vals = [], [], []
    for face in faces:
        pair = (face.e_minus, face.e_plus)
        dofs_m = space.elem_dofs[face.e_minus]
        dofs_p = space.elem_dofs[face.e_plus]
        union = np.concatenate([dofs_m, dofs_p])
        M = np.zeros((len(union), len(union)))
        for t in pair:
            x0, y0, x1, y1 = space.mesh.element_box(t)
            gpts, gwts = _tensor_points(x0, y0, x1, y1, order)
            if variant == "s0":
                vm = space.tabulate(face.e_minus, gpts, 0, 0)
                vp = space.tabulate(face.e_plus, gpts, 0, 0)
                diff = np.hstack([vm, -vp])
                M += tau0 / h ** 2 * np.einsum("q,qa,qb->ab", gwts, diff, diff)
            else:
                for dxdy in ((1, 0), (0, 1)):
                    dm = space.tabulate(face.e_minus, gpts, *dxdy)
                    dp = space.tabulate(face.e_plus, gpts, *dxdy)
                    diff = np.hstack([dm, -dp])
                    M += tau0 * np.einsum("q,qa,qb->ab", gwts, diff, diff)
        rows.extend(np.repeat(union, len(union)))
        cols.extend(np.tile(union, len(union)))
        vals.extend(M.ravel())
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _tensor_points(x0, y0, x1, y1, order):
    g, w = gauss_legendre(order)
    X, Y = np.meshgrid(x0 + (x1 - x0) * g, y0 + (y1 - y0) * g, indexing="ij")
    W = np.outer(w, w).ravel() * (x1 - x0) * (y1 - y0)
    return np.column_stack([X.ravel(), Y.ravel()]), W


# ---------------------------------------------------------------------------
# Fitted box sides
# ---------------------------------------------------------------------------

def _side_segment(mesh, side):
    x0, y0 = mesh.origin
    x1, y1 = x0 + mesh.extent[0], y0 + mesh.extent[1]
    return {"left": ((x0, y0), (x0, y1)), "right": ((x1, y0), (x1, y1)),
            "bottom": ((x0, y0), (x1, y0)), "top": ((x0, y1), (x1, y1))}[side]


def _side_outward_normal(side):
    return {"left": (-1.0, 0.0), "right": (1.0, 0.0),
            "bottom": (0.0, -1.0), "top": (0.0, 1.0)}[side]


def fitted_sides(active: ActiveMesh, quadcfg: QuadConfig) -> list:
    """Box sides on which the physical domain has positive boundary measure."""
    mesh = active.mesh
    out = []
    for side in _SIDES:
        p0, p1 = _side_segment(mesh, side)
        _, wts = segment_cut_rule(p0, p1, active.levelset, 1,
                                  max(quadcfg.depth, 4), mesh.h)
        if wts.sum() > 1e-12 * max(mesh.extent):
            out.append(side)
    return out


def side_dofs(space: FeSpace, side: str) -> np.ndarray:
    """Active DOFs whose node lies on the given box side."""
    mesh = space.mesh
    x0, y0 = mesh.origin
    x1, y1 = x0 + mesh.extent[0], y0 + mesh.extent[1]
    c = space.node_coords
    tol = 1e-12 * mesh.h
    masks = {"left": np.abs(c[:, 0] - x0) < tol,
             "right": np.abs(c[:, 0] - x1) < tol,
             "bottom": np.abs(c[:, 1] - y0) < tol,
             "top": np.abs(c[:, 1] - y1) < tol}
    return np.flatnonzero(masks[side])


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def assemble(space: FeSpace, cutquads, problem: ProblemSpec,
             stab: StabilizationSpec, constraints: ConstraintSet | None = None,
             quadcfg: QuadConfig | None = None) -> SparseSystem:
    """Assemble the stabilized Nitsche system for the immersed Poisson problem."""
    if stab.mode == "agfem" and constraints is None:
        raise AssemblyError("agfem stabilization requires a ConstraintSet")
    active = space.active
    mesh = space.mesh
    h = space.h
    n = space.ndof
    quadcfg = quadcfg or QuadConfig(order=space.p + 1, boundary_order=space.p + 1)

    rows, cols, vals = [], [], []
    b = np.zeros(n)
    beta_map = {}
    use_dirichlet = problem.bc_cut == "dirichlet"

    for e in space.active_elements_iter():
        if e not in cutquads:
            raise AssemblyError(f"missing cut quadrature for element {e}")
        q = cutquads[e]
        dofs = space.elem_dofs[e]
        pts, w = q.bulk.points, q.bulk.weights
        gx = space.tabulate(e, pts, 1, 0)
        gy = space.tabulate(e, pts, 0, 1)
        Ke = (np.einsum("q,qi,qj->ij", w, gx, gx)
              + np.einsum("q,qi,qj->ij", w, gy, gy))
        fv = np.asarray(problem.f(pts[:, 0], pts[:, 1]), dtype=float)
        be = np.einsum("q,q,qi->i", w, fv, space.tabulate(e, pts, 0, 0))

        if len(q.boundary_weights):
            bp, bw, bn = q.boundary_points, q.boundary_weights, q.boundary_normals
            Nb = space.tabulate(e, bp, 0, 0)
            dn = (bn[:, 0:1] * space.tabulate(e, bp, 1, 0)
                  + bn[:, 1:2] * space.tabulate(e, bp, 0, 1))
            if use_dirichlet:
                if stab.beta_mode == "local":
                    beta = nitsche_parameter_local(space, e, q)
                else:
                    beta = stab.beta_c / h
                beta_map[e] = beta
                gd = np.asarray(problem.u(bp[:, 0], bp[:, 1]), dtype=float)
                Ke += (beta * np.einsum("q,qi,qj->ij", bw, Nb, Nb)
                       - np.einsum("q,qi,qj->ij", bw, Nb, dn)
                       - np.einsum("q,qi,qj->ij", bw, dn, Nb))
                be += (beta * np.einsum("q,q,qi->i", bw, gd, Nb)
                       - np.einsum("q,q,qi->i", bw, gd, dn))
            else:
                gn = np.asarray(problem.g_n(bp[:, 0], bp[:, 1],
                                            bn[:, 0], bn[:, 1]), dtype=float)
                be += np.einsum("q,q,qi->i", bw, gn, Nb)

        rows.extend(np.repeat(dofs, len(dofs)))
        cols.extend(np.tile(dofs, len(dofs)))
        vals.extend(Ke.ravel())
        np.add.at(b, dofs, be)

    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()

    ghost = None
    if stab.mode == "ghost-face":
        ghost = ghost_penalty_face(space, active.ghost_face_list, stab.tau,
                                   stab.neumann_scaling)
    elif stab.mode == "ghost-elem-s0":
        ghost = ghost_penalty_element(space, active.ghost_face_list, stab.tau, "s0")
    elif stab.mode == "ghost-elem-s1":
        ghost = ghost_penalty_element(space, active.ghost_face_list, stab.tau, "s1")
    if ghost is not None:
        A = (A + ghost).tocsr()

    # fitted ambient-box sides
    sides = fitted_sides(active, quadcfg)
    strong_dofs = np.zeros(0, dtype=int)
    strong_vals_full = np.zeros(n)
    if sides and problem.fitted == "neumann":
        for side in sides:
            _accumulate_fitted_neumann(space, active, problem, side, quadcfg, b)
    elif sides:
        sets = [side_dofs(space, side) for side in sides]
        strong_dofs = np.unique(np.concatenate(sets))
        c = space.node_coords[strong_dofs]
        strong_vals_full[strong_dofs] = problem.u(c[:, 0], c[:, 1])

    # stage 1: aggregation constraints
    if constraints is not None:
        C = constraints.C
        A1 = (C.T @ A @ C).tocsr()
        b1 = C.T @ b
        n1 = constraints.n_well_posed
        elim_mask = np.zeros(n1, dtype=bool)
        strong1 = np.zeros(n1)
        for d in strong_dofs:
            col = constraints.col_of[d]
            if col >= 0:     # ill-posed fitted DOFs follow their constraint
                elim_mask[col] = True
                strong1[col] = strong_vals_full[d]
    else:
        A1, b1, n1 = A, b, n
        elim_mask = np.zeros(n, dtype=bool)
        elim_mask[strong_dofs] = True
        strong1 = strong_vals_full

    # stage 2: strong elimination by row/column removal
    free = np.flatnonzero(~elim_mask)
    if elim_mask.any():
        elim = np.flatnonzero(elim_mask)
        A_red = A1[free][:, free].tocsr()
        b_red = b1[free] - A1[free][:, elim] @ strong1[elim]
    else:
        A_red, b_red = A1.tocsr(), b1.copy()

    return SparseSystem(matrix=A_red, rhs=b_red, space=space, free=free,
                        n_stage1=n1, full_matrix=A1.tocsr(), strong_values=strong1,
                        constraints=constraints, ghost=ghost,
                        beta=beta_map if stab.beta_mode == "local" else
                        (stab.beta_c / h if use_dirichlet else None),
                        stab_mode=stab.mode)


def _accumulate_fitted_neumann(space, active, problem, side, quadcfg, b):
    """Add the Neumann load over the inside part of a fitted box side."""
    mesh = space.mesh
    nx_, ny_ = _side_outward_normal(side)
    for e in active.active_elements:
        x0, y0, x1, y1 = mesh.element_box(e)
        seg = {"left": ((x0, y0), (x0, y1)) if abs(x0 - mesh.origin[0]) < 1e-14 else None,
               "right": ((x1, y0), (x1, y1))
               if abs(x1 - mesh.origin[0] - mesh.extent[0]) < 1e-14 else None,
               "bottom": ((x0, y0), (x1, y0)) if abs(y0 - mesh.origin[1]) < 1e-14 else None,
               "top": ((x0, y1), (x1, y1))
               if abs(y1 - mesh.origin[1] - mesh.extent[1]) < 1e-14 else None}[side]
        if seg is None:
            continue
        pts, wts = segment_cut_rule(seg[0], seg[1], active.levelset,
                                    quadcfg.boundary_order, quadcfg.depth, mesh.h)
        if not len(wts):
            continue
        gn = np.asarray(problem.g_n(pts[:, 0], pts[:, 1], nx_, ny_), dtype=float)
        Nb = space.tabulate(e, pts, 0, 0)
        np.add.at(b, space.elem_dofs[e],
                  np.einsum("q,q,qi->i", wts, gn, Nb))


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------

def norms(space: FeSpace, cutquads, coeffs=None, exact=None, exact_grad=None,
          beta=None, ghost=None, dirichlet=True) -> dict:
    """Quadrature evaluation of the analysis norms.

    With both `coeffs` and `exact`, norms are of the error u - u_h; with only
    one of them, norms of that function.  Returns squared-root values for keys
    l2, h1 (seminorm), beta, energy_h; energy_h_star and a_h are evaluated for
    purely discrete functions (coeffs given, exact None) and are None otherwise.
    """
    h = space.h
    l2 = h1 = 0.0
    bdry_u2 = bdry_dn2 = bdry_udn = 0.0
    bdry_u2_beta = bdry_dn2_beta = 0.0

    for e in space.active_elements_iter():
        q = cutquads[e]
        pts, w = q.bulk.points, q.bulk.weights
        if len(w):
            v, vx, vy = _eval_function(space, e, pts, coeffs, exact, exact_grad)
            l2 += np.dot(w, v * v)
            h1 += np.dot(w, vx * vx + vy * vy)
        if dirichlet and len(q.boundary_weights):
            bp, bw, bn = q.boundary_points, q.boundary_weights, q.boundary_normals
            v, vx, vy = _eval_function(space, e, bp, coeffs, exact, exact_grad)
            dn = bn[:, 0] * vx + bn[:, 1] * vy
            bdry_u2 += np.dot(bw, v * v)
            bdry_dn2 += np.dot(bw, dn * dn)
            bdry_udn += np.dot(bw, v * dn)
            if beta is not None:
                be = beta[e] if isinstance(beta, dict) else beta
                bdry_u2_beta += be * np.dot(bw, v * v)
                bdry_dn2_beta += np.dot(bw, dn * dn) / be

    out = {
        "l2": np.sqrt(l2),
        "h1": np.sqrt(h1),
        "energy_h": np.sqrt(h1 + bdry_u2 / h + h * bdry_dn2),
        "beta": np.sqrt(h1 + bdry_u2_beta + bdry_dn2_beta)
        if beta is not None else None,
        "energy_h_star": None,
        "a_h": None,
    }
    if coeffs is not None and exact is None:
        sh = float(coeffs @ (ghost @ coeffs)) if ghost is not None else 0.0
        out["energy_h_star"] = np.sqrt(h1 + bdry_u2 / h + h * bdry_dn2 + sh)
        if beta is not None:
            out["a_h"] = np.sqrt(max(h1 + bdry_u2_beta - 2 * bdry_udn + sh, 0.0))
        elif not dirichlet:
            out["a_h"] = np.sqrt(h1 + sh)
    return out


def _eval_function(space, e, pts, coeffs, exact, exact_grad):
    v = vx = vy = 0.0
    if coeffs is not None:
        ce = coeffs[space.elem_dofs[e]]
        v = space.tabulate(e, pts, 0, 0) @ ce
        vx = space.tabulate(e, pts, 1, 0) @ ce
        vy = space.tabulate(e, pts, 0, 1) @ ce
    if exact is not None:
        ue = np.asarray(exact(pts[:, 0], pts[:, 1]), dtype=float)
        gx, gy = exact_grad(pts[:, 0], pts[:, 1])
        v = ue - v
        vx = np.asarray(gx, dtype=float) - vx
        vy = np.asarray(gy, dtype=float) - vy
    return v, vx, vy


def stiffness_physical(space: FeSpace, cutquads) -> sp.csr_matrix:
    """Gradient Gram matrix over the physical domain (no boundary terms)."""
    n = space.ndof
    rows, cols, vals = [], [], []
    for e in space.active_elements_iter():
        q = cutquads[e]
        if not len(q.bulk.weights):
            continue
        dofs = space.elem_dofs[e]
        gx = space.tabulate(e, q.bulk.points, 1, 0)
        gy = space.tabulate(e, q.bulk.points, 0, 1)
        Ke = (np.einsum("q,qi,qj->ij", q.bulk.weights, gx, gx)
              + np.einsum("q,qi,qj->ij", q.bulk.weights, gy, gy))
        rows.extend(np.repeat(dofs, len(dofs)))
        cols.extend(np.tile(dofs, len(dofs)))
        vals.extend(Ke.ravel())
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def stiffness_active_domain(space: FeSpace) -> sp.csr_matrix:
    """Gradient Gram matrix over the full active elements (fictitious included)."""
    n = space.ndof
    order = space.p + 1
    rows, cols, vals = [], [], []
    for e in space.active_elements_iter():
        x0, y0, x1, y1 = space.mesh.element_box(e)
        pts, w = _tensor_points(x0, y0, x1, y1, order)
        dofs = space.elem_dofs[e]
        gx = space.tabulate(e, pts, 1, 0)
        gy = space.tabulate(e, pts, 0, 1)
        Ke = (np.einsum("q,qi,qj->ij", w, gx, gx)
              + np.einsum("q,qi,qj->ij", w, gy, gy))
        rows.extend(np.repeat(dofs, len(dofs)))
        cols.extend(np.tile(dofs, len(dofs)))
        vals.extend(Ke.ravel())
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()

"""Sparse symmetric solvers: CG, Jacobi scaling, additive/multiplicative
Schwarz preconditioners with spectrally thresholded block pseudo-inverses,
and eigenvalue/condition-number estimation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_LIMIT = 4000


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Block selection
# ---------------------------------------------------------------------------

@dataclass
class BlockIndexSet:
    blocks: list                 # list of sorted index arrays (incl. singletons)
    strategy: str
    n: int

    def covers_all(self) -> bool:
        seen = np.zeros(self.n, dtype=bool)
        for b in self.blocks:
            seen[b] = True
        return bool(seen.all())


def _system_position_map(system):
    """Map full-space DOF ids to positions in the reduced system (-1 if absent)."""
    pos1 = -np.ones(system.n_stage1, dtype=int)
    pos1[system.free] = np.arange(len(system.free))
    if system.constraints is None:
        return pos1
    full = -np.ones(system.space.ndof, dtype=int)
    wp = system.constraints.col_of
    has = wp >= 0
    full[has] = pos1[wp[has]]
    return full


def select_blocks(active, space, system, strategy: str = "cut") -> BlockIndexSet:
    """Index blocks for Schwarz preconditioning, in reduced-system numbering.

    cut:        one block per cut element with all DOFs supported on it,
                remaining DOFs as Jacobi singletons;
    all:        one block per active element plus singleton fill-in;
    threshold:x blocks only for cut elements with eta < x.
    """
    n = system.n
    posmap = _system_position_map(system)
    if strategy.startswith("threshold:"):
        thr = float(strategy.split(":", 1)[1])
        elems = [e for e in active.cut_elements if active.eta[e] < thr]
    elif strategy == "cut":
        elems = list(active.cut_elements)
    elif strategy == "all":
        elems = list(active.active_elements)
    else:
        raise SolverError(f"unknown block strategy {strategy!r}")

    blocks = []
    covered = np.zeros(n, dtype=bool)
    for e in sorted(elems):
        idx = posmap[space.elem_dofs[e]]
        idx = np.unique(idx[idx >= 0])
        if len(idx) == 0:
            continue
        blocks.append(idx)
        covered[idx] = True
    for i in np.flatnonzero(~covered):
        blocks.append(np.array([i], dtype=int))
    return BlockIndexSet(blocks=blocks, strategy=strategy, n=n)


def jacobi_blocks(n: int) -> BlockIndexSet:
    return BlockIndexSet(blocks=[np.array([i]) for i in range(n)],
                         strategy="jacobi", n=n)


# ---------------------------------------------------------------------------
# Schwarz preconditioner
# ---------------------------------------------------------------------------

@dataclass
class SchwarzPreconditioner:
    mode: str                    # "additive" | "multiplicative"
    n: int
    factors: list                # (indices, eigenvectors, eigenvalues) per block
    theta: float
    matrix_csc: sp.csc_matrix = None   # needed for the multiplicative sweep

    def dense(self) -> np.ndarray:
        """Dense matrix of the preconditioner (test/diagnostic use)."""
        return np.column_stack([apply(self, e) for e in np.eye(self.n)])


def build_schwarz(A, blocks: BlockIndexSet, mode: str = "additive",
                  theta: float = 1e-12) -> SchwarzPreconditioner:
    """Eigendecompose each principal submatrix A_i, discarding modes below
    theta * lambda_max(A_i), and store the pseudo-inverse factors."""
    if mode not in ("additive", "multiplicative"):
        raise SolverError(f"unknown Schwarz mode {mode!r}")
    A = sp.csr_matrix(A)
    factors = []
    for idx in blocks.blocks:
        Ai = A[np.ix_(idx, idx)].toarray()
        lam, vec = sla.eigh(Ai)
        lmax = lam[-1]
        keep = lam >= theta * lmax
        if lmax <= 0 or not keep.any():
            raise SolverError(f"fully degenerate block {idx.tolist()}")
        factors.append((idx, vec[:, keep], lam[keep]))
    return SchwarzPreconditioner(mode=mode, n=A.shape[0], factors=factors,
                                 theta=theta, matrix_csc=A.tocsc())


def apply(precond: SchwarzPreconditioner, r: np.ndarray) -> np.ndarray:
    """Apply the preconditioner to a vector.

    Additive: sum of injected block pseudo-inverse solves.  Multiplicative:
    sequential sweep z <- z + B_i (r - A z) in ascending block order, with the
    residual updated incrementally through the touched columns.
    """
    r = np.asarray(r, dtype=float)
    if r.shape[0] != precond.n:
        raise SolverError("dimension mismatch in preconditioner apply")
    z = np.zeros_like(r)
    if precond.mode == "additive":
        for idx, V, lam in precond.factors:
            z[idx] += V @ ((V.T @ r[idx]) / lam)
        return z
    rr = r.copy()
    A = precond.matrix_csc
    for idx, V, lam in precond.factors:
        delta = V @ ((V.T @ rr[idx]) / lam)
        z[idx] += delta
        rr -= A[:, idx] @ delta
    return z


def jacobi_preconditioner(A) -> SchwarzPreconditioner:
    """Diagonal scaling expressed as singleton-block additive Schwarz."""
    return build_schwarz(A, jacobi_blocks(A.shape[0]), "additive")


# ---------------------------------------------------------------------------
# Conjugate gradients
# ---------------------------------------------------------------------------

@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    converged: bool
    wall_time: float
    history: list = field(default_factory=list)


def pcg(A, b, precond: SchwarzPreconditioner | None = None, tol: float = 1e-8,
        maxit: int | None = None, flexible: bool | None = None):
    """Preconditioned conjugate gradients.

    Multiplicative Schwarz is nonsymmetric, so it is paired with a flexible
    (Polak-Ribiere) update and a plain-residual stopping criterion; otherwise
    the preconditioned residual norm sqrt(r'z) is used.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    b = np.asarray(b, dtype=float)
    maxit = maxit if maxit is not None else 10 * n
    if flexible is None:
        flexible = precond is not None and precond.mode == "multiplicative"

    t0 = time.perf_counter()
    x = np.zeros(n)
    r = b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return x, SolveReport(0, 0.0, True, time.perf_counter() - t0, [0.0])

    z = apply(precond, r) if precond is not None else r.copy()
    rz = float(r @ z)
    if flexible:
        ref = bnorm
        res = 1.0
    else:
        if rz <= 0:
            raise SolverError("matrix not SPD")
        ref = np.sqrt(rz)
        res = 1.0
    history = [res]
    p = z.copy()
    it = 0
    while res > tol and it < maxit:
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise SolverError("matrix not SPD")
        alpha = rz / pAp
        x += alpha * p
        r_new = r - alpha * Ap
        z_new = apply(precond, r_new) if precond is not None else r_new.copy()
        rz_new = float(r_new @ z_new)
        if flexible:
            beta = float(z_new @ (r_new - r)) / rz
            res = np.linalg.norm(r_new) / ref
        else:
            beta = rz_new / rz
            res = np.sqrt(max(rz_new, 0.0)) / ref
        p = z_new + beta * p
        r, z, rz = r_new, z_new, rz_new
        it += 1
        history.append(res)
        if not flexible and rz <= 0:
            break
    return x, SolveReport(it, float(res), bool(res <= tol),
                          time.perf_counter() - t0, history)


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------

def _smallest_eigenvalue_inverse_iteration(A, seed=0, iters=100):
    """lambda_min by inverse iteration with a sparse LU factorization.

    Assembled immersed matrices are graded (entries on tiny cut elements scale
    with the cut size), so the factorization resolves eigenvalues far below
    eps * lambda_max where a dense eigensolve only returns round-off noise.
    """
    lu = spla.splu(sp.csc_matrix(A))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(A.shape[0])
    x /= np.linalg.norm(x)
    lam_prev = None
    for _ in range(iters):
        y = lu.solve(x)
        ny = np.linalg.norm(y)
        if not np.isfinite(ny) or ny == 0:
            return None
        x = y / ny
        lam = float(x @ (A @ x))
        if lam_prev is not None and abs(lam - lam_prev) <= 1e-10 * abs(lam):
            break
        lam_prev = lam
    return lam


def condition_number(A, method: str = "dense", seed: int = 0):
    """(kappa, lambda_min, lambda_max) of a symmetric positive definite matrix."""
    A = sp.csr_matrix(A)
    n = A.shape[0]
    if method == "dense":
        if n > DENSE_LIMIT:
            raise SolverError(f"dense eigensolve limited to N <= {DENSE_LIMIT}")
        lam = sla.eigvalsh(A.toarray())
        lmax = float(lam[-1])
        # kappa over the positive spectrum: eigenvalues below the eigensolver
        # round-off floor can come out with either sign for SPD input
        if lmax <= 0 or lam[0] < -1e-12 * lmax:
            raise SolverError("indefinite/singular matrix")
        pos = lam[lam > 0]
        if not len(pos):
            raise SolverError("indefinite/singular matrix")
        lmin = float(pos[0])
        if lmin <= 1e-12 * lmax:
            # below the dense round-off floor: refine by inverse iteration
            refined = _smallest_eigenvalue_inverse_iteration(A, seed)
            if refined is not None and 0 < refined < lmin:
                lmin = refined
        return lmax / lmin, lmin, lmax
    if method != "lanczos":
        raise SolverError(f"unknown condition-number method {method!r}")

    lmax = float(spla.eigsh(A, k=1, which="LA", maxiter=200,
                            return_eigenvectors=False, tol=1e-10)[0])
    # inverse iteration with CG inner solves for the smallest eigenvalue
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    jac = jacobi_preconditioner(A)
    lmin_prev = np.inf
    lmin = lmax
    for _ in range(60):
        y, _rep = pcg(A, x, jac, tol=1e-10, maxit=20 * n)
        y_norm = np.linalg.norm(y)
        if y_norm == 0:
            raise SolverError("indefinite/singular matrix")
        x = y / y_norm
        lmin = float(x @ (A @ x))
        if abs(lmin - lmin_prev) <= 1e-8 * abs(lmin):
            break
        lmin_prev = lmin
    if lmin <= 0:
        raise SolverError("indefinite/singular matrix")
    return lmax / lmin, lmin, lmax


def jacobi_scale(A):
    """Symmetric diagonal scaling D^-1/2 A D^-1/2 with unit diagonal."""
    A = sp.csr_matrix(A)
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("non-positive diagonal entry")
    dinv = sp.diags(1.0 / np.sqrt(d))
    return (dinv @ A @ dinv).tocsr()

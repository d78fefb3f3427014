"""Linear solves for assembled DG systems and the discrete solution type."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .dpp import FIELDS, PRES_BLOCK, VEL_BLOCKS, DGSpace, SparseSystem
from .fem import affine_maps, lagrange_tri_basis
from .mesh import extract_facets


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveInfo:
    method: str
    iterations: int
    residual: float  # relative residual ||Ax - b|| / ||b||
    seconds: float


@dataclass(frozen=True)
class FieldSolution:
    """DG coefficient vector with per-field evaluation.

    Velocity fields evaluate to (..., 2) arrays, pressures to (...) arrays.
    Evaluation inside an element only uses that element's coefficients.
    """

    space: DGSpace
    coeffs: np.ndarray
    info: SolveInfo | None = None
    _maps: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.shape != (self.space.total_dofs,):
            raise ValueError(f"expected {self.space.total_dofs} coefficients, got {coeffs.shape}")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "_maps", affine_maps(self.space.mesh))

    @property
    def mesh(self):
        return self.space.mesh

    @property
    def maps(self):
        return self._maps

    def values(self, name, elems, xi, grad=False):
        """Field values at reference points ``xi`` of elements ``elems``.

        ``elems`` has shape (n,), ``xi`` shape (n, q, 2) or (q, 2). With
        ``grad=True`` physical gradients are returned (pressures: (n, q, 2),
        velocities: (n, q, 2, 2) with the component index first).
        """
        fi = FIELDS.index(name)
        elems = np.asarray(elems, dtype=np.int64)
        xi = np.asarray(xi, dtype=float)
        if xi.ndim == 2:
            xi = np.broadcast_to(xi, (len(elems),) + xi.shape)
        blocks = VEL_BLOCKS[fi] if fi < 2 else (PRES_BLOCK[fi - 2],)
        shape = (len(elems), xi.shape[1]) + ((2,) if fi < 2 else ()) + ((2,) if grad else ())
        out = np.zeros(shape)
        orders = self.space.orders[elems, fi]
        for o in np.unique(orders):
            sel = np.flatnonzero(orders == o)
            basis = lagrange_tri_basis(int(o))
            if grad:
                phi = self.maps.push_gradients(elems[sel], basis.grad(xi[sel]))
            else:
                phi = basis.eval(xi[sel])
            for c, b in enumerate(blocks):
                coef = self.coeffs[self.space.block_dofs(elems[sel], b)]
                if grad:
                    val = np.einsum("nqid,ni->nqd", phi, coef)
                else:
                    val = np.einsum("nqi,ni->nq", phi, coef)
                if fi < 2:
                    out[sel, :, c] = val
                else:
                    out[sel] = val
        return out

    def locate(self, points):
        """Containing element and reference coordinates for physical points."""
        return locate_points(self.mesh, points, self.maps)

    def evaluate(self, name, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        elems, xi = self.locate(pts)
        return self.values(name, elems, xi[:, None, :])[:, 0]

    def u1(self, points):
        return self.evaluate("u1", points)

    def u2(self, points):
        return self.evaluate("u2", points)

    def p1(self, points):
        return self.evaluate("p1", points)

    def p2(self, points):
        return self.evaluate("p2", points)


def locate_points(mesh, points, maps=None, tol=1e-10):
    """Find one containing element per point (lowest index wins on shared edges)."""
    maps = maps if maps is not None else affine_maps(mesh)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    tree = cKDTree(mesh.centroids())
    k = min(12, mesh.n_elements)
    _, cand = tree.query(pts, k=k)
    cand = np.asarray(cand).reshape(len(pts), k)
    elems = np.full(len(pts), -1)
    xi = np.zeros((len(pts), 2))
    for j in range(k):
        todo = np.flatnonzero(elems < 0)
        if not len(todo):
            break
        e = cand[todo, j]
        r = maps.to_reference(e, pts[todo])
        inside = (r[:, 0] >= -tol) & (r[:, 1] >= -tol) & (r.sum(axis=1) <= 1 + tol)
        elems[todo[inside]] = e[inside]
        xi[todo[inside]] = r[inside]
    for i in np.flatnonzero(elems < 0):
        r = maps.to_reference(np.arange(mesh.n_elements), np.broadcast_to(pts[i], (mesh.n_elements, 2)))
        inside = np.flatnonzero((r[:, 0] >= -tol) & (r[:, 1] >= -tol) & (r.sum(axis=1) <= 1 + tol))
        if not len(inside):
            raise ValueError(f"point {pts[i]} lies outside the mesh")
        elems[i] = inside[0]
        xi[i] = r[inside[0]]
    return elems, xi


# ---------------------------------------------------------------------------
# pinning
# ---------------------------------------------------------------------------


def pin_dof(system: SparseSystem, dof: int, value: float) -> SparseSystem:
    """Replace equation ``dof`` by ``x[dof] = value``.

    The column is moved to the right-hand side so the other equations are
    unchanged. The removed equation is kept in ``pinned`` for
    :func:`pin_residual`.
    """
    n = system.total_dofs
    if int(dof) != dof or not 0 <= dof < n:
        raise ValueError(f"dof {dof} out of range [0, {n})")
    dof = int(dof)
    A = system.matrix.tocsr()
    old_row = A.getrow(dof).copy()
    old_rhs = float(system.rhs[dof])
    col = A.getcol(dof).toarray().ravel()
    rhs = system.rhs - col * value
    keep = np.ones(n)
    keep[dof] = 0.0
    D = sp.diags(keep)
    E = sp.csr_matrix(([1.0], ([dof], [dof])), shape=(n, n))
    A = (D @ A @ D + E).tocsr()
    A.eliminate_zeros()
    rhs[dof] = value
    pinned = dict(system.pinned)
    pinned[dof] = (old_row, old_rhs)
    return replace(system, matrix=A, rhs=rhs, pinned=pinned)


def pin_residual(system: SparseSystem, x) -> float:
    """Largest residual of the equations removed by pinning, at solution ``x``.

    A consistent pin leaves these equations satisfied (they are redundant);
    conflicting pins show up as an O(1) residual.
    """
    x = np.asarray(x.coeffs if isinstance(x, FieldSolution) else x)
    res = [abs(float((row @ x)[0]) - b) for row, b in system.pinned.values()]
    return max(res, default=0.0)


# ---------------------------------------------------------------------------
# solves
# ---------------------------------------------------------------------------


def block_jacobi(system: SparseSystem) -> spla.LinearOperator:
    """Inverse of the per-element diagonal blocks as a linear operator."""
    space = system.space
    A = system.matrix.tocoo()
    start = space.block_offsets[:, 0]
    stop = space.block_offsets[:, 6]
    owner = np.repeat(np.arange(len(start)), stop - start)
    keep = owner[A.row] == owner[A.col]
    rows, cols, vals = A.row[keep], A.col[keep], A.data[keep]
    sizes = stop - start
    inv_blocks = {}
    for size in np.unique(sizes):
        elems = np.flatnonzero(sizes == size)
        local = np.full(len(start), -1)
        local[elems] = np.arange(len(elems))
        sel = sizes[owner[rows]] == size
        e = owner[rows[sel]]
        dense = np.zeros((len(elems), size, size))
        np.add.at(dense, (local[e], rows[sel] - start[e], cols[sel] - start[e]), vals[sel])
        # singular blocks fall back to identity for that element
        det_ok = np.abs(np.linalg.det(dense)) > 0
        dense[~det_ok] = np.eye(size)
        idx = start[elems][:, None] + np.arange(size)
        inv_blocks[int(size)] = (idx, np.linalg.inv(dense))

    def apply(v):
        v = np.asarray(v).ravel()
        out = np.empty_like(v)
        for idx, inv in inv_blocks.values():
            out[idx] = np.einsum("nij,nj->ni", inv, v[idx])
        return out

    n = system.total_dofs
    return spla.LinearOperator((n, n), matvec=apply, dtype=float)


def _relative_residual(A, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / nb if nb > 0 else r


DIRECT_TOL = 1e-10


def _direct_ok(A, x, b, res):
    """Relative residual within DIRECT_TOL, or within the rounding level of A @ x.

    When entries of |A||x| dwarf b, double precision cannot represent a
    residual below ~eps ||A||x|| / ||b|| however accurate x is.
    """
    if res <= DIRECT_TOL:
        return True
    nb = np.linalg.norm(b)
    floor = 64.0 * np.finfo(float).eps * np.linalg.norm(abs(A) @ np.abs(x))
    return res * nb <= DIRECT_TOL * nb + floor


def nested_dissection(mesh, leaf=8) -> np.ndarray:
    """Element elimination order from recursive coordinate bisection.

    Each split halves the element set along its longer extent; elements of
    the first half that touch the second half form the separator and are
    ordered after both halves.
    """
    facets = extract_facets(mesh)
    ne = mesh.n_elements
    i, j = facets.int_plus, facets.int_minus
    adj = sp.csr_matrix((np.ones(2 * len(i)), (np.r_[i, j], np.r_[j, i])), shape=(ne, ne))
    cent = mesh.centroids()
    mark = np.zeros(ne)
    parts = []

    def split(idx):
        if len(idx) <= leaf:
            parts.append(idx)
            return
        c = cent[idx]
        d = int(np.argmax(np.ptp(c, axis=0)))
        o = np.argsort(c[:, d], kind="stable")
        left, right = idx[o[: len(idx) // 2]], idx[o[len(idx) // 2 :]]
        mark[right] = 1.0
        touches = (adj[left] @ mark) > 0
        mark[right] = 0.0
        split(left[~touches])
        split(right)
        parts.append(left[touches])

    split(np.arange(ne))
    return np.concatenate(parts)


def dof_permutation(space: DGSpace) -> np.ndarray:
    order = nested_dissection(space.mesh)
    start = space.block_offsets[order, 0]
    stop = space.block_offsets[order, 6]
    return np.concatenate([np.arange(a, b) for a, b in zip(start, stop)]) if len(order) else np.zeros(0, int)


def _factorize(A, space):
    """SuperLU factorisation of the symmetrically diagonal-scaled matrix.

    Scaling by |diag|^(-1/2) balances the velocity (mu/k) and pressure (k/mu)
    blocks so that diagonal pivots are accepted; with a known space the
    element nested-dissection ordering is used. Returns a solve callable.
    """
    A = sp.csr_matrix(A)
    diag = np.abs(A.diagonal())
    d = 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0))
    S = sp.diags(d)
    A = (S @ A @ S).tocsr()
    if space is None or space.total_dofs != A.shape[0]:
        lu = spla.splu(A.tocsc(), permc_spec="COLAMD")
        return lu, lambda rhs: d * lu.solve(d * rhs)
    perm = dof_permutation(space)
    B = A[perm][:, perm].tocsc()
    lu = spla.splu(B, permc_spec="NATURAL", diag_pivot_thresh=0.01, options=dict(SymmetricMode=True))

    def lu_solve(rhs):
        out = np.empty_like(rhs)
        out[perm] = lu.solve((d * rhs)[perm])
        return d * out

    return lu, lu_solve


def solve(system: SparseSystem, method="direct-lu", tol=1e-7, max_iter=2000, restart=200, precondition=True, refine=1):
    """Solve ``system``; ``method`` is ``"direct-lu"`` (alias ``"direct"``) or ``"gmres"``."""
    A = system.matrix
    b = system.rhs
    if A.shape[0] != A.shape[1]:
        raise SolverError("matrix is not square")
    t0 = time.perf_counter()
    if method in ("direct", "direct-lu"):
        try:
            lu, lu_solve = _factorize(A, system.space)
        except RuntimeError as exc:
            raise SolverError(f"LU factorisation failed: {exc}") from exc

        x = lu_solve(b)
        if not np.all(np.isfinite(x)):
            diag = np.abs(lu.U.diagonal())
            raise SolverError(f"LU produced non-finite values; smallest pivot {diag.min():.3e} at {int(diag.argmin())}")
        res = _relative_residual(A, x, b)
        # iterative refinement against the unpermuted matrix; extra sweeps only while above the threshold
        for k in range(max(refine, 5)):
            if k >= refine and res <= DIRECT_TOL:
                break
            x = x + lu_solve(b - A @ x)
            res = _relative_residual(A, x, b)
        if not _direct_ok(A, x, b, res):
            raise SolverError(f"direct solve residual {res:.3e} exceeds {DIRECT_TOL:g} and the rounding floor")
        info = SolveInfo("direct-lu", 0, float(res), time.perf_counter() - t0)
    elif method == "gmres":
        M = block_jacobi(system) if precondition else None
        iters = [0]

        def count(_):
            iters[0] += 1

        x = np.zeros_like(b)
        res = _relative_residual(A, x, b)
        while res > tol and iters[0] < max_iter:
            before = iters[0]
            x, _ = spla.gmres(
                A, b, x0=x, rtol=tol, atol=0.0, restart=restart, maxiter=max(1, (max_iter - iters[0]) // restart + 1),
                M=M, callback=count, callback_type="pr_norm",
            )
            res = _relative_residual(A, x, b)
            if iters[0] == before:
                break
        if not np.all(np.isfinite(x)) or res > tol:
            raise SolverError(f"GMRES stagnated: relative residual {res:.3e} after {iters[0]} iterations (tol {tol:g})")
        info = SolveInfo("gmres", iters[0], float(res), time.perf_counter() - t0)
    else:
        raise SolverError(f"unknown method {method!r}")
    return FieldSolution(system.space, x, info)

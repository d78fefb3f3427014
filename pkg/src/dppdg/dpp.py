"""Four-field DG discretisation of double porosity/permeability flow.

Unknowns per element are laid out in six scalar blocks
``[u1x, u1y, u2x, u2y, p1, p2]``; each velocity component uses the order of
its field. Assembly is vectorised over groups of elements (and facets) that
share the same polynomial orders.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .fem import LOCAL_EDGES, MAX_ORDER, REF_VERTICES, affine_maps, basis_dim, lagrange_tri_basis, quadrature
from .mesh import FacetSet, Mesh, MeshQuality

FIELDS = ("u1", "u2", "p1", "p2")
# block -> field index
BLOCK_FIELD = (0, 0, 1, 1, 2, 3)
VEL_BLOCKS = ((0, 1), (2, 3))
PRES_BLOCK = (4, 5)


class AssemblyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DGSpace:
    mesh: Mesh
    orders: np.ndarray  # (ne, 4) orders of u1, u2, p1, p2
    block_offsets: np.ndarray  # (ne, 7) start of each block plus element end
    total_dofs: int

    @property
    def elem_start(self) -> np.ndarray:
        return self.block_offsets[:, 0]

    def block_dim(self, elems, block) -> np.ndarray:
        return self.block_offsets[elems, block + 1] - self.block_offsets[elems, block]

    def block_dofs(self, elems, block) -> np.ndarray:
        """Global dof indices (n_elems, dim) of one block for elements of equal order."""
        elems = np.atleast_1d(elems)
        dims = self.block_dim(elems, block)
        if np.any(dims != dims[0]):
            raise AssemblyError("block_dofs needs elements of equal order")
        return self.block_offsets[elems, block][:, None] + np.arange(dims[0])

    def element_dofs(self, e) -> slice:
        return slice(int(self.block_offsets[e, 0]), int(self.block_offsets[e, 6]))

    def order_groups(self) -> dict:
        """Map of orders tuple -> element indices, in first-appearance order."""
        _, first, inverse = np.unique(self.orders, axis=0, return_index=True, return_inverse=True)
        inverse = inverse.ravel()
        groups = {}
        for g in np.argsort(first):
            elems = np.flatnonzero(inverse == g)
            groups[tuple(int(o) for o in self.orders[elems[0]])] = elems
        return groups


def build_space(mesh: Mesh, order_map) -> DGSpace:
    """``order_map``: an int, one order per element, or (ne, 4) per-field orders."""
    ne = mesh.n_elements
    orders = np.asarray(order_map, dtype=np.int64)
    if orders.ndim == 0:
        orders = np.full((ne, 4), int(orders))
    elif orders.ndim == 1:
        if len(orders) != ne:
            raise AssemblyError(f"order_map has {len(orders)} entries for {ne} elements")
        orders = np.repeat(orders[:, None], 4, axis=1)
    elif orders.shape != (ne, 4):
        raise AssemblyError(f"order_map must have shape ({ne}, 4), got {orders.shape}")
    if orders.min() < 1 or orders.max() > MAX_ORDER:
        raise AssemblyError(f"orders must lie in [1, {MAX_ORDER}]")
    dims = basis_dim(orders[:, list(BLOCK_FIELD)])
    sizes = dims.sum(axis=1)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    offsets = np.empty((ne, 7), dtype=np.int64)
    offsets[:, 0] = starts
    offsets[:, 1:] = starts[:, None] + np.cumsum(dims, axis=1)
    orders.setflags(write=False)
    offsets.setflags(write=False)
    return DGSpace(mesh, orders, offsets, int(sizes.sum()))


def interpolate(space: DGSpace, u1=None, u2=None, p1=None, p2=None) -> np.ndarray:
    """Nodal interpolation of callables ``f(x, y)`` into the space.

    Velocity callables return a pair ``(ux, uy)``. Missing fields are zero.
    """
    maps = affine_maps(space.mesh)
    coeffs = np.zeros(space.total_dofs)
    for orders, elems in space.order_groups().items():
        for fi, fn in enumerate((u1, u2, p1, p2)):
            if fn is None:
                continue
            nodes = lagrange_tri_basis(orders[fi]).nodes
            x = maps.offset[elems, None, :] + np.einsum("eij,qj->eqi", maps.jac[elems], nodes)
            vals = fn(x[..., 0], x[..., 1])
            if fi < 2:
                bx, by = VEL_BLOCKS[fi]
                coeffs[space.block_dofs(elems, bx)] = np.broadcast_to(vals[0], x.shape[:2])
                coeffs[space.block_dofs(elems, by)] = np.broadcast_to(vals[1], x.shape[:2])
            else:
                coeffs[space.block_dofs(elems, PRES_BLOCK[fi - 2])] = np.broadcast_to(vals, x.shape[:2])
    return coeffs


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaterialField:
    """Per-element k1, k2, mu, beta and body forces gamma*b1, gamma*b2.

    Body forces are ``None`` (zero), an (ne, 2) array of element constants, or
    a callable ``f(x, y) -> (fx, fy)``.
    """

    k1: np.ndarray
    k2: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    gb1: object = None
    gb2: object = None

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, n), dtype=float) for n in ("k1", "k2", "mu", "beta")]
        ne = max(a.size for a in arrays)
        for name, a in zip(("k1", "k2", "mu", "beta"), arrays):
            object.__setattr__(self, name, np.broadcast_to(a, (ne,)).copy())
        if np.any(self.k1 <= 0) or np.any(self.k2 <= 0) or np.any(self.mu <= 0):
            raise AssemblyError("k1, k2 and mu must be positive")
        if np.any(self.beta < 0):
            raise AssemblyError("beta must be non-negative")

    @classmethod
    def from_regions(cls, mesh: Mesh, table: dict, mu=None):
        """Build from ``{region: {"k1":..., "k2":..., "mu":..., "beta":..., "gb": (gx, gy)}}``."""
        ne = mesh.n_elements
        out = {n: np.empty(ne) for n in ("k1", "k2", "mu", "beta")}
        gb = np.zeros((ne, 2))
        missing = set(np.unique(mesh.region_id)) - set(table)
        if missing:
            raise AssemblyError(f"no material for regions {sorted(missing)}")
        for region, props in table.items():
            sel = mesh.region_id == region
            for n in out:
                out[n][sel] = props[n]
            gb[sel] = props.get("gb", (0.0, 0.0))
        if mu is not None:
            out["mu"] = np.broadcast_to(np.asarray(mu, dtype=float), (ne,)).copy()
        body = gb if np.any(gb) else None
        return cls(out["k1"], out["k2"], out["mu"], out["beta"], body, body)

    def with_viscosity(self, mu) -> "MaterialField":
        return replace(self, mu=np.broadcast_to(np.asarray(mu, dtype=float), self.k1.shape).copy())

    def drag(self, network) -> np.ndarray:
        """mu / k_i per element."""
        return self.mu / (self.k1 if network == 0 else self.k2)

    def mobility(self, network) -> np.ndarray:
        """k_i / mu per element."""
        return (self.k1 if network == 0 else self.k2) / self.mu

    def body_force(self, network, elems, x) -> np.ndarray | None:
        gb = self.gb1 if network == 0 else self.gb2
        if gb is None:
            return None
        if callable(gb):
            fx, fy = gb(x[..., 0], x[..., 1])
            return np.stack(np.broadcast_arrays(fx, fy, x[..., 0])[:2], axis=-1)
        gb = np.asarray(gb, dtype=float)
        return np.broadcast_to(gb[elems][:, None, :], x.shape)


@dataclass(frozen=True)
class FluxParameters:
    eta_u: float = 0.0
    eta_p: float = 0.0
    mode: str = "stabilized"

    def __post_init__(self):
        if self.mode not in ("galerkin", "stabilized"):
            raise AssemblyError(f"unknown mode {self.mode!r}")
        for v in (self.eta_u, self.eta_p):
            if not np.isfinite(v) or v < 0:
                raise AssemblyError("eta_u and eta_p must be finite and non-negative")

    @property
    def stabilized(self) -> bool:
        return self.mode == "stabilized"


class Condition(NamedTuple):
    kind: str  # "pressure" or "velocity" (normal component)
    value: float | Callable = 0.0

    def evaluate(self, x):
        if callable(self.value):
            return np.broadcast_to(self.value(x[..., 0], x[..., 1]), x.shape[:-1])
        return np.full(x.shape[:-1], float(self.value))


def pressure(value=0.0) -> Condition:
    return Condition("pressure", value)


def velocity(value=0.0) -> Condition:
    return Condition("velocity", value)


@dataclass(frozen=True)
class BoundaryData:
    """Map boundary tag -> (condition for network 1, condition for network 2)."""

    conditions: dict

    def __post_init__(self):
        for tag, pair in self.conditions.items():
            if len(pair) != 2:
                raise AssemblyError(f"tag {tag!r} needs one condition per network")
            for c in pair:
                if c.kind not in ("pressure", "velocity"):
                    raise AssemblyError(f"unknown condition kind {c.kind!r}")

    @classmethod
    def uniform(cls, tags, cond1, cond2=None):
        return cls({t: (cond1, cond2 if cond2 is not None else cond1) for t in tags})

    def check_coverage(self, facets: FacetSet):
        missing = sorted(set(facets.ext_tag) - set(self.conditions))
        if missing:
            raise AssemblyError(f"boundary facets without a condition: tags {missing}")

    def has_pressure(self, network) -> bool:
        return any(pair[network].kind == "pressure" for pair in self.conditions.values())


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    space: DGSpace
    # pinned dof -> (original matrix row, original rhs entry)
    pinned: dict = field(default_factory=dict)

    @property
    def total_dofs(self) -> int:
        return self.matrix.shape[0]

    @property
    def indptr(self):
        return self.matrix.indptr

    @property
    def indices(self):
        return self.matrix.indices

    @property
    def data(self):
        return self.matrix.data


# ---------------------------------------------------------------------------
# facet operators
# ---------------------------------------------------------------------------


def average(plus, minus):
    return 0.5 * (np.asarray(plus) + np.asarray(minus))


def jump_scalar(plus, minus, normal):
    """Jump of a scalar: phi+ n+ + phi- n- with n- = -n+ (a vector)."""
    normal = np.asarray(normal)
    return (np.asarray(plus) - np.asarray(minus))[..., None] * normal


def jump_vector(plus, minus, normal):
    """Jump of a vector: tau+ . n+ + tau- . n- (a scalar)."""
    return np.sum((np.asarray(plus) - np.asarray(minus)) * np.asarray(normal), axis=-1)


class FacetTrace(NamedTuple):
    """One-sided traces at a facet point: pressures, velocities (..., 2) and material."""

    p1: np.ndarray
    p2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    mu: float
    k1: float
    k2: float


def numerical_flux_kernel(plus: FacetTrace, minus: FacetTrace, normal, h_facet, params: FluxParameters):
    """Interior numerical fluxes (p1*, p2*, u1*, u2*) at facet points.

    ``normal`` points out of the plus side.
    """
    if np.any(np.asarray(h_facet) <= 0):
        raise AssemblyError("h_facet must be positive")
    out_p, out_u = [], []
    for i, (k_plus, k_minus) in enumerate(((plus.k1, minus.k1), (plus.k2, minus.k2))):
        pp, pm = (plus.p1, minus.p1) if i == 0 else (plus.p2, minus.p2)
        up, um = (plus.u1, minus.u1) if i == 0 else (plus.u2, minus.u2)
        p_star = average(pp, pm)
        u_star = average(up, um)
        if params.stabilized:
            drag = average(plus.mu / k_plus, minus.mu / k_minus)
            mob = average(k_plus / plus.mu, k_minus / minus.mu)
            p_star = p_star + params.eta_u * h_facet * drag * jump_vector(up, um, normal)
            coef = np.asarray(params.eta_p / np.asarray(h_facet, dtype=float) * mob)
            u_star = u_star + coef[..., None] * jump_scalar(pp, pm, normal)
        out_p.append(p_star)
        out_u.append(u_star)
    return out_p[0], out_p[1], out_u[0], out_u[1]


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


class _Triplets:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []
        self.frows, self.fvals = [], []

    def add(self, rows, cols, vals):
        # rows (n, r), cols (n, c), vals (n, r, c)
        r = np.broadcast_to(rows[:, :, None], vals.shape)
        c = np.broadcast_to(cols[:, None, :], vals.shape)
        self.rows.append(r.ravel().astype(np.int32))
        self.cols.append(c.ravel().astype(np.int32))
        self.vals.append(vals.ravel())

    def add_rhs(self, rows, vals):
        self.frows.append(rows.ravel())
        self.fvals.append(vals.ravel())

    def extend(self, other: "_Triplets"):
        self.rows += other.rows
        self.cols += other.cols
        self.vals += other.vals
        self.frows += other.frows
        self.fvals += other.fvals


def _mass(a, w, b):
    # a (n, q, i), w (n, q), b (n, q, j) -> (n, i, j)
    return np.einsum("nqi,nq,nqj->nij", a, w, b, optimize=True)


def _volume_degree(orders):
    return min(2 * max(orders) + 2, 20)


def _element_terms(space, maps, material, params, orders, elems, out: _Triplets):
    rule = quadrature("triangle", _volume_degree(orders))
    xi, wq = rule.points, rule.weights
    ne = len(elems)
    W = wq[None, :] * maps.det[elems][:, None]
    x = maps.offset[elems, None, :] + np.einsum("eij,qj->eqi", maps.jac[elems], xi)
    inv = maps.inv[elems]

    def tabulate(order):
        b = lagrange_tri_basis(order)
        phi = np.broadcast_to(b.eval(xi), (ne,) + (len(wq), b.dim))
        grad = np.einsum("eji,qkj->eqki", inv, b.grad(xi))
        return phi, grad

    stab = params.stabilized
    sigma = material.beta[elems] / material.mu[elems]
    p_tabs = []
    for net in (0, 1):
        phi_u, grad_u = tabulate(orders[net])
        phi_p, grad_p = tabulate(orders[2 + net])
        p_tabs.append(phi_p)
        alpha = material.drag(net)[elems]
        kappa = material.mobility(net)[elems]
        vdofs = [space.block_dofs(elems, b) for b in VEL_BLOCKS[net]]
        pdofs = space.block_dofs(elems, PRES_BLOCK[net])

        Mu = _mass(phi_u, W, phi_u)
        scale = 0.5 if stab else 1.0
        for d in (0, 1):
            out.add(vdofs[d], vdofs[d], (scale * alpha)[:, None, None] * Mu)
            B = _mass(grad_u[..., d], W, phi_p)  # (div w, p) contribution
            out.add(vdofs[d], pdofs, -B)
            out.add(pdofs, vdofs[d], np.swapaxes(B, 1, 2))
            if stab:
                out.add(vdofs[d], pdofs, -0.5 * _mass(phi_u, W, grad_p[..., d]))
                out.add(pdofs, vdofs[d], 0.5 * _mass(grad_p[..., d], W, phi_u))
        if stab:
            K = _mass(grad_p[..., 0], W, grad_p[..., 0]) + _mass(grad_p[..., 1], W, grad_p[..., 1])
            out.add(pdofs, pdofs, (0.5 * kappa)[:, None, None] * K)

        gb = material.body_force(net, elems, x)
        if gb is not None:
            for d in (0, 1):
                out.add_rhs(vdofs[d], scale * np.einsum("eqi,eq,eq->ei", phi_u, W, gb[..., d]))
                if stab:
                    out.add_rhs(pdofs, 0.5 * kappa[:, None] * np.einsum("eqi,eq,eq->ei", grad_p[..., d], W, gb[..., d]))

    # mass transfer (q1 - q2; beta/mu (p1 - p2))
    p1d = space.block_dofs(elems, 4)
    p2d = space.block_dofs(elems, 5)
    for (ra, ta, rd), (cb, tb, cd) in [
        ((0, p_tabs[0], p1d), (0, p_tabs[0], p1d)),
        ((0, p_tabs[0], p1d), (1, p_tabs[1], p2d)),
        ((1, p_tabs[1], p2d), (0, p_tabs[0], p1d)),
        ((1, p_tabs[1], p2d), (1, p_tabs[1], p2d)),
    ]:
        sign = 1.0 if ra == cb else -1.0
        out.add(rd, cd, (sign * sigma)[:, None, None] * _mass(ta, W, tb))


def _edge_ref(local_edges, t, reverse=False):
    ends = REF_VERTICES[LOCAL_EDGES[local_edges]]  # (n, 2, 2)
    tt = 1.0 - t if reverse else t
    return ends[:, None, 0, :] + tt[None, :, None] * (ends[:, None, 1, :] - ends[:, None, 0, :])


def _interior_terms(space, facets, quality, material, params, key, idx, out: _Triplets):
    op, om = key
    rule = quadrature("edge", min(2 * max(op + om) + 2, 20))
    t, wq = rule.points, rule.weights
    plus = facets.int_plus[idx]
    minus = facets.int_minus[idx]
    n = facets.int_normal[idx][:, None, :]
    W = wq[None, :] * facets.int_length[idx][:, None]
    xi_p = _edge_ref(facets.int_plus_edge[idx], t)
    xi_m = _edge_ref(facets.int_minus_edge[idx], t, reverse=True)
    h = quality.h_facet_int[idx]
    stab = params.stabilized

    for net in (0, 1):
        phi_up = lagrange_tri_basis(op[net]).eval(xi_p)
        phi_um = lagrange_tri_basis(om[net]).eval(xi_m)
        phi_pp = lagrange_tri_basis(op[2 + net]).eval(xi_p)
        phi_pm = lagrange_tri_basis(om[2 + net]).eval(xi_m)
        # [v+x, v+y, v-x, v-y] normal components with the jump sign
        Jw = np.concatenate(
            [phi_up * n[..., :1], phi_up * n[..., 1:], -phi_um * n[..., :1], -phi_um * n[..., 1:]], axis=-1
        )
        Ap = 0.5 * np.concatenate([phi_pp, phi_pm], axis=-1)
        vdofs = np.concatenate(
            [space.block_dofs(plus, b) for b in VEL_BLOCKS[net]] + [space.block_dofs(minus, b) for b in VEL_BLOCKS[net]],
            axis=1,
        )
        pdofs = np.concatenate([space.block_dofs(plus, PRES_BLOCK[net]), space.block_dofs(minus, PRES_BLOCK[net])], axis=1)
        C = _mass(Jw, W, Ap)
        out.add(vdofs, pdofs, C)
        out.add(pdofs, vdofs, -np.swapaxes(C, 1, 2))
        if stab and params.eta_u > 0:
            drag = average(material.drag(net)[plus], material.drag(net)[minus])
            out.add(vdofs, vdofs, (params.eta_u * h * drag)[:, None, None] * _mass(Jw, W, Jw))
        if stab and params.eta_p > 0:
            mob = average(material.mobility(net)[plus], material.mobility(net)[minus])
            Jp = np.concatenate([phi_pp, -phi_pm], axis=-1)
            out.add(pdofs, pdofs, (params.eta_p / h * mob)[:, None, None] * _mass(Jp, W, Jp))


def _exterior_terms(space, facets, maps, bc, orders, idx, out: _Triplets):
    rule = quadrature("edge", min(2 * max(orders) + 2, 20))
    t, wq = rule.points, rule.weights
    owner = facets.ext_owner[idx]
    n = facets.ext_normal[idx][:, None, :]
    W = wq[None, :] * facets.ext_length[idx][:, None]
    xi = _edge_ref(facets.ext_edge[idx], t)
    x = maps.offset[owner, None, :] + np.einsum("eij,eqj->eqi", maps.jac[owner], xi)
    tags = facets.ext_tag[idx]

    for net in (0, 1):
        phi_u = lagrange_tri_basis(orders[net]).eval(xi)
        phi_p = lagrange_tri_basis(orders[2 + net]).eval(xi)
        Wn = np.concatenate([phi_u * n[..., :1], phi_u * n[..., 1:]], axis=-1)
        vdofs = np.concatenate([space.block_dofs(owner, b) for b in VEL_BLOCKS[net]], axis=1)
        pdofs = space.block_dofs(owner, PRES_BLOCK[net])
        for tag in dict.fromkeys(tags):
            sel = tags == tag
            cond = bc.conditions[tag][net]
            value = cond.evaluate(x[sel])
            if cond.kind == "velocity":
                C = _mass(Wn[sel], W[sel], phi_p[sel])
                out.add(vdofs[sel], pdofs[sel], C)
                out.add(pdofs[sel], vdofs[sel], -np.swapaxes(C, 1, 2))
                out.add_rhs(pdofs[sel], -np.einsum("fqi,fq,fq->fi", phi_p[sel], W[sel], value))
            else:
                out.add_rhs(vdofs[sel], -np.einsum("fqi,fq,fq->fi", Wn[sel], W[sel], value))


def _chunks(idx, size):
    return [idx[i : i + size] for i in range(0, len(idx), size)] or [idx[:0]]


def _n_threads(threads):
    if threads is None:
        threads = int(os.environ.get("DPP_THREADS", "1") or 1)
    return max(1, int(threads))


def assemble(
    mesh: Mesh,
    facets: FacetSet,
    quality: MeshQuality,
    space: DGSpace,
    material: MaterialField,
    bc: BoundaryData,
    params: FluxParameters,
    threads: int | None = None,
    chunk_size: int = 4096,
) -> SparseSystem:
    """Assemble the four-field DG system.

    Work is split into element and facet chunks; with ``threads > 1`` the
    chunks run on a thread pool and are merged in chunk order, so the result
    is independent of the thread count.
    """
    if space.mesh is not mesh and space.mesh.n_elements != mesh.n_elements:
        raise AssemblyError("space was built on a different mesh")
    if material.k1.shape != (mesh.n_elements,):
        raise AssemblyError("material size does not match the mesh")
    bc.check_coverage(facets)
    maps = affine_maps(mesh)

    tasks = []
    for orders, elems in space.order_groups().items():
        for chunk in _chunks(elems, chunk_size):
            tasks.append((_element_terms, (space, maps, material, params, orders, chunk)))

    int_keys = np.concatenate([space.orders[facets.int_plus], space.orders[facets.int_minus]], axis=1)
    if len(int_keys):
        uniq, inverse = np.unique(int_keys, axis=0, return_inverse=True)
        for g, k in enumerate(uniq):
            idx = np.flatnonzero(inverse.ravel() == g)
            key = (tuple(int(o) for o in k[:4]), tuple(int(o) for o in k[4:]))
            for chunk in _chunks(idx, chunk_size):
                tasks.append((_interior_terms, (space, facets, quality, material, params, key, chunk)))

    ext_keys = space.orders[facets.ext_owner]
    if len(ext_keys):
        uniq, inverse = np.unique(ext_keys, axis=0, return_inverse=True)
        for g, k in enumerate(uniq):
            idx = np.flatnonzero(inverse.ravel() == g)
            for chunk in _chunks(idx, chunk_size):
                tasks.append((_exterior_terms, (space, facets, maps, bc, tuple(int(o) for o in k), chunk)))

    def run(task):
        fn, args = task
        trip = _Triplets()
        fn(*args, trip)
        return trip

    n_threads = _n_threads(threads)
    if n_threads == 1:
        results = [run(t) for t in tasks]
    else:
        with ThreadPoolExecutor(n_threads) as pool:
            results = list(pool.map(run, tasks))

    total = _Triplets()
    for r in results:
        total.extend(r)
    N = space.total_dofs
    rows = np.concatenate(total.rows) if total.rows else np.zeros(0, np.int32)
    cols = np.concatenate(total.cols) if total.cols else np.zeros(0, np.int32)
    vals = np.concatenate(total.vals) if total.vals else np.zeros(0)
    del total
    A = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
    A.sum_duplicates()
    # exact zeros (e.g. normal components on axis-aligned facets) only add fill
    A.eliminate_zeros()
    rhs = np.zeros(N)
    frows = [r for res in results for r in res.frows]
    fvals = [v for res in results for v in res.fvals]
    if frows:
        np.add.at(rhs, np.concatenate(frows), np.concatenate(fvals))
    return SparseSystem(A, rhs, space)


def consistency_residual(system: SparseSystem, exact_coeffs) -> float:
    """max |A x_exact - b| for the coefficient vector of an exact solution."""
    return float(np.max(np.abs(system.matrix @ exact_coeffs - system.rhs), initial=0.0))

"""Error norms, convergence rates, mass-balance audits, stability norm and line sampling."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields

import numpy as np

from .dpp import FluxParameters, MaterialField, _edge_ref, average
from .fem import MAX_QUAD_DEGREE, quadrature
from .mesh import LOCAL_EDGES, compute_quality, element_diameters, extract_facets
from .solver import FieldSolution

FIELD_NAMES = ("u1", "u2", "p1", "p2")


@dataclass(frozen=True)
class ErrorReport:
    """L2 errors of every field, broken H1 seminorm errors of the pressures
    and the stability-norm error (its square root)."""

    h: float
    dofs: int
    order: int
    l2_u1: float
    l2_u2: float
    l2_p1: float
    l2_p2: float
    h1_p1: float
    h1_p2: float
    stab: float

    def as_row(self) -> dict:
        return asdict(self)


def _exact_vector(fn, x):
    vx, vy = fn(x[..., 0], x[..., 1])
    return np.stack(np.broadcast_arrays(vx, vy), axis=-1)


def _volume_points(sol: FieldSolution, elems, degree):
    rule = quadrature("triangle", min(degree, MAX_QUAD_DEGREE))
    maps = sol.maps
    x = maps.offset[elems, None, :] + np.einsum("eij,qj->eqi", maps.jac[elems], rule.points)
    W = rule.weights[None, :] * maps.det[elems][:, None]
    return rule.points, x, W


def _default_material(space, exact):
    ne = space.mesh.n_elements
    return MaterialField(np.full(ne, exact.k1), exact.k2, exact.mu, exact.beta)


def error_norms(sol: FieldSolution, exact, material: MaterialField | None = None,
                params: FluxParameters | None = None, extra_degree: int = 4) -> ErrorReport:
    """Errors against an exact solution with over-integration (degree 2*order + extra_degree).

    ``exact`` provides ``p1, p2, u1, u2, grad_p1, grad_p2`` callables of (x, y).
    The stability-norm error uses ``material`` and ``params`` when given; the
    exact fields are continuous, so only the discrete jumps enter the facet terms.
    """
    space = sol.space
    if material is None:
        material = _default_material(space, exact) if hasattr(exact, "k1") else None
    sq = {k: 0.0 for k in ("u1", "u2", "p1", "p2", "h1_p1", "h1_p2")}
    stab = 0.0
    for orders, elems in space.order_groups().items():
        xi, x, W = _volume_points(sol, elems, 2 * max(orders) + extra_degree)
        err = {}
        for name in FIELD_NAMES:
            ref = _exact_vector(getattr(exact, name), x) if name[0] == "u" else getattr(exact, name)(x[..., 0], x[..., 1])
            err[name] = sol.values(name, elems, xi) - ref
            sq[name] += float(np.sum(W[..., None] * err[name] ** 2) if name[0] == "u" else np.sum(W * err[name] ** 2))
        for i, name in enumerate(("p1", "p2")):
            g = sol.values(name, elems, xi, grad=True) - _exact_vector(getattr(exact, "grad_" + name), x)
            gsq = np.sum(g**2, axis=-1)
            sq["h1_" + name] += float(np.sum(W * gsq))
            if material is not None:
                stab += 0.5 * float(np.sum(material.mobility(i)[elems][:, None] * W * gsq))
        if material is not None:
            for i, name in enumerate(("u1", "u2")):
                stab += 0.5 * float(np.sum(material.drag(i)[elems][:, None] * W * np.sum(err[name] ** 2, axis=-1)))
            sigma = material.beta[elems] / material.mu[elems]
            stab += float(np.sum(sigma[:, None] * W * (err["p1"] - err["p2"]) ** 2))
    if material is not None and params is not None:
        stab += _jump_terms(sol.space, sol.coeffs, material, params)
    return ErrorReport(
        h=float(element_diameters(space.mesh).max()),
        dofs=space.total_dofs,
        order=int(space.orders.max()),
        l2_u1=np.sqrt(sq["u1"]),
        l2_u2=np.sqrt(sq["u2"]),
        l2_p1=np.sqrt(sq["p1"]),
        l2_p2=np.sqrt(sq["p2"]),
        h1_p1=np.sqrt(sq["h1_p1"]),
        h1_p2=np.sqrt(sq["h1_p2"]),
        stab=float(np.sqrt(max(stab, 0.0))),
    )


def convergence_slope(h_list, error_list):
    """Least-squares slope of log(error) against log(h) and the per-interval slopes."""
    h = np.asarray(h_list, dtype=float)
    e = np.asarray(error_list, dtype=float)
    if h.shape != e.shape or h.ndim != 1:
        raise ValueError("h_list and error_list must be 1-D of equal length")
    if len(h) < 3:
        raise ValueError("at least three points are needed")
    if np.any(h <= 0) or np.any(e <= 0):
        raise ValueError("h and errors must be positive")
    d = np.diff(h)
    if not (np.all(d < 0) or np.all(d > 0)):
        raise ValueError("h_list must be strictly monotone")
    lh, le = np.log(h), np.log(e)
    slope = float(np.polyfit(lh, le, 1)[0])
    return slope, np.diff(le) / np.diff(lh)


def exponential_rate(orders, error_list) -> float:
    """Slope of log(error) against polynomial order (negative when errors decay)."""
    o = np.asarray(orders, dtype=float)
    e = np.asarray(error_list, dtype=float)
    if np.any(e <= 0):
        raise ValueError("errors must be positive")
    return float(np.polyfit(o, np.log(e), 1)[0])


# ---------------------------------------------------------------------------
# mass balance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MassBalanceReport:
    m: np.ndarray  # net outflow of u1 + u2 per element
    m_out_max: float
    m_in_max: float
    boundary_flux: float

    @property
    def argmax_out(self) -> int:
        return int(np.argmax(self.m))

    @property
    def argmax_in(self) -> int:
        return int(np.argmin(self.m))


def _edge_flux(mesh, elems, local_edges, velocity_at, degree):
    """Integral of velocity . n over local edges of elements, outward normals."""
    rule = quadrature("edge", min(degree, MAX_QUAD_DEGREE))
    ends = mesh.vertices[mesh.elements[elems[:, None], LOCAL_EDGES[local_edges]]]  # (f, 2, 2)
    t = ends[:, 1] - ends[:, 0]
    length = np.hypot(t[:, 0], t[:, 1])
    normal = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]
    xi = _edge_ref(local_edges, rule.points)
    x = ends[:, None, 0, :] + rule.points[None, :, None] * t[:, None, :]
    vel = velocity_at(elems, xi, x)
    return np.einsum("fqd,fd,q,f->f", vel, normal, rule.weights, length)


def elementwise_flux(source, mesh=None, degree=None) -> MassBalanceReport:
    """Per-element net flux of u1 + u2.

    ``source`` is a :class:`FieldSolution` or an exact solution with ``u1``
    and ``u2`` callables; the latter needs ``mesh`` and uses a degree-20 edge
    rule by default.
    """
    if isinstance(source, FieldSolution):
        mesh = source.mesh
        degree = degree or 2 * int(source.space.orders[:, :2].max()) + 2

        def velocity_at(elems, xi, x):
            return source.values("u1", elems, xi) + source.values("u2", elems, xi)
    else:
        if mesh is None:
            raise ValueError("an exact solution needs a mesh")
        degree = degree or MAX_QUAD_DEGREE

        def velocity_at(elems, xi, x):
            return _exact_vector(source.u1, x) + _exact_vector(source.u2, x)

    ne = mesh.n_elements
    m = np.zeros(ne)
    elems = np.arange(ne)
    for k in range(3):
        m += _edge_flux(mesh, elems, np.full(ne, k), velocity_at, degree)

    facets = extract_facets(mesh)
    bflux = float(np.sum(_edge_flux(mesh, facets.ext_owner, facets.ext_edge, velocity_at, degree)))
    return MassBalanceReport(m, float(max(m.max(), 0.0)), float(max((-m).max(), 0.0)), bflux)


# ---------------------------------------------------------------------------
# stability norm
# ---------------------------------------------------------------------------


def _jump_terms(space, coeffs, material, params, facets=None, quality=None):
    if not params.stabilized or (params.eta_u == 0 and params.eta_p == 0):
        return 0.0
    mesh = space.mesh
    facets = facets or extract_facets(mesh)
    if quality is None:
        quality = compute_quality(mesh, facets)
    sol = FieldSolution(space, coeffs)
    total = 0.0
    keys = np.concatenate([space.orders[facets.int_plus], space.orders[facets.int_minus]], axis=1)
    degree = min(2 * int(keys.max()) + 2, MAX_QUAD_DEGREE) if len(keys) else 2
    rule = quadrature("edge", degree)
    plus, minus = facets.int_plus, facets.int_minus
    xi_p = _edge_ref(facets.int_plus_edge, rule.points)
    xi_m = _edge_ref(facets.int_minus_edge, rule.points, reverse=True)
    W = rule.weights[None, :] * facets.int_length[:, None]
    h = quality.h_facet_int
    n = facets.int_normal[:, None, :]
    for i in (0, 1):
        u = ("u1", "u2")[i]
        p = ("p1", "p2")[i]
        ju = np.sum((sol.values(u, plus, xi_p) - sol.values(u, minus, xi_m)) * n, axis=-1)
        jp = sol.values(p, plus, xi_p) - sol.values(p, minus, xi_m)
        drag = average(material.drag(i)[plus], material.drag(i)[minus])
        mob = average(material.mobility(i)[plus], material.mobility(i)[minus])
        total += float(np.sum((params.eta_u * h * drag)[:, None] * W * ju**2))
        total += float(np.sum((params.eta_p / h * mob)[:, None] * W * jp**2))
    return total


def stability_norm(space, material, quality, params: FluxParameters, coeffs) -> float:
    """Squared stability norm B_stab(W; W) of a coefficient vector, by quadrature."""
    coeffs = np.asarray(coeffs, dtype=float)
    sol = FieldSolution(space, coeffs)
    total = 0.0
    for orders, elems in space.order_groups().items():
        xi, x, W = _volume_points(sol, elems, 2 * max(orders) + 2)
        q = {}
        for i in (0, 1):
            w = sol.values(("u1", "u2")[i], elems, xi)
            g = sol.values(("p1", "p2")[i], elems, xi, grad=True)
            q[i] = sol.values(("p1", "p2")[i], elems, xi)
            total += 0.5 * float(np.sum(material.drag(i)[elems][:, None] * W * np.sum(w**2, axis=-1)))
            total += 0.5 * float(np.sum(material.mobility(i)[elems][:, None] * W * np.sum(g**2, axis=-1)))
        sigma = material.beta[elems] / material.mu[elems]
        total += float(np.sum(sigma[:, None] * W * (q[0] - q[1]) ** 2))
    facets = extract_facets(space.mesh)
    total += _jump_terms(space, coeffs, material, params, facets, quality)
    return total


# ---------------------------------------------------------------------------
# line sampling and interface jumps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LineSample:
    """Samples along a segment; interval ends give one-sided values per element.

    Entries are ordered by ``t`` and, at a shared ``t``, by the element the
    segment leaves before the element it enters.
    """

    t: np.ndarray
    points: np.ndarray
    values: np.ndarray
    elems: np.ndarray

    def interface_jumps(self, tol=1e-12):
        """(t, value_after - value_before) wherever the element changes."""
        out = []
        for i in range(len(self.t) - 1):
            if abs(self.t[i + 1] - self.t[i]) <= tol and self.elems[i + 1] != self.elems[i]:
                out.append((self.t[i], self.values[i + 1] - self.values[i]))
        return out


def line_sample(sol: FieldSolution, a, b, n: int, field: str, component=None) -> LineSample:
    """Sample ``field`` on the segment a-b at ``n`` uniform points plus the
    entry and exit point of every element crossed."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    if np.hypot(*d) <= 0:
        raise ValueError("degenerate segment")
    if n < 2:
        raise ValueError("n must be at least 2")
    maps = sol.maps
    mesh = sol.mesh
    ne = mesh.n_elements
    # barycentric coordinates along the segment are affine in t: lam(t) = c0 + t c1
    r0 = np.einsum("eij,ej->ei", maps.inv, a - maps.offset)
    r1 = np.einsum("eij,j->ei", maps.inv, d)
    c0 = np.column_stack([1.0 - r0.sum(axis=1), r0])
    c1 = np.column_stack([-r1.sum(axis=1), r1])
    lo = np.zeros(ne)
    hi = np.ones(ne)
    with np.errstate(divide="ignore", invalid="ignore"):
        root = -c0 / c1
    for k in range(3):
        pos = c1[:, k] > 0
        neg = c1[:, k] < 0
        flat = c1[:, k] == 0
        lo[pos] = np.maximum(lo[pos], root[pos, k])
        hi[neg] = np.minimum(hi[neg], root[neg, k])
        hi[flat & (c0[:, k] < -1e-14)] = -1.0
    keep = np.flatnonzero(hi - lo > 1e-12)
    grid = np.linspace(0.0, 1.0, n)
    ts, es, rank = [], [], []
    for e in keep[np.argsort(lo[keep], kind="stable")]:
        inside = grid[(grid > lo[e]) & (grid < hi[e])]
        tt = np.concatenate([[lo[e]], inside, [hi[e]]])
        ts.append(tt)
        es.append(np.full(len(tt), e))
        # exit points sort before entry points at the same t
        rank.append(np.r_[1, np.ones(len(inside)), 0])
    t = np.concatenate(ts)
    elems = np.concatenate(es)
    rank = np.concatenate(rank)
    order = np.lexsort((rank, t))
    t, elems = t[order], elems[order]
    pts = a + t[:, None] * d
    xi = np.einsum("eij,ej->ei", maps.inv[elems], pts - maps.offset[elems])
    vals = sol.values(field, elems, xi[:, None, :])[:, 0]
    if component is not None:
        vals = vals[..., component]
    return LineSample(t, pts, vals, elems)


def interface_jump_l2(sol: FieldSolution, field: str, x0: float, component=0, tol=1e-12) -> float:
    """L2 norm over the interior facets on the vertical line x = x0 of the jump
    of one component of a velocity field (or of a pressure)."""
    mesh = sol.mesh
    facets = extract_facets(mesh)
    xs = mesh.vertices[facets.int_vertices][..., 0]
    sel = np.flatnonzero(np.all(np.abs(xs - x0) < tol, axis=1))
    if not len(sel):
        raise ValueError(f"no interior facets on x = {x0}")
    degree = min(2 * int(sol.space.orders.max()) + 2, MAX_QUAD_DEGREE)
    rule = quadrature("edge", degree)
    xi_p = _edge_ref(facets.int_plus_edge[sel], rule.points)
    xi_m = _edge_ref(facets.int_minus_edge[sel], rule.points, reverse=True)
    vp = sol.values(field, facets.int_plus[sel], xi_p)
    vm = sol.values(field, facets.int_minus[sel], xi_m)
    if field[0] == "u":
        vp, vm = vp[..., component], vm[..., component]
    W = rule.weights[None, :] * facets.int_length[sel][:, None]
    return float(np.sqrt(np.sum(W * (vp - vm) ** 2)))


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def write_error_csv(path, reports, extra: dict | None = None):
    """One row per ErrorReport; ``extra`` maps column name -> per-row values."""
    names = [f.name for f in fields(ErrorReport)]
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(extra) + names)
        for i, r in enumerate(reports):
            row = r.as_row()
            w.writerow([extra[k][i] for k in extra] + [_fmt(row[n]) for n in names])


def write_mass_balance_csv(path, report: MassBalanceReport, centroids=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "x", "y", "m"])
        for e, m in enumerate(report.m):
            cx, cy = (centroids[e] if centroids is not None else (np.nan, np.nan))
            w.writerow([e, _fmt(cx), _fmt(cy), _fmt(m)])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))

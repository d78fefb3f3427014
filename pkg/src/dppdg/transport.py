"""SUPG advection-diffusion on continuous P1 and the flow/transport coupling loop."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fem import quadrature
from .mesh import Mesh, element_diameters, extract_facets
from .solver import FieldSolution, solve
from .vtk import write_vtk

_REF_GRADS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
_CENTROID = np.array([[1.0 / 3.0, 1.0 / 3.0]])


@dataclass(frozen=True)
class CouplingConfig:
    mu0: float = 1e-3
    Rc: float = 3.0
    D: float = 2e-6
    dt: float = 5e-5
    T: float = 1.5e-3
    c_inj: float = 1.0
    c0: float = 0.0
    perturbation: float = 0.05
    perturbation_width: float = 0.02

    def __post_init__(self):
        if not (self.mu0 > 0 and self.D > 0 and self.dt > 0):
            raise ValueError("mu0, D and dt must be positive")
        if self.T < self.dt:
            raise ValueError("T must be at least dt")
        if self.perturbation < 0 or self.perturbation_width < 0:
            raise ValueError("perturbation parameters must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "CouplingConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown transport keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class TransportState:
    c: np.ndarray
    t: float = 0.0
    step: int = 0
    seed: int | None = None

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("time must be non-negative")


@dataclass(frozen=True)
class DirichletData:
    nodes: np.ndarray
    values: np.ndarray


def left_inlet(mesh: Mesh, value: float, tol=1e-12) -> DirichletData:
    nodes = np.flatnonzero(mesh.vertices[:, 0] <= mesh.vertices[:, 0].min() + tol)
    return DirichletData(nodes, np.full(len(nodes), float(value)))


def viscosity_field(c, mu0, Rc, mesh: Mesh | None = None) -> np.ndarray:
    """mu0 exp(Rc (1 - c)) per element.

    Nodal fields are averaged to element centroids when ``mesh`` is given.
    The concentration is clipped to [0, 1] so SUPG undershoots cannot push
    the viscosity outside [mu0, mu0 e^Rc].
    """
    if mu0 <= 0:
        raise ValueError("mu0 must be positive")
    c = np.asarray(c, dtype=float)
    if mesh is not None and c.shape[0] == mesh.n_vertices:
        c = c[mesh.elements].mean(axis=1)
    return mu0 * np.exp(Rc * (1.0 - np.clip(c, 0.0, 1.0)))


def initial_concentration(mesh: Mesh, cfg: CouplingConfig, seed=None) -> np.ndarray:
    """c0 plus a uniform random bump in [0, perturbation] on nodes with x <= perturbation_width."""
    rng = np.random.default_rng(seed)
    c = np.full(mesh.n_vertices, cfg.c0)
    near = mesh.vertices[:, 0] <= mesh.vertices[:, 0].min() + cfg.perturbation_width
    c[near] += rng.uniform(0.0, cfg.perturbation, near.sum())
    return c


def _velocity_fn(velocity, mesh):
    """Normalise to a callable (elems, xi) -> (n, q, 2)."""
    if isinstance(velocity, FieldSolution):
        return lambda elems, xi: velocity.values("u1", elems, xi) + velocity.values("u2", elems, xi)
    if callable(velocity):
        return velocity
    v = np.asarray(velocity, dtype=float)
    if v.shape == (2,):
        v = np.broadcast_to(v, (mesh.n_elements, 2))
    return lambda elems, xi: np.broadcast_to(v[elems][:, None, :], (len(elems), np.shape(xi)[-2], 2))


def _p1_geometry(mesh):
    p = mesh.vertices[mesh.elements]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.linalg.inv(jac)
    grads = np.einsum("eji,kj->eki", inv, _REF_GRADS)  # (ne, 3, 2)
    return det, grads


def supg_tau(speed, h, D):
    """Brooks-Hughes tau = h/(2|u|) (coth Pe - 1/Pe), Pe = |u| h / (2 D)."""
    speed = np.asarray(speed, dtype=float)
    pe = speed * h / (2.0 * D)
    xi = np.empty_like(pe)
    small = pe < 1e-3
    xi[small] = pe[small] / 3.0
    big = ~small
    xi[big] = 1.0 / np.tanh(pe[big]) - 1.0 / pe[big]
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(speed > 0, h / (2.0 * speed) * xi, h**2 / (12.0 * D))
    return tau


def _outflow_matrix(mesh, vel, facets):
    """Boundary term int w c (u.n)^+ on exterior facets (free outflow)."""
    rule = quadrature("edge", 3)
    owner = facets.ext_owner
    ends = mesh.vertices[facets.ext_vertices]
    x = ends[:, None, 0, :] + rule.points[None, :, None] * (ends[:, None, 1, :] - ends[:, None, 0, :])
    p = mesh.vertices[mesh.elements[owner]]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
    xi = np.einsum("fij,fqj->fqi", np.linalg.inv(jac), x - p[:, None, 0, :])
    un = np.maximum(np.einsum("fqd,fd->fq", vel(owner, xi), facets.ext_normal), 0.0)
    phi = np.stack([1.0 - rule.points, rule.points], axis=-1)  # (q, 2) along the facet
    B = np.einsum("fq,q,qi,qj->fij", un * facets.ext_length[:, None], rule.weights, phi, phi)
    v = facets.ext_vertices
    rows = np.repeat(v, 2, axis=1).ravel()
    cols = np.tile(v, (1, 2)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((B.ravel(), (rows, cols)), shape=(n, n))


def _assemble(mesh, vel, D, dt, form="advective", facets=None):
    rule = quadrature("triangle", 2)
    det, G = _p1_geometry(mesh)
    xi = rule.points
    phi = np.column_stack([1.0 - xi.sum(axis=1), xi])  # (q, 3)
    W = rule.weights[None, :] * det[:, None]  # (ne, q)
    elems = np.arange(mesh.n_elements)
    U = vel(elems, xi)  # (ne, q, 2)
    area = 0.5 * det
    ubar = np.einsum("eq,eqd->ed", W, U) / area[:, None]
    tau = supg_tau(np.hypot(ubar[:, 0], ubar[:, 1]), element_diameters(mesh), D)
    a = np.einsum("eqd,ejd->eqj", U, G)  # u . grad phi_j
    M = np.einsum("eq,qi,qj->eij", W, phi, phi)
    if form == "advective":
        C = np.einsum("eq,qi,eqj->eij", W, phi, a)
    elif form == "conservative":
        C = -np.einsum("eq,eqi,qj->eij", W, a, phi)
    else:
        raise ValueError(f"unknown advection form {form!r}")
    K = D * area[:, None, None] * np.einsum("eid,ejd->eij", G, G)
    Sm = tau[:, None, None] * np.einsum("eq,eqi,qj->eij", W, a, phi)
    Sa = tau[:, None, None] * np.einsum("eq,eqi,eqj->eij", W, a, a)
    rows = np.repeat(mesh.elements, 3, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 3)).ravel()
    n = mesh.n_vertices
    mass = sp.csr_matrix(((M + Sm).ravel(), (rows, cols)), shape=(n, n))
    lhs = mass / dt + sp.csr_matrix(((C + K + Sa).ravel(), (rows, cols)), shape=(n, n))
    if form == "conservative":
        lhs = lhs + _outflow_matrix(mesh, vel, facets or extract_facets(mesh))
    return lhs, mass


def supg_step(mesh: Mesh, velocity, D, dt, c_old, bc: DirichletData | None = None, source=None,
              form="advective", facets=None):
    """One backward-Euler SUPG step of c_t + u . grad c - D lap c = f.

    ``velocity`` is a FieldSolution (u1 + u2 is used), a callable
    (elems, xi) -> (n, q, 2) or a constant vector. Boundaries outside
    ``bc`` carry the natural zero diffusive flux.
    """
    c_old = np.asarray(c_old, dtype=float)
    if c_old.shape != (mesh.n_vertices,):
        raise ValueError("c_old must hold one value per vertex")
    lhs, mass = _assemble(mesh, _velocity_fn(velocity, mesh), D, dt, form, facets)
    rhs = mass @ c_old / dt
    if source is not None:
        rhs = rhs + source
    if bc is not None and len(bc.nodes):
        fixed = np.zeros(mesh.n_vertices, dtype=bool)
        fixed[bc.nodes] = True
        cd = np.zeros(mesh.n_vertices)
        cd[bc.nodes] = bc.values
        rhs = rhs - lhs @ cd
        keep = sp.diags((~fixed).astype(float))
        lhs = keep @ lhs @ keep + sp.diags(fixed.astype(float))
        rhs[fixed] = bc.values
    return splu(lhs.tocsc()).solve(rhs)


def total_mass(mesh: Mesh, c) -> float:
    det, _ = _p1_geometry(mesh)
    return float(np.sum(det / 6.0 * np.asarray(c)[mesh.elements].sum(axis=1)))


def boundary_flux(mesh: Mesh, velocity, D, c, facets=None, split=False):
    """Outward total flux of (u c - D grad c) . n over the boundary.

    With ``split=True`` returns (inflow, outflow), both non-negative.
    """
    facets = facets or extract_facets(mesh)
    vel = _velocity_fn(velocity, mesh)
    rule = quadrature("edge", 3)
    owner = facets.ext_owner
    ends = mesh.vertices[facets.ext_vertices]
    x = ends[:, None, 0, :] + rule.points[None, :, None] * (ends[:, None, 1, :] - ends[:, None, 0, :])
    cv = np.asarray(c)[facets.ext_vertices]
    cq = cv[:, None, 0] * (1.0 - rule.points) + cv[:, None, 1] * rule.points
    det, G = _p1_geometry(mesh)
    p = mesh.vertices[mesh.elements[owner]]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
    xi = np.einsum("fij,fqj->fqi", np.linalg.inv(jac), x - p[:, None, 0, :])
    U = vel(owner, xi)
    grad_c = np.einsum("fkd,fk->fd", G[owner], np.asarray(c)[mesh.elements[owner]])
    un = np.einsum("fqd,fd->fq", U, facets.ext_normal)
    dn = np.einsum("fd,fd->f", grad_c, facets.ext_normal)
    flux = np.sum((un * cq - D * dn[:, None]) * rule.weights[None, :], axis=1) * facets.ext_length
    if split:
        return float(-flux[flux < 0].sum()), float(flux[flux > 0].sum())
    return float(flux.sum())


def front_extent(mesh: Mesh, c, y_range, threshold=0.5) -> float:
    """Largest x of a node in the horizontal band y_range with c >= threshold (0 if none)."""
    y = mesh.vertices[:, 1]
    sel = (y >= y_range[0]) & (y <= y_range[1]) & (np.asarray(c) >= threshold)
    return float(mesh.vertices[sel, 0].max()) if sel.any() else 0.0


def layer_fronts(mesh: Mesh, c, y_mid, threshold=0.5, tol=1e-9):
    """Front extents (below, above) a horizontal layer interface; interface nodes belong to neither side."""
    y = mesh.vertices[:, 1]
    return (front_extent(mesh, c, (y.min(), y_mid - tol), threshold),
            front_extent(mesh, c, (y_mid + tol, y.max()), threshold))


@dataclass
class CoupledResult:
    times: list = field(default_factory=list)
    concentrations: list = field(default_factory=list)
    viscosities: list = field(default_factory=list)
    flows: list = field(default_factory=list)
    audit: list = field(default_factory=list)
    seed: int | None = None


AUDIT_COLUMNS = ("step", "t", "mass_change", "boundary_inflow", "throughput", "relative_defect", "c_min", "c_max", "mu_min", "mu_max")


def run_coupled(bundle, seed=None, out_dir=None, solver_method="direct", tol=1e-7, keep_flows=False,
                vtk=True, progress=None, form="advective") -> CoupledResult:
    """Operator-split loop: flow with mu(c), then one SUPG step with u1 + u2, then update mu."""
    tcfg = CouplingConfig.from_dict(bundle.info.get("transport", {}))
    mesh = bundle.mesh
    c = initial_concentration(mesh, tcfg, seed)
    inlet = left_inlet(mesh, tcfg.c_inj)
    c[inlet.nodes] = inlet.values
    state = TransportState(c, 0.0, 0, seed)
    mu = viscosity_field(c, tcfg.mu0, tcfg.Rc, mesh)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    result = CoupledResult(seed=seed)
    result.times.append(0.0)
    result.concentrations.append(c.copy())
    result.viscosities.append(mu.copy())
    for step in range(1, tcfg.n_steps + 1):
        system = bundle.assemble(material=bundle.material.with_viscosity(mu))
        flow = solve(system, method=solver_method, tol=tol)
        c_new = supg_step(mesh, flow, tcfg.D, tcfg.dt, state.c, inlet, form=form, facets=bundle.facets)
        dm = total_mass(mesh, c_new) - total_mass(mesh, state.c)
        fin, fout = boundary_flux(mesh, flow, tcfg.D, c_new, bundle.facets, split=True)
        inflow = tcfg.dt * (fin - fout)
        # normalised by the gross throughput so the defect stays meaningful after breakthrough
        defect = abs(dm - inflow) / max(tcfg.dt * (fin + fout), 1e-300)
        state = TransportState(c_new, step * tcfg.dt, step, seed)
        mu = viscosity_field(c_new, tcfg.mu0, tcfg.Rc, mesh)
        result.times.append(state.t)
        result.concentrations.append(c_new.copy())
        result.viscosities.append(mu.copy())
        if keep_flows:
            result.flows.append(flow)
        result.audit.append(dict(step=step, t=state.t, mass_change=dm, boundary_inflow=inflow,
                                 throughput=tcfg.dt * (fin + fout),
                                 relative_defect=defect, c_min=c_new.min(), c_max=c_new.max(),
                                 mu_min=mu.min(), mu_max=mu.max()))
        if out is not None and vtk:
            elems = np.arange(mesh.n_elements)
            u1 = flow.values("u1", elems, _CENTROID)[:, 0]
            u2 = flow.values("u2", elems, _CENTROID)[:, 0]
            write_vtk(out / f"fingering_{step:03d}.vtk", mesh, point_data={"c": c_new},
                      cell_data={"mu": mu, "u1_mag": np.hypot(u1[:, 0], u1[:, 1]),
                                 "u2_mag": np.hypot(u2[:, 0], u2[:, 1])})
        if progress is not None:
            progress(step, result.audit[-1])
    if out is not None:
        with open(out / "conservation_audit.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=AUDIT_COLUMNS)
            w.writeheader()
            for row in result.audit:
                w.writerow({k: repr(float(v)) if k not in ("step",) else v for k, v in row.items()})
    return result

"""Exact solutions and scenario builders (mesh, material, BCs and parameters)."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dpp import (
    BoundaryData,
    DGSpace,
    FluxParameters,
    MaterialField,
    assemble,
    build_space,
    pressure,
    velocity,
)
from .fem import basis_dim
from .mesh import (
    FacetSet,
    Mesh,
    MeshQuality,
    assign_regions_by_boxes,
    build_structured_tri_mesh,
    compute_quality,
    extract_facets,
)

KINDS = ("hydrostatic", "layered-patch", "exact-2d", "nonconforming-orders", "five-spot", "fingering", "mass-balance")
SIDES = ("left", "right", "bottom", "top")


class ConfigError(ValueError):
    pass


def compute_eta(k1, k2, beta) -> float:
    """Flow characterisation parameter sqrt(beta (k1 + k2) / (k1 k2))."""
    if k1 <= 0 or k2 <= 0:
        raise ValueError("permeabilities must be positive")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    return math.sqrt(beta * (k1 + k2) / (k1 * k2))


@dataclass(frozen=True)
class ExactSolution2D:
    """Closed-form pressures and velocities on the unit square (no body force)."""

    mu: float = 1.0
    beta: float = 1.0
    k1: float = 1.0
    k2: float = 0.1

    def __post_init__(self):
        if min(self.mu, self.beta, self.k1, self.k2) <= 0:
            raise ValueError("mu, beta, k1 and k2 must be positive")

    @property
    def eta(self) -> float:
        return compute_eta(self.k1, self.k2, self.beta)

    def _trig(self, x, y):
        e = np.exp(np.pi * x)
        return e * np.sin(np.pi * y), e * np.cos(np.pi * y)

    def p1(self, x, y):
        s, _ = self._trig(x, y)
        return self.mu / np.pi * s - self.mu / (self.beta * self.k1) * np.exp(self.eta * y)

    def p2(self, x, y):
        s, _ = self._trig(x, y)
        return self.mu / np.pi * s + self.mu / (self.beta * self.k2) * np.exp(self.eta * y)

    def u1(self, x, y):
        s, c = self._trig(x, y)
        return -self.k1 * s, -self.k1 * c + self.eta / self.beta * np.exp(self.eta * y)

    def u2(self, x, y):
        s, c = self._trig(x, y)
        return -self.k2 * s, -self.k2 * c - self.eta / self.beta * np.exp(self.eta * y)

    def grad_p1(self, x, y):
        s, c = self._trig(x, y)
        return self.mu * s, self.mu * c - self.mu * self.eta / (self.beta * self.k1) * np.exp(self.eta * y)

    def grad_p2(self, x, y):
        s, c = self._trig(x, y)
        return self.mu * s, self.mu * c + self.mu * self.eta / (self.beta * self.k2) * np.exp(self.eta * y)


def exact_2d(x, y, params: ExactSolution2D):
    """Literal evaluation of (p1, p2, u1, u2); velocities are (..., 2) arrays."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (
        params.p1(x, y),
        params.p2(x, y),
        np.stack(np.broadcast_arrays(*params.u1(x, y)), axis=-1),
        np.stack(np.broadcast_arrays(*params.u2(x, y)), axis=-1),
    )


@dataclass(frozen=True)
class ConstantState:
    """Hydrostatic state: p1 = p2 = value, u1 = u2 = 0."""

    value: float = 1.0

    def p1(self, x, y):
        return np.full(np.shape(x), self.value)

    p2 = p1

    def u1(self, x, y):
        z = np.zeros(np.shape(x))
        return z, z

    u2 = u1

    def grad_p1(self, x, y):
        z = np.zeros(np.shape(x))
        return z, z

    grad_p2 = grad_p1


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_DEFAULTS = {
    "hydrostatic": dict(mesh=dict(nx=4, ny=4), mu=1.0, beta=1.0, k1=1.0, k2=0.1, eta_u=0.0, eta_p=0.0,
                        bc={"pressure": 1.0}),
    "layered-patch": dict(mesh=dict(nx=125, ny=100, Lx=5.0, Ly=4.0), mu=1.0, beta=1.0,
                          k1=[0.2, 1.0, 2.0, 1.0, 0.2], k2=[0.02, 0.1, 0.2, 0.1, 0.02],
                          eta_u=100.0, eta_p=100.0, bc={"pin_at": [2.5, 2.0], "pin_value": 2.5}),
    "exact-2d": dict(mesh=dict(nx=10, ny=10), mu=1.0, beta=1.0, k1=1.0, k2=0.1, eta_u=10.0, eta_p=1.0),
    "mass-balance": dict(mesh=dict(nx=5, ny=5), mu=1.0, beta=1.0, k1=1.0, k2=0.1, eta_u=10.0, eta_p=1.0),
    "nonconforming-orders": dict(mesh=dict(nx=10, ny=10), mu=1.0, beta=1.0, k1=1.0, k2=0.1, eta_u=10.0,
                                 eta_p=1.0, orders={"left": 3, "right": 1}),
    # quadrants I..IV in reading order: top-left, top-right, bottom-left, bottom-right
    "five-spot": dict(mesh=dict(nx=100, ny=100), mu=1.0, beta=1.0, k1=[1.0, 0.01, 0.01, 1.0],
                      k2=[0.1, 0.001, 0.001, 0.1], eta_u=0.0, eta_p=0.0, bc={"strength": 1.0}),
    "fingering": dict(mesh=dict(nx=100, ny=40, Lx=1.0, Ly=0.4), mu=1e-3, beta=1.0, k1=[1.1, 0.9],
                      k2=[0.011, 0.009], eta_u=0.0, eta_p=0.0, bc={"p_left": 10.0, "p_right": 1.0},
                      transport=dict(mu0=1e-3, Rc=3.0, D=2e-6, dt=5e-5, T=1.5e-3, c0=0.0, c_inj=1.0,
                                     perturbation=0.05, perturbation_width=0.02)),
}


@dataclass
class ScenarioConfig:
    """Scenario description; JSON keys mirror the field names."""

    kind: str
    mesh: dict = field(default_factory=dict)
    mu: float = 1.0
    beta: float = 1.0
    k1: object = 1.0
    k2: object = 0.1
    eta_u: float = 0.0
    eta_p: float = 0.0
    mode: str = "stabilized"
    orders: object = 1
    bc: dict = field(default_factory=dict)
    transport: dict | None = None
    seed: int = 0

    @classmethod
    def default(cls, kind: str, **overrides) -> "ScenarioConfig":
        if kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {kind!r}; expected one of {', '.join(KINDS)}")
        data = json.loads(json.dumps(_DEFAULTS[kind]))
        for key, value in overrides.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key].update(value)
            else:
                data[key] = value
        cfg = cls(kind=kind, **data)
        cfg.validate()
        return cfg

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict) or "kind" not in data:
            raise ConfigError("config must be a JSON object with a 'kind' key")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        rest = {k: v for k, v in data.items() if k != "kind"}
        return cls.default(data["kind"], **rest)

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        for key in ("nx", "ny"):
            v = self.mesh.get(key)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"mesh.{key} must be a positive integer")
        for key in ("Lx", "Ly"):
            if float(self.mesh.get(key, 1.0)) <= 0:
                raise ConfigError(f"mesh.{key} must be positive")
        if self.mu <= 0 or self.beta < 0:
            raise ConfigError("mu must be positive and beta non-negative")
        for name in ("k1", "k2"):
            vals = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if np.any(vals <= 0):
                raise ConfigError(f"{name} must be positive")
        if self.eta_u < 0 or self.eta_p < 0:
            raise ConfigError("eta_u and eta_p must be non-negative")
        if self.mode not in ("galerkin", "stabilized"):
            raise ConfigError(f"mode must be 'galerkin' or 'stabilized', got {self.mode!r}")
        if self.kind == "layered-patch" and np.size(self.k1) != np.size(self.k2):
            raise ConfigError("layered-patch needs one k2 per k1 layer")
        if self.kind == "five-spot" and (np.size(self.k1) != 4 or np.size(self.k2) != 4):
            raise ConfigError("five-spot needs four k1 and four k2 values (quadrants I-IV)")
        if self.kind == "five-spot" and (self.mesh["nx"] % 2 or self.mesh["ny"] % 2):
            raise ConfigError("five-spot needs even nx and ny so quadrants align with elements")
        if self.kind == "fingering":
            t = self.transport or {}
            for key in ("mu0", "D", "dt", "T"):
                if float(t.get(key, 0.0)) <= 0:
                    raise ConfigError(f"transport.{key} must be positive")
            if t["T"] < t["dt"]:
                raise ConfigError("transport.T must be at least transport.dt")


@dataclass
class ScenarioBundle:
    config: ScenarioConfig
    mesh: Mesh
    facets: FacetSet
    quality: MeshQuality
    space: DGSpace
    material: MaterialField
    bc: BoundaryData
    params: FluxParameters
    exact: object = None
    pins: list = field(default_factory=list)  # (dof, value)
    info: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.mesh, self.facets, self.quality, self.space, self.material, self.bc, self.params, self.exact))

    def assemble(self, material: MaterialField | None = None, threads=None):
        from .solver import pin_dof

        system = assemble(self.mesh, self.facets, self.quality, self.space, material or self.material, self.bc,
                          self.params, threads=threads)
        for dof, value in self.pins:
            system = pin_dof(system, dof, value)
        return system


def _orders(cfg: ScenarioConfig, mesh: Mesh, Lx: float):
    orders = cfg.orders
    if isinstance(orders, dict):
        if set(orders) == {"left", "right"}:
            left = mesh.centroids()[:, 0] < 0.5 * Lx
            return np.where(left, int(orders["left"]), int(orders["right"]))
        if set(orders) == {"u1", "u2", "p1", "p2"}:
            return np.tile([int(orders[f]) for f in ("u1", "u2", "p1", "p2")], (mesh.n_elements, 1))
        raise ConfigError("orders must be an int, {left, right} or {u1, u2, p1, p2}")
    if isinstance(orders, (list, tuple)):
        if len(orders) != 4:
            raise ConfigError("an orders list needs four entries (u1, u2, p1, p2)")
        return np.tile([int(o) for o in orders], (mesh.n_elements, 1))
    return int(orders)


def pressure_dof_at(space: DGSpace, point, network=0) -> int:
    """Global p1 (or p2) DOF of the nodal basis function sitting on the mesh vertex nearest ``point``."""
    mesh = space.mesh
    v = int(np.argmin(np.hypot(*(mesh.vertices - np.asarray(point, dtype=float)).T)))
    elem, local = (int(a[0]) for a in np.nonzero(mesh.elements == v))
    block = 4 + network
    order = int(space.orders[elem, 2 + network])
    node = (0, order, basis_dim(order) - 1)[local]
    return int(space.block_dofs([elem], block)[0, node])


def _corner_facets(mesh: Mesh, facets: FacetSet, corner):
    """Exterior facets incident to the mesh vertex at ``corner``."""
    v = int(np.argmin(np.hypot(*(mesh.vertices - np.asarray(corner)).T)))
    return [i for i, (a, b) in enumerate(facets.ext_vertices) if v in (a, b)]


def build_scenario(cfg: ScenarioConfig) -> ScenarioBundle:
    cfg.validate()
    m = cfg.mesh
    Lx, Ly = float(m.get("Lx", 1.0)), float(m.get("Ly", 1.0))
    mesh = build_structured_tri_mesh(m["nx"], m["ny"], Lx, Ly, m.get("split", "left-diagonal"))
    params = FluxParameters(cfg.eta_u, cfg.eta_p, cfg.mode)
    mu, beta = float(cfg.mu), float(cfg.beta)
    k1 = np.atleast_1d(np.asarray(cfg.k1, dtype=float))
    k2 = np.atleast_1d(np.asarray(cfg.k2, dtype=float))
    exact = None
    pins = []
    info = {}

    if cfg.kind == "hydrostatic":
        value = float(cfg.bc.get("pressure", 1.0))
        bc = BoundaryData.uniform(SIDES, pressure(value))
        table = {0: dict(k1=k1[0], k2=k2[0], mu=mu, beta=beta)}
        exact = ConstantState(value)

    elif cfg.kind == "layered-patch":
        n = len(k1)
        h = Ly / n
        mesh = assign_regions_by_boxes(mesh, [(i, (0.0, Lx, i * h, (i + 1) * h)) for i in range(n)])
        table = {i: dict(k1=k1[i], k2=k2[i], mu=mu, beta=beta) for i in range(n)}

        def layer_flux(k, sign):
            def f(x, y):
                idx = np.clip((np.asarray(y) / h).astype(int), 0, n - 1)
                return sign * k[idx] / mu
            return f

        bc = BoundaryData({
            "left": (velocity(layer_flux(k1, -1.0)), velocity(layer_flux(k2, -1.0))),
            "right": (velocity(layer_flux(k1, 1.0)), velocity(layer_flux(k2, 1.0))),
            "bottom": (velocity(0.0), velocity(0.0)),
            "top": (velocity(0.0), velocity(0.0)),
        })
        info["layer_height"] = h
        # datum p1 = pin_value at the mesh vertex nearest pin_at; the exact pressure is pin_value + x_pin - x
        info["pin_at"] = tuple(float(v) for v in cfg.bc.get("pin_at", (0.0, 0.0)))
        info["pin_value"] = float(cfg.bc.get("pin_value", Lx - info["pin_at"][0]))

    elif cfg.kind in ("exact-2d", "nonconforming-orders", "mass-balance"):
        exact = ExactSolution2D(mu, beta, float(k1[0]), float(k2[0]))
        bc = BoundaryData.uniform(SIDES, pressure(exact.p1), pressure(exact.p2))
        table = {0: dict(k1=k1[0], k2=k2[0], mu=mu, beta=beta)}

    elif cfg.kind == "five-spot":
        # wells at (0,0) and (1,1) sit in the less permeable quadrants III and II
        boxes = [(0, (0.0, 0.5, 0.5, 1.0)), (1, (0.5, 1.0, 0.5, 1.0)), (2, (0.0, 0.5, 0.0, 0.5)), (3, (0.5, 1.0, 0.0, 0.5))]
        mesh = assign_regions_by_boxes(mesh, [(r, (x0 * Lx, x1 * Lx, y0 * Ly, y1 * Ly)) for r, (x0, x1, y0, y1) in boxes])
        table = {i: dict(k1=k1[i], k2=k2[i], mu=mu, beta=beta) for i in range(4)}
        strength = float(cfg.bc.get("strength", 1.0))
        probe = extract_facets(mesh)
        tags = {}
        for tag, corner in (("inj", (0.0, 0.0)), ("prod", (Lx, Ly))):
            for i in _corner_facets(mesh, probe, corner):
                a, b = probe.ext_vertices[i]
                tags[(min(a, b), max(a, b))] = tag
        mesh = mesh.with_edge_tags(tags)
        probe = extract_facets(mesh)
        lengths = {t: probe.ext_length[probe.ext_tag == t].sum() for t in ("inj", "prod")}
        bc = BoundaryData({
            **{s: (velocity(0.0), velocity(0.0)) for s in SIDES},
            # inflow at the injector is a negative outward normal velocity
            "inj": (velocity(-strength / lengths["inj"]), velocity(0.0)),
            "prod": (velocity(strength / lengths["prod"]), velocity(0.0)),
        })
        info["strength"] = strength
        # a pure-flux problem: fix the pressure datum at the injector corner
        info["pin_at"] = (0.0, 0.0)
        info["pin_value"] = 0.0

    elif cfg.kind == "fingering":
        mid = 0.5 * Ly
        mesh = assign_regions_by_boxes(mesh, [(0, (0.0, Lx, 0.0, mid)), (1, (0.0, Lx, mid, Ly))])
        table = {i: dict(k1=k1[i], k2=k2[i], mu=mu, beta=beta) for i in range(2)}
        pl, pr = float(cfg.bc.get("p_left", 10.0)), float(cfg.bc.get("p_right", 1.0))
        bc = BoundaryData({
            "left": (pressure(pl), pressure(pl)),
            "right": (pressure(pr), pressure(pr)),
            "bottom": (velocity(0.0), velocity(0.0)),
            "top": (velocity(0.0), velocity(0.0)),
        })
        info["transport"] = dict(cfg.transport)
    else:  # pragma: no cover - validate() rejects unknown kinds
        raise ConfigError(f"unknown kind {cfg.kind!r}")

    facets = extract_facets(mesh)
    quality = compute_quality(mesh, facets)
    space = build_space(mesh, _orders(cfg, mesh, Lx))
    material = MaterialField.from_regions(mesh, table)
    try:
        bc.check_coverage(facets)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if "pin_value" in info:
        pins.append((pressure_dof_at(space, info["pin_at"]), info["pin_value"]))
    return ScenarioBundle(cfg, mesh, facets, quality, space, material, bc, params, exact, pins, info)

"""Structured triangular meshes, facet topology and mesh-size quantities."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# local edge k is opposite local vertex k
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    """Triangular mesh with counterclockwise elements.

    ``edge_tags`` maps a sorted vertex pair to a boundary label for exterior
    edges. Untagged exterior edges get the tag ``"boundary"``.
    """

    vertices: np.ndarray
    elements: np.ndarray
    region_id: np.ndarray
    edge_tags: dict = field(default_factory=dict)

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        region_id = np.ascontiguousarray(self.region_id, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (n, 2)")
        if elements.ndim != 2 or elements.shape[1] != 3:
            raise MeshError("elements must have shape (n, 3)")
        if region_id.shape != (elements.shape[0],):
            raise MeshError("region_id must have one entry per element")
        if elements.size and (elements.min() < 0 or elements.max() >= len(vertices)):
            raise MeshError("vertex index out of range")
        vertices.setflags(write=False)
        elements.setflags(write=False)
        region_id.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "region_id", region_id)
        if np.any(self.signed_areas() <= 0.0):
            raise MeshError("elements must have positive signed area")

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.elements]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    def with_regions(self, region_id) -> "Mesh":
        return Mesh(self.vertices, self.elements, region_id, dict(self.edge_tags))

    def with_edge_tags(self, tags: dict) -> "Mesh":
        merged = dict(self.edge_tags)
        merged.update(tags)
        return Mesh(self.vertices, self.elements, self.region_id, merged)


def build_structured_tri_mesh(nx, ny, Lx=1.0, Ly=1.0, split="left-diagonal") -> Mesh:
    """Split an ``nx`` by ``ny`` grid of rectangles on [0,Lx]x[0,Ly] into triangles.

    ``split="left-diagonal"`` cuts each cell along the diagonal from its
    bottom-right to its top-left corner, ``"right-diagonal"`` from bottom-left
    to top-right. Exterior edges are tagged left/right/bottom/top.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError("cell counts must be positive integers")
    if not (Lx > 0 and Ly > 0):
        raise MeshError("domain dimensions must be positive")
    if split not in ("left-diagonal", "right-diagonal"):
        raise MeshError(f"unknown split {split!r}")
    nx, ny = int(nx), int(ny)

    xs = np.linspace(0.0, Lx, nx + 1)
    ys = np.linspace(0.0, Ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    v00 = j * (nx + 1) + i
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    if split == "left-diagonal":
        t1 = np.column_stack([v00, v10, v01])
        t2 = np.column_stack([v10, v11, v01])
    else:
        t1 = np.column_stack([v00, v10, v11])
        t2 = np.column_stack([v00, v11, v01])
    elements = np.empty((2 * nx * ny, 3), dtype=np.int64)
    elements[0::2] = t1
    elements[1::2] = t2

    tags = {}
    row = lambda jj: jj * (nx + 1) + np.arange(nx + 1)
    col = lambda ii: np.arange(ny + 1) * (nx + 1) + ii
    for tag, line in (("bottom", row(0)), ("top", row(ny)), ("left", col(0)), ("right", col(nx))):
        for a, b in zip(line[:-1], line[1:]):
            tags[(min(a, b), max(a, b))] = tag
    return Mesh(vertices, elements, np.zeros(len(elements), dtype=np.int64), tags)


def assign_regions_by_boxes(mesh: Mesh, boxes, default=0) -> Mesh:
    """Label elements whose centroid lies in an axis-aligned box.

    ``boxes`` is a sequence of ``(region, (x0, x1, y0, y1))``; later boxes win.
    """
    c = mesh.centroids()
    region = np.full(mesh.n_elements, default, dtype=np.int64)
    for label, (x0, x1, y0, y1) in boxes:
        inside = (c[:, 0] >= x0) & (c[:, 0] <= x1) & (c[:, 1] >= y0) & (c[:, 1] <= y1)
        region[inside] = label
    return mesh.with_regions(region)


@dataclass(frozen=True)
class FacetSet:
    """Interior and exterior edges of a mesh.

    Interior edge vertices are stored in the counterclockwise order of the
    plus element; ``int_normal`` is the unit normal pointing out of the plus
    element. The plus element is always the lower element index.
    """

    int_vertices: np.ndarray
    int_plus: np.ndarray
    int_minus: np.ndarray
    int_plus_edge: np.ndarray
    int_minus_edge: np.ndarray
    int_normal: np.ndarray
    int_length: np.ndarray
    ext_vertices: np.ndarray
    ext_owner: np.ndarray
    ext_edge: np.ndarray
    ext_normal: np.ndarray
    ext_length: np.ndarray
    ext_tag: np.ndarray

    @property
    def n_interior(self) -> int:
        return len(self.int_plus)

    @property
    def n_exterior(self) -> int:
        return len(self.ext_owner)


def _edge_geometry(coords):
    t = coords[:, 1] - coords[:, 0]
    length = np.hypot(t[:, 0], t[:, 1])
    normal = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]
    return normal, length


def extract_facets(mesh: Mesh) -> FacetSet:
    ne = mesh.n_elements
    # oriented edges in element ccw order: (elem, local edge) -> (a, b)
    local = mesh.elements[:, LOCAL_EDGES]  # (ne, 3, 2)
    oriented = local.reshape(-1, 2)
    keys = np.sort(oriented, axis=1)
    elem = np.repeat(np.arange(ne), 3)
    ledge = np.tile(np.arange(3), ne)

    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise MeshError("non-manifold mesh: an edge is shared by more than two elements")

    # stable sort keeps the lower element first within each edge group
    order = np.argsort(inverse, kind="stable")
    grouped = inverse[order]
    starts = np.flatnonzero(np.r_[True, grouped[1:] != grouped[:-1]])
    sizes = counts[grouped[starts]]

    first = order[starts]
    interior = sizes == 2
    plus = first[interior]
    minus = order[starts[interior] + 1]
    ext = first[~interior]

    int_vertices = oriented[plus]
    int_normal, int_length = _edge_geometry(mesh.vertices[int_vertices])
    ext_vertices = oriented[ext]
    ext_normal, ext_length = _edge_geometry(mesh.vertices[ext_vertices])
    ext_keys = keys[ext]
    ext_tag = np.array(
        [mesh.edge_tags.get((int(a), int(b)), "boundary") for a, b in ext_keys], dtype=object
    )

    # order interior facets by (plus, minus) so assembly order is fixed
    iperm = np.lexsort((elem[minus], elem[plus]))
    eperm = np.lexsort((ledge[ext], elem[ext]))
    facets = FacetSet(
        int_vertices=int_vertices[iperm],
        int_plus=elem[plus][iperm],
        int_minus=elem[minus][iperm],
        int_plus_edge=ledge[plus][iperm],
        int_minus_edge=ledge[minus][iperm],
        int_normal=int_normal[iperm],
        int_length=int_length[iperm],
        ext_vertices=ext_vertices[eperm],
        ext_owner=elem[ext][eperm],
        ext_edge=ledge[ext][eperm],
        ext_normal=ext_normal[eperm],
        ext_length=ext_length[eperm],
        ext_tag=ext_tag[eperm],
    )
    for arr in facets.__dict__.values():
        arr.setflags(write=False)
    return facets


@dataclass(frozen=True)
class MeshQuality:
    h: float
    h_elem: np.ndarray
    h_inc: np.ndarray
    h_facet_int: np.ndarray
    h_facet_ext: np.ndarray
    c_sp: float
    c_lqu: float


def element_diameters(mesh: Mesh) -> np.ndarray:
    """Longest edge of each element."""
    p = mesh.vertices[mesh.elements]
    edges = p[:, [1, 2, 0]] - p
    return np.hypot(edges[..., 0], edges[..., 1]).max(axis=1)


def compute_quality(mesh: Mesh, facets: FacetSet) -> MeshQuality:
    p = mesh.vertices[mesh.elements]
    edges = p[:, [1, 2, 0]] - p
    lengths = np.hypot(edges[..., 0], edges[..., 1])
    h_elem = lengths.max(axis=1)
    # inscribed-circle diameter = 4 * area / perimeter
    h_inc = 4.0 * mesh.signed_areas() / lengths.sum(axis=1)

    hp = h_elem[facets.int_plus]
    hm = h_elem[facets.int_minus]
    h_facet_int = 0.5 * (hp + hm)
    h_facet_ext = h_elem[facets.ext_owner]
    c_lqu = float(np.max(np.maximum(hp / hm, hm / hp))) if len(hp) else 1.0
    return MeshQuality(
        h=float(h_elem.max()),
        h_elem=h_elem,
        h_inc=h_inc,
        h_facet_int=h_facet_int,
        h_facet_ext=h_facet_ext,
        c_sp=float(np.min(h_inc / h_elem)),
        c_lqu=c_lqu,
    )

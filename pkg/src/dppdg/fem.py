"""Reference-triangle Lagrange bases, quadrature rules and affine element maps.

The reference triangle has vertices (0,0), (1,0), (0,1). Local edge ``k`` is
the edge opposite vertex ``k`` and is parametrised by ``t`` in [0, 1] from its
first to its second endpoint (see ``mesh.LOCAL_EDGES``).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import eval_jacobi, roots_jacobi

from .mesh import LOCAL_EDGES, Mesh

MAX_ORDER = 8
MAX_QUAD_DEGREE = 20
REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def basis_dim(order) -> int:
    return (order + 1) * (order + 2) // 2


def _jacobi(n, alpha, s):
    """Jacobi P_n^(alpha,0) and its derivative at ``s``."""
    val = eval_jacobi(n, alpha, 0.0, s)
    if n == 0:
        return val, np.zeros_like(val)
    return val, 0.5 * (n + alpha + 1) * eval_jacobi(n - 1, alpha + 1.0, 1.0, s)


def _modal(order, pts):
    """Dubiner (collapsed-coordinate Jacobi) modes and their gradients."""
    pts = np.asarray(pts, dtype=float)
    r = 2.0 * pts[..., 0] - 1.0
    s = 2.0 * pts[..., 1] - 1.0
    top = np.abs(1.0 - s) < 1e-13
    a = np.where(top, -1.0, 2.0 * (1.0 + r) / np.where(top, 0.5, 1.0 - s) - 1.0)
    b = s
    half = 0.5 * (1.0 - b)
    vals, gx, gy = [], [], []
    for j in range(order + 1):
        for i in range(order + 1 - j):
            fa, dfa = _jacobi(i, 0.0, a)
            gb, dgb = _jacobi(j, 2.0 * i + 1.0, b)
            vals.append(fa * gb * half**i)
            lower = half ** (i - 1) if i > 0 else np.ones_like(b)
            dr = dfa * gb * (lower if i > 0 else 1.0)
            ds = dfa * gb * 0.5 * (1.0 + a) * (lower if i > 0 else 1.0)
            tmp = dgb * half**i
            if i > 0:
                tmp = tmp - 0.5 * i * gb * lower
            ds = ds + fa * tmp
            # d/dx = 2 d/dr, d/dy = 2 d/ds
            gx.append(2.0 * dr)
            gy.append(2.0 * ds)
    vals = np.stack(vals, axis=-1)
    return vals, np.stack([np.stack(gx, axis=-1), np.stack(gy, axis=-1)], axis=-1)


class BasisError(ValueError):
    pass


class ReferenceBasis:
    """Nodal Lagrange basis of degree ``order`` on equispaced nodes.

    Nodes are ordered row by row from the bottom edge, so order 1 nodes are
    the three reference vertices.
    """

    def __init__(self, order: int):
        if int(order) != order or order < 1 or order > MAX_ORDER:
            raise BasisError(f"order must be an integer in [1, {MAX_ORDER}], got {order}")
        self.order = int(order)
        m = self.order
        self.nodes = np.array([[i / m, j / m] for j in range(m + 1) for i in range(m + 1 - j)])
        self.dim = basis_dim(m)
        V, _ = _modal(m, self.nodes)
        # column scaling keeps the inverse well conditioned at high order
        self._scale = 1.0 / np.linalg.norm(V, axis=0)
        self._coef = self._scale[:, None] * np.linalg.inv(V * self._scale)

    def __repr__(self):
        return f"ReferenceBasis(order={self.order})"

    def eval(self, pts) -> np.ndarray:
        """Basis values, shape ``pts.shape[:-1] + (dim,)``."""
        vals, _ = _modal(self.order, pts)
        return vals @ self._coef

    def grad(self, pts) -> np.ndarray:
        """Reference gradients, shape ``pts.shape[:-1] + (dim, 2)``."""
        _, g = _modal(self.order, pts)
        return np.einsum("...kd,ki->...id", g, self._coef)


@lru_cache(maxsize=None)
def lagrange_tri_basis(order: int) -> ReferenceBasis:
    return ReferenceBasis(order)


@dataclass(frozen=True)
class QuadratureRule:
    domain: str
    degree: int
    points: np.ndarray
    weights: np.ndarray


def _n_gauss(degree):
    return (degree + 2) // 2


@lru_cache(maxsize=None)
def quadrature(domain: str, degree: int) -> QuadratureRule:
    """Rule exact for polynomials of total degree ``degree``.

    Triangle rules are collapsed Gauss-Legendre x Gauss-Jacobi(1,0) products,
    except degree 1 which is the centroid rule. Edge rules are Gauss-Legendre
    on [0, 1] with points of shape (n,).
    """
    if int(degree) != degree or degree < 1 or degree > MAX_QUAD_DEGREE:
        raise ValueError(f"quadrature degree must be in [1, {MAX_QUAD_DEGREE}], got {degree}")
    degree = int(degree)
    n = _n_gauss(degree)
    if domain == "edge":
        s, w = np.polynomial.legendre.leggauss(n)
        pts, wts = 0.5 * (s + 1.0), 0.5 * w
    elif domain == "triangle":
        if degree == 1:
            pts, wts = np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([0.5])
        else:
            sa, wa = np.polynomial.legendre.leggauss(n)
            sb, wb = roots_jacobi(n, 1.0, 0.0)
            a = 0.5 * (sa + 1.0)
            b = 0.5 * (sb + 1.0)
            A, B = np.meshgrid(a, b, indexing="ij")
            pts = np.column_stack([(A * (1.0 - B)).ravel(), B.ravel()])
            wts = (0.125 * np.outer(wa, wb)).ravel()
    else:
        raise ValueError(f"unknown quadrature domain {domain!r}")
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(domain, degree, pts, wts)


def edge_points(local_edge, t) -> np.ndarray:
    """Reference coordinates of edge parameters ``t`` on ``local_edge``."""
    if local_edge not in (0, 1, 2):
        raise ValueError("local_edge must be 0, 1 or 2")
    a, b = REF_VERTICES[LOCAL_EDGES[local_edge]]
    t = np.asarray(t, dtype=float)[..., None]
    return a + t * (b - a)


def trace_eval(basis: ReferenceBasis, local_edge: int, edge_params):
    """Basis values and reference gradients restricted to one local edge."""
    pts = edge_points(local_edge, edge_params)
    return basis.eval(pts), basis.grad(pts)


@dataclass(frozen=True)
class AffineMaps:
    """x = offset + jac @ xi for every element, vectorised over elements."""

    offset: np.ndarray
    jac: np.ndarray
    det: np.ndarray
    inv: np.ndarray

    @property
    def inv_t(self) -> np.ndarray:
        return np.swapaxes(self.inv, -1, -2)

    def to_physical(self, elems, xi):
        xi = np.asarray(xi, dtype=float)
        return self.offset[elems] + np.einsum("...ij,...j->...i", self.jac[elems], xi)

    def to_reference(self, elems, x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...ij,...j->...i", self.inv[elems], x - self.offset[elems])

    def push_gradients(self, elems, ref_grads):
        """Map reference gradients (..., n, 2) of element ``elems`` to physical ones."""
        return np.einsum("eji,e...j->e...i", self.inv[elems], ref_grads)


def affine_maps(mesh: Mesh) -> AffineMaps:
    p = mesh.vertices[mesh.elements]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    if np.any(det <= 0):
        raise ValueError("non-positive Jacobian determinant")
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1] / det
    inv[:, 1, 1] = jac[:, 0, 0] / det
    inv[:, 0, 1] = -jac[:, 0, 1] / det
    inv[:, 1, 0] = -jac[:, 1, 0] / det
    return AffineMaps(p[:, 0].copy(), jac, det, inv)

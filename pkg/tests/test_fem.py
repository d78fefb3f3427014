from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dppdg.fem import (
    BasisError,
    affine_maps,
    basis_dim,
    edge_points,
    lagrange_tri_basis,
    quadrature,
    trace_eval,
)
from dppdg.mesh import Mesh, build_structured_tri_mesh


def tri_monomial(a, b):
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("m", range(1, 9))
def test_basis_properties(m):
    b = lagrange_tri_basis(m)
    assert b.dim == basis_dim(m) == (m + 1) * (m + 2) // 2
    assert np.allclose(b.eval(b.nodes), np.eye(b.dim), atol=1e-12)
    rng = np.random.default_rng(m)
    pts = rng.dirichlet(np.ones(3), 50)[:, :2]
    assert np.allclose(b.eval(pts).sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(b.grad(pts).sum(axis=1), 0.0, atol=1e-10)


def test_order1_barycenter():
    vals = lagrange_tri_basis(1).eval(np.array([[1 / 3, 1 / 3]]))
    assert np.allclose(vals, 1 / 3, atol=1e-14)


def test_order3_dimension():
    assert lagrange_tri_basis(3).dim == 10


@pytest.mark.parametrize("order", [0, 9, 2.5])
def test_basis_rejects_order(order):
    with pytest.raises(BasisError):
        lagrange_tri_basis(order)


@pytest.mark.parametrize("m", [1, 2, 4, 6])
def test_basis_reproduces_polynomials(m):
    rng = np.random.default_rng(10 + m)
    coef = rng.normal(size=(m + 1, m + 1))
    f = lambda x, y: sum(coef[a, b] * x**a * y**b for a in range(m + 1) for b in range(m + 1 - a))
    fx = lambda x, y: sum(a * coef[a, b] * x ** (a - 1) * y**b for a in range(1, m + 1) for b in range(m + 1 - a))
    b = lagrange_tri_basis(m)
    c = f(b.nodes[:, 0], b.nodes[:, 1])
    pts = rng.dirichlet(np.ones(3), 20)[:, :2]
    assert np.allclose(b.eval(pts) @ c, f(pts[:, 0], pts[:, 1]), atol=1e-10)
    assert np.allclose(b.grad(pts)[..., 0] @ c, fx(pts[:, 0], pts[:, 1]), atol=1e-8)


@pytest.mark.parametrize("degree", range(1, 21))
def test_triangle_quadrature_exactness(degree):
    rule = quadrature("triangle", degree)
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-14)
    x, y = rule.points.T
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            assert np.dot(rule.weights, x**a * y**b) == pytest.approx(tri_monomial(a, b), abs=1e-12)


@pytest.mark.parametrize("degree", range(1, 21))
def test_edge_quadrature_exactness(degree):
    rule = quadrature("edge", degree)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
    for a in range(degree + 1):
        assert np.dot(rule.weights, rule.points**a) == pytest.approx(1 / (a + 1), abs=1e-12)


def test_quadrature_examples():
    r = quadrature("triangle", 1)
    assert r.points.shape == (1, 2) and r.weights[0] == 0.5
    e = quadrature("edge", 5)
    assert len(e.points) == 3
    assert np.dot(e.weights, e.points**5) == pytest.approx(1 / 6, abs=1e-14)
    t = quadrature("triangle", 4)
    assert np.dot(t.weights, t.points[:, 0] ** 2 * t.points[:, 1] ** 2) == pytest.approx(1 / 180, abs=1e-13)


@pytest.mark.parametrize("args", [("triangle", 0), ("triangle", 21), ("edge", 21), ("square", 3)])
def test_quadrature_rejects(args):
    with pytest.raises(ValueError):
        quadrature(*args)


def test_trace_eval_matches_volume():
    b = lagrange_tri_basis(3)
    t = np.linspace(0, 1, 7)
    for k in range(3):
        vals, grads = trace_eval(b, k, t)
        pts = edge_points(k, t)
        assert np.allclose(vals, b.eval(pts), atol=1e-13)
        assert np.allclose(grads, b.grad(pts), atol=1e-13)


def test_trace_endpoints_and_constant():
    b = lagrange_tri_basis(1)
    # edge 2 runs from vertex 0 to vertex 1
    vals, _ = trace_eval(b, 2, np.array([0.0, 1.0]))
    assert np.allclose(vals[:, :2], np.eye(2), atol=1e-14)
    ones = np.ones(lagrange_tri_basis(4).dim)
    vals, _ = trace_eval(lagrange_tri_basis(4), 0, np.linspace(0, 1, 5))
    assert np.allclose(vals @ ones, 1.0, atol=1e-12)


def test_trace_rejects_edge():
    with pytest.raises(ValueError):
        trace_eval(lagrange_tri_basis(1), 3, [0.5])


def test_mixed_order_traces_share_points():
    mesh = build_structured_tri_mesh(1, 1)
    maps = affine_maps(mesh)
    # the diagonal is local edge 0 of element 0 and local edge 1 of element 1, traversed oppositely
    t = quadrature("edge", 8).points
    x0 = maps.to_physical(np.zeros(len(t), int), edge_points(0, t))
    x1 = maps.to_physical(np.ones(len(t), int), edge_points(1, 1 - t))
    assert np.allclose(x0, x1, atol=1e-12)
    f = lambda p: 1 + 2 * p[:, 0] - p[:, 1]
    b3, b1 = lagrange_tri_basis(3), lagrange_tri_basis(1)
    c3 = f(maps.to_physical(np.zeros(b3.dim, int), b3.nodes))
    c1 = f(maps.to_physical(np.ones(b1.dim, int), b1.nodes))
    v3, _ = trace_eval(b3, 0, t)
    v1, _ = trace_eval(b1, 1, 1 - t)
    assert np.allclose(v3 @ c3, v1 @ c1, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=6, max_size=6))
def test_affine_roundtrip_and_gradients(coords):
    p = np.array(coords).reshape(3, 2)
    area = 0.5 * ((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0]))
    if abs(area) < 1e-2:
        return
    if area < 0:
        p = p[[0, 2, 1]]
    mesh = Mesh(p, np.array([[0, 1, 2]]), np.zeros(1))
    maps = affine_maps(mesh)
    assert maps.det[0] > 0
    rng = np.random.default_rng(0)
    xi = rng.dirichlet(np.ones(3), 8)[:, :2]
    e = np.zeros(8, int)
    x = maps.to_physical(e, xi)
    assert np.allclose(maps.to_reference(e, x), xi, atol=1e-13 * max(1.0, 1 / abs(area)))
    # gradient of f = 3x^2 - xy + y through an order-2 interpolant
    b = lagrange_tri_basis(2)
    nodes = maps.to_physical(np.zeros(b.dim, int), b.nodes)
    c = 3 * nodes[:, 0] ** 2 - nodes[:, 0] * nodes[:, 1] + nodes[:, 1]
    g = maps.push_gradients(np.array([0]), b.grad(xi)[None])[0]
    got = np.einsum("qid,i->qd", g, c)
    want = np.column_stack([6 * x[:, 0] - x[:, 1], -x[:, 0] + 1])
    assert np.allclose(got, want, atol=1e-11 * max(1.0, 1 / abs(area)) * 10)

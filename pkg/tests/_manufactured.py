"""Polynomial manufactured solutions of the two-network equations (sympy)."""
import numpy as np
import sympy as sp

X, Y = sp.symbols("x y")


def _random_poly(rng, degree):
    return sum(sp.Rational(int(rng.integers(-9, 10)), 7) * X**a * Y**b
               for a in range(degree + 1) for b in range(degree + 1 - a))


def manufactured(m, k1, k2, mu, beta, seed=0):
    """Fields of degree <= m with div u1 = -(beta/mu)(p1 - p2) = -div u2.

    Returns numpy callables (p1, p2, u1, u2, gb1, gb2); velocities and body
    forces return (fx, fy).
    """
    rng = np.random.default_rng(seed)
    sigma = sp.nsimplify(beta) / sp.nsimplify(mu)
    u1 = (_random_poly(rng, m), _random_poly(rng, m))
    p1 = _random_poly(rng, m)
    div1 = sp.diff(u1[0], X) + sp.diff(u1[1], Y)
    p2 = sp.expand(p1 + div1 / sigma)
    psi = _random_poly(rng, m + 1)
    u2 = (sp.expand(-u1[0] + sp.diff(psi, Y)), sp.expand(-u1[1] - sp.diff(psi, X)))
    gb = []
    for u, p, k in ((u1, p1, k1), (u2, p2, k2)):
        a = sp.nsimplify(mu) / sp.nsimplify(k)
        gb.append((sp.expand(a * u[0] + sp.diff(p, X)), sp.expand(a * u[1] + sp.diff(p, Y))))

    def f(expr):
        fn = sp.lambdify((X, Y), expr, "numpy")
        return lambda x, y: np.broadcast_to(np.asarray(fn(x, y), dtype=float), np.shape(x))

    def vec(pair):
        fx, fy = f(pair[0]), f(pair[1])
        return lambda x, y: (fx(x, y), fy(x, y))

    assert sp.simplify(div1 + sigma * (p1 - p2)) == 0
    assert sp.simplify(sp.diff(u2[0], X) + sp.diff(u2[1], Y) - sigma * (p1 - p2)) == 0
    return f(p1), f(p2), vec(u1), vec(u2), vec(gb[0]), vec(gb[1])

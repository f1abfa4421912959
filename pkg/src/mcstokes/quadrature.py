"""Quadrature rules on the reference triangle and reference edge."""

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi

#: Reference triangle vertices (0,0), (1,0), (0,1); area 1/2.
REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

#: Local edges, each opposite the vertex of the same index.
REF_EDGES = ((1, 2), (2, 0), (0, 1))

#: Outward unit normals of the reference edges.
REF_NORMALS = np.array([
    [1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0)],
    [-1.0, 0.0],
    [0.0, -1.0],
])

#: Unit tangents along the local edge parametrization (vertex a -> vertex b).
REF_TANGENTS = np.array([
    [-1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0)],
    [0.0, -1.0],
    [1.0, 0.0],
])

#: Reference edge lengths.
REF_EDGE_LENGTHS = np.array([np.sqrt(2.0), 1.0, 1.0])


@dataclass(frozen=True)
class TriangleRule:
    """Quadrature on the reference triangle, exact to `exactness` degree."""

    points: np.ndarray   # (nq, 2)
    weights: np.ndarray  # (nq,)
    exactness: int


@dataclass(frozen=True)
class EdgeRule:
    """Gauss rule on the reference interval [0, 1]."""

    points: np.ndarray   # (nq,)
    weights: np.ndarray  # (nq,)
    exactness: int


def edge_rule(exactness: int) -> EdgeRule:
    """Gauss-Legendre rule on [0,1] exact for polynomials of `exactness`."""
    n = exactness // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    return EdgeRule(points=(x + 1.0) / 2.0, weights=w / 2.0, exactness=2 * n - 1)


def triangle_rule(exactness: int) -> TriangleRule:
    """Collapsed Gauss x Gauss-Jacobi rule on the reference triangle.

    The Duffy map x = xi*(1-eta), y = eta sends the unit square to the
    triangle with Jacobian (1-eta); the eta direction uses a Gauss-Jacobi
    rule with weight (1-eta) so the product rule stays exact for
    polynomials up to the requested degree.
    """
    n = exactness // 2 + 1
    gx, gw = np.polynomial.legendre.leggauss(n)
    xi = (gx + 1.0) / 2.0
    wxi = gw / 2.0
    jx, jw = roots_jacobi(n, 1.0, 0.0)
    eta = (jx + 1.0) / 2.0
    # int_0^1 f(eta)(1-eta) deta = 1/4 * sum jw f(eta_i)
    weta = jw / 4.0

    pts = np.empty((n * n, 2))
    wts = np.empty(n * n)
    idx = 0
    for a in range(n):
        for b in range(n):
            pts[idx, 0] = xi[a] * (1.0 - eta[b])
            pts[idx, 1] = eta[b]
            wts[idx] = wxi[a] * weta[b]
            idx += 1
    return TriangleRule(points=pts, weights=wts, exactness=2 * n - 1)


def monomial_integral_triangle(a: int, b: int) -> float:
    """Exact integral of x^a y^b over the reference triangle."""
    from math import factorial

    return factorial(a) * factorial(b) / factorial(a + b + 2)

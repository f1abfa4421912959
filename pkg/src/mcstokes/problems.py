"""Benchmark problems and manufactured solutions on rectangular domains."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .mesh import Mesh, build_structured, classify_boundary, refine_uniform


@dataclass
class Problem:
    name: str
    mesh: Mesh
    regions: object
    u_exact: Optional[Callable] = None
    p_exact: Optional[Callable] = None
    body_force: Optional[Callable] = None


def _refine(mesh, level):
    for _ in range(level):
        mesh = refine_uniform(mesh)
    return mesh


def channel(level: int = 0, base=(8, 2)) -> Problem:
    """Rectangular channel [0,4]x[0,1]: parabolic inflow on the left,
    tangential-Dirichlet outflow on the right, no-slip walls."""
    mesh = _refine(build_structured(base[0], base[1], (0.0, 0.0, 4.0, 1.0)),
                   level)
    eps = 1e-12

    def inflow(x):
        if x[0] < eps:
            return np.array([4.0 * x[1] * (1.0 - x[1]), 0.0])
        return np.zeros(2)

    regions = classify_boundary(
        mesh,
        dirichlet=lambda x: x[0] < eps or x[1] < eps or x[1] > 1.0 - eps,
        tilde_neumann=lambda x: x[0] > 4.0 - eps,
        dirichlet_value=inflow)
    return Problem(name="channel", mesh=mesh, regions=regions)


def cavity(level: int = 0, base=(4, 4)) -> Problem:
    """Lid-driven cavity on the unit square, pure Dirichlet."""
    mesh = _refine(build_structured(base[0], base[1]), level)
    eps = 1e-12

    def lid(x):
        if x[1] > 1.0 - eps:
            return np.array([1.0, 0.0])
        return np.zeros(2)

    regions = classify_boundary(
        mesh, dirichlet=lambda x: True, dirichlet_value=lid,
        mean_zero_pressure=True)
    return Problem(name="cavity", mesh=mesh, regions=regions)


def manufactured_poly(level: int = 0, nu: float = 1e-3, base=(2, 2)) -> Problem:
    """Divergence-free quadratic velocity with linear pressure; the method
    reproduces it exactly for every k >= 2."""
    mesh = _refine(build_structured(base[0], base[1]), level)

    def u_exact(x):
        return np.array([x[0] ** 2, -2.0 * x[0] * x[1]])

    def p_exact(x):
        return x[0] + x[1] - 1.0

    def body_force(x):
        # -div(nu eps(u)) + grad p with eps(u) = [[2x, -y], [-y, -2x]]
        return np.array([1.0 - nu, 1.0])

    regions = classify_boundary(
        mesh, dirichlet=lambda x: True, dirichlet_value=u_exact,
        mean_zero_pressure=True)
    return Problem(name="manufactured_poly", mesh=mesh, regions=regions,
                   u_exact=u_exact, p_exact=p_exact, body_force=body_force)


def manufactured_smooth(level: int = 0, nu: float = 1e-3, base=(2, 2)) -> Problem:
    """Smooth non-polynomial solution with homogeneous Dirichlet data."""
    mesh = _refine(build_structured(base[0], base[1]), level)
    pi = np.pi

    def u_exact(x):
        return np.array([
            pi * np.sin(pi * x[0]) ** 2 * np.sin(2.0 * pi * x[1]),
            -pi * np.sin(2.0 * pi * x[0]) * np.sin(pi * x[1]) ** 2])

    def p_exact(x):
        return np.sin(pi * x[0]) * np.cos(pi * x[1])

    def laplace_u(x):
        sx, sy = np.sin(pi * x[0]), np.sin(pi * x[1])
        s2x, s2y = np.sin(2 * pi * x[0]), np.sin(2 * pi * x[1])
        c2x, c2y = np.cos(2 * pi * x[0]), np.cos(2 * pi * x[1])
        return np.array([
            2 * pi ** 3 * c2x * s2y - 4 * pi ** 3 * sx ** 2 * s2y,
            4 * pi ** 3 * s2x * sy ** 2 - 2 * pi ** 3 * s2x * c2y])

    def grad_p(x):
        return np.array([pi * np.cos(pi * x[0]) * np.cos(pi * x[1]),
                         -pi * np.sin(pi * x[0]) * np.sin(pi * x[1])])

    def body_force(x):
        # -div(nu eps(u)) = -nu/2 laplace(u) for divergence-free u
        return -0.5 * nu * laplace_u(x) + grad_p(x)

    regions = classify_boundary(
        mesh, dirichlet=lambda x: True, dirichlet_value=u_exact,
        mean_zero_pressure=True)
    return Problem(name="manufactured_smooth", mesh=mesh, regions=regions,
                   u_exact=u_exact, p_exact=p_exact, body_force=body_force)


PROBLEMS = {
    "channel": channel,
    "cavity": cavity,
    "manufactured_poly": manufactured_poly,
    "manufactured_smooth": manufactured_smooth,
}


def make_problem(name: str, level: int, nu: float = 1e-3) -> Problem:
    if name not in PROBLEMS:
        raise ValueError(f"unknown problem {name!r}")
    fn = PROBLEMS[name]
    if name.startswith("manufactured"):
        return fn(level, nu=nu)
    return fn(level)

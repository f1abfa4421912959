"""Interpolation of analytic fields and per-element broken polynomial fields."""

import numpy as np

from .basis import shifted_legendre
from .dofmap import FeSystem
from .quadrature import REF_VERTICES


def facet_quad_points(fes: FeSystem, f: int):
    """Physical quadrature points along the global facet parameter."""
    mesh = fes.mesh
    a = mesh.facet_start[f]
    b = mesh.facets[f, 0] if mesh.facets[f, 0] != a else mesh.facets[f, 1]
    pa, pb = mesh.vertices[a], mesh.vertices[b]
    return pa[None, :] + fes.quad_edge.points[:, None] * (pb - pa)[None, :]


def interpolate_v(fes: FeSystem, fun) -> np.ndarray:
    """BDM interpolation: exact facet normal moments plus an interior L2 fit.

    Exact whenever fun restricted to each element lies in vector P^k and has
    single-valued normal traces.
    """
    k = fes.k
    mesh = fes.mesh
    coeffs = np.zeros(fes.dof_v.ndof)
    leg = shifted_legendre(k, fes.quad_edge.points)
    for f in range(mesh.num_facets):
        pts = facet_quad_points(fes, f)
        gv = np.array([fun(x) for x in pts])
        gn = gv @ mesh.facet_normal[f]
        ln = mesh.facet_length[f]
        for q in range(k + 1):
            coeffs[f * (k + 1) + q] = ln * np.sum(fes.quad_edge.weights * gn * leg[q])
    # interior fit per element
    n_em, n_int = k + 1, (k + 1) * (k - 1)
    for t in range(mesh.num_triangles):
        wq = fes.quad_tri.weights * fes.detJ[t]
        u = fes.map_vector(t, fes.tab_u)
        pts = fes.phys_points(t)
        fv = np.array([fun(x) for x in pts])
        gram = np.einsum("upi,p,vpi->uv", u, wq, u)
        mom = np.einsum("upi,p,pi->u", u, wq, fv)
        cedge = fes.dof_v.local_values(coeffs, t)[:3 * n_em]
        ii = slice(3 * n_em, 3 * n_em + n_int)
        rhs = mom[ii] - gram[ii, :3 * n_em] @ cedge
        cint = np.linalg.solve(gram[ii, ii], rhs)
        coeffs[fes.dof_v.loc2glob[t, ii]] = cint
    return coeffs


def interpolate_vhat(fes: FeSystem, fun) -> np.ndarray:
    """Facet-wise tangential L2 moments (the projection Pi^{k-1} fun_t)."""
    k = fes.k
    mesh = fes.mesh
    coeffs = np.zeros(fes.dof_vhat.ndof)
    leg = shifted_legendre(k - 1, fes.quad_edge.points)
    for f in range(mesh.num_facets):
        pts = facet_quad_points(fes, f)
        gt = np.array([fun(x) for x in pts]) @ mesh.facet_tangent[f]
        for q in range(k):
            coeffs[f * k + q] = np.sum(fes.quad_edge.weights * gt * leg[q])
    return coeffs


def project_q(fes: FeSystem, fun) -> np.ndarray:
    """Element-wise L2 projection onto the discontinuous pressure space."""
    coeffs = np.zeros(fes.dof_q.ndof)
    for t in range(fes.mesh.num_triangles):
        pts = fes.phys_points(t)
        fv = np.array([fun(x) for x in pts])
        coeffs[fes.dof_q.loc2glob[t]] = (fes.tab_q * fes.quad_tri.weights) @ fv
    return coeffs


def pressure_values(fes: FeSystem, t: int, p_full):
    return fes.dof_q.local_values(p_full, t) @ fes.tab_q


def q_mean(fes: FeSystem, p_full) -> float:
    """Mean value of a pressure coefficient vector over the domain."""
    total = 0.0
    for t in range(fes.mesh.num_triangles):
        total += float(pressure_values(fes, t, p_full) @
                       (fes.quad_tri.weights * fes.detJ[t]))
    area = float(np.sum(fes.detJ) / 2.0)
    return total / area


def q_constant_one(fes: FeSystem) -> np.ndarray:
    """Coefficient vector representing the constant pressure 1."""
    coeffs = np.zeros(fes.dof_q.ndof)
    for t in range(fes.mesh.num_triangles):
        coeffs[fes.dof_q.loc2glob[t, 0]] = 1.0 / fes.tab_q[0, 0]
    return coeffs


class BrokenVectorField:
    """Fully discontinuous per-element vector P^k field (no continuity)."""

    def __init__(self, fes: FeSystem, coeffs: np.ndarray):
        self.fes = fes
        self.coeffs = coeffs          # (ntri, nloc)

    @classmethod
    def random(cls, fes, rng):
        return cls(fes, rng.standard_normal(
            (fes.mesh.num_triangles, fes.bdm.ndof)))

    @classmethod
    def from_function(cls, fes, fun):
        coeffs = np.empty((fes.mesh.num_triangles, fes.bdm.ndof))
        for t in range(fes.mesh.num_triangles):
            wq = fes.quad_tri.weights * fes.detJ[t]
            u = fes.map_vector(t, fes.tab_u)
            pts = fes.phys_points(t)
            fv = np.array([fun(x) for x in pts])
            gram = np.einsum("upi,p,vpi->uv", u, wq, u)
            mom = np.einsum("upi,p,pi->u", u, wq, fv)
            coeffs[t] = np.linalg.solve(gram, mom)
        return cls(fes, coeffs)

    @classmethod
    def from_v_coeffs(cls, fes, u_full):
        coeffs = np.array([fes.dof_v.local_values(u_full, t)
                           for t in range(fes.mesh.num_triangles)])
        return cls(fes, coeffs)

    def values(self, t):
        return np.einsum("u,upi->pi", self.coeffs[t],
                         self.fes.map_vector(t, self.fes.tab_u))

    def grads(self, t):
        fes = self.fes
        grad = np.einsum("ia,upab,bj->upij", fes.J[t], fes.tab_u_grad,
                         fes.Jinv[t]) / fes.detJ[t]
        return np.einsum("u,upij->pij", self.coeffs[t], grad)

    def vertex_values(self, t):
        """Values at the three element vertices, shape (3, 2)."""
        fes = self.fes
        vals = fes.map_vector(t, fes.bdm.eval(REF_VERTICES))
        return np.einsum("u,uvi->vi", self.coeffs[t], vals)

    def edge_values(self, t, le):
        fes = self.fes
        vals = fes.map_vector(t, fes.tab_u_edge[:, le])
        return np.einsum("u,upi->pi", self.coeffs[t], vals)


def interpolate_vbar(fes: FeSystem, fun) -> np.ndarray:
    """Nodal interpolation into the continuous vector P1 space."""
    coeffs = np.empty(fes.dof_vbar.ndof)
    for v, x in enumerate(fes.mesh.vertices):
        coeffs[2 * v:2 * v + 2] = fun(x)
    return coeffs


def vbar_values(fes: FeSystem, t: int, vb_full):
    loc = fes.dof_vbar.local_values(vb_full, t)   # (6,)
    vals = np.zeros((fes.tab_p1.shape[1], 2))
    for lv in range(3):
        vals[:, 0] += loc[2 * lv] * fes.tab_p1[lv]
        vals[:, 1] += loc[2 * lv + 1] * fes.tab_p1[lv]
    return vals


def vbar_strain(fes: FeSystem, t: int, vb_full):
    """Constant strain tensor of a P1 field on element t."""
    loc = fes.dof_vbar.local_values(vb_full, t)
    dlam = np.einsum("lpa,ab->lpb", fes.tab_p1_grad, fes.Jinv[t])[:, 0, :]  # (3,2)
    grad = np.zeros((2, 2))
    for lv in range(3):
        grad[0] += loc[2 * lv] * dlam[lv]
        grad[1] += loc[2 * lv + 1] * dlam[lv]
    return 0.5 * (grad + grad.T)

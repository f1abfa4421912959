"""Global dof numbering, orientation signs and Dirichlet constraints.

Spaces at degree k >= 2:
  V      H(div)-conforming vector P^k (BDM): k+1 normal-moment dofs per
         facet plus (k+1)(k-1) interior dofs per element
  Vhat   facet tangential P^{k-1}: k Legendre dofs per facet
  Sigma  trace-free matrix P^k with nt-trace in P^{k-1}, element-local
  W      skew matrices kappa(P^{k-1}), element-local
  Q      discontinuous P^{k-1} pressures (orthonormal Dubiner), element-local
  Vbar   continuous vector P1 (preconditioner space), 2 dofs per vertex

Facet dofs are defined against the global facet orientation; the per-element
sign tables absorb normal flips and parameter reversals.
"""

from dataclasses import dataclass

import numpy as np

from . import basis as fb
from .mesh import BoundaryRegions, Mesh
from .quadrature import REF_EDGES, edge_rule, triangle_rule


@dataclass
class SpaceDofMap:
    name: str
    ndof: int
    is_free: np.ndarray        # (ndof,) bool
    values: np.ndarray         # Dirichlet values on constrained dofs
    loc2glob: np.ndarray       # (ntri, nloc) int
    signs: np.ndarray          # (ntri, nloc) float

    @property
    def nfree(self):
        return int(self.is_free.sum())

    @property
    def free(self):
        return np.nonzero(self.is_free)[0]

    def local_values(self, coeffs, t):
        """Signed local coefficient vector of element t from a global one."""
        return coeffs[self.loc2glob[t]] * self.signs[t]

    def full_vector(self, free_part):
        """Expand a free-dof vector to all dofs, inserting Dirichlet values."""
        full = self.values.copy()
        full[self.is_free] = free_part
        return full


class FeSystem:
    """Reference bases, quadrature, element geometry and dof maps."""

    def __init__(self, mesh: Mesh, regions: BoundaryRegions, k: int):
        if k < 2:
            raise ValueError(
                "degree k >= 2 required; the lowest-order variant is out of scope")
        self.mesh = mesh
        self.regions = regions
        self.k = k

        self.quad_tri = triangle_rule(2 * k + 2)
        self.quad_edge = edge_rule(2 * k + 2)

        self.bdm = fb.bdm_basis(k)
        self.sigma = fb.sigma_basis(k)
        self.skew = fb.skew_basis(k - 1)
        self.facet = fb.facet_basis(k)
        self.p1 = fb.scalar_basis(1)
        self.nq_loc = k * (k + 1) // 2    # dim P^{k-1}, Dubiner pressures

        self._setup_geometry()
        self._setup_tables()
        self._setup_dofs()

    # ---------------------------------------------------------------- setup
    def _setup_geometry(self):
        mesh = self.mesh
        p = mesh.vertices[mesh.triangles]
        J = np.empty((mesh.num_triangles, 2, 2))
        J[:, :, 0] = p[:, 1] - p[:, 0]
        J[:, :, 1] = p[:, 2] - p[:, 0]
        detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        Jinv = np.empty_like(J)
        Jinv[:, 0, 0] = J[:, 1, 1] / detJ
        Jinv[:, 0, 1] = -J[:, 0, 1] / detJ
        Jinv[:, 1, 0] = -J[:, 1, 0] / detJ
        Jinv[:, 1, 1] = J[:, 0, 0] / detJ
        self.J, self.detJ, self.Jinv = J, detJ, Jinv
        self.JinvT = np.swapaxes(Jinv, 1, 2)
        self.origin = p[:, 0]
        self.tri_diam = mesh.triangle_diameter()

        nt = mesh.num_triangles
        self.edge_facet = mesh.tri_facets
        self.edge_sign = np.empty((nt, 3))      # n_F . n_out
        self.edge_flip = np.zeros((nt, 3), dtype=bool)
        self.edge_len = np.empty((nt, 3))
        self.edge_normal_out = np.empty((nt, 3, 2))
        for t in range(nt):
            tri = mesh.triangles[t]
            for le, (a, b) in enumerate(REF_EDGES):
                f = mesh.tri_facets[t, le]
                ga, gb = tri[a], tri[b]
                d = mesh.vertices[gb] - mesh.vertices[ga]
                ln = np.linalg.norm(d)
                n_out = np.array([d[1], -d[0]]) / ln
                # make sure it points away from the third vertex
                c = mesh.vertices[tri].mean(axis=0)
                if n_out @ (0.5 * (mesh.vertices[ga] + mesh.vertices[gb]) - c) < 0:
                    n_out = -n_out
                self.edge_len[t, le] = ln
                self.edge_normal_out[t, le] = n_out
                self.edge_sign[t, le] = np.sign(n_out @ mesh.facet_normal[f])
                self.edge_flip[t, le] = mesh.facet_start[f] != ga

    def _setup_tables(self):
        k = self.k
        qt = self.quad_tri
        self.tab_sigma = self.sigma.eval(qt.points)          # (ns, nq, 2, 2)
        self.tab_sigma_div = self.sigma.div(qt.points)       # (ns, nq, 2)
        self.tab_u, self.tab_u_grad = self.bdm.eval(qt.points, grad=True)
        self.tab_u_div = self.bdm.div(qt.points)             # (nu, nq)
        self.tab_w = self.skew.eval_scalar(qt.points)        # (nw, nq)
        self.tab_q = fb.dubiner_eval(k - 1, qt.points)       # (np, nq)
        self.tab_p1, self.tab_p1_grad = self.p1.eval(qt.points, grad=True)

        qe = self.quad_edge
        epts = [self._edge_ref_points(e, qe.points) for e in range(3)]
        self.tab_sigma_edge = np.stack([self.sigma.eval(pe) for pe in epts],
                                       axis=1)               # (ns, 3, nqe, 2, 2)
        self.tab_u_edge = np.stack([self.bdm.eval(pe) for pe in epts],
                                   axis=1)                   # (nu, 3, nqe, 2)
        self.tab_leg_edge = fb.shifted_legendre(k, qe.points)  # (k+1, nqe)

    @staticmethod
    def _edge_ref_points(e, t):
        from .quadrature import REF_VERTICES
        a, b = REF_EDGES[e]
        va, vb = REF_VERTICES[a], REF_VERTICES[b]
        return va[None, :] + np.asarray(t)[:, None] * (vb - va)[None, :]

    def _setup_dofs(self):
        mesh, regions, k = self.mesh, self.regions, self.k
        nt, nf, nv = mesh.num_triangles, mesh.num_facets, mesh.num_vertices
        n_em = k + 1                       # normal moments per facet
        n_int = (k + 1) * (k - 1)          # interior V dofs per element

        # ----- V (BDM)
        ndof_v = nf * n_em + nt * n_int
        loc2glob = np.empty((nt, 3 * n_em + n_int), dtype=np.int64)
        signs = np.ones((nt, 3 * n_em + n_int))
        for t in range(nt):
            for le in range(3):
                f = self.edge_facet[t, le]
                sT = self.edge_sign[t, le]
                flip = self.edge_flip[t, le]
                for q in range(n_em):
                    loc = le * n_em + q
                    loc2glob[t, loc] = f * n_em + q
                    signs[t, loc] = sT * ((-1.0) ** q if flip else 1.0)
            base = nf * n_em + t * n_int
            loc2glob[t, 3 * n_em:] = np.arange(base, base + n_int)
        is_free = np.ones(ndof_v, dtype=bool)
        for f in regions.dirichlet_facets:
            is_free[f * n_em:(f + 1) * n_em] = False
        values = np.zeros(ndof_v)
        self.dof_v = SpaceDofMap("V", ndof_v, is_free, values, loc2glob, signs)

        # ----- Vhat
        ndof_vh = nf * k
        loc2glob = np.empty((nt, 3 * k), dtype=np.int64)
        signs = np.ones((nt, 3 * k))
        for t in range(nt):
            for le in range(3):
                f = self.edge_facet[t, le]
                flip = self.edge_flip[t, le]
                for q in range(k):
                    loc2glob[t, le * k + q] = f * k + q
                    if flip:
                        signs[t, le * k + q] = (-1.0) ** q
        is_free = np.ones(ndof_vh, dtype=bool)
        for f in regions.dirichlet_facets | regions.tilde_neumann_facets:
            is_free[f * k:(f + 1) * k] = False
        self.dof_vhat = SpaceDofMap("Vhat", ndof_vh, is_free, np.zeros(ndof_vh),
                                    loc2glob, signs)

        # ----- element-local spaces
        def elementwise(name, nloc):
            l2g = (np.arange(nt)[:, None] * nloc + np.arange(nloc)[None, :])
            return SpaceDofMap(name, nt * nloc, np.ones(nt * nloc, dtype=bool),
                               np.zeros(nt * nloc), l2g, np.ones((nt, nloc)))

        self.dof_sigma = elementwise("Sigma", self.sigma.ndof)
        self.dof_w = elementwise("W", self.skew.ndof)
        self.dof_q = elementwise("Q", self.nq_loc)

        # ----- Vbar (continuous vector P1)
        ndof_vb = 2 * nv
        loc2glob = np.empty((nt, 6), dtype=np.int64)
        for t in range(nt):
            for lv in range(3):
                v = mesh.triangles[t, lv]
                loc2glob[t, 2 * lv] = 2 * v
                loc2glob[t, 2 * lv + 1] = 2 * v + 1
        is_free = np.ones(ndof_vb, dtype=bool)
        for f in regions.dirichlet_facets:
            for v in mesh.facets[f]:
                is_free[2 * v] = is_free[2 * v + 1] = False
        self.dof_vbar = SpaceDofMap("Vbar", ndof_vb, is_free, np.zeros(ndof_vb),
                                    loc2glob, np.ones((nt, 6)))

        self._apply_dirichlet_data()

        # combined velocity space [V; Vhat]; coupling (,) vs interior split
        self.n_v, self.n_vhat = ndof_v, ndof_vh
        self.n_vv = ndof_v + ndof_vh
        self.vv_free = np.concatenate([self.dof_v.is_free, self.dof_vhat.is_free])
        self.vv_values = np.concatenate([self.dof_v.values, self.dof_vhat.values])
        interior = np.zeros(self.n_vv, dtype=bool)
        interior[nf * n_em:ndof_v] = True
        self.vv_interior = interior

    def _apply_dirichlet_data(self):
        g = self.regions.dirichlet_value
        if g is None:
            return
        mesh, k = self.mesh, self.k
        qe = self.quad_edge
        leg = fb.shifted_legendre(k, qe.points)
        for f in self.regions.dirichlet_facets:
            a = mesh.facet_start[f]
            b = mesh.facets[f, 0] if mesh.facets[f, 0] != a else mesh.facets[f, 1]
            pa, pb = mesh.vertices[a], mesh.vertices[b]
            pts = pa[None, :] + qe.points[:, None] * (pb - pa)[None, :]
            gv = np.array([g(x) for x in pts])
            ln = mesh.facet_length[f]
            gn = gv @ mesh.facet_normal[f]
            gt = gv @ mesh.facet_tangent[f]
            for q in range(k + 1):
                self.dof_v.values[f * (k + 1) + q] = \
                    ln * np.sum(qe.weights * gn * leg[q])
            for q in range(k):
                self.dof_vhat.values[f * k + q] = \
                    np.sum(qe.weights * gt * leg[q])

    # ------------------------------------------------------------- reporting
    def dof_counts(self):
        return {
            "V": (self.dof_v.ndof, self.dof_v.nfree),
            "Vhat": (self.dof_vhat.ndof, self.dof_vhat.nfree),
            "Sigma": (self.dof_sigma.ndof, self.dof_sigma.nfree),
            "W": (self.dof_w.ndof, self.dof_w.nfree),
            "Q": (self.dof_q.ndof, self.dof_q.nfree),
            "Vbar": (self.dof_vbar.ndof, self.dof_vbar.nfree),
        }

    # --------------------------------------------------- element-level maps
    def map_vector(self, t, ref_vals):
        """Piola map of vector values (n, ..., 2) on element t."""
        return np.einsum("ij,...j->...i", self.J[t], ref_vals) / self.detJ[t]

    def map_stress(self, t, ref_vals):
        """Trace-preserving stress map sigma = J^-T sigma_ref J^T."""
        return np.einsum("il,...lm,jm->...ij", self.JinvT[t], ref_vals, self.J[t])

    def phys_points(self, t):
        """Physical quadrature points of element t, shape (nq, 2)."""
        return self.origin[t] + self.quad_tri.points @ self.J[t].T

    def edge_phys_points(self, t, le):
        pts = self._edge_ref_points(le, self.quad_edge.points)
        return self.origin[t] + pts @ self.J[t].T


def build_dof_maps(mesh: Mesh, regions: BoundaryRegions, k: int) -> FeSystem:
    """Convenience constructor mirroring the dof-map operation."""
    return FeSystem(mesh, regions, k)

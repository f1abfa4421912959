"""Static condensation of the stress/vorticity pair and the velocity bubbles.

The element-local saddle blocks for (sigma, omega) are eliminated exactly,
leaving a symmetric positive definite system S on the H(div) velocity and
facet unknowns.  A second, "double" Schur complement S_d additionally
eliminates the element-interior velocity bubbles; multiplication with S can
then be run through the exact triangular factorization

    S = [I  X^T] [S_d  0  ] [I  0]         X = S_oo^-1 S_oc
        [0  I  ] [0    S_oo] [X  I]

with block-diagonal outer factors (o: interior bubbles, c: coupling dofs).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import ElementBlocks, _Coo, all_element_blocks
from .dofmap import FeSystem


@dataclass
class CondensedSystem:
    fes: FeSystem
    nu: float
    S: sp.csr_matrix                 # over all (V, Vhat) dofs
    B: sp.csr_matrix                 # pressure rows over all (V, Vhat) dofs
    load: np.ndarray                 # body-force vector over (V, Vhat) dofs
    recovery: list                   # per element: M^-1 B_sigma^T
    vv_l2g: np.ndarray               # (ntri, nloc) combined local->global
    vv_signs: np.ndarray
    n_cpl_loc: int                   # local coupling dofs (facet V + Vhat)
    nloc_u: int
    # double-Schur data
    Sd: Optional[sp.csr_matrix] = None        # over coupling dofs
    ext: Optional[list] = None                # per element S_oo^-1 S_oc
    soo_chol: Optional[list] = None
    soo_dense: Optional[list] = None
    cpl_of_vv: Optional[np.ndarray] = None    # vv dof -> coupling index or -1
    vv_of_cpl: Optional[np.ndarray] = None

    # ------------------------------------------------------------- indexing
    @property
    def n_vv(self):
        return self.fes.n_vv

    def free_mask_vv(self):
        return self.fes.vv_free

    def free_mask_cpl(self):
        return self.fes.vv_free[self.vv_of_cpl]

    def local_vv(self, x_full, t):
        return x_full[self.vv_l2g[t]] * self.vv_signs[t]

    # ------------------------------------------------------------ operations
    def s_energy(self, x_full):
        return float(x_full @ (self.S @ x_full))

    def recover_stress(self, x_full):
        """Element-wise recovery of (sigma, omega) from a velocity vector."""
        fes = self.fes
        ns, nw = fes.sigma.ndof, fes.skew.ndof
        sig = np.empty(fes.dof_sigma.ndof)
        wv = np.empty(fes.dof_w.ndof)
        for t in range(fes.mesh.num_triangles):
            so = -self.recovery[t] @ self.local_vv(x_full, t)
            sig[fes.dof_sigma.loc2glob[t]] = so[:ns]
            wv[fes.dof_w.loc2glob[t]] = so[ns:]
        return sig, wv

    def schur_norm_identity(self, x_full):
        """(x' S x,  nu^-1 ||sigma||^2 + nu/d ||div u||^2) for d = 2."""
        from .assembly import div_values, stress_values

        fes = self.fes
        lhs = self.s_energy(x_full)
        sig, _ = self.recover_stress(x_full)
        u_full = x_full[:fes.n_v]
        rhs = 0.0
        for t in range(fes.mesh.num_triangles):
            wq = fes.quad_tri.weights * fes.detJ[t]
            sv = stress_values(fes, t, sig)
            dv = div_values(fes, t, u_full)
            rhs += float(np.einsum("pij,p->", sv * sv, wq)) / self.nu
            rhs += 0.5 * self.nu * float(dv * dv @ wq)
        return lhs, rhs

    def harmonic_extend(self, x_full):
        """Energy-minimal completion of the interior bubble dofs."""
        out = x_full.copy()
        fes = self.fes
        icpl, iint = self._local_splits()
        for t in range(fes.mesh.num_triangles):
            loc = self.local_vv(x_full, t)
            out[self.vv_l2g[t][iint]] = -(self.ext[t] @ loc[icpl]) \
                * self.vv_signs[t][iint]
        return out

    def apply_S_factorized(self, x_full):
        """S @ x through the exact triangular factorization."""
        fes = self.fes
        icpl, iint = self._local_splits()
        y = np.zeros_like(x_full)
        # right factor: z_o = x_o + X x_c; then middle: S_oo z_o
        x_c = x_full[self.vv_of_cpl]
        y_c_glob = self.Sd @ x_c
        np.add.at(y, self.vv_of_cpl, y_c_glob)
        for t in range(fes.mesh.num_triangles):
            loc = self.local_vv(x_full, t)
            z_o = loc[iint] + self.ext[t] @ loc[icpl]
            d_o = self.soo_dense[t] @ z_o
            # left factor: y_c += X^T d_o ; y_o = d_o
            contrib_c = self.ext[t].T @ d_o
            sgN = self.vv_signs[t]
            np.add.at(y, self.vv_l2g[t][icpl], contrib_c * sgN[icpl])
            np.add.at(y, self.vv_l2g[t][iint], d_o * sgN[iint])
        return y

    def _local_splits(self):
        fes = self.fes
        k = fes.k
        n_em = 3 * (k + 1)
        nloc_u = fes.bdm.ndof
        nloc_h = 3 * k
        icpl = np.concatenate([np.arange(n_em),
                               np.arange(nloc_u, nloc_u + nloc_h)])
        iint = np.arange(n_em, nloc_u)
        return icpl, iint


def condense_sigma_omega(fes: FeSystem, nu: float, body_force=None,
                         blocks=None) -> CondensedSystem:
    """Eliminate (sigma, omega) element-wise; assemble S, B and the load."""
    if blocks is None:
        blocks = all_element_blocks(fes, nu, body_force)
    ns, nw = fes.sigma.ndof, fes.skew.ndof
    nloc_u, nloc_h = fes.bdm.ndof, 3 * fes.k
    nloc = nloc_u + nloc_h
    nvv = fes.n_vv
    ntri = fes.mesh.num_triangles

    vv_l2g = np.empty((ntri, nloc), dtype=np.int64)
    vv_signs = np.empty((ntri, nloc))
    for t in range(ntri):
        vv_l2g[t, :nloc_u] = fes.dof_v.loc2glob[t]
        vv_l2g[t, nloc_u:] = fes.n_v + fes.dof_vhat.loc2glob[t]
        vv_signs[t, :nloc_u] = fes.dof_v.signs[t]
        vv_signs[t, nloc_u:] = fes.dof_vhat.signs[t]

    cooS = _Coo()
    cooB = _Coo()
    load = np.zeros(nvv)
    recovery = []
    for eb in blocks:
        t = eb.t
        M = np.zeros((ns + nw, ns + nw))
        M[:ns, :ns] = -eb.msig
        M[:ns, ns:] = eb.bws.T
        M[ns:, :ns] = eb.bws
        Bsig = np.zeros((nloc, ns + nw))
        Bsig[:nloc_u, :ns] = eb.bus
        Bsig[nloc_u:, :ns] = eb.bhs
        try:
            lu = sla.lu_factor(M, check_finite=False)
        except sla.LinAlgError as exc:
            raise RuntimeError(
                f"singular local stress block on element {t}") from exc
        R = sla.lu_solve(lu, Bsig.T, check_finite=False)
        S_T = -Bsig @ R
        S_T[:nloc_u, :nloc_u] += eb.adiv
        S_T = 0.5 * (S_T + S_T.T)
        recovery.append(R)
        sg = vv_signs[t]
        cooS.add(vv_l2g[t], vv_l2g[t], S_T, sg, sg)
        cooB.add(fes.dof_q.loc2glob[t], vv_l2g[t][:nloc_u],
                 eb.bpu, None, sg[:nloc_u])
        np.add.at(load, vv_l2g[t][:nloc_u], eb.load * sg[:nloc_u])

    S = cooS.tocsr((nvv, nvv))
    B = cooB.tocsr((fes.dof_q.ndof, nvv))
    return CondensedSystem(fes=fes, nu=nu, S=S, B=B, load=load,
                           recovery=recovery, vv_l2g=vv_l2g, vv_signs=vv_signs,
                           n_cpl_loc=3 * (fes.k + 1) + nloc_h, nloc_u=nloc_u)


def double_schur(sys: CondensedSystem) -> CondensedSystem:
    """Eliminate interior velocity bubbles, assembling S_d and the extension
    blocks of the harmonic lifting."""
    fes = sys.fes
    ntri = fes.mesh.num_triangles
    icpl, iint = sys._local_splits()

    # coupling numbering: all vv dofs that are not interior bubbles
    mask_cpl = ~fes.vv_interior
    vv_of_cpl = np.nonzero(mask_cpl)[0]
    cpl_of_vv = -np.ones(fes.n_vv, dtype=np.int64)
    cpl_of_vv[mask_cpl] = np.arange(mask_cpl.sum())

    coo = _Coo()
    ext, chols, soo_dense = [], [], []
    S = sys.S.tocsc()
    for t in range(ntri):
        gl = sys.vv_l2g[t]
        sg = sys.vv_signs[t]
        # local blocks of the assembled S (rows of interior dofs are
        # exclusive to this element)
        gint = gl[iint]
        Soo = S[np.ix_(gint, gint)].toarray()
        Soc_loc = S[np.ix_(gint, gl[icpl])].toarray() * sg[icpl][None, :]
        try:
            ch = sla.cho_factor(Soo, check_finite=False)
        except sla.LinAlgError as exc:
            raise RuntimeError(
                f"interior velocity block not SPD on element {t}") from exc
        X = sla.cho_solve(ch, Soc_loc, check_finite=False)
        ext.append(X)
        chols.append(ch)
        soo_dense.append(Soo)
        corr = Soc_loc.T @ X
        rows = cpl_of_vv[gl[icpl]]
        coo.add(rows, rows, -corr, sg[icpl], sg[icpl])

    Scc = S[np.ix_(vv_of_cpl, vv_of_cpl)].tocoo()
    coo.i.append(Scc.row)
    coo.j.append(Scc.col)
    coo.v.append(Scc.data)
    ncpl = len(vv_of_cpl)
    sys.Sd = coo.tocsr((ncpl, ncpl))
    sys.ext = ext
    sys.soo_chol = chols
    sys.soo_dense = soo_dense
    sys.cpl_of_vv = cpl_of_vv
    sys.vv_of_cpl = vv_of_cpl
    return sys


def local_projection_solve(fes: FeSystem, nu: float, t: int, g: np.ndarray,
                           blocks: ElementBlocks = None):
    """Solve the element projection problem for a functional g on Sigma(T).

    Returns local coefficient vectors (sigma_T, omega_T) such that
    -nu^-1 (sigma, tau) + (tau, omega) = g(tau) and (sigma, eta) = 0.
    """
    from .assembly import assemble_element_blocks

    if blocks is None:
        blocks = assemble_element_blocks(fes, t, nu)
    ns, nw = fes.sigma.ndof, fes.skew.ndof
    M = np.zeros((ns + nw, ns + nw))
    M[:ns, :ns] = -blocks.msig
    M[:ns, ns:] = blocks.bws.T
    M[ns:, :ns] = blocks.bws
    rhs = np.concatenate([g, np.zeros(nw)])
    sol = sla.solve(M, rhs)
    return sol[:ns], sol[ns:]


def projection_rhs_from_velocity(fes: FeSystem, nu: float, t: int,
                                 u_full, uhat_full,
                                 blocks: ElementBlocks = None):
    """g_T(tau) = -b_T(tau, (u, uhat, 0)) via the assembled element blocks."""
    from .assembly import assemble_element_blocks

    if blocks is None:
        blocks = assemble_element_blocks(fes, t, nu)
    uloc = fes.dof_v.local_values(u_full, t)
    hloc = fes.dof_vhat.local_values(uhat_full, t)
    return -(blocks.bus.T @ uloc + blocks.bhs.T @ hloc)

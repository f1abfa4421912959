"""Element matrices, global saddle systems and discrete norm evaluators.

Global block layout of the uncondensed system (fields sigma, omega, u, uhat,
p):

    [ -M_ss  B_ws^T | B_us^T  B_hs^T | 0     ]
    [  B_ws  0      | 0       0      | 0     ]
    [  B_us  0      | A_div   0      | B_pu^T]
    [  B_hs  0      | 0       0      | 0     ]
    [  0     0      | B_pu    0      | 0     ]

All boundary terms are evaluated against the global facet orientation; the
per-dof sign tables of the dof maps reconcile local and global bases.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dofmap import FeSystem


@dataclass
class ElementBlocks:
    t: int
    msig: np.ndarray    # nu^-1 stress mass (ns, ns)
    bws: np.ndarray     # weak symmetry      (nw, ns)
    bus: np.ndarray     # duality pair       (nu, ns)
    bhs: np.ndarray     # nt-continuity      (nh, ns)
    adiv: np.ndarray    # nu/d div-div       (nu, nu)
    bpu: np.ndarray     # divergence         (np, nu)
    load: np.ndarray    # body force         (nu,)


def _edge_data(fes: FeSystem, t: int, le: int):
    """Mapped edge values of the stress/velocity bases plus facet frames."""
    mesh = fes.mesh
    f = fes.edge_facet[t, le]
    sig = fes.map_stress(t, fes.tab_sigma_edge[:, le])   # (ns, nqe, 2, 2)
    u = fes.map_vector(t, fes.tab_u_edge[:, le])         # (nu, nqe, 2)
    nF = mesh.facet_normal[f]
    tF = mesh.facet_tangent[f]
    n_out = fes.edge_normal_out[t, le]
    we = fes.quad_edge.weights * fes.edge_len[t, le]
    return f, sig, u, nF, tF, n_out, we


def assemble_element_blocks(fes: FeSystem, t: int, nu: float,
                            body_force=None) -> ElementBlocks:
    qt = fes.quad_tri
    wq = qt.weights * fes.detJ[t]

    sig = fes.map_stress(t, fes.tab_sigma)              # (ns, nq, 2, 2)
    sig_div = np.einsum("ij,spj->spi", fes.JinvT[t], fes.tab_sigma_div)
    u = fes.map_vector(t, fes.tab_u)                    # (nu, nq, 2)
    u_div = fes.tab_u_div / fes.detJ[t]                 # (nu, nq)
    w = fes.tab_w                                       # (nw, nq) scalars
    q = fes.tab_q                                       # (np, nq)

    msig = np.einsum("spij,p,zpij->sz", sig, wq, sig) / nu
    msig = 0.5 * (msig + msig.T)
    # sigma : kappa(phi) = phi/2 * (sigma_10 - sigma_01)
    skew_part = 0.5 * (sig[:, :, 1, 0] - sig[:, :, 0, 1])
    bws = np.einsum("wp,p,sp->ws", w, wq, skew_part)
    bus = np.einsum("upi,p,spi->us", u, wq, sig_div)
    adiv = 0.5 * nu * np.einsum("up,p,vp->uv", u_div, wq, u_div)
    adiv = 0.5 * (adiv + adiv.T)
    bpu = np.einsum("qp,p,up->qu", q, wq, u_div)

    k = fes.k
    nh_loc = 3 * k
    bhs = np.zeros((nh_loc, fes.sigma.ndof))
    for le in range(3):
        f, sigE, uE, nF, tF, n_out, we = _edge_data(fes, t, le)
        snn = np.einsum("i,spij,j->sp", n_out, sigE, n_out)
        un = uE @ n_out
        bus -= np.einsum("up,p,sp->us", un, we, snn)
        # -(tau_nt, uhat_t): tau_nt . uhat = (n_F.n_out) (t_F' tau n_F)(uhat.t_F)
        tsn = np.einsum("i,spij,j->sp", tF, sigE, nF)
        sT = fes.edge_sign[t, le]
        leg = fes.tab_leg_edge[:k]                      # local parameter
        bhs[le * k:(le + 1) * k] = -sT * np.einsum("hp,p,sp->hs", leg, we, tsn)

    load = np.zeros(fes.bdm.ndof)
    if body_force is not None:
        pts = fes.phys_points(t)
        fv = np.array([body_force(x) for x in pts])
        load = np.einsum("upi,p,pi->u", u, wq, fv)
    return ElementBlocks(t=t, msig=msig, bws=bws, bus=bus, bhs=bhs,
                         adiv=adiv, bpu=bpu, load=load)


def all_element_blocks(fes: FeSystem, nu: float, body_force=None):
    return [assemble_element_blocks(fes, t, nu, body_force)
            for t in range(fes.mesh.num_triangles)]


class _Coo:
    def __init__(self):
        self.i, self.j, self.v = [], [], []

    def add(self, rows, cols, block, rsign=None, csign=None):
        if rsign is not None:
            block = block * rsign[:, None]
        if csign is not None:
            block = block * csign[None, :]
        ii, jj = np.meshgrid(rows, cols, indexing="ij")
        self.i.append(ii.ravel())
        self.j.append(jj.ravel())
        self.v.append(np.asarray(block).ravel())

    def tocsr(self, shape):
        m = sp.coo_matrix(
            (np.concatenate(self.v),
             (np.concatenate(self.i), np.concatenate(self.j))), shape=shape)
        return m.tocsr()


@dataclass
class BlockIndex:
    """Offsets of the field blocks inside a monolithic free-dof vector."""

    offsets: dict
    sizes: dict
    total: int

    def sl(self, name):
        o = self.offsets[name]
        return slice(o, o + self.sizes[name])


def _free_numbering(*masks):
    """Per-space maps from global dof to position in the stacked free vector."""
    offsets, maps, total = [], [], 0
    for mask in masks:
        idx = -np.ones(len(mask), dtype=np.int64)
        idx[mask] = total + np.arange(mask.sum())
        maps.append(idx)
        offsets.append(total)
        total += int(mask.sum())
    return maps, offsets, total


def assemble_full_system(fes: FeSystem, nu: float, body_force=None,
                         blocks=None, with_pressure=True):
    """Sparse saddle matrix over free dofs plus right-hand side.

    Dirichlet dofs are eliminated; inhomogeneous data is lifted onto the
    right-hand side.  Returns (K, rhs, BlockIndex).
    """
    if blocks is None:
        blocks = all_element_blocks(fes, nu, body_force)
    ds, dw, dv, dh, dq = (fes.dof_sigma, fes.dof_w, fes.dof_v,
                          fes.dof_vhat, fes.dof_q)
    spaces = [ds, dw, dv, dh] + ([dq] if with_pressure else [])
    names = ["sigma", "w", "u", "uhat"] + (["p"] if with_pressure else [])
    maps, offsets, nfree = _free_numbering(*[s.is_free for s in spaces])
    index = BlockIndex(
        offsets=dict(zip(names, offsets)),
        sizes=dict(zip(names, [s.nfree for s in spaces])),
        total=nfree)

    coo = _Coo()
    rhs = np.zeros(nfree)

    def scatter(rows_map, rdofs, rsigns, rvals, cols_map, cdofs, csigns, cvals,
                block, sym_transpose=True):
        """Scatter block and its transpose; lift constrained columns/rows."""
        rfree = rows_map[rdofs]
        cfree = cols_map[cdofs]
        rmask = rfree >= 0
        cmask = cfree >= 0
        b = block * rsigns[:, None] * csigns[None, :]
        coo.add(rfree[rmask], cfree[cmask], b[np.ix_(rmask, cmask)])
        if sym_transpose:
            coo.add(cfree[cmask], rfree[rmask], b[np.ix_(rmask, cmask)].T)
        # lifting of Dirichlet values
        if (~cmask).any() and cvals is not None:
            contrib = b[np.ix_(rmask, ~cmask)] @ cvals[cdofs[~cmask]]
            np.subtract.at(rhs, rfree[rmask], contrib)
        if sym_transpose and (~rmask).any() and rvals is not None:
            contrib = b[np.ix_(~rmask, cmask)].T @ rvals[rdofs[~rmask]]
            np.subtract.at(rhs, cfree[cmask], contrib)

    ms, mw, mv, mh = maps[0], maps[1], maps[2], maps[3]
    for eb in blocks:
        t = eb.t
        gs, gw = ds.loc2glob[t], dw.loc2glob[t]
        gv, gh = dv.loc2glob[t], dh.loc2glob[t]
        ss, sw = ds.signs[t], dw.signs[t]
        sv, sh = dv.signs[t], dh.signs[t]

        # sigma-sigma (no transpose: symmetric block added once)
        scatter(ms, gs, ss, None, ms, gs, ss, None, -eb.msig,
                sym_transpose=False)
        scatter(mw, gw, sw, dw.values, ms, gs, ss, ds.values, eb.bws)
        scatter(mv, gv, sv, dv.values, ms, gs, ss, ds.values, eb.bus)
        scatter(mh, gh, sh, dh.values, ms, gs, ss, ds.values, eb.bhs)
        # symmetric block: scatter once; its internal lifting covers the
        # constrained columns of the free rows
        scatter(mv, gv, sv, dv.values, mv, gv, sv, dv.values, eb.adiv,
                sym_transpose=False)
        if with_pressure:
            mq = maps[4]
            gq, sq = dq.loc2glob[t], dq.signs[t]
            scatter(mq, gq, sq, None, mv, gv, sv, dv.values, eb.bpu)
        vfree = mv[gv]
        vmask = vfree >= 0
        np.add.at(rhs, vfree[vmask], (eb.load * sv)[vmask])

    K = coo.tocsr((nfree, nfree))
    return K, rhs, index


def assemble_elliptic_system(fes: FeSystem, nu: float, body_force=None,
                             blocks=None):
    """The elliptic sub-problem: full system without the pressure row/column."""
    return assemble_full_system(fes, nu, body_force, blocks=blocks,
                                with_pressure=False)


# ----------------------------------------------------------------- norms


def legendre_trace_coeffs(fes: FeSystem, vals_edge: np.ndarray) -> np.ndarray:
    """Legendre coefficients (degree 0..k) of scalar edge-quadrature data.

    Coefficients refer to the orthonormal Legendre family in the local edge
    parameter; vals_edge has shape (..., nqe).
    """
    leg = fes.tab_leg_edge                                # (k+1, nqe)
    return np.einsum("...p,qp,p->...q", vals_edge, leg, fes.quad_edge.weights)


def jump_norm(fes: FeSystem, t: int, le: int, trace_vals: np.ndarray):
    """Both realizations of the facet jump norm of a trace on facet le of t.

    trace_vals: values (nqe, 2) of the (vector-valued) trace at the edge
    quadrature points in the local parameter.  Returns (sup_form, formula).
    """
    k = fes.k
    h = fes.tri_diam[t]
    if h <= 0:
        raise ValueError("zero element diameter")
    we = fes.quad_edge.weights * fes.edge_len[t, le]

    # method A: sup over vector P^k(T) of (u, sigma)_F^2 / ||sigma||_T^2
    u = fes.map_vector(t, fes.tab_u)
    wq = fes.quad_tri.weights * fes.detJ[t]
    gram = np.einsum("upi,p,vpi->uv", u, wq, u)
    uE = fes.map_vector(t, fes.tab_u_edge[:, le])          # (nu, nqe, 2)
    g = np.einsum("upi,p,pi->u", uE, we, trace_vals)
    method_a = float(g @ np.linalg.solve(gram, g))

    # method B: h^-1 sum_j k(k-j+1) ||(Pi^j - Pi^{j-1}) u||_F^2
    coef = legendre_trace_coeffs(fes, trace_vals.T)        # (2, k+1)
    ln = fes.edge_len[t, le]
    weights = np.array([k * (k - j + 1) for j in range(k + 1)], dtype=float)
    method_b = float(np.sum(weights * (coef ** 2).sum(axis=0)) * ln / h)
    return method_a, method_b


def _tangential_jump_coeffs(fes: FeSystem, t: int, le: int, u_full, uhat_full):
    """Legendre coefficients of (u - uhat) . t_F on facet le of element t,
    projected to degree k-1 (the uhat trace already lives there)."""
    k = fes.k
    f = fes.edge_facet[t, le]
    tF = fes.mesh.facet_tangent[f]
    uloc = fes.dof_v.local_values(u_full, t)
    uE = fes.map_vector(t, fes.tab_u_edge[:, le])
    ut = np.einsum("u,upi,i->p", uloc, uE, tF)
    coef = legendre_trace_coeffs(fes, ut)[:k]
    hloc = fes.dof_vhat.local_values(uhat_full, t)[le * k:(le + 1) * k]
    return coef - hloc


def hdg_eps_norm(fes: FeSystem, u_full: np.ndarray, uhat_full: np.ndarray):
    """||(u, uhat)||_{eps,h}^2 with the explicit Legendre jump formula."""
    k = fes.k
    total = 0.0
    wj = np.array([k * (k - j + 1) for j in range(k)], dtype=float)
    for t in range(fes.mesh.num_triangles):
        eps = strain_values(fes, t, u_full)
        wq = fes.quad_tri.weights * fes.detJ[t]
        total += float(np.einsum("pij,p->", eps * eps, wq))
        h = fes.tri_diam[t]
        for le in range(3):
            c = _tangential_jump_coeffs(fes, t, le, u_full, uhat_full)
            total += float(np.sum(wj * c ** 2) * fes.edge_len[t, le] / h)
    return total


def uh_norms(fes: FeSystem, u_full, uhat_full, w_full):
    """(||.||_{U_h}^2, |.|_{U_h,*}^2) for a velocity/facet/vorticity triple."""
    k = fes.k
    n_uh, n_star = 0.0, 0.0
    for t in range(fes.mesh.num_triangles):
        wq = fes.quad_tri.weights * fes.detJ[t]
        grad = grad_values(fes, t, u_full)                 # (nq, 2, 2)
        eps = 0.5 * (grad + np.swapaxes(grad, 1, 2))
        wloc = fes.dof_w.local_values(w_full, t)
        wsc = wloc @ fes.tab_w                             # scalar of kappa
        curl = grad[:, 1, 0] - grad[:, 0, 1]
        # || kappa(curl u) - omega ||^2; kappa(s) has Frobenius norm |s|/sqrt2
        diff = 0.5 * (curl - wsc) ** 2
        dev = grad - 0.5 * np.trace(grad, axis1=1, axis2=2)[:, None, None] \
            * np.eye(2)
        skew_dev = dev.copy()
        skew_dev[:, 0, 1] += 0.5 * wsc
        skew_dev[:, 1, 0] -= 0.5 * wsc
        n_uh += float(np.einsum("pij,p->", eps * eps, wq) + diff @ wq)
        n_star += float(np.einsum("pij,p->", skew_dev * skew_dev, wq))
        h = fes.tri_diam[t]
        for le in range(3):
            c = _tangential_jump_coeffs(fes, t, le, u_full, uhat_full)
            jump = float(np.sum(c ** 2) * fes.edge_len[t, le] / h)
            n_uh += jump
            n_star += jump
    return n_uh, n_star


def eps_gram(fes: FeSystem, weight: float = 1.0) -> sp.csr_matrix:
    """Gram matrix of weight * ||.||_{eps,h}^2 over all (V, Vhat) dofs."""
    k = fes.k
    nvv = fes.n_vv
    coo = _Coo()
    wj = np.array([k * (k - j + 1) for j in range(k)], dtype=float)
    for t in range(fes.mesh.num_triangles):
        wq = fes.quad_tri.weights * fes.detJ[t]
        grad = np.einsum("ia,upab,bj->upij", fes.J[t], fes.tab_u_grad,
                         fes.Jinv[t]) / fes.detJ[t]
        eps = 0.5 * (grad + np.swapaxes(grad, 2, 3))
        E = np.einsum("upij,p,vpij->uv", eps, wq, eps)
        gv = fes.dof_v.loc2glob[t]
        sv = fes.dof_v.signs[t]
        coo.add(gv, gv, E, sv, sv)
        h = fes.tri_diam[t]
        uE_all = fes.map_vector(t, fes.tab_u_edge)         # (nu, 3, nqe, 2)
        for le in range(3):
            f = fes.edge_facet[t, le]
            tF = fes.mesh.facet_tangent[f]
            ut = uE_all[:, le] @ tF                        # (nu, nqe)
            R_u = legendre_trace_coeffs(fes, ut)[:, :k]    # (nu, k)
            rows = np.concatenate([gv, fes.dof_vhat.loc2glob[t, le * k:(le + 1) * k]
                                   + fes.n_v])
            sgn = np.concatenate([sv, fes.dof_vhat.signs[t, le * k:(le + 1) * k]])
            R = np.vstack([R_u, -np.eye(k)])               # (nu + k, k)
            block = (R * wj[None, :]) @ R.T * fes.edge_len[t, le] / h
            coo.add(rows, rows, block, sgn, sgn)
    return coo.tocsr((nvv, nvv)) * weight


# ------------------------------------------------- field evaluation helpers


def velocity_values(fes: FeSystem, t: int, u_full):
    uloc = fes.dof_v.local_values(u_full, t)
    return np.einsum("u,upi->pi", uloc, fes.map_vector(t, fes.tab_u))


def grad_values(fes: FeSystem, t: int, u_full):
    uloc = fes.dof_v.local_values(u_full, t)
    grad = np.einsum("ia,upab,bj->upij", fes.J[t], fes.tab_u_grad,
                     fes.Jinv[t]) / fes.detJ[t]
    return np.einsum("u,upij->pij", uloc, grad)


def strain_values(fes: FeSystem, t: int, u_full):
    g = grad_values(fes, t, u_full)
    return 0.5 * (g + np.swapaxes(g, 1, 2))


def div_values(fes: FeSystem, t: int, u_full):
    uloc = fes.dof_v.local_values(u_full, t)
    return (uloc @ fes.tab_u_div) / fes.detJ[t]


def stress_values(fes: FeSystem, t: int, s_full):
    sloc = fes.dof_sigma.local_values(s_full, t)
    return np.einsum("s,spij->pij", sloc, fes.map_stress(t, fes.tab_sigma))


def stress_edge_values(fes: FeSystem, t: int, le: int, s_full):
    sloc = fes.dof_sigma.local_values(s_full, t)
    return np.einsum("s,spij->pij", sloc,
                     fes.map_stress(t, fes.tab_sigma_edge[:, le]))


def export_matrix_market(matrix, path, comment=""):
    """MatrixMarket coordinate export with full double precision."""
    from scipy.io import mmwrite

    mmwrite(path, sp.coo_matrix(matrix), comment=comment, precision=17)

"""Auxiliary-space preconditioners for the condensed velocity blocks.

The preconditioner combines a facet-block smoother on the hybrid space with
an exactly factorized conforming low-order problem, transferred through the
embedding  ubar -> (ubar, ubar_t).  Additive and multiplicative compositions
are supported, for the full condensed matrix S as well as for the double
Schur complement S_d (wrapped back to S through the exact triangular
factorization).
"""

from dataclasses import dataclass
from typing import List

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import shifted_legendre
from .condensation import CondensedSystem
from .dofmap import FeSystem


# ----------------------------------------------------------------- embedding


def build_embedding(fes: FeSystem) -> sp.csr_matrix:
    """Sparse E mapping Vbar coefficients to (V, Vhat) coefficients.

    The V part is the BDM interpolation of the P1 field, the Vhat part its
    tangential facet moments; Vhat rows on tangential-Dirichlet outflow
    facets are zeroed.
    """
    mesh, k = fes.mesh, fes.k
    qe = fes.quad_edge
    legk = shifted_legendre(k, qe.points)
    rows, cols, vals = [], [], []

    hat = np.vstack([1.0 - qe.points, qe.points])     # endpoint hats on a facet
    for f in range(mesh.num_facets):
        a = mesh.facet_start[f]
        b = mesh.facets[f, 0] if mesh.facets[f, 0] != a else mesh.facets[f, 1]
        nF, tF = mesh.facet_normal[f], mesh.facet_tangent[f]
        ln = mesh.facet_length[f]
        zero_that = f in fes.regions.tilde_neumann_facets
        for iv, v in enumerate((a, b)):
            for q in range(k + 1):
                mom = ln * np.sum(qe.weights * hat[iv] * legk[q])
                if abs(mom) < 1e-15:
                    continue
                for c in range(2):
                    rows.append(f * (k + 1) + q)
                    cols.append(2 * v + c)
                    vals.append(mom * nF[c])
            if not zero_that:
                for q in range(k):
                    mom = np.sum(qe.weights * hat[iv] * legk[q])
                    if abs(mom) < 1e-15:
                        continue
                    for c in range(2):
                        rows.append(fes.n_v + f * k + q)
                        cols.append(2 * v + c)
                        vals.append(mom * tF[c])

    # interior V coefficients: per-element fit against the facet part
    n_em = 3 * (k + 1)
    n_int = (k + 1) * (k - 1)
    Efacet = sp.coo_matrix(
        (vals, (rows, cols)), shape=(fes.n_vv, fes.dof_vbar.ndof)).tocsr()
    for t in range(mesh.num_triangles):
        wq = fes.quad_tri.weights * fes.detJ[t]
        u = fes.map_vector(t, fes.tab_u)
        gram = np.einsum("upi,p,vpi->uv", u, wq, u)
        gii = gram[n_em:, n_em:]
        gie = gram[n_em:, :n_em]
        lg = fes.dof_v.loc2glob[t]
        sg = fes.dof_v.signs[t]
        for lv in range(3):
            v = mesh.triangles[t, lv]
            for c in range(2):
                col = 2 * v + c
                ced = np.asarray(
                    Efacet[:, col][lg[:n_em]].todense()).ravel() * sg[:n_em]
                mom = np.einsum("up,p,p->u", u[n_em:, :, c], wq,
                                fes.tab_p1[lv])
                cint = np.linalg.solve(gii, mom - gie @ ced)
                for i, val in enumerate(cint):
                    if abs(val) > 1e-14:
                        rows.append(lg[n_em + i])
                        cols.append(col)
                        vals.append(val)
    E = sp.coo_matrix((vals, (rows, cols)),
                      shape=(fes.n_vv, fes.dof_vbar.ndof)).tocsr()
    return E


def embedding_free(fes: FeSystem, E: sp.csr_matrix) -> sp.csr_matrix:
    return E[fes.vv_free][:, fes.dof_vbar.is_free].tocsr()


def embedding_cpl(fes: FeSystem, sys: CondensedSystem,
                  E: sp.csr_matrix) -> sp.csr_matrix:
    """E restricted to the coupling rows: the matrix of the lifted embedding."""
    free_cpl = sys.free_mask_cpl()
    return E[sys.vv_of_cpl][:, fes.dof_vbar.is_free][free_cpl].tocsr()


# -------------------------------------------------------------- coarse solve


@dataclass
class CoarseSolver:
    matrix: sp.csr_matrix
    factor: object
    scale: float = 1.0

    def solve(self, r):
        return self.factor(r) / self.scale


def build_coarse(fes: FeSystem, nu: float, penalty_C: float = 4.0,
                 scale: float = 1.0) -> CoarseSolver:
    """Conforming P1 strain form with the outflow tangential penalty,
    factorized exactly."""
    mesh, k = fes.mesh, fes.k
    rows, cols, vals = [], [], []
    for t in range(mesh.num_triangles):
        dlam = np.einsum("lpa,ab->lb", fes.tab_p1_grad[:, :1], fes.Jinv[t])
        area = 0.5 * fes.detJ[t]
        eps = np.zeros((6, 2, 2))
        for lv in range(3):
            for c in range(2):
                g = np.zeros((2, 2))
                g[c] = dlam[lv]
                eps[2 * lv + c] = 0.5 * (g + g.T)
        block = nu * area * np.einsum("aij,bij->ab", eps, eps)
        lg = fes.dof_vbar.loc2glob[t]
        ii, jj = np.meshgrid(lg, lg, indexing="ij")
        rows.append(ii.ravel())
        cols.append(jj.ravel())
        vals.append(block.ravel())
    if penalty_C > 0:
        mass = np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])
        for f in fes.regions.tilde_neumann_facets:
            a = mesh.facet_start[f]
            b = mesh.facets[f, 0] if mesh.facets[f, 0] != a else mesh.facets[f, 1]
            tF = mesh.facet_tangent[f]
            ln = mesh.facet_length[f]
            w = nu * penalty_C * k * k / ln
            dofs = np.array([2 * a, 2 * a + 1, 2 * b, 2 * b + 1])
            block = np.zeros((4, 4))
            for i in range(2):
                for j in range(2):
                    block[2 * i:2 * i + 2, 2 * j:2 * j + 2] = \
                        w * ln * mass[i, j] * np.outer(tF, tF)
            ii, jj = np.meshgrid(dofs, dofs, indexing="ij")
            rows.append(ii.ravel())
            cols.append(jj.ravel())
            vals.append(block.ravel())
    A = sp.coo_matrix(
        (np.concatenate(vals),
         (np.concatenate(rows), np.concatenate(cols))),
        shape=(fes.dof_vbar.ndof,) * 2).tocsr()
    free = fes.dof_vbar.is_free
    Af = A[free][:, free].tocsc()
    try:
        lu = spla.splu(Af)
    except RuntimeError as exc:
        raise RuntimeError("coarse matrix singular (no Dirichlet boundary?)") \
            from exc
    return CoarseSolver(matrix=Af.tocsr(), factor=lu.solve, scale=scale)


# ------------------------------------------------------------------ smoother


@dataclass
class FacetBlockSmoother:
    """Per-facet block smoother with Jacobi, Gauss-Seidel and l1 variants."""

    A: sp.csr_matrix
    blocks: List[np.ndarray]
    variant: str = "gauss_seidel"
    factors: List = None

    def __post_init__(self):
        if self.variant not in ("jacobi", "gauss_seidel", "l1"):
            raise ValueError(f"unknown smoother variant {self.variant!r}")
        self.factors = []
        self._rows = []
        absA = abs(self.A) if self.variant == "l1" else None
        for blk in self.blocks:
            Ab = self.A[np.ix_(blk, blk)].toarray()
            if self.variant == "l1":
                row_total = np.asarray(absA[blk].sum(axis=1)).ravel()
                in_block = np.asarray(abs(self.A[np.ix_(blk, blk)])
                                      .sum(axis=1)).ravel()
                Ab = Ab + np.diag(row_total - in_block)
            self.factors.append(sla.cho_factor(Ab, check_finite=False))
            self._rows.append(self.A[blk].tocsr())

    def jacobi_apply(self, r):
        x = np.zeros_like(r)
        for blk, f in zip(self.blocks, self.factors):
            x[blk] += sla.cho_solve(f, r[blk], check_finite=False)
        return x

    def _sweep(self, x, b, order):
        for i in order:
            blk = self.blocks[i]
            rb = b[blk] - self._rows[i] @ x
            x[blk] += sla.cho_solve(self.factors[i], rb, check_finite=False)
        return x

    def forward(self, x, b, steps=1):
        for _ in range(steps):
            self._sweep(x, b, range(len(self.blocks)))
        return x

    def backward(self, x, b, steps=1):
        for _ in range(steps):
            self._sweep(x, b, range(len(self.blocks) - 1, -1, -1))
        return x

    def apply_symmetric(self, r):
        """Symmetric single application used by the additive composition."""
        if self.variant in ("jacobi", "l1"):
            return self.jacobi_apply(r)
        x = np.zeros_like(r)
        self.forward(x, r)
        self.backward(x, r)
        return x


def _free_index(mask):
    idx = -np.ones(len(mask), dtype=np.int64)
    idx[mask] = np.arange(mask.sum())
    return idx


def facet_blocks_full(fes: FeSystem) -> List[np.ndarray]:
    """Overlapping blocks for S: the facet's dofs plus all dofs of both
    incident elements."""
    mesh, k = fes.mesh, fes.k
    idx = _free_index(fes.vv_free)
    n_em = k + 1
    blocks = []
    for f in range(mesh.num_facets):
        dofs = set()
        for q in range(n_em):
            dofs.add(f * n_em + q)
        for q in range(k):
            dofs.add(fes.n_v + f * k + q)
        for t in mesh.facet_tri[f]:
            if t < 0:
                continue
            dofs.update(fes.dof_v.loc2glob[t].tolist())
            dofs.update((fes.n_v + fes.dof_vhat.loc2glob[t]).tolist())
        blk = idx[sorted(dofs)]
        blk = blk[blk >= 0]
        if len(blk):
            blocks.append(np.unique(blk))
    return blocks


def facet_blocks_schur(fes: FeSystem, sys: CondensedSystem) -> List[np.ndarray]:
    """One block per facet for S_d: the facet's normal-moment and tangential
    dofs only."""
    mesh, k = fes.mesh, fes.k
    idx = _free_index(sys.free_mask_cpl())
    cpl = sys.cpl_of_vv
    blocks = []
    for f in range(mesh.num_facets):
        dofs = [cpl[f * (k + 1) + q] for q in range(k + 1)]
        dofs += [cpl[fes.n_v + f * k + q] for q in range(k)]
        blk = idx[np.array(dofs)]
        blk = blk[blk >= 0]
        if len(blk):
            blocks.append(np.unique(blk))
    return blocks


# ----------------------------------------------------------------------- ASP


class AspPreconditioner:
    """Smoother + embedded coarse correction, additive or multiplicative."""

    def __init__(self, A: sp.csr_matrix, smoother: FacetBlockSmoother,
                 E: sp.csr_matrix, coarse: CoarseSolver,
                 mode: str = "multiplicative", steps: int = 1):
        if mode not in ("additive", "multiplicative"):
            raise ValueError(f"unknown composition mode {mode!r}")
        self.A = A
        self.smoother = smoother
        self.E = E
        self.coarse = coarse
        self.mode = mode
        self.steps = steps
        self.jacobi_scale = 1.0
        if mode == "multiplicative" and smoother.variant in ("jacobi", "l1"):
            self.jacobi_scale = self._estimate_smoother_bound()

    def _estimate_smoother_bound(self, iters=20, seed=1234):
        """Largest Ritz value of M^-1 A by power iteration; scaling the
        Jacobi-type smoother by its inverse enforces M >= A."""
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(self.A.shape[0])
        lam = 1.0
        for _ in range(iters):
            y = self.smoother.jacobi_apply(self.A @ x)
            lam = np.linalg.norm(y)
            x = y / lam
        return 1.1 * lam

    def coarse_correction(self, r):
        return self.E @ self.coarse.solve(self.E.T @ r)

    def apply(self, r):
        if self.mode == "additive":
            return self.smoother.apply_symmetric(r) + self.coarse_correction(r)
        x = np.zeros_like(r)
        if self.smoother.variant == "gauss_seidel":
            self.smoother.forward(x, r, self.steps)
        else:
            for _ in range(self.steps):
                x += self.smoother.jacobi_apply(r - self.A @ x) \
                    / self.jacobi_scale
        x += self.coarse_correction(r - self.A @ x)
        if self.smoother.variant == "gauss_seidel":
            self.smoother.backward(x, r, self.steps)
        else:
            for _ in range(self.steps):
                x += self.smoother.jacobi_apply(r - self.A @ x) \
                    / self.jacobi_scale
        return x


class ExtendedAsp:
    """Wraps an S_d preconditioner into one for S via the exact triangular
    factorization; interior bubble blocks are solved exactly."""

    def __init__(self, sys: CondensedSystem, inner: AspPreconditioner):
        if sys.Sd is None:
            raise ValueError("double_schur() must be run first")
        self.sys = sys
        self.inner = inner
        self.fes = sys.fes
        self._icpl, self._iint = sys._local_splits()
        self._free_vv = sys.free_mask_vv()
        self._free_cpl = sys.free_mask_cpl()

    def apply(self, r_free):
        sys, fes = self.sys, self.fes
        r = np.zeros(fes.n_vv)
        r[self._free_vv] = r_free
        icpl, iint = self._icpl, self._iint
        w = r.copy()
        # F1^-1: w_c -= X^T r_o; keep S_oo^-1 r_o for the middle factor
        bubble = [None] * fes.mesh.num_triangles
        for t in range(fes.mesh.num_triangles):
            r_o = r[sys.vv_l2g[t][iint]]
            bubble[t] = sla.cho_solve(sys.soo_chol[t], r_o, check_finite=False)
            contrib = sys.ext[t].T @ r_o
            np.subtract.at(w, sys.vv_l2g[t][icpl],
                           contrib * sys.vv_signs[t][icpl])
        # middle: inner preconditioner on coupling dofs, exact bubble solve
        w_c = w[sys.vv_of_cpl][self._free_cpl]
        z_c_free = self.inner.apply(w_c)
        out = np.zeros(fes.n_vv)
        z_c = np.zeros(len(sys.vv_of_cpl))
        z_c[self._free_cpl] = z_c_free
        out[sys.vv_of_cpl] = z_c
        # F2^-1: out_o = S_oo^-1 w_o - X z_c
        for t in range(fes.mesh.num_triangles):
            loc_c = out[sys.vv_l2g[t][icpl]] * sys.vv_signs[t][icpl]
            out[sys.vv_l2g[t][iint]] = bubble[t] - sys.ext[t] @ loc_c
        return out[self._free_vv]


# ---------------------------------------------------------- pressure & saddle


@dataclass
class PressureMassPrecond:
    """Exact inverse of the nu^-1-scaled pressure mass matrix (orthonormal
    element bases make it diagonal)."""

    diag: np.ndarray

    @classmethod
    def build(cls, fes: FeSystem, nu: float):
        d = np.empty(fes.dof_q.ndof)
        for t in range(fes.mesh.num_triangles):
            d[fes.dof_q.loc2glob[t]] = fes.detJ[t] / nu
        return cls(diag=d)

    def apply(self, r):
        return r / self.diag

    def mass_matrix(self):
        return sp.diags(self.diag).tocsr()


class SaddlePreconditioner:
    """Block triangular preconditioner; two velocity solves per application."""

    def __init__(self, velocity_apply, pressure: PressureMassPrecond,
                 B_free: sp.csr_matrix):
        self.velocity_apply = velocity_apply
        self.pressure = pressure
        self.B = B_free

    def apply(self, r):
        nv = self.B.shape[1]
        r_u, r_p = r[:nv], r[nv:]
        a = self.velocity_apply(r_u)
        dp = self.pressure.apply(r_p - self.B @ a)
        du = a - self.velocity_apply(self.B.T @ dp)
        return np.concatenate([du, dp])

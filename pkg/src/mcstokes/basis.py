"""Reference-element polynomial bases.

All bases live on the reference triangle with vertices (0,0), (1,0), (0,1).
Scalar polynomials are generated from an orthonormal Dubiner basis evaluated
through scaled three-term recurrences that stay well defined on the whole
closed triangle (including the collapsed vertex), so point evaluation at
vertices and facets is safe.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import eval_jacobi

from .quadrature import (
    REF_EDGES,
    REF_EDGE_LENGTHS,
    REF_NORMALS,
    REF_TANGENTS,
    REF_VERTICES,
    edge_rule,
    triangle_rule,
)

#: Basis of the trace-free 2x2 matrices: symmetric deviatoric (2) + skew (1).
DEV_COMPONENTS = np.array([
    [[1.0, 0.0], [0.0, -1.0]],
    [[0.0, 1.0], [1.0, 0.0]],
    [[0.0, 1.0], [-1.0, 0.0]],
])


def shifted_legendre(nmax: int, t: np.ndarray) -> np.ndarray:
    """Legendre polynomials on [0,1], orthonormal: int_0^1 L_i L_j dt = delta.

    Returns array of shape (nmax+1, len(t)).
    """
    t = np.asarray(t, dtype=float)
    z = 2.0 * t - 1.0
    out = np.empty((nmax + 1,) + z.shape)
    out[0] = 1.0
    if nmax >= 1:
        out[1] = z
    for n in range(1, nmax):
        out[n + 1] = ((2 * n + 1) * z * out[n] - n * out[n - 1]) / (n + 1)
    scale = np.sqrt(2.0 * np.arange(nmax + 1) + 1.0)
    return out * scale[:, None]


def _scaled_legendre_blocks(imax, u, w, du=None, dw=None):
    """A_i = w^i P_i(u/w) via the polynomial form of the Legendre recurrence.

    Stable for w -> 0.  If du/dw (constant gradients of u and w) are given,
    also returns x/y derivatives of A_i.
    """
    shape = u.shape
    A = np.empty((imax + 1,) + shape)
    A[0] = 1.0
    if imax >= 1:
        A[1] = u
    for i in range(2, imax + 1):
        A[i] = ((2 * i - 1) * u * A[i - 1] - (i - 1) * w * w * A[i - 2]) / i
    if du is None:
        return A
    dA = np.zeros((imax + 1, 2) + shape)
    if imax >= 1:
        dA[1, 0] = du[0]
        dA[1, 1] = du[1]
    for i in range(2, imax + 1):
        for d in range(2):
            dA[i, d] = ((2 * i - 1) * (du[d] * A[i - 1] + u * dA[i - 1, d])
                        - (i - 1) * (2.0 * dw[d] * w * A[i - 2]
                                     + w * w * dA[i - 2, d])) / i
    return A, dA


class _DubinerCache:
    """Normalization constants of the Dubiner basis, computed once per degree."""

    def __init__(self):
        self._norms = {}

    def norms(self, k: int) -> np.ndarray:
        if k not in self._norms:
            rule = triangle_rule(2 * k + 2)
            vals = dubiner_eval(k, rule.points, _normalized=False)
            nrm = np.sqrt(vals * vals @ rule.weights)
            self._norms[k] = nrm
        return self._norms[k]


_DUB = _DubinerCache()


def dubiner_index(k: int):
    """(i, j) index pairs ordered by total degree i+j, then by i."""
    return [(i, d - i) for d in range(k + 1) for i in range(d + 1)]


def dubiner_eval(k: int, pts: np.ndarray, grad: bool = False,
                 _normalized: bool = True):
    """Evaluate the orthonormal Dubiner basis of degree k at pts (n,2).

    Returns values of shape (M, n) with M = (k+1)(k+2)/2; with grad=True a
    pair (values, gradients) where gradients has shape (M, n, 2).
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    u = 2.0 * x + y - 1.0
    w = 1.0 - y
    if grad:
        A, dA = _scaled_legendre_blocks(k, u, w, du=(2.0, 1.0), dw=(0.0, -1.0))
    else:
        A = _scaled_legendre_blocks(k, u, w)
    z = 2.0 * y - 1.0

    idx = dubiner_index(k)
    M = len(idx)
    vals = np.empty((M, len(x)))
    grads = np.empty((M, len(x), 2)) if grad else None
    for m, (i, j) in enumerate(idx):
        alpha = 2 * i + 1
        B = eval_jacobi(j, alpha, 0.0, z)
        vals[m] = A[i] * B
        if grad:
            if j >= 1:
                dB = (j + alpha + 1) * eval_jacobi(j - 1, alpha + 1, 1.0, z)
            else:
                dB = 0.0
            grads[m, :, 0] = dA[i, 0] * B
            grads[m, :, 1] = dA[i, 1] * B + A[i] * dB
    if _normalized:
        nrm = _DUB.norms(k)
        vals /= nrm[:, None]
        if grad:
            grads /= nrm[:, None, None]
    return (vals, grads) if grad else vals


@dataclass
class ScalarBasis:
    """Hierarchical scalar P^k basis: vertex, edge and interior functions."""

    degree: int
    ndof: int = field(init=False)

    def __post_init__(self):
        k = self.degree
        self.ndof = (k + 1) * (k + 2) // 2

    def eval(self, pts, grad: bool = False):
        k = self.degree
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x, y = pts[:, 0], pts[:, 1]
        lam = np.stack([1.0 - x - y, x, y])
        dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        n = len(x)
        vals = np.empty((self.ndof, n))
        grads = np.empty((self.ndof, n, 2)) if grad else None
        if k == 0:
            vals[0] = 1.0
            if grad:
                grads[0] = 0.0
            return (vals, grads) if grad else vals
        m = 0
        for v in range(3):
            vals[m] = lam[v]
            if grad:
                grads[m] = dlam[v]
            m += 1
        for (a, b) in REF_EDGES:
            z = lam[b] - lam[a]
            dz = dlam[b] - dlam[a]
            for j in range(k - 1):
                J = eval_jacobi(j, 1.0, 1.0, z)
                vals[m] = lam[a] * lam[b] * J
                if grad:
                    dJ = (0.5 * (j + 3) * eval_jacobi(j - 1, 2.0, 2.0, z)
                          if j >= 1 else 0.0)
                    for d in range(2):
                        grads[m, :, d] = ((dlam[a, d] * lam[b]
                                           + lam[a] * dlam[b, d]) * J
                                          + lam[a] * lam[b] * dJ * dz[d])
                m += 1
        if k >= 3:
            bub = lam[0] * lam[1] * lam[2]
            dbub = np.stack([y * (1.0 - 2.0 * x - y),
                             x * (1.0 - x - 2.0 * y)], axis=-1)
            if grad:
                dv, dg = dubiner_eval(k - 3, pts, grad=True)
            else:
                dv = dubiner_eval(k - 3, pts)
            for mm in range(dv.shape[0]):
                vals[m] = bub * dv[mm]
                if grad:
                    grads[m] = dbub * dv[mm][:, None] + bub[:, None] * dg[mm]
                m += 1
        assert m == self.ndof
        return (vals, grads) if grad else vals


def scalar_basis(k: int) -> ScalarBasis:
    if k < 0:
        raise ValueError("degree must be nonnegative")
    return ScalarBasis(degree=k)


def _edge_points(edge: int, t: np.ndarray) -> np.ndarray:
    a, b = REF_EDGES[edge]
    va, vb = REF_VERTICES[a], REF_VERTICES[b]
    return va[None, :] + np.asarray(t)[:, None] * (vb - va)[None, :]


class VectorPkBasis:
    """Full vector P^k (BDM^k) split into facet and interior functions.

    Facet functions carry normal-trace Legendre moments on exactly one edge
    (orthonormal moments: int_e (phi.n) L_q ds = delta on the owning edge,
    zero moments elsewhere); interior functions have vanishing normal trace
    on all edges.  Both families are minimum-norm respectively orthonormal
    in the coefficient space of the Dubiner generators.
    """

    def __init__(self, degree: int):
        if degree < 1:
            raise ValueError("BDM basis needs degree >= 1")
        self.degree = k = degree
        M = (k + 1) * (k + 2) // 2
        self.nscalar = M
        self.ndof = 2 * M
        self.n_edge = k + 1
        self.n_interior = (k + 1) * (k - 1)

        rule = edge_rule(2 * k + 2)
        leg = shifted_legendre(k, rule.points)
        C = np.zeros((3 * (k + 1), 2 * M))
        for e in range(3):
            pts = _edge_points(e, rule.points)
            psi = dubiner_eval(k, pts)                       # (M, nq)
            nrm = REF_NORMALS[e]
            wl = REF_EDGE_LENGTHS[e]
            # moment (e, q) of raw function (m, comp)
            for q in range(k + 1):
                wq = rule.weights * leg[q] * wl
                mom = psi @ wq                               # (M,)
                for comp in range(2):
                    C[e * (k + 1) + q, 2 * np.arange(M) + comp] = mom * nrm[comp]
        pinv = np.linalg.pinv(C)
        u, s, vt = np.linalg.svd(C)
        rank = int((s > s[0] * 1e-12).sum())
        if rank != 3 * (k + 1):
            raise RuntimeError("normal-moment matrix rank deficient")
        # coefficient layout: (ndof_basis, M, 2); facet dofs first, per edge
        coef = np.empty((2 * M, M, 2))
        for col in range(3 * (k + 1)):
            coef[col] = pinv[:, col].reshape(M, 2)
        null = vt[rank:]                                     # (n_interior, 2M)
        for i, row in enumerate(null):
            coef[3 * (k + 1) + i] = row.reshape(M, 2)
        self.coef = coef
        self.edge_dofs = [list(range(e * (k + 1), (e + 1) * (k + 1)))
                          for e in range(3)]
        self.interior_dofs = list(range(3 * (k + 1), 2 * M))

    def eval(self, pts, grad: bool = False):
        """Values (ndof, n, 2) and optionally gradients (ndof, n, 2, 2).

        Gradient index order: grads[f, p, i, j] = d phi_i / d x_j.
        """
        if grad:
            psi, dpsi = dubiner_eval(self.degree, pts, grad=True)
            vals = np.einsum("fmd,mp->fpd", self.coef, psi)
            grads = np.einsum("fmd,mpe->fpde", self.coef, dpsi)
            return vals, grads
        psi = dubiner_eval(self.degree, pts)
        return np.einsum("fmd,mp->fpd", self.coef, psi)

    def div(self, pts):
        """Divergence values (ndof, n)."""
        _, dpsi = dubiner_eval(self.degree, pts, grad=True)
        return np.einsum("fmd,mpd->fp", self.coef, dpsi)


def bdm_basis(k: int) -> VectorPkBasis:
    return VectorPkBasis(degree=k)


class StressBasis:
    """Trace-free matrix P^k with normal-tangential trace in P^{k-1}.

    Spanned by all trace-free matrix P^{k-1} functions plus the degree-k
    combinations whose leading (degree-k) Legendre moment of the nt-trace
    vanishes on every edge ("nt-bubbles").
    """

    def __init__(self, degree: int):
        if degree < 2:
            raise ValueError("stress basis needs degree >= 2")
        self.degree = k = degree
        M = (k + 1) * (k + 2) // 2
        Mlow = k * (k + 1) // 2
        self.nscalar = M

        # coefficient layout (ndof, M, 3) over Dubiner x DEV_COMPONENTS
        coef = []
        for m in range(Mlow):
            for a in range(3):
                c = np.zeros((M, 3))
                c[m, a] = 1.0
                coef.append(c)

        rule = edge_rule(2 * k + 2)
        legk = shifted_legendre(k, rule.points)[k]
        ntop = k + 1        # Dubiner functions of total degree exactly k
        R = np.zeros((3, 3 * ntop))
        for e in range(3):
            pts = _edge_points(e, rule.points)
            psi = dubiner_eval(k, pts)[Mlow:]                # (ntop, nq)
            mom = psi @ (rule.weights * legk * REF_EDGE_LENGTHS[e])
            tDn = np.array([REF_TANGENTS[e] @ D @ REF_NORMALS[e]
                            for D in DEV_COMPONENTS])
            for i in range(ntop):
                for a in range(3):
                    R[e, 3 * i + a] = mom[i] * tDn[a]
        u, s, vt = np.linalg.svd(R)
        rank = int((s > max(s[0], 1.0) * 1e-12).sum())
        if rank != 3:
            raise RuntimeError(
                "nt-moment constraint matrix has rank %d, expected 3" % rank)
        null = vt[rank:]                                     # (3k, 3*ntop)
        for row in null:
            c = np.zeros((M, 3))
            c[Mlow:, :] = row.reshape(ntop, 3)
            coef.append(c)
        self.coef = np.array(coef)
        self.ndof = self.coef.shape[0]
        assert self.ndof == 3 * M - 3

    def eval(self, pts):
        """Matrix values of shape (ndof, n, 2, 2)."""
        psi = dubiner_eval(self.degree, pts)
        return np.einsum("fma,mp,aij->fpij", self.coef, psi, DEV_COMPONENTS)

    def div(self, pts):
        """Row-wise divergence, shape (ndof, n, 2)."""
        _, dpsi = dubiner_eval(self.degree, pts, grad=True)
        return np.einsum("fma,mpj,aij->fpi", self.coef, dpsi, DEV_COMPONENTS)


def sigma_basis(k: int) -> StressBasis:
    return StressBasis(degree=k)


class SkewBasis:
    """kappa applied to a scalar P^{k-1} basis; values are scalars phi with
    the matrix realization kappa(phi) = phi/2 * [[0,-1],[1,0]]."""

    KAPPA = 0.5 * np.array([[0.0, -1.0], [1.0, 0.0]])

    def __init__(self, degree: int):
        self.degree = degree
        self.scalar = scalar_basis(degree)
        self.ndof = self.scalar.ndof

    def eval_scalar(self, pts):
        return self.scalar.eval(pts)

    def eval(self, pts):
        """Matrix values (ndof, n, 2, 2)."""
        phi = self.scalar.eval(pts)
        return np.einsum("fp,ij->fpij", phi, self.KAPPA)


def skew_basis(k_minus_1: int) -> SkewBasis:
    if k_minus_1 < 1:
        raise ValueError("skew basis needs scalar degree >= 1 (k >= 2)")
    return SkewBasis(degree=k_minus_1)


class FacetBasis:
    """Orthonormal Legendre functions of degree < k on a facet, to be read
    as tangential vectors u = phi * t with vanishing normal component."""

    def __init__(self, degree: int):
        if degree < 2:
            raise ValueError("facet space needs k >= 2")
        self.degree = degree
        self.ndof = degree    # dim P^{k-1} on an interval

    def eval(self, t):
        """Values (ndof, len(t)) at facet parameters t in [0,1]."""
        return shifted_legendre(self.degree - 1, np.asarray(t))


def facet_basis(k: int) -> FacetBasis:
    return FacetBasis(degree=k)

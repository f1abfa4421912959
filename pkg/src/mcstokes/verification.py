"""Numeric certification of the analytical building blocks: interpolation
bounds, trace-norm inverse estimates, norm equivalences, and the constants
entering the condition-number analysis."""

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import assembly as asm
from . import fields
from .basis import bdm_basis, shifted_legendre
from .condensation import CondensedSystem, condense_sigma_omega, double_schur
from .dofmap import FeSystem
from .mesh import classify_boundary, from_arrays
from .quadrature import (REF_EDGES, REF_EDGE_LENGTHS, REF_NORMALS,
                         REF_TANGENTS, REF_VERTICES, edge_rule, triangle_rule)


@dataclass
class ConstantReport:
    name: str
    params: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)   # list of dicts
    notes: str = ""

    def add(self, **kwargs):
        self.rows.append(kwargs)

    def column(self, key):
        return np.array([r[key] for r in self.rows])

    def write_csv(self, path):
        if not self.rows:
            with open(path, "w", newline="") as fh:
                fh.write("")
            return
        keys = []
        for r in self.rows:
            for k in r:
                if k not in keys:
                    keys.append(k)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, restval="")
            w.writeheader()
            for r in self.rows:
                w.writerow(r)

    def text(self):
        lines = [f"# {self.name}  {self.params}"]
        for r in self.rows:
            lines.append("  " + "  ".join(f"{k}={v}" for k, v in r.items()))
        if self.notes:
            lines.append("  " + self.notes)
        return "\n".join(lines)


# ------------------------------------------------------- nodal interpolation


def vertex_patches(mesh):
    """vertex -> list of (element, local vertex) incidences."""
    patches = [[] for _ in range(mesh.num_vertices)]
    for t, tri in enumerate(mesh.triangles):
        for lv, v in enumerate(tri):
            patches[v].append((t, lv))
    return patches


def interp_nodal_average(fes: FeSystem, broken: fields.BrokenVectorField,
                         zero_dirichlet: bool = False) -> np.ndarray:
    """Average the element traces at every vertex; returns Vbar coefficients.

    With zero_dirichlet the values at vertices on the Dirichlet closure are
    set to zero (the variant mapping into the constrained space).
    """
    mesh = fes.mesh
    out = np.zeros(fes.dof_vbar.ndof)
    for v, patch in enumerate(vertex_patches(mesh)):
        acc = np.zeros(2)
        for t, lv in patch:
            acc += broken.vertex_values(t)[lv]
        out[2 * v:2 * v + 2] = acc / len(patch)
    if zero_dirichlet:
        out[~fes.dof_vbar.is_free] = 0.0
    return out


def rigid_projection_facet(fes: FeSystem, f: int, vals_s: np.ndarray):
    """L2 projection of facet values (nqe, 2), given in the global facet
    parameter, onto the rigid modes a + b rot(x - x_F); returns the
    projected values and the squared L2 norm of the projection."""
    mesh = fes.mesh
    pts = fields.facet_quad_points(fes, f)
    xf = pts.mean(axis=0)
    rot = np.stack([-(pts - xf)[:, 1], (pts - xf)[:, 0]], axis=1)
    basis = np.zeros((3, len(pts), 2))
    basis[0, :, 0] = 1.0
    basis[1, :, 1] = 1.0
    basis[2] = rot
    w = fes.quad_edge.weights * mesh.facet_length[f]
    G = np.einsum("api,p,bpi->ab", basis, w, basis)
    m = np.einsum("api,p,pi->a", basis, w, vals_s)
    c = np.linalg.solve(G, m)
    proj = np.einsum("a,api->pi", c, basis)
    return proj, float(c @ m)


def _edge_values_s_order(fes, broken, t, le):
    vals = broken.edge_values(t, le)
    return vals[::-1] if fes.edge_flip[t, le] else vals


def check_interp_bound(fes: FeSystem, n_samples: int = 500,
                       seed: int = 42) -> ConstantReport:
    """Max ratio of the nodal-average approximation error against strain plus
    rigid-projected jumps, over random broken fields."""
    mesh = fes.mesh
    rng = np.random.default_rng(seed)
    report = ConstantReport("interp_bound",
                            params={"k": fes.k, "nel": mesh.num_triangles,
                                    "samples": n_samples})
    h = fes.tri_diam
    max_ratio = 0.0
    for _ in range(n_samples):
        broken = fields.BrokenVectorField.random(fes, rng)
        vb = interp_nodal_average(fes, broken)
        lhs = 0.0
        rhs = 0.0
        for t in range(mesh.num_triangles):
            wq = fes.quad_tri.weights * fes.detJ[t]
            diff = broken.values(t) - fields.vbar_values(fes, t, vb)
            lhs += float(np.einsum("pi,p->", diff ** 2, wq)) / h[t] ** 2
            gdiff = broken.grads(t) - _vbar_grad(fes, t, vb)[None, :, :]
            lhs += float(np.einsum("pij,p->", gdiff ** 2, wq))
            g = broken.grads(t)
            eps = 0.5 * (g + np.swapaxes(g, 1, 2))
            rhs += float(np.einsum("pij,p->", eps ** 2, wq))
        for f in mesh.interior_facets:
            t0, t1 = mesh.facet_tri[f]
            le0 = int(np.nonzero(fes.edge_facet[t0] == f)[0][0])
            le1 = int(np.nonzero(fes.edge_facet[t1] == f)[0][0])
            jump = _edge_values_s_order(fes, broken, t0, le0) \
                - _edge_values_s_order(fes, broken, t1, le1)
            _, norm2 = rigid_projection_facet(fes, f, jump)
            rhs += norm2 / mesh.facet_length[f]
        if rhs < 1e-14 * max(lhs, 1.0):
            continue
        max_ratio = max(max_ratio, lhs / rhs)
    report.add(max_ratio=max_ratio)
    return report


def _vbar_grad(fes, t, vb_full):
    loc = fes.dof_vbar.local_values(vb_full, t)
    dlam = np.einsum("lpa,ab->lb", fes.tab_p1_grad[:, :1], fes.Jinv[t])
    grad = np.zeros((2, 2))
    for lv in range(3):
        grad[0] += loc[2 * lv] * dlam[lv]
        grad[1] += loc[2 * lv + 1] * dlam[lv]
    return grad


# ------------------------------------------------------------- trace norms


class TraceNormCalculator:
    """Constrained quadratic minimizations realizing the discrete trace
    norms on the reference triangle, for facet data (u_n, uhat)."""

    def __init__(self, k: int, facet: int = 2):
        self.k = k
        self.facet = facet
        self.bdm = bdm_basis(k)
        self.rule = triangle_rule(2 * k + 2)
        self.erule = edge_rule(2 * k + 2)
        self.h = np.sqrt(2.0)          # reference element diameter
        self._setup()

    def _edge_pts(self, e):
        a, b = REF_EDGES[e]
        va, vb = REF_VERTICES[a], REF_VERTICES[b]
        return va[None, :] + self.erule.points[:, None] * (vb - va)[None, :]

    def _setup(self):
        k, F = self.k, self.facet
        vals, grads = self.bdm.eval(self.rule.points, grad=True)
        eps = 0.5 * (grads + np.swapaxes(grads, 2, 3))
        wq = self.rule.weights
        self.H_eps = np.einsum("upij,p,vpij->uv", eps, wq, eps)
        self.leg = shifted_legendre(k, self.erule.points)
        wj = np.array([k * (k - j + 1) for j in range(k + 1)], dtype=float)
        self.edge_vals = [self.bdm.eval(self._edge_pts(e)) for e in range(3)]
        # normal-moment rows per edge: (k+1, ndof)
        self.nmom = []
        self.tcoef = []
        for e in range(3):
            ln = REF_EDGE_LENGTHS[e]
            vn = self.edge_vals[e] @ REF_NORMALS[e]
            vt = self.edge_vals[e] @ REF_TANGENTS[e]
            self.nmom.append(np.einsum("up,qp,p->qu", vn, self.leg,
                                       self.erule.weights) * ln)
            self.tcoef.append(np.einsum("up,qp,p->uq", vt, self.leg,
                                        self.erule.weights))
        self.jump_w = wj

    def _jump_form(self, e, degree_cut):
        """Quadratic form of || Pi^{cut-1} (.) ||_{j,e}^2 on tangential
        Legendre coefficients (orthonormal in the local parameter)."""
        k = self.k
        ln = REF_EDGE_LENGTHS[e]
        return np.diag(self.jump_w[:degree_cut]) * ln / self.h

    def norm_matrices(self):
        """Gram matrices (M_free, M_zero) of the two trace norms over the
        facet data z = (k+1 normal coeffs, k tangential coeffs)."""
        k, F = self.k, self.facet
        nz = (k + 1) + k
        n_w = self.bdm.ndof

        def build(zero_variant: bool):
            # objective: w' Q w + cross terms with z via the jump on F
            Q = self.H_eps.copy()
            # jump term on F: coefficients of (w - uhat)_t
            TB = self.tcoef[F][:, :k]                      # (nw, k) tang coeffs
            J = self._jump_form(F, k)
            Q += TB @ J @ TB.T
            Cz = np.zeros((n_w, nz))
            Cz[:, k + 1:] = -TB @ J
            D = np.zeros((nz, nz))
            D[k + 1:, k + 1:] = J
            if zero_variant:
                for e in range(3):
                    if e == F:
                        continue
                    TBe = self.tcoef[e][:, :k]
                    Q += TBe @ self._jump_form(e, k) @ TBe.T
            # constraints: normal moments
            if zero_variant:
                A = np.vstack([self.nmom[e] for e in range(3)])
                Bz = np.zeros((A.shape[0], nz))
                ln = REF_EDGE_LENGTHS[F]
                Bz[F * (k + 1):(F + 1) * (k + 1), :k + 1] = np.eye(k + 1) * ln
            else:
                A = self.nmom[F]
                ln = REF_EDGE_LENGTHS[F]
                Bz = np.eye(k + 1, nz) * ln
            nc = A.shape[0]
            KKT = np.zeros((n_w + nc, n_w + nc))
            KKT[:n_w, :n_w] = Q
            KKT[:n_w, n_w:] = A.T
            KKT[n_w:, :n_w] = A
            rhs = np.zeros((n_w + nc, nz))
            rhs[:n_w] = -Cz
            rhs[n_w:] = Bz
            try:
                sol = sla.solve(KKT, rhs)
            except sla.LinAlgError as exc:
                raise RuntimeError("trace-norm constraint set infeasible") \
                    from exc
            W = sol[:n_w]                                  # w(z)
            M = W.T @ Q @ W + W.T @ Cz + Cz.T @ W + D
            return 0.5 * (M + M.T)

        return build(False), build(True)

    def evaluate(self, z):
        """(||.||_{eps,F}^2, ||.||_{eps,F,0}^2) for facet data z."""
        M1, M2 = self.norm_matrices()
        return float(z @ M1 @ z), float(z @ M2 @ z)

    def rigid_constraint_rows(self):
        """Rows of Pi^R_F (u_n n + uhat_t) = 0 as linear functionals of z."""
        k, F = self.k, self.facet
        pts = self._edge_pts(F)
        xf = pts.mean(axis=0)
        n, tg = REF_NORMALS[F], REF_TANGENTS[F]
        rot = np.stack([-(pts - xf)[:, 1], (pts - xf)[:, 0]], axis=1)
        basis = np.zeros((3, len(pts), 2))
        basis[0, :, 0] = 1.0
        basis[1, :, 1] = 1.0
        basis[2] = rot
        w = self.erule.weights * REF_EDGE_LENGTHS[F]
        rows = np.zeros((3, 2 * k + 1))
        for q in range(k + 1):
            vec = np.einsum("p,i->pi", self.leg[q], n)
            rows[:, q] = np.einsum("api,p,pi->a", basis, w, vec)
        for q in range(k):
            vec = np.einsum("p,i->pi", self.leg[q], tg)
            rows[:, k + 1 + q] = np.einsum("api,p,pi->a", basis, w, vec)
        return rows


def trace_norm_ratio(k: int) -> float:
    """Max ||.||_{eps,F,0}^2 / ||.||_{eps,F}^2 on the rigid-free subspace."""
    calc = TraceNormCalculator(k)
    M1, M2 = calc.norm_matrices()
    R = calc.rigid_constraint_rows()
    _, _, vt = np.linalg.svd(R)
    Z = vt[3:].T
    A = Z.T @ M2 @ Z
    B = Z.T @ M1 @ Z
    ev = sla.eigh(0.5 * (A + A.T), 0.5 * (B + B.T), eigvals_only=True)
    return float(ev[-1])


def measure_trace_ratios(k_range=(2, 3, 4, 5, 6)) -> ConstantReport:
    rep = ConstantReport("trace_inverse_estimate")
    for k in k_range:
        rep.add(k=k, ratio=trace_norm_ratio(k))
    return rep


# -------------------------------------------------------------- gamma / LBB


def reference_element_mesh():
    return from_arrays(REF_VERTICES, [[0, 1, 2]])


def two_element_mesh():
    return from_arrays([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
                       [[0, 1, 2], [0, 2, 3]])


def all_natural_fes(mesh, k) -> FeSystem:
    regions = classify_boundary(mesh, neumann=lambda x: True,
                                allow_no_dirichlet=True)
    return FeSystem(mesh, regions, k)


def eps_schur_gram(fes: FeSystem, sys_: CondensedSystem) -> np.ndarray:
    """Dense Gram of ||.||_{eps,h,partial}: the eps-norm Schur complement
    eliminating the interior bubble dofs."""
    G = asm.eps_gram(fes).toarray()
    icpl = sys_.vv_of_cpl
    iint = np.nonzero(fes.vv_interior)[0]
    Gcc = G[np.ix_(icpl, icpl)]
    Gco = G[np.ix_(icpl, iint)]
    Goo = G[np.ix_(iint, iint)]
    return Gcc - Gco @ np.linalg.solve(Goo, Gco.T)


def _pencil_max_on_range(A, B, tol=1e-10):
    """Max generalized eigenvalue of (A, B) restricted to the range of B
    (the common kernel, e.g. rigid modes, is projected out)."""
    w, V = np.linalg.eigh(0.5 * (B + B.T))
    keep = w > tol * w[-1]
    Z = V[:, keep]
    Ar = Z.T @ A @ Z
    Br = Z.T @ B @ Z
    ev = sla.eigh(0.5 * (Ar + Ar.T), 0.5 * (Br + Br.T), eigvals_only=True)
    return float(ev[-1]), float(ev[0])


def estimate_gamma(k_range=(2, 3, 4, 5, 6), nu: float = 1.0,
                   mesh: str = "reference") -> ConstantReport:
    """gamma(k): max eigenvalue of nu ||.||_{eps,h,partial}^2 against the
    double Schur energy on harmonically extended fields."""
    rep = ConstantReport("gamma", params={"mesh": mesh, "nu": nu})
    msh = reference_element_mesh() if mesh == "reference" \
        else two_element_mesh()
    for k in k_range:
        fes = all_natural_fes(msh, k)
        sys_ = double_schur(condense_sigma_omega(fes, nu))
        Sd = sys_.Sd.toarray()
        Ge = nu * eps_schur_gram(fes, sys_)
        gamma, gmin = _pencil_max_on_range(Ge, Sd)
        rep.add(k=k, gamma=gamma, min_ratio=gmin)
    return rep


def estimate_infsup(fes: FeSystem, sys_: CondensedSystem) -> dict:
    """Eigenvalues of M_p^-1 B S^-1 B' on free dofs (dense, desk scale)."""
    free = fes.vv_free
    S = sys_.S[free][:, free].toarray()
    B = sys_.B[:, free].toarray()
    from .preconditioners import PressureMassPrecond
    mp = PressureMassPrecond.build(fes, sys_.nu)
    Mp = np.diag(mp.diag)
    X = B @ np.linalg.solve(S, B.T)
    ev = sla.eigh(0.5 * (X + X.T), Mp, eigvals_only=True)
    n_zero = int((ev < 1e-10 * ev[-1]).sum())
    expected_zero = 1 if fes.regions.mean_zero_pressure else 0
    return {
        "eigs": ev,
        "n_zero": n_zero,
        "expected_zero": expected_zero,
        "gamma_L2": float(ev[n_zero]),
        "lambda_max": float(ev[-1]),
    }


# ------------------------------------------------------- norm equivalences


def random_free_vv(fes, rng):
    x = np.zeros(fes.n_vv)
    x[fes.vv_free] = rng.standard_normal(int(fes.vv_free.sum()))
    return x


def check_norm_equivalences(fes: FeSystem, sys_: CondensedSystem,
                            n_samples: int = 200, seed: int = 7,
                            identity_tol: float = 1e-10) -> ConstantReport:
    """Exact identities asserted to identity_tol; equivalence ratios measured.

    Hard failures (raised) on identity violation; the measured ranges are
    returned for trend checks by the caller.
    """
    rng = np.random.default_rng(seed)
    rep = ConstantReport("norm_equivalences",
                         params={"k": fes.k, "nel": fes.mesh.num_triangles})
    if sys_.Sd is None:
        double_schur(sys_)

    worst_id = 0.0
    worst_harm = 0.0
    for _ in range(n_samples):
        x = random_free_vv(fes, rng)
        lhs, rhs = sys_.schur_norm_identity(x)
        rel = abs(lhs - rhs) / max(abs(lhs), 1e-300)
        worst_id = max(worst_id, rel)
        xh = sys_.harmonic_extend(x)
        e_s = sys_.s_energy(xh)
        xc = xh[sys_.vv_of_cpl]
        e_sd = float(xc @ (sys_.Sd @ xc))
        worst_harm = max(worst_harm, abs(e_s - e_sd) / max(abs(e_s), 1e-300))
    if worst_id > identity_tol:
        raise AssertionError(
            f"Schur norm identity violated: rel err {worst_id:.3e}")
    if worst_harm > identity_tol:
        raise AssertionError(
            f"harmonic-extension energy identity violated: {worst_harm:.3e}")
    rep.add(check="schurnormmat", max_rel_err=worst_id)
    rep.add(check="schur_on_harmonic", max_rel_err=worst_harm)

    # embedding equality (exact only without tangential-outflow facets)
    from .preconditioners import build_embedding
    if not fes.regions.tilde_neumann_facets:
        E = build_embedding(fes)
        worst_embed = 0.0
        for _ in range(n_samples):
            vb = np.zeros(fes.dof_vbar.ndof)
            vb[fes.dof_vbar.is_free] = rng.standard_normal(fes.dof_vbar.nfree)
            x = E @ vb
            e_s = sys_.s_energy(x)
            en = 0.0
            for t in range(fes.mesh.num_triangles):
                epsm = fields.vbar_strain(fes, t, vb)
                en += sys_.nu * 0.5 * fes.detJ[t] * float(np.sum(epsm * epsm))
            worst_embed = max(worst_embed,
                              abs(e_s - en) / max(abs(en), 1e-300))
        if worst_embed > identity_tol:
            raise AssertionError(
                f"conforming embedding equality violated: {worst_embed:.3e}")
        rep.add(check="embedding_equality", max_rel_err=worst_embed)

    # measured ranges of the S vs eps,h equivalence
    free = fes.vv_free
    Sf = sys_.S[free][:, free].toarray()
    Gf = sys_.nu * asm.eps_gram(fes)[free][:, free].toarray()
    ev = sla.eigh(Sf, Gf, eigvals_only=True)
    rep.add(check="schur_vs_epsh", lam_min=float(ev[0]), lam_max=float(ev[-1]))

    # U_h norm equivalence ratios on random triples
    ratios = []
    for _ in range(min(n_samples, 50)):
        x = random_free_vv(fes, rng)
        w = rng.standard_normal(fes.dof_w.ndof)
        n_uh, n_star = asm.uh_norms(fes, x[:fes.n_v], x[fes.n_v:], w)
        divn = 0.0
        for t in range(fes.mesh.num_triangles):
            dv = asm.div_values(fes, t, x[:fes.n_v])
            divn += float(dv * dv @ (fes.quad_tri.weights * fes.detJ[t]))
        ratios.append(n_uh / (n_star + 0.5 * divn))
    rep.add(check="uh_norm_equivalence", ratio_min=float(np.min(ratios)),
            ratio_max=float(np.max(ratios)))
    return rep

"""End-to-end solve orchestration: assemble, condense, precondition, solve,
recover and post-check."""

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import assembly as asm
from . import fields
from . import preconditioners as pc
from .condensation import CondensedSystem, condense_sigma_omega, double_schur
from .dofmap import FeSystem
from .krylov import KrylovReport, cg, gmres, lanczos_spectrum
from .problems import Problem, make_problem


@dataclass
class SolverOptions:
    mode: str = "stokes"               # stokes | elliptic
    target: str = "Sd"                 # S | Sd (preconditioner target)
    composition: str = "multiplicative"
    smoother: str = "gauss_seidel"     # gauss_seidel | jacobi | l1
    steps: int = 1
    penalty_C: float = 4.0
    rtol: float = 1e-6
    maxit: int = 500
    seed: int = 0


@dataclass
class RunRecord:
    problem: str
    k: int
    level: int
    n_elements: int
    n_dofs: int                 # free dofs of (V x Vhat) x Q
    iterations: int
    t_tot: float
    t_sup: float
    t_sol: float
    converged: bool
    max_div: float = np.nan
    nt_jump: float = np.nan
    lambda_min: Optional[float] = None
    lambda_max: Optional[float] = None
    cond: Optional[float] = None

    CSV_FIELDS = ["problem", "k", "level", "n_elements", "n_dofs",
                  "iterations", "t_tot", "t_sup", "t_sol", "converged",
                  "max_div", "nt_jump", "lambda_min", "lambda_max", "cond"]

    def csv_row(self):
        vals = [getattr(self, f) for f in self.CSV_FIELDS]
        return [("" if v is None else v) for v in vals]


@dataclass
class SolveResult:
    fes: FeSystem
    system: CondensedSystem
    u: np.ndarray               # V coefficients, Dirichlet data included
    uhat: np.ndarray
    p: Optional[np.ndarray]     # physical pressure
    sigma: np.ndarray
    w: np.ndarray
    report: KrylovReport
    record: RunRecord
    checks: dict = field(default_factory=dict)


def build_system(problem: Problem, k: int, nu: float, opts: SolverOptions):
    fes = FeSystem(problem.mesh, problem.regions, k)
    sys_ = condense_sigma_omega(fes, nu, body_force=problem.body_force)
    if opts.target == "Sd":
        double_schur(sys_)
    return fes, sys_


def velocity_preconditioner(fes: FeSystem, sys_: CondensedSystem,
                            nu: float, opts: SolverOptions):
    """ASP for the condensed velocity block, on free dofs."""
    E = pc.build_embedding(fes)
    coarse = pc.build_coarse(fes, nu, penalty_C=opts.penalty_C)
    if opts.target == "S":
        A = sys_.S[fes.vv_free][:, fes.vv_free].tocsr()
        blocks = pc.facet_blocks_full(fes)
        sm = pc.FacetBlockSmoother(A, blocks, opts.smoother)
        asp = pc.AspPreconditioner(A, sm, pc.embedding_free(fes, E), coarse,
                                   opts.composition, opts.steps)
        return asp.apply
    if opts.target == "Sd":
        free_cpl = sys_.free_mask_cpl()
        A = sys_.Sd[free_cpl][:, free_cpl].tocsr()
        blocks = pc.facet_blocks_schur(fes, sys_)
        sm = pc.FacetBlockSmoother(A, blocks, opts.smoother)
        asp = pc.AspPreconditioner(A, sm, pc.embedding_cpl(fes, sys_, E),
                                   coarse, opts.composition, opts.steps)
        return pc.ExtendedAsp(sys_, asp).apply
    raise ValueError(f"unknown preconditioner target {opts.target!r}")


def condensed_rhs(fes: FeSystem, sys_: CondensedSystem):
    """Free-dof right-hand side with Dirichlet lifting, velocity and pressure."""
    lift = sys_.S @ fes.vv_values
    rhs_u = (sys_.load - lift)[fes.vv_free]
    rhs_p = -(sys_.B @ fes.vv_values)
    return rhs_u, rhs_p


def pressure_projector(fes: FeSystem):
    """Remove the constant pressure mode from the trailing block of a
    stacked (velocity, pressure) vector."""
    one = fields.q_constant_one(fes)
    mass = np.empty_like(one)
    for t in range(fes.mesh.num_triangles):
        mass[fes.dof_q.loc2glob[t]] = (fes.tab_q @ (fes.quad_tri.weights
                                                    * fes.detJ[t]))
    denom = float(mass @ one)
    nvfree = int(fes.vv_free.sum())

    def project(x):
        out = x.copy()
        p = out[nvfree:]
        out[nvfree:] = p - (mass @ p) / denom * one
        return out

    return project


def solve_stokes(problem: Problem, k: int, nu: float,
                 opts: SolverOptions) -> SolveResult:
    t0 = time.perf_counter()
    fes, sys_ = build_system(problem, k, nu, opts)
    vel_apply = velocity_preconditioner(fes, sys_, nu, opts)
    S_free = sys_.S[fes.vv_free][:, fes.vv_free].tocsr()
    rhs_u, rhs_p = condensed_rhs(fes, sys_)
    t_sup = time.perf_counter() - t0

    t1 = time.perf_counter()
    if opts.mode == "elliptic":
        x_free, report = cg(lambda v: S_free @ v, rhs_u, vel_apply,
                            rtol=opts.rtol, maxit=opts.maxit)
        p_phys = None
    else:
        B_free = sys_.B[:, fes.vv_free].tocsr()
        K = sp.bmat([[S_free, B_free.T], [B_free, None]], format="csr")
        rhs = np.concatenate([rhs_u, rhs_p])
        mp = pc.PressureMassPrecond.build(fes, nu)
        saddle = pc.SaddlePreconditioner(vel_apply, mp, B_free)
        project = pressure_projector(fes) \
            if fes.regions.mean_zero_pressure else None
        x, report = gmres(lambda v: K @ v, rhs, saddle.apply,
                          rtol=opts.rtol, maxit=opts.maxit, project=project)
        x_free = x[:S_free.shape[0]]
        p_phys = -x[S_free.shape[0]:]
        if fes.regions.mean_zero_pressure:
            p_phys = p_phys - fields.q_mean(fes, p_phys) \
                * fields.q_constant_one(fes)
    t_sol = time.perf_counter() - t1

    x_full = fes.vv_values.copy()
    x_full[fes.vv_free] = x_free
    u = x_full[:fes.n_v]
    uhat = x_full[fes.n_v:]
    sigma, w = sys_.recover_stress(x_full)
    checks = post_checks(fes, sys_, u, sigma, report)
    record = RunRecord(
        problem=problem.name, k=k, level=-1,
        n_elements=fes.mesh.num_triangles,
        n_dofs=int(fes.vv_free.sum()) + fes.dof_q.ndof,
        iterations=report.iterations,
        t_tot=time.perf_counter() - t0, t_sup=t_sup, t_sol=t_sol,
        converged=report.converged,
        max_div=checks["max_div_scaled"], nt_jump=checks["nt_jump_scaled"])
    return SolveResult(fes=fes, system=sys_, u=u, uhat=uhat, p=p_phys,
                       sigma=sigma, w=w, report=report, record=record,
                       checks=checks)


def post_checks(fes: FeSystem, sys_: CondensedSystem, u, sigma,
                report: KrylovReport) -> dict:
    """Structural postconditions: pointwise divergence, nt-continuity of the
    recovered stress, GMRES residual monotonicity."""
    max_div = 0.0
    grad_scale = 0.0
    for t in range(fes.mesh.num_triangles):
        max_div = max(max_div, float(np.abs(
            asm.div_values(fes, t, u)).max()))
        g = asm.grad_values(fes, t, u)
        wq = fes.quad_tri.weights * fes.detJ[t]
        grad_scale += float(np.einsum("pij,p->", g * g, wq))
    grad_scale = max(1.0, np.sqrt(grad_scale))

    jump_max, scale = 0.0, 1e-300
    for f in fes.mesh.interior_facets:
        t0, t1 = fes.mesh.facet_tri[f]
        vals = []
        for t in (t0, t1):
            le = int(np.nonzero(fes.edge_facet[t] == f)[0][0])
            sv = asm.stress_edge_values(fes, t, le, sigma)
            nt = np.einsum("i,pij,j->p", fes.mesh.facet_tangent[f], sv,
                           fes.mesh.facet_normal[f])
            if fes.edge_flip[t, le]:
                nt = nt[::-1]
            vals.append(nt)
        jump_max = max(jump_max, float(np.abs(vals[0] - vals[1]).max()))
        scale = max(scale, float(np.abs(vals[0]).max()))
    res = report.residuals
    monotone = all(res[i + 1] <= res[i] * (1 + 1e-12)
                   for i in range(len(res) - 1))
    return {
        "max_div_scaled": max_div / grad_scale,
        "nt_jump_scaled": jump_max / max(scale, 1.0),
        "residual_monotone": monotone,
    }


def run_solve(problem_name: str, level: int, k: int, nu: float,
              opts: SolverOptions) -> SolveResult:
    problem = make_problem(problem_name, level, nu)
    result = solve_stokes(problem, k, nu, opts)
    result.record.level = level
    return result


def run_spectrum(problem_name: str, level: int, k: int, nu: float,
                 opts: SolverOptions, steps: int = 60) -> RunRecord:
    """Lanczos condition estimate of the preconditioned velocity block.

    For the Sd target the estimate is run on the double Schur complement
    itself (the extension wrapper transfers the spectrum exactly)."""
    problem = make_problem(problem_name, level, nu)
    fes, sys_ = build_system(problem, k, nu, opts)
    if opts.target == "Sd":
        free_cpl = sys_.free_mask_cpl()
        A = sys_.Sd[free_cpl][:, free_cpl].tocsr()
        E = pc.build_embedding(fes)
        coarse = pc.build_coarse(fes, nu, penalty_C=opts.penalty_C)
        sm = pc.FacetBlockSmoother(A, pc.facet_blocks_schur(fes, sys_),
                                   opts.smoother)
        asp = pc.AspPreconditioner(A, sm, pc.embedding_cpl(fes, sys_, E),
                                   coarse, opts.composition, opts.steps)
        apply_pc = asp.apply
    else:
        A = sys_.S[fes.vv_free][:, fes.vv_free].tocsr()
        apply_pc = velocity_preconditioner(fes, sys_, nu, opts)
    lmin, lmax, cond = lanczos_spectrum(
        lambda v: A @ v, apply_pc, A.shape[0], steps=steps, seed=opts.seed)
    rec = RunRecord(problem=problem_name, k=k, level=level,
                    n_elements=fes.mesh.num_triangles,
                    n_dofs=int(fes.vv_free.sum()) + fes.dof_q.ndof,
                    iterations=0, t_tot=0.0, t_sup=0.0, t_sol=0.0,
                    converged=True)
    rec.lambda_min, rec.lambda_max, rec.cond = lmin, lmax, cond
    return rec


def velocity_errors(result: SolveResult, u_exact, p_exact=None):
    """L2 and strain-seminorm errors against manufactured closures, plus the
    pressure L2 error when available."""
    fes = result.fes
    err_l2 = err_eps = err_p = 0.0
    for t in range(fes.mesh.num_triangles):
        wq = fes.quad_tri.weights * fes.detJ[t]
        pts = fes.phys_points(t)
        uv = asm.velocity_values(fes, t, result.u)
        ue = np.array([u_exact(x) for x in pts])
        err_l2 += float(np.einsum("pi,p->", (uv - ue) ** 2, wq))
        eh = asm.strain_values(fes, t, result.u)
        err_eps_t = _strain_error(fes, t, eh, u_exact, pts, wq)
        err_eps += err_eps_t
        if p_exact is not None and result.p is not None:
            pv = fields.pressure_values(fes, t, result.p)
            pe = np.array([p_exact(x) for x in pts])
            err_p += float((pv - pe) ** 2 @ wq)
    return np.sqrt(err_l2), np.sqrt(err_eps), np.sqrt(err_p)


def _strain_error(fes, t, eps_h, u_exact, pts, wq, h=1e-6):
    """Quadrature of ||eps(u_h) - eps(u)||^2 with a finite-difference exact
    strain (manufactured closures stay the single source of truth)."""
    ee = np.empty_like(eps_h)
    for p, x in enumerate(pts):
        gx = (np.asarray(u_exact(x + [h, 0])) - np.asarray(u_exact(x - [h, 0]))) / (2 * h)
        gy = (np.asarray(u_exact(x + [0, h])) - np.asarray(u_exact(x - [0, h]))) / (2 * h)
        grad = np.column_stack([gx, gy])
        ee[p] = 0.5 * (grad + grad.T)
    diff = eps_h - ee
    return float(np.einsum("pij,p->", diff * diff, wq))

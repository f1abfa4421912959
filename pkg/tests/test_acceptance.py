"""Acceptance suite: every criterion at its stated tolerance, one PASS line
per criterion.  Solver tolerances are pinned here, not calibrated later."""

import math

import numpy as np

from mcstokes import assembly as asm
from mcstokes import fields
from mcstokes import preconditioners as pc
from mcstokes import verification as ver
from mcstokes.condensation import condense_sigma_omega, double_schur
from mcstokes.dofmap import FeSystem
from mcstokes.driver import (SolverOptions, run_solve, run_spectrum,
                             velocity_errors)
from mcstokes.krylov import cg, lanczos_spectrum
from mcstokes.mesh import build_structured, classify_boundary, refine_uniform
from mcstokes.problems import make_problem

NU = 1e-3


def report(line):
    print(line, flush=True)


def all_dirichlet(mesh):
    return classify_boundary(mesh, dirichlet=lambda x: True,
                             mean_zero_pressure=True)


# --------------------------------------------------------------- criterion 1


def test_criterion_1_exact_identities():
    """schurnormmat identity and the conforming-embedding equality to
    relative 1e-10 over 200 random fields, 8-element mesh, k in {2, 3}."""
    rng = np.random.default_rng(101)
    worst_id = worst_embed = 0.0
    for k in (2, 3):
        mesh = build_structured(2, 2)
        fes = FeSystem(mesh, all_dirichlet(mesh), k)
        sys_ = condense_sigma_omega(fes, NU)
        E = pc.build_embedding(fes)
        for _ in range(200):
            x = np.zeros(fes.n_vv)
            x[fes.vv_free] = rng.standard_normal(int(fes.vv_free.sum()))
            lhs, rhs = sys_.schur_norm_identity(x)
            worst_id = max(worst_id, abs(lhs - rhs) / max(abs(lhs), 1e-300))
            vb = np.zeros(fes.dof_vbar.ndof)
            vb[fes.dof_vbar.is_free] = rng.standard_normal(fes.dof_vbar.nfree)
            xe = E @ vb
            e_s = sys_.s_energy(xe)
            en = sum(NU * 0.5 * fes.detJ[t]
                     * float(np.sum(fields.vbar_strain(fes, t, vb) ** 2))
                     for t in range(mesh.num_triangles))
            worst_embed = max(worst_embed,
                              abs(e_s - en) / max(abs(en), 1e-300))
    assert worst_id <= 1e-10
    assert worst_embed <= 1e-10
    report(f"PASS criterion-1: schur-norm identity rel err {worst_id:.2e}, "
           f"embedding equality rel err {worst_embed:.2e}")


# --------------------------------------------------------------- criterion 2


def test_criterion_2_dense_oracles():
    """2-element mesh, k=2: condensed matrices against brute-force dense
    Schur complements; full vs condensed solution paths."""
    mesh = build_structured(1, 1)
    eps = 1e-12
    regions = classify_boundary(
        mesh,
        dirichlet=lambda x: x[0] < 1 - eps,
        tilde_neumann=lambda x: x[0] >= 1 - eps,
        dirichlet_value=lambda x: np.array([x[1] * (1 - x[1]), 0.0]))
    fes = FeSystem(mesh, regions, 2)

    def f(x):
        return np.array([1.0, -0.5])

    K, rhs, index = asm.assemble_full_system(fes, NU, body_force=f)
    Kd = K.toarray()
    nvw = index.sizes["sigma"] + index.sizes["w"]
    nv = index.sizes["u"] + index.sizes["uhat"]
    C = Kd[nvw:nvw + nv, :nvw]
    dense_S = Kd[nvw:nvw + nv, nvw:nvw + nv] \
        - C @ np.linalg.solve(Kd[:nvw, :nvw], C.T)

    sys_ = double_schur(condense_sigma_omega(fes, NU, body_force=f))
    free = fes.vv_free
    Sf = sys_.S[free][:, free].toarray()
    errS = np.abs(Sf - dense_S).max() / max(1.0, np.abs(dense_S).max())
    assert errS <= 1e-10

    S = sys_.S.toarray()
    cpl = sys_.vv_of_cpl
    iint = np.nonzero(fes.vv_interior)[0]
    dense_Sd = S[np.ix_(cpl, cpl)] - S[np.ix_(cpl, iint)] @ np.linalg.solve(
        S[np.ix_(iint, iint)], S[np.ix_(iint, cpl)])
    errSd = np.abs(sys_.Sd.toarray() - dense_Sd).max() \
        / max(1.0, np.abs(dense_Sd).max())
    assert errSd <= 1e-10

    # (c) full dense solve vs condensed solve + recovery
    sol = np.linalg.solve(Kd, rhs)
    B_free = sys_.B[:, free].toarray()
    rhs_u = (sys_.load - sys_.S @ fes.vv_values)[free]
    rhs_p = -(sys_.B @ fes.vv_values)
    nfree = int(free.sum())
    nq = fes.dof_q.ndof
    Ksad = np.zeros((nfree + nq, nfree + nq))
    Ksad[:nfree, :nfree] = Sf
    Ksad[:nfree, nfree:] = B_free.T
    Ksad[nfree:, :nfree] = B_free
    xs = np.linalg.solve(Ksad, np.concatenate([rhs_u, rhs_p]))
    x_full = fes.vv_values.copy()
    x_full[free] = xs[:nfree]
    sig, w = sys_.recover_stress(x_full)

    scale = max(1.0, np.abs(sol).max())
    err_u = np.abs(xs[:nfree] - np.concatenate(
        [sol[index.sl("u")], sol[index.sl("uhat")]])).max()
    err_p = np.abs(xs[nfree:] - sol[index.sl("p")]).max()
    err_s = np.abs(sig[fes.dof_sigma.is_free] - sol[index.sl("sigma")]).max()
    err_w = np.abs(w - sol[index.sl("w")]).max()
    worst = max(err_u, err_p, err_s, err_w) / scale
    assert worst <= 1e-9
    report(f"PASS criterion-2: S oracle {errS:.2e}, Sd oracle {errSd:.2e}, "
           f"path agreement {worst:.2e}")


# --------------------------------------------------------------- criterion 3


def test_criterion_3_structural_postconditions():
    """Every Stokes solve: pointwise divergence and nt-jump of the recovered
    stress at 1e-9 (scaled), monotone GMRES residuals, SPD condensed
    blocks."""
    configs = [
        ("channel", 0, 2, SolverOptions(target="Sd", rtol=1e-11, maxit=600)),
        ("channel", 1, 2, SolverOptions(target="Sd", rtol=1e-11, maxit=600)),
        ("cavity", 0, 3, SolverOptions(target="S", composition="additive",
                                       smoother="jacobi", rtol=1e-11,
                                       maxit=900)),
    ]
    worst_div = worst_jump = 0.0
    for name, level, k, opts in configs:
        res = run_solve(name, level, k, NU, opts)
        assert res.report.converged
        assert res.checks["residual_monotone"]
        worst_div = max(worst_div, res.checks["max_div_scaled"])
        worst_jump = max(worst_jump, res.checks["nt_jump_scaled"])
    assert worst_div <= 1e-9
    assert worst_jump <= 1e-9

    # SPD certificates on the channel system
    prob = make_problem("channel", 0, NU)
    fes = FeSystem(prob.mesh, prob.regions, 2)
    sys_ = double_schur(condense_sigma_omega(fes, NU))
    free = fes.vv_free
    Sf = sys_.S[free][:, free].tocsr()
    fc = sys_.free_mask_cpl()
    Sdf = sys_.Sd[fc][:, fc].tocsr()
    rng = np.random.default_rng(3)
    for A in (Sf, Sdf):
        cg(lambda v: A @ v, rng.standard_normal(A.shape[0]),
           rtol=1e-10, maxit=3 * A.shape[0])     # raises on curvature
        lmin, lmax, _ = lanczos_spectrum(lambda v: A @ v, lambda v: v,
                                         A.shape[0], steps=50)
        assert lmin > 1e-12 * lmax
    report(f"PASS criterion-3: max scaled div {worst_div:.2e}, "
           f"max scaled nt-jump {worst_jump:.2e}, SPD certified")


# --------------------------------------------------------------- criterion 4


def test_criterion_4_spectral_certificate():
    """h-robustness of cond(A_m^-1 Sd) at k=2 over 3 channel levels within
    25%; growth in k bounded by c (log k)^3 calibrated at k in {2, 3}."""
    opts = SolverOptions(target="Sd", composition="multiplicative",
                         smoother="gauss_seidel")
    conds_h = []
    for level in (0, 1, 2):
        rec = run_spectrum("channel", level, 2, NU, opts, steps=60)
        conds_h.append(rec.cond)
    spread = max(conds_h) / min(conds_h)
    assert spread <= 1.25

    conds_k = {}
    for k in (2, 3, 4, 5, 6):
        rec = run_spectrum("channel", 0, k, NU, opts, steps=60)
        conds_k[k] = rec.cond
    c = max(conds_k[k] / math.log(k) ** 3 for k in (2, 3))
    for k in (4, 5, 6):
        assert conds_k[k] <= c * math.log(k) ** 3
    report("PASS criterion-4: cond(h) = %s (spread %.3f), cond(k) = %s"
           % (["%.3f" % v for v in conds_h], spread,
              {k: round(v, 3) for k, v in conds_k.items()}))


# --------------------------------------------------------------- criterion 5


def test_criterion_5_multiplicative_never_worse():
    """GMRES iteration counts: multiplicative ASP at most the additive ones
    on every sweep configuration."""
    pairs = []
    for name in ("channel", "cavity"):
        for level in (0, 1):
            for k in (2, 3):
                ita = run_solve(name, level, k, NU, SolverOptions(
                    target="Sd", composition="additive",
                    smoother="jacobi")).report.iterations
                itm = run_solve(name, level, k, NU, SolverOptions(
                    target="Sd", composition="multiplicative",
                    smoother="gauss_seidel")).report.iterations
                pairs.append((name, level, k, ita, itm))
                assert itm <= ita, (name, level, k, ita, itm)
    summary = ", ".join(f"{n}/L{l}/k{k}: {m}<={a}"
                        for n, l, k, a, m in pairs)
    report(f"PASS criterion-5: {summary}")


# --------------------------------------------------------------- criterion 6


def test_criterion_6_gamma_experiment():
    rep1 = ver.estimate_gamma(k_range=(2, 3, 4, 5, 6), nu=1.0)
    rep2 = ver.estimate_gamma(k_range=(2, 3, 4, 5, 6), nu=1e-3)
    g1 = rep1.column("gamma")
    g2 = rep2.column("gamma")
    assert np.all(np.isfinite(g1))
    assert np.all(g1 >= 1.0 - 1e-8)
    assert np.all(g1 <= 10.0)
    assert np.abs(g1 - g2).max() <= 1e-8 * np.abs(g1).max()
    report("PASS criterion-6: gamma(k) = %s, nu-independent"
           % ["%.3f" % g for g in g1])


# --------------------------------------------------------------- criterion 7


def test_criterion_7_infsup_level_stable():
    vals = []
    mesh = build_structured(4, 4)
    for _ in range(2):
        fes = FeSystem(mesh, all_dirichlet(mesh), 2)
        sys_ = condense_sigma_omega(fes, NU)
        res = ver.estimate_infsup(fes, sys_)
        assert res["n_zero"] == res["expected_zero"] == 1
        vals.append((res["gamma_L2"], res["lambda_max"]))
        mesh = refine_uniform(mesh)
    (g0, m0), (g1, m1) = vals
    assert abs(g1 - g0) / g0 <= 0.2
    assert abs(m1 - m0) / m0 <= 0.2
    report(f"PASS criterion-7: gamma_L^2 {g0:.4f}->{g1:.4f}, "
           f"lambda_max {m0:.4f}->{m1:.4f}")


# --------------------------------------------------------------- criterion 8


def test_criterion_8_trace_inverse_estimate():
    rep = ver.measure_trace_ratios((2, 3, 4, 5, 6))
    ratios = dict(zip(rep.column("k"), rep.column("ratio")))
    c = ratios[2] / math.log(2.0) ** 3
    for k in (3, 4, 5, 6):
        assert ratios[k] <= c * math.log(k) ** 3
    report("PASS criterion-8: trace ratios %s, c = %.3f"
           % ({int(k): round(v, 2) for k, v in ratios.items()}, c))


# --------------------------------------------------------------- criterion 9


def test_criterion_9_interpolation_bound():
    ratios = []
    mesh = build_structured(2, 2)
    for _ in range(2):
        regions = classify_boundary(mesh, neumann=lambda x: True,
                                    allow_no_dirichlet=True)
        fes = FeSystem(mesh, regions, 2)
        rep = ver.check_interp_bound(fes, n_samples=500, seed=42)
        ratios.append(rep.rows[0]["max_ratio"])
        mesh = refine_uniform(mesh)
    assert all(np.isfinite(r) and r > 0 for r in ratios)
    assert abs(ratios[1] - ratios[0]) / ratios[0] <= 0.25
    report("PASS criterion-9: interp ratios %.3f -> %.3f"
           % (ratios[0], ratios[1]))


# -------------------------------------------------------------- criterion 10


def test_criterion_10_method_exactness_and_rates():
    opts = SolverOptions(target="Sd", rtol=1e-12, maxit=600)
    res = run_solve("manufactured_poly", 0, 2, NU, opts)
    prob = make_problem("manufactured_poly", 0, NU)
    el2, eeps, ep = velocity_errors(res, prob.u_exact, prob.p_exact)
    assert max(el2, ep) <= 1e-8

    errs = []
    for level in (0, 1, 2):
        res = run_solve("manufactured_smooth", level, 2, NU,
                        SolverOptions(target="Sd", rtol=1e-10, maxit=600))
        prob = make_problem("manufactured_smooth", level, NU)
        _, eeps, _ = velocity_errors(res, prob.u_exact)
        errs.append(eeps)
    # least-squares slope of log2(err) against level
    lv = np.arange(3, dtype=float)
    slope = -np.polyfit(lv, np.log2(errs), 1)[0]
    assert slope >= 2.0 - 0.3
    report(f"PASS criterion-10: poly exactness {max(el2, ep):.2e}, "
           f"strain rate {slope:.2f}")

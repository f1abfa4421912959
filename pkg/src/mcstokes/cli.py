"""Configuration-driven command line driver.

Subcommands: solve, study, verify, export, spectrum.  Configuration is TOML;
every solver-relevant knob (viscosity, tolerance, smoother, penalty constant)
is a config field.  Results are written as RFC-4180 CSV, MatrixMarket files
and JSON sidecars.
"""

import argparse
import csv
import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:                      # python < 3.11
    import tomli as tomllib

import numpy as np

from . import verification as ver
from .assembly import export_matrix_market
from .condensation import condense_sigma_omega, double_schur
from .dofmap import FeSystem
from .driver import RunRecord, SolverOptions, run_solve, run_spectrum
from .problems import make_problem


DEFAULT_CONFIG = {
    "problem": {"name": "channel", "level": 0, "k": 2, "nu": 1e-3},
    "solver": {"mode": "stokes", "rtol": 1e-6, "maxit": 500, "seed": 0},
    "preconditioner": {"target": "Sd", "composition": "multiplicative",
                       "smoother": "gauss_seidel", "steps": 1,
                       "penalty_C": 4.0},
    "study": {"ks": [2], "levels": [0, 1]},
    "output": {"dir": "out"},
}


def load_config(path):
    cfg = {k: dict(v) for k, v in DEFAULT_CONFIG.items()}
    if path:
        with open(path, "rb") as fh:
            user = tomllib.load(fh)
        for section, values in user.items():
            if section not in cfg:
                raise SystemExit(f"unknown config section [{section}]")
            for key, val in values.items():
                if key not in cfg[section]:
                    raise SystemExit(f"unknown config key {section}.{key}")
                cfg[section][key] = val
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    p, s = cfg["problem"], cfg["solver"]
    if p["k"] < 2:
        raise SystemExit("k must be >= 2: the lowest-order variant is not "
                         "supported by this discretization")
    if not (0.0 < s["rtol"] < 1.0):
        raise SystemExit("rtol must lie in (0, 1)")
    pc = cfg["preconditioner"]
    if pc["target"] not in ("S", "Sd"):
        raise SystemExit("preconditioner.target must be 'S' or 'Sd'")
    if pc["composition"] not in ("additive", "multiplicative"):
        raise SystemExit("preconditioner.composition must be "
                         "'additive' or 'multiplicative'")


def solver_options(cfg):
    s, p = cfg["solver"], cfg["preconditioner"]
    return SolverOptions(mode=s["mode"], target=p["target"],
                         composition=p["composition"],
                         smoother=p["smoother"], steps=p["steps"],
                         penalty_C=p["penalty_C"], rtol=s["rtol"],
                         maxit=s["maxit"], seed=s["seed"])


def write_records_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RunRecord.CSV_FIELDS)
        for r in records:
            w.writerow(r.csv_row())


def _outdir(cfg, args):
    d = args.out or cfg["output"]["dir"]
    os.makedirs(d, exist_ok=True)
    return d


def cmd_solve(cfg, args):
    p = cfg["problem"]
    opts = solver_options(cfg)
    result = run_solve(p["name"], p["level"], p["k"], p["nu"], opts)
    rec = result.record
    out = _outdir(cfg, args)
    write_records_csv(os.path.join(out, "solve.csv"), [rec])
    np.savez(os.path.join(out, "solution.npz"), u=result.u, uhat=result.uhat,
             p=result.p if result.p is not None else np.zeros(0),
             sigma=result.sigma, w=result.w)
    with open(os.path.join(out, "residuals.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "relative_residual"])
        for i, r in enumerate(result.report.residuals):
            w.writerow([i, r])
    print(f"#IT={rec.iterations} converged={rec.converged} "
          f"max_div={rec.max_div:.3e} nt_jump={rec.nt_jump:.3e}")
    return 0 if rec.converged else 2


def cmd_study(cfg, args):
    p = cfg["problem"]
    opts = solver_options(cfg)
    records = []
    status = 0
    for k in cfg["study"]["ks"]:
        for level in cfg["study"]["levels"]:
            try:
                r = run_solve(p["name"], level, k, p["nu"], opts)
                records.append(r.record)
                if not r.record.converged:
                    status = 2
            except Exception as exc:           # record partial failures
                print(f"k={k} level={level} failed: {exc}", file=sys.stderr)
                status = 2
    out = _outdir(cfg, args)
    write_records_csv(os.path.join(out, "study.csv"), records)
    for r in records:
        print(f"k={r.k} level={r.level} |T|={r.n_elements} #D={r.n_dofs} "
              f"#IT={r.iterations}")
    return status


def cmd_spectrum(cfg, args):
    p = cfg["problem"]
    opts = solver_options(cfg)
    rec = run_spectrum(p["name"], p["level"], p["k"], p["nu"], opts,
                       steps=args.steps)
    out = _outdir(cfg, args)
    write_records_csv(os.path.join(out, "spectrum.csv"), [rec])
    print(f"lambda_min={rec.lambda_min:.6g} lambda_max={rec.lambda_max:.6g} "
          f"cond={rec.cond:.6g}")
    return 0


def cmd_export(cfg, args):
    import scipy.sparse as sp

    p = cfg["problem"]
    opts = solver_options(cfg)
    problem = make_problem(p["name"], p["level"], p["nu"])
    fes = FeSystem(problem.mesh, problem.regions, p["k"])
    sys_ = condense_sigma_omega(fes, p["nu"], body_force=problem.body_force)
    double_schur(sys_)
    out = _outdir(cfg, args)

    free = fes.vv_free
    S_free = sys_.S[free][:, free].tocsr()
    B_free = sys_.B[:, free].tocsr()
    K = sp.bmat([[S_free, B_free.T], [B_free, None]], format="csr")
    free_cpl = sys_.free_mask_cpl()
    Sd_free = sys_.Sd[free_cpl][:, free_cpl].tocsr()
    from .preconditioners import PressureMassPrecond
    Mp = PressureMassPrecond.build(fes, p["nu"]).mass_matrix()

    export_matrix_market(K, os.path.join(out, "K.mtx"))
    export_matrix_market(S_free, os.path.join(out, "S.mtx"))
    export_matrix_market(Sd_free, os.path.join(out, "Sd.mtx"))
    export_matrix_market(B_free, os.path.join(out, "B.mtx"))
    export_matrix_market(Mp, os.path.join(out, "Mp.mtx"))
    problem.mesh.export_text(os.path.join(out, "mesh.txt"))

    n_v = int(fes.dof_v.is_free.sum())
    n_h = int(fes.dof_vhat.is_free.sum())
    sidecar = {
        "k": p["k"], "nu": p["nu"], "problem": p["name"], "level": p["level"],
        "blocks": {"v": n_v, "vhat": n_h, "p": int(fes.dof_q.ndof)},
        "block_offsets": {"v": 0, "vhat": n_v, "p": n_v + n_h},
        "total": n_v + n_h + int(fes.dof_q.ndof),
        "coupling_dofs": int(free_cpl.sum()),
        "pressure_nullspace": ("constant mode (pure Dirichlet problem)"
                               if fes.regions.mean_zero_pressure else "none"),
    }
    with open(os.path.join(out, "system.json"), "w") as fh:
        json.dump(sidecar, fh, indent=2)
    print(f"wrote K/S/Sd/B/Mp MatrixMarket files to {out}")
    return 0


def cmd_verify(cfg, args):
    from .mesh import build_structured, classify_boundary

    p = cfg["problem"]
    out = _outdir(cfg, args)
    suite = args.suite
    if suite not in ("identities", "constants"):
        raise SystemExit(f"unknown verification suite {suite!r}")
    reports = []
    if suite == "identities":
        for k in (2, 3):
            mesh = build_structured(2, 2)
            reg = classify_boundary(mesh, dirichlet=lambda x: True,
                                    mean_zero_pressure=True)
            fes = FeSystem(mesh, reg, k)
            sys_ = condense_sigma_omega(fes, p["nu"])
            reports.append(ver.check_norm_equivalences(fes, sys_,
                                                       n_samples=100))
    else:
        reports.append(ver.estimate_gamma())
        reports.append(ver.measure_trace_ratios())
        rep = ver.ConstantReport("infsup", params={"k": p["k"]})
        for level in (0, 1):
            problem = make_problem("cavity", level, p["nu"])
            fes = FeSystem(problem.mesh, problem.regions, p["k"])
            sys_ = condense_sigma_omega(fes, p["nu"])
            res = ver.estimate_infsup(fes, sys_)
            rep.add(level=level, gamma_L2=res["gamma_L2"],
                    lambda_max=res["lambda_max"], n_zero=res["n_zero"])
        reports.append(rep)
        mesh = build_structured(2, 2)
        reg = classify_boundary(mesh, neumann=lambda x: True,
                                allow_no_dirichlet=True)
        fes = FeSystem(mesh, reg, p["k"])
        reports.append(ver.check_interp_bound(fes, n_samples=200))
    for rep in reports:
        print(rep.text())
        rep.write_csv(os.path.join(out, f"{rep.name}.csv"))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="mcstokes",
        description="Mass-conserving mixed-stress Stokes solver (2D)")
    parser.add_argument("--config", help="TOML configuration file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="override solver seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="thread count (1 = reproducibility mode)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve")
    sub.add_parser("study")
    sp = sub.add_parser("spectrum")
    sp.add_argument("--steps", type=int, default=60)
    sub.add_parser("export")
    vp = sub.add_parser("verify")
    vp.add_argument("--suite", default="identities",
                    choices=["identities", "constants"])
    args = parser.parse_args(argv)

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["solver"]["seed"] = args.seed
    commands = {"solve": cmd_solve, "study": cmd_study,
                "spectrum": cmd_spectrum, "export": cmd_export,
                "verify": cmd_verify}
    return commands[args.command](cfg, args)


if __name__ == "__main__":
    sys.exit(main())

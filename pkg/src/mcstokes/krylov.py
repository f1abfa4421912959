"""Krylov solvers: right-preconditioned full GMRES, PCG and a generalized
Lanczos estimator for extreme eigenvalues of preconditioned SPD pencils."""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np


class NegativeCurvatureError(Exception):
    """CG met p' A p <= 0: the operator (or preconditioner) is not SPD."""


@dataclass
class KrylovReport:
    iterations: int = 0
    residuals: List[float] = field(default_factory=list)
    converged: bool = False
    lambda_min: Optional[float] = None
    lambda_max: Optional[float] = None
    cond: Optional[float] = None
    lanczos_steps: Optional[int] = None


def gmres(apply_A, b, apply_M=None, rtol=1e-6, maxit=500, project=None,
          x0=None):
    """Full (non-restarted) GMRES, right preconditioned.

    Solves A x = b using the preconditioned operator A M^-1; the reported
    residual history is the true residual norm.  `project` (optional) is
    applied to b and to every new Krylov direction; it removes a known null
    space such as the constant pressure mode.
    """
    if apply_M is None:
        apply_M = lambda v: v
    b = np.asarray(b, dtype=float)
    if project is not None:
        b = project(b)
    n = len(b)
    x0 = np.zeros(n) if x0 is None else x0
    r0 = b - apply_A(x0) if np.any(x0) else b.copy()
    beta = np.linalg.norm(r0)
    bnorm = np.linalg.norm(b)
    report = KrylovReport(residuals=[1.0 if bnorm == 0 else beta / bnorm])
    if bnorm == 0.0:
        report.converged = True
        return x0, report
    if beta / bnorm <= rtol:
        report.converged = True
        return x0, report

    V = [r0 / beta]
    H = np.zeros((maxit + 1, maxit))
    cs = np.zeros(maxit)
    sn = np.zeros(maxit)
    g = np.zeros(maxit + 1)
    g[0] = beta

    j = 0
    while j < maxit:
        # own the work vector: operators may return their argument
        w = np.array(apply_A(apply_M(V[j])), dtype=float)
        if project is not None:
            w = project(w)
        for i in range(j + 1):
            H[i, j] = w @ V[i]
            w -= H[i, j] * V[i]
        H[j + 1, j] = np.linalg.norm(w)
        if not np.isfinite(H[j + 1, j]):
            raise FloatingPointError("GMRES residual became non-finite")
        # apply accumulated Givens rotations
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        hsub = H[j + 1, j]
        denom = np.hypot(H[j, j], hsub)
        cs[j] = H[j, j] / denom
        sn[j] = hsub / denom
        H[j, j] = denom
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        res = abs(g[j + 1]) / bnorm
        report.residuals.append(res)
        happy = hsub <= 1e-14 * denom
        if not happy:
            V.append(w / hsub)
        j += 1
        if res <= rtol or happy:
            report.converged = True
            break

    m = j
    y = np.linalg.solve(H[:m, :m] if m else np.eye(1), g[:m] if m else [0])
    xk = x0 + apply_M(np.array(V[:m]).T @ y) if m else x0
    if project is not None:
        xk = project(xk)
    report.iterations = m
    return xk, report


def cg(apply_A, b, apply_M=None, rtol=1e-8, maxit=1000):
    """Preconditioned conjugate gradients; raises on negative curvature."""
    if apply_M is None:
        apply_M = lambda v: v
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = np.linalg.norm(b)
    report = KrylovReport(residuals=[1.0])
    if bnorm == 0:
        report.converged = True
        return x, report
    z = apply_M(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, maxit + 1):
        Ap = apply_A(p)
        pAp = p @ Ap
        if pAp <= 0:
            raise NegativeCurvatureError(
                f"p'Ap = {pAp:.3e} at iteration {it}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        report.residuals.append(res)
        report.iterations = it
        if res <= rtol:
            report.converged = True
            break
        z = apply_M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, report


def lanczos_spectrum(apply_A, apply_Binv, n, steps=50, seed=0):
    """Extreme generalized eigenvalues of B^-1 A for SPD A and B.

    Runs the Lanczos recursion for the operator B^-1 A, which is
    self-adjoint in the A-inner product, with full reorthogonalization.
    Returns (lambda_min, lambda_max, cond).
    """
    rng = np.random.default_rng(seed)
    steps = min(steps, n)
    for attempt in range(4):
        out = _lanczos_once(apply_A, apply_Binv, n, steps, rng)
        if out is not None:
            lam_min, lam_max = out
            return lam_min, lam_max, lam_max / lam_min
    raise RuntimeError("Lanczos failed after repeated restarts")


def _lanczos_once(apply_A, apply_Binv, n, steps, rng):
    v = rng.standard_normal(n)
    Av = apply_A(v)
    nrm2 = v @ Av
    if nrm2 <= 0:
        raise NegativeCurvatureError("start vector has non-positive A-norm")
    v /= np.sqrt(nrm2)
    Av /= np.sqrt(nrm2)
    Q = [v]
    AQ = [Av]
    alphas, betas = [], []
    beta_prev = 0.0
    q_prev = None
    for j in range(steps):
        z = apply_Binv(AQ[j])
        alpha = z @ AQ[j]
        alphas.append(alpha)
        z = z - alpha * Q[j]
        if q_prev is not None:
            z = z - beta_prev * q_prev
        # full reorthogonalization in the A-inner product
        for _ in range(2):
            for i in range(len(Q)):
                z -= (z @ AQ[i]) * Q[i]
        Az = apply_A(z)
        b2 = z @ Az
        if b2 <= max(abs(alpha), 1.0) * 1e-28 or j + 1 >= n:
            break
        beta = np.sqrt(b2)
        betas.append(beta)
        q_prev = Q[j]
        beta_prev = beta
        Q.append(z / beta)
        AQ.append(Az / beta)
    m = len(alphas)
    if m == 0:
        return None
    T = np.diag(alphas)
    if m > 1:
        bd = np.array(betas[:m - 1])
        T += np.diag(bd, 1) + np.diag(bd, -1)
    ev = np.linalg.eigvalsh(T)
    return float(ev[0]), float(ev[-1])

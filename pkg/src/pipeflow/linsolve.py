"""Iterative solvers: Jacobi-preconditioned CG, flexible GMRES, and a
block-triangular preconditioned solver for velocity/pressure systems."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


@dataclass
class SolveReport:
    iterations: int
    residual: float
    wall_time: float
    converged: bool
    history: list[float] = field(default_factory=list, repr=False)


class SolverError(RuntimeError):
    def __init__(self, message, report: SolveReport | None = None):
        super().__init__(message)
        self.report = report


class ConvergenceError(SolverError):
    pass


class IndefiniteMatrixError(SolverError):
    pass


class PressureNullspaceWarning(UserWarning):
    pass


def solve_spd(A, b, tol=1e-10, max_iter=1000, x0=None, callback=None):
    """Conjugate gradients with a Jacobi preconditioner.

    Stops when ``||b - A x|| <= tol * ||b||``.  Raises
    :class:`IndefiniteMatrixError` on nonpositive curvature and
    :class:`ConvergenceError` when ``max_iter`` is exhausted.  ``callback``
    receives a copy of each iterate.
    """
    start = time.perf_counter()
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise IndefiniteMatrixError("nonpositive diagonal entry in SPD solve")
    dinv = 1.0 / diag
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    target = tol * bnorm
    history = [float(np.linalg.norm(r))]
    if bnorm == 0.0:
        return np.zeros_like(b), SolveReport(0, 0.0, time.perf_counter() - start, True, history)
    z = dinv * r
    p = z.copy()
    rz = r @ z
    it = 0
    while history[-1] > target:
        if it >= max_iter:
            rep = SolveReport(it, history[-1], time.perf_counter() - start, False, history)
            raise ConvergenceError(f"CG did not converge in {max_iter} iterations", rep)
        Ap = A @ p
        curv = p @ Ap
        if curv <= 0:
            rep = SolveReport(it, history[-1], time.perf_counter() - start, False, history)
            raise IndefiniteMatrixError("negative curvature encountered in CG", rep)
        a = rz / curv
        x += a * p
        r -= a * Ap
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        history.append(float(np.linalg.norm(r)))
        if callback is not None:
            callback(x.copy())
    return x, SolveReport(it, history[-1], time.perf_counter() - start, True, history)


def fgmres(matvec: Callable, b, precond: Callable | None = None, tol=1e-10,
           restart=60, max_iter=600, x0=None):
    """Right-preconditioned flexible GMRES(restart), modified Gram-Schmidt.

    Converged when the true residual satisfies ``||b - A x|| <= tol * ||b||``.
    """
    start = time.perf_counter()
    b = np.asarray(b, dtype=float)
    n = len(b)
    precond = precond or (lambda v: v)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    history = []
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, time.perf_counter() - start, True, [0.0])
    target = tol * bnorm
    total = 0
    r = b - matvec(x)
    beta = np.linalg.norm(r)
    history.append(float(beta))
    while beta > target and total < max_iter:
        m = min(restart, max_iter - total)
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        for k in range(m):
            Z[k] = precond(V[k])
            w = matvec(Z[k])
            for i in range(k + 1):
                H[i, k] = w @ V[i]
                w = w - H[i, k] * V[i]
            H[k + 1, k] = np.linalg.norm(w)
            if H[k + 1, k] > 1e-300:
                V[k + 1] = w / H[k + 1, k]
            for i in range(k):
                tmp = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = tmp
            denom = np.hypot(H[k, k], H[k + 1, k])
            cs[k], sn[k] = (1.0, 0.0) if denom == 0 else (H[k, k] / denom, H[k + 1, k] / denom)
            H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            history.append(float(abs(g[k + 1])))
            if abs(g[k + 1]) <= 0.5 * target:
                k += 1
                break
        else:
            k = m
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if k else np.zeros(0)
        x = x + y @ Z[:k]
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        history.append(float(beta))
    rep = SolveReport(total, float(beta), time.perf_counter() - start, bool(beta <= target), history)
    if not rep.converged:
        raise ConvergenceError(f"FGMRES did not reach {tol:g} in {max_iter} iterations", rep)
    return x, rep


class SaddlePreconditioner:
    """Upper block-triangular preconditioner for ``[[A, Bt], [B, 0]]``.

    The velocity block is factorised once.  The Schur complement
    ``-B A^{-1} Bt`` is approximated by ``-(nu Mp^{-1} + c Lp^{-1})^{-1}`` where
    ``Mp`` is the pressure mass and ``Lp = B diag(Mu)^{-1} Bt`` a discrete
    pressure Laplacian (the ``Lp`` term is omitted when ``c == 0``).
    """

    def __init__(self, A, Bt, B, mass_p=None, nu=1.0, inv_dt=0.0, mass_u_diag=None):
        self.nu_ = A.shape[0]
        self.A_lu = spla.splu(sp.csc_matrix(A))
        self.Bt = Bt
        self.B = B
        npr = B.shape[0]
        if mass_p is None:
            mass_p = sp.identity(npr, format="csr")
        self.nu = nu
        self.inv_dt = inv_dt
        self.Mp_lu = spla.splu(sp.csc_matrix(mass_p))
        self.Lp_lu = None
        if inv_dt > 0:
            du = np.ones(self.nu_) if mass_u_diag is None else mass_u_diag
            Lp = (B @ sp.diags(1.0 / du) @ Bt).tocsc()
            Lp = Lp + 1e-12 * abs(Lp).max() * sp.identity(npr, format="csc")
            self.Lp_lu = spla.splu(Lp)

    def schur_inverse(self, rp):
        out = self.nu * self.Mp_lu.solve(rp)
        if self.Lp_lu is not None:
            out += self.inv_dt * self.Lp_lu.solve(rp)
        return out

    def __call__(self, r):
        ru, rp = r[: self.nu_], r[self.nu_ :]
        yp = -self.schur_inverse(rp)
        yu = self.A_lu.solve(ru - self.Bt @ yp)
        return np.concatenate([yu, yp])


def solve_saddle(A, Bt, B, f, g, tol=1e-10, max_iter=500, precond=None, method="fgmres", **precond_args):
    """Solve ``[[A, Bt], [B, 0]] [u; p] = [f; g]``.

    If constants lie in the kernel of ``Bt`` (no open boundary fixes the
    pressure level) a :class:`PressureNullspaceWarning` is issued and the
    returned pressure has zero mean.
    """
    start = time.perf_counter()
    A = sp.csr_matrix(A)
    Bt = sp.csr_matrix(Bt)
    B = sp.csr_matrix(B)
    nu_, np_ = A.shape[0], B.shape[0]
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    scale = abs(Bt).max() if Bt.nnz else 1.0
    singular = np.linalg.norm(Bt @ np.ones(np_)) <= 1e-10 * scale * np.sqrt(np_)
    if singular:
        warnings.warn(
            "pressure is only defined up to a constant (no open boundary); fixing zero mean",
            PressureNullspaceWarning,
            stacklevel=2,
        )
    K = sp.bmat([[A, Bt], [B, None]], format="csr")
    rhs = np.concatenate([f, g])
    if method == "direct":
        if singular:
            K = sp.bmat([[A, Bt, None], [B, None, np.ones((np_, 1))], [None, np.ones((1, np_)), None]], format="csc")
            rhs = np.concatenate([rhs, [0.0]])
        x = spla.spsolve(sp.csc_matrix(K), rhs)[: nu_ + np_]
        res = np.linalg.norm(K[: nu_ + np_, : nu_ + np_] @ x - rhs[: nu_ + np_]) if not singular else 0.0
        rep = SolveReport(1, float(res), time.perf_counter() - start, True)
    else:
        if precond is None:
            if singular:
                precond_args.setdefault("inv_dt", 0.0)
            precond = SaddlePreconditioner(A, Bt, B, **precond_args)
        if singular:
            ones = np.ones(np_) / np.sqrt(np_)

            def project(v):
                v = v.copy()
                v[nu_:] -= (v[nu_:] @ ones) * ones
                return v

            x, rep = fgmres(lambda v: K @ v, rhs, lambda v: project(precond(v)), tol, max_iter=max_iter)
        else:
            x, rep = fgmres(lambda v: K @ v, rhs, precond, tol, max_iter=max_iter)
    u, p = x[:nu_], x[nu_:]
    if singular:
        p = p - p.mean()
    return u, p, rep

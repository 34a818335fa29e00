"""Saddle-point KKT operator, constant preconditioner and preconditioned CG.

The system solved for ``x = (dq, l)`` is::

    [ M/h^2 + K (DJ)^T ] [dq]   [r_q]
    [ DJ          -Cmp ] [ l] = [r_l]

where ``K`` is an optional diagonal (contact) stiffness, ``D`` carries element volumes, ``DJ`` is restricted to free DOFs and
``Cmp`` is block diagonal with 9x9 blocks ``dv (W H^-1 W^T + eps/mu I)``.

The preconditioner is the same matrix with every compliance block replaced by
``dv (1 + eps)/mu I``. Because it agrees with the operator on the first block
row, starting CG from ``x0 = P^-1 b`` keeps the first block of every residual
at zero and the recurrences reduce to CG on the two SPD Schur complements in
``l``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Unrecoverable failure inside a linear solve or factorization."""


@dataclass
class SaddleSystem:
    mass: np.ndarray  # lumped mass of free DOFs, (n_free,)
    DJ: sp.csr_matrix  # volume-weighted strain map restricted to free DOFs
    compliance: np.ndarray  # (T, 9, 9) blocks, SPD
    h: float
    weights_l: np.ndarray | None = None  # per-row residual weights for the l block
    stiffness: np.ndarray | None = None  # extra diagonal on the q block (implicit contact)

    def __post_init__(self):
        self._DJt = self.DJ.T.tocsr()
        self.diag_q = self.mass / self.h**2
        if self.stiffness is not None:
            self.diag_q = self.diag_q + self.stiffness

    @property
    def n_q(self):
        return self.mass.size

    @property
    def shape(self):
        n = self.n_q + self.DJ.shape[0]
        return (n, n)

    def split(self, x):
        return x[: self.n_q], x[self.n_q :]

    def matvec(self, x):
        xq, xl = self.split(x)
        out_q = self.diag_q * xq + self._DJt @ xl
        Cl = np.einsum("tij,tj->ti", self.compliance, xl.reshape(-1, 9)).ravel()
        out_l = self.DJ @ xq - Cl
        return np.concatenate([out_q, out_l])

    def norm(self, r):
        """Scale-balanced residual norm (``h^2/m`` on force rows, ``weights_l`` on strain rows)."""
        rq, rl = self.split(r)
        total = np.sum(self.h**2 / self.mass * rq**2)
        wl = self.weights_l if self.weights_l is not None else 1.0
        total += np.sum(wl * rl**2)
        return float(np.sqrt(total))

    def to_dense(self):
        n = self.shape[0]
        return np.column_stack([self.matvec(e) for e in np.eye(n)])

    def to_sparse(self):
        T = self.compliance.shape[0]
        Cb = sp.block_diag(list(self.compliance), format="csr") if T else sp.csr_matrix((0, 0))
        return sp.bmat([[sp.diags(self.diag_q), self._DJt], [self.DJ, -Cb]], format="csc")


class ConstantPreconditioner:
    """Factorization of the saddle matrix with compliance ``dv (1 + eps)/mu I``.

    The l block is eliminated, leaving the SPD matrix
    ``M/h^2 + mu/(1+eps) J^T D J`` which is factored once.
    """

    def __init__(self, mass, DJ, volumes9, mu, h, tikhonov=1e-6):
        if mu <= 0:
            raise ValueError("mu must be positive")
        self.mass = np.asarray(mass, dtype=float)
        self.DJ = DJ.tocsr()
        self._DJt = self.DJ.T.tocsr()
        self.h = float(h)
        self.cdiag = np.asarray(volumes9, dtype=float) * (1.0 + tikhonov) / mu
        K = sp.diags(self.mass / self.h**2) + self._DJt @ sp.diags(1.0 / self.cdiag) @ self.DJ
        try:
            self._lu = spla.splu(sp.csc_matrix(K), permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SolverError(f"preconditioner factorization failed: {exc}") from exc
        self.n_q = self.mass.size

    def apply(self, r):
        rq, rl = r[: self.n_q], r[self.n_q :]
        zq = self._lu.solve(rq + self._DJt @ (rl / self.cdiag))
        zl = (self.DJ @ zq - rl) / self.cdiag
        return np.concatenate([zq, zl])

    __call__ = apply


def factor_preconditioner(mass, DJ, volumes9, mu, h, tikhonov=1e-6):
    return ConstantPreconditioner(mass, DJ, volumes9, mu, h, tikhonov)


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float  # relative, in the system's balanced norm
    converged: bool


def default_maxiter(n):
    return int(min(2000, max(1, 10 * np.sqrt(n))))


def pcg_saddle(system, rhs, precond, tol=1e-7, maxiter=None):
    """Preconditioned CG on the saddle system with the constant preconditioner.

    Started from ``x0 = P^-1 b`` the indefinite PCG iterates never leave the
    affine set where the force rows of the residual vanish, which makes them
    identical to CG on ``S_K l = DJ h^2 M^-1 r_q - r_l`` preconditioned by
    ``S_P`` (the Schur complements of the operator and of ``P``; both SPD).
    That equivalent form is what runs here: ``dq`` is recovered from the first
    block row each time, so round-off cannot reintroduce a force residual.

    A diagonal ``stiffness`` on the q block only changes the operator; the
    preconditioner stays the constant one.

    Stops when the balanced residual norm is ``<= tol * norm(b)`` or after
    ``maxiter`` iterations.
    """
    rhs = np.asarray(rhs, dtype=float)
    n_q = system.n_q
    maxiter = default_maxiter(rhs.size) if maxiter is None else maxiter
    bnorm = system.norm(rhs)
    if bnorm == 0.0:
        return CGResult(np.zeros(rhs.size), 0, 0.0, True)

    rq, rl = rhs[:n_q], rhs[n_q:]
    h2m = 1.0 / system.diag_q
    DJ, DJt = system.DJ, system._DJt
    blocks = system.compliance
    wl = system.weights_l if system.weights_l is not None else np.ones(rl.size)
    zero_q = np.zeros(n_q)

    def schur(v):
        return np.einsum("tij,tj->ti", blocks, v.reshape(-1, 9)).ravel() + DJ @ (h2m * (DJt @ v))

    def prec(v):
        return -precond(np.concatenate([zero_q, v]))[n_q:]

    b = DJ @ (h2m * rq) - rl
    l = -precond(rhs)[n_q:]
    r = b - schur(l)

    def rel_residual(res):
        return float(np.sqrt(np.sum(wl * res * res))) / bnorm

    rel = rel_residual(r)
    it = 0
    if rel > tol:
        z = prec(r)
        p = z.copy()
        rz = r @ z
        while it < maxiter:
            Ap = schur(p)
            pAp = p @ Ap
            if not (np.isfinite(pAp) and np.isfinite(rz)):
                raise SolverError(f"non-finite value in CG at iteration {it}")
            if pAp <= 0.0:
                logger.debug("CG lost positive curvature at iteration %d", it)
                break
            alpha = rz / pAp
            l = l + alpha * p
            r = r - alpha * Ap
            it += 1
            rel = rel_residual(r)
            if rel <= tol:
                break
            z = prec(r)
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new

    if not np.all(np.isfinite(l)):
        raise SolverError(f"non-finite CG iterate at iteration {it}")
    dq = h2m * (rq - DJt @ l)
    x = np.concatenate([dq, l])
    rel = system.norm(rhs - system.matvec(x)) / bnorm
    return CGResult(x, it, rel, rel <= tol)


def block_diag_sparse(blocks):
    """CSR matrix from a (T, k, k) stack of dense diagonal blocks."""
    T, k, _ = blocks.shape
    base = k * np.arange(T)[:, None, None]
    rows = np.broadcast_to(base + np.arange(k)[None, :, None], blocks.shape)
    cols = np.broadcast_to(base + np.arange(k)[None, None, :], blocks.shape)
    return sp.csr_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(T * k, T * k))


def direct_saddle(system, rhs):
    """Sparse direct solve of the saddle system by eliminating ``l``.

    Factors ``M/h^2 + K + (DJ)^T Cmp^-1 DJ`` (SPD) and back-substitutes for ``l``.
    """
    rhs = np.asarray(rhs, dtype=float)
    bnorm = system.norm(rhs)
    if bnorm == 0.0:
        return CGResult(np.zeros(rhs.size), 0, 0.0, True)
    n_q = system.n_q
    rq, rl = rhs[:n_q], rhs[n_q:]
    Cinv = block_diag_sparse(np.linalg.inv(system.compliance))
    A = sp.diags(system.diag_q) + system._DJt @ Cinv @ system.DJ
    try:
        lu = spla.splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise SolverError(f"saddle factorization failed: {exc}") from exc
    dq = lu.solve(rq + system._DJt @ (Cinv @ rl))
    l = Cinv @ (system.DJ @ dq - rl)
    x = np.concatenate([dq, l])
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite solution from direct saddle solve")
    return CGResult(x, 0, system.norm(rhs - system.matvec(x)) / bnorm, True)


def solve_saddle(system, rhs, precond=None, method="direct", tol=1e-7, maxiter=None):
    """Dispatch to :func:`pcg_saddle` (``method="pcg"``), :func:`direct_saddle`, or
    ``"auto"`` (PCG, falling back to the direct solve when it does not converge)."""
    if method == "direct":
        return direct_saddle(system, rhs)
    if method not in ("pcg", "auto"):
        raise ValueError(f"unknown linear solver {method!r}")
    res = pcg_saddle(system, rhs, precond, tol=tol, maxiter=maxiter)
    if method == "auto" and not res.converged:
        logger.debug("PCG stopped at residual %.2e after %d iterations; using direct solve", res.residual, res.iterations)
        fallback = direct_saddle(system, rhs)
        fallback.iterations = res.iterations
        return fallback
    return res

"""Reference computations that share no code path with the solver.

They are deliberately dense, loop-based or brute-force. The validation suite
and the tests compare production results against them.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def tet_deformation_gradient(x, X):
    """``F = Ds Dm^-1`` from deformed (4, 3) and rest (4, 3) corners."""
    Dm = (X[1:] - X[0]).T
    Ds = (x[1:] - x[0]).T
    return Ds @ np.linalg.inv(Dm)


def brute_force_J(X, elements):
    """Dense ``9T x 3V`` map from finite columns of ``F = Ds Dm^-1`` (tets only, exact since F is linear)."""
    n = X.shape[0]
    J = np.zeros((9 * len(elements), 3 * n))
    for col in range(3 * n):
        x = np.zeros(3 * n)
        x[col] = 1.0
        x = x.reshape(-1, 3)
        for t, e in enumerate(elements):
            Dm = (X[e[1:]] - X[e[0]]).T
            Ds = (x[e[1:]] - x[e[0]]).T
            J[9 * t : 9 * t + 9, col] = (Ds @ np.linalg.inv(Dm)).ravel()
    return J


def _sym_from6(v):
    a, b, c, d, e, f = v
    return np.array([[a, f, e], [f, b, d], [e, d, c]])


def explicit_W(R):
    """9x6 matrix with ``W s = vec(R symmat(s))``, built one column at a time."""
    W = np.zeros((9, 6))
    for k in range(6):
        u = np.zeros(6)
        u[k] = 1.0
        W[:, k] = (R @ _sym_from6(u)).ravel()
    return W


def dense_kkt_step(X, elements, volumes, mass, q, s, R, q_t, q_prev, f_ext, g, H, h, free=None, tik=0.0):
    """Solve the equality-constrained quadratic model in ``(dq, ds)`` densely.

    Minimises ``1/(2h^2) |q + dq - 2q_t + q_prev|_M^2 - f.(q + dq)
    + sum dv (g.ds + ds.H ds / 2)`` subject to
    ``W (s + ds) - J (q + dq) = 0`` per element (tets, no frame term).
    ``tik`` adds ``-dv tik I`` to the multiplier block. Returns ``(dq, l, ds)``
    with ``dq`` zero on DOFs outside ``free``.
    """
    T = len(elements)
    n = q.size
    free = np.arange(n) if free is None else np.asarray(free)
    J = brute_force_J(X, elements)[:, free]
    nf = free.size
    Wb = scipy.linalg.block_diag(*[explicit_W(R[t]) for t in range(T)])
    Hb = scipy.linalg.block_diag(*[volumes[t] * H[t] for t in range(T)])
    D = np.diag(np.repeat(volumes, 9))
    a = q - 2 * q_t + q_prev
    c = Wb @ s.ravel() - brute_force_J(X, elements) @ q

    K = np.zeros((nf + 6 * T + 9 * T,) * 2)
    iq, is_, il = slice(0, nf), slice(nf, nf + 6 * T), slice(nf + 6 * T, None)
    K[iq, iq] = np.diag(mass[free]) / h**2
    K[is_, is_] = Hb
    K[iq, il] = (D @ J).T
    K[is_, il] = -(D @ Wb).T
    K[il, iq] = D @ J
    K[il, is_] = -D @ Wb
    K[il, il] = -tik * D
    rhs = np.concatenate([(f_ext - mass * a / h**2)[free], -(np.repeat(volumes, 6) * g.ravel()), D @ c])
    x = np.linalg.solve(K, rhs)
    dq = np.zeros(n)
    dq[free] = x[iq]
    return dq, x[il].reshape(T, 9), x[is_].reshape(T, 6)


def polar_factors(F):
    """``(R, S)`` with ``F = R S`` from scipy's polar decomposition."""
    R, S = scipy.linalg.polar(F, side="right")
    return R, S


def kabsch(X, x, weights=None):
    """Best-fit rigid transform ``x ~ R X + t`` (proper rotation)."""
    w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    cX, cx = w @ X, w @ x
    Hm = ((X - cX) * w[:, None]).T @ (x - cx)
    U, _, Vt = np.linalg.svd(Hm)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, cx - R @ cX


def procrustes_objective(R, M):
    return float(np.sum(R * M))


def central_difference(f, x, eps=1e-6):
    """Central-difference Jacobian of ``f`` at ``x`` (columns over entries of ``x``)."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x))
    out = np.zeros(f0.shape + (x.size,))
    for k in range(x.size):
        d = np.zeros_like(x)
        d.flat[k] = eps
        out[..., k] = (np.asarray(f(x + d)) - np.asarray(f(x - d))) / (2 * eps)
    return out


# -- displacement-only Neo-Hookean statics -----------------------------------


def _nh_energy_density(F, mu, lam):
    J = np.linalg.det(F)
    if np.any(J <= 0):
        return np.inf
    lj = np.log(J)
    return 0.5 * mu * (np.einsum("...ij,...ij->...", F, F) - 3) - mu * lj + 0.5 * lam * lj**2


def _nh_first_pk(F, mu, lam):
    FinvT = np.swapaxes(np.linalg.inv(F), -1, -2)
    lj = np.log(np.linalg.det(F))
    return mu * (F - FinvT) + lam * lj[:, None, None] * FinvT


def _nh_dP(F, dF, mu, lam):
    """Directional derivative of P along ``dF``; batched over elements and directions."""
    Finv = np.linalg.inv(F)[:, None]
    FinvT = np.swapaxes(Finv, -1, -2)
    lj = np.log(np.linalg.det(F))[:, None, None, None]
    tr = np.einsum("...ij,...ji->...", Finv, dF)[..., None, None]
    return mu * dF + (mu - lam * lj) * FinvT @ np.swapaxes(dF, -1, -2) @ FinvT + lam * tr * FinvT


def newton_static_nh(X, elements, mu, lam, f_ext, fixed, tol=1e-10, maxiter=100):
    """Static equilibrium of ``sum dv psi(F) - f.x`` by full Newton with backtracking.

    ``X`` (V, 3) rest positions, ``fixed`` vertex indices held at rest.
    Returns deformed positions (V, 3).
    """
    X = np.asarray(X, dtype=float)
    E = np.asarray(elements)
    V, T = len(X), len(E)
    Dm = np.swapaxes(X[E[:, 1:]] - X[E[:, :1]], 1, 2)
    Dm_inv = np.linalg.inv(Dm)
    vol = np.abs(np.linalg.det(Dm)) / 6.0
    # dF/dx_k for the 12 corner coordinates: (T, 12, 3, 3)
    basis = np.zeros((12, 3, 3))
    for v in range(4):
        for a in range(3):
            if v == 0:
                basis[3 * v + a, a, :] = -1.0
            else:
                basis[3 * v + a, a, v - 1] = 1.0
    G = basis[None] @ Dm_inv[:, None]
    dofs = (3 * E[:, :, None] + np.arange(3)).reshape(T, 12)
    rows = np.repeat(dofs, 12, axis=1).ravel()
    cols = np.tile(dofs, (1, 12)).ravel()

    mask = np.ones(3 * V, dtype=bool)
    for v in fixed:
        mask[3 * v : 3 * v + 3] = False
    free = np.flatnonzero(mask)

    def deformation(x):
        xs = x.reshape(-1, 3)
        return np.swapaxes(xs[E[:, 1:]] - xs[E[:, :1]], 1, 2) @ Dm_inv

    def energy(x):
        return float(np.sum(vol * _nh_energy_density(deformation(x), mu, lam)) - f_ext @ x)

    x = X.ravel().copy()
    for _ in range(maxiter):
        F = deformation(x)
        P = _nh_first_pk(F, mu, lam)
        grad = -f_ext.copy()
        np.add.at(grad, dofs.ravel(), (vol[:, None] * np.einsum("tkij,tij->tk", G, P)).ravel())
        dP = _nh_dP(F, G, mu, lam)
        Ke = vol[:, None, None] * np.einsum("tkij,tlij->tkl", G, dP)
        K = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(3 * V, 3 * V))
        gf = grad[free]
        if np.linalg.norm(gf) <= tol * max(1.0, np.linalg.norm(f_ext)):
            break
        Kf = K[free][:, free]
        shift = 0.0
        while True:
            dx = spla.spsolve((Kf + shift * sp.eye(free.size)).tocsc(), -gf)
            if gf @ dx < 0:
                break
            shift = max(10 * shift, 1e-8 * abs(Kf.diagonal()).max())
        e0 = energy(x)
        t = 1.0
        while t > 1e-12:
            xt = x.copy()
            xt[free] += t * dx
            if energy(xt) <= e0 + 1e-4 * t * (gf @ dx):
                break
            t *= 0.5
        x = xt
    return x.reshape(-1, 3)

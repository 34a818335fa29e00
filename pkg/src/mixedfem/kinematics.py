"""Constant vector/matrix tensors, the strain map ``J`` and the rotation block map ``W``.

Layouts
-------
9-vectors hold 3x3 matrices row-major: ``(A00, A01, A02, A10, ..., A22)``.
6-vectors hold symmetric matrices as ``(S00, S11, S22, S12, S02, S01)`` with
no Voigt weights; the contraction ``C : M`` therefore sums both off-diagonal
entries, which is where the factor 2 on shear terms of gradients comes from.
"""

import numpy as np
import scipy.sparse as sp


def _build_B():
    B = np.zeros((3, 3, 9))
    for i in range(3):
        for j in range(3):
            B[i, j, 3 * i + j] = 1.0
    return B


def _build_C():
    C = np.zeros((3, 3, 6))
    index = [[0, 5, 4], [5, 1, 3], [4, 3, 2]]
    for i in range(3):
        for j in range(3):
            C[i, j, index[i][j]] = 1.0
    return C


def build_D(n):
    """``D^n`` in R^{3 x n x 3n}: ``(D . x)[:, j]`` is vertex ``j`` of the stacked vector ``x``."""
    D = np.zeros((3, n, 3 * n))
    for i in range(3):
        for j in range(n):
            D[i, j, 3 * j + i] = 1.0
    return D


B = _build_B()
C = _build_C()
# Z_{ijkl} = sum_m B_{kmi} C_{lmj}, shape (9, 6, 3, 3)
Z = np.einsum("kmi,lmj->ijkl", B, C)
for _t in (B, C, Z):
    _t.setflags(write=False)

#: 9x6 matrix taking a 6-vector to the row-major 9-vector of its symmetric matrix
SYM_TO_VEC = C.reshape(9, 6)


def symmat(s):
    """6-vector(s) -> symmetric 3x3 matrix(ces)."""
    return np.einsum("ijk,...k->...ij", C, np.asarray(s, dtype=float))


def symvec(S):
    """Inverse of :func:`symmat` for symmetric input (reads the upper triangle)."""
    S = np.asarray(S, dtype=float)
    return np.stack([S[..., 0, 0], S[..., 1, 1], S[..., 2, 2], S[..., 1, 2], S[..., 0, 2], S[..., 0, 1]], axis=-1)


def contract_C(M):
    """``C : M`` -- sums both off-diagonal entries; the adjoint of :func:`symmat`."""
    return np.einsum("ijk,...ij->...k", C, np.asarray(M, dtype=float))


def matvec9(v):
    """Row-major 9-vector(s) -> 3x3 matrix(ces)."""
    return np.asarray(v, dtype=float).reshape(*np.shape(v)[:-1], 3, 3)


def vec9(A):
    A = np.asarray(A, dtype=float)
    return A.reshape(*A.shape[:-2], 9)


def assemble_J(mesh):
    """Sparse ``9|T| x 3|V|`` map with ``(J q)[9i:9i+9] = vec9(F_i)``.

    Rows are not weighted by element volume; the saddle system applies the
    weights.
    """
    G = mesh.grad_ops  # (T, k, 3)
    E = mesh.elements
    T, k = E.shape
    t, v, a, b = np.meshgrid(np.arange(T), np.arange(k), np.arange(3), np.arange(3), indexing="ij")
    rows = 9 * t + 3 * a + b
    cols = 3 * E[t, v] + a
    vals = G[t, v, b]
    return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(9 * T, 3 * mesh.n_vertices))


def assemble_W(rotations, out=None, changed=None):
    """Per-element 9x6 blocks ``W_i = Z : R_i`` with ``W_i s = vec9(R_i symmat(s))``.

    ``W`` is block diagonal, so only the stack of blocks (T, 9, 6) is stored.
    With ``out`` given, only the blocks selected by the boolean mask
    ``changed`` (default: all) are rewritten in place.
    """
    R = np.asarray(rotations, dtype=float)
    if out is None:
        return np.einsum("ijkl,...kl->...ij", Z, R)
    if changed is None:
        out[...] = np.einsum("ijkl,...kl->...ij", Z, R)
    else:
        out[changed] = np.einsum("ijkl,...kl->...ij", Z, R[changed])
    return out


def W_matrix(blocks):
    """Sparse block-diagonal ``9|T| x 6|T|`` matrix from a stack of W blocks."""
    return sp.block_diag(list(blocks), format="csr")


def normal_rhs_term(mesh, rotations):
    """Per-element ``vec9(R_i n_i n_i^T)`` (+ binormal term for rods), shape (T, 9)."""
    if mesh.kind == "tet":
        raise ValueError("normal correction only applies to tri and rod meshes")
    N = mesh.reference_frame_matrices()
    return vec9(np.asarray(rotations) @ N)

import numpy as np
import pytest

from mixedfem.kinematics import B, assemble_J, assemble_W, build_D, contract_C, matvec9, normal_rhs_term, symmat, symvec, vec9
from mixedfem.mesh import SimMesh
from mixedfem.meshgen import box_mesh
from mixedfem.oracles import brute_force_J, explicit_W
from mixedfem.rotation import random_rotations
from mixedfem.validate import _random_element_mesh


def test_symmat_identity():
    assert np.array_equal(symmat([1, 1, 1, 0, 0, 0]), np.eye(3))


def test_matvec9_layout():
    A = matvec9(np.arange(1.0, 10.0))
    assert np.array_equal(A[0], [1, 2, 3])
    assert np.array_equal(vec9(A), np.arange(1.0, 10.0))


def test_B_bijection(rng):
    A = rng.normal(size=(3, 3))
    assert np.allclose(np.einsum("ijk,ij->k", B, A).reshape(3, 3), A)


def test_symmat_contract_roundtrip(rng):
    for _ in range(50):
        M = rng.normal(size=(3, 3))
        M = M + M.T
        c = contract_C(M)
        # off-diagonals are counted twice by the contraction
        assert np.allclose(c[3:], 2 * np.array([M[1, 2], M[0, 2], M[0, 1]]))
        assert np.allclose(symmat(c * [1, 1, 1, 0.5, 0.5, 0.5]), M)
        assert np.allclose(symvec(M), c * [1, 1, 1, 0.5, 0.5, 0.5])


def test_symmat_symmetric(rng):
    S = symmat(rng.normal(size=(10, 6)))
    assert np.array_equal(S, np.swapaxes(S, 1, 2))


def test_D_reproduces_positions(rng):
    x = rng.normal(size=(5, 3))
    assert np.allclose(np.einsum("ijk,k->ij", build_D(5), x.ravel()), x.T)


def test_J_at_rest_is_identity():
    mesh = box_mesh((2, 1, 1))
    Jq = assemble_J(mesh) @ mesh.rest_positions.ravel()
    assert np.allclose(Jq.reshape(-1, 9), np.eye(3).ravel(), atol=1e-12)


def test_J_single_tet_nonzeros():
    mesh = SimMesh.from_arrays([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2, 3]], "tet")
    J = assemble_J(mesh)
    assert J.shape == (9, 12) and J.nnz == 9 * 12 / 3


@pytest.mark.parametrize("kind", ["tet", "tri", "rod"])
def test_J_matches_least_squares_gradient(kind, rng):
    mesh = _random_element_mesh(kind, rng, 20)
    J = assemble_J(mesh)
    X = mesh.rest_positions
    for _ in range(5):
        q = rng.normal(size=3 * mesh.n_vertices)
        x = q.reshape(-1, 3)
        Jq = (J @ q).reshape(-1, 3, 3)
        for t, e in enumerate(mesh.elements):
            F = (x[e[1:]] - x[e[0]]).T @ np.linalg.pinv((X[e[1:]] - X[e[0]]).T)
            assert np.max(np.abs(Jq[t] - F)) <= 1e-10


def test_J_matches_brute_force(rng):
    mesh = _random_element_mesh("tet", rng, 4)
    assert np.allclose(assemble_J(mesh).toarray(), brute_force_J(mesh.rest_positions, mesh.elements), atol=1e-12)


def test_W_identity(rng):
    s = rng.normal(size=6)
    W = assemble_W(np.eye(3)[None])[0]
    assert np.allclose(W @ s, vec9(symmat(s)))


def test_W_against_explicit_loop(rng):
    R = random_rotations(10, rng)
    s = rng.normal(size=(10, 6))
    W = assemble_W(R)
    for t in range(10):
        assert np.allclose(W[t], explicit_W(R[t]), atol=1e-14)
        assert np.max(np.abs(W[t] @ s[t] - vec9(R[t] @ symmat(s[t])))) <= 1e-12


def test_W_linear(rng):
    Ra, Rb = rng.normal(size=(2, 4, 3, 3))
    assert np.allclose(assemble_W(Ra + Rb), assemble_W(Ra) + assemble_W(Rb))


def test_W_in_place_update(rng):
    R = random_rotations(6, rng)
    W = assemble_W(np.tile(np.eye(3), (6, 1, 1)))
    changed = np.array([True, False, True, False, False, True])
    assemble_W(R, out=W, changed=changed)
    assert np.allclose(W[changed], assemble_W(R[changed]))
    assert np.allclose(W[~changed], assemble_W(np.tile(np.eye(3), (3, 1, 1))))


def test_normal_term_triangle():
    mesh = SimMesh.from_arrays([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], "tri")
    assert np.allclose(normal_rhs_term(mesh, np.eye(3)[None]), vec9(np.diag([0.0, 0, 1])))


def test_normal_term_rod(rng):
    mesh = _random_element_mesh("rod", rng, 5)
    n, b = mesh.ref_normals, mesh.ref_binormals
    expected = vec9(np.einsum("ti,tj->tij", n, n) + np.einsum("ti,tj->tij", b, b))
    assert np.allclose(normal_rhs_term(mesh, np.tile(np.eye(3), (5, 1, 1))), expected)


def test_normal_term_rotated(rng):
    mesh = _random_element_mesh("tri", rng, 5)
    R0 = random_rotations(1, rng)[0]
    n = mesh.ref_normals
    got = normal_rhs_term(mesh, np.broadcast_to(R0, (5, 3, 3)))
    assert np.max(np.abs(got - vec9(R0 @ np.einsum("ti,tj->tij", n, n)))) <= 1e-12

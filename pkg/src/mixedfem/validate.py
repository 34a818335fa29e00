"""Oracle and invariant checks, grouped by module and runnable from the CLI.

Every check takes a ``numpy.random.Generator`` and returns a short detail
string; failures raise :class:`CheckFailed`.
"""

from __future__ import annotations

import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from . import materials as mat
from . import oracles, scenes
from .kinematics import assemble_J, assemble_W, contract_C, normal_rhs_term, symmat, symvec, vec9
from .linsolve import SaddleSystem, direct_saddle, factor_preconditioner, pcg_saddle
from .materials import MaterialParams
from .mesh import SimMesh, load_mesh, reference_frames, surface_mesh, write_node_ele
from .meshgen import box_mesh, box_tet_mesh
from .rotation import axis_angle, polar_rotation, random_rotations
from .scene import (
    DofProjection,
    Ground,
    SceneConfig,
    SolverSettings,
    contact_force,
    lumped_mass,
)
from .solver import MixedFEMSolver, relax

MODELS = ("ARAP", "Corot", "NeoHookean")


class CheckFailed(AssertionError):
    pass


def require(cond, message):
    if not cond:
        raise CheckFailed(message)


@dataclass
class Check:
    module: str
    name: str
    func: object

    @property
    def qualname(self):
        return f"{self.module}.{self.name}"


@dataclass
class CheckResult:
    check: Check
    passed: bool
    detail: str
    seconds: float


REGISTRY: list[Check] = []


def check(module):
    def deco(func):
        REGISTRY.append(Check(module, func.__name__.removeprefix("check_"), func))
        return func

    return deco


def select(pattern=None):
    """Checks whose module or qualified name matches ``pattern`` (comma-separated prefixes)."""
    if not pattern:
        return list(REGISTRY)
    keys = [p.strip() for p in pattern.split(",") if p.strip()]
    return [c for c in REGISTRY if any(c.module == k or c.qualname.startswith(k) for k in keys)]


def run_checks(pattern=None, seed=0, report=None):
    results = []
    for c in select(pattern):
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        try:
            detail = c.func(rng) or ""
            passed = True
        except CheckFailed as exc:
            detail, passed = str(exc), False
        except Exception as exc:  # a crash is a failure, not an abort of the suite
            detail, passed = f"{type(exc).__name__}: {exc}", False
        res = CheckResult(c, passed, detail, time.perf_counter() - t0)
        results.append(res)
        if report is not None:
            report(res)
    return results


def _max_rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def _random_element_mesh(kind, rng, n=20):
    k = {"tet": 4, "tri": 3, "rod": 2}[kind]
    X = rng.normal(size=(n * k, 3))
    E = np.arange(n * k).reshape(n, k)
    if kind == "tet":
        # keep elements well shaped
        for i in range(n):
            X[k * i + 1 : k * i + 4] = X[k * i] + np.eye(3) + 0.3 * rng.normal(size=(3, 3))
    return SimMesh.from_arrays(X, E, kind)


# -- mesh ------------------------------------------------------------------------


@check("mesh")
def check_regular_tet_volume(rng):
    a = 0.7
    X = a / 2 * np.array([[1.0, 0, -1 / np.sqrt(2)], [-1, 0, -1 / np.sqrt(2)], [0, 1, 1 / np.sqrt(2)], [0, -1, 1 / np.sqrt(2)]])
    with tempfile.TemporaryDirectory() as d:
        base = os.path.join(d, "regular")
        write_node_ele(base, X, np.array([[0, 1, 2, 3]]))
        mesh = load_mesh(base + ".node", "tet")
    expected = np.sqrt(2) * a**3 / 12
    require(mesh.n_elements == 1, "expected one element")
    require(abs(mesh.volumes[0] - expected) <= 1e-12 * expected, f"volume {mesh.volumes[0]} != {expected}")
    return f"volume {mesh.volumes[0]:.6g}"


@check("mesh")
def check_gradient_least_squares(rng):
    worst = 0.0
    for kind in ("tet", "tri", "rod"):
        mesh = _random_element_mesh(kind, rng, 100)
        x = rng.normal(size=mesh.rest_positions.shape)
        F = mesh.deformation_gradients(x.ravel())
        for t, e in enumerate(mesh.elements):
            Dm = (mesh.rest_positions[e[1:]] - mesh.rest_positions[e[0]]).T
            Ds = (x[e[1:]] - x[e[0]]).T
            # minimum-norm linear map taking rest edges to deformed edges
            Fls = np.linalg.lstsq(Dm.T, Ds.T, rcond=None)[0].T
            worst = max(worst, np.max(np.abs(F[t] - Fls)))
    require(worst <= 1e-10, f"max deviation {worst:.2e}")
    return f"max deviation {worst:.1e}"


@check("mesh")
def check_rotated_rest_gradient(rng):
    mesh = box_mesh((2, 2, 2))
    R0 = random_rotations(1, rng)[0]
    F = mesh.deformation_gradients((mesh.rest_positions @ R0.T).ravel())
    err = np.max(np.abs(F - R0))
    require(err <= 1e-12, f"F != R0 by {err:.2e}")
    return f"max error {err:.1e}"


@check("mesh")
def check_triangle_rest_svd(rng):
    mesh = _random_element_mesh("tri", rng, 10)
    F = mesh.deformation_gradients(mesh.rest_positions.ravel())
    for t, e in enumerate(mesh.elements):
        U, sv, Vt = np.linalg.svd(F[t])
        require(np.allclose(sv, [1, 1, 0], atol=1e-12), f"singular values {sv}")
        edges = (mesh.rest_positions[e[1:]] - mesh.rest_positions[e[0]]).T
        # rest edges lie in the span of the two leading right singular vectors
        resid = edges - Vt[:2].T @ (Vt[:2] @ edges)
        require(np.max(np.abs(resid)) <= 1e-10, "rest edges not in the row space")
    return "singular values (1, 1, 0)"


@check("mesh")
def check_rod_stretch(rng):
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    L = 0.8
    mesh = SimMesh.from_arrays(np.array([np.zeros(3), L * d]), np.array([[0, 1]]), "rod")
    F = mesh.deformation_gradients(np.concatenate([np.zeros(3), 2 * L * d]))[0]
    require(np.allclose(F, 2 * np.outer(d, d), atol=1e-12), "F != 2 d d^T")
    require(np.linalg.matrix_rank(F, tol=1e-10) == 1, "remainder not rank deficient")
    return "F = 2 d d^T"


@check("mesh")
def check_rod_frame_equivariance(rng):
    mesh = _random_element_mesh("rod", rng, 50)
    R0 = random_rotations(1, rng)[0]
    rot = SimMesh.from_arrays(mesh.rest_positions @ R0.T, mesh.elements, "rod")
    P = mesh.reference_frame_matrices()
    Pr = rot.reference_frame_matrices()
    err = np.max(np.abs(Pr - R0 @ P @ R0.T))
    require(err <= 1e-12, f"frame projector not equivariant ({err:.1e})")
    n, b = reference_frames(mesh)
    require(np.allclose(np.einsum("ti,ti->t", n, b), 0, atol=1e-12), "frame not orthogonal")
    return f"projector error {err:.1e}"


@check("mesh")
def check_volume_invariance(rng):
    mesh = _random_element_mesh("tet", rng, 30)
    R0 = random_rotations(1, rng)[0]
    moved = SimMesh.from_arrays(mesh.rest_positions @ R0.T + rng.normal(size=3), mesh.elements, "tet")
    err = _max_rel(moved.volumes, mesh.volumes)
    require(err <= 1e-12, f"volumes changed by {err:.1e}")
    return f"relative change {err:.1e}"


# -- kinematics --------------------------------------------------------------------


@check("kinematics")
def check_symmat_roundtrip(rng):
    for _ in range(50):
        A = rng.normal(size=(3, 3))
        M = A + A.T
        c = contract_C(M) * np.array([1, 1, 1, 0.5, 0.5, 0.5])
        require(np.allclose(symmat(c), M, atol=1e-14), "symmat(C : M) != M")
    return "50 matrices"


@check("kinematics")
def check_J_direct(rng):
    worst = 0.0
    for kind in ("tet", "tri", "rod"):
        mesh = _random_element_mesh(kind, rng, 20)
        J = assemble_J(mesh)
        X = mesh.rest_positions
        for _ in range(34):
            q = rng.normal(size=3 * mesh.n_vertices)
            x = q.reshape(-1, 3)
            Jq = (J @ q).reshape(-1, 3, 3)
            for t, e in enumerate(mesh.elements):
                Dm, Ds = (X[e[1:]] - X[e[0]]).T, (x[e[1:]] - x[e[0]]).T
                worst = max(worst, np.max(np.abs(Jq[t] - Ds @ np.linalg.pinv(Dm))))
    tet = _random_element_mesh("tet", rng, 3)
    dense = oracles.brute_force_J(tet.rest_positions, tet.elements)
    worst = max(worst, np.max(np.abs(assemble_J(tet).toarray() - dense)))
    require(worst <= 1e-10, f"max deviation {worst:.2e}")
    return f"max deviation {worst:.1e}"


@check("kinematics")
def check_J_rotation(rng):
    mesh = box_mesh((2, 1, 1))
    R0 = random_rotations(1, rng)[0]
    Jq = assemble_J(mesh) @ (mesh.rest_positions @ R0.T).ravel()
    err = np.max(np.abs(Jq.reshape(-1, 9) - R0.ravel()))
    require(err <= 1e-12, f"slices differ from vec(R0) by {err:.1e}")
    return f"max error {err:.1e}"


@check("kinematics")
def check_W_product(rng):
    R = random_rotations(20, rng)
    s = rng.normal(size=(20, 6))
    W = assemble_W(R)
    err = np.max(np.abs(np.einsum("tij,tj->ti", W, s) - vec9(R @ symmat(s))))
    require(err <= 1e-12, f"W s mismatch {err:.1e}")
    naive = np.array([oracles.explicit_W(r) for r in R])
    err2 = np.max(np.abs(W - naive))
    require(err2 <= 1e-14, f"W blocks differ from explicit construction by {err2:.1e}")
    return f"max error {max(err, err2):.1e}"


@check("kinematics")
def check_normal_term_rotated(rng):
    X, T = box_tet_mesh((1, 1, 1))
    tri = surface_mesh(SimMesh.from_arrays(X, T, "tet"))
    R0 = random_rotations(1, rng)[0]
    term = normal_rhs_term(tri, np.broadcast_to(R0, (tri.n_elements, 3, 3)))
    n = tri.ref_normals
    expected = vec9(R0 @ np.einsum("ti,tj->tij", n, n))
    err = np.max(np.abs(term - expected))
    require(err <= 1e-12, f"normal term mismatch {err:.1e}")
    return f"max error {err:.1e}"


# -- materials ---------------------------------------------------------------------


def _random_stretches(rng, n, min_det=0.2):
    out = []
    while len(out) < n:
        s = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]) + 0.3 * rng.normal(size=6)
        S = symmat(s)
        if np.linalg.det(S) > min_det and np.all(np.linalg.eigvalsh(S) > 0):
            out.append(s)
    return np.array(out)


def _fd_check(rng, which):
    worst = 0.0
    for model in MODELS:
        p = MaterialParams(model, youngs=1e5, poisson=0.4)
        for s in _random_stretches(rng, 100):
            eps = 1e-5 * (1 + np.linalg.norm(s))
            if which == "gradient":
                got = mat.gradient(s, p)
                ref = oracles.central_difference(lambda v: mat.energy(v, p), s, eps)
            else:
                got = mat.hessian(s, p, project=False)
                ref = oracles.central_difference(lambda v: mat.gradient(v, p), s, eps)
            worst = max(worst, np.linalg.norm(got - ref) / max(np.linalg.norm(ref), p.mu * 1e-8))
    require(worst <= 1e-5, f"relative error {worst:.2e}")
    return f"max relative error {worst:.1e}"


@check("materials")
def check_gradient_fd(rng):
    return _fd_check(rng, "gradient")


@check("materials")
def check_hessian_fd(rng):
    return _fd_check(rng, "hessian")


@check("materials")
def check_rest_stability(rng):
    s = np.array([1.0, 1, 1, 0, 0, 0])
    for model in MODELS:
        p = MaterialParams(model)
        require(abs(mat.energy(s, p)) <= 1e-14 * p.mu, f"{model}: psi(I) != 0")
        require(np.max(np.abs(mat.gradient(s, p))) <= 1e-14 * p.mu, f"{model}: g(I) != 0")
    return "psi(I) = 0, g(I) = 0"


@check("materials")
def check_isotropy(rng):
    S = _random_stretches(rng, 20)
    R = random_rotations(20, rng)
    for model in MODELS:
        p = MaterialParams(model)
        a = mat.energy(S, p)
        b = mat.energy(symvec(R @ symmat(S) @ np.swapaxes(R, 1, 2)), p)
        require(np.max(np.abs(a - b)) <= 1e-10 * max(1.0, np.max(np.abs(a))), f"{model} not isotropic")
    return "20 conjugations per model"


@check("materials")
def check_spd_projection(rng):
    p = MaterialParams("NeoHookean", youngs=1e5, poisson=0.49)
    s = np.array([[0.1, 0.1, 0.1, 0, 0, 0], [3.0, 0.2, 0.5, 0.2, 0.1, 0.0], [5.0, 5.0, 5.0, 0.0, 0.0, 0.0]])
    H = mat.hessian(s, p, project=True)
    w = np.linalg.eigvalsh(H).min()
    require(w >= p.eps_spd * (1 - 1e-9), f"min eigenvalue {w:.3e} below floor")
    return f"min eigenvalue {w:.2e}"


# -- rotation ----------------------------------------------------------------------


@check("rotation")
def check_maximality(rng):
    samples = random_rotations(10_000, rng)
    worst = np.inf
    for k in range(100):
        M = rng.normal(size=(3, 3))
        if k % 2 and np.linalg.det(M) > 0:
            M[:, 0] *= -1
        R = polar_rotation(M)
        require(abs(np.linalg.det(R) - 1) <= 1e-10, "not a proper rotation")
        best = np.max(np.einsum("kij,ij->k", samples, M))
        worst = min(worst, oracles.procrustes_objective(R, M) - best)
    require(worst >= -1e-9, f"margin {worst:.2e}")
    return f"worst margin {worst:.2e}"


@check("rotation")
def check_known_factors(rng):
    R0 = random_rotations(1, rng)[0]
    R = polar_rotation(R0 @ np.diag([3.0, 2.0, 1.0]))
    require(np.allclose(R, R0, atol=1e-12), "R != R0")
    return "recovered R0"


@check("rotation")
def check_equivariance(rng):
    M = rng.normal(size=(50, 3, 3))
    R0 = random_rotations(50, rng)
    err = np.max(np.abs(polar_rotation(R0 @ M) - R0 @ polar_rotation(M)))
    require(err <= 1e-10, f"equivariance error {err:.1e}")
    return f"max error {err:.1e}"


# -- linsolve ----------------------------------------------------------------------


def _single_tet_system(rng, pinned=False):
    X = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]) + 0.1 * rng.normal(size=(4, 3))
    mesh = SimMesh.from_arrays(X, np.array([[0, 1, 2, 3]]), "tet")
    p = MaterialParams("NeoHookean")
    proj = DofProjection([0] if pinned else [], 4)
    J = assemble_J(mesh)
    dv9 = np.repeat(mesh.volumes, 9)
    DJ = J.multiply(dv9[:, None]).tocsr()[:, proj.free]
    mass = lumped_mass(mesh, p.density)[proj.free]
    s = np.array([[1.1, 0.95, 1.0, 0.05, 0.0, -0.02]])
    H = mat.hessian(s, p)
    W = assemble_W(random_rotations(1, rng))
    return mesh, p, mass, DJ, dv9, W, H


@check("linsolve")
def check_symmetry(rng):
    mesh, p, mass, DJ, dv9, W, H = _single_tet_system(rng)
    Cmp = mesh.volumes[:, None, None] * (W @ np.linalg.inv(H) @ np.swapaxes(W, 1, 2) + 1e-6 / p.mu * np.eye(9))
    sysm = SaddleSystem(mass, DJ, Cmp, 0.01)
    x, y = rng.normal(size=sysm.shape[0]), rng.normal(size=sysm.shape[0])
    a, b = sysm.matvec(x) @ y, x @ sysm.matvec(y)
    err = abs(a - b) / max(abs(a), abs(b))
    require(err <= 1e-10, f"asymmetry {err:.1e}")
    return f"relative asymmetry {err:.1e}"


@check("linsolve")
def check_preconditioner_dense(rng):
    mesh, p, mass, DJ, dv9, W, H = _single_tet_system(rng)
    P = factor_preconditioner(mass, DJ, dv9, p.mu, 0.01, 1e-6)
    Pc = SaddleSystem(mass, DJ, P.cdiag.reshape(-1, 9)[:, :, None] * np.eye(9), 0.01)
    A = Pc.to_dense()
    b = rng.normal(size=A.shape[0])
    x = P(b)
    err = np.linalg.norm(A @ x - b) / np.linalg.norm(b)
    require(err <= 1e-10, f"residual {err:.1e}")
    return f"relative residual {err:.1e}"


@check("linsolve")
def check_pcg_dense(rng):
    mesh, p, mass, DJ, dv9, W, H = _single_tet_system(rng)
    Cmp = mesh.volumes[:, None, None] * (W @ np.linalg.inv(H) @ np.swapaxes(W, 1, 2) + 1e-6 / p.mu * np.eye(9))
    sysm = SaddleSystem(mass, DJ, Cmp, 0.01, np.full(9, p.mu) / dv9)
    P = factor_preconditioner(mass, DJ, dv9, p.mu, 0.01, 1e-6)
    b = rng.normal(size=sysm.shape[0])
    ref = np.linalg.solve(sysm.to_dense(), b)
    worst = 0.0
    for x in (pcg_saddle(sysm, b, P, tol=1e-12, maxiter=200).x, direct_saddle(sysm, b).x):
        worst = max(worst, np.linalg.norm(x - ref) / np.linalg.norm(ref))
    require(worst <= 1e-6, f"relative error {worst:.1e}")
    return f"relative error {worst:.1e}"


@check("linsolve")
def check_tikhonov_pinned_tet(rng):
    mesh, p, mass, DJ, dv9, W, H = _single_tet_system(rng, pinned=True)
    Cmp = mesh.volumes[:, None, None] * (W @ np.linalg.inv(H) @ np.swapaxes(W, 1, 2) + 1e-6 / p.mu * np.eye(9))
    sysm = SaddleSystem(mass, DJ, Cmp, 0.01, np.full(9, p.mu) / dv9)
    P = factor_preconditioner(mass, DJ, dv9, p.mu, 0.01, 1e-6)
    res = pcg_saddle(sysm, rng.normal(size=sysm.shape[0]), P, tol=1e-7)
    require(res.converged, f"PCG stopped at {res.residual:.1e}")
    return f"{res.iterations} iterations, residual {res.residual:.1e}"


# -- solver ------------------------------------------------------------------------


def dense_oracle_errors(rng, models=MODELS):
    """Relative errors of the production ``(dq, l, ds)`` against the dense KKT solve, per model."""
    X = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]) + 0.1 * rng.normal(size=(4, 3))
    mesh = SimMesh.from_arrays(X, np.array([[0, 1, 2, 3]]), "tet")
    out = {}
    for model in models:
        settings = SolverSettings(h=0.01, tikhonov=0.0, proximal=0.0, linear_solver="pcg", cg_tol=1e-14, cg_maxiter=100)
        sc = SceneConfig(mesh, MaterialParams(model), settings, gravity=scenes.GRAVITY)
        so = MixedFEMSolver(sc)
        q = so.rest_q + 0.05 * rng.normal(size=12)
        q_t = so.rest_q + 0.02 * rng.normal(size=12)
        q_prev = so.rest_q + 0.02 * rng.normal(size=12)
        s = _random_stretches(rng, 1, 0.5)
        R = random_rotations(1, rng)
        f = so.external_force(q_t)
        _, g, H, Hinv = so.element_model(s)
        system, rhs, W = so.quadratic_model(q, s, q_t, q_prev, f, R, g, Hinv)
        dq, l, _ = so.global_step(system, rhs)
        ds = so.s_update(W, Hinv, g, l)
        ref = oracles.dense_kkt_step(X, mesh.elements, mesh.volumes, so.mass, q, s, R, q_t, q_prev, f, g, H, 0.01)
        out[model] = max(np.linalg.norm(a - b) / np.linalg.norm(b) for a, b in zip((dq, l, ds), ref))
    return out


@check("solver")
def check_dense_kkt(rng):
    errs = dense_oracle_errors(rng)
    worst = max(errs.values())
    require(worst <= 1e-8, "dense oracle mismatch: " + ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))
    return f"max relative error {worst:.1e}"


@check("solver")
def check_rigid_rhs_zero(rng):
    sc = scenes.rest_cube()
    so = MixedFEMSolver(sc)
    R0 = random_rotations(1, rng)[0]
    q = (so.mesh.rest_positions @ R0.T).ravel()
    T = so.mesh.n_elements
    s = np.tile([1.0, 1, 1, 0, 0, 0], (T, 1))
    R = np.broadcast_to(R0, (T, 3, 3))
    _, g, _, Hinv = so.element_model(s)
    _, rhs, _ = so.quadratic_model(q, s, q, q, np.zeros_like(q), R, g, Hinv)
    rl = rhs[so.projection.n_free :]
    err = np.max(np.abs(rl))
    require(err <= 1e-12, f"constraint rows {err:.1e}")
    return f"max constraint row {err:.1e}"


@check("solver")
def check_local_step_maximality(rng):
    sc = scenes.rest_cube()
    so = MixedFEMSolver(sc)
    q = so.rest_q + 0.1 * rng.normal(size=so.rest_q.size)
    T = so.mesh.n_elements
    s = _random_stretches(rng, T)
    l = so.params.mu * rng.normal(size=(T, 9))
    R, beta = so.local_step(q, s, l, 10.0)
    F = so.mesh.deformation_gradients(q)
    target = (l.reshape(-1, 3, 3) / beta[:, None, None] + F) @ np.swapaxes(symmat(s), 1, 2)
    samples = random_rotations(10_000, rng)
    worst = np.inf
    for t in range(T):
        best = np.max(np.einsum("kij,ij->k", samples, target[t]))
        worst = min(worst, oracles.procrustes_objective(R[t], target[t]) - best)
    require(worst >= -1e-9, f"margin {worst:.2e}")
    return f"worst margin {worst:.2e}"


def polar_consistency_errors(models=MODELS):
    """Converged single-tet stretch: max |symmat(s) - S_polar| and |R - R_polar| per model."""
    from .scene import PinGroup

    X = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    mesh = SimMesh.from_arrays(X, np.array([[0, 1, 2, 3]]), "tet")
    A = axis_angle([1, 2, 3], 0.7) @ np.array([[1.3, 0.1, 0], [0.1, 0.9, 0], [0, 0, 1.1]])
    h = 10.0
    z = np.array([0.0, 0.0, 1.0])
    pins = [PinGroup(np.array([v]), keyframes=[(0.0, np.zeros(3), z, 0.0), (h, A @ X[v] - X[v], z, 0.0)]) for v in range(3)]
    out = {}
    for model in models:
        settings = SolverSettings(h=h, inner=50, outer=50, fixed_iterations=False)
        so = MixedFEMSolver(SceneConfig(mesh, MaterialParams(model), settings, pins=pins))
        st = relax(so, max_steps=10, tol=1e-10)
        F = mesh.deformation_gradients(st.q)[0]
        R_ref, S_ref = oracles.polar_factors(F)
        out[model] = (float(np.max(np.abs(symmat(st.s[0]) - S_ref))), float(np.max(np.abs(st.R[0] - R_ref))))
    return out


@check("solver")
def check_polar_consistency(rng):
    errs = polar_consistency_errors()
    worst = max(max(v) for v in errs.values())
    require(worst <= 1e-5, f"polar mismatch {errs}")
    return f"max error {worst:.1e}"


@check("solver")
def check_rest_equilibrium(rng):
    so = MixedFEMSolver(scenes.rest_cube())
    st = so.run(100)
    disp = float(np.max(np.abs(st.q - so.rest_q)))
    require(disp <= 1e-8, f"rest cube moved {disp:.1e} m")
    return f"max displacement {disp:.1e} m"


def momentum_drift(steps=100, velocity=(0.3, -0.2, 0.5)):
    so = MixedFEMSolver(scenes.floating_tet(velocity))
    st = so.initial_state()
    h = so.settings.h
    p0 = (so.mass * (st.q - st.q_prev) / h).reshape(-1, 3).sum(axis=0)
    st = so.run(steps, st)
    p1 = (so.mass * (st.q - st.q_prev) / h).reshape(-1, 3).sum(axis=0)
    return float(np.linalg.norm(p1 - p0) / np.linalg.norm(p0))


@check("solver")
def check_momentum(rng):
    drift = momentum_drift()
    require(drift <= 1e-6, f"momentum drift {drift:.1e}")
    return f"relative drift {drift:.1e}"


@check("solver")
def check_gradient_sanity(rng):
    sc = scenes.cantilever(shape=(2, 1, 1), model="NeoHookean")
    so = MixedFEMSolver(sc)
    T = so.mesh.n_elements
    q = so.rest_q + 0.01 * rng.normal(size=so.rest_q.size)
    q_t = so.rest_q + 0.005 * rng.normal(size=so.rest_q.size)
    q_prev = so.rest_q.copy()
    s = _random_stretches(rng, T, 0.5)
    R = random_rotations(T, rng)
    l = np.zeros((T, 9))
    f = so.gravity

    def merit_q(x):
        return so.merit(x, s, q_t, q_prev, f, l, R, 0.0)

    def merit_s(v):
        return so.merit(q, v.reshape(T, 6), q_t, q_prev, f, l, R, 0.0)

    _, g, _, Hinv = so.element_model(s)
    _, rhs, _ = so.quadratic_model(q, s, q_t, q_prev, f, R, g, Hinv)
    rq = rhs[: so.projection.n_free]
    gq = oracles.central_difference(merit_q, q, 1e-6)[so.projection.free]
    gs = oracles.central_difference(merit_s, s.ravel(), 1e-6)
    eq = np.linalg.norm(rq + gq) / np.linalg.norm(gq)
    es = np.linalg.norm(-(so.dv[:, None] * g).ravel() + gs) / np.linalg.norm(gs)
    require(max(eq, es) <= 1e-4, f"q error {eq:.1e}, s error {es:.1e}")
    return f"q {eq:.1e}, s {es:.1e}"


def feasibility_violations(scene, steps=40):
    """Inner iterations where the global step increased the constraint residual."""
    so = MixedFEMSolver(scene)
    ctx = {}
    local, quad, glob, supd = so.local_step, so.quadratic_model, so.global_step, so.s_update

    def local_step(q, s, l, alpha):
        ctx["qc"], ctx["sc"] = q, s
        return local(q, s, l, alpha)

    def quadratic_model(q, s, *args):
        ctx["q"], ctx["s"], ctx["R"] = q, s, args[3]
        return quad(q, s, *args)

    def global_step(system, rhs):
        ctx["before"] = np.linalg.norm(so.constraint_residual(ctx["qc"], ctx["sc"], ctx["R"]))
        dq, l, res = glob(system, rhs)
        ctx["q_new"] = ctx["q"] + dq
        return dq, l, res

    bad = []

    def s_update(W, Hinv, g, l):
        ds = supd(W, Hinv, g, l)
        after = np.linalg.norm(so.constraint_residual(ctx["q_new"], ctx["s"] + ds, ctx["R"]))
        if after > ctx["before"] * (1 + 1e-9) + 1e-10:
            bad.append((ctx["before"], after))
        return ds

    so.local_step, so.quadratic_model, so.global_step, so.s_update = local_step, quadratic_model, global_step, s_update
    so.run(steps)
    return bad


@check("solver")
def check_feasibility_trend(rng):
    total = 0
    for sc in (scenes.cantilever(h=0.01, inner=10), scenes.stretch("NeoHookean", resolution=4)):
        bad = feasibility_violations(sc)
        require(not bad, f"{sc.name}: residual grew in {len(bad)} inner iterations")
        total += 1
    return f"{total} scenes monotone"


def beam_deflections(shape=(6, 2, 2)):
    """Tip deflection of the relaxed mixed solution and of the Newton reference."""
    sc = scenes.cantilever(shape=shape, model="NeoHookean", h=0.05, inner=30, outer=10, fixed_iterations=False)
    so = MixedFEMSolver(sc)
    tip = scenes.tip_vertices(so.mesh)
    st = relax(so, max_steps=40, tol=1e-6)
    x_ref = oracles.newton_static_nh(
        so.mesh.rest_positions, so.mesh.elements, sc.material.mu, sc.material.lame_lambda, so.gravity, sc.pinned_vertices
    )
    mixed = st.positions[tip, 1].mean() - so.mesh.rest_positions[tip, 1].mean()
    ref = x_ref[tip, 1].mean() - so.mesh.rest_positions[tip, 1].mean()
    return float(mixed), float(ref)


@check("solver")
def check_beam_newton(rng):
    mixed, ref = beam_deflections()
    rel = abs(mixed - ref) / abs(ref)
    require(rel <= 0.05, f"tip {mixed:.5f} vs Newton {ref:.5f} ({rel:.1%})")
    return f"tip {mixed:.5f} m vs {ref:.5f} m ({rel:.2%})"


def stiff_drop(youngs=1e9, steps=300):
    """Run the drop scene; returns (final state, max rigid deviation, all finite)."""
    so = MixedFEMSolver(scenes.drop(youngs))
    st = so.initial_state()
    finite = True
    for _ in range(steps):
        st, _ = so.step(st)
        finite &= bool(np.all(np.isfinite(st.q)))
    return st, float(np.max(scenes.rigid_deviation(so.mesh, st.q))), finite


@check("solver")
def check_stiff_drop(rng):
    st, dev, finite = stiff_drop()
    require(finite, "non-finite positions")
    require(dev <= 1e-2, f"rigid deviation {dev:.2e}")
    return f"rigid deviation {dev:.1e}"


# -- scene -------------------------------------------------------------------------


@check("scene")
def check_mass_refinement(rng):
    rho = 1000.0
    coarse = lumped_mass(box_mesh((2, 1, 1), (1.0, 0.5, 0.3)), rho).sum()
    fine = lumped_mass(box_mesh((4, 2, 2), (1.0, 0.5, 0.3)), rho).sum()
    exact = 3 * rho * 1.0 * 0.5 * 0.3
    err = max(abs(coarse - fine), abs(coarse - exact)) / exact
    require(err <= 1e-10, f"mass changed by {err:.1e}")
    return f"relative change {err:.1e}"


@check("scene")
def check_projection_idempotence(rng):
    proj = DofProjection(rng.choice(20, 5, replace=False), 20)
    q = rng.normal(size=60)
    a = proj.project(q)
    b = proj.project(proj.unproject(a, rng.normal(size=60)))
    require(np.array_equal(a, b), "project . unproject . project != project")
    return "idempotent"


@check("scene")
def check_contact_force_law(rng):
    ground = Ground(0.0, stiffness=1e4, damping=0.0)
    x = rng.normal(size=(50, 3))
    x[:, 1] = np.abs(x[:, 1]) + 1e-3
    require(not np.any(contact_force(x.ravel(), ground)), "force above the plane")
    x[::7, 1] = -rng.uniform(0, 0.1, size=len(x[::7]))
    f = contact_force(x.ravel(), ground).reshape(-1, 3)
    require(np.allclose(f[:, [0, 2]], 0), "contact impulse not vertical")
    require(np.allclose(f[::7, 1], -1e4 * x[::7, 1]), "force != k d")
    return "one-sided, vertical, linear"


def contact_equilibrium():
    """Relaxed soft cube on the ground: (total contact force / weight, max penetration / (M g / k))."""
    mesh = box_mesh((2, 2, 2), (0.2, 0.2, 0.2), (0.0, 0.0, 0.0))
    ground = Ground(0.0, stiffness=1e4, damping=10.0)
    sc = SceneConfig(mesh, MaterialParams("NeoHookean", youngs=1e5), SolverSettings(h=0.01, inner=10), gravity=scenes.GRAVITY, ground=ground)
    so = MixedFEMSolver(sc)
    st = relax(so, max_steps=400, tol=1e-9)
    weight = so.mass.sum() / 3 * 9.81
    fc = contact_force(st.q, ground).reshape(-1, 3)[:, 1].sum()
    depth = np.max(np.maximum(ground.height - st.positions[:, 1], 0))
    return float(fc / weight), float(depth / (weight / ground.stiffness))


@check("scene")
def check_contact_equilibrium(rng):
    ratio, depth = contact_equilibrium()
    require(abs(ratio - 1) <= 0.1, f"contact force / weight = {ratio:.3f}")
    require(depth <= 1.0, f"penetration {depth:.2f} x M g / k")
    return f"force/weight {ratio:.3f}, depth {depth:.2f} M g/k"

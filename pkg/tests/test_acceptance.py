"""The ten acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict that is printed in the terminal
summary (and echoed immediately) whether it passes or not.
"""

import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from mixedfem import materials as mat
from mixedfem import scenes
from mixedfem.kinematics import assemble_J
from mixedfem.materials import MaterialParams
from mixedfem.oracles import central_difference, procrustes_objective
from mixedfem.rotation import polar_rotation, random_rotations
from mixedfem.solver import MixedFEMSolver
from mixedfem.validate import (
    _random_element_mesh,
    _random_stretches,
    beam_deflections,
    dense_oracle_errors,
    momentum_drift,
    polar_consistency_errors,
    stiff_drop,
)


def record(n, passed, detail):
    ACCEPTANCE[n] = (bool(passed), detail)
    sys.__stdout__.write(f"\ncriterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}\n")
    sys.__stdout__.flush()
    assert passed, detail


def test_01_operator_oracle():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for kind in ("tet", "tri", "rod"):
        mesh = _random_element_mesh(kind, rng, 10)
        J = assemble_J(mesh)
        X = mesh.rest_positions
        Dm_pinv = [np.linalg.pinv((X[e[1:]] - X[e[0]]).T) for e in mesh.elements]
        for _ in range(100):
            q = rng.normal(size=3 * mesh.n_vertices)
            x = q.reshape(-1, 3)
            Jq = (J @ q).reshape(-1, 3, 3)
            direct = np.array([(x[e[1:]] - x[e[0]]).T @ P for e, P in zip(mesh.elements, Dm_pinv)])
            worst = max(worst, float(np.max(np.abs(Jq - direct))))
    dt = time.perf_counter() - t0
    record(1, worst <= 1e-10 and dt < 5, f"J q vs direct F: max {worst:.1e} (<= 1e-10), {dt:.2f} s (< 5 s)")


def test_02_material_derivatives():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    S = _random_stretches(rng, 100)
    for model in ("ARAP", "Corot", "NeoHookean"):
        p = MaterialParams(model, youngs=1e5, poisson=0.4)
        for s in S:
            eps = 1e-5 * (1 + np.linalg.norm(s))
            g_fd = central_difference(lambda v: mat.energy(v, p), s, eps)
            H_fd = central_difference(lambda v: mat.gradient(v, p), s, eps)
            eg = np.linalg.norm(mat.gradient(s, p) - g_fd) / max(np.linalg.norm(g_fd), 1e-8 * p.mu)
            eH = np.linalg.norm(mat.hessian(s, p, project=False) - H_fd) / np.linalg.norm(H_fd)
            worst = max(worst, eg, eH)
    dt = time.perf_counter() - t0
    record(2, worst <= 1e-5 and dt < 5, f"FD gradient/Hessian rel. error {worst:.1e} (<= 1e-5), {dt:.2f} s (< 5 s)")


def test_03_dense_saddle_oracle():
    t0 = time.perf_counter()
    errs = dense_oracle_errors(np.random.default_rng(3))
    dt = time.perf_counter() - t0
    worst = max(errs.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    record(3, worst <= 1e-8 and dt < 1, f"(dq, l, ds) vs dense KKT: {detail} (<= 1e-8), {dt:.2f} s (< 1 s)")


def test_04_procrustes_maximality():
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    samples = random_rotations(10_000, rng)
    worst, negatives = np.inf, 0
    for k in range(100):
        M = rng.normal(size=(3, 3))
        if (k % 2 == 1) != (np.linalg.det(M) < 0):
            M[:, 0] *= -1
        negatives += np.linalg.det(M) < 0
        best = float(np.max(np.einsum("kij,ij->k", samples, M)))
        worst = min(worst, procrustes_objective(polar_rotation(M), M) - best)
    dt = time.perf_counter() - t0
    record(4, worst >= -1e-9 and dt < 10, f"margin {worst:.2e} (>= -1e-9) over 100 inputs ({negatives} with det < 0), {dt:.2f} s")


def test_05_equilibrium_and_momentum():
    disp = 0.0
    for model in ("ARAP", "Corot", "NeoHookean"):
        solver = MixedFEMSolver(scenes.rest_cube(model))
        disp = max(disp, float(np.max(np.abs(solver.run(100).q - solver.rest_q))))
    drift = momentum_drift(100)
    record(5, disp <= 1e-8 and drift <= 1e-6, f"rest displacement {disp:.1e} m (<= 1e-8), momentum drift {drift:.1e} (<= 1e-6)")


def test_06_polar_consistency():
    errs = polar_consistency_errors()
    worst = max(max(v) for v in errs.values())
    detail = ", ".join(f"{k} S {s:.1e} R {r:.1e}" for k, (s, r) in errs.items())
    record(6, worst <= 1e-5, f"{detail} (<= 1e-5)")


def test_07_stiffness_robustness():
    t0 = time.perf_counter()
    soft, _, soft_finite = stiff_drop(1e6, 300)
    state, dev, stiff_finite = stiff_drop(1e9, 300)
    dt = time.perf_counter() - t0
    sc = scenes.drop(1e9)
    solver = MixedFEMSolver(sc)
    weight = solver.mass.sum() / 3 * 9.81
    depth = float(max(0.0, -state.positions[:, 1].min()))
    v = (state.q - state.q_prev).reshape(-1, 3) / sc.solver.h
    m = solver.mass.reshape(-1, 3)[:, :1]
    v_com = (m * v).sum(axis=0) / m.sum()
    rocking = float(np.max(np.linalg.norm(v - v_com, axis=1)))
    # resting on the plane: penetration bounded by force balance against a single spring
    ok = soft_finite and stiff_finite and dev <= 1e-2 and depth <= weight / sc.ground.stiffness and dt < 300
    record(
        7,
        ok,
        f"E=1e6 finite {soft_finite}, E=1e9 finite {stiff_finite}, stiff rigid deviation {dev:.1e} (<= 1e-2), "
        f"penetration {depth:.4f} m (<= Mg/k = {weight / sc.ground.stiffness:.4f}), centre-of-mass speed {np.linalg.norm(v_com):.1e} m/s, rigid rocking {rocking:.2f} m/s, {dt:.0f} s (< 300 s)",
    )


def test_08_necking_order():
    change = {}
    for model in ("ARAP", "Corot", "NeoHookean"):
        solver = MixedFEMSolver(scenes.stretch(model))
        state = solver.run(100)
        assert np.all(np.isfinite(state.q))
        change[model] = scenes.midsection_width_change(solver.mesh, state.q)
    ok = abs(change["ARAP"]) <= 0.01 and all(change[m] > max(change["ARAP"], 0.0) for m in ("Corot", "NeoHookean"))
    record(8, ok, "mid-section width loss " + ", ".join(f"{k} {v:.2%}" for k, v in change.items()) + " (ARAP <= 1%, others larger)")


def test_09_three_representations():
    results = {}
    for kind in ("tet", "tri", "rod"):
        solver = MixedFEMSolver(scenes.three_ways(kind))
        state = solver.initial_state()
        finite = True
        for _ in range(200):
            state, _ = solver.step(state)
            finite &= bool(np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.s)))
        results[kind] = (solver.mesh.n_elements, finite)
    record(9, all(f for _, f in results.values()), "200 NH steps, finite: " + ", ".join(f"{k} ({n} el) {f}" for k, (n, f) in results.items()))


def test_10_beam_against_newton():
    mixed, ref = beam_deflections()
    rel = abs(mixed - ref) / abs(ref)
    record(10, rel <= 0.05, f"tip deflection {mixed:.5f} m vs Newton {ref:.5f} m, rel. error {rel:.2%} (<= 5%)")

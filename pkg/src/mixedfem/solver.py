"""Backward-Euler time stepping of the mixed (q, s, l, R) formulation.

Each step warm-starts with the forward-Euler predictor, then runs outer
Newton-like iterations. An outer iteration freezes a quadratic model of the
incremental potential around the current ``(q, s)`` and searches for a
direction with alternating projections: a per-element rotation fit (local),
a saddle-point solve for ``(dq, l)`` (global) and the blockwise recovery of
``ds``. A backtracking line search on an augmented-Lagrangian merit accepts
the step.

Sign conventions (checked against a dense equality-constrained QP solve)::

    constraint   c_i = W_i s_i - F_i - R_i N_i      (N_i = n n^T [+ n' n'^T])
    Lagrangian   E(q, s) - sum_i dv_i l_i . c_i
    KKT rhs      [ f_ext - M a / h^2 ;  D (W s - J q - b_N - W H^-1 g) ]
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import materials as mat
from .kinematics import assemble_J, assemble_W, symmat, vec9
from .linsolve import SaddleSystem, factor_preconditioner, solve_saddle
from .rotation import polar_rotation
from .scene import (
    DofProjection,
    SceneConfig,
    contact_force,
    contact_potential,
    contact_stiffness,
    gravity_force,
    lumped_mass,
    pinned_positions,
)

logger = logging.getLogger(__name__)


@dataclass
class SolverState:
    q: np.ndarray  # (3V,)
    q_prev: np.ndarray  # (3V,)
    s: np.ndarray  # (T, 6)
    l: np.ndarray  # (T, 9)
    R: np.ndarray  # (T, 3, 3)
    step: int = 0

    def copy(self):
        return SolverState(self.q.copy(), self.q_prev.copy(), self.s.copy(), self.l.copy(), self.R.copy(), self.step)

    @property
    def positions(self):
        return self.q.reshape(-1, 3)


@dataclass
class StepStats:
    """One row of stats.csv: timings and residuals of a single inner iteration."""

    step: int
    substep: int
    assembly_ms: float
    kkt_solve_ms: float
    rotation_ms: float
    cg_iters: int
    cg_residual: float
    constraint_residual: float
    energy: float

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]


@dataclass
class StepReport:
    substeps: list = field(default_factory=list)
    step_lengths: list = field(default_factory=list)
    stagnated: bool = False
    cg_failures: int = 0
    converged: bool = False


def warm_start(q, q_prev, f_ext, mass, h):
    """Forward-Euler predictor ``2 q - q_prev + h^2 M^-1 f``."""
    return 2.0 * q - q_prev + h * h * f_ext / mass


class LineSearchResult(float):
    """Accepted step length; ``stagnated`` is set when no trial step was admissible."""

    stagnated = False


def line_search(merit, direction_q, direction_s, q, s, shrink=0.5, max_backtracks=20):
    """Largest ``t`` in {1, shrink, shrink^2, ...} that does not increase ``merit``.

    ``merit(q, s)`` returns ``inf`` for inadmissible states (inverted
    Neo-Hookean elements).
    """
    m0 = merit(q, s)
    slack = 1e-12 * max(abs(m0), 1e-300)
    t = 1.0
    for _ in range(max_backtracks + 1):
        mt = merit(q + t * direction_q, s + t * direction_s)
        if np.isfinite(mt) and mt <= m0 + slack:
            return LineSearchResult(t)
        t *= shrink
    out = LineSearchResult(0.0)
    out.stagnated = True
    return out


class MixedFEMSolver:
    """Time integrator for one scene; constant operators are built once here."""

    def __init__(self, scene: SceneConfig):
        self.scene = scene
        self.mesh = scene.mesh
        self.params = scene.material
        self.settings = scene.solver
        mesh = self.mesh

        self.mass = lumped_mass(mesh, self.params.density)
        self.gravity = gravity_force(self.mass, scene.gravity)
        self.J = assemble_J(mesh)
        self.dv = np.asarray(mesh.volumes)
        self.dv9 = np.repeat(self.dv, 9)
        self.frames = mesh.reference_frame_matrices() if mesh.kind != "tet" else None
        self.projection = DofProjection(scene.pinned_vertices, mesh.n_vertices)
        self.rest_q = np.asarray(mesh.rest_positions, dtype=float).ravel()

        free = self.projection.free
        DJ = (self.J.multiply(self.dv9[:, None])).tocsr()
        self.DJ_free = DJ[:, free].tocsr()
        self.mass_free = self.mass[free]
        mu = self.params.mu
        self.precond = factor_preconditioner(
            self.mass_free, self.DJ_free, self.dv9, mu, self.settings.h, self.settings.tikhonov + self.settings.proximal
        )
        self._weights_l = mu / self.dv9
        self._eye9 = np.eye(9)

    # -- state -----------------------------------------------------------------

    def initial_state(self, velocity=None):
        T = self.mesh.n_elements
        q = self.rest_q.copy()
        v = self.scene.initial_velocity if velocity is None else np.asarray(velocity, dtype=float)
        v = np.broadcast_to(np.asarray(v).reshape(-1, 3), (self.mesh.n_vertices, 3)).ravel().copy()
        v[self.projection.pinned] = 0.0
        s = np.tile(np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]), (T, 1))
        return SolverState(q, q - self.settings.h * v, s, np.zeros((T, 9)), np.tile(np.eye(3), (T, 1, 1)))

    def external_force(self, q, velocity=None):
        """Gravity plus ground contact at ``q``."""
        f = self.gravity
        if self.scene.ground is not None:
            f = f + contact_force(q, self.scene.ground, velocity)
        return f

    def contact_model(self, q, q_t):
        """Contact force and diagonal stiffness at ``q`` (zero without a ground plane)."""
        ground = self.scene.ground
        if ground is None:
            return np.zeros_like(q), None
        h = self.settings.h
        return contact_force(q, ground, (q - q_t) / h), contact_stiffness(q, ground, h)

    # -- per-element quantities -----------------------------------------------

    def element_model(self, s):
        """psi, gradient, SPD Hessian and its inverse at ``s``."""
        psi = mat.energy(s, self.params)
        g = mat.gradient(s, self.params)
        H = mat.hessian(s, self.params, project=False)
        if self.params.model == "NeoHookean":
            H = mat.project_spd(H, self.params.eps_spd, absolute=True)
        return psi, g, H, np.linalg.inv(H)

    def frame_term(self, R):
        if self.frames is None:
            return 0.0
        return vec9(R @ self.frames)

    def constraint_residual(self, q, s, R, W=None):
        """Unweighted per-element ``W_i s_i - F_i - R_i N_i``, shape (T, 9)."""
        if W is None:
            W = assemble_W(R)
        Ws = np.einsum("tij,tj->ti", W, s)
        Jq = (self.J @ q).reshape(-1, 9)
        return Ws - Jq - self.frame_term(R)

    def merit(self, q, s, q_t, q_prev, f_ext, l, R, beta_bar):
        """Augmented Lagrangian of the incremental potential at fixed ``l`` and ``R``.

        ``f_ext`` is the constant load; ground contact enters through its potential.
        """
        if not np.all(mat.is_admissible(s, self.params)):
            return np.inf
        h = self.settings.h
        a = q - 2.0 * q_t + q_prev
        c = self.constraint_residual(q, s, R)
        val = 0.5 / h**2 * np.sum(self.mass * a * a) - f_ext @ q
        if self.scene.ground is not None:
            val += contact_potential(q, self.scene.ground, q_t, h)
        val += np.sum(self.dv * mat.energy(s, self.params))
        val -= np.sum(self.dv[:, None] * l * c)
        val += 0.5 * beta_bar * np.sum(self.dv[:, None] * c * c)
        return float(val)

    # -- the four stages of an inner iteration --------------------------------

    def local_step(self, q, s, l, alpha):
        """Per-element rotation fit against ``(lambda/beta + F)(S - N)^T``."""
        F = self.mesh.deformation_gradients(q)
        S = symmat(s)
        if self.frames is not None:
            S = S - self.frames
        lam = l.reshape(-1, 3, 3)
        beta = np.maximum(alpha * np.linalg.norm(l, axis=1), self.params.mu)
        target = (lam / beta[:, None, None] + F) @ np.swapaxes(S, 1, 2)
        return polar_rotation(target), beta

    def quadratic_model(self, q, s, q_t, q_prev, f_ext, R, g, Hinv, l_ref=None, stiffness=None):
        """Saddle system and right-hand side of the frozen quadratic model at ``(q, s)``.

        The multiplier block carries ``(tikhonov + proximal)/mu`` of extra
        compliance; the proximal part is centred on ``l_ref`` so it vanishes
        once the multipliers stop changing.
        """
        cfg = self.settings
        h = cfg.h
        W = assemble_W(R)
        WHinv = W @ Hinv
        reg = (cfg.tikhonov + cfg.proximal) / self.params.mu
        compliance = self.dv[:, None, None] * (WHinv @ np.swapaxes(W, 1, 2) + reg * self._eye9)
        free = self.projection.free
        K = None if stiffness is None else stiffness[free]
        system = SaddleSystem(self.mass_free, self.DJ_free, compliance, h, self._weights_l, K)
        a = q - 2.0 * q_t + q_prev
        rq = (f_ext - self.mass * a / h**2)[free]
        c = self.constraint_residual(q, s, R, W)
        rl = self.dv[:, None] * (c - np.einsum("tij,tj->ti", WHinv, g))
        if l_ref is not None and cfg.proximal:
            rl -= self.dv[:, None] * (cfg.proximal / self.params.mu) * l_ref
        return system, np.concatenate([rq, rl.ravel()]), W

    def global_step(self, system, rhs):
        """Solve the saddle system; returns full-length ``dq`` (zero on pinned DOFs), ``l`` and CG info."""
        cfg = self.settings
        res = solve_saddle(system, rhs, self.precond, cfg.linear_solver, cfg.cg_tol, cfg.cg_maxiter)
        dq_free, l = system.split(res.x)
        dq = np.zeros(self.projection.n_full)
        dq[self.projection.free] = dq_free
        return dq, l.reshape(-1, 9), res

    @staticmethod
    def s_update(W, Hinv, g, l):
        """``ds = H^-1 (W^T l - g)`` blockwise."""
        Wtl = np.einsum("tji,tj->ti", W, l)
        return np.einsum("tij,tj->ti", Hinv, Wtl - g)

    # -- time step --------------------------------------------------------------

    def step(self, state: SolverState):
        """Advance one timestep. Returns ``(new_state, StepReport)``; ``state`` is not modified."""
        cfg = self.settings
        h = cfg.h
        report = StepReport()
        q_t, q_prev = state.q, state.q_prev
        f_ext = self.gravity

        q = warm_start(q_t, q_prev, f_ext, self.mass, h)
        if self.projection.pinned.size:
            target = pinned_positions(self.scene.pins, self.rest_q, (state.step + 1) * h)
            q[self.projection.pinned] = target[self.projection.pinned]
        s = state.s.copy()
        l = state.l.copy()
        R = state.R.copy()
        bbox = self.mesh.bbox_size
        substep = 0

        for _outer in range(cfg.outer):
            t0 = time.perf_counter()
            _, g, _, Hinv = self.element_model(s)
            f_contact, K_contact = self.contact_model(q, q_t)
            f_model = f_ext + f_contact
            t_model = time.perf_counter() - t0
            dq = np.zeros_like(q)
            ds = np.zeros_like(s)
            beta = np.full(len(s), self.params.mu)
            alpha = cfg.alpha0
            for inner in range(cfg.inner):
                t0 = time.perf_counter()
                R_new, beta = self.local_step(q + dq, s + ds, l, alpha)
                t_rot = time.perf_counter() - t0
                if not cfg.fixed_iterations and inner > 0:
                    change = np.max(np.linalg.norm(R_new - R, axis=(1, 2)))
                    if change <= cfg.rotation_tol:
                        break
                R = R_new

                t0 = time.perf_counter()
                system, rhs, W = self.quadratic_model(q, s, q_t, q_prev, f_model, R, g, Hinv, l, K_contact)
                t_asm = time.perf_counter() - t0 + (t_model if inner == 0 else 0.0)

                t0 = time.perf_counter()
                dq, l, cg = self.global_step(system, rhs)
                t_kkt = time.perf_counter() - t0
                if not cg.converged:
                    report.cg_failures += 1

                t0 = time.perf_counter()
                ds = self.s_update(W, Hinv, g, l)
                t_rot += time.perf_counter() - t0
                alpha *= cfg.alpha_growth

                c = self.constraint_residual(q + dq, s + ds, R, W)
                energy = self.merit(q + dq, s + ds, q_t, q_prev, f_ext, l, R, float(np.mean(beta)))
                report.substeps.append(
                    StepStats(
                        state.step,
                        substep,
                        1e3 * t_asm,
                        1e3 * t_kkt,
                        1e3 * t_rot,
                        cg.iterations,
                        cg.residual,
                        float(np.max(np.abs(c))) if c.size else 0.0,
                        energy,
                    )
                )
                substep += 1

            beta_bar = float(np.mean(beta))

            def merit(qq, ss):
                return self.merit(qq, ss, q_t, q_prev, f_ext, l, R, beta_bar)

            t = line_search(merit, dq, ds, q, s, cfg.ls_shrink, cfg.ls_max)
            report.step_lengths.append(float(t))
            if t.stagnated:
                report.stagnated = True
                logger.debug("line search stagnated at step %d", state.step)
            q = q + t * dq
            s = s + t * ds

            if not cfg.fixed_iterations:
                c = self.constraint_residual(q, s, R)
                if np.max(np.abs(t * dq)) <= cfg.outer_tol * bbox and np.max(np.abs(c)) <= cfg.constraint_tol:
                    report.converged = True
                    break

        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(s))):
            raise FloatingPointError(f"non-finite state at step {state.step}")
        new_state = SolverState(q, q_t.copy(), s, l, R, state.step + 1)
        return new_state, report

    def run(self, n_steps, state=None, callback=None):
        """Advance ``n_steps`` steps; ``callback(state, report)`` is called after each."""
        state = self.initial_state() if state is None else state
        for _ in range(n_steps):
            state, report = self.step(state)
            if callback is not None:
                callback(state, report)
        return state


def relax(solver, state=None, max_steps=50, tol=1e-7):
    """Quasi-static equilibrium by stepping with the velocity zeroed after every step.

    Stops once no coordinate moves more than ``tol * bbox`` in a step. Each
    step's fixed point is a static equilibrium because the inertia term
    vanishes there.
    """
    state = solver.initial_state(np.zeros(3)) if state is None else state.copy()
    state.q_prev = state.q.copy()
    bbox = solver.mesh.bbox_size
    for _ in range(max_steps):
        new, _ = solver.step(state)
        moved = float(np.max(np.abs(new.q - state.q)))
        new.q_prev = new.q.copy()
        state = new
        if moved <= tol * bbox:
            break
    return state


def with_settings(scene, **overrides):
    """Copy of ``scene`` with solver settings replaced."""
    return replace(scene, solver=replace(scene.solver, **overrides))

"""Scene description: material, time stepping, pins, gravity and ground contact.

Scene files are TOML. Schema (every key optional unless marked)::

    [mesh]
    path = "bunny.node"          # required unless `generate` is given
    kind = "tet"                 # tet | tri | rod
    generate = "box"             # box | blob | grid | polyline (instead of path)
    shape = [4, 2, 2]            # generator resolution
    size = [1.0, 0.5, 0.5]       # generator extent (m)
    origin = [0.0, 0.0, 0.0]
    as = "tet"                   # surface -> "tri", edges -> "rod" (derived from a tet mesh)
    thickness = 1e-3             # shell thickness (m)
    cross_section = 1e-6         # rod cross-section area (m^2)

    [material]                   # Table-1 names are used verbatim
    Model = "NH"                 # NH | Corot | ARAP
    rho = 1e3                    # also accepted as "ρ"
    E = 1e5
    nu = 0.45                    # also accepted as "ν"

    [solver]
    h = 0.01                     # timestep (s)
    Substeps = 5                 # inner iterations m
    outer = 1                    # outer iterations n
    fixed_iterations = true      # ignore convergence tests
    cg_tol = 1e-7
    cg_maxiter = 0               # 0 -> automatic
    tikhonov = 1e-6              # relative to the 1/mu compliance scale
    proximal = 1.0               # multiplier proximal weight, same scale
    linear_solver = "pcg"        # pcg | direct | auto (pcg, direct fallback)

    gravity = [0.0, -9.81, 0.0]

    [[pins]]
    indices = [0, 1, 2]          # and/or
    box = [[xmin, ymin, zmin], [xmax, ymax, zmax]]
    velocity = [0.1, 0.0, 0.0]   # constant-velocity motion, or
    keyframes = [{t = 0.0, translation = [0, 0, 0]}, {t = 1.0, translation = [0.1, 0, 0], axis = [0, 0, 1], angle = 0.0}]

    [ground]
    height = 0.0
    normal = [0.0, 1.0, 0.0]
    stiffness = 1e5              # N/m
    damping = 10.0               # N s/m

    [initial]
    velocity = [0.0, 0.0, 0.0]
    translation = [0.0, 0.0, 0.0]
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import tomli

from . import meshgen
from .materials import MaterialParams
from .mesh import SimMesh, edge_mesh, load_mesh, surface_mesh
from .rotation import axis_angle


class SceneError(ValueError):
    """Invalid scene description; ``field`` names the offending key."""

    def __init__(self, field_name, message):
        self.field = field_name
        self.message = message
        super().__init__(f"{field_name}: {message}")


@dataclass
class PinGroup:
    indices: np.ndarray
    velocity: np.ndarray | None = None
    keyframes: list = field(default_factory=list)  # (t, translation, axis, angle)

    def offsets(self, rest, t):
        """Positions of the group's vertices at time ``t`` given their initial positions ``rest``."""
        if self.velocity is not None:
            return rest + t * self.velocity
        if not self.keyframes:
            return rest
        times = [k[0] for k in self.keyframes]
        if t <= times[0]:
            key = self.keyframes[0]
            return _apply_key(rest, key[1], key[2], key[3])
        if t >= times[-1]:
            key = self.keyframes[-1]
            return _apply_key(rest, key[1], key[2], key[3])
        j = int(np.searchsorted(times, t, side="right")) - 1
        (t0, tr0, ax0, an0), (t1, tr1, ax1, an1) = self.keyframes[j], self.keyframes[j + 1]
        w = (t - t0) / (t1 - t0)
        axis = ax1 if an1 != 0 else ax0
        return _apply_key(rest, (1 - w) * tr0 + w * tr1, axis, (1 - w) * an0 + w * an1)


def _apply_key(rest, translation, axis, angle):
    if angle == 0:
        return rest + translation
    c = rest.mean(axis=0)
    return (rest - c) @ axis_angle(axis, angle).T + c + translation


@dataclass
class Ground:
    height: float = 0.0
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    stiffness: float = 1e5
    damping: float = 10.0

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=float)
        self.normal = self.normal / np.linalg.norm(self.normal)
        if self.stiffness < 0 or self.damping < 0:
            raise SceneError("ground", "stiffness and damping must be non-negative")


@dataclass
class SolverSettings:
    h: float = 0.01
    inner: int = 5
    outer: int = 1
    fixed_iterations: bool = True
    cg_tol: float = 1e-7
    cg_maxiter: int | None = None
    tikhonov: float = 1e-6
    proximal: float = 1.0
    linear_solver: str = "pcg"
    alpha0: float = 10.0
    alpha_growth: float = 1.5
    ls_shrink: float = 0.5
    ls_max: int = 20
    outer_tol: float = 1e-6
    constraint_tol: float = 1e-6
    rotation_tol: float = 1e-8

    def __post_init__(self):
        if not self.h > 0:
            raise SceneError("solver.h", "timestep must be positive")
        if self.linear_solver not in ("direct", "pcg", "auto"):
            raise SceneError("solver.linear_solver", "expected direct, pcg or auto")
        if self.tikhonov < 0 or self.proximal < 0:
            raise SceneError("solver.tikhonov", "regularisation weights must be non-negative")
        if self.inner < 1 or self.outer < 1:
            raise SceneError("solver.Substeps", "iteration budgets must be >= 1")


@dataclass
class SceneConfig:
    mesh: SimMesh
    material: MaterialParams
    solver: SolverSettings = field(default_factory=SolverSettings)
    gravity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pins: list = field(default_factory=list)
    ground: Ground | None = None
    initial_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    name: str = "scene"

    def __post_init__(self):
        # private copies: callers often pass shared module-level vectors
        self.gravity = np.array(self.gravity, dtype=float).reshape(3)
        self.initial_velocity = np.array(self.initial_velocity, dtype=float).reshape(-1, 3)
        for k, group in enumerate(self.pins):
            if group.indices.size and (group.indices.min() < 0 or group.indices.max() >= self.mesh.n_vertices):
                raise SceneError(f"pins[{k}].indices", "vertex index out of range")

    @property
    def pinned_vertices(self):
        if not self.pins:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate([g.indices for g in self.pins]))


def select_box(points, lo, hi, tol=1e-9):
    lo, hi = np.asarray(lo, float) - tol, np.asarray(hi, float) + tol
    return np.flatnonzero(np.all((points >= lo) & (points <= hi), axis=1))


class DofProjection:
    """Map between full position vectors and the free-DOF subvector."""

    def __init__(self, pinned_vertices, n_vertices):
        pinned_vertices = np.asarray(pinned_vertices, dtype=np.int64)
        if pinned_vertices.size and (pinned_vertices.min() < 0 or pinned_vertices.max() >= n_vertices):
            raise IndexError("pinned vertex index out of range")
        mask = np.ones(3 * n_vertices, dtype=bool)
        for a in range(3):
            mask[3 * pinned_vertices + a] = False
        self.n_full = 3 * n_vertices
        self.free = np.flatnonzero(mask)
        self.pinned = np.flatnonzero(~mask)

    @property
    def n_free(self):
        return self.free.size

    def project(self, q):
        return np.asarray(q)[self.free]

    def unproject(self, q_free, q_reference):
        """Full vector with free entries from ``q_free`` and pinned entries from ``q_reference``."""
        out = np.array(q_reference, dtype=float, copy=True)
        out[self.free] = q_free
        return out


def build_projection(pins, n_vertices):
    if isinstance(pins, (list, tuple)) and pins and isinstance(pins[0], PinGroup):
        idx = np.unique(np.concatenate([g.indices for g in pins]))
    else:
        idx = np.asarray(pins, dtype=np.int64).ravel()
    return DofProjection(idx, n_vertices)


def pinned_positions(pins, rest_q, t):
    """Full position vector with each pin group moved to its scripted pose at time ``t``."""
    x = np.array(rest_q, dtype=float).reshape(-1, 3)
    for g in pins:
        x[g.indices] = g.offsets(np.asarray(rest_q).reshape(-1, 3)[g.indices], t)
    return x.ravel()


def lumped_mass(mesh, density):
    """Per-DOF lumped mass (3|V|,): each element splits ``rho dv`` equally over its vertices."""
    if not density > 0:
        raise ValueError("density must be positive")
    k = mesh.verts_per_element
    per_vertex = np.zeros(mesh.n_vertices)
    np.add.at(per_vertex, mesh.elements.ravel(), np.repeat(density * mesh.volumes / k, k))
    return np.repeat(per_vertex, 3)


def gravity_force(mass, gravity):
    return mass * np.tile(np.asarray(gravity, dtype=float), mass.size // 3)


def contact_force(q, ground, velocity=None):
    """One-sided linear penalty springs against a plane, with normal damping while penetrating."""
    x = np.asarray(q, dtype=float).reshape(-1, 3)
    depth = ground.height - x @ ground.normal
    inside = depth > 0
    mag = np.where(inside, ground.stiffness * depth, 0.0)
    if velocity is not None and ground.damping > 0:
        vn = np.asarray(velocity, dtype=float).reshape(-1, 3) @ ground.normal
        mag = mag - np.where(inside, ground.damping * vn, 0.0)
    return (mag[:, None] * ground.normal).ravel()


def contact_potential(q, ground, q_t, h):
    """Penalty energy plus the incremental damping potential ``c/(2h) (n.(q - q_t))^2`` of penetrating vertices.

    Its negative gradient at fixed active set is :func:`contact_force` with velocity ``(q - q_t)/h``.
    """
    x = np.asarray(q, dtype=float).reshape(-1, 3)
    depth = ground.height - x @ ground.normal
    inside = depth > 0
    dn = (x - np.asarray(q_t, dtype=float).reshape(-1, 3)) @ ground.normal
    return float(0.5 * ground.stiffness * np.sum(depth[inside] ** 2) + 0.5 * ground.damping / h * np.sum(dn[inside] ** 2))


def contact_stiffness(q, ground, h):
    """Diagonal of the contact Hessian ``(k + c/h) n n^T`` over penetrating vertices, per DOF."""
    x = np.asarray(q, dtype=float).reshape(-1, 3)
    inside = (ground.height - x @ ground.normal) > 0
    return (inside[:, None] * (ground.stiffness + ground.damping / h) * ground.normal**2).ravel()


# ---------------------------------------------------------------------------
# TOML loading

_GREEK = {"ρ": "rho", "ν": "nu"}


def _vec(table, key, where, default=None, n=3):
    if key not in table:
        return default
    try:
        v = np.asarray(table[key], dtype=float).ravel()
    except (TypeError, ValueError):
        raise SceneError(f"{where}.{key}", "expected a list of numbers") from None
    if n is not None and v.size != n:
        raise SceneError(f"{where}.{key}", f"expected {n} numbers, got {v.size}")
    return v


def _num(table, key, where, default):
    if key not in table:
        return default
    val = table[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise SceneError(f"{where}.{key}", f"expected a number, got {val!r}")
    return float(val)


def _build_mesh(tab, base_dir):
    kind = tab.get("kind", "tet")
    thickness = _num(tab, "thickness", "mesh", 1e-3)
    cross = _num(tab, "cross_section", "mesh", 1e-6)
    origin = tuple(_vec(tab, "origin", "mesh", np.zeros(3)))
    if "generate" in tab:
        gen = tab["generate"]
        if gen == "box":
            shape = tuple(int(v) for v in tab.get("shape", [2, 2, 2]))
            size = tuple(_vec(tab, "size", "mesh", np.ones(3)))
            X, E = meshgen.box_tet_mesh(shape, size, origin)
            base_kind = "tet"
        elif gen == "blob":
            res = int(tab.get("resolution", 6))
            radius = _num(tab, "radius", "mesh", 0.5)
            X, E = meshgen.blob_tet_mesh(res, radius, origin)
            base_kind = "tet"
        elif gen == "grid":
            shape = tuple(int(v) for v in tab.get("shape", [4, 4]))
            size = tuple(_vec(tab, "size", "mesh", np.ones(2), n=2))
            X, E = meshgen.grid_tri_mesh(shape, size, origin)
            base_kind = "tri"
        elif gen == "polyline":
            X, E = meshgen.polyline(int(tab.get("segments", 4)), _num(tab, "length", "mesh", 1.0), origin=origin)
            base_kind = "rod"
        else:
            raise SceneError("mesh.generate", f"unknown generator {gen!r}")
        mesh = SimMesh.from_arrays(X, E, base_kind, thickness=thickness, cross_section=cross)
    elif "path" in tab:
        path = tab["path"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        load_kind = "tet" if tab.get("as") in ("tri", "rod") else kind
        mesh = load_mesh(path, load_kind, thickness=thickness, cross_section=cross)
    else:
        raise SceneError("mesh", "either `path` or `generate` is required")
    target = tab.get("as", kind if "generate" not in tab else mesh.kind)
    if target != mesh.kind:
        if mesh.kind != "tet":
            raise SceneError("mesh.as", "derived representations need a tet mesh")
        if target == "tri":
            mesh = surface_mesh(mesh, thickness)
        elif target == "rod":
            mesh = edge_mesh(mesh, cross)
        else:
            raise SceneError("mesh.as", f"unknown representation {target!r}")
    return mesh


def _material(tab):
    tab = {_GREEK.get(k, k): v for k, v in tab.items()}
    known = {"Model", "rho", "E", "nu"}
    extra = set(tab) - known
    if extra:
        raise SceneError(f"material.{sorted(extra)[0]}", "unknown key")
    values = dict(
        model=tab.get("Model", "NH"),
        density=_num(tab, "rho", "material", 1e3),
        youngs=_num(tab, "E", "material", 1e5),
        poisson=_num(tab, "nu", "material", 0.45),
    )
    try:
        return MaterialParams(**values)
    except ValueError as exc:
        raise SceneError("material", str(exc)) from None


def _solver(tab):
    maxiter = tab.get("cg_maxiter", 0)
    return SolverSettings(
        h=_num(tab, "h", "solver", 0.01),
        inner=int(tab.get("Substeps", tab.get("inner", 5))),
        outer=int(tab.get("outer", 1)),
        fixed_iterations=bool(tab.get("fixed_iterations", True)),
        cg_tol=_num(tab, "cg_tol", "solver", 1e-7),
        cg_maxiter=int(maxiter) or None,
        tikhonov=_num(tab, "tikhonov", "solver", 1e-6),
        proximal=_num(tab, "proximal", "solver", 1.0),
        linear_solver=str(tab.get("linear_solver", "pcg")),
    )


def _pins(entries, mesh):
    groups = []
    for k, entry in enumerate(entries):
        where = f"pins[{k}]"
        idx = [np.asarray(entry.get("indices", []), dtype=np.int64)]
        if "box" in entry:
            try:
                lo, hi = entry["box"]
            except (TypeError, ValueError):
                raise SceneError(f"{where}.box", "expected [[xmin,ymin,zmin],[xmax,ymax,zmax]]") from None
            idx.append(select_box(mesh.rest_positions, lo, hi))
        indices = np.unique(np.concatenate(idx))
        if indices.size == 0:
            raise SceneError(where, "selects no vertices")
        if indices.max() >= mesh.n_vertices:
            raise SceneError(f"{where}.indices", "vertex index out of range")
        keys = []
        for kf in entry.get("keyframes", []):
            keys.append(
                (
                    float(kf["t"]),
                    _vec(kf, "translation", f"{where}.keyframes", np.zeros(3)),
                    _vec(kf, "axis", f"{where}.keyframes", np.array([0.0, 0.0, 1.0])),
                    float(kf.get("angle", 0.0)),
                )
            )
        keys.sort(key=lambda k_: k_[0])
        groups.append(PinGroup(indices, _vec(entry, "velocity", where), keys))
    return groups


def scene_from_dict(data, base_dir=".", name="scene"):
    known = {"mesh", "material", "solver", "gravity", "pins", "ground", "initial"}
    extra = set(data) - known
    if extra:
        raise SceneError(sorted(extra)[0], "unknown top-level key")
    if "mesh" not in data:
        raise SceneError("mesh", "missing table")
    mesh = _build_mesh(data["mesh"], base_dir)
    ground = None
    if "ground" in data:
        g = data["ground"]
        ground = Ground(
            height=_num(g, "height", "ground", 0.0),
            normal=_vec(g, "normal", "ground", np.array([0.0, 1.0, 0.0])),
            stiffness=_num(g, "stiffness", "ground", 1e5),
            damping=_num(g, "damping", "ground", 10.0),
        )
    init = data.get("initial", {})
    translation = _vec(init, "translation", "initial", None)
    if translation is not None:
        mesh = SimMesh.from_arrays(
            mesh.rest_positions + translation, mesh.elements, mesh.kind, mesh.thickness, mesh.cross_section
        )
    return SceneConfig(
        mesh=mesh,
        material=_material(data.get("material", {})),
        solver=_solver(data.get("solver", {})),
        gravity=_vec(data, "gravity", "scene", np.zeros(3)),
        pins=_pins(data.get("pins", []), mesh),
        ground=ground,
        initial_velocity=_vec(init, "velocity", "initial", np.zeros(3)),
        name=name,
    )


def load_scene(path):
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise SceneError("scene", f"TOML syntax error: {exc}") from None
    return scene_from_dict(data, os.path.dirname(os.path.abspath(path)), os.path.splitext(os.path.basename(path))[0])

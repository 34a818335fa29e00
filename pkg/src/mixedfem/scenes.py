"""Built-in scenes used by the validation suite, the benchmarks and the tests."""

from __future__ import annotations

import numpy as np

from .materials import MaterialParams
from .mesh import SimMesh, edge_mesh, surface_mesh
from .meshgen import blob_tet_mesh, box_mesh
from .oracles import kabsch
from .scene import Ground, PinGroup, SceneConfig, SolverSettings, select_box

GRAVITY = np.array([0.0, -9.81, 0.0])


def cantilever(shape=(6, 2, 2), size=(1.0, 0.2, 0.2), model="NH", youngs=5e6, poisson=0.3, **solver):
    """Beam along x with its x = 0 face pinned, under gravity."""
    mesh = box_mesh(shape, size)
    fixed = select_box(mesh.rest_positions, [0, -1, -1], [0, 2 * size[1], 2 * size[2]])
    return SceneConfig(
        mesh,
        MaterialParams(model, youngs=youngs, poisson=poisson),
        SolverSettings(**solver),
        gravity=GRAVITY,
        pins=[PinGroup(fixed)],
        name="cantilever",
    )


def tip_vertices(mesh):
    x = mesh.rest_positions[:, 0]
    return np.flatnonzero(np.isclose(x, x.max()))


def drop(youngs=1e9, model="Corot", resolution=6, height=0.05, **solver):
    """Blob released just above a ground plane (the stiff/soft drop test)."""
    settings = dict(h=0.01, inner=15, outer=1)
    settings.update(solver)
    X, T = blob_tet_mesh(resolution, 0.5, (0.0, 0.5 + height, 0.0))
    mesh = SimMesh.from_arrays(X, T, "tet")
    return SceneConfig(
        mesh,
        MaterialParams(model, youngs=youngs, poisson=0.45),
        SolverSettings(**settings),
        gravity=GRAVITY,
        ground=Ground(0.0),
        name=f"drop_E{youngs:g}",
    )


def rigid_deviation(mesh, q):
    """Per-element ``|F - R_fit|_F`` against the best-fit rigid motion of all vertices."""
    x = np.asarray(q).reshape(-1, 3)
    R, _ = kabsch(mesh.rest_positions, x)
    return np.linalg.norm(mesh.deformation_gradients(q) - R, axis=(1, 2))


def stretch(model, resolution=8, speed=0.1, **solver):
    """Thin square plate pulled apart by its left and right faces."""
    settings = dict(h=0.02, inner=15)
    settings.update(solver)
    mesh = box_mesh((resolution, resolution, 1), (1.0, 1.0, 0.1))
    X = mesh.rest_positions
    left = select_box(X, [0, -1, -1], [0, 2, 2])
    right = select_box(X, [1, -1, -1], [1, 2, 2])
    pins = [PinGroup(left, velocity=np.array([-speed, 0, 0])), PinGroup(right, velocity=np.array([speed, 0, 0]))]
    return SceneConfig(
        mesh, MaterialParams(model, youngs=1e5, poisson=0.45), SolverSettings(**settings), pins=pins, name=f"stretch_{model}"
    )


def midsection_width_change(mesh, q):
    """Relative loss of width (along y) of the vertex column at mid-length."""
    X = mesh.rest_positions
    mid = np.flatnonzero(np.isclose(X[:, 0], 0.5 * (X[:, 0].min() + X[:, 0].max())))
    x = np.asarray(q).reshape(-1, 3)
    w0 = np.ptp(X[mid, 1])
    return float(1.0 - np.ptp(x[mid, 1]) / w0)


def three_ways(kind, model="NH", resolution=5, **solver):
    """One blob simulated as a volume, as its boundary shell or as its edge network.

    The top cap is pinned and the body hangs under gravity above a ground plane.
    """
    settings = dict(h=0.01, inner=10)
    settings.update(solver)
    X, T = blob_tet_mesh(resolution, 0.5, (0.0, 0.6, 0.0))
    mesh = SimMesh.from_arrays(X, T, "tet")
    if kind == "tri":
        mesh = surface_mesh(mesh, thickness=0.01)
    elif kind == "rod":
        mesh = edge_mesh(mesh, cross_section=1e-4)
    elif kind != "tet":
        raise ValueError(f"unknown representation {kind!r}")
    y = mesh.rest_positions[:, 1]
    top = np.flatnonzero(y > y.max() - 0.15)
    return SceneConfig(
        mesh,
        MaterialParams(model, youngs=1e5, poisson=0.45),
        SolverSettings(**settings),
        gravity=GRAVITY,
        pins=[PinGroup(top)],
        ground=Ground(0.0),
        name=f"blob_{kind}",
    )


def rest_cube(model="NH", **solver):
    return SceneConfig(box_mesh((2, 2, 2)), MaterialParams(model), SolverSettings(**solver), name="rest_cube")


def floating_tet(velocity=(0.3, -0.2, 0.5), model="NH", **solver):
    X = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    mesh = SimMesh.from_arrays(X, np.array([[0, 1, 2, 3]]), "tet")
    return SceneConfig(mesh, MaterialParams(model), SolverSettings(**solver), initial_velocity=velocity, name="floating_tet")

import numpy as np
import pytest

from mixedfem import scenes
from mixedfem.mesh import SimMesh
from mixedfem.meshgen import box_mesh, polyline
from mixedfem.oracles import central_difference
from mixedfem.scene import (
    DofProjection,
    Ground,
    PinGroup,
    SceneError,
    build_projection,
    contact_force,
    contact_potential,
    contact_stiffness,
    load_scene,
    lumped_mass,
    pinned_positions,
    scene_from_dict,
)
from mixedfem.solver import MixedFEMSolver
from mixedfem.validate import contact_equilibrium

SCENE_DIR = __import__("pathlib").Path(__file__).resolve().parents[1] / "scenes"


def test_no_pins_is_identity(rng):
    proj = build_projection([], 4)
    q = rng.normal(size=12)
    assert proj.n_free == 12
    assert np.array_equal(proj.project(q), q)


def test_pinned_rod_vertex():
    X, E = polyline(1)
    proj = build_projection([0], 2)
    assert proj.n_free == 3
    q = np.arange(6.0)
    back = proj.unproject(proj.project(q) + 1.0, q)
    assert np.array_equal(back[:3], q[:3])


def test_projection_idempotent(rng):
    proj = DofProjection([1, 4], 6)
    q = rng.normal(size=18)
    p = proj.project(q)
    assert np.array_equal(proj.project(proj.unproject(p, rng.normal(size=18))), p)


def test_projection_rejects_bad_index():
    with pytest.raises(IndexError):
        DofProjection([5], 3)


def test_scripted_pin_exact():
    sc = scenes.stretch("ARAP", resolution=2, inner=3)
    solver = MixedFEMSolver(sc)
    group = sc.pins[1]
    x0 = solver.mesh.rest_positions[group.indices]
    state = solver.run(7)
    assert np.array_equal(state.positions[group.indices], x0 + 7 * sc.solver.h * group.velocity)


def test_keyframe_interpolation():
    g = PinGroup(np.array([0]), keyframes=[(0.0, np.zeros(3), np.array([0, 0, 1.0]), 0.0), (1.0, np.array([2.0, 0, 0]), np.array([0, 0, 1.0]), 0.0)])
    rest = np.zeros((1, 3))
    assert np.allclose(g.offsets(rest, 0.25), [[0.5, 0, 0]])
    assert np.allclose(g.offsets(rest, 5.0), [[2.0, 0, 0]])
    assert np.allclose(pinned_positions([g], np.zeros(3), 0.5), [1.0, 0, 0])


def test_contact_zero_above_plane():
    assert not np.any(contact_force(np.array([0.0, 0.1, 0.0]), Ground(0.0)))


def test_contact_linear_law():
    f = contact_force(np.array([0.3, -0.01, 0.2]), Ground(0.0, stiffness=1e4, damping=0.0))
    assert np.allclose(f, [0.0, 100.0, 0.0])


def test_contact_damping_opposes_velocity():
    g = Ground(0.0, stiffness=0.0, damping=10.0)
    f = contact_force(np.array([0.0, -0.01, 0.0]), g, velocity=np.array([0.0, -2.0, 0.0]))
    assert np.allclose(f, [0.0, 20.0, 0.0])


def test_contact_potential_gradient(rng):
    g = Ground(0.0, stiffness=1e4, damping=10.0)
    h = 0.01
    q = rng.normal(size=30) * 0.1
    q_t = q + 0.01 * rng.normal(size=30)
    fd = central_difference(lambda x: contact_potential(x, g, q_t, h), q, 1e-8)
    assert np.allclose(-fd, contact_force(q, g, (q - q_t) / h), rtol=1e-5, atol=1e-6)
    diag = contact_stiffness(q, g, h).reshape(-1, 3)
    inside = q.reshape(-1, 3)[:, 1] < 0
    assert np.allclose(diag[inside, 1], 1e4 + 10.0 / h) and not np.any(diag[~inside])


def test_lumped_mass_unit_volume_tet():
    X = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]) * 6 ** (1 / 3)
    m = lumped_mass(SimMesh.from_arrays(X, [[0, 1, 2, 3]], "tet"), 1000.0)
    assert np.allclose(m, 250.0)


def test_mass_refinement_invariance():
    coarse = lumped_mass(box_mesh((2, 1, 1), (1.0, 0.5, 0.3)), 700.0).sum()
    fine = lumped_mass(box_mesh((4, 2, 2), (1.0, 0.5, 0.3)), 700.0).sum()
    assert abs(coarse - fine) <= 1e-10 * fine
    assert fine / 3 == pytest.approx(700.0 * 0.15, rel=1e-12)


def test_zero_density_rejected():
    with pytest.raises(ValueError):
        lumped_mass(box_mesh(), 0.0)


def test_contact_equilibrium_of_soft_cube():
    ratio, depth = contact_equilibrium()
    assert abs(ratio - 1.0) <= 0.1
    assert depth <= 1.0


@pytest.mark.parametrize("path", sorted(SCENE_DIR.glob("*.toml")), ids=lambda p: p.stem)
def test_bundled_scenes_load(path):
    sc = load_scene(path)
    assert sc.mesh.n_elements > 0 and sc.solver.h > 0


def test_table_names_and_greek_keys():
    sc = scene_from_dict(
        {"mesh": {"generate": "box"}, "material": {"Model": "Corot", "ρ": 500.0, "E": 1e9, "ν": 0.45}, "solver": {"Substeps": 15}}
    )
    assert (sc.material.model, sc.material.density, sc.material.youngs, sc.material.poisson) == ("Corot", 500.0, 1e9, 0.45)
    assert sc.solver.inner == 15


def test_derived_representations():
    base = {"generate": "blob", "resolution": 4}
    assert scene_from_dict({"mesh": {**base, "as": "tri"}}).mesh.kind == "tri"
    assert scene_from_dict({"mesh": {**base, "as": "rod"}}).mesh.kind == "rod"


@pytest.mark.parametrize(
    "data, field",
    [
        ({"material": {}}, "mesh"),
        ({"mesh": {"generate": "box"}, "material": {"E": "soft"}}, "material.E"),
        ({"mesh": {"generate": "box"}, "material": {"G": 1.0}}, "material.G"),
        ({"mesh": {"generate": "box"}, "solver": {"h": -0.1}}, "solver.h"),
        ({"mesh": {"generate": "box"}, "solver": {"linear_solver": "lu"}}, "solver.linear_solver"),
        ({"mesh": {"generate": "box"}, "pins": [{"indices": [999]}]}, "pins[0].indices"),
        ({"mesh": {"generate": "box"}, "pins": [{"box": [[5, 5, 5], [6, 6, 6]]}]}, "pins[0]"),
        ({"mesh": {"generate": "box"}, "ground": {"stiffness": -1.0}}, "ground"),
        ({"mesh": {"generate": "torus"}}, "mesh.generate"),
        ({"mesh": {"generate": "box"}, "gravity": [0, -9.81]}, "scene.gravity"),
        ({"mesh": {"generate": "box"}, "camera": {}}, "camera"),
    ],
)
def test_schema_errors_name_the_field(data, field):
    with pytest.raises(SceneError) as err:
        scene_from_dict(data)
    assert err.value.field == field


def test_toml_syntax_error(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[mesh\n")
    with pytest.raises(SceneError) as err:
        load_scene(path)
    assert err.value.field == "scene"

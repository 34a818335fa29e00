import csv
import os
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mixedfem.cli import TIMING_COLUMNS, main, read_obj_vertices, resolve_threads, simulate, write_obj
from mixedfem import scenes
from mixedfem.meshgen import box_mesh, polyline
from mixedfem.mesh import SimMesh

SCENES = Path(__file__).resolve().parents[1] / "scenes"


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_rest_cube_run(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--scene", str(SCENES / "rest_cube.toml"), "--out", str(out), "--frames", "10"]) == 0
    frames = sorted(out.glob("frame_*.obj"))
    assert [f.name for f in frames] == [f"frame_{i:05d}.obj" for i in range(10)]
    first = read_obj_vertices(frames[0])
    for f in frames[1:]:
        assert np.max(np.abs(read_obj_vertices(f) - first)) <= 1e-8
    rows = _rows(out / "stats.csv")
    assert len(rows) - 1 == 10 * 5  # steps x substeps


def test_stride(tmp_path):
    simulate(scenes.rest_cube(inner=2), tmp_path, frames=9, stride=3)
    assert len(list(tmp_path.glob("frame_*.obj"))) == 3
    assert len(_rows(tmp_path / "stats.csv")) - 1 == 9 * 2


def test_obj_contents(tmp_path):
    tet = box_mesh((1, 1, 1))
    write_obj(tmp_path / "t.obj", tet, tet.rest_positions)
    lines = (tmp_path / "t.obj").read_text().splitlines()
    assert sum(l.startswith("f ") for l in lines) == 12  # two triangles per cube face
    X, E = polyline(3)
    rod = SimMesh.from_arrays(X, E, "rod")
    write_obj(tmp_path / "r.obj", rod, rod.rest_positions)
    lines = (tmp_path / "r.obj").read_text().splitlines()
    assert [l for l in lines if l[0] == "l"] == ["l 1 2", "l 2 3", "l 3 4"]
    assert np.array_equal(read_obj_vertices(tmp_path / "r.obj"), X)


def test_deterministic_stats(tmp_path):
    args = ["run", "--scene", str(SCENES / "cantilever.toml"), "--frames", "5", "--threads", "1", "--seed", "3", "--no-timings"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "stats.csv").read_bytes() == (tmp_path / "b" / "stats.csv").read_bytes()
    for f in (tmp_path / "a").glob("frame_*.obj"):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_non_timing_columns_deterministic_with_timings(tmp_path):
    for d in "ab":
        simulate(scenes.cantilever(shape=(2, 1, 1)), tmp_path / d, frames=3)
    a, b = _rows(tmp_path / "a" / "stats.csv"), _rows(tmp_path / "b" / "stats.csv")
    keep = [i for i, c in enumerate(a[0]) if c not in TIMING_COLUMNS]
    assert [[r[i] for i in keep] for r in a] == [[r[i] for i in keep] for r in b]


def test_invalid_scene_diagnostic(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('[mesh]\ngenerate = "box"\n[material]\nnu = "half"\n')
    assert main(["run", "--scene", str(bad), "--out", str(tmp_path / "o")]) != 0
    assert "material.nu" in capsys.readouterr().err


def test_missing_scene_file(tmp_path, capsys):
    assert main(["run", "--scene", str(tmp_path / "none.toml"), "--out", str(tmp_path)]) != 0
    assert "error" in capsys.readouterr().err


def test_solver_abort_exit_code(tmp_path, monkeypatch, capsys):
    from mixedfem.solver import MixedFEMSolver

    def explode(self, state):
        raise FloatingPointError("non-finite state at step 0")

    monkeypatch.setattr(MixedFEMSolver, "step", explode)
    assert main(["run", "--scene", str(SCENES / "rest_cube.toml"), "--out", str(tmp_path), "--frames", "1"]) != 0
    assert "solver aborted" in capsys.readouterr().err


def test_validate_filter(capsys):
    assert main(["validate", "--filter", "rotation"]) == 0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if l.startswith(("PASS", "FAIL"))]
    assert lines and all(l.split()[1].startswith("rotation.") for l in lines)


def test_validate_unknown_filter():
    assert main(["validate", "--filter", "nothing"]) != 0


def test_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("MIXEDFEM_THREADS", "2")
    assert resolve_threads(None) == 2
    assert resolve_threads(4) == 4
    monkeypatch.delenv("MIXEDFEM_THREADS")
    assert resolve_threads(None) is None


def test_bench_single_scene(capsys):
    assert main(["bench", "--scene", str(SCENES / "rest_cube.toml"), "--frames", "2"]) == 0
    assert "rest_cube" in capsys.readouterr().out


@pytest.mark.skipif(shutil.which("mixedfem") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(
        ["mixedfem", "run", "--scene", str(SCENES / "rest_cube.toml"), "--out", str(tmp_path), "--frames", "2"],
        capture_output=True,
        text=True,
        env={**os.environ, "MIXEDFEM_THREADS": "1"},
    )
    assert res.returncode == 0, res.stderr


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mixedfem.cli", "validate", "--filter", "kinematics.W"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr


def test_thread_count_does_not_change_geometry(tmp_path):
    args = ["run", "--scene", str(SCENES / "cantilever.toml"), "--frames", "5"]
    assert main(args + ["--threads", "1", "--out", str(tmp_path / "one")]) == 0
    assert main(args + ["--threads", "4", "--out", str(tmp_path / "four")]) == 0
    for f in sorted((tmp_path / "one").glob("frame_*.obj")):
        assert np.max(np.abs(read_obj_vertices(f) - read_obj_vertices(tmp_path / "four" / f.name))) <= 1e-9


def test_stiff_drop_scene_completes(tmp_path):
    out = tmp_path / "drop"
    assert main(["run", "--scene", str(SCENES / "drop_stiff.toml"), "--out", str(out), "--frames", "300", "--stride", "50"]) == 0
    rows = _rows(out / "stats.csv")
    assert len(rows) - 1 == 300 * 15
    assert np.all(np.isfinite(np.array(rows[1:], dtype=float)))
    assert len(list(out.glob("frame_*.obj"))) == 6

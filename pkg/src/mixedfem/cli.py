"""Command-line front end: ``mixedfem run | validate | bench``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from contextlib import nullcontext
from dataclasses import astuple

import numpy as np

from .linsolve import SolverError
from .materials import InvertedElementError
from .mesh import MeshError
from .scene import SceneError, load_scene
from .solver import MixedFEMSolver, StepStats

logger = logging.getLogger("mixedfem")

TIMING_COLUMNS = ("assembly_ms", "kkt_solve_ms", "rotation_ms")


def thread_limit(threads):
    """Context limiting BLAS/LAPACK threads; ``None`` leaves the pools alone."""
    if threads is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def resolve_threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("MIXEDFEM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise SystemExit(f"error: MIXEDFEM_THREADS must be an integer, got {env!r}") from None
    return None


# -- output ------------------------------------------------------------------------


def write_obj(path, mesh, q):
    """Tet meshes as their boundary surface, shells as triangles, rods as line elements."""
    x = np.asarray(q).reshape(-1, 3)
    with open(path, "w") as fh:
        fh.writelines(f"v {a:.17g} {b:.17g} {c:.17g}\n" for a, b, c in x)
        if mesh.kind == "rod":
            fh.writelines(f"l {i + 1} {j + 1}\n" for i, j in mesh.elements)
        else:
            fh.writelines(f"f {i + 1} {j + 1} {k + 1}\n" for i, j, k in mesh.boundary_faces())


def read_obj_vertices(path):
    with open(path) as fh:
        return np.array([[float(v) for v in line.split()[1:4]] for line in fh if line.startswith("v ")])


def simulate(scene, out_dir, frames, stride=1, timings=True, progress=None):
    """Run ``frames`` steps, writing OBJ frames every ``stride`` steps and one stats row per substep.

    Returns the final solver state.
    """
    if frames < 0 or stride < 1:
        raise ValueError("frames must be >= 0 and stride >= 1")
    os.makedirs(out_dir, exist_ok=True)
    solver = MixedFEMSolver(scene)
    state = solver.initial_state()
    columns = StepStats.columns()
    timing_idx = [columns.index(c) for c in TIMING_COLUMNS]
    n_frame = 0
    with open(os.path.join(out_dir, "stats.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for k in range(frames):
            state, report = solver.step(state)
            for row in report.substeps:
                values = list(astuple(row))
                if not timings:
                    for i in timing_idx:
                        values[i] = 0.0
                writer.writerow([repr(v) if isinstance(v, float) else v for v in values])
            if report.stagnated:
                logger.info("step %d: line search stagnated", k)
            if (k + 1) % stride == 0:
                write_obj(os.path.join(out_dir, f"frame_{n_frame:05d}.obj"), solver.mesh, state.q)
                n_frame += 1
            if progress is not None:
                progress(k, report)
    return state


# -- subcommands -------------------------------------------------------------------


def cmd_run(args):
    scene = load_scene(args.scene)
    if args.seed is not None:
        np.random.seed(args.seed)
    t0 = time.perf_counter()
    state = simulate(scene, args.out, args.frames, args.stride, timings=not args.no_timings)
    print(f"{scene.name}: {state.step} steps in {time.perf_counter() - t0:.1f} s -> {args.out}")
    return 0


def cmd_validate(args):
    from .validate import run_checks, select

    if not select(args.filter):
        print(f"no checks match {args.filter!r}", file=sys.stderr)
        return 2

    def report(res):
        tag = "PASS" if res.passed else "FAIL"
        print(f"{tag} {res.check.qualname:40s} {res.seconds:7.2f}s  {res.detail}", flush=True)

    results = run_checks(args.filter, seed=args.seed or 0, report=report)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_bench(args):
    """Average per-substep timings, one line per scene (the stats columns of the reference table)."""
    from . import scenes

    if args.scene:
        named = [load_scene(args.scene)]
    else:
        named = [scenes.drop(1e6), scenes.drop(1e9), scenes.three_ways("tet"), scenes.three_ways("tri"), scenes.three_ways("rod")]
    print(f"{'scene':16s} {'#T':>6s} {'model':>10s} {'m':>3s} {'assembly':>9s} {'kkt':>9s} {'rotation':>9s} {'cg':>6s} ms/step")
    for sc in named:
        solver = MixedFEMSolver(sc)
        state = solver.initial_state()
        rows = []
        t0 = time.perf_counter()
        for _ in range(args.frames):
            state, report = solver.step(state)
            rows.extend(report.substeps)
        wall = (time.perf_counter() - t0) / max(args.frames, 1) * 1e3
        mean = {c: float(np.mean([getattr(r, c) for r in rows])) for c in (*TIMING_COLUMNS, "cg_iters")}
        print(
            f"{sc.name:16s} {sc.mesh.n_elements:6d} {sc.material.model:>10s} {sc.solver.inner:3d} "
            f"{mean['assembly_ms']:9.2f} {mean['kkt_solve_ms']:9.2f} {mean['rotation_ms']:9.2f} {mean['cg_iters']:6.1f} {wall:.1f}"
        )
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="mixedfem", description="Mixed finite-element simulation of volumes, shells and rods.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--threads", type=int, default=None, help="BLAS thread count (default: $MIXEDFEM_THREADS)")
        sp.add_argument("--seed", type=int, default=None)

    r = sub.add_parser("run", help="simulate a scene file and write frames + stats.csv")
    r.add_argument("--scene", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--frames", type=int, default=100, help="number of timesteps")
    r.add_argument("--stride", type=int, default=1, help="write a frame every N steps")
    r.add_argument("--no-timings", action="store_true", help="write zeros in the timing columns (bitwise-reproducible stats)")
    common(r)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="run the oracle and invariant checks")
    v.add_argument("--filter", default=None, help="comma-separated module or check-name prefixes")
    common(v)
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bench", help="time built-in scenes (or --scene)")
    b.add_argument("--scene", default=None)
    b.add_argument("--frames", type=int, default=20)
    common(b)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    threads = resolve_threads(args.threads)
    try:
        with thread_limit(threads):
            return args.func(args)
    except SceneError as exc:
        print(f"error: invalid scene: field '{exc.field}': {exc.message}", file=sys.stderr)
    except (MeshError, InvertedElementError) as exc:
        print(f"error: mesh: {exc}", file=sys.stderr)
    except (SolverError, FloatingPointError) as exc:
        print(f"error: solver aborted: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())

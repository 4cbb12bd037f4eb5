"""touchloc command line: index building, localization, simulation and benchmarks.

Exit codes: 0 success, 2 localization failed (or a failed success check),
1 any other error. Output files are written atomically.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from touchloc import bench
from touchloc.estimator import ParticleCollapseError, ScalingSeriesParams, estimate_pose
from touchloc.face_index import AngleIndex, EntropyConfig, build_best_index, index_stats
from touchloc.fixtures import FIXTURES, fixture_mesh
from touchloc.geometry import (MeshError, Pose, UncertaintyRegion, atomic_write_text, load_mesh,
                               sample_pose_uniform)
from touchloc.measurement import NoiseParams, read_measurements, write_measurements
from touchloc.ransac import NoConsensusError, RansacConfig, classify
from touchloc.simkit import (Scene, clutter_scene, generate_cluttered_measurements,
                             labeled_to_jsonl, labeled_to_set, sample_constraining_measurements,
                             sample_surface_measurements)

EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2


class CliError(Exception):
    pass


# --------------------------------------------------------------------------
# Argument helpers
# --------------------------------------------------------------------------

def parse_region(text, center: Pose):
    """``trans,rot`` (cube) or ``tx,ty,tz,rx,ry,rz`` half-extents."""
    vals = [float(v) for v in text.split(",")]
    if len(vals) == 2:
        return UncertaintyRegion.cube(center, vals[0], vals[1])
    if len(vals) == 6:
        return UncertaintyRegion(center, vals[:3], vals[3:])
    raise CliError("--region takes 2 or 6 comma-separated numbers")


def parse_pose(text):
    """Pose from inline JSON or a JSON file."""
    if text is None:
        return Pose()
    p = Path(text)
    if not text.lstrip().startswith("{") and p.exists():
        text = p.read_text()
    return Pose.from_dict(json.loads(text))


def resolve_mesh(args):
    if getattr(args, "fixture", None):
        return fixture_mesh(args.fixture)
    if not args.mesh:
        raise CliError("give --mesh or --fixture")
    return load_mesh(args.mesh)


def write_out(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        atomic_write_text(path, text)


def add_noise_args(p):
    p.add_argument("--sigma-pos", type=float, default=bench.BENCH_NOISE.sigma_pos,
                   help="position noise std, mm (default 2)")
    p.add_argument("--sigma-nor", type=float, default=bench.BENCH_NOISE.sigma_nor,
                   help="normal noise std, rad (default 0.09)")


def add_mesh_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--mesh", help="OBJ or ASCII STL file")
    g.add_argument("--fixture", choices=FIXTURES + ("stick",), help="bundled fixture mesh")


def add_estimator_args(p):
    d = ScalingSeriesParams()
    p.add_argument("--delta-alpha", type=float, default=None,
                   help="face-selection window, rad (default 3 * sigma-nor)")
    p.add_argument("--no-index", action="store_true", help="exhaustive face search")
    p.add_argument("--zoom", type=float, default=d.zoom)
    p.add_argument("--particles-per-delta", type=int, default=d.particles_per_delta)
    p.add_argument("--max-particles", type=int, default=d.max_particles)
    p.add_argument("--initial-particles", type=int, default=d.initial_particles)
    p.add_argument("--prune", type=float, default=d.prune_log_threshold,
                   help="relative log-weight pruning threshold")


def add_ransac_args(p):
    d = RansacConfig()
    p.add_argument("--ransac", action="store_true", help="classify outliers first")
    p.add_argument("--ransac-m", "-m", type=int, default=d.subset_size, help="minimal subset size")
    p.add_argument("--ransac-d", "-d", type=int, default=None,
                   help="consensus size to beat (default ceil(0.6 n))")
    p.add_argument("--epsilon", type=float, default=d.epsilon, help="inlier threshold")
    p.add_argument("--delta", type=float, default=d.goodness_stop, help="goodness early stop")
    p.add_argument("--max-iters", type=int, default=None, help="iteration cap K")


def estimator_params(args):
    return ScalingSeriesParams(zoom=args.zoom, particles_per_delta=args.particles_per_delta,
                               prune_log_threshold=args.prune, max_particles=args.max_particles,
                               initial_particles=args.initial_particles)


def ransac_config(args):
    return RansacConfig(max_iterations=args.max_iters, subset_size=args.ransac_m,
                        min_consensus=args.ransac_d, epsilon=args.epsilon,
                        goodness_stop=args.delta, seed=args.seed)


# --------------------------------------------------------------------------
# index
# --------------------------------------------------------------------------

def cmd_index(args):
    if args.action == "build":
        mesh = resolve_mesh(args)
        idx = build_best_index(mesh, EntropyConfig(args.bins, args.candidates, args.seed))
        if args.out:
            idx.save(args.out)
        stats = index_stats(idx, args.bins)
    else:
        idx = AngleIndex.load(args.index)
        if args.mesh or args.fixture:
            idx.check(resolve_mesh(args))
        stats = index_stats(idx, args.bins)
    print(json.dumps(stats, indent=1))
    return EXIT_OK


# --------------------------------------------------------------------------
# localize
# --------------------------------------------------------------------------

def _simulated_input(args, mesh, region, noise, rng):
    truth = sample_pose_uniform(region, rng)
    data_noise = None if args.noiseless else noise
    if args.simulate == "surface":
        ys = sample_constraining_measurements(mesh, truth, args.n, data_noise, rng)
        return ys, truth, None
    scene = clutter_scene(truth)
    lms = generate_cluttered_measurements(scene, args.n, data_noise, rng, center=region.center)
    return labeled_to_set(lms), truth, [k for k, m in enumerate(lms) if m.is_outlier]


def cmd_localize(args):
    noise = NoiseParams(args.sigma_pos, args.sigma_nor)
    center = parse_pose(args.center)
    if args.simulate == "clutter" and args.fixture is None and args.mesh is None:
        args.fixture = "box"
    mesh = resolve_mesh(args)
    default_region = bench.CLUTTER_REGION if args.simulate == "clutter" else bench.RELIABILITY_REGION
    region = parse_region(args.region or f"{default_region[0]},{default_region[1]}", center)
    data_rng, est_rng = bench.trial_rngs(args.seed, 0, 2)
    true_out = None
    if args.simulate:
        ys, truth, true_out = _simulated_input(args, mesh, region, noise, data_rng)
    else:
        if not args.measurements:
            raise CliError("give --measurements or --simulate")
        ys = read_measurements(args.measurements)
        truth = parse_pose(args.truth) if args.truth else None
    if len(ys) == 0:
        raise CliError("no measurements")

    index = None
    if not args.no_index:
        if args.index:
            index = AngleIndex.load(args.index)
            index.check(mesh)
        else:
            index = build_best_index(mesh)
    params = estimator_params(args)

    t0 = time.perf_counter()
    stats = {}
    info = None
    belief = None
    try:
        if args.ransac:
            res = classify(ys, mesh, region, noise, params, ransac_config(args), index, est_rng,
                           delta_alpha=args.delta_alpha)
            pose = res.best_pose
            info = res.to_dict()
            info.pop("pose")
            if true_out is not None:
                info["true_outliers"] = true_out
        else:
            belief, pose = estimate_pose(region, ys, mesh, noise, params, index, est_rng,
                                         args.delta_alpha, stats)
    except (NoConsensusError, ParticleCollapseError) as err:
        report = {"schema_version": bench.SCHEMA_VERSION, "error": type(err).__name__,
                  "message": str(err)}
        write_out(args.out, json.dumps(report, indent=1) + "\n")
        return EXIT_FAILED
    report = bench.make_report(pose, truth, t0, stats, info,
                               labels={"mode": "ransac" if args.ransac else "plain",
                                       "indexed": index is not None, "seed": args.seed},
                               trans_tol=args.trans_tol, rot_tol=args.rot_tol)
    if args.dump_belief and belief is not None:
        atomic_write_text(args.dump_belief, belief.to_json() + "\n")
    write_out(args.out, json.dumps(report.to_dict(), indent=1) + "\n")
    return EXIT_FAILED if report.success is False else EXIT_OK


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

def cmd_simulate(args):
    noise = None if args.noiseless else NoiseParams(args.sigma_pos, args.sigma_nor)
    rng = np.random.default_rng(args.seed)
    if args.kind == "surface":
        mesh = resolve_mesh(args)
        if args.pose:
            truth = parse_pose(args.pose)
        else:
            region = parse_region(args.region or "50,0.5", Pose())
            truth = sample_pose_uniform(region, rng)
        ys = sample_surface_measurements(mesh, truth, args.n, noise, rng)
        if args.out:
            write_measurements(args.out, ys)
        else:
            write_out(None, "".join(json.dumps({"p": p.tolist(), "n": n.tolist()}) + "\n"
                                    for p, n in zip(ys.positions, ys.normals)))
    else:
        if args.scene:
            scene = Scene.load(args.scene)
            truth = scene.target_object.pose
        else:
            truth = parse_pose(args.pose) if args.pose else Pose()
            scene = clutter_scene(truth)
        lms = generate_cluttered_measurements(scene, args.n, noise, rng)
        write_out(args.out, labeled_to_jsonl(lms))
    if args.truth_out:
        atomic_write_text(args.truth_out, truth.to_json() + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# benchmark
# --------------------------------------------------------------------------

def cmd_benchmark(args):
    kw = {}
    if args.suite in ("reliability", "clutter", "planted"):
        kw.update(params=estimator_params(args), delta_alpha=args.delta_alpha)
    if args.suite in ("reliability", "clutter"):
        kw.update(trans_tol=args.trans_tol, rot_tol=args.rot_tol)
    if args.suite in ("clutter", "planted"):
        kw["config"] = ransac_config(args)
    if args.suite == "speedup":
        kw["delta_alpha"] = (bench.BENCH_DELTA_ALPHA if args.delta_alpha is None
                             else args.delta_alpha)
    if args.suite in ("speedup", "reliability") and args.fixtures:
        kw["fixtures"] = tuple(args.fixtures.split(","))
    report = bench.SUITES[args.suite](trials=args.trials, seed=args.seed, **kw)
    table = bench.format_table(report)
    print(table)
    if args.out:
        atomic_write_text(args.out, json.dumps(report, indent=1) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="touchloc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build or inspect an angle index")
    p.add_argument("action", choices=("build", "stats"))
    add_mesh_args(p)
    p.add_argument("--index", help="index file (stats)")
    p.add_argument("--bins", type=int, default=18)
    p.add_argument("--candidates", type=int, default=100, help="random reference candidates")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="index file to write (build)")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("localize", help="estimate a pose from measurements")
    add_mesh_args(p)
    p.add_argument("--measurements", help="JSON-lines or CSV measurement file")
    p.add_argument("--simulate", choices=("surface", "clutter"),
                   help="generate measurements instead of reading them")
    p.add_argument("--n", type=int, default=bench.N_MEASUREMENTS, help="simulated measurements")
    p.add_argument("--noiseless", action="store_true", help="simulate without noise")
    p.add_argument("--truth", help="ground-truth pose (JSON or file) for error reporting")
    p.add_argument("--center", help="region center pose (JSON or file); default identity")
    p.add_argument("--region", help="trans,rot or tx,ty,tz,rx,ry,rz half-extents")
    p.add_argument("--index", help="prebuilt index file")
    add_noise_args(p)
    add_estimator_args(p)
    add_ransac_args(p)
    p.add_argument("--trans-tol", type=float, default=bench.SUCCESS_TRANS)
    p.add_argument("--rot-tol", type=float, default=bench.SUCCESS_ROT)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report file (default stdout)")
    p.add_argument("--dump-belief", help="write the final particle set as JSON")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("simulate", help="generate synthetic measurements")
    p.add_argument("kind", choices=("surface", "clutter"))
    add_mesh_args(p)
    p.add_argument("--scene", help="scene JSON (clutter); default the reference scene")
    p.add_argument("--pose", help="ground-truth pose (JSON or file)")
    p.add_argument("--region", help="sample the pose from this region around identity")
    p.add_argument("--n", type=int, default=bench.N_MEASUREMENTS)
    p.add_argument("--noiseless", action="store_true")
    add_noise_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="measurement file (default stdout)")
    p.add_argument("--truth-out", help="write the ground-truth pose here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="run an experiment suite")
    p.add_argument("suite", choices=tuple(bench.SUITES))
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fixtures", help="comma-separated fixture names")
    add_estimator_args(p)
    add_ransac_args(p)
    p.add_argument("--trans-tol", type=float, default=bench.SUCCESS_TRANS)
    p.add_argument("--rot-tol", type=float, default=bench.SUCCESS_ROT)
    p.add_argument("--out", help="JSON report file")
    p.set_defaults(func=cmd_benchmark)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, MeshError, OSError, ValueError, KeyError, RuntimeError) as err:
        print(f"touchloc: error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

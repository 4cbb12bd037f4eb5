"""Seeded experiment harness: speedup, reliability, clutter and planted-outlier suites.

Every trial draws its randomness from ``SeedSequence([master_seed, trial])``
spawned into independent streams, so a trial's result does not depend on
which other trials ran, in what order, or on how many workers ran them.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from touchloc.estimator import ScalingSeriesParams, estimate_pose
from touchloc.face_index import build_best_index
from touchloc.fixtures import FIXTURES, fixture_mesh
from touchloc.geometry import (Pose, UncertaintyRegion, rotation_distance, sample_pose_uniform,
                               sample_poses_uniform, translation_distance)
from touchloc.measurement import MeasurementSet, NoiseParams, batch_log_likelihood
from touchloc.ransac import NoConsensusError, RansacConfig, classify
from touchloc.simkit import (clutter_scene, generate_cluttered_measurements, labeled_to_set,
                             plant_outliers, sample_constraining_measurements)

SCHEMA_VERSION = "1.0"

SUCCESS_TRANS = 5.0     # mm
SUCCESS_ROT = 0.05      # rad
BENCH_NOISE = NoiseParams(2.0, 0.09)
BENCH_DELTA_ALPHA = 0.09
RELIABILITY_REGION = (50.0, 0.5)
CLUTTER_REGION = (10.0, 0.3)
N_MEASUREMENTS = 15
CLUTTER_OUTLIERS = (1, 5)


@lru_cache(maxsize=None)
def _mesh_and_index(name):
    mesh = fixture_mesh(name)
    return mesh, build_best_index(mesh)


def trial_rngs(master: int, trial: int, k: int):
    """``k`` independent generators for one trial."""
    ss = np.random.SeedSequence([int(master), int(trial)])
    return [np.random.default_rng(s) for s in ss.spawn(k)]


def n_workers():
    try:
        return max(1, int(os.environ.get("TACTILE_LOC_THREADS", "1")))
    except ValueError:
        return 1


def run_trials(fn, trials, *args):
    """``fn(trial, *args)`` for each trial id, in order, optionally in worker processes."""
    workers = min(n_workers(), len(trials))
    if workers <= 1:
        return [fn(t, *args) for t in trials]
    with ProcessPoolExecutor(workers) as ex:
        return list(ex.map(fn, trials, *[[a] * len(trials) for a in args]))


def pose_errors(estimate: Pose, truth: Pose):
    return translation_distance(estimate.t, truth.t), rotation_distance(estimate, truth)


def is_success(trans_err, rot_err, trans_tol=SUCCESS_TRANS, rot_tol=SUCCESS_ROT):
    return bool(trans_err <= trans_tol and rot_err <= rot_tol)


@dataclass
class TrialReport:
    estimated_pose: Pose
    ground_truth: Pose | None
    trans_err: float | None
    rot_err: float | None
    success: bool | None
    wall_time: float
    mean_candidates: float | None = None   # faces visited per measurement evaluation
    ransac: dict | None = None
    labels: dict = field(default_factory=dict)

    def to_dict(self, include_time=True):
        d = {
            "schema_version": SCHEMA_VERSION,
            **self.labels,
            "estimated_pose": self.estimated_pose.to_dict(),
            "ground_truth": None if self.ground_truth is None else self.ground_truth.to_dict(),
            "trans_err_mm": self.trans_err,
            "rot_err_rad": self.rot_err,
            "success": self.success,
            "mean_candidates": self.mean_candidates,
            "ransac": self.ransac,
        }
        if include_time:
            d["wall_time_s"] = self.wall_time
        return d


def make_report(pose, truth, t0, stats=None, ransac=None, labels=None,
                trans_tol=SUCCESS_TRANS, rot_tol=SUCCESS_ROT):
    wall = time.perf_counter() - t0
    te = re = ok = None
    if truth is not None:
        te, re = pose_errors(pose, truth)
        ok = is_success(te, re, trans_tol, rot_tol)
    cand = None
    if stats and stats.get("likelihood_evals"):
        cand = stats["face_evals"] / stats["likelihood_evals"]
    return TrialReport(pose, truth, te, re, ok, wall, cand, ransac, dict(labels or {}))


TIMING_KEYS = frozenset({"wall_time_s", "time_s", "indexed_s", "exhaustive_s",
                         "time_indexed", "time_exhaustive", "ratio"})


def without_timing(obj):
    """Copy of a report with every wall-clock derived field removed."""
    if isinstance(obj, dict):
        return {k: without_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [without_timing(v) for v in obj]
    return obj


def _mean_std(xs):
    xs = np.asarray(xs, dtype=float)
    if len(xs) == 0:
        return float("nan"), float("nan")
    return float(xs.mean()), float(xs.std())


# --------------------------------------------------------------------------
# Speedup: likelihood throughput with and without the angle index
# --------------------------------------------------------------------------

def speedup_trial(trial, name, seed, n_particles=2000, delta_alpha=BENCH_DELTA_ALPHA,
                  noise=BENCH_NOISE, repeats=3):
    """Time one likelihood evaluation of a late-stage particle cloud both ways.

    The cloud is drawn within 10 mm / 0.1 rad of the ground truth, the
    regime where most of the estimator's evaluations happen.
    """
    mesh, index = _mesh_and_index(name)
    rng, = trial_rngs(seed, trial, 1)
    truth = sample_pose_uniform(UncertaintyRegion.cube(Pose(), *RELIABILITY_REGION), rng)
    ys = sample_constraining_measurements(mesh, truth, N_MEASUREMENTS, noise, rng)
    q, t = sample_poses_uniform(UncertaintyRegion.cube(truth, 10.0, 0.1), n_particles, rng)

    def best_time(idx):
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = batch_log_likelihood(ys, mesh, (q, t), noise, idx, delta_alpha)
            best = min(best, time.perf_counter() - t0)
        return best, out

    batch_log_likelihood(ys, mesh, (q[:1], t[:1]), noise, index, delta_alpha)  # warm up
    t_exh, _ = best_time(None)
    t_idx, (_, visited) = best_time(index)
    return {"fixture": name, "trial": trial, "faces": mesh.n_faces, "time_exhaustive": t_exh,
            "time_indexed": t_idx, "ratio": t_exh / t_idx,
            "mean_candidates": visited / (n_particles * len(ys))}


def speedup_suite(trials=50, seed=0, fixtures=FIXTURES, **kw):
    rows, per_trial = [], []
    for name in fixtures:
        res = run_trials(_speedup_entry, list(range(trials)), name, seed, kw)
        per_trial += res
        te = [r["time_exhaustive"] for r in res]
        ti = [r["time_indexed"] for r in res]
        rows.append({
            "fixture": name,
            "faces": res[0]["faces"],
            "indexed_s": _mean_std(ti),
            "exhaustive_s": _mean_std(te),
            # throughput ratio over the whole suite
            "ratio": float(np.sum(te) / np.sum(ti)),
            "mean_candidates": float(np.mean([r["mean_candidates"] for r in res])),
        })
    return {"schema_version": SCHEMA_VERSION, "suite": "speedup", "trials": trials,
            "seed": seed, "rows": rows, "per_trial": per_trial}


def _speedup_entry(trial, name, seed, kw):
    return speedup_trial(trial, name, seed, **kw)


# --------------------------------------------------------------------------
# Reliability: 50 mm / 0.5 rad region, surface-sampled measurements
# --------------------------------------------------------------------------

def reliability_trial(trial, name, seed, params=ScalingSeriesParams(), noise=BENCH_NOISE,
                      delta_alpha=None, modes=("indexed", "exhaustive"),
                      trans_tol=SUCCESS_TRANS, rot_tol=SUCCESS_ROT):
    """One ground truth and measurement set, localized once per mode."""
    mesh, index = _mesh_and_index(name)
    region = UncertaintyRegion.cube(Pose(), *RELIABILITY_REGION)
    data_rng, est_rng = trial_rngs(seed, trial, 2)
    truth = sample_pose_uniform(region, data_rng)
    ys = sample_constraining_measurements(mesh, truth, N_MEASUREMENTS, noise, data_rng)
    state = est_rng.bit_generator.state
    out = {}
    for mode in modes:
        # both modes consume the same stream
        rng = np.random.default_rng()
        rng.bit_generator.state = state
        stats = {}
        t0 = time.perf_counter()
        _, pose = estimate_pose(region, ys, mesh, noise, params,
                                index if mode == "indexed" else None, rng, delta_alpha, stats)
        out[mode] = make_report(pose, truth, t0, stats,
                                labels={"fixture": name, "trial": trial, "mode": mode},
                                trans_tol=trans_tol, rot_tol=rot_tol)
    return out


def reliability_suite(trials=50, seed=0, fixtures=FIXTURES, **kw):
    rows, per_trial = [], []
    for name in fixtures:
        res = run_trials(_reliability_entry, list(range(trials)), name, seed, kw)
        row = {"fixture": name}
        for mode in res[0]:
            reps = [r[mode] for r in res]
            per_trial += [rep.to_dict() for rep in reps]
            row[mode] = {
                "successes": int(sum(r.success for r in reps)),
                "success_rate": float(np.mean([r.success for r in reps])),
                "time_s": _mean_std([r.wall_time for r in reps]),
                "trans_err_mm": _mean_std([r.trans_err for r in reps]),
                "rot_err_rad": _mean_std([r.rot_err for r in reps]),
            }
        rows.append(row)
    return {"schema_version": SCHEMA_VERSION, "suite": "reliability", "trials": trials,
            "seed": seed, "rows": rows, "per_trial": per_trial}


def _reliability_entry(trial, name, seed, kw):
    return reliability_trial(trial, name, seed, **kw)


# --------------------------------------------------------------------------
# Clutter: ray-traced scene with natural outliers, with and without RANSAC
# --------------------------------------------------------------------------

def clutter_measurements(rng, truth: Pose, noise=BENCH_NOISE, n=N_MEASUREMENTS,
                         outliers=CLUTTER_OUTLIERS, max_draws=100):
    """Ray-traced measurements of the reference scene with the outlier count in range."""
    scene = clutter_scene(truth)
    center = Pose()
    for _ in range(max_draws):
        lms = generate_cluttered_measurements(scene, n, noise, rng, center=center)
        k = sum(m.is_outlier for m in lms)
        if outliers[0] <= k <= outliers[1]:
            return lms
    raise RuntimeError("could not draw a measurement set with the requested outlier count")


def _partition_stats(flagged, true_outliers, n):
    flagged, true_outliers = set(flagged), set(true_outliers)
    inliers = set(range(n)) - true_outliers
    return {
        "true_outliers": sorted(true_outliers),
        "flagged": sorted(flagged),
        "caught": len(flagged & true_outliers),
        "false_outliers": len(flagged & inliers),
        "n_true_outliers": len(true_outliers),
        "n_true_inliers": len(inliers),
    }


def clutter_trial(trial, seed, params=ScalingSeriesParams(), config=RansacConfig(),
                  noise=BENCH_NOISE, delta_alpha=None, use_index=True,
                  trans_tol=SUCCESS_TRANS, rot_tol=SUCCESS_ROT):
    mesh, index = _mesh_and_index("box")
    index = index if use_index else None
    region = UncertaintyRegion.cube(Pose(), *CLUTTER_REGION)
    data_rng, plain_rng, ransac_rng = trial_rngs(seed, trial, 3)
    truth = sample_pose_uniform(region, data_rng)
    lms = clutter_measurements(data_rng, truth, noise)
    ys = labeled_to_set(lms)
    true_out = [k for k, m in enumerate(lms) if m.is_outlier]
    labels = {"suite": "clutter", "trial": trial}

    stats = {}
    t0 = time.perf_counter()
    _, pose = estimate_pose(region, ys, mesh, noise, params, index, plain_rng, delta_alpha, stats)
    plain = make_report(pose, truth, t0, stats, labels={**labels, "mode": "plain"},
                        trans_tol=trans_tol, rot_tol=rot_tol)

    t0 = time.perf_counter()
    try:
        res = classify(ys, mesh, region, noise, params, config, index, ransac_rng,
                       delta_alpha=delta_alpha)
        info = {**res.to_dict(), **_partition_stats(res.outliers, true_out, len(ys))}
        info.pop("pose")
        pose = res.best_pose
    except NoConsensusError:
        # fall back to the plain estimate and flag the trial
        info = {"no_consensus": True, **_partition_stats([], true_out, len(ys))}
        pose = plain.estimated_pose
    with_oc = make_report(pose, truth, t0, ransac=info, labels={**labels, "mode": "ransac"},
                          trans_tol=trans_tol, rot_tol=rot_tol)
    return {"plain": plain, "ransac": with_oc}


def clutter_suite(trials=50, seed=0, **kw):
    res = run_trials(_clutter_entry, list(range(trials)), seed, kw)
    rows = []
    for mode in ("ransac", "plain"):
        reps = [r[mode] for r in res]
        rows.append({
            "mode": mode,
            "trans_err_mm": _mean_std([r.trans_err for r in reps]),
            "rot_err_rad": _mean_std([r.rot_err for r in reps]),
            "success_rate": float(np.mean([r.success for r in reps])),
            "time_s": _mean_std([r.wall_time for r in reps]),
        })
    per_trial = [r[m].to_dict() for r in res for m in ("plain", "ransac")]
    counts = [len(r["ransac"].ransac["true_outliers"]) for r in res]
    return {"schema_version": SCHEMA_VERSION, "suite": "clutter", "trials": trials, "seed": seed,
            "rows": rows, "outlier_counts": counts,
            "no_consensus": int(sum(bool(r["ransac"].ransac.get("no_consensus")) for r in res)),
            "per_trial": per_trial}


def _clutter_entry(trial, seed, kw):
    return clutter_trial(trial, seed, **kw)


# --------------------------------------------------------------------------
# Planted outliers: surface measurements plus points far from the object
# --------------------------------------------------------------------------

def planted_trial(trial, seed, n_inliers=12, n_outliers=3, min_distance=10.0,
                  params=ScalingSeriesParams(), config=RansacConfig(), noise=BENCH_NOISE,
                  fixture="box", delta_alpha=None):
    mesh, index = _mesh_and_index(fixture)
    region = UncertaintyRegion.cube(Pose(), *CLUTTER_REGION)
    data_rng, ransac_rng = trial_rngs(seed, trial, 2)
    truth = sample_pose_uniform(region, data_rng)
    good = sample_constraining_measurements(mesh, truth, n_inliers, noise, data_rng)
    bad = plant_outliers(mesh, truth, n_outliers, noise, data_rng, min_distance)
    order = data_rng.permutation(n_inliers + n_outliers)
    allm = good.concat(bad)
    ys = MeasurementSet(allm.positions[order], allm.normals[order])
    true_out = sorted(int(k) for k in np.flatnonzero(order >= n_inliers))
    t0 = time.perf_counter()
    try:
        res = classify(ys, mesh, region, noise, params, config, index, ransac_rng,
                       delta_alpha=delta_alpha)
    except NoConsensusError:
        info = {"no_consensus": True, **_partition_stats(range(len(ys)), true_out, len(ys))}
        return make_report(region.center, truth, t0, ransac=info,
                           labels={"suite": "planted", "trial": trial})
    info = {**res.to_dict(), **_partition_stats(res.outliers, true_out, len(ys))}
    info.pop("pose")
    return make_report(res.best_pose, truth, t0, ransac=info,
                       labels={"suite": "planted", "trial": trial})


def planted_suite(trials=50, seed=0, **kw):
    reps = run_trials(_planted_entry, list(range(trials)), seed, kw)
    caught = sum(r.ransac["caught"] for r in reps)
    total_out = sum(r.ransac["n_true_outliers"] for r in reps)
    false_out = sum(r.ransac["false_outliers"] for r in reps)
    total_in = sum(r.ransac["n_true_inliers"] for r in reps)
    return {"schema_version": SCHEMA_VERSION, "suite": "planted", "trials": trials, "seed": seed,
            "recall": caught / total_out, "false_outlier_rate": false_out / total_in,
            "trans_err_mm": _mean_std([r.trans_err for r in reps]),
            "rot_err_rad": _mean_std([r.rot_err for r in reps]),
            "per_trial": [r.to_dict() for r in reps]}


def _planted_entry(trial, seed, kw):
    return planted_trial(trial, seed, **kw)


# --------------------------------------------------------------------------
# Tables
# --------------------------------------------------------------------------

def _pm(ms, fmt="{:.2f}"):
    return f"{fmt.format(ms[0])} +- {fmt.format(ms[1])}"


def format_table(report) -> str:
    suite = report["suite"]
    lines = []
    if suite == "speedup":
        lines.append(f"{'fixture':<10}{'faces':>6}{'indexed s':>22}{'exhaustive s':>22}"
                     f"{'ratio':>8}{'cand':>7}")
        for r in report["rows"]:
            lines.append(f"{r['fixture']:<10}{r['faces']:>6}{_pm(r['indexed_s'], '{:.5f}'):>22}"
                         f"{_pm(r['exhaustive_s'], '{:.5f}'):>22}{r['ratio']:>7.2f}x"
                         f"{r['mean_candidates']:>7.1f}")
    elif suite == "reliability":
        lines.append(f"{'fixture':<10}{'mode':<12}{'success':>9}{'trans mm':>18}{'rot rad':>20}"
                     f"{'time s':>16}")
        for r in report["rows"]:
            for mode in ("indexed", "exhaustive"):
                if mode in r:
                    m = r[mode]
                    lines.append(f"{r['fixture']:<10}{mode:<12}{m['success_rate']:>9.2f}"
                                 f"{_pm(m['trans_err_mm']):>18}{_pm(m['rot_err_rad'], '{:.4f}'):>20}"
                                 f"{_pm(m['time_s']):>16}")
    elif suite == "clutter":
        lines.append(f"{'mode':<10}{'trans mm':>18}{'rot rad':>20}{'success':>9}{'time s':>16}")
        for r in report["rows"]:
            lines.append(f"{r['mode']:<10}{_pm(r['trans_err_mm']):>18}"
                         f"{_pm(r['rot_err_rad'], '{:.4f}'):>20}{r['success_rate']:>9.2f}"
                         f"{_pm(r['time_s']):>16}")
    elif suite == "planted":
        lines.append(f"recall {report['recall']:.3f}  false-outlier rate "
                     f"{report['false_outlier_rate']:.3f}  trans {_pm(report['trans_err_mm'])} mm"
                     f"  rot {_pm(report['rot_err_rad'], '{:.4f}')} rad")
    return "\n".join(lines)


SUITES = {"speedup": speedup_suite, "reliability": reliability_suite,
          "clutter": clutter_suite, "planted": planted_suite}


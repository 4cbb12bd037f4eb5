"""Hypothesize-and-verify outlier classification around the pose estimator.

Each iteration estimates a pose from a small random subset of measurements,
collects every other measurement within ``epsilon`` of that pose, and, if the
consensus is large enough, re-estimates on the whole consensus set and scores
it by the mean object distance (the model goodness, lower is better).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from touchloc.estimator import ScalingSeriesParams, default_window, estimate_pose
from touchloc.face_index import AngleIndex
from touchloc.geometry import Mesh, Pose, UncertaintyRegion
from touchloc.measurement import (NoiseParams, as_measurement_set, constraint_strength,
                                  object_distances)

DEFAULT_INLIER_PROB = 0.7
DEFAULT_SUCCESS_PROB = 0.99


def max_iterations(p: float, w: float, m: int) -> int:
    """Iterations needed to draw one all-inlier subset with probability ``p``."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if not 0 < w <= 1:
        raise ValueError("w must lie in (0, 1]")
    if m < 1:
        raise ValueError("m must be >= 1")
    wm = w ** m
    if wm >= 1.0:
        return 1
    return max(1, math.ceil(math.log(1.0 - p) / math.log(1.0 - wm)))


@dataclass(frozen=True)
class RansacConfig:
    """RANSAC settings; ``None`` fields are derived from the measurement count."""
    max_iterations: int | None = None
    subset_size: int = 6
    min_consensus: int | None = None
    epsilon: float = 3.0
    goodness_stop: float = 1.0
    seed: int = 0
    # a consensus must constrain the pose at least this well, relative to all
    # measurements; 0 disables the check
    min_relative_strength: float = 0.5

    def __post_init__(self):
        if self.subset_size < 1:
            raise ValueError("subset_size must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.min_consensus is not None and self.min_consensus < self.subset_size:
            raise ValueError("min_consensus must be >= subset_size")
        if self.min_relative_strength < 0:
            raise ValueError("min_relative_strength must be >= 0")

    def resolved(self, n_measurements: int):
        """(K, m, d) for a set of ``n_measurements``."""
        m = self.subset_size
        d = self.min_consensus
        if d is None:
            d = max(m, math.ceil(0.6 * n_measurements))
        k = self.max_iterations
        if k is None:
            k = max_iterations(DEFAULT_SUCCESS_PROB, DEFAULT_INLIER_PROB, m)
        return k, m, d


@dataclass
class RansacResult:
    best_pose: Pose
    inliers: list
    outliers: list
    goodness: float
    iterations_run: int
    terminated_by: str              # "goodness" or "max_iter"
    distances: np.ndarray           # per-measurement object distance at best_pose
    seed_subset: list               # minimal subset of the winning iteration
    goodness_history: list = field(default_factory=list)  # best-so-far after each iteration

    def to_dict(self):
        return {
            "pose": self.best_pose.to_dict(),
            "inliers": list(self.inliers),
            "outliers": list(self.outliers),
            "goodness": float(self.goodness),
            "iterations": int(self.iterations_run),
            "terminated_by": self.terminated_by,
            "distances": [float(d) for d in self.distances],
            "seed_subset": list(self.seed_subset),
        }

    def to_json(self):
        return json.dumps(self.to_dict())


class NoConsensusError(RuntimeError):
    """No iteration gathered a large enough consensus set.

    ``best_attempt`` holds (pose, consensus ids) of the largest consensus seen.
    """

    def __init__(self, msg, best_attempt=None):
        super().__init__(msg)
        self.best_attempt = best_attempt


def model_goodness(ys, mesh: Mesh, pose: Pose, noise: NoiseParams,
                   index: AngleIndex | None = None, delta_alpha=None) -> float:
    """Mean (unsquared) object distance over a consensus set."""
    ys = as_measurement_set(ys)
    if len(ys) == 0:
        raise ValueError("model goodness of an empty consensus set")
    d, _ = object_distances(ys, mesh, pose, noise, index, delta_alpha)
    return float(d.mean())


def iteration_rng(master_seed: int, i: int):
    return np.random.default_rng(np.random.SeedSequence([master_seed, i]))


HYPOTHESIS_PARAMS = ScalingSeriesParams(max_particles=1000)


def _gather(ys, mesh, pose, noise, index, delta_alpha, subset, epsilon):
    """Seed subset plus every measurement closer than ``epsilon`` at ``pose``."""
    dist, _ = object_distances(ys, mesh, pose, noise, index, delta_alpha)
    return sorted(set(int(j) for j in subset) | set(np.flatnonzero(dist < epsilon).tolist()))


def _refine(ys, mesh, region, noise, params, index, rng, delta_alpha, subset, consensus,
            epsilon, d_min):
    """Re-estimate on a consensus set, then re-test every measurement at the new pose.

    The hypothesis pose comes from only ``m`` measurements and can reject
    good ones; if re-testing changes the set (and it is still large enough),
    the pose is estimated once more on the new set. The returned consensus
    is the re-test at the returned pose, so every member other than the seed
    subset lies within ``epsilon`` of it.
    """
    _, pose = estimate_pose(region, ys.subset(consensus), mesh, noise, params, index, rng,
                            delta_alpha)
    again = _gather(ys, mesh, pose, noise, index, delta_alpha, subset, epsilon)
    if again != consensus and len(again) > d_min:
        _, pose = estimate_pose(region, ys.subset(again), mesh, noise, params, index, rng,
                                delta_alpha)
        again = _gather(ys, mesh, pose, noise, index, delta_alpha, subset, epsilon)
    return pose, again


def classify(ys, mesh: Mesh, region: UncertaintyRegion, noise: NoiseParams,
             params: ScalingSeriesParams = ScalingSeriesParams(),
             config: RansacConfig = RansacConfig(), index: AngleIndex | None = None,
             rng=None, hypothesis_params: ScalingSeriesParams | None = None,
             delta_alpha=None) -> RansacResult:
    """Split ``ys`` into inliers and outliers and estimate the pose from the inliers.

    ``params`` drives the re-estimate on each consensus set and
    ``hypothesis_params`` the cheaper minimal-subset estimates. When ``rng`` is
    given, the master seed is drawn from it; otherwise ``config.seed`` is used.
    Iteration ``i`` uses its own stream derived from (master seed, i).
    """
    ys = as_measurement_set(ys)
    n = len(ys)
    k_max, m, d_min = config.resolved(n)
    if n < m:
        raise ValueError(f"need at least {m} measurements, got {n}")
    if hypothesis_params is None:
        hypothesis_params = params.with_(max_particles=min(params.max_particles,
                                                           HYPOTHESIS_PARAMS.max_particles))
    if delta_alpha is None:
        delta_alpha = default_window(noise)
    if rng is None:
        master = config.seed
    elif isinstance(rng, np.random.Generator):
        master = int(rng.integers(2 ** 63))
    else:
        master = int(rng)

    min_strength = config.min_relative_strength * constraint_strength(ys.positions, ys.normals)
    best = None          # (goodness, pose, consensus, seed subset)
    weak = None          # same, for consensus sets that leave the pose under-constrained
    largest = None       # (size, pose, consensus) for error reporting
    history = []
    terminated = "max_iter"
    i = 0
    for i in range(1, k_max + 1):
        r = iteration_rng(master, i)
        subset = r.choice(n, size=m, replace=False)
        _, hypo = estimate_pose(region, ys.subset(subset), mesh, noise, hypothesis_params,
                                index, r, delta_alpha)
        in_subset = np.zeros(n, dtype=bool)
        in_subset[subset] = True
        rest = np.flatnonzero(~in_subset)
        dist, _ = object_distances(ys.subset(rest), mesh, hypo, noise, index, delta_alpha)
        consensus = [int(j) for j in subset] + [int(j) for j in rest[dist < config.epsilon]]
        if largest is None or len(consensus) > largest[0]:
            largest = (len(consensus), hypo, sorted(consensus))
        if len(consensus) > d_min:
            pose, consensus = _refine(ys, mesh, region, noise, params, index, r, delta_alpha,
                                      subset, sorted(consensus), config.epsilon, d_min)
            g = model_goodness(ys.subset(consensus), mesh, pose, noise, index, delta_alpha)
            entry = (g, pose, consensus, sorted(int(j) for j in subset))
            sub = ys.subset(consensus)
            if constraint_strength(sub.positions, sub.normals) < min_strength:
                # a smaller set that drops the only contacts fixing some motion
                # can fit a wrong pose with a lower G; keep it only as a fallback
                if weak is None or g < weak[0]:
                    weak = entry
            else:
                if best is None or g < best[0]:
                    best = entry
                if g < config.goodness_stop:
                    history.append(best[0])
                    terminated = "goodness"
                    break
        history.append(best[0] if best is not None else math.inf)
    if best is None:
        best = weak
    if best is None:
        raise NoConsensusError(
            f"no consensus larger than {d_min} in {i} iterations", best_attempt=largest)
    g, pose, consensus, seed_subset = best
    dist, _ = object_distances(ys, mesh, pose, noise, index, delta_alpha)
    inl = set(consensus)
    return RansacResult(
        best_pose=pose,
        inliers=sorted(inl),
        outliers=[j for j in range(n) if j not in inl],
        goodness=g,
        iterations_run=i,
        terminated_by=terminated,
        distances=dist,
        seed_subset=seed_subset,
        goodness_history=history,
    )

"""Scaling Series pose estimator (annealed Monte-Carlo Bayesian update).

The estimator refines a particle set over a fixed schedule of shrinking
neighborhoods. At each stage the measurement noise is inflated by the ratio of
the current neighborhood size to the target precision, so early stages see a
smooth likelihood and the last stage uses the true noise model. The object
is static, so every stage is a pure measurement update.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from touchloc.face_index import AngleIndex
from touchloc.geometry import (Mesh, Pose, UncertaintyRegion, canonical_quat, pose_mean,
                               quat_from_rotvec, quat_multiply, sample_poses_uniform)
from touchloc.measurement import NoiseParams, as_measurement_set, batch_log_likelihood


# Default face-selection window, in multiples of sigma_nor. One sigma drops
# the true face for roughly a third of noisy normals on meshes with many
# distinct normal directions; three sigmas keeps it in practically always.
WINDOW_SIGMAS = 3.0


def default_window(noise: NoiseParams) -> float:
    return WINDOW_SIGMAS * noise.sigma_nor


class ParticleCollapseError(RuntimeError):
    """Every particle received zero likelihood."""


@dataclass(frozen=True)
class ScalingSeriesParams:
    target_delta_pos: float = 1.0     # mm
    target_delta_rot: float = 0.01    # rad
    zoom: float = 0.7
    particles_per_delta: int = 5
    prune_log_threshold: float = 4.0
    max_particles: int = 500
    initial_particles: int | None = 2000   # None: size from the region volume

    def __post_init__(self):
        if not (self.target_delta_pos > 0 and self.target_delta_rot > 0):
            raise ValueError("target deltas must be positive")
        if not 0 < self.zoom < 1:
            raise ValueError("zoom must lie in (0, 1)")
        if self.particles_per_delta < 1 or self.max_particles < 1:
            raise ValueError("particle counts must be >= 1")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class Particle:
    pose: Pose
    log_weight: float


class Belief:
    """Weighted particle set; arrays q (N, 4), t (N, 3) and log-weights (N,)."""

    def __init__(self, q, t, log_w, normalized=False):
        self.q = np.asarray(q, dtype=float).reshape(-1, 4)
        self.t = np.asarray(t, dtype=float).reshape(-1, 3)
        self.log_w = np.asarray(log_w, dtype=float).reshape(-1)
        if not (len(self.q) == len(self.t) == len(self.log_w)) or len(self.q) == 0:
            raise ValueError("belief needs a non-empty, consistent particle set")
        self.normalized = normalized

    def __len__(self):
        return len(self.log_w)

    @property
    def weights(self):
        return np.exp(self.log_w - (0.0 if self.normalized else logsumexp(self.log_w)))

    @property
    def particles(self):
        return [Particle(Pose(q, t), float(w)) for q, t, w in zip(self.q, self.t, self.log_w)]

    def mean(self) -> Pose:
        return pose_mean((self.q, self.t), self.weights)

    def to_dict(self):
        return [{"pose": Pose(q, t).to_dict(), "weight": float(w)}
                for q, t, w in zip(self.q, self.t, self.weights)]

    def to_json(self):
        return json.dumps(self.to_dict())

    def __eq__(self, other):
        return (isinstance(other, Belief) and np.array_equal(self.q, other.q)
                and np.array_equal(self.t, other.t) and np.array_equal(self.log_w, other.log_w))


def anneal_sigma(noise: NoiseParams, delta_t: float, delta_star: float) -> NoiseParams:
    if not delta_t >= delta_star > 0:
        raise ValueError("need delta_t >= delta_star > 0")
    if delta_t == delta_star:
        return noise
    return noise.scaled(delta_t / delta_star)


def systematic_resample(weights, n, rng):
    """Indices of ``n`` draws by systematic resampling (weights sum to 1)."""
    c = np.cumsum(weights)
    c[-1] = 1.0
    u = (rng.uniform() + np.arange(n)) / n
    return np.searchsorted(c, u, side="right")


def normalize_and_prune(belief: Belief, prune_log_threshold: float, max_particles: int,
                        rng) -> Belief:
    lw = belief.log_w
    top = lw.max()
    if not np.isfinite(top):
        raise ParticleCollapseError("all particle weights are zero")
    keep = lw >= top - prune_log_threshold
    q, t, lw = belief.q[keep], belief.t[keep], lw[keep]
    lw = lw - logsumexp(lw)
    if len(lw) > max_particles:
        idx = systematic_resample(np.exp(lw), max_particles, rng)
        q, t = q[idx], t[idx]
        lw = np.full(max_particles, -math.log(max_particles))
    return Belief(q, t, lw, normalized=True)


def sample_neighborhood(q, t, m, delta_pos, delta_rot, rng):
    """``m`` uniform draws around each pose.

    Translation is uniform in a ball of radius ``delta_pos``; rotation is a
    body-frame axis-angle perturbation with uniform axis and angle in
    [0, delta_rot].
    """
    n = len(q) * m
    q = np.repeat(q, m, axis=0)
    t = np.repeat(t, m, axis=0)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = delta_pos * rng.uniform(size=n) ** (1.0 / 3.0)
    a = rng.standard_normal((n, 3))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    ang = delta_rot * rng.uniform(size=n)
    dq = quat_from_rotvec(a * ang[:, None])
    return canonical_quat(quat_multiply(q, dq)), t + d * r[:, None]


def schedule(region: UncertaintyRegion, params: ScalingSeriesParams):
    """Annealing factors delta_t / delta_star for each stage, last one 1."""
    ratios = [h / params.target_delta_pos for h in region.trans_half if h > 0]
    ratios += [h / params.target_delta_rot for h in region.rot_half if h > 0]
    scale0 = max(ratios, default=1.0)
    n_stages = max(1, math.ceil(math.log(scale0) / math.log(1.0 / params.zoom) - 1e-12)) \
        if scale0 > 1 else 1
    return [(1.0 / params.zoom) ** (n_stages - k) for k in range(1, n_stages + 1)]


def initial_count(region: UncertaintyRegion, params: ScalingSeriesParams, factor: float):
    if params.initial_particles is not None:
        return params.initial_particles
    dp = params.target_delta_pos * factor
    dr = params.target_delta_rot * factor
    cells = 1.0
    for h in region.trans_half:
        cells *= max(1.0, h / dp)
    for h in region.rot_half:
        cells *= max(1.0, h / dr)
    return int(min(params.max_particles, math.ceil(params.particles_per_delta * cells)))


def _as_rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def estimate_pose(region: UncertaintyRegion, ys, mesh: Mesh, noise: NoiseParams,
                  params: ScalingSeriesParams = ScalingSeriesParams(),
                  index: AngleIndex | None = None, rng=None, delta_alpha=None,
                  stats: dict | None = None):
    """Run the Scaling Series and return ``(belief, mean pose)``.

    ``delta_alpha`` (the face-selection window used with ``index``) defaults to
    :func:`default_window` and widens with the annealed noise, so early stages
    see nearly every face and the last stage uses the window as given. If ``stats`` is given it is
    filled with per-stage particle counts and face evaluations.
    """
    ys = as_measurement_set(ys)
    if len(ys) == 0:
        raise ValueError("empty measurement set")
    if index is not None:
        index.check(mesh)
    rng = _as_rng(rng)
    if region.is_degenerate:
        c = region.center
        b = Belief(c.q[None], c.t[None], [0.0], normalized=True)
        return b, c
    if delta_alpha is None:
        delta_alpha = default_window(noise)
    factors = schedule(region, params)
    if stats is not None:
        stats.update(stages=len(factors), particles=[], face_evals=0, likelihood_evals=0)
    belief = None
    prev = None
    for f in factors:
        if belief is None:
            q, t = sample_poses_uniform(region, initial_count(region, params, f), rng)
        else:
            q, t = _cover(belief, params, prev, rng)
        belief = _weigh(q, t, ys, mesh, anneal_sigma(noise, f, 1.0), params, index,
                        delta_alpha * f, rng, stats)
        prev = f
    # final even cover of the target-precision neighborhoods, scored with the true noise
    q, t = _cover(belief, params, 1.0, rng)
    belief = _weigh(q, t, ys, mesh, noise, params, index, delta_alpha, rng, stats)
    return belief, belief.mean()


def _cover(belief, params, factor, rng):
    return sample_neighborhood(belief.q, belief.t, params.particles_per_delta,
                               params.target_delta_pos * factor,
                               params.target_delta_rot * factor, rng)


def _weigh(q, t, ys, mesh, noise, params, index, delta_alpha, rng, stats):
    ll, visited = batch_log_likelihood(ys, mesh, (q, t), noise, index, delta_alpha)
    if stats is not None:
        stats["particles"].append(len(q))
        stats["face_evals"] += int(visited)
        stats["likelihood_evals"] += len(q) * len(ys)
    return normalize_and_prune(Belief(q, t, ll), params.prune_log_threshold,
                               params.max_particles, rng)

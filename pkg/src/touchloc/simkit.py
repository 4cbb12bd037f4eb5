"""Synthetic touch data: surface sampling and ray-traced cluttered scenes."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from touchloc import _kernels
from touchloc.geometry import Mesh, Pose, load_mesh
from touchloc.measurement import (MeasurementSet, NoiseParams, constraint_strength,
                                  measurements_to_jsonl)

RAY_EPS = 1e-9


# --------------------------------------------------------------------------
# Noise
# --------------------------------------------------------------------------

def perturb_normals(normals, sigma_nor, rng):
    """Rotate each normal about a random perpendicular axis by |N(0, sigma_nor)|."""
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    n = len(normals)
    if sigma_nor == 0 or n == 0:
        return normals.copy()
    v = rng.standard_normal((n, 3))
    axis = v - np.sum(v * normals, axis=1, keepdims=True) * normals
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    angle = np.abs(rng.normal(0.0, sigma_nor, size=n))
    out = normals * np.cos(angle)[:, None] + np.cross(axis, normals) * np.sin(angle)[:, None]
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def apply_noise(positions, normals, noise: NoiseParams | None, rng):
    """Isotropic Gaussian position noise and angular normal noise.

    ``noise=None`` leaves the data untouched (and consumes no random draws).
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    if noise is None:
        return positions.copy(), normals.copy()
    P = positions + rng.normal(0.0, noise.sigma_pos, size=positions.shape)
    N = perturb_normals(normals, noise.sigma_nor, rng)
    return P, N


# --------------------------------------------------------------------------
# Surface sampling
# --------------------------------------------------------------------------

def sample_surface_points(mesh: Mesh, n: int, rng):
    """Area-weighted uniform surface points; returns (points, normals, face ids)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p = mesh.areas / mesh.areas.sum()
    fid = rng.choice(mesh.n_faces, size=n, p=p)
    r1 = rng.uniform(size=n)
    r2 = rng.uniform(size=n)
    s = np.sqrt(r1)
    tri = mesh.triangles[fid]
    pts = ((1 - s)[:, None] * tri[:, 0] + (s * (1 - r2))[:, None] * tri[:, 1]
           + (s * r2)[:, None] * tri[:, 2])
    return pts, mesh.normals[fid].copy(), fid


def sample_surface_measurements(mesh: Mesh, pose: Pose, n: int, noise: NoiseParams | None,
                                rng, return_faces=False):
    """Noisy contact measurements at ``n`` random surface points of the posed mesh."""
    pts, nor, fid = sample_surface_points(mesh, n, rng)
    R = pose.R
    P = pts @ R.T + pose.t
    N = nor @ R.T
    N /= np.linalg.norm(N, axis=1, keepdims=True)
    P, N = apply_noise(P, N, noise, rng)
    ys = MeasurementSet(P, N)
    return (ys, fid) if return_faces else ys


def constraint_rank(points, normals, tol=1e-3):
    """Numerical rank of the point-to-plane constraint matrix (max 6).

    Each contact contributes the row [n, p x n]; rank 6 means the contacts
    pin down all six rigid degrees of freedom to first order.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    N = np.asarray(normals, dtype=float).reshape(-1, 3)
    if len(P) == 0:
        return 0
    c = P.mean(axis=0)
    scale = max(np.linalg.norm(P - c, axis=1).max(), 1e-12)
    J = np.hstack([N, np.cross((P - c) / scale, N)])
    s = np.linalg.svd(J, compute_uv=False)
    return int(np.sum(s > tol * max(s[0], 1e-300)))


def sample_constraining_measurements(mesh: Mesh, pose: Pose, n: int, noise: NoiseParams | None,
                                     rng, min_sv=0.15, max_draws=100):
    """Like :func:`sample_surface_measurements`, redrawn until the contacts constrain all 6 DOF.

    The check uses the noiseless contacts: their
    :func:`~touchloc.measurement.constraint_strength` must reach ``min_sv``.
    """
    R = pose.R
    for _ in range(max_draws):
        pts, nor, fid = sample_surface_points(mesh, n, rng)
        if constraint_strength(pts, nor) >= min_sv:
            P = pts @ R.T + pose.t
            N = nor @ R.T
            N /= np.linalg.norm(N, axis=1, keepdims=True)
            P, N = apply_noise(P, N, noise, rng)
            return MeasurementSet(P, N)
    raise RuntimeError(f"no constraining set of {n} contacts in {max_draws} draws")


# --------------------------------------------------------------------------
# Scenes and ray casting
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class SceneObject:
    mesh: Mesh
    pose: Pose
    label: str
    mesh_path: str | None = None


class Scene:
    """Posed meshes with one designated target."""

    def __init__(self, objects, target: str):
        objects = list(objects)
        labels = [o.label for o in objects]
        if labels.count(target) != 1:
            raise ValueError("scene needs exactly one object with the target label")
        if len(set(labels)) != len(labels):
            raise ValueError("scene labels must be unique")
        self.objects = objects
        self.target = target
        self._world = [o.mesh.transformed(o.pose) for o in objects]
        self._tris = np.concatenate([w.triangles for w in self._world])
        self._normals = np.concatenate([w.normals for w in self._world])
        self._owner = np.concatenate([np.full(w.n_faces, i) for i, w in enumerate(self._world)])
        self._local = np.concatenate([np.arange(w.n_faces) for w in self._world])

    @property
    def target_object(self) -> SceneObject:
        return next(o for o in self.objects if o.label == self.target)

    @property
    def world_triangles(self):
        return self._tris

    @property
    def world_normals(self):
        return self._normals

    def face_owner(self, k):
        """(object index, local face id) of global triangle ``k``."""
        return int(self._owner[k]), int(self._local[k])

    def to_dict(self):
        return {
            "objects": [{"mesh": o.mesh_path, "pose": o.pose.to_dict(), "label": o.label}
                        for o in self.objects],
            "target": self.target,
        }

    @classmethod
    def load(cls, path):
        path = Path(path)
        d = json.loads(path.read_text())
        objs = []
        for o in d["objects"]:
            mp = Path(o["mesh"])
            if not mp.is_absolute():
                mp = path.parent / mp
            objs.append(SceneObject(load_mesh(mp), Pose.from_dict(o["pose"]), o["label"], o["mesh"]))
        return cls(objs, d["target"])


def raycast(scene: Scene, ray: Ray):
    """Nearest hit as (point, outward normal, label, global face id), or None."""
    hits = _kernels.ray_hits(ray.origin, ray.direction, scene.world_triangles, RAY_EPS)
    t = hits[:, 0]
    finite = np.isfinite(t)
    if not finite.any():
        return None
    tmin = t[finite].min()
    # argmax returns the first (lowest mesh, face) among exact ties
    k = int(np.argmax(t == tmin))
    label = scene.objects[int(scene._owner[k])].label
    return ray.origin + tmin * ray.direction, scene.world_normals[k].copy(), label, k


@dataclass(frozen=True)
class LabeledMeasurement:
    position: np.ndarray
    normal: np.ndarray
    label: str
    is_outlier: bool


@dataclass(frozen=True)
class ApproachConfig:
    """Random end-effector approaches aimed at the target region center.

    Directions are uniform on the sphere above ``min_elevation`` (rad from
    the horizontal; the default allows every direction). The aim point can be
    jittered uniformly within ``aim_jitter`` (mm, per axis). Rays start
    ``standoff`` mm from the aim point.
    """
    standoff: float = 400.0
    aim_jitter: tuple = (0.0, 0.0, 0.0)
    min_elevation: float = -np.pi / 2
    max_retries: int = 200


def generate_cluttered_measurements(scene: Scene, n: int, noise: NoiseParams | None, rng,
                                    center: Pose | None = None,
                                    approach: ApproachConfig = ApproachConfig()):
    center = scene.target_object.pose if center is None else center
    out = []
    misses = 0
    while len(out) < n:
        while True:
            z = rng.uniform(np.sin(approach.min_elevation), 1.0)
            phi = rng.uniform(0.0, 2 * np.pi)
            r = np.sqrt(1.0 - z * z)
            inward = -np.array([r * np.cos(phi), r * np.sin(phi), z])
            aim = center.t + rng.uniform(-1.0, 1.0, 3) * np.asarray(approach.aim_jitter)
            hit = raycast(scene, Ray(aim - approach.standoff * inward, inward))
            if hit is not None:
                break
            misses += 1
            if misses > approach.max_retries:
                raise RuntimeError(f"only {len(out)} of {n} approach rays hit the scene")
        p, nor, label, _ = hit
        P, N = apply_noise(p[None], nor[None], noise, rng)
        out.append(LabeledMeasurement(P[0], N[0], label, label != scene.target))
    return out


def labeled_to_set(lms) -> MeasurementSet:
    return MeasurementSet([m.position for m in lms], [m.normal for m in lms])


def labeled_to_jsonl(lms) -> str:
    extra = [{"label": m.label, "outlier": bool(m.is_outlier)} for m in lms]
    return measurements_to_jsonl(labeled_to_set(lms), extra)


# --------------------------------------------------------------------------
# Planted outliers
# --------------------------------------------------------------------------

def plant_outliers(mesh: Mesh, pose: Pose, n: int, noise: NoiseParams, rng,
                   min_distance=10.0, shell=(40.0, 80.0)):
    """Measurements lying at least ``min_distance`` combined sigmas from the posed object.

    Points are drawn in a shell around the object surface (``shell`` mm from a
    random surface point, along a random direction) with random normals, and
    rejected until their object distance at ``pose`` is large enough.
    """
    from touchloc.measurement import object_distances
    P, N = [], []
    while len(P) < n:
        pts, _, _ = sample_surface_points(mesh, 1, rng)
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        p = pose.R @ (pts[0] + rng.uniform(*shell) * d) + pose.t
        nv = rng.standard_normal(3)
        nv /= np.linalg.norm(nv)
        dist, _ = object_distances(MeasurementSet(p[None], nv[None]), mesh, pose, noise)
        if dist[0] >= min_distance:
            P.append(p)
            N.append(nv)
    return MeasurementSet(np.array(P), np.array(N))


# --------------------------------------------------------------------------
# Reference clutter scene: target box next to a chair back and a wooden stick
# --------------------------------------------------------------------------

def clutter_scene(target_pose: Pose | None = None) -> Scene:
    from touchloc.fixtures import fixture_mesh
    box = fixture_mesh("box")
    back = fixture_mesh("back")
    stick = fixture_mesh("stick")
    target_pose = Pose() if target_pose is None else target_pose
    # chair back standing upright behind the box, slab normal along y
    back_pose = Pose.from_rotvec([0.0, 0.0, np.pi / 2], [0.0, 100.0, 60.0])
    # stick resting across the front half of the box top
    stick_pose = Pose.from_rotvec([0.0, 0.0, 0.35], [0.0, -30.0, 50.0])
    return Scene([
        SceneObject(box, target_pose, "box", "box.obj"),
        SceneObject(back, back_pose, "back", "back.obj"),
        SceneObject(stick, stick_pose, "stick", "stick.obj"),
    ], target="box")

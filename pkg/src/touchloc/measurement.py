"""Proximity measurement model for contact position + normal measurements.

A measurement's distance to a face combines the Euclidean distance from the
contact point to the posed triangle and the angle between the contact normal
and the posed face normal, each scaled by its noise standard deviation. Its
distance to the object is the minimum over faces, and the log-likelihood of a
measurement set is minus half the sum of squared object distances.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from touchloc import _kernels
from touchloc.face_index import AngleIndex
from touchloc.geometry import Mesh, Pose, atomic_write_text, quat_to_matrix


@dataclass(frozen=True)
class NoiseParams:
    sigma_pos: float = 2.0   # mm
    sigma_nor: float = 0.09  # rad

    def __post_init__(self):
        if not (self.sigma_pos > 0 and self.sigma_nor > 0):
            raise ValueError("noise standard deviations must be positive")

    def scaled(self, factor: float) -> "NoiseParams":
        return NoiseParams(self.sigma_pos * factor, self.sigma_nor * factor)


@dataclass(frozen=True, eq=False)
class Measurement:
    position: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        p = np.array(self.position, dtype=float)
        n = np.array(self.normal, dtype=float)
        if p.shape != (3,) or n.shape != (3,):
            raise ValueError("measurement needs a 3-vector position and normal")
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("measurement normal must be unit length")
        p.setflags(write=False)
        n.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "normal", n)

    def __eq__(self, other):
        return (isinstance(other, Measurement)
                and np.array_equal(self.position, other.position)
                and np.array_equal(self.normal, other.normal))

    def to_dict(self):
        return {"p": self.position.tolist(), "n": self.normal.tolist()}


class MeasurementSet:
    """Ordered measurements stored as (K, 3) position and normal arrays."""

    def __init__(self, positions, normals):
        P = np.array(positions, dtype=float).reshape(-1, 3)
        N = np.array(normals, dtype=float).reshape(-1, 3)
        if P.shape != N.shape:
            raise ValueError("positions and normals differ in length")
        if len(N) and np.any(np.abs(np.linalg.norm(N, axis=1) - 1.0) > 1e-9):
            raise ValueError("measurement normals must be unit length")
        P.setflags(write=False)
        N.setflags(write=False)
        self.positions = P
        self.normals = N

    @classmethod
    def from_measurements(cls, ms):
        ms = list(ms)
        return cls([m.position for m in ms], [m.normal for m in ms])

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, k):
        return Measurement(self.positions[k], self.normals[k])

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]

    def subset(self, ids) -> "MeasurementSet":
        ids = np.asarray(list(ids), dtype=np.int64)
        return MeasurementSet(self.positions[ids], self.normals[ids])

    def concat(self, other: "MeasurementSet") -> "MeasurementSet":
        return MeasurementSet(np.vstack([self.positions, other.positions]),
                              np.vstack([self.normals, other.normals]))

    def __eq__(self, other):
        return (isinstance(other, MeasurementSet)
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.normals, other.normals))

    def __repr__(self):
        return f"MeasurementSet({len(self)} measurements)"


def as_measurement_set(ys) -> MeasurementSet:
    if isinstance(ys, MeasurementSet):
        return ys
    if isinstance(ys, Measurement):
        return MeasurementSet.from_measurements([ys])
    return MeasurementSet.from_measurements(ys)


def constraint_strength(points, normals) -> float:
    """How well a set of contacts pins down a rigid pose, scale-free.

    Each contact contributes the point-to-plane row [n, p x n] (positions
    centered and scaled to unit radius). Returns the smallest singular value
    of that 6-column matrix divided by sqrt(count): 0 when some motion leaves
    every contact on its plane, about 0.2 for contacts spread over a box.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    N = np.asarray(normals, dtype=float).reshape(-1, 3)
    if len(P) < 6:
        return 0.0
    c = P.mean(axis=0)
    scale = max(np.linalg.norm(P - c, axis=1).max(), 1e-12)
    J = np.hstack([N, np.cross((P - c) / scale, N)])
    return float(np.linalg.svd(J, compute_uv=False)[-1] / np.sqrt(len(P)))


# --------------------------------------------------------------------------
# File formats: JSON lines {"p": [...], "n": [...]} or 6-column CSV
# --------------------------------------------------------------------------

def read_measurements(path) -> MeasurementSet:
    path = Path(path)
    text = path.read_text()
    rows = []
    if path.suffix.lower() == ".csv":
        for row in csv.reader(text.splitlines()):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError:
                continue  # header line
            if len(vals) != 6:
                raise ValueError(f"{path}: expected 6 columns, got {len(vals)}")
            rows.append((vals[:3], vals[3:]))
    else:
        for line in text.splitlines():
            if line.strip():
                d = json.loads(line)
                rows.append((d["p"], d["n"]))
    if not rows:
        return MeasurementSet(np.zeros((0, 3)), np.zeros((0, 3)))
    P = np.array([r[0] for r in rows], dtype=float)
    N = np.array([r[1] for r in rows], dtype=float)
    # tolerate normals written with limited precision
    N = N / np.linalg.norm(N, axis=1, keepdims=True)
    return MeasurementSet(P, N)


def measurements_to_jsonl(ys: MeasurementSet, extra=None) -> str:
    lines = []
    for k in range(len(ys)):
        d = {"p": ys.positions[k].tolist(), "n": ys.normals[k].tolist()}
        if extra is not None:
            d.update(extra[k])
        lines.append(json.dumps(d))
    return "\n".join(lines) + ("\n" if lines else "")


def write_measurements(path, ys: MeasurementSet, extra=None):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        text = "".join(",".join(repr(float(v)) for v in (*p, *n)) + "\n"
                       for p, n in zip(ys.positions, ys.normals))
    else:
        text = measurements_to_jsonl(ys, extra)
    atomic_write_text(path, text)


# --------------------------------------------------------------------------
# Distances
# --------------------------------------------------------------------------

def _pose_arrays(poses):
    """Pose, list of Poses, or (q, t) arrays -> (R (N,3,3), t (N,3))."""
    if isinstance(poses, Pose):
        return poses.R[None], poses.t[None].copy()
    if isinstance(poses, tuple) and len(poses) == 2 and isinstance(poses[0], np.ndarray):
        q, t = poses
        return quat_to_matrix(q).reshape(-1, 3, 3), np.ascontiguousarray(t, dtype=float).reshape(-1, 3)
    poses = list(poses)
    return (np.array([p.R for p in poses]).reshape(-1, 3, 3),
            np.array([p.t for p in poses]).reshape(-1, 3))


def batch_object_distances(ys, mesh: Mesh, poses, noise: NoiseParams,
                           index: AngleIndex | None = None, delta_alpha=None):
    """Object distance of every measurement under every pose.

    Returns ``(dist, face_id, faces_visited)`` with ``dist`` and ``face_id`` of
    shape (n_poses, n_measurements). ``delta_alpha`` defaults to
    ``noise.sigma_nor`` and is only used with an index.
    """
    ys = as_measurement_set(ys)
    Rs, ts = _pose_arrays(poses)
    inv_sp = 1.0 / noise.sigma_pos
    inv_sn = 1.0 / noise.sigma_nor
    if index is None:
        dist, fid = _kernels.object_distance_exhaustive(
            Rs, ts, ys.positions, ys.normals, mesh.triangles, mesh.normals, inv_sp, inv_sn)
        return dist, fid, len(Rs) * len(ys) * mesh.n_faces
    index.check(mesh)
    if delta_alpha is None:
        delta_alpha = noise.sigma_nor
    if delta_alpha < 0:
        raise ValueError("delta_alpha must be >= 0")
    return _kernels.object_distance_indexed(
        Rs, ts, ys.positions, ys.normals, mesh.triangles, mesh.normals, inv_sp, inv_sn,
        index.alphas, index.face_ids, index.reference, float(delta_alpha))


def face_distance(y: Measurement, face_id: int, mesh: Mesh, pose: Pose,
                  noise: NoiseParams) -> float:
    if not 0 <= face_id < mesh.n_faces:
        raise IndexError(f"face id {face_id} out of range")
    ids = np.array([face_id], dtype=np.int64)
    return float(_kernels.face_costs(pose.R, pose.t, y.position, y.normal, mesh.triangles,
                                     mesh.normals, ids, 1.0 / noise.sigma_pos,
                                     1.0 / noise.sigma_nor)[0])


def face_distances(y: Measurement, mesh: Mesh, pose: Pose, noise: NoiseParams):
    """Distance from ``y`` to every face, as an (F,) array."""
    ids = np.arange(mesh.n_faces, dtype=np.int64)
    return _kernels.face_costs(pose.R, pose.t, y.position, y.normal, mesh.triangles,
                               mesh.normals, ids, 1.0 / noise.sigma_pos, 1.0 / noise.sigma_nor)


def object_distance(y: Measurement, mesh: Mesh, pose: Pose, noise: NoiseParams,
                    index: AngleIndex | None = None, delta_alpha=None):
    """(distance, face id) of the closest face; ties go to the lowest face id."""
    dist, fid, _ = batch_object_distances(y, mesh, pose, noise, index, delta_alpha)
    return float(dist[0, 0]), int(fid[0, 0])


def object_distances(ys, mesh: Mesh, pose: Pose, noise: NoiseParams,
                     index: AngleIndex | None = None, delta_alpha=None):
    """Per-measurement (distances, face ids) at a single pose."""
    dist, fid, _ = batch_object_distances(ys, mesh, pose, noise, index, delta_alpha)
    return dist[0], fid[0]


def total_error(ys, mesh: Mesh, pose: Pose, noise: NoiseParams,
                index: AngleIndex | None = None, delta_alpha=None) -> float:
    d, _ = object_distances(ys, mesh, pose, noise, index, delta_alpha)
    return float(np.sum(d * d))


def log_likelihood(ys, mesh: Mesh, pose: Pose, noise: NoiseParams,
                   index: AngleIndex | None = None, delta_alpha=None) -> float:
    """Unnormalized log-likelihood, ``-total_error / 2``."""
    return -0.5 * total_error(ys, mesh, pose, noise, index, delta_alpha)


def batch_log_likelihood(ys, mesh: Mesh, poses, noise: NoiseParams,
                         index: AngleIndex | None = None, delta_alpha=None):
    dist, _, visited = batch_object_distances(ys, mesh, poses, noise, index, delta_alpha)
    return -0.5 * np.sum(dist * dist, axis=1), visited

"""Meshes, rigid poses and the metric primitives used by the rest of the package.

Units are millimetres and radians throughout. Rotations are stored as unit
quaternions in (w, x, y, z) order with a non-negative scalar part.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from touchloc import _kernels


class MeshError(ValueError):
    """Raised for malformed or degenerate mesh input."""


class MeshParseError(MeshError):
    pass


class MeshValidationError(MeshError):
    pass


AREA_EPS = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# Quaternion helpers (w, x, y, z)
# --------------------------------------------------------------------------

def canonical_quat(q):
    """Normalize and flip sign so that w >= 0. Works on (4,) or (N, 4)."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_to_scipy(q):
    q = np.asarray(q, dtype=float)
    return Rotation.from_quat(q[..., [1, 2, 3, 0]])


def scipy_to_quat(rot):
    q = rot.as_quat()
    return canonical_quat(q[..., [3, 0, 1, 2]])


def quat_multiply(q1, q2):
    """Hamilton product q1 * q2 (broadcasts over leading axes)."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    w1, x1, y1, z1 = np.moveaxis(q1, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(q2, -1, 0)
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def quat_to_matrix(q):
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def quat_from_rotvec(v):
    """Axis-angle vector(s) to quaternion(s)."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(x/2)/x, with its series near zero
    small = angle < 1e-8
    safe = np.where(small, 1.0, angle)
    k = np.where(small, 0.5 - angle ** 2 / 48.0, np.sin(half) / safe)
    return np.concatenate([np.cos(half), v * k], axis=-1)


def quat_to_rotvec(q):
    q = canonical_quat(q)
    w = q[..., :1]
    vec = q[..., 1:]
    s = np.linalg.norm(vec, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, w)
    small = s < 1e-12
    k = np.where(small, 2.0, angle / np.where(small, 1.0, s))
    return vec * k


def axis_rotation(axis, angle):
    """Quaternion for a rotation of ``angle`` about coordinate axis 0/1/2."""
    q = np.zeros(np.shape(angle) + (4,))
    q[..., 0] = np.cos(0.5 * np.asarray(angle))
    q[..., 1 + axis] = np.sin(0.5 * np.asarray(angle))
    return q


# --------------------------------------------------------------------------
# Pose
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """Rigid transform taking object-frame coordinates to world coordinates."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        t = np.asarray(self.t, dtype=float)
        if q.shape != (4,) or t.shape != (3,):
            raise ValueError("pose needs a 4-quaternion and a 3-translation")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("pose components must be finite")
        n = np.linalg.norm(q)
        if n == 0.0:
            raise ValueError("zero quaternion")
        object.__setattr__(self, "q", _frozen(canonical_quat(q)))
        object.__setattr__(self, "t", _frozen(t))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_rotvec(cls, rotvec, t=(0.0, 0.0, 0.0)):
        return cls(quat_from_rotvec(rotvec), t)

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)):
        return cls(scipy_to_quat(Rotation.from_matrix(R)), t)

    @property
    def R(self):
        return quat_to_matrix(self.q)

    def rotvec(self):
        return quat_to_rotvec(self.q)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply ``other`` first, then ``self``."""
        q = quat_multiply(self.q, other.q)
        t = self.R @ other.t + self.t
        return Pose(q, t)

    def inverse(self) -> "Pose":
        qi = self.q * np.array([1.0, -1.0, -1.0, -1.0])
        return Pose(qi, -(quat_to_matrix(qi) @ self.t))

    def to_dict(self):
        return {"q": [float(v) for v in self.q], "t": [float(v) for v in self.t]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["q"], d["t"])

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.q, other.q) and np.array_equal(self.t, other.t))

    def __hash__(self):
        return hash((self.q.tobytes(), self.t.tobytes()))

    def __repr__(self):
        q = ", ".join(f"{v:.6g}" for v in self.q)
        t = ", ".join(f"{v:.6g}" for v in self.t)
        return f"Pose(q=[{q}], t=[{t}])"


def transform_point(pose: Pose, p):
    return pose.R @ np.asarray(p, dtype=float) + pose.t


def transform_direction(pose: Pose, n):
    return pose.R @ np.asarray(n, dtype=float)


def rotation_distance(q1, q2) -> float:
    """Geodesic angle between two orientations, in [0, pi].

    Accepts Pose objects or (w, x, y, z) quaternions.
    """
    q1 = q1.q if isinstance(q1, Pose) else canonical_quat(q1)
    q2 = q2.q if isinstance(q2, Pose) else canonical_quat(q2)
    # relative rotation q1^-1 q2; atan2 form equals 2*acos(|<q1,q2>|) but keeps
    # full precision near the identity
    rel = quat_multiply(q1 * np.array([1.0, -1.0, -1.0, -1.0]), q2)
    return float(2.0 * math.atan2(np.linalg.norm(rel[1:]), abs(rel[0])))


def translation_distance(t1, t2) -> float:
    t1 = t1.t if isinstance(t1, Pose) else np.asarray(t1, dtype=float)
    t2 = t2.t if isinstance(t2, Pose) else np.asarray(t2, dtype=float)
    return float(np.linalg.norm(t1 - t2))


def angle_between(a, b) -> float:
    """Angle in [0, pi] between two (unit) vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(math.atan2(np.linalg.norm(np.cross(a, b)), float(np.dot(a, b))))


def point_triangle_distance(p, a, b, c) -> float:
    """Exact Euclidean distance from ``p`` to the closed triangle ``abc``."""
    a, b, c = (np.asarray(v, dtype=float) for v in (a, b, c))
    if np.linalg.norm(np.cross(b - a, c - a)) <= AREA_EPS:
        raise MeshValidationError("degenerate triangle")
    tri = np.stack([a, b, c])
    return float(_kernels.point_triangle_distance(np.asarray(p, dtype=float), tri))


# --------------------------------------------------------------------------
# Mesh
# --------------------------------------------------------------------------

class Mesh:
    """Immutable triangle mesh with outward unit normals from the winding order."""

    def __init__(self, vertices, faces):
        vertices = np.array(vertices, dtype=float).reshape(-1, 3)
        faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
        if len(faces) == 0 or len(vertices) == 0:
            raise MeshValidationError("empty mesh")
        if not np.all(np.isfinite(vertices)):
            raise MeshValidationError("non-finite vertex coordinates")
        if faces.min() < 0 or faces.max() >= len(vertices):
            raise MeshValidationError("face index out of range")
        if np.any((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2])
                  | (faces[:, 0] == faces[:, 2])):
            raise MeshValidationError("face with repeated vertex index")
        tri = vertices[faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norm = np.linalg.norm(cross, axis=1)
        bad = np.flatnonzero(norm <= AREA_EPS)
        if len(bad):
            raise MeshValidationError(f"zero-area face(s): {bad.tolist()[:10]}")
        self._vertices = _frozen(vertices)
        self._faces = _frozen(faces, np.int64)
        self._normals = _frozen(cross / norm[:, None])
        self._areas = _frozen(0.5 * norm)
        self._triangles = _frozen(tri)
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self._vertices).tobytes())
        h.update(np.ascontiguousarray(self._faces).tobytes())
        self._fingerprint = h.hexdigest()

    vertices = property(lambda self: self._vertices)
    faces = property(lambda self: self._faces)
    normals = property(lambda self: self._normals)
    areas = property(lambda self: self._areas)
    triangles = property(lambda self: self._triangles, doc="(F, 3, 3) vertex coordinates")
    fingerprint = property(lambda self: self._fingerprint)

    @property
    def n_faces(self):
        return len(self._faces)

    def __len__(self):
        return self.n_faces

    def __repr__(self):
        return f"Mesh({len(self._vertices)} vertices, {self.n_faces} faces)"

    def transformed(self, pose: Pose) -> "Mesh":
        return Mesh(self._vertices @ pose.R.T + pose.t, self._faces)

    def bounds(self):
        return self._vertices.min(axis=0), self._vertices.max(axis=0)

    def to_obj(self) -> str:
        lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in self._vertices.tolist()]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in self._faces.tolist()]
        return "\n".join(lines) + "\n"

    def save(self, path):
        path = Path(path)
        atomic_write_text(path, self.to_obj())


def atomic_write_text(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


class _VertexTable:
    """Vertex list with exact-coordinate deduplication."""

    def __init__(self):
        self.coords = []
        self.lookup = {}

    def add(self, xyz):
        key = tuple(xyz)
        idx = self.lookup.get(key)
        if idx is None:
            idx = len(self.coords)
            self.lookup[key] = idx
            self.coords.append(key)
        return idx


def _parse_floats(tokens, lineno):
    try:
        vals = [float(tok) for tok in tokens]
    except ValueError:
        raise MeshParseError(f"line {lineno}: bad number in {tokens!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise MeshParseError(f"line {lineno}: non-finite coordinate")
    return vals


def _parse_obj(text):
    raw = []
    polys = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise MeshParseError(f"line {lineno}: vertex needs 3 coordinates")
            raw.append(_parse_floats(parts[1:4], lineno))
        elif parts[0] == "f":
            if len(parts) < 4:
                raise MeshParseError(f"line {lineno}: face needs at least 3 vertices")
            idx = []
            for tok in parts[1:]:
                try:
                    i = int(tok.split("/")[0])
                except ValueError:
                    raise MeshParseError(f"line {lineno}: bad face index {tok!r}") from None
                if i < 0:
                    i = len(raw) + i + 1
                if i < 1 or i > len(raw):
                    raise MeshParseError(f"line {lineno}: face index {tok} out of range")
                idx.append(i - 1)
            polys.append(idx)
    table = _VertexTable()
    remap = [table.add(xyz) for xyz in raw]
    faces = []
    for poly in polys:
        poly = [remap[i] for i in poly]
        # convex fan triangulation
        for k in range(1, len(poly) - 1):
            faces.append((poly[0], poly[k], poly[k + 1]))
    return table.coords, faces


def _parse_stl_ascii(text):
    table = _VertexTable()
    faces = []
    loop = None
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        key = parts[0].lower()
        if key == "outer":
            loop = []
        elif key == "vertex":
            if loop is None or len(parts) != 4:
                raise MeshParseError(f"line {lineno}: misplaced or malformed vertex")
            loop.append(table.add(tuple(_parse_floats(parts[1:], lineno))))
        elif key == "endloop":
            if loop is None or len(loop) < 3:
                raise MeshParseError(f"line {lineno}: facet loop with < 3 vertices")
            for k in range(1, len(loop) - 1):
                faces.append((loop[0], loop[k], loop[k + 1]))
            loop = None
        elif key in ("solid", "facet", "endfacet", "endsolid"):
            continue
        else:
            raise MeshParseError(f"line {lineno}: unexpected token {parts[0]!r}")
    if loop is not None:
        raise MeshParseError("unterminated facet loop")
    return table.coords, faces


def load_mesh(path, format=None) -> Mesh:
    """Load an OBJ or ASCII STL file.

    ``format`` is ``"obj"`` or ``"stl-ascii"``; when omitted it is taken from
    the file extension. Source normals are ignored and recomputed from the
    vertex winding.
    """
    path = Path(path)
    if format is None:
        format = {".obj": "obj", ".stl": "stl-ascii"}.get(path.suffix.lower())
        if format is None:
            raise MeshParseError(f"cannot infer mesh format from {path.name}")
    try:
        text = path.read_text()
    except UnicodeDecodeError:
        raise MeshParseError(f"{path} is not an ASCII mesh file") from None
    if format == "obj":
        verts, faces = _parse_obj(text)
    elif format in ("stl", "stl-ascii"):
        verts, faces = _parse_stl_ascii(text)
    else:
        raise ValueError(f"unknown mesh format {format!r}")
    if not faces:
        raise MeshValidationError(f"{path}: mesh has no faces")
    return Mesh(verts, faces)


# --------------------------------------------------------------------------
# Uncertainty regions, sampling and averaging
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class UncertaintyRegion:
    """Axis-wise bounds around a prior pose.

    Rotation half-extents are about the body x, y, z axes (radians).
    """

    center: Pose
    trans_half: np.ndarray
    rot_half: np.ndarray

    def __post_init__(self):
        th = np.broadcast_to(np.asarray(self.trans_half, dtype=float), (3,))
        rh = np.broadcast_to(np.asarray(self.rot_half, dtype=float), (3,))
        if np.any(th < 0) or np.any(rh < 0):
            raise ValueError("half-extents must be non-negative")
        if np.any(rh > math.pi):
            raise ValueError("rotation half-extents must not exceed pi")
        object.__setattr__(self, "trans_half", _frozen(th))
        object.__setattr__(self, "rot_half", _frozen(rh))

    @classmethod
    def cube(cls, center: Pose, trans: float, rot: float):
        return cls(center, np.full(3, trans), np.full(3, rot))

    @property
    def is_degenerate(self):
        return not (np.any(self.trans_half > 0) or np.any(self.rot_half > 0))

    def to_dict(self):
        return {"center": self.center.to_dict(),
                "trans_half": self.trans_half.tolist(),
                "rot_half": self.rot_half.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(Pose.from_dict(d["center"]), d["trans_half"], d["rot_half"])


def euler_xyz_quat(angles):
    """Quaternion(s) of Rx(a0) Ry(a1) Rz(a2) for angles of shape (..., 3)."""
    angles = np.asarray(angles, dtype=float)
    qx = axis_rotation(0, angles[..., 0])
    qy = axis_rotation(1, angles[..., 1])
    qz = axis_rotation(2, angles[..., 2])
    return quat_multiply(quat_multiply(qx, qy), qz)


def sample_poses_uniform(region: UncertaintyRegion, n: int, rng):
    """Vectorized form of :func:`sample_pose_uniform`; returns (q (n,4), t (n,3))."""
    u = rng.uniform(-1.0, 1.0, size=(n, 6))
    t = region.center.t + u[:, :3] * region.trans_half
    q = quat_multiply(region.center.q, euler_xyz_quat(u[:, 3:] * region.rot_half))
    return canonical_quat(q), t


def sample_pose_uniform(region: UncertaintyRegion, rng) -> Pose:
    q, t = sample_poses_uniform(region, 1, rng)
    return Pose(q[0], t[0])


def average_quaternions(qs, weights):
    """Weighted average via the principal eigenvector of sum w q q^T."""
    qs = np.asarray(qs, dtype=float).reshape(-1, 4)
    w = np.asarray(weights, dtype=float)
    A = np.einsum("n,ni,nj->ij", w, qs, qs)
    _, vecs = np.linalg.eigh(A)
    q = vecs[:, -1]
    if np.dot(q, qs[0]) < 0:
        q = -q
    return q


def pose_mean(poses, weights=None) -> Pose:
    """Weighted mean pose: arithmetic mean translation, eigen-averaged rotation."""
    if isinstance(poses, tuple) and len(poses) == 2 and isinstance(poses[0], np.ndarray):
        qs, ts = poses
    else:
        poses = list(poses)
        if not poses:
            raise ValueError("pose_mean of an empty list")
        qs = np.array([p.q for p in poses])
        ts = np.array([p.t for p in poses])
    if len(qs) == 0:
        raise ValueError("pose_mean of an empty list")
    w = np.ones(len(qs)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(qs),):
        raise ValueError("weights must match poses")
    if np.any(w < 0) or not np.isfinite(w).all():
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights sum to zero")
    w = w / total
    t = w @ ts
    if np.all(qs == qs[0]):
        # exact for identical rotations (avoids eigen round-off)
        return Pose(qs[0], t)
    return Pose(average_quaternions(qs, w), t)

"""Angle dictionary over face normals for fast candidate-face selection.

Every face normal is reduced to its angle with a fixed reference vector and
the faces are sorted by that angle. A measured normal then selects a
contiguous slice of the table by binary search, padded by ``delta_alpha``.
Faces outside the slice are skipped when looking for the closest face.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from touchloc import _kernels
from touchloc.geometry import Mesh, atomic_write_text

DEFAULT_BINS = 18
DEFAULT_CANDIDATE_REFS = 100


class IndexMismatchError(ValueError):
    """The index was built for a different mesh."""


@dataclass(frozen=True)
class EntropyConfig:
    n_bins: int = DEFAULT_BINS
    n_candidate_refs: int = DEFAULT_CANDIDATE_REFS
    seed: int = 0

    def __post_init__(self):
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")
        if self.n_candidate_refs < 1:
            raise ValueError("n_candidate_refs must be >= 1")


@dataclass(frozen=True, eq=False)
class AngleIndex:
    reference: np.ndarray
    alphas: np.ndarray      # sorted ascending
    face_ids: np.ndarray    # face id of each sorted entry
    fingerprint: str

    @property
    def n_entries(self):
        return len(self.alphas)

    def entries(self):
        return list(zip(self.alphas.tolist(), self.face_ids.tolist()))

    def check(self, mesh: Mesh):
        if mesh.fingerprint != self.fingerprint:
            raise IndexMismatchError("angle index was built for a different mesh")

    def __eq__(self, other):
        if not isinstance(other, AngleIndex):
            return NotImplemented
        return (self.fingerprint == other.fingerprint
                and np.array_equal(self.reference, other.reference)
                and np.array_equal(self.alphas, other.alphas)
                and np.array_equal(self.face_ids, other.face_ids))

    def to_dict(self):
        # repr round-trips floats exactly through JSON
        return {
            "reference": [float(v) for v in self.reference],
            "entries": [[float(a), int(f)] for a, f in zip(self.alphas, self.face_ids)],
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, d):
        entries = d["entries"]
        alphas = np.array([e[0] for e in entries], dtype=float)
        ids = np.array([e[1] for e in entries], dtype=np.int64)
        if np.any(np.diff(alphas) < 0):
            raise ValueError("index entries are not sorted")
        return cls(_ro(np.array(d["reference"], dtype=float)), _ro(alphas), _ro(ids),
                   str(d["fingerprint"]))

    def save(self, path):
        atomic_write_text(path, json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _ro(a):
    a.setflags(write=False)
    return a


def normal_angles(normals, reference):
    """Angle between ``reference`` and each row of ``normals``, in [0, pi]."""
    normals = np.asarray(normals, dtype=float)
    ref = np.asarray(reference, dtype=float)
    cross = np.cross(normals, ref)
    return np.arctan2(np.linalg.norm(cross, axis=1), normals @ ref)


def build_index(mesh: Mesh, reference) -> AngleIndex:
    ref = np.asarray(reference, dtype=float)
    norm = np.linalg.norm(ref)
    if norm == 0:
        raise ValueError("zero reference vector")
    ref = ref / norm
    # same arithmetic as the query path, so exact normals map to exact alphas
    alphas = np.array([_kernels._angle(ref[0], ref[1], ref[2], *n) for n in mesh.normals])
    ids = np.arange(mesh.n_faces, dtype=np.int64)
    order = np.lexsort((ids, alphas))
    return AngleIndex(_ro(ref.copy()), _ro(alphas[order]), _ro(ids[order]), mesh.fingerprint)


def bin_counts(alphas, n_bins: int):
    """Histogram of angles over ``n_bins`` equal segments of [0, pi]."""
    alphas = np.asarray(alphas, dtype=float)
    idx = np.floor(alphas / (math.pi / n_bins)).astype(np.int64)
    idx = np.clip(idx, 0, n_bins - 1)
    return np.bincount(idx, minlength=n_bins)


def shannon_entropy(alphas, n_bins: int = DEFAULT_BINS) -> float:
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    counts = bin_counts(alphas, n_bins)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def random_unit_vectors(n, rng):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def select_reference_vector(mesh: Mesh, config: EntropyConfig = EntropyConfig()):
    """Best-entropy reference among ``config.n_candidate_refs`` random directions."""
    rng = np.random.default_rng(config.seed)
    cands = random_unit_vectors(config.n_candidate_refs, rng)
    best, best_s = None, -1.0
    for ref in cands:
        s = shannon_entropy(normal_angles(mesh.normals, ref), config.n_bins)
        if s > best_s:
            best, best_s = ref, s
    return best


def build_best_index(mesh: Mesh, config: EntropyConfig = EntropyConfig()) -> AngleIndex:
    return build_index(mesh, select_reference_vector(mesh, config))


def candidate_slice(index: AngleIndex, y_nor, delta_alpha: float):
    if delta_alpha < 0:
        raise ValueError("delta_alpha must be >= 0")
    y = np.asarray(y_nor, dtype=float)
    r = index.reference
    ay = _kernels._angle(r[0], r[1], r[2], y[0], y[1], y[2])
    return _kernels.candidate_range(index.alphas, ay, float(delta_alpha))


def candidate_faces(index: AngleIndex, y_nor, delta_alpha: float, mesh: Mesh | None = None):
    """Face ids whose normal angle falls in the search window around ``y_nor``.

    ``y_nor`` is expressed in the object frame. Passing ``mesh`` checks the
    index fingerprint first.
    """
    if mesh is not None:
        index.check(mesh)
    start, end = candidate_slice(index, y_nor, delta_alpha)
    return set(index.face_ids[start:end].tolist())


def index_stats(index: AngleIndex, n_bins: int = DEFAULT_BINS):
    return {
        "entries": index.n_entries,
        "reference": [float(v) for v in index.reference],
        "entropy": shannon_entropy(index.alphas, n_bins),
        "n_bins": n_bins,
        "histogram": bin_counts(index.alphas, n_bins).tolist(),
        "fingerprint": index.fingerprint,
    }

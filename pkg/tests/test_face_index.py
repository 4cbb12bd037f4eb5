import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from touchloc.face_index import (AngleIndex, EntropyConfig, IndexMismatchError, build_best_index,
                                 build_index, candidate_faces, index_stats, normal_angles,
                                 select_reference_vector, shannon_entropy)
from touchloc.geometry import angle_between
from touchloc.measurement import NoiseParams, object_distance
from touchloc.geometry import Pose
from touchloc.simkit import sample_surface_measurements

Z = np.array([0.0, 0.0, 1.0])


def brute_candidates(index, y, delta):
    """Window membership by direct enumeration of the sorted entries."""
    a = np.asarray(index.alphas)
    ay = angle_between(index.reference, y)
    below = a[a <= ay]
    above = a[a >= ay]
    lo = below.max() if len(below) else a[0]
    hi = above.min() if len(above) else a[-1]
    keep = ((a > lo - delta) & (a < hi + delta)) | (a == lo) | (a == hi)
    return set(np.asarray(index.face_ids)[keep].tolist())


def test_box_index_plus_z(box):
    idx = build_index(box, Z)
    assert idx.n_entries == 12
    a = idx.alphas
    assert np.allclose(a[:2], 0.0) and np.allclose(a[-2:], math.pi)
    assert np.allclose(a[2:10], math.pi / 2)
    assert set(idx.face_ids[:2].tolist()) == {10, 11}    # +z faces
    assert set(idx.face_ids[-2:].tolist()) == {8, 9}     # -z faces


def test_index_invariants(any_fixture):
    idx = build_best_index(any_fixture)
    assert idx.n_entries == any_fixture.n_faces
    assert sorted(idx.face_ids.tolist()) == list(range(any_fixture.n_faces))
    assert np.all(np.diff(idx.alphas) >= 0)
    for a, f in idx.entries():
        assert abs(a - angle_between(idx.reference, any_fixture.normals[f])) < 1e-9
    assert build_index(any_fixture, idx.reference) == idx


def test_index_json_round_trip(register, tmp_path):
    idx = build_best_index(register)
    path = tmp_path / "r.idx.json"
    idx.save(path)
    again = AngleIndex.load(path)
    assert again == idx
    idx.save(tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_index_mismatch(box, back):
    idx = build_best_index(box)
    with pytest.raises(IndexMismatchError):
        candidate_faces(idx, Z, 0.09, mesh=back)
    y = sample_surface_measurements(back, Pose(), 1, None, np.random.default_rng(0))[0]
    with pytest.raises(IndexMismatchError):
        object_distance(y, back, Pose(), NoiseParams(), index=idx)


# ------------------------------------------------------------ entropy

def test_entropy_single_bin():
    assert shannon_entropy([0.1, 0.12, 0.13], 18) == 0.0


def test_entropy_uniform_four_bins():
    alphas = [0.1, 0.9, 1.7, 2.5] * 3
    assert shannon_entropy(alphas, 4) == pytest.approx(math.log(4), abs=1e-12)


def test_entropy_box_plus_z(box):
    # hand evaluation: counts {2, 8, 2} out of 12
    expected = -2 * (2 / 12) * math.log(2 / 12) - (8 / 12) * math.log(8 / 12)
    assert expected == pytest.approx(0.8675632284814612, abs=1e-15)
    got = shannon_entropy(normal_angles(box.normals, Z), 18)
    assert got == pytest.approx(expected, abs=1e-12)


def test_entropy_last_bin_right_closed():
    assert shannon_entropy([math.pi, math.pi - 1e-6], 18) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, math.pi), min_size=1, max_size=60), st.integers(2, 40))
def test_entropy_bounds(alphas, n_bins):
    s = shannon_entropy(alphas, n_bins)
    assert -1e-12 <= s <= math.log(n_bins) + 1e-12


def test_select_reference_single_candidate(box):
    cfg = EntropyConfig(n_candidate_refs=1, seed=3)
    first = np.random.default_rng(3).standard_normal(3)
    assert np.allclose(select_reference_vector(box, cfg), first / np.linalg.norm(first))


def test_select_reference_deterministic_and_better_than_z(box):
    a = select_reference_vector(box, EntropyConfig(seed=5))
    b = select_reference_vector(box, EntropyConfig(seed=5))
    assert np.array_equal(a, b)
    baseline = shannon_entropy(normal_angles(box.normals, Z))
    assert shannon_entropy(normal_angles(box.normals, a)) >= baseline


def test_register_entropy_positive(register):
    assert index_stats(build_best_index(register))["entropy"] > 0


# --------------------------------------------------------- candidates

def test_full_window(register):
    idx = build_best_index(register)
    y = np.array([0.3, -0.2, 0.9])
    y /= np.linalg.norm(y)
    assert candidate_faces(idx, y, math.pi) == set(range(register.n_faces))


def test_box_top_window(box):
    idx = build_index(box, Z)
    assert candidate_faces(idx, Z, 0.09) == {10, 11}


def test_exact_normal_always_contained(any_fixture):
    idx = build_best_index(any_fixture)
    for f, n in enumerate(any_fixture.normals):
        for delta in (0.0, 0.01, 0.09):
            assert f in candidate_faces(idx, n, delta)


def test_noisy_containment_and_matches_brute(any_fixture):
    idx = build_best_index(any_fixture)
    rng = np.random.default_rng(21)
    F = any_fixture.n_faces
    for _ in range(10_000 // 3):
        y = rng.standard_normal(3)
        y /= np.linalg.norm(y)
        delta = rng.uniform(0, 0.3)
        got = candidate_faces(idx, y, delta)
        assert got == brute_candidates(idx, y, delta)
        assert got
        near = [f for f in range(F) if angle_between(y, any_fixture.normals[f]) <= delta]
        assert set(near) <= got


def test_window_monotone(register):
    idx = build_best_index(register)
    rng = np.random.default_rng(4)
    for _ in range(500):
        y = rng.standard_normal(3)
        y /= np.linalg.norm(y)
        d1, d2 = sorted(rng.uniform(0, 1, 2))
        assert candidate_faces(idx, y, d1) <= candidate_faces(idx, y, d2)


def test_negative_delta_rejected(box):
    with pytest.raises(ValueError):
        candidate_faces(build_index(box, Z), Z, -0.1)


def test_mean_candidates_below_half_on_register(register):
    idx = build_best_index(register)
    ys = sample_surface_measurements(register, Pose(), 2000, NoiseParams(), np.random.default_rng(8))
    sizes = [len(candidate_faces(idx, n, 0.09)) for n in ys.normals]
    assert np.mean(sizes) < register.n_faces / 2

"""Localize the register fixture from 15 noisy touches, with and without the angle index."""
import time

import numpy as np

from touchloc.estimator import estimate_pose
from touchloc.face_index import build_best_index, index_stats
from touchloc.fixtures import fixture_mesh
from touchloc.geometry import Pose, UncertaintyRegion, rotation_distance, sample_pose_uniform
from touchloc.measurement import NoiseParams
from touchloc.simkit import sample_constraining_measurements

rng = np.random.default_rng(2024)
mesh = fixture_mesh("register")
index = build_best_index(mesh)
stats = index_stats(index)
print(f"register: {mesh.n_faces} faces, reference {np.round(stats['reference'], 3)}, "
      f"entropy {stats['entropy']:.3f}")

noise = NoiseParams(2.0, 0.09)
region = UncertaintyRegion.cube(Pose(), 50.0, 0.5)
truth = sample_pose_uniform(region, rng)
ys = sample_constraining_measurements(mesh, truth, 15, noise, rng)

for label, idx in (("exhaustive", None), ("indexed", index)):
    run = {}
    t0 = time.perf_counter()
    belief, pose = estimate_pose(region, ys, mesh, noise, index=idx, rng=7, stats=run)
    dt = time.perf_counter() - t0
    print(f"{label:>10}: {dt:5.2f} s, {run['stages']} stages, "
          f"{run['face_evals'] / run['likelihood_evals']:.1f} faces per evaluation, "
          f"error {np.linalg.norm(pose.t - truth.t):.2f} mm / "
          f"{rotation_distance(pose, truth):.4f} rad, {len(belief)} final particles")

"""A box among clutter: touches that land on the chair back or the stick pull the
plain estimate away; RANSAC sets them aside first."""
import numpy as np

from touchloc import bench
from touchloc.estimator import estimate_pose
from touchloc.face_index import build_best_index
from touchloc.fixtures import fixture_mesh
from touchloc.geometry import Pose, UncertaintyRegion, rotation_distance, sample_pose_uniform
from touchloc.measurement import NoiseParams
from touchloc.ransac import classify
from touchloc.simkit import labeled_to_set

noise = NoiseParams(2.0, 0.09)
region = UncertaintyRegion.cube(Pose(), 10.0, 0.3)
box = fixture_mesh("box")
index = build_best_index(box)

rng = np.random.default_rng(11)
truth = sample_pose_uniform(region, rng)
lms = bench.clutter_measurements(rng, truth, noise)
ys = labeled_to_set(lms)
print("touch labels:", " ".join(m.label for m in lms))


def report(name, pose):
    print(f"{name:>7}: {np.linalg.norm(pose.t - truth.t):6.2f} mm  "
          f"{rotation_distance(pose, truth):.4f} rad")


_, plain = estimate_pose(region, ys, box, noise, index=index, rng=1)
report("plain", plain)
res = classify(ys, box, region, noise, index=index, rng=1)
report("RANSAC", res.best_pose)
print("true outliers:   ", [k for k, m in enumerate(lms) if m.is_outlier])
print("flagged outliers:", res.outliers, f"after {res.iterations_run} iterations "
      f"({res.terminated_by})")

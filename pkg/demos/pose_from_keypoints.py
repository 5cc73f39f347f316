"""Walkthrough: recovering a pose from 2D-3D correspondences.

Solves a clean problem, then adds pixel noise, then outliers (where the
plain solver breaks and the RANSAC wrapper holds up).
"""

import numpy as np

from poseset.geometry import (
    CameraIntrinsics, Pose, geodesic_distance, project_points, random_rotation,
)
from poseset.keypoints import BBox3D, ibb_keypoints
from poseset.pnp import RansacConfig, epnp_solve, ransac_pnp

cam = CameraIntrinsics(fx=572.4, fy=573.6, px=320.0, py=240.0)
rng = np.random.default_rng(1)

kps3d = ibb_keypoints(BBox3D(0.05, 0.03, 0.08))
pose = Pose(random_rotation(rng), np.array([0.03, -0.02, 1.1]))
uv = project_points(kps3d, pose, cam)


def report(name, est):
    rot_err = np.degrees(geodesic_distance(pose.rotation, est.rotation))
    t_err = np.linalg.norm(pose.translation - est.translation)
    print(f"  {name:24s} rot {rot_err:8.4f} deg   trans {t_err * 1000:7.3f} mm")


print("noise-free:")
report("plain solver", epnp_solve(kps3d, uv, cam))

print("sigma = 2 px gaussian noise:")
noisy = uv + rng.normal(scale=2.0, size=uv.shape)
report("plain solver", epnp_solve(kps3d, noisy, cam))

print("25% outliers on top:")
bad = rng.choice(32, size=8, replace=False)
corrupted = noisy.copy()
corrupted[bad] += rng.uniform(40.0, 120.0, size=(8, 2))
report("plain solver", epnp_solve(kps3d, corrupted, cam))
est, mask = ransac_pnp(kps3d, corrupted, cam, RansacConfig(max_iterations=50, seed=0))
report("ransac wrapper", est)
print(f"  inliers kept: {mask.sum()}/32 (corrupted: {sorted(int(i) for i in bad)})")

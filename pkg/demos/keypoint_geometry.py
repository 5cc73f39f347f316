"""Walkthrough: interpolated bounding-box keypoints and their projective invariant.

Builds a box, derives its 32 keypoints, projects them through a pinhole
camera at a random pose, and verifies the cross-ratio of every edge survives
the projection.
"""

import numpy as np

from poseset.geometry import CameraIntrinsics, Pose, cross_ratio, random_rotation
from poseset.keypoints import BBox3D, edge_point_indices, ibb_keypoints, project_keypoints

cam = CameraIntrinsics(fx=572.4, fy=573.6, px=320.0, py=240.0)
box = BBox3D(0.05, 0.03, 0.08)

kps3d = ibb_keypoints(box)
print(f"keypoints: {kps3d.shape[0]} (8 corners + 24 edge points)")

rng = np.random.default_rng(0)
pose = Pose(random_rotation(rng), np.array([0.02, -0.01, 0.9]))
uv = project_keypoints(kps3d, pose, cam)
print(f"projected span: x {uv[:, 0].min():.1f}..{uv[:, 0].max():.1f}, "
      f"y {uv[:, 1].min():.1f}..{uv[:, 1].max():.1f} px")

ratios = [cross_ratio(*uv[list(quad)]) for quad in edge_point_indices()]
print("cross-ratio per edge (target 4/3):")
print("  min %.12f  max %.12f" % (min(ratios), max(ratios)))
print("  max deviation from 4/3: %.2e" % max(abs(r - 4.0 / 3.0) for r in ratios))

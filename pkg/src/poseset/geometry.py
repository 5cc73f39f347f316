"""Rigid-transform, projection and rotation-representation primitives.

Conventions:
  - Rotations are 3x3 row-major numpy arrays, right-handed, det +1.
  - The 6D rotation representation is the first two columns of a rotation
    matrix, flattened column-first: (r00, r10, r20, r01, r11, r21).
  - Poses map model-frame points into the camera frame: X_cam = R @ x + t.
  - Pixels follow the pinhole model u = fx*X/Z + px, v = fy*Y/Z + py.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateInput,
    DuplicatePoints,
    InvalidDepth,
    NotCollinear,
)

ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters: focal lengths and principal point, in pixels."""

    fx: float
    fy: float
    px: float
    py: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DegenerateInput("focal lengths must be positive")

    def as_matrix(self):
        return np.array(
            [[self.fx, 0.0, self.px], [0.0, self.fy, self.py], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class Pose:
    """Object-to-camera rigid transform: rotation (3x3) and translation (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=float).reshape(3)
        )

    def apply(self, points):
        """Transform (n, 3) or (3,) model points into the camera frame."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation


def is_rotation(R, tol=ORTHONORMAL_TOL):
    """Check orthonormality and det +1 within `tol`."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return (
        np.abs(R.T @ R - np.eye(3)).max() <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def rot_from_6d(r6):
    """Decode a 6-vector (two raw column vectors) into a rotation matrix.

    Gram-Schmidt order: normalize the first column, orthogonalize the second
    against it, complete with the cross product.  The decode is invariant to
    positive scaling of the first column.
    """
    r6 = np.asarray(r6, dtype=float).reshape(6)
    a, b = r6[:3], r6[3:]
    na = np.linalg.norm(a)
    if na < 1e-12 or np.linalg.norm(b) < 1e-12:
        raise DegenerateInput("6D rotation columns must be non-zero")
    c0 = a / na
    b_perp = b - (c0 @ b) * c0
    nb = np.linalg.norm(b_perp)
    if nb < 1e-12:
        raise DegenerateInput("6D rotation columns are parallel")
    c1 = b_perp / nb
    c2 = np.cross(c0, c1)
    return np.column_stack([c0, c1, c2])


def rot_to_6d(R):
    """First two columns of a rotation matrix, column-first order."""
    R = np.asarray(R, dtype=float)
    if not is_rotation(R, tol=1e-6):
        raise DegenerateInput("rot_to_6d expects a valid rotation matrix")
    return np.concatenate([R[:, 0], R[:, 1]])


def rot_from_6d_backward(r6, grad_R):
    """Gradient of a scalar loss through rot_from_6d.

    Given dL/dR (3x3) at the decode of `r6`, returns dL/dr6 (6,).
    """
    r6 = np.asarray(r6, dtype=float).reshape(6)
    grad_R = np.asarray(grad_R, dtype=float).reshape(3, 3)
    a, b = r6[:3], r6[3:]
    na = np.linalg.norm(a)
    c0 = a / na
    d = (c0 @ b)
    b_perp = b - d * c0
    nb = np.linalg.norm(b_perp)
    c1 = b_perp / nb

    g0 = grad_R[:, 0].copy()
    g1 = grad_R[:, 1].copy()
    g2 = grad_R[:, 2]

    # c2 = c0 x c1
    g0 += np.cross(c1, g2)
    g1 += np.cross(g2, c0)

    # c1 = b_perp / |b_perp|
    g_bperp = (g1 - (c1 @ g1) * c1) / nb

    # b_perp = b - (c0.b) c0
    g_b = g_bperp - (c0 @ g_bperp) * c0
    g0 += -(g_bperp @ c0) * b - d * g_bperp

    # c0 = a / |a|
    g_a = (g0 - (c0 @ g0) * c0) / na
    return np.concatenate([g_a, g_b])


def random_rotation(rng):
    """Uniform random rotation via a normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def project_point(p, pose, cam):
    """Pinhole projection of one model-frame point. Raises BehindCamera if Z <= 1e-9."""
    X, Y, Z = pose.apply(np.asarray(p, dtype=float).reshape(3))
    if Z <= 1e-9:
        raise BehindCamera()
    return np.array([cam.fx * X / Z + cam.px, cam.fy * Y / Z + cam.py])


def project_points(points, pose, cam):
    """Vectorized projection of (n, 3) points; reports the first offending index."""
    pc = pose.apply(np.asarray(points, dtype=float).reshape(-1, 3))
    bad = np.nonzero(pc[:, 2] <= 1e-9)[0]
    if bad.size:
        raise BehindCamera(index=int(bad[0]))
    uv = pc[:, :2] / pc[:, 2:3]
    return uv * [cam.fx, cam.fy] + [cam.px, cam.py]


def recover_translation(cx, cy, tz, cam):
    """Invert the pinhole projection of the object origin.

    Given the projected centroid (pixels) and the depth tz, returns the full
    translation so that projecting the origin lands exactly on (cx, cy).
    """
    if tz <= 0:
        raise InvalidDepth(f"tz must be positive, got {tz}")
    tx = (cx - cam.px) * tz / cam.fx
    ty = (cy - cam.py) * tz / cam.fy
    return np.array([tx, ty, tz])


def geodesic_distance(R1, R2):
    """Angle in [0, pi] between two rotations; arccos argument clamped."""
    c = (np.trace(np.asarray(R1).T @ np.asarray(R2)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def cross_ratio(a, b, c, d, collinearity_tol=1e-6):
    """Cross-ratio (|C-A| |D-B|) / (|C-B| |D-A|) of four collinear points.

    Accepts 2D or 3D points.  Collinearity is checked as the residual of the
    best-fit line relative to the overall spread of the points.
    """
    pts = np.array([a, b, c, d], dtype=float)
    if pts.shape[0] != 4:
        raise ValueError("need exactly four points")
    diffs = pts[:, None, :] - pts[None, :, :]
    dist = np.linalg.norm(diffs, axis=-1)
    iu = np.triu_indices(4, k=1)
    if dist[iu].min() < 1e-12:
        raise DuplicatePoints("cross_ratio requires four distinct points")

    centered = pts - pts.mean(axis=0)
    # residual of best-fit line through the centroid, normalized by spread
    _, s, _ = np.linalg.svd(centered, full_matrices=False)
    if s[1] / s[0] > collinearity_tol:
        raise NotCollinear(f"points deviate from a line by {s[1] / s[0]:.3g}")

    A, B, C, D = pts
    return float(
        (np.linalg.norm(C - A) * np.linalg.norm(D - B))
        / (np.linalg.norm(C - B) * np.linalg.norm(D - A))
    )

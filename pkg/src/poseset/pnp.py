"""EPnP pose recovery from 2D-3D correspondences, with a RANSAC wrapper.

The solver follows the control-point formulation: model points are written as
barycentric combinations of 4 control points (3 in the planar case), the
camera-frame control points live in the null space of a 2n x 12 projection
system, and the null-space coefficients (betas) are resolved from the
inter-control-point distances, optionally refined by Gauss-Newton.  The final
rigid transform comes from a Procrustes alignment, so the returned rotation is
always orthonormal with det +1.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, NoConsensus
from .geometry import Pose


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 200
    inlier_threshold: float = 3.0  # pixels
    min_inlier_ratio: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1 or self.inlier_threshold <= 0:
            raise ValueError("invalid RANSAC configuration")


def _control_points(pts):
    """Centroid plus principal directions; collapses to 3 points when planar."""
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / len(pts)
    eigval, eigvec = np.linalg.eigh(cov)
    # ascending eigenvalues; degenerate if the two largest both vanish
    if eigval[1] < 1e-16 * max(eigval[2], 1.0):
        raise DegenerateConfiguration("3D points are (near-)collinear")
    planar = eigval[0] < 1e-10 * eigval[2]
    axes = eigvec[:, ::-1]
    scales = np.sqrt(np.maximum(eigval[::-1], 0.0))
    k = 2 if planar else 3
    ctrl = [centroid]
    for i in range(k):
        ctrl.append(centroid + axes[:, i] * max(scales[i], 1e-12))
    return np.array(ctrl), planar


def _barycentric(pts, ctrl):
    """Coefficients alpha with pts = alpha @ ctrl and alpha.sum(1) == 1."""
    k = len(ctrl)
    base = ctrl[1:] - ctrl[0]  # (k-1, 3)
    # solve base^T w = (p - c0) in the least-squares sense (exact in-span)
    sol, *_ = np.linalg.lstsq(base.T, (pts - ctrl[0]).T, rcond=None)
    alphas = np.empty((len(pts), k))
    alphas[:, 1:] = sol.T
    alphas[:, 0] = 1.0 - sol.T.sum(axis=1)
    return alphas


def _build_m(alphas, uv, cam):
    n, k = alphas.shape
    M = np.zeros((2 * n, 3 * k))
    for j in range(k):
        a = alphas[:, j]
        M[0::2, 3 * j] = a * cam.fx
        M[0::2, 3 * j + 2] = a * (cam.px - uv[:, 0])
        M[1::2, 3 * j + 1] = a * cam.fy
        M[1::2, 3 * j + 2] = a * (cam.py - uv[:, 1])
    return M


def _pair_indices(k):
    return [(i, j) for i in range(k) for j in range(i + 1, k)]


def _rho(ctrl):
    return np.array([np.sum((ctrl[i] - ctrl[j]) ** 2) for i, j in _pair_indices(len(ctrl))])


def _candidate_betas(V, rho, k):
    """Initial beta guesses for null-space dimensions 1..3.

    V has shape (num_basis, 3k): each row is one null-space basis vector,
    ordered by increasing singular value (V[0] is the best).
    """
    pairs = _pair_indices(k)
    diffs = [V[:, 3 * i : 3 * i + 3] - V[:, 3 * j : 3 * j + 3] for i, j in pairs]

    candidates = []

    # N = 1: scale a single basis vector (tried for each basis vector, since
    # with minimal point counts the null space is genuinely multi-dimensional)
    for b in range(len(V)):
        num = sum(np.sqrt((d[b] @ d[b]) * r) for d, r in zip(diffs, rho))
        den = sum(d[b] @ d[b] for d in diffs)
        if den > 1e-20:
            beta = np.zeros(len(V))
            beta[b] = num / den
            candidates.append(beta)

    # N = 2: solve for (b11, b12, b22) from the 6 distance equations
    if len(V) >= 2:
        L = np.array([[d[0] @ d[0], 2 * d[0] @ d[1], d[1] @ d[1]] for d in diffs])
        sol, *_ = np.linalg.lstsq(L, rho, rcond=None)
        b1 = np.sqrt(abs(sol[0]))
        b2 = np.sqrt(abs(sol[2])) * np.sign(sol[1]) * np.sign(sol[0]) if b1 > 0 else 0.0
        beta = np.zeros(len(V))
        beta[0], beta[1] = b1, b2
        candidates.append(beta)

    # N = 3: 6 unknowns (b11, b12, b13, b22, b23, b33) from 6 equations
    if len(V) >= 3 and len(rho) == 6:
        L = np.array(
            [
                [
                    d[0] @ d[0],
                    2 * d[0] @ d[1],
                    2 * d[0] @ d[2],
                    d[1] @ d[1],
                    2 * d[1] @ d[2],
                    d[2] @ d[2],
                ]
                for d in diffs
            ]
        )
        try:
            sol = np.linalg.solve(L, rho)
        except np.linalg.LinAlgError:
            sol = None
        if sol is not None:
            b1 = np.sqrt(abs(sol[0]))
            b2 = np.sqrt(abs(sol[3])) * np.sign(sol[1]) * np.sign(sol[0])
            b3 = np.sqrt(abs(sol[5])) * np.sign(sol[2]) * np.sign(sol[0])
            beta = np.zeros(len(V))
            beta[:3] = b1, b2, b3
            candidates.append(beta)

    return candidates


def _gauss_newton(V, rho, beta, k, iterations=10):
    """Refine betas so control-point distances match the model distances."""
    pairs = _pair_indices(k)
    diffs = [V[:, 3 * i : 3 * i + 3] - V[:, 3 * j : 3 * j + 3] for i, j in pairs]
    for _ in range(iterations):
        residual = np.empty(len(pairs))
        J = np.empty((len(pairs), len(beta)))
        for r, d in enumerate(diffs):
            dv = beta @ d
            residual[r] = rho[r] - dv @ dv
            J[r] = 2.0 * (d @ dv)
        try:
            step = np.linalg.lstsq(J, residual, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        beta = beta + step
    return beta


def _pose_from_betas(beta, V, alphas, pts, k):
    ctrl_cam = (beta @ V).reshape(k, 3)
    pc = alphas @ ctrl_cam
    if pc[:, 2].mean() < 0:  # cheirality: flip the whole null-space solution
        pc = -pc
    # Procrustes alignment model -> camera
    mu_w = pts.mean(axis=0)
    mu_c = pc.mean(axis=0)
    H = (pts - mu_w).T @ (pc - mu_c)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    t = mu_c - R @ mu_w
    return Pose(R, t)


def _skew(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0.0]])


def _polish_pose(pose, pts, uv, cam, iterations=15):
    """Gauss-Newton on pixel residuals over (rotation, translation).

    The rotation update is a left-multiplied axis-angle step, so the iterate
    stays exactly on SO(3).  Returns the input pose unchanged if any point
    falls behind the camera during the iteration.
    """
    R, t = pose.rotation.copy(), pose.translation.copy()
    for _ in range(iterations):
        pc = pts @ R.T + t
        if np.any(pc[:, 2] <= 1e-9):
            return pose
        x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
        proj = np.stack([cam.fx * x / z + cam.px, cam.fy * y / z + cam.py], axis=1)
        residual = (uv - proj).ravel()
        J = np.zeros((2 * len(pts), 6))
        for i, p in enumerate(pc):
            d_uv_d_pc = np.array(
                [
                    [cam.fx / p[2], 0.0, -cam.fx * p[0] / p[2] ** 2],
                    [0.0, cam.fy / p[2], -cam.fy * p[1] / p[2] ** 2],
                ]
            )
            J[2 * i : 2 * i + 2, :3] = d_uv_d_pc @ (-_skew(p))
            J[2 * i : 2 * i + 2, 3:] = d_uv_d_pc
        step, *_ = np.linalg.lstsq(J, residual, rcond=None)
        angle = np.linalg.norm(step[:3])
        if angle > 0:
            axis = step[:3] / angle
            K = _skew(axis)
            dR = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)
            R = dR @ R
        t = t + step[3:]
        if np.linalg.norm(step) < 1e-14:
            break
    return Pose(R, t)


def reprojection_errors(pose, pts, uv, cam):
    """Per-point pixel errors; inf for points behind the camera."""
    pc = pose.apply(pts)
    err = np.full(len(pts), np.inf)
    ok = pc[:, 2] > 1e-9
    proj = pc[ok, :2] / pc[ok, 2:3] * [cam.fx, cam.fy] + [cam.px, cam.py]
    err[ok] = np.linalg.norm(proj - uv[ok], axis=1)
    return err


def epnp_solve(points3d, points2d, cam, refine_iterations=10, multistart=True):
    """Recover the pose from n >= 4 correspondences (model frame -> pixels)."""
    pts = np.asarray(points3d, dtype=float).reshape(-1, 3)
    uv = np.asarray(points2d, dtype=float).reshape(-1, 2)
    if len(pts) != len(uv) or len(pts) < 4:
        raise DegenerateConfiguration("need at least 4 paired correspondences")

    ctrl, planar = _control_points(pts)
    k = len(ctrl)
    alphas = _barycentric(pts, ctrl)
    M = _build_m(alphas, uv, cam)
    _, _, Vt = np.linalg.svd(M, full_matrices=True)
    n_basis = 4 if k == 4 else 3
    V = Vt[-n_basis:][::-1]  # best (smallest singular value) first
    rho = _rho(ctrl)

    candidates = []
    for beta in _candidate_betas(V, rho, k):
        beta = _gauss_newton(V, rho, beta, k, iterations=refine_iterations)
        pose = _pose_from_betas(beta, V, alphas, pts, k)
        err = reprojection_errors(pose, pts, uv, cam)
        rms = float(np.sqrt(np.mean(np.square(err)))) if np.isfinite(err).all() else np.inf
        candidates.append((rms, pose))
    candidates = [c for c in candidates if np.isfinite(c[0])]
    if not candidates:
        raise DegenerateConfiguration("no valid EPnP solution (behind camera)")
    candidates.sort(key=lambda c: c[0])
    best = candidates[0]
    if best[0] > 1e-8:
        # with few points the distance-based betas can land in the wrong
        # basin, so polish each candidate directly on the pixel residuals
        for rms, pose in candidates:
            polished = _polish_pose(pose, pts, uv, cam)
            err = reprojection_errors(polished, pts, uv, cam)
            rms = float(np.sqrt(np.mean(np.square(err)))) if np.isfinite(err).all() else np.inf
            if rms < best[0]:
                best = (rms, polished)
    if multistart and best[0] > 1e-6:
        # still off: restart the polish from fixed 90/180 degree rotations of
        # the best pose to escape the local minimum (deterministic fallback)
        # the best pose, and from depth-rescaled translations (the two local
        # minima seen in practice: flipped orientation and doubled depth)
        anchor = best[1]
        restarts = []
        for axis in np.eye(3):
            for angle in (np.pi / 2, np.pi, -np.pi / 2):
                K = _skew(axis)
                dR = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)
                restarts.append(Pose(dR @ anchor.rotation, anchor.translation.copy()))
        for scale in (0.5, 0.7, 1.5, 2.0):
            restarts.append(Pose(anchor.rotation.copy(), anchor.translation * scale))
        # hardest cases need a joint perturbation of orientation and depth, so
        # the tail of the restart list is a coarse grid over both; the early
        # exit below means it only actually runs when the cheap set fails
        axes = np.vstack([np.eye(3), np.full((1, 3), 1.0 / np.sqrt(3.0))])
        for axis in axes:
            K = _skew(axis)
            for angle in np.deg2rad([45, 90, 135, 180, -45, -90, -135]):
                dR = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)
                for scale in (1.0, 0.5, 0.7, 1.5, 2.0):
                    restarts.append(
                        Pose(dR @ anchor.rotation, anchor.translation * scale)
                    )
        for start in restarts:
            polished = _polish_pose(start, pts, uv, cam, iterations=30)
            err = reprojection_errors(polished, pts, uv, cam)
            rms = float(np.sqrt(np.mean(np.square(err)))) if np.isfinite(err).all() else np.inf
            if rms < best[0]:
                best = (rms, polished)
            if best[0] <= 1e-6:
                break
    return best[1]


def ransac_pnp(points3d, points2d, cam, cfg=RansacConfig()):
    """Robust EPnP: minimal 4-point samples, inlier consensus, final refit.

    Deterministic given cfg.seed; per-iteration sample seeds are derived as
    seed + iteration so results do not depend on evaluation order.
    """
    pts = np.asarray(points3d, dtype=float).reshape(-1, 3)
    uv = np.asarray(points2d, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n < 4:
        raise DegenerateConfiguration("need at least 4 correspondences")

    best_mask = None
    best_score = (-1, np.inf)  # (inlier count, inlier mean error)
    for it in range(cfg.max_iterations):
        rng = np.random.default_rng(cfg.seed + it)
        sample = rng.choice(n, size=4, replace=False)
        try:
            pose = epnp_solve(pts[sample], uv[sample], cam, refine_iterations=5,
                              multistart=False)
        except DegenerateConfiguration:
            continue
        err = reprojection_errors(pose, pts, uv, cam)
        mask = err <= cfg.inlier_threshold
        count = int(mask.sum())
        if count < 4:
            continue
        score = (count, float(err[mask].mean()))
        if count > best_score[0] or (count == best_score[0] and score[1] < best_score[1]):
            best_score = score
            best_mask = mask
    if best_mask is None:
        raise NoConsensus("no 4-point sample reached consensus")

    pose = epnp_solve(pts[best_mask], uv[best_mask], cam)
    err = reprojection_errors(pose, pts, uv, cam)
    final_mask = err <= cfg.inlier_threshold
    if final_mask.sum() >= 4:
        best_mask = final_mask
        pose = epnp_solve(pts[best_mask], uv[best_mask], cam)
    return pose, best_mask

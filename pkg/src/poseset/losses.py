"""Differentiable loss terms with hand-written gradients.

Every loss returns a LossValue carrying the scalar and the gradient with
respect to the *prediction* argument (targets are constants).  Gradients are
exact away from the kinks of the |.| and min terms; at a kink the reported
subgradient is the one-sided limit numpy's sign() convention picks.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import CoincidentPoints, DegenerateBox, EmptyModel
from .keypoints import edge_point_indices

# Paper-level weights: box loss = 2*GIoU + 10*l1, keypoint loss = 1*l1 + 10*CR.
GIOU_WEIGHT = 2.0
BOX_L1_WEIGHT = 10.0
KEYPOINT_L1_WEIGHT = 1.0
CROSS_RATIO_WEIGHT = 10.0
NO_OBJECT_CLASS_WEIGHT = 0.1
MIN_PROBABILITY = 1e-30

# target squared cross-ratio for the 1/3, 2/3 edge spacing: (4/3)^2
CR_SQUARED = 16.0 / 9.0


@dataclass
class LossValue:
    """Scalar loss plus flat gradient w.r.t. the prediction inputs."""

    value: float
    gradient: np.ndarray
    flag: str | None = None


def class_nll(probs, target_class, is_no_object=False):
    """Negative log-likelihood of the target class; no-object rows weighted 0.1."""
    probs = np.asarray(probs, dtype=float)
    weight = NO_OBJECT_CLASS_WEIGHT if is_no_object else 1.0
    p = probs[target_class]
    grad = np.zeros_like(probs)
    if p < MIN_PROBABILITY:
        grad[target_class] = -weight / MIN_PROBABILITY
        return LossValue(weight * -np.log(MIN_PROBABILITY), grad, flag="zero_probability")
    grad[target_class] = -weight / p
    return LossValue(float(weight * -np.log(p)), grad)


def _box_corners(b):
    cx, cy, w, h = b
    return cx - w / 2.0, cx + w / 2.0, cy - h / 2.0, cy + h / 2.0


def giou_loss(b1, b2):
    """Generalized-IoU loss 1 - (IoU - |B \\ union| / |B|), in [0, 2].

    Gradient is w.r.t. the second box (cx, cy, w, h).
    """
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    if b1[2] <= 0 or b1[3] <= 0 or b2[2] <= 0 or b2[3] <= 0:
        raise DegenerateBox("boxes must have positive width and height")
    l1, r1, t1, bt1 = _box_corners(b1)
    l2, r2, t2, bt2 = _box_corners(b2)

    iw = min(r1, r2) - max(l1, l2)
    ih = min(bt1, bt2) - max(t1, t2)
    inter = max(iw, 0.0) * max(ih, 0.0)
    a1 = b1[2] * b1[3]
    a2 = b2[2] * b2[3]
    union = a1 + a2 - inter
    ew = max(r1, r2) - min(l1, l2)
    eh = max(bt1, bt2) - min(t1, t2)
    enc = ew * eh

    value = 2.0 - inter / union - union / enc

    # derivatives w.r.t. the prediction corners (l2, r2, t2, bt2)
    dI = np.zeros(4)
    if iw > 0 and ih > 0:
        dI[0] = -ih if l2 > l1 else 0.0
        dI[1] = ih if r2 < r1 else 0.0
        dI[2] = -iw if t2 > t1 else 0.0
        dI[3] = iw if bt2 < bt1 else 0.0
    dE = np.array(
        [
            -eh if l2 < l1 else 0.0,
            eh if r2 > r1 else 0.0,
            -ew if t2 < t1 else 0.0,
            ew if bt2 > bt1 else 0.0,
        ]
    )
    # a2 = (r2 - l2)(bt2 - t2)
    dA2 = np.array([-(bt2 - t2), bt2 - t2, -(r2 - l2), r2 - l2])
    dU = dA2 - dI

    d_corner = (
        -(dI * union - inter * dU) / union**2 - (dU * enc - union * dE) / enc**2
    )
    # chain corners -> (cx, cy, w, h)
    grad = np.array(
        [
            d_corner[0] + d_corner[1],
            d_corner[2] + d_corner[3],
            0.5 * (d_corner[1] - d_corner[0]),
            0.5 * (d_corner[3] - d_corner[2]),
        ]
    )
    return LossValue(float(value), grad)


def box_loss(b1, b2):
    """Weighted GIoU + l1 box loss (factors 2 and 10); gradient w.r.t. b2."""
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    giou = giou_loss(b1, b2)
    l1 = np.abs(b1 - b2).sum()
    value = GIOU_WEIGHT * giou.value + BOX_L1_WEIGHT * l1
    grad = GIOU_WEIGHT * giou.gradient + BOX_L1_WEIGHT * np.sign(b2 - b1)
    return LossValue(float(value), grad)


def smooth_l1(x):
    """Huber-style smooth l1: 0.5 x^2 inside |x| < 1, |x| - 0.5 outside."""
    x = float(x)
    if abs(x) < 1.0:
        return LossValue(0.5 * x * x, np.array([x]))
    return LossValue(abs(x) - 0.5, np.array([np.sign(x)]))


def cross_ratio_loss(kps2d):
    """Self-supervised squared-cross-ratio consistency over the 12 box edges.

    For each edge with points (a, b, c, d) in order along the edge, penalizes
    smooth_l1(CR^2 - r) with r the squared-distance ratio; no collinearity is
    required of the predicted points.
    """
    kps = np.asarray(kps2d, dtype=float).reshape(32, 2)
    grad = np.zeros_like(kps)
    total = 0.0
    for (ia, ib, ic, id_) in edge_point_indices():
        a, b, c, d = kps[ia], kps[ib], kps[ic], kps[id_]
        ca, db, cb, da = c - a, d - b, c - b, d - a
        n1 = ca @ ca
        n2 = db @ db
        d1 = cb @ cb
        d2 = da @ da
        if min(d1, d2) < 1e-12 or min(n1, n2) < 1e-12:
            raise CoincidentPoints("edge keypoints coincide")
        r = (n1 * n2) / (d1 * d2)
        term = smooth_l1(CR_SQUARED - r)
        total += term.value
        # d(term)/dr, then r through the four squared norms
        dr = -term.gradient[0]
        g_ca = dr * r / n1 * 2.0 * ca
        g_db = dr * r / n2 * 2.0 * db
        g_cb = -dr * r / d1 * 2.0 * cb
        g_da = -dr * r / d2 * 2.0 * da
        grad[ia] += -g_ca - g_da
        grad[ib] += -g_db - g_cb
        grad[ic] += g_ca + g_cb
        grad[id_] += g_db + g_da
    return LossValue(float(total), grad.ravel())


def keypoint_loss(gt_kps, pred_kps):
    """l1 keypoint regression plus weighted cross-ratio term (Eq-level 1 and 10)."""
    gt = np.asarray(gt_kps, dtype=float).reshape(32, 2)
    pred = np.asarray(pred_kps, dtype=float).reshape(32, 2)
    cr = cross_ratio_loss(pred)
    l1 = np.abs(gt - pred).sum()
    value = KEYPOINT_L1_WEIGHT * l1 + CROSS_RATIO_WEIGHT * cr.value
    grad = (
        KEYPOINT_L1_WEIGHT * np.sign(pred - gt).ravel()
        + CROSS_RATIO_WEIGHT * cr.gradient
    )
    return LossValue(float(value), grad, flag=cr.flag)


def rotation_loss(gt_rot, pred_rot, model_pts, symmetric=False, method="auto"):
    """Point-matching rotation loss: per-coordinate l1 over transformed points.

    Non-symmetric: mean_x |R x - R_hat x|_1.  Symmetric: for each gt-rotated
    point, the min over all pred-rotated points (closest-point matching).
    Gradient is w.r.t. the 9 entries of pred_rot (row-major).
    """
    pts = np.asarray(model_pts, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyModel("rotation loss needs model points")
    n = len(pts)
    gt_pts = pts @ np.asarray(gt_rot, dtype=float).T
    pred_pts = pts @ np.asarray(pred_rot, dtype=float).T
    if not symmetric:
        match = np.arange(n)
    elif method == "brute" or (method == "auto" and n <= 256):
        match = np.argmin(cdist(gt_pts, pred_pts, metric="cityblock"), axis=1)
    else:
        _, match = cKDTree(pred_pts).query(gt_pts, p=1)
    diff = pred_pts[match] - gt_pts
    value = np.abs(diff).sum() / n
    # d/dR_hat of (1/n) sum |R_hat x_m - gx|_1, matched indices held fixed
    grad = np.sign(diff).T @ pts[match] / n
    return LossValue(float(value), grad.ravel())


def pose_loss(gt_pose, pred_pose, model_pts, symmetric=False, method="auto"):
    """Rotation point-matching loss plus l1 translation loss.

    Gradient layout: 9 rotation entries (row-major) then 3 translation entries
    of the predicted pose.
    """
    rot = rotation_loss(
        gt_pose.rotation, pred_pose.rotation, model_pts, symmetric, method
    )
    t_diff = pred_pose.translation - gt_pose.translation
    value = rot.value + np.abs(t_diff).sum()
    grad = np.concatenate([rot.gradient, np.sign(t_diff)])
    return LossValue(float(value), grad)

"""Bipartite matching of padded prediction/target sets and the Hungarian loss."""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import losses
from .geometry import Pose

SET_SIZE = 20
NO_OBJECT = -1  # class id of the padding class; probs index C (last)

POSE_LOSS_WEIGHT = 0.05
KEYPOINT_LOSS_WEIGHT = 1.0


@dataclass
class TargetTuple:
    """One ground-truth set element; geometry is image-size-normalized."""

    class_id: int = NO_OBJECT
    box2d: np.ndarray | None = None  # (cx, cy, w, h)
    keypoints2d: np.ndarray | None = None  # (32, 2)
    rotation: np.ndarray | None = None
    translation: np.ndarray | None = None
    symmetric: bool = False

    @property
    def is_no_object(self):
        return self.class_id == NO_OBJECT


@dataclass
class PredictionTuple:
    """One predicted set element.

    class_probs has C+1 entries, the last being the no-object class.
    centroid/depth carry the decoupled translation parametrization; rotation
    and translation, when present, are the decoded pose used by the pose loss.
    """

    class_probs: np.ndarray = field(default_factory=lambda: np.array([]))
    box2d: np.ndarray | None = None
    keypoints2d: np.ndarray | None = None
    centroid: np.ndarray | None = None  # (cx, cy), normalized
    depth: float | None = None  # tz, meters
    rotation: np.ndarray | None = None
    translation: np.ndarray | None = None

    @property
    def argmax_class(self):
        """Predicted class id, NO_OBJECT when the padding class wins."""
        idx = int(np.argmax(self.class_probs))
        return NO_OBJECT if idx == len(self.class_probs) - 1 else idx


@dataclass
class MatchResult:
    """Permutation mapping target index -> prediction index, plus its cost."""

    permutation: np.ndarray
    total_cost: float


def _prob_of(pred, class_id):
    return float(pred.class_probs[class_id])


def matching_cost(target, pred):
    """Pairing cost: -p_hat(class) + box loss; zero for padding targets."""
    if target.is_no_object:
        return 0.0
    cost = -_prob_of(pred, target.class_id)
    if target.box2d is not None and pred.box2d is not None:
        cost += losses.box_loss(target.box2d, pred.box2d).value
    return cost


def cost_matrix(targets, preds):
    n = len(targets)
    if len(preds) != n:
        raise ValueError("target and prediction sets must have equal cardinality")
    C = np.zeros((n, n))
    for i, t in enumerate(targets):
        if t.is_no_object:
            continue
        for j, p in enumerate(preds):
            C[i, j] = matching_cost(t, p)
    return C


def hungarian_match(targets, preds):
    """Globally optimal assignment of targets to predictions (Kuhn-Munkres)."""
    C = cost_matrix(targets, preds)
    rows, cols = linear_sum_assignment(C)
    perm = np.empty(len(targets), dtype=int)
    perm[rows] = cols
    return MatchResult(perm, float(C[rows, cols].sum()))


def hungarian_loss(
    targets,
    preds,
    permutation,
    model_points=None,
    keypoint_weight=KEYPOINT_LOSS_WEIGHT,
    pose_weight=POSE_LOSS_WEIGHT,
):
    """Total training loss over matched pairs, with per-term breakdown.

    model_points maps class id -> (n, 3) model point array; when omitted the
    pose term is skipped (keypoint/box-only predictions).
    Returns (total, breakdown) where breakdown sums exactly to total.
    """
    breakdown = {"class": 0.0, "box": 0.0, "keypoint": 0.0, "pose": 0.0}
    for i, t in enumerate(targets):
        p = preds[int(permutation[i])]
        cls_idx = len(p.class_probs) - 1 if t.is_no_object else t.class_id
        breakdown["class"] += losses.class_nll(
            p.class_probs, cls_idx, is_no_object=t.is_no_object
        ).value
        if t.is_no_object:
            continue
        if t.box2d is not None and p.box2d is not None:
            breakdown["box"] += losses.box_loss(t.box2d, p.box2d).value
        if t.keypoints2d is not None and p.keypoints2d is not None:
            breakdown["keypoint"] += (
                keypoint_weight
                * losses.keypoint_loss(t.keypoints2d, p.keypoints2d).value
            )
        if model_points is not None and p.rotation is not None:
            pts = model_points[t.class_id]
            breakdown["pose"] += (
                pose_weight
                * losses.pose_loss(
                    Pose(t.rotation, t.translation),
                    Pose(p.rotation, p.translation),
                    pts,
                    symmetric=t.symmetric,
                ).value
            )
    total = sum(breakdown.values())
    return total, breakdown


def prediction_from_target(target, num_classes, perfect=True):
    """Build the prediction tuple that reproduces a target exactly.

    Handy for harness simulations; no-object targets get full padding-class
    probability.
    """
    probs = np.zeros(num_classes + 1)
    if target.is_no_object:
        probs[-1] = 1.0
        return PredictionTuple(class_probs=probs)
    probs[target.class_id] = 1.0
    return PredictionTuple(
        class_probs=probs,
        box2d=None if target.box2d is None else target.box2d.copy(),
        keypoints2d=None
        if target.keypoints2d is None
        else target.keypoints2d.copy(),
        rotation=None if target.rotation is None else target.rotation.copy(),
        translation=None
        if target.translation is None
        else target.translation.copy(),
    )

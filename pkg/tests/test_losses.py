import numpy as np
import pytest

from poseset import losses
from poseset.errors import DegenerateBox, EmptyModel
from poseset.geometry import Pose, random_rotation, rot_from_6d
from poseset.keypoints import BBox3D, ibb_keypoints


def finite_difference(f, x, eps=1e-6):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    flat = x.ravel()
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        hi = f(x)
        flat[i] = saved - eps
        lo = f(x)
        flat[i] = saved
        g[i] = (hi - lo) / (2.0 * eps)
    return g


def assert_gradient_close(f, x, grad, rtol=1e-4):
    fd = finite_difference(f, np.array(x, dtype=float))
    denom = max(np.linalg.norm(fd), 1e-8)
    assert np.linalg.norm(grad - fd) / denom < rtol


class TestClassNll:
    def test_value(self):
        probs = np.array([0.2, 0.5, 0.3])
        np.testing.assert_allclose(losses.class_nll(probs, 1).value, -np.log(0.5))

    def test_no_object_weighting(self):
        probs = np.array([0.1, 0.9])
        full = losses.class_nll(probs, 1).value
        down = losses.class_nll(probs, 1, is_no_object=True).value
        np.testing.assert_allclose(down, 0.1 * full)

    def test_zero_probability_is_capped(self):
        out = losses.class_nll(np.array([1.0, 0.0]), 1)
        assert out.flag == "zero_probability"
        assert np.isfinite(out.value)
        np.testing.assert_allclose(out.value, -np.log(losses.MIN_PROBABILITY))

    def test_gradient(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            probs = rng.uniform(0.05, 1.0, size=5)
            target = int(rng.integers(5))
            out = losses.class_nll(probs, target)
            assert_gradient_close(
                lambda p: losses.class_nll(p, target).value, probs, out.gradient
            )


class TestGiouLoss:
    def test_identical_boxes(self):
        b = np.array([0.3, 0.4, 0.2, 0.1])
        np.testing.assert_allclose(losses.giou_loss(b, b).value, 0.0, atol=1e-12)

    def test_hand_computed_overlap(self):
        """Unit squares offset by half a side: I=0.5, U=1.5, E=1.5."""
        b1 = np.array([0.5, 0.5, 1.0, 1.0])
        b2 = np.array([1.0, 0.5, 1.0, 1.0])
        expected = 2.0 - (0.5 / 1.5) - (1.5 / 1.5)
        np.testing.assert_allclose(losses.giou_loss(b1, b2).value, expected, rtol=1e-12)

    def test_disjoint_far_apart_approaches_two(self):
        b1 = np.array([0.0, 0.0, 1.0, 1.0])
        b2 = np.array([100.0, 0.0, 1.0, 1.0])
        assert losses.giou_loss(b1, b2).value > 1.97

    def test_range(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            b1 = np.array([*rng.uniform(-1, 1, 2), *rng.uniform(0.05, 1.0, 2)])
            b2 = np.array([*rng.uniform(-1, 1, 2), *rng.uniform(0.05, 1.0, 2)])
            assert 0.0 <= losses.giou_loss(b1, b2).value <= 2.0

    def test_degenerate_box_raises(self):
        with pytest.raises(DegenerateBox):
            losses.giou_loss(np.array([0, 0, 1, 1.0]), np.array([0, 0, 0.0, 1.0]))

    def test_gradient(self):
        rng = np.random.default_rng(2)
        checked = 0
        while checked < 100:
            b1 = np.array([*rng.uniform(-1, 1, 2), *rng.uniform(0.1, 1.0, 2)])
            b2 = np.array([*rng.uniform(-1, 1, 2), *rng.uniform(0.1, 1.0, 2)])
            # skip configurations within eps of a min/max tie, where the
            # piecewise gradient legitimately jumps
            edges1 = losses._box_corners(b1)
            edges2 = losses._box_corners(b2)
            if min(abs(a - b) for a, b in zip(edges1, edges2)) < 1e-4:
                continue
            out = losses.giou_loss(b1, b2)
            assert_gradient_close(lambda b: losses.giou_loss(b1, b).value, b2, out.gradient)
            checked += 1


class TestBoxLoss:
    def test_combination(self):
        b1 = np.array([0.5, 0.5, 1.0, 1.0])
        b2 = np.array([1.0, 0.5, 1.0, 1.0])
        expected = 2.0 * losses.giou_loss(b1, b2).value + 10.0 * 0.5
        np.testing.assert_allclose(losses.box_loss(b1, b2).value, expected, rtol=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 100:
            b1 = np.array([*rng.uniform(-1, 1, 2), *rng.uniform(0.1, 1.0, 2)])
            b2 = np.array([*rng.uniform(-1, 1, 2), *rng.uniform(0.1, 1.0, 2)])
            edges1 = losses._box_corners(b1)
            edges2 = losses._box_corners(b2)
            if min(abs(a - b) for a, b in zip(edges1, edges2)) < 1e-4:
                continue
            if np.min(np.abs(b1 - b2)) < 1e-4:  # l1 kink
                continue
            out = losses.box_loss(b1, b2)
            assert_gradient_close(lambda b: losses.box_loss(b1, b).value, b2, out.gradient)
            checked += 1


class TestSmoothL1:
    def test_values(self):
        np.testing.assert_allclose(losses.smooth_l1(0.4).value, 0.08)
        np.testing.assert_allclose(losses.smooth_l1(-2.5).value, 2.0)
        np.testing.assert_allclose(losses.smooth_l1(1.0).value, 0.5)

    def test_continuity_at_one(self):
        inside = losses.smooth_l1(1.0 - 1e-12).value
        outside = losses.smooth_l1(1.0 + 1e-12).value
        np.testing.assert_allclose(inside, outside, atol=1e-9)

    def test_gradient(self):
        for x in (-2.5, -0.7, 0.3, 1.8):
            out = losses.smooth_l1(x)
            assert_gradient_close(
                lambda v: losses.smooth_l1(float(v[0])).value, np.array([x]), out.gradient
            )


class TestCrossRatioLoss:
    def test_zero_on_true_projections(self):
        from poseset.geometry import CameraIntrinsics, project_points

        cam = CameraIntrinsics(572.4, 573.6, 320.0, 240.0)
        rng = np.random.default_rng(4)
        kps3d = ibb_keypoints(BBox3D(0.05, 0.03, 0.08))
        for _ in range(20):
            pose = Pose(random_rotation(rng), np.array([0.0, 0.0, 1.0]))
            uv = project_points(kps3d, pose, cam)
            assert losses.cross_ratio_loss(uv / 640.0).value < 1e-9

    def test_positive_on_perturbed_points(self):
        rng = np.random.default_rng(5)
        kps = rng.uniform(0.0, 1.0, size=(32, 2))
        assert losses.cross_ratio_loss(kps).value > 0.0

    def test_gradient(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            kps = rng.uniform(0.0, 1.0, size=(32, 2))
            out = losses.cross_ratio_loss(kps)
            assert_gradient_close(
                lambda k: losses.cross_ratio_loss(k.reshape(32, 2)).value,
                kps.ravel(),
                out.gradient,
            )


class TestKeypointLoss:
    def test_zero_at_target_up_to_cross_ratio(self):
        kps3d = ibb_keypoints(BBox3D(0.05, 0.03, 0.08))
        from poseset.geometry import CameraIntrinsics, project_points

        cam = CameraIntrinsics(572.4, 573.6, 320.0, 240.0)
        uv = project_points(kps3d, Pose(np.eye(3), np.array([0, 0, 1.0])), cam) / 640.0
        assert losses.keypoint_loss(uv, uv).value < 1e-8

    def test_gradient(self):
        rng = np.random.default_rng(7)
        checked = 0
        while checked < 100:
            gt = rng.uniform(0.0, 1.0, size=(32, 2))
            pred = rng.uniform(0.0, 1.0, size=(32, 2))
            if np.min(np.abs(gt - pred)) < 1e-4:  # l1 kink
                continue
            out = losses.keypoint_loss(gt, pred)
            assert_gradient_close(
                lambda p: losses.keypoint_loss(gt, p.reshape(32, 2)).value,
                pred.ravel(),
                out.gradient,
            )
            checked += 1


class TestRotationLoss:
    def _points(self, rng, n=40):
        return rng.uniform(-0.05, 0.05, size=(n, 3))

    def test_zero_at_equal_rotations(self):
        rng = np.random.default_rng(8)
        R = random_rotation(rng)
        pts = self._points(rng)
        assert losses.rotation_loss(R, R, pts).value == 0.0
        assert losses.rotation_loss(R, R, pts, symmetric=True).value < 1e-12

    def test_symmetric_never_exceeds_plain(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            A, B = random_rotation(rng), random_rotation(rng)
            pts = self._points(rng)
            s = losses.rotation_loss(A, B, pts, symmetric=True).value
            p = losses.rotation_loss(A, B, pts).value
            assert s <= p + 1e-12

    def test_symmetric_matches_brute_force(self):
        rng = np.random.default_rng(10)
        for method in ("brute", "tree"):
            A, B = random_rotation(rng), random_rotation(rng)
            pts = self._points(rng, n=50)
            gt = pts @ A.T
            pred = pts @ B.T
            expected = np.mean(
                [np.min(np.abs(g - pred).sum(axis=1)) for g in gt]
            )
            out = losses.rotation_loss(A, B, pts, symmetric=True, method=method)
            np.testing.assert_allclose(out.value, expected, rtol=1e-12)

    def test_brute_and_tree_agree(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            A, B = random_rotation(rng), random_rotation(rng)
            pts = self._points(rng, n=64)
            brute = losses.rotation_loss(A, B, pts, symmetric=True, method="brute")
            tree = losses.rotation_loss(A, B, pts, symmetric=True, method="tree")
            np.testing.assert_allclose(brute.value, tree.value, rtol=1e-12)
            np.testing.assert_allclose(brute.gradient, tree.gradient, atol=1e-12)

    def test_axis_symmetric_object_in_plane_rotation(self):
        """For a z-symmetric ring, rotating about z leaves the matched loss tiny."""
        theta = np.linspace(0.0, 2 * np.pi, 720, endpoint=False)
        ring = np.stack(
            [0.05 * np.cos(theta), 0.05 * np.sin(theta), np.zeros_like(theta)], axis=1
        )
        c, s = np.cos(0.7), np.sin(0.7)
        Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        sym = losses.rotation_loss(np.eye(3), Rz, ring, symmetric=True).value
        plain = losses.rotation_loss(np.eye(3), Rz, ring).value
        assert sym < 1e-3
        assert plain > 0.01

    def test_empty_model_raises(self):
        with pytest.raises(EmptyModel):
            losses.rotation_loss(np.eye(3), np.eye(3), np.zeros((0, 3)))

    def test_gradient_plain(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            A, B = random_rotation(rng), random_rotation(rng)
            pts = self._points(rng)
            out = losses.rotation_loss(A, B, pts)
            assert_gradient_close(
                lambda r: losses.rotation_loss(A, r.reshape(3, 3), pts).value,
                B.ravel(),
                out.gradient,
            )

    def test_gradient_symmetric(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            A, B = random_rotation(rng), random_rotation(rng)
            pts = self._points(rng)
            out = losses.rotation_loss(A, B, pts, symmetric=True)
            assert_gradient_close(
                lambda r: losses.rotation_loss(
                    A, r.reshape(3, 3), pts, symmetric=True
                ).value,
                B.ravel(),
                out.gradient,
            )


class TestPoseLoss:
    def test_zero_at_equal_poses(self):
        rng = np.random.default_rng(14)
        pose = Pose(random_rotation(rng), rng.normal(size=3))
        pts = rng.uniform(-0.05, 0.05, size=(30, 3))
        assert losses.pose_loss(pose, pose, pts).value == 0.0

    def test_gradient(self):
        rng = np.random.default_rng(15)
        for _ in range(100):
            gt = Pose(random_rotation(rng), rng.normal(size=3))
            pred = Pose(random_rotation(rng), rng.normal(size=3))
            pts = rng.uniform(-0.05, 0.05, size=(30, 3))
            out = losses.pose_loss(gt, pred, pts)

            def f(x):
                return losses.pose_loss(
                    gt, Pose(x[:9].reshape(3, 3), x[9:]), pts
                ).value

            assert_gradient_close(
                f, np.concatenate([pred.rotation.ravel(), pred.translation]), out.gradient
            )

    def test_decoded_rotation_chain_rule(self):
        """pose grad @ 6d decode jacobian == finite differences through both."""
        from poseset.geometry import rot_from_6d_backward

        rng = np.random.default_rng(16)
        for _ in range(20):
            gt = random_rotation(rng)
            v = rng.normal(size=6)
            pts = rng.uniform(-0.05, 0.05, size=(30, 3))
            out = losses.rotation_loss(gt, rot_from_6d(v), pts)
            grad_v = rot_from_6d_backward(v, out.gradient.reshape(3, 3))
            fd = finite_difference(
                lambda x: losses.rotation_loss(gt, rot_from_6d(x), pts).value, v
            )
            denom = max(np.linalg.norm(fd), 1e-8)
            assert np.linalg.norm(grad_v - fd) / denom < 1e-4

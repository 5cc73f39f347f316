"""End-to-end acceptance checks, one test per stated criterion.

Each test prints a single PASS/FAIL line (visible under pytest -s or in the
captured output of a failed run).  The training-based checks are slow by
nature; this module is a full-system run, not a unit suite.
"""

import os
import time
from itertools import permutations

import numpy as np
import pytest

from poseset import harness, losses, metrics, rotest
from poseset.attention import (
    attention_weights,
    init_mha_params,
    multi_head_attention,
)
from poseset.geometry import (
    CameraIntrinsics,
    Pose,
    cross_ratio,
    geodesic_distance,
    project_points,
    random_rotation,
    recover_translation,
)
from poseset.keypoints import BBox3D, edge_point_indices, ibb_keypoints
from poseset.matching import (
    PredictionTuple,
    TargetTuple,
    cost_matrix,
    hungarian_match,
)
from poseset.pnp import epnp_solve, reprojection_errors
from poseset.rotest import init_mlp, mlp_backward, mlp_forward

CAM = CameraIntrinsics(fx=572.4, fy=573.6, px=320.0, py=240.0)


def verdict(num, ok, text):
    line = f"ACCEPTANCE {num:2d} {'PASS' if ok else 'FAIL'}: {text}"
    print("\n" + line, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# shared heavy fixtures


@pytest.fixture(scope="module")
def training_run(tmp_path_factory):
    """Full-size dataset and noise-free training run (criterion 5)."""
    ds = str(tmp_path_factory.mktemp("accept_ds"))
    train = str(tmp_path_factory.mktemp("accept_train"))
    t0 = time.time()
    harness.cmd_gen_data({"num_scenes": 11000, "seed": 11}, ds)
    rot_path, trans_path = harness.cmd_train(
        {
            "dataset": ds,
            "seed": 0,
            "epochs": 40,
            "val_fraction": 1.0 / 11,
            "input_layout": "keypoints+class",
        },
        train,
    )
    elapsed = time.time() - t0
    return ds, rot_path, trans_path, elapsed


@pytest.fixture(scope="module")
def robust_run(tmp_path_factory):
    """Smaller dataset, noise-augmented training (criteria 6 and 11)."""
    ds = str(tmp_path_factory.mktemp("robust_ds"))
    train = str(tmp_path_factory.mktemp("robust_train"))
    harness.cmd_gen_data({"num_scenes": 1400, "seed": 21}, ds)
    rot_path, trans_path = harness.cmd_train(
        {
            "dataset": ds,
            "seed": 0,
            "epochs": 25,
            "val_fraction": 0.1,
            "input_layout": "keypoints+class",
            "augment_copies": 2,
            "augment_sigma_max": 12.0,
        },
        train,
    )
    return ds, rot_path, trans_path


# ---------------------------------------------------------------------------


def _random_match_sets(rng, n):
    n_real = int(rng.integers(0, n + 1))
    targets = [
        TargetTuple(
            class_id=int(rng.integers(4)),
            box2d=np.array([*rng.uniform(0.2, 0.8, 2), *rng.uniform(0.05, 0.3, 2)]),
        )
        for _ in range(n_real)
    ]
    targets += [TargetTuple() for _ in range(n - n_real)]
    preds = []
    for _ in range(n):
        probs = rng.uniform(0.01, 1.0, size=5)
        preds.append(
            PredictionTuple(
                class_probs=probs / probs.sum(),
                box2d=np.array([*rng.uniform(0.2, 0.8, 2), *rng.uniform(0.05, 0.3, 2)]),
            )
        )
    return targets, preds


def test_01_matching_optimality():
    rng = np.random.default_rng(0)
    t0 = time.time()
    perm_cache = {n: np.array(list(permutations(range(n)))) for n in range(2, 9)}
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        targets, preds = _random_match_sets(rng, n)
        result = hungarian_match(targets, preds)
        C = cost_matrix(targets, preds)
        brute = C[np.arange(n), perm_cache[n]].sum(axis=1).min()
        worst = max(worst, abs(result.total_cost - brute))
    elapsed = time.time() - t0
    verdict(
        1,
        worst < 1e-12 and elapsed < 10.0,
        f"assignment cost equals brute-force optimum on 1000 random sets "
        f"(max dev {worst:.1e}, {elapsed:.1f}s < 10s)",
    )


def test_02_cross_ratio_invariant():
    rng = np.random.default_rng(1)
    kps3d = ibb_keypoints(BBox3D(0.05, 0.03, 0.08))
    quads = edge_point_indices()
    worst = 0.0
    worst_loss = 0.0
    for _ in range(500):
        pose = Pose(
            random_rotation(rng),
            np.array([*rng.uniform(-0.05, 0.05, 2), rng.uniform(0.5, 1.5)]),
        )
        uv = project_points(kps3d, pose, CAM)
        for quad in quads:
            worst = max(worst, abs(cross_ratio(*uv[list(quad)]) - 4.0 / 3.0))
        worst_loss = max(worst_loss, losses.cross_ratio_loss(uv / 640.0).value)
    verdict(
        2,
        worst < 1e-6 and worst_loss < 1e-9,
        f"cross-ratio 4/3 over 500 projected poses (max dev {worst:.1e}, "
        f"max consistency loss {worst_loss:.1e})",
    )


def test_03_epnp_exactness():
    rng = np.random.default_rng(2)
    t0 = time.time()
    worst_rot = worst_trans = worst_rms = 0.0
    for _ in range(500):
        pts = rng.uniform(-0.06, 0.06, size=(32, 3))
        pose = Pose(
            random_rotation(rng),
            np.array([*rng.uniform(-0.05, 0.05, 2), rng.uniform(0.5, 1.5)]),
        )
        uv = project_points(pts, pose, CAM)
        est = epnp_solve(pts, uv, CAM)
        worst_rot = max(worst_rot, geodesic_distance(pose.rotation, est.rotation))
        worst_trans = max(
            worst_trans, float(np.linalg.norm(pose.translation - est.translation))
        )
        rms = float(np.sqrt(np.mean(reprojection_errors(est, pts, uv, CAM) ** 2)))
        worst_rms = max(worst_rms, rms)
    elapsed = time.time() - t0
    verdict(
        3,
        worst_rot < 1e-3 and worst_trans < 1e-4 and worst_rms < 1e-3 and elapsed < 30.0,
        f"500 noise-free 32-point solves exact (rot {worst_rot:.1e} rad, "
        f"trans {worst_trans:.1e} m, rms {worst_rms:.1e} px, {elapsed:.1f}s < 30s)",
    )


def _fd_rel_err(f, x, grad, eps=1e-6):
    """Central-difference gradient of f at x (mutated in place), vs `grad`."""
    flat = x.ravel()
    fd = np.empty(flat.size)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        hi = f(x)
        flat[i] = saved - eps
        lo = f(x)
        flat[i] = saved
        fd[i] = (hi - lo) / (2.0 * eps)
    denom = max(float(np.linalg.norm(fd)), 1e-8)
    return float(np.linalg.norm(np.asarray(grad, dtype=float).ravel() - fd)) / denom


def test_04_gradient_fidelity():
    rng = np.random.default_rng(3)
    worst = {}

    errs = []
    for _ in range(100):
        probs = rng.uniform(0.05, 1.0, size=5)
        target = int(rng.integers(5))
        out = losses.class_nll(probs, target)
        errs.append(
            _fd_rel_err(lambda p: losses.class_nll(p, target).value, probs, out.gradient)
        )
    worst["class"] = max(errs)

    errs = []
    while len(errs) < 100:
        b1 = np.array([*rng.uniform(-1, 1, 2), *rng.uniform(0.1, 1.0, 2)])
        b2 = np.array([*rng.uniform(-1, 1, 2), *rng.uniform(0.1, 1.0, 2)])
        e1, e2 = losses._box_corners(b1), losses._box_corners(b2)
        # skip GIoU / l1 kinks (coincident edges or coordinates)
        if min(abs(a - b) for a, b in zip(e1, e2)) < 1e-4:
            continue
        if np.min(np.abs(b1 - b2)) < 1e-4:
            continue
        out = losses.box_loss(b1, b2)
        errs.append(
            _fd_rel_err(lambda b: losses.box_loss(b1, b).value, b2, out.gradient)
        )
    worst["box"] = max(errs)

    errs = []
    while len(errs) < 100:
        gt = rng.uniform(0.0, 1.0, size=(32, 2))
        pred = rng.uniform(0.0, 1.0, size=(32, 2))
        if np.min(np.abs(gt - pred)) < 1e-4:  # l1 kink
            continue
        out = losses.keypoint_loss(gt, pred)
        errs.append(
            _fd_rel_err(
                lambda p: losses.keypoint_loss(gt, p.reshape(32, 2)).value,
                pred.ravel().copy(),
                out.gradient,
            )
        )
    worst["keypoint"] = max(errs)

    errs = []
    while len(errs) < 100:
        gt = Pose(random_rotation(rng), rng.normal(size=3))
        pred = Pose(random_rotation(rng), rng.normal(size=3))
        pts = rng.uniform(-0.05, 0.05, size=(24, 3))
        sym = len(errs) % 2 == 1
        if np.min(np.abs(pred.translation - gt.translation)) < 1e-4:
            continue
        gt_pts = pts @ gt.rotation.T
        pred_pts = pts @ pred.rotation.T
        D = np.abs(gt_pts[:, None, :] - pred_pts[None, :, :]).sum(axis=2)
        if np.min(np.abs(gt_pts - pred_pts[np.argmin(D, axis=1)])) < 1e-4:
            continue  # per-coordinate l1 kink
        if sym:
            two = np.sort(D, axis=1)[:, :2]
            if np.min(two[:, 1] - two[:, 0]) < 1e-3:
                continue  # closest-point match could flip under the FD step
        out = losses.pose_loss(gt, pred, pts, symmetric=sym)

        def f(x):
            return losses.pose_loss(
                gt, Pose(x[:9].reshape(3, 3), x[9:]), pts, symmetric=sym
            ).value

        errs.append(
            _fd_rel_err(
                f,
                np.concatenate([pred.rotation.ravel(), pred.translation]),
                out.gradient,
            )
        )
    worst["pose"] = max(errs)

    errs = []
    for _ in range(100):
        params = init_mlp([6, 10, 4], rng)
        x = rng.normal(size=(3, 6))
        target = rng.normal(size=(3, 4))
        out, cache = mlp_forward(params, x)
        grads, _ = mlp_backward(params, cache, out - target)

        def sq_loss(_):
            o, _c = mlp_forward(params, x)
            return 0.5 * float(np.sum((o - target) ** 2))

        layer = int(rng.integers(len(params.weights)))
        # _fd_rel_err perturbs the weight array in place, so sq_loss sees it
        errs.append(_fd_rel_err(sq_loss, params.weights[layer], grads.weights[layer]))
    worst["mlp"] = max(errs)

    ok = all(v < 1e-4 for v in worst.values())
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    verdict(
        4, ok, f"gradients match central differences, 100 points each ({detail})"
    )


def test_05_training_accuracy(training_run):
    ds, rot_path, trans_path, elapsed = training_run
    scenes, catalog = harness.load_dataset(ds)
    _, val_scenes = harness.split_scenes(scenes, 1.0 / 11)
    val_samples = harness.build_samples(val_scenes, catalog, layout="keypoints+class")
    params_r, _, _ = rotest.load_checkpoint(rot_path)
    params_t, _, _ = rotest.load_checkpoint(trans_path)
    cam = val_scenes[0][0].camera
    w, h = val_scenes[0][0].image_size

    rot_errs = [
        geodesic_distance(s.rotation, rotest.rotest_predict(params_r, s.input))
        for s in val_samples
        if not s.symmetric
    ]
    mean_deg = float(np.degrees(np.mean(rot_errs)))

    t_errs = []
    for s in val_samples:
        out, _ = mlp_forward(params_t, s.input)
        tz = max(float(out[2]), 1e-3)
        t_pred = recover_translation(out[0] * w, out[1] * h, tz, cam)
        t_true = recover_translation(s.centroid[0] * w, s.centroid[1] * h, s.depth, cam)
        t_errs.append(float(np.linalg.norm(t_pred - t_true)))
    mean_t = float(np.mean(t_errs))

    verdict(
        5,
        mean_deg < 10.0 and mean_t < 0.02 and elapsed < 1800.0,
        f"trained heads reach {mean_deg:.2f} deg (<10, non-symmetric classes) and "
        f"{mean_t * 100:.2f} cm (<2) on {len(val_scenes)} held-out scenes, "
        f"{elapsed / 60:.1f} min (<30)",
    )


def test_06_robustness_trend(robust_run, tmp_path):
    ds, rot_path, trans_path = robust_run
    path = harness.cmd_compare_solvers(
        {
            "dataset": ds,
            "rotest_checkpoint": rot_path,
            "transest_checkpoint": trans_path,
            "sigmas": [0.0, 1.0, 3.0, 7.0, 10.0],
            "bin_width": 2.0,
            "max_scenes": 60,
            "ransac_iterations": 20,
            "eval_points": 256,
            "seed": 1,
        },
        str(tmp_path / "cmp"),
    )
    rows = [ln.split(",") for ln in open(path).read().strip().splitlines()[2:]]
    high, low = [], []
    for row in rows:
        bin_px, n = float(row[0]), int(row[1])
        if not row[2] or not row[3] or n < 20:
            continue  # empty or sparsely populated bin
        auc_epnp, auc_heads = float(row[2]), float(row[3])
        if bin_px >= 8.0:
            high.append((bin_px, auc_epnp, auc_heads))
        if bin_px < 2.0:
            low.append((bin_px, auc_epnp, auc_heads))
    high_ok = bool(high) and all(r > e for _, e, r in high)
    low_ok = bool(low) and all(e >= r - 0.02 for _, e, r in low)
    detail_high = "; ".join(f"{b:.0f}px epnp={e:.3f} heads={r:.3f}" for b, e, r in high)
    detail_low = "; ".join(f"{b:.0f}px epnp={e:.3f} heads={r:.3f}" for b, e, r in low)
    verdict(
        6,
        high_ok and low_ok,
        f"learned heads beat EPnP on AUC(ADD) at noise bins >= 8px "
        f"({detail_high}); EPnP within 0.02 at the 0-2px bin ({detail_low})",
    )


def test_07_metric_identities():
    rng = np.random.default_rng(4)
    ok_order = True
    for _ in range(10_000):
        pts = rng.uniform(-0.05, 0.05, size=(12, 3))
        rec = metrics.EvalRecord(
            Pose(random_rotation(rng), np.zeros(3)),
            Pose(random_rotation(rng), rng.normal(scale=0.01, size=3)),
            pts,
            diameter=0.1,
        )
        if metrics.adds_metric(rec) > metrics.add_metric(rec) + 1e-12:
            ok_order = False
            break

    ok_auc = metrics.auc([0.05], max_threshold=0.1) == 0.5

    pose = Pose(random_rotation(rng), np.array([0.0, 0.0, 1.0]))
    rec = metrics.EvalRecord(pose, pose, rng.normal(size=(50, 3)), diameter=0.1)
    ok_identity = metrics.add_metric(rec) == 0.0

    theta = np.linspace(0.0, 2 * np.pi, 720, endpoint=False)
    ring = np.stack(
        [0.05 * np.cos(theta), 0.05 * np.sin(theta), np.zeros_like(theta)], axis=1
    )
    ang = 2 * np.pi / 720 * 13
    c, s = np.cos(ang), np.sin(ang)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    sym_rec = metrics.EvalRecord(
        Pose(np.eye(3), np.zeros(3)), Pose(Rz, np.zeros(3)), ring,
        diameter=0.1, symmetric=True,
    )
    ok_sym = metrics.adds_metric(sym_rec) < 1e-9 and metrics.add_metric(sym_rec) > 0.0

    verdict(
        7,
        ok_order and ok_auc and ok_identity and ok_sym,
        f"adds<=add on 1e4 records ({ok_order}), auc([0.05], 0.1)=0.5 ({ok_auc}), "
        f"identity add=0 ({ok_identity}), z-spun ring adds<1e-9 & add>0 ({ok_sym})",
    )


def test_08_symmetric_loss_bound():
    rng = np.random.default_rng(5)
    ok_bound = True
    for _ in range(10_000):
        A, B = random_rotation(rng), random_rotation(rng)
        pts = rng.uniform(-0.05, 0.05, size=(8, 3))
        s = losses.rotation_loss(A, B, pts, symmetric=True).value
        p = losses.rotation_loss(A, B, pts).value
        if s > p + 1e-12:
            ok_bound = False
            break

    ok_equal = True
    for _ in range(50):
        A, B = random_rotation(rng), random_rotation(rng)
        pts = rng.uniform(-0.05, 0.05, size=(50, 3))
        gt = pts @ A.T
        pred = pts @ B.T
        # brute-force the closest-point match; equality must hold exactly
        # when it is the identity mapping on every point
        D = np.abs(gt[:, None, :] - pred[None, :, :]).sum(axis=2)
        match = np.argmin(D, axis=1)
        s = losses.rotation_loss(A, B, pts, symmetric=True).value
        p = losses.rotation_loss(A, B, pts).value
        if np.all(match == np.arange(len(pts))):
            if not np.isclose(s, p, rtol=1e-12, atol=0.0):
                ok_equal = False
        elif s > p + 1e-12:
            ok_equal = False
    verdict(
        8,
        ok_bound and ok_equal,
        f"closest-point loss <= fixed-match loss on 1e4 rotation pairs "
        f"({ok_bound}); equality exactly under the identity match on 50-point "
        f"sets ({ok_equal})",
    )


def test_09_attention_invariants():
    rng = np.random.default_rng(6)
    d = 256
    ok = True
    for trial in range(100):
        h = (1, 2, 4, 8)[trial % 4]
        n_q = int(rng.integers(1, 10))
        n_kv = int(rng.integers(1, 10))
        params = init_mha_params(d, h, rng)
        x_q = rng.normal(size=(n_q, d))
        x_kv = rng.normal(size=(n_kv, d))
        W = attention_weights(
            rng.normal(size=(n_q, d // h)), rng.normal(size=(n_kv, d // h)), d, h
        )
        if not np.allclose(W.sum(axis=-1), 1.0, atol=1e-9):
            ok = False
            break
        base = multi_head_attention(x_q, x_kv, params, h)
        pk = rng.permutation(n_kv)
        pq = rng.permutation(n_q)
        if not np.allclose(
            multi_head_attention(x_q, x_kv[pk], params, h), base, atol=1e-10
        ):
            ok = False
            break
        if not np.allclose(
            multi_head_attention(x_q[pq], x_kv, params, h), base[pq], atol=1e-10
        ):
            ok = False
            break
    verdict(
        9,
        ok,
        "attention rows stochastic, key/value-permutation invariant, "
        "query-permutation equivariant over 100 shapes, h in {1,2,4,8}, d=256",
    )


def test_10_determinism(tmp_path):
    # reruns share the config (paths included); only the output dir differs
    gen_cfg = {"num_scenes": 20, "seed": 9, "noise_sigma": 2.0}
    ds_a, ds_b = str(tmp_path / "ds_a"), str(tmp_path / "ds_b")
    harness.cmd_gen_data(dict(gen_cfg), ds_a)
    harness.cmd_gen_data(dict(gen_cfg), ds_b)

    train_cfg = {
        "dataset": ds_a, "epochs": 2, "hidden_dim": 32, "num_layers": 2, "seed": 3,
    }
    train_a, train_b = str(tmp_path / "train_a"), str(tmp_path / "train_b")
    harness.cmd_train(dict(train_cfg), train_a)
    harness.cmd_train(dict(train_cfg), train_b)

    cmp_cfg = {
        "dataset": ds_a,
        "rotest_checkpoint": os.path.join(train_a, "rotest.json"),
        "transest_checkpoint": os.path.join(train_a, "transest.json"),
        "sigmas": [2.0],
        "ransac_iterations": 5,
        "max_scenes": 5,
        "eval_points": 32,
    }
    cmp_a, cmp_b = str(tmp_path / "cmp_a"), str(tmp_path / "cmp_b")
    harness.cmd_compare_solvers(dict(cmp_cfg), cmp_a)
    harness.cmd_compare_solvers(dict(cmp_cfg), cmp_b)

    pairs = [
        (os.path.join(ds_a, "scenes.jsonl"), os.path.join(ds_b, "scenes.jsonl")),
        (os.path.join(train_a, "rotest.json"), os.path.join(train_b, "rotest.json")),
        (
            os.path.join(train_a, "transest.json"),
            os.path.join(train_b, "transest.json"),
        ),
        (os.path.join(train_a, "curves.csv"), os.path.join(train_b, "curves.csv")),
        (
            os.path.join(cmp_a, "compare_solvers.csv"),
            os.path.join(cmp_b, "compare_solvers.csv"),
        ),
    ]
    same = all(open(a, "rb").read() == open(b, "rb").read() for a, b in pairs)
    verdict(
        10,
        same,
        "gen-data, train, compare-solvers outputs byte-identical across "
        "same-seed reruns",
    )


def test_11_ablation_ordering(robust_run, tmp_path):
    ds, rot_path, trans_path = robust_run
    path = harness.cmd_ablate(
        {
            "dataset": ds,
            "rotest_checkpoint": rot_path,
            "transest_checkpoint": trans_path,
            "sigma": 8.0,
            "max_scenes": 60,
            "ransac_iterations": 20,
            "eval_points": 256,
            "seed": 2,
        },
        str(tmp_path / "ab"),
    )
    rows = {
        r[0]: r
        for r in (ln.split(",") for ln in open(path).read().strip().splitlines()[2:])
    }
    auc_add = {name: float(rows[name][3]) for name in rows}
    ok = (
        auc_add["ibb_heads"] >= auc_add["ibb_epnp"]
        and auc_add["ibb_epnp"] >= auc_add["fps_epnp"]
    )
    verdict(
        11,
        ok,
        "ablation AUC(ADD) ordering at sigma=8px: ibb_heads >= ibb_epnp >= "
        f"fps_epnp ({auc_add['ibb_heads']:.3f} >= {auc_add['ibb_epnp']:.3f} >= "
        f"{auc_add['fps_epnp']:.3f})",
    )

"""Experiment driver: every command is a pure function of (config, inputs).

Each command validates its JSON config against an explicit schema (unknown
keys rejected), derives all randomness from the config seed, and writes
CSV/JSON artifacts whose first line embeds the config hash and seed, so
re-running a command reproduces its outputs byte for byte.
"""

import csv
import hashlib
import io
import json
import os

import numpy as np
from scipy.stats import spearmanr

from . import metrics, rotest, synth
from .errors import MissingCheckpoint, PosesetError
from .geometry import Pose, geodesic_distance
from .keypoints import fps_sample, ibb_keypoints, project_keypoints
from .matching import SET_SIZE, PredictionTuple, hungarian_loss, hungarian_match
from .pnp import RansacConfig, ransac_pnp
from .rotest import Sample, TrainConfig


class ConfigError(PosesetError):
    """Config document failed schema validation (CLI exit code 2)."""


def validate_config(cfg, schema, command):
    """Fill defaults and reject unknown keys; returns a new dict."""
    if not isinstance(cfg, dict):
        raise ConfigError(f"{command}: config must be a JSON object")
    unknown = set(cfg) - set(schema)
    if unknown:
        raise ConfigError(f"{command}: unknown config keys {sorted(unknown)}")
    out = dict(schema)
    out.update(cfg)
    missing = [k for k, v in out.items() if v is REQUIRED]
    if missing:
        raise ConfigError(f"{command}: missing required keys {missing}")
    return out


REQUIRED = object()


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _header(cfg):
    return f"config_hash={config_hash(cfg)} seed={cfg.get('seed', 0)}"


def _write_csv(path, cfg, fieldnames, rows):
    buf = io.StringIO()
    buf.write(f"# {_header(cfg)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fieldnames)
    writer.writerows(rows)
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def _fmt(x):
    return f"{float(x):.9f}"


# ---------------------------------------------------------------------------
# gen-data

GEN_DATA_SCHEMA = {
    "num_scenes": 100,
    "seed": 0,
    "catalog_seed": 0,
    "min_objects": 1,
    "max_objects": 6,
    "depth_min": 0.5,
    "depth_max": 1.5,
    "margin": 16.0,
    "noise_sigma": 0.0,
    "outlier_fraction": 0.0,
    "image_width": 640,
    "image_height": 480,
}


def _scene_config(cfg, catalog):
    return synth.SceneConfig(
        catalog=catalog,
        image_size=(cfg["image_width"], cfg["image_height"]),
        min_objects=cfg["min_objects"],
        max_objects=cfg["max_objects"],
        depth_range=(cfg["depth_min"], cfg["depth_max"]),
        margin=cfg["margin"],
        seed=cfg["seed"],
    )


def cmd_gen_data(cfg, out_dir):
    cfg = validate_config(cfg, GEN_DATA_SCHEMA, "gen-data")
    os.makedirs(out_dir, exist_ok=True)
    catalog = synth.default_catalog(cfg["catalog_seed"])
    scfg = _scene_config(cfg, catalog)
    with open(os.path.join(out_dir, "catalog.json"), "w") as fh:
        json.dump(
            {
                "catalog_seed": cfg["catalog_seed"],
                "classes": synth.catalog_manifest(catalog),
            },
            fh,
            sort_keys=True,
            indent=1,
        )
    lines = []
    for index in range(cfg["num_scenes"]):
        scene = synth.generate_scene(scfg, index)
        noisy, stats = None, None
        if cfg["noise_sigma"] > 0 or cfg["outlier_fraction"] > 0:
            noisy, stats = [], []
            for oi, obj in enumerate(scene.objects):
                spec = synth.NoiseSpec(
                    sigma=cfg["noise_sigma"],
                    outlier_fraction=cfg["outlier_fraction"],
                    outlier_range=(
                        (0.0, float(cfg["image_width"])),
                        (0.0, float(cfg["image_height"])),
                    ),
                    seed=[cfg["seed"], index, oi],
                )
                kps, realized = synth.perturb_keypoints(obj.keypoints2d, spec)
                noisy.append(kps)
                stats.append(realized)
        doc = synth.scene_to_json(scene, noisy, stats)
        lines.append(json.dumps(doc, sort_keys=True))
    with open(os.path.join(out_dir, "scenes.jsonl"), "w") as fh:
        fh.write(f'{{"_header": "{_header(cfg)}"}}\n')
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump({"config": cfg, "hash": config_hash(cfg)}, fh, sort_keys=True)
    return os.path.join(out_dir, "scenes.jsonl")


def load_dataset(dataset_dir, max_scenes=0):
    """Returns (scenes, catalog); scenes carry optional noisy keypoints."""
    with open(os.path.join(dataset_dir, "catalog.json")) as fh:
        manifest = json.load(fh)
    catalog = synth.default_catalog(manifest["catalog_seed"])
    scenes = []
    with open(os.path.join(dataset_dir, "scenes.jsonl")) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            if "_header" in doc:
                continue
            scenes.append(synth.scene_from_json(doc))
            if max_scenes and len(scenes) >= max_scenes:
                break
    return scenes, catalog


# ---------------------------------------------------------------------------
# train

TRAIN_SCHEMA = {
    "dataset": REQUIRED,
    "seed": 0,
    "epochs": 40,
    "learning_rate": 1e-3,
    "batch_size": 32,
    "dropout": 0.0,
    "hidden_dim": 256,
    "num_layers": 6,
    "weight_decay": 1e-4,
    "grad_clip": 0.1,
    "input_layout": "keypoints",
    "lr_schedule": "cosine",
    "loss_points": 128,
    "depth_scale": 1.0,
    "augment_copies": 0,
    "augment_sigma_max": 0.0,
    "val_fraction": 0.1,
    "max_scenes": 0,
    "translation_epochs": 0,  # 0: same as epochs
}


def _object_input(kps2d_px, image_size, layout, class_id, num_classes):
    w, h = image_size
    x = (np.asarray(kps2d_px) / [w, h]).ravel()
    if layout == "keypoints+class":
        onehot = np.zeros(num_classes + 1)
        onehot[class_id] = 1.0
        x = np.concatenate([x, onehot])
    return x


def build_samples(scenes, catalog, layout="keypoints", augment_copies=0,
                  augment_sigma_max=0.0, seed=0, use_noisy=False):
    """Flatten scenes into per-object training samples.

    With augmentation, each object also contributes `augment_copies` samples
    whose keypoints are perturbed at a sigma drawn uniformly in
    [0, augment_sigma_max]; everything is deterministic given `seed`.
    """
    samples = []
    num_classes = len(catalog)
    for scene, noisy in scenes:
        w, h = scene.image_size
        for oi, obj in enumerate(scene.objects):
            kps_variants = []
            base = (
                noisy[oi][0] if (use_noisy and noisy is not None) else obj.keypoints2d
            )
            kps_variants.append(base)
            for c in range(augment_copies):
                rng = np.random.default_rng([seed, scene.index, oi, c])
                sigma = rng.uniform(0.0, augment_sigma_max)
                kps_variants.append(
                    base + rng.normal(scale=sigma, size=base.shape)
                )
            for kps in kps_variants:
                samples.append(
                    Sample(
                        input=_object_input(
                            kps, scene.image_size, layout, obj.class_id, num_classes
                        ),
                        rotation=obj.pose.rotation,
                        centroid=obj.centroid2d / [w, h],
                        depth=obj.pose.translation[2],
                        class_id=obj.class_id,
                        symmetric=catalog[obj.class_id].symmetric,
                    )
                )
    return samples


def _train_cfg(cfg, epochs=None):
    return TrainConfig(
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        epochs=epochs if epochs is not None else cfg["epochs"],
        dropout=cfg["dropout"],
        seed=cfg["seed"],
        weight_decay=cfg["weight_decay"],
        grad_clip=cfg["grad_clip"],
        hidden_dim=cfg["hidden_dim"],
        num_layers=cfg["num_layers"],
        input_layout=cfg["input_layout"],
        lr_schedule=cfg["lr_schedule"],
        loss_points=cfg["loss_points"],
        depth_scale=cfg["depth_scale"],
    )


def split_scenes(scenes, val_fraction):
    n_val = max(1, int(round(len(scenes) * val_fraction)))
    return scenes[:-n_val], scenes[-n_val:]


def cmd_train(cfg, out_dir):
    cfg = validate_config(cfg, TRAIN_SCHEMA, "train")
    os.makedirs(out_dir, exist_ok=True)
    scenes, catalog = load_dataset(cfg["dataset"], cfg["max_scenes"])
    train_scenes, val_scenes = split_scenes(scenes, cfg["val_fraction"])
    tcfg = _train_cfg(cfg)
    model_points = {
        i: synth.subsample_mesh(c.mesh, cfg["loss_points"], seed=i)
        for i, c in enumerate(catalog)
    }
    train_samples = build_samples(
        train_scenes,
        catalog,
        layout=cfg["input_layout"],
        augment_copies=cfg["augment_copies"],
        augment_sigma_max=cfg["augment_sigma_max"],
        seed=cfg["seed"],
    )
    val_samples = build_samples(val_scenes, catalog, layout=cfg["input_layout"])

    params_r, curve_r = rotest.train_rotest(
        train_samples, tcfg, model_points, val_dataset=val_samples
    )
    cam = train_scenes[0][0].camera if train_scenes else val_scenes[0][0].camera
    image_size = scenes[0][0].image_size
    t_epochs = cfg["translation_epochs"] or None
    params_t, curve_t = rotest.train_translation(
        train_samples, _train_cfg(cfg, epochs=t_epochs), cam, image_size,
        val_dataset=val_samples,
    )
    extra = {
        "input_layout": cfg["input_layout"],
        "image_size": list(image_size),
        "num_classes": len(catalog),
        "depth_scale": cfg["depth_scale"],
    }
    rot_path = os.path.join(out_dir, "rotest.json")
    trans_path = os.path.join(out_dir, "transest.json")
    rotest.save_checkpoint(rot_path, params_r, tcfg, extra=extra)
    rotest.save_checkpoint(trans_path, params_t, tcfg, extra=extra)
    rows = []
    for e in range(len(curve_r["train"])):
        rows.append(
            [
                e,
                _fmt(curve_r["train"][e]),
                _fmt(curve_r["val"][e]) if curve_r["val"] else "",
                _fmt(curve_t["train"][e]) if e < len(curve_t["train"]) else "",
                _fmt(curve_t["val"][e]) if e < len(curve_t["val"]) else "",
            ]
        )
    _write_csv(
        os.path.join(out_dir, "curves.csv"),
        cfg,
        ["epoch", "rot_train", "rot_val", "trans_train", "trans_val"],
        rows,
    )
    return rot_path, trans_path


# ---------------------------------------------------------------------------
# compare-solvers

COMPARE_SCHEMA = {
    "dataset": REQUIRED,
    "rotest_checkpoint": REQUIRED,
    "transest_checkpoint": REQUIRED,
    "seed": 0,
    "sigmas": [0.0, 2.0, 4.0, 6.0, 8.0, 10.0],
    "bin_width": 2.0,
    "max_scenes": 0,
    "ransac_iterations": 50,
    "ransac_threshold": 3.0,
    "eval_points": 500,
}


def _load_heads(cfg):
    for key in ("rotest_checkpoint", "transest_checkpoint"):
        if not os.path.exists(cfg[key]):
            raise MissingCheckpoint(f"missing checkpoint: {cfg[key]}")
    params_r, _, extra = rotest.load_checkpoint(cfg["rotest_checkpoint"])
    params_t, _, _ = rotest.load_checkpoint(cfg["transest_checkpoint"])
    return params_r, params_t, extra


def _predict_pose(params_r, params_t, kps_px, scene, extra, cam, class_id,
                  num_classes):
    x_kps = _object_input(
        kps_px, scene.image_size, extra["input_layout"], class_id, num_classes
    )
    out_r, _ = rotest.mlp_forward(params_r, x_kps)
    from .geometry import rot_from_6d

    R = rot_from_6d(out_r)
    out_t, _ = rotest.mlp_forward(params_t, x_kps)
    w, h = scene.image_size
    tz = max(out_t[2] * extra.get("depth_scale", 1.0), 1e-3)
    from .geometry import recover_translation

    t = recover_translation(out_t[0] * w, out_t[1] * h, tz, cam)
    return Pose(R, t)


def cmd_compare_solvers(cfg, out_dir):
    cfg = validate_config(cfg, COMPARE_SCHEMA, "compare-solvers")
    os.makedirs(out_dir, exist_ok=True)
    scenes, catalog = load_dataset(cfg["dataset"], cfg["max_scenes"])
    params_r, params_t, extra = _load_heads(cfg)
    num_classes = len(catalog)
    eval_points = {
        i: synth.subsample_mesh(c.mesh, cfg["eval_points"], seed=i)
        for i, c in enumerate(catalog)
    }
    kps3d = {i: ibb_keypoints(c.box) for i, c in enumerate(catalog)}
    rcfg_base = dict(
        max_iterations=cfg["ransac_iterations"],
        inlier_threshold=cfg["ransac_threshold"],
    )

    bins = {}  # bin index -> lists of distances
    for scene, _ in scenes:
        cam = scene.camera
        for oi, obj in enumerate(scene.objects):
            entry = catalog[obj.class_id]
            for si, sigma in enumerate(cfg["sigmas"]):
                spec = synth.NoiseSpec(
                    sigma=sigma, seed=[cfg["seed"], scene.index, oi, si]
                )
                noisy, realized = synth.perturb_keypoints(obj.keypoints2d, spec)
                b = int(realized // cfg["bin_width"])
                rec = bins.setdefault(
                    b,
                    {"n": 0, "add_epnp": [], "add_rotest": [],
                     "adds_epnp": [], "adds_rotest": []},
                )
                rec["n"] += 1
                try:
                    pose_epnp, _ = ransac_pnp(
                        kps3d[obj.class_id], noisy, cam,
                        RansacConfig(seed=cfg["seed"] + scene.index, **rcfg_base),
                    )
                except PosesetError:
                    pose_epnp = None
                pose_rot = _predict_pose(
                    params_r, params_t, noisy, scene, extra, cam,
                    obj.class_id, num_classes,
                )
                for name, pose in (("epnp", pose_epnp), ("rotest", pose_rot)):
                    if pose is None:
                        add_d = adds_d = np.inf
                    else:
                        r = metrics.EvalRecord(
                            obj.pose, pose, eval_points[obj.class_id],
                            entry.diameter, entry.symmetric, obj.class_id,
                        )
                        add_d = metrics.add_metric(r)
                        adds_d = metrics.adds_metric(r)
                    if not entry.symmetric:
                        rec[f"add_{name}"].append(add_d)
                    rec[f"adds_{name}"].append(adds_d)

    rows = []
    for b in sorted(bins):
        rec = bins[b]
        if not rec["adds_epnp"]:
            continue
        def _auc(key):
            vals = rec[key]
            return _fmt(metrics.auc(vals)) if vals else ""
        rows.append(
            [
                _fmt(b * cfg["bin_width"]),
                rec["n"],
                _auc("add_epnp"),
                _auc("add_rotest"),
                _auc("adds_epnp"),
                _auc("adds_rotest"),
            ]
        )
    path = os.path.join(out_dir, "compare_solvers.csv")
    _write_csv(
        path,
        cfg,
        ["bin_px", "n", "auc_add_epnp", "auc_add_rotest",
         "auc_adds_epnp", "auc_adds_rotest"],
        rows,
    )
    return path


# ---------------------------------------------------------------------------
# eval-sets

EVAL_SCHEMA = {
    "dataset": REQUIRED,
    "seed": 0,
    "max_scenes": 0,
    "keypoint_sigma": 0.0,
    "class_confidence": 1.0,
    "drop_probability": 0.0,
    "eval_points": 500,
    "loss_points": 128,
    "sweep_fractions": [],
    "sweep_epochs": 10,
}


def simulate_predictions(scene, catalog, cfg, scene_rng):
    """gt-derived prediction set with configured corruption.

    Keypoints get Gaussian pixel noise, class probability mass
    `class_confidence` goes to the true class (rest uniform), and each object
    is dropped (replaced by a padding prediction) with `drop_probability`.
    Poses are recovered from the corrupted keypoints with EPnP so the pose
    loss is exercised.
    """
    num_classes = len(catalog)
    w, h = scene.image_size
    preds = []
    for obj in scene.objects:
        if scene_rng.random() < cfg["drop_probability"]:
            continue
        noisy = obj.keypoints2d + scene_rng.normal(
            scale=cfg["keypoint_sigma"], size=obj.keypoints2d.shape
        )
        probs = np.full(num_classes + 1, (1.0 - cfg["class_confidence"]) / num_classes)
        probs[obj.class_id] = cfg["class_confidence"]
        probs[-1] = 0.0
        probs /= probs.sum()
        lo, hi = noisy.min(axis=0), noisy.max(axis=0)
        box_px = np.array([*((lo + hi) / 2.0), *np.maximum(hi - lo, 1e-6)])
        try:
            pose, _ = ransac_pnp(
                ibb_keypoints(catalog[obj.class_id].box), noisy, scene.camera,
                RansacConfig(seed=int(scene_rng.integers(2**31))),
            )
        except PosesetError:
            pose = Pose(np.eye(3), [0.0, 0.0, 1.0])
        preds.append(
            PredictionTuple(
                class_probs=probs,
                box2d=box_px / [w, h, w, h],
                keypoints2d=noisy / [w, h],
                centroid=obj.centroid2d / [w, h],
                depth=pose.translation[2],
                rotation=pose.rotation,
                translation=pose.translation,
            )
        )
    pad_probs = np.zeros(num_classes + 1)
    pad_probs[-1] = 1.0
    while len(preds) < SET_SIZE:
        preds.append(PredictionTuple(class_probs=pad_probs.copy()))
    return preds


def cmd_eval_sets(cfg, out_dir):
    cfg = validate_config(cfg, EVAL_SCHEMA, "eval-sets")
    os.makedirs(out_dir, exist_ok=True)
    scenes, catalog = load_dataset(cfg["dataset"], cfg["max_scenes"])
    model_points = {
        i: synth.subsample_mesh(c.mesh, cfg["loss_points"], seed=i)
        for i, c in enumerate(catalog)
    }
    eval_points = {
        i: synth.subsample_mesh(c.mesh, cfg["eval_points"], seed=i)
        for i, c in enumerate(catalog)
    }
    rows = []
    pooled = []
    card_total = 0
    for scene, _ in scenes:
        scene_rng = np.random.default_rng([cfg["seed"], scene.index])
        targets = scene.target_set(catalog)
        preds = simulate_predictions(scene, catalog, cfg, scene_rng)
        match = hungarian_match(targets, preds)
        total, breakdown = hungarian_loss(
            targets, preds, match.permutation, model_points=model_points
        )
        card = metrics.cardinality_error(targets, preds)
        card_total += card
        dists = []
        for i, t in enumerate(targets):
            if t.is_no_object:
                continue
            p = preds[int(match.permutation[i])]
            if p.rotation is None:
                continue
            rec = metrics.EvalRecord(
                Pose(t.rotation, t.translation),
                Pose(p.rotation, p.translation),
                eval_points[t.class_id],
                catalog[t.class_id].diameter,
                catalog[t.class_id].symmetric,
                t.class_id,
            )
            dists.append(metrics.combined_metric(rec))
        pooled.extend(dists)
        rows.append(
            [
                scene.index,
                _fmt(total),
                _fmt(breakdown["class"]),
                _fmt(breakdown["box"]),
                _fmt(breakdown["keypoint"]),
                _fmt(breakdown["pose"]),
                card,
                _fmt(np.mean(dists)) if dists else "",
            ]
        )
    per_scene = os.path.join(out_dir, "eval_sets.csv")
    _write_csv(
        per_scene,
        cfg,
        ["scene", "hungarian_total", "class_term", "box_term",
         "keypoint_term", "pose_term", "cardinality_error", "mean_add_s"],
        rows,
    )
    summary = {
        "header": _header(cfg),
        "num_scenes": len(scenes),
        "auc_combined": metrics.auc(pooled) if pooled else None,
        "mean_cardinality_error": card_total / max(len(scenes), 1),
    }
    if cfg["sweep_fractions"]:
        summary["sweep"] = _dataset_size_sweep(cfg, scenes, catalog, out_dir)
    with open(os.path.join(out_dir, "eval_summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    return per_scene


def _dataset_size_sweep(cfg, scenes, catalog, out_dir):
    """Train the rotation head on growing dataset fractions, report val error."""
    train_scenes, val_scenes = split_scenes(scenes, 0.2)
    model_points = {
        i: synth.subsample_mesh(c.mesh, cfg["loss_points"], seed=i)
        for i, c in enumerate(catalog)
    }
    val_samples = build_samples(val_scenes, catalog)
    tcfg = TrainConfig(seed=cfg["seed"], epochs=cfg["sweep_epochs"])
    rows = []
    results = []
    for frac in cfg["sweep_fractions"]:
        n = max(1, int(round(len(train_scenes) * frac)))
        samples = build_samples(train_scenes[:n], catalog)
        params, _ = rotest.train_rotest(samples, tcfg, model_points)
        errs = [
            geodesic_distance(
                s.rotation,
                rotest.rotest_predict(params, s.input.reshape(-1)),
            )
            for s in val_samples
            if not s.symmetric
        ]
        mean_deg = float(np.degrees(np.mean(errs)))
        rows.append([_fmt(frac), n, _fmt(mean_deg)])
        results.append((frac, mean_deg))
    _write_csv(
        os.path.join(out_dir, "dataset_size_sweep.csv"),
        cfg,
        ["fraction", "num_scenes", "val_rotation_error_deg"],
        rows,
    )
    rho = spearmanr([r[0] for r in results], [r[1] for r in results])
    return {
        "fractions": [r[0] for r in results],
        "val_rotation_error_deg": [r[1] for r in results],
        "spearman_rho": float(rho.statistic),
        "spearman_p": float(rho.pvalue),
    }


# ---------------------------------------------------------------------------
# ablate

ABLATE_SCHEMA = {
    "dataset": REQUIRED,
    "rotest_checkpoint": REQUIRED,
    "transest_checkpoint": REQUIRED,
    "seed": 0,
    "sigma": 8.0,
    "max_scenes": 0,
    "fps_points": 8,
    "ransac_iterations": 50,
    "ransac_threshold": 3.0,
    "eval_points": 500,
}

PIPELINES = ("fps_epnp", "ibb_epnp", "ibb_epnp_r_head_t", "ibb_heads")


def cmd_ablate(cfg, out_dir):
    cfg = validate_config(cfg, ABLATE_SCHEMA, "ablate")
    os.makedirs(out_dir, exist_ok=True)
    scenes, catalog = load_dataset(cfg["dataset"], cfg["max_scenes"])
    params_r, params_t, extra = _load_heads(cfg)
    num_classes = len(catalog)
    eval_points = {
        i: synth.subsample_mesh(c.mesh, cfg["eval_points"], seed=i)
        for i, c in enumerate(catalog)
    }
    kps3d_ibb = {i: ibb_keypoints(c.box) for i, c in enumerate(catalog)}
    kps3d_fps = {
        i: fps_sample(c.mesh, cfg["fps_points"], seed=i)
        for i, c in enumerate(catalog)
    }
    rcfg = dict(
        max_iterations=cfg["ransac_iterations"],
        inlier_threshold=cfg["ransac_threshold"],
    )
    if cfg["sigma"] == 0.0:
        print("ablate: noise-free input; all pipelines are near-perfect and "
              "the comparison discriminates nothing")

    acc = {p: {"add": [], "combined": [], "acc01d": []} for p in PIPELINES}
    for scene, _ in scenes:
        cam = scene.camera
        for oi, obj in enumerate(scene.objects):
            entry = catalog[obj.class_id]
            spec_seed = [cfg["seed"], scene.index, oi]
            noisy_ibb, _ = synth.perturb_keypoints(
                obj.keypoints2d, synth.NoiseSpec(sigma=cfg["sigma"], seed=spec_seed)
            )
            fps2d = project_keypoints_any(kps3d_fps[obj.class_id], obj.pose, cam)
            noisy_fps, _ = synth.perturb_keypoints(
                fps2d, synth.NoiseSpec(sigma=cfg["sigma"], seed=spec_seed + [1])
            )

            def epnp(pts3d, pts2d):
                try:
                    pose, _ = ransac_pnp(
                        pts3d, pts2d, cam,
                        RansacConfig(seed=cfg["seed"] + scene.index, **rcfg),
                    )
                    return pose
                except PosesetError:
                    return None

            pose_fps = epnp(kps3d_fps[obj.class_id], noisy_fps)
            pose_ibb = epnp(kps3d_ibb[obj.class_id], noisy_ibb)
            pose_heads = _predict_pose(
                params_r, params_t, noisy_ibb, scene, extra, cam,
                obj.class_id, num_classes,
            )
            pose_mixed = (
                None
                if pose_ibb is None
                else Pose(pose_ibb.rotation, pose_heads.translation)
            )
            for name, pose in zip(
                PIPELINES, (pose_fps, pose_ibb, pose_mixed, pose_heads)
            ):
                if pose is None:
                    add_d = comb_d = np.inf
                else:
                    rec = metrics.EvalRecord(
                        obj.pose, pose, eval_points[obj.class_id],
                        entry.diameter, entry.symmetric, obj.class_id,
                    )
                    add_d = metrics.add_metric(rec)
                    comb_d = metrics.combined_metric(rec)
                if not entry.symmetric:
                    acc[name]["add"].append(add_d)
                acc[name]["combined"].append(comb_d)
                acc[name]["acc01d"].append(
                    1.0 if comb_d < 0.1 * entry.diameter else 0.0
                )

    rows = []
    for name in PIPELINES:
        rows.append(
            [
                name,
                _fmt(float(np.mean(acc[name]["acc01d"]))),
                _fmt(metrics.auc(acc[name]["combined"])),
                _fmt(metrics.auc(acc[name]["add"])),
            ]
        )
    path = os.path.join(out_dir, "ablation.csv")
    _write_csv(
        path, cfg,
        ["pipeline", "acc_add_s_01d", "auc_add_s", "auc_add"],
        rows,
    )
    return path


def project_keypoints_any(pts3d, pose, cam):
    from .geometry import project_points

    return project_points(pts3d, pose, cam)


# ---------------------------------------------------------------------------
# metrics (single-record debugging)

METRICS_SCHEMA = {
    "seed": 0,
    "catalog_seed": 0,
    "class_id": 0,
    "gt_rotation": REQUIRED,
    "gt_translation": REQUIRED,
    "pred_rotation": REQUIRED,
    "pred_translation": REQUIRED,
    "eval_points": 500,
}


def cmd_metrics(cfg, out_dir):
    cfg = validate_config(cfg, METRICS_SCHEMA, "metrics")
    os.makedirs(out_dir, exist_ok=True)
    catalog = synth.default_catalog(cfg["catalog_seed"])
    entry = catalog[cfg["class_id"]]
    rec = metrics.EvalRecord(
        Pose(np.array(cfg["gt_rotation"]).reshape(3, 3), cfg["gt_translation"]),
        Pose(np.array(cfg["pred_rotation"]).reshape(3, 3), cfg["pred_translation"]),
        synth.subsample_mesh(entry.mesh, cfg["eval_points"], seed=cfg["class_id"]),
        entry.diameter,
        entry.symmetric,
        cfg["class_id"],
    )
    path = os.path.join(out_dir, "metrics.csv")
    _write_csv(
        path, cfg,
        ["class", "add", "adds", "combined", "diameter"],
        [[cfg["class_id"], _fmt(metrics.add_metric(rec)),
          _fmt(metrics.adds_metric(rec)), _fmt(metrics.combined_metric(rec)),
          _fmt(entry.diameter)]],
    )
    return path

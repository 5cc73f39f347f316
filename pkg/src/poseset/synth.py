"""Synthetic multi-object scenes at desk scale.

A procedural catalog of 10 objects (8 boxes/prisms with varied aspect ratios
plus a ring and a cylinder, both rotationally symmetric about z) replaces any
mesh downloads; real ASCII PLY/OBJ meshes can be loaded instead.  Scenes are
rejection-sampled so every object's 32 projected keypoints stay inside the
image margin, and everything downstream of (config, seed) is bit-reproducible.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import SamplingExhausted, SchemaMismatch
from .geometry import CameraIntrinsics, Pose, project_points, random_rotation
from .keypoints import BBox3D, Mesh, fps_sample, ibb_keypoints, project_keypoints
from .matching import SET_SIZE, TargetTuple

DEFAULT_IMAGE_SIZE = (640, 480)
DEFAULT_CAMERA = CameraIntrinsics(fx=572.4, fy=573.6, px=320.0, py=240.0)


@dataclass
class ObjectClass:
    """Catalog entry: point-set mesh, bounding box, symmetry flag."""

    name: str
    mesh: Mesh
    box: BBox3D
    symmetric: bool = False

    @property
    def diameter(self):
        return self.mesh.diameter


@dataclass
class SceneConfig:
    catalog: list
    camera: CameraIntrinsics = DEFAULT_CAMERA
    image_size: tuple = DEFAULT_IMAGE_SIZE
    min_objects: int = 1
    max_objects: int = 6
    depth_range: tuple = (0.5, 1.5)
    margin: float = 16.0  # pixels keypoints must keep from the image border
    seed: int = 0

    def __post_init__(self):
        if self.depth_range[0] <= 0 or self.depth_range[1] < self.depth_range[0]:
            raise ValueError("invalid depth range")
        if not (1 <= self.min_objects <= self.max_objects <= SET_SIZE):
            raise ValueError("objects-per-scene range must fit the set size")


@dataclass
class SceneObject:
    class_id: int
    pose: Pose
    keypoints2d: np.ndarray  # pixels, noise-free
    box2d: np.ndarray  # (cx, cy, w, h) pixels
    centroid2d: np.ndarray  # projected origin, pixels


@dataclass
class Scene:
    index: int
    objects: list
    camera: CameraIntrinsics
    image_size: tuple

    def target_set(self, catalog):
        """Padded, normalized TargetTuple set of cardinality SET_SIZE."""
        w, h = self.image_size
        norm = np.array([w, h], dtype=float)
        targets = []
        for obj in self.objects:
            targets.append(
                TargetTuple(
                    class_id=obj.class_id,
                    box2d=obj.box2d / np.array([w, h, w, h]),
                    keypoints2d=obj.keypoints2d / norm,
                    rotation=obj.pose.rotation,
                    translation=obj.pose.translation,
                    symmetric=catalog[obj.class_id].symmetric,
                )
            )
        targets += [TargetTuple() for _ in range(SET_SIZE - len(targets))]
        return targets


def _box_point_cloud(box, n_per_face, rng):
    """Deterministic surface samples on the 6 faces plus the 8 corners."""
    h = box.half_extents
    pts = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            uv = rng.uniform(-1.0, 1.0, size=(n_per_face, 2))
            face = np.empty((n_per_face, 3))
            other = [a for a in range(3) if a != axis]
            face[:, axis] = sign * h[axis]
            face[:, other[0]] = uv[:, 0] * h[other[0]]
            face[:, other[1]] = uv[:, 1] * h[other[1]]
            pts.append(face)
    signs = np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
        dtype=float,
    )
    pts.append(signs * h)
    return np.concatenate(pts)


def _ring_point_cloud(radius, tube, n_major, n_minor, rng):
    """Points on a torus-like ring around z (rotationally symmetric)."""
    del rng
    theta = np.linspace(0.0, 2 * np.pi, n_major, endpoint=False)
    phi = np.linspace(0.0, 2 * np.pi, n_minor, endpoint=False)
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    r = radius + tube * np.cos(ph)
    return np.stack(
        [r * np.cos(th), r * np.sin(th), tube * np.sin(ph)], axis=-1
    ).reshape(-1, 3)


def _cylinder_point_cloud(radius, half_height, n_theta, n_z, rng):
    del rng
    theta = np.linspace(0.0, 2 * np.pi, n_theta, endpoint=False)
    z = np.linspace(-half_height, half_height, n_z)
    th, zz = np.meshgrid(theta, z, indexing="ij")
    return np.stack(
        [radius * np.cos(th), radius * np.sin(th), zz], axis=-1
    ).reshape(-1, 3)


def default_catalog(seed=0):
    """10 procedural desk-scale objects; the last two are symmetric about z."""
    rng = np.random.default_rng(seed)
    half_extents = [
        (0.03, 0.03, 0.03),
        (0.05, 0.03, 0.02),
        (0.02, 0.06, 0.04),
        (0.07, 0.02, 0.03),
        (0.04, 0.04, 0.08),
        (0.06, 0.05, 0.02),
        (0.025, 0.05, 0.065),
        (0.08, 0.04, 0.04),
    ]
    catalog = []
    for i, he in enumerate(half_extents):
        box = BBox3D(*he)
        mesh = Mesh(_box_point_cloud(box, 100, rng))
        catalog.append(ObjectClass(f"box{i}", mesh, box))
    ring = Mesh(_ring_point_cloud(0.045, 0.012, 48, 12, rng))
    catalog.append(
        ObjectClass("ring", ring, BBox3D(0.057, 0.057, 0.012), symmetric=True)
    )
    cyl = Mesh(_cylinder_point_cloud(0.03, 0.06, 48, 12, rng))
    catalog.append(
        ObjectClass("cylinder", cyl, BBox3D(0.03, 0.03, 0.06), symmetric=True)
    )
    return catalog


def subsample_mesh(mesh, k=1500, seed=0):
    """FPS subsample of the mesh vertices (all of them when k is not smaller)."""
    if k >= len(mesh.vertices):
        return mesh.vertices.copy()
    return fps_sample(mesh, k, seed=seed)


def generate_scene(cfg, index, max_rejections=10_000):
    """Rejection-sample one scene, deterministic given (cfg.seed, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    n_objects = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    w, h = cfg.image_size
    cam = cfg.camera
    objects = []
    rejections = 0
    while len(objects) < n_objects:
        if rejections >= max_rejections:
            raise SamplingExhausted(f"scene {index}: {rejections} rejections")
        class_id = int(rng.integers(len(cfg.catalog)))
        entry = cfg.catalog[class_id]
        R = random_rotation(rng)
        tz = rng.uniform(*cfg.depth_range)
        # aim the object origin at a pixel inside the margin, then verify kps
        cx = rng.uniform(cfg.margin, w - cfg.margin)
        cy = rng.uniform(cfg.margin, h - cfg.margin)
        t = np.array(
            [(cx - cam.px) * tz / cam.fx, (cy - cam.py) * tz / cam.fy, tz]
        )
        pose = Pose(R, t)
        kps3d = ibb_keypoints(entry.box)
        cam_z = pose.apply(kps3d)[:, 2]
        if cam_z.min() <= 1e-3:
            rejections += 1
            continue
        kps2d = project_keypoints(kps3d, pose, cam)
        if (
            kps2d[:, 0].min() < cfg.margin
            or kps2d[:, 0].max() > w - cfg.margin
            or kps2d[:, 1].min() < cfg.margin
            or kps2d[:, 1].max() > h - cfg.margin
        ):
            rejections += 1
            continue
        lo = kps2d.min(axis=0)
        hi = kps2d.max(axis=0)
        box2d = np.array([*((lo + hi) / 2.0), *(hi - lo)])
        centroid = project_points(np.zeros((1, 3)), pose, cam)[0]
        objects.append(SceneObject(class_id, pose, kps2d, box2d, centroid))
    return Scene(index, objects, cam, cfg.image_size)


@dataclass
class NoiseSpec:
    sigma: float = 0.0  # per-coordinate Gaussian, pixels
    outlier_fraction: float = 0.0
    outlier_range: tuple = ((0.0, 640.0), (0.0, 480.0))
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0 or not (0.0 <= self.outlier_fraction <= 1.0):
            raise ValueError("invalid noise specification")


def perturb_keypoints(kps2d, spec):
    """Gaussian noise plus uniform outliers; returns (perturbed, mean l2 error)."""
    rng = np.random.default_rng(spec.seed)
    kps = np.asarray(kps2d, dtype=float).copy()
    n = len(kps)
    kps += rng.normal(scale=spec.sigma, size=kps.shape) if spec.sigma > 0 else 0.0
    n_out = int(round(spec.outlier_fraction * n))
    if n_out > 0:
        idx = rng.choice(n, size=n_out, replace=False)
        (x0, x1), (y0, y1) = spec.outlier_range
        kps[idx, 0] = rng.uniform(x0, x1, size=n_out)
        kps[idx, 1] = rng.uniform(y0, y1, size=n_out)
    realized = float(np.linalg.norm(kps - np.asarray(kps2d, dtype=float), axis=1).mean())
    return kps, realized


# ---------------------------------------------------------------------------
# On-disk formats


def scene_to_json(scene, noisy_keypoints=None, noise_stats=None):
    cam = scene.camera
    doc = {
        "index": scene.index,
        "camera": {"fx": cam.fx, "fy": cam.fy, "px": cam.px, "py": cam.py},
        "image_size": list(scene.image_size),
        "objects": [],
    }
    for i, obj in enumerate(scene.objects):
        entry = {
            "class_id": obj.class_id,
            "rotation": [float(x) for x in obj.pose.rotation.ravel()],
            "translation": [float(x) for x in obj.pose.translation],
            "keypoints2d": [float(x) for x in obj.keypoints2d.ravel()],
            "box2d": [float(x) for x in obj.box2d],
            "centroid2d": [float(x) for x in obj.centroid2d],
        }
        if noisy_keypoints is not None:
            entry["keypoints2d_noisy"] = [
                float(x) for x in noisy_keypoints[i].ravel()
            ]
            entry["noise_l2_mean"] = float(noise_stats[i])
        doc["objects"].append(entry)
    return doc


def scene_from_json(doc):
    try:
        cam = CameraIntrinsics(**doc["camera"])
        objects = []
        noisy = []
        for entry in doc["objects"]:
            pose = Pose(
                np.array(entry["rotation"]).reshape(3, 3),
                np.array(entry["translation"]),
            )
            objects.append(
                SceneObject(
                    class_id=int(entry["class_id"]),
                    pose=pose,
                    keypoints2d=np.array(entry["keypoints2d"]).reshape(32, 2),
                    box2d=np.array(entry["box2d"]),
                    centroid2d=np.array(entry["centroid2d"]),
                )
            )
            if "keypoints2d_noisy" in entry:
                noisy.append(
                    (
                        np.array(entry["keypoints2d_noisy"]).reshape(32, 2),
                        float(entry.get("noise_l2_mean", 0.0)),
                    )
                )
        scene = Scene(
            int(doc["index"]), objects, cam, tuple(doc["image_size"])
        )
        return scene, (noisy if noisy else None)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaMismatch(f"malformed scene document: {exc}") from exc


def catalog_manifest(catalog, mesh_paths=None):
    """Catalog description: per class id, geometry summary and symmetry flag."""
    return {
        str(i): {
            "name": c.name,
            "mesh_path": None if mesh_paths is None else mesh_paths.get(i),
            "half_extents": [c.box.hx, c.box.hy, c.box.hz],
            "diameter": c.diameter,
            "symmetric": c.symmetric,
        }
        for i, c in enumerate(catalog)
    }


def load_bop_scene_gt(path, obj_id_to_class=None):
    """Read-only import of BOP-style scene_gt.json pose annotations.

    Returns {image id: [(class id, Pose), ...]}; BOP translations are in
    millimeters and converted to meters.
    """
    with open(path) as fh:
        doc = json.load(fh)
    out = {}
    try:
        for im_id, entries in doc.items():
            poses = []
            for e in entries:
                R = np.array(e["cam_R_m2c"], dtype=float).reshape(3, 3)
                t = np.array(e["cam_t_m2c"], dtype=float) / 1000.0
                obj = int(e["obj_id"])
                cls = obj_id_to_class[obj] if obj_id_to_class else obj
                poses.append((cls, Pose(R, t)))
            out[int(im_id)] = poses
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaMismatch(f"malformed BOP ground-truth file: {exc}") from exc
    return out

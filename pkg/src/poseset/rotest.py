"""Feed-forward rotation and translation heads with built-in backpropagation.

The rotation head maps 64 normalized keypoint coordinates (optionally plus
class probabilities) to the 6D rotation representation, decoded through
Gram-Schmidt so the output is always a valid rotation.  The translation head
regresses the normalized projected centroid and depth, completed into a full
translation through the pinhole inverse.  Everything is plain numpy: forward,
backward, AdamW updates, and checkpointing are explicit.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, Divergence, StaleCache
from .geometry import rot_from_6d, rot_from_6d_backward, recover_translation
from .losses import rotation_loss

CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    """Per-layer weight matrices (in_dim x out_dim) and bias vectors."""

    weights: list
    biases: list

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self):
        return np.concatenate([a.ravel() for a in self.weights + self.biases])


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 40
    dropout: float = 0.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    grad_clip: float = 0.1
    hidden_dim: int = 256
    num_layers: int = 6
    input_layout: str = "keypoints"  # or "keypoints+class"
    loss_points: int = 128  # model points used in the rotation training loss
    depth_scale: float = 1.0  # meters per unit of the normalized depth output
    lr_schedule: str = "cosine"  # or "constant"

    def __post_init__(self):
        if self.learning_rate <= 0 or not (0.0 <= self.dropout < 1.0):
            raise ValueError("invalid training configuration")
        if self.input_layout not in ("keypoints", "keypoints+class"):
            raise ValueError(f"unknown input layout {self.input_layout!r}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")


@dataclass
class Sample:
    """One training example: input vector plus pose supervision."""

    input: np.ndarray
    rotation: np.ndarray
    centroid: np.ndarray  # (cx, cy) normalized by image size
    depth: float
    class_id: int = 0
    symmetric: bool = False


def init_mlp(sizes, rng):
    """He fan-in initialization for a ReLU stack."""
    weights, biases = [], []
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(scale=np.sqrt(2.0 / d_in), size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return MlpParams(weights, biases)


def mlp_forward(params, x, dropout=0.0, train=False, rng=None):
    """Affine+ReLU stack with a linear final layer.

    Inverted dropout (scale 1/(1-p)) on hidden activations in train mode;
    eval mode is deterministic.  Accepts (d,) or (batch, d) inputs.
    Returns (output, cache) with the cache required by mlp_backward.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != params.weights[0].shape[0]:
        raise DimensionMismatch(
            f"input dim {a.shape[1]} != first layer dim {params.weights[0].shape[0]}"
        )
    cache = {"params_id": id(params), "inputs": [a], "masks": [], "dropout": dropout}
    n_layers = len(params.weights)
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ W + b
        if i < n_layers - 1:
            a = np.maximum(a, 0.0)
            if train and dropout > 0.0:
                mask = (rng.random(a.shape) >= dropout) / (1.0 - dropout)
                a = a * mask
                cache["masks"].append(mask)
            else:
                cache["masks"].append(None)
        cache["inputs"].append(a)
    out = a[0] if single else a
    cache["single"] = single
    return out, cache


def mlp_backward(params, cache, output_grad):
    """Exact reverse-mode gradients for mlp_forward.

    Returns (MlpParams of gradients, gradient w.r.t. the input).
    """
    if cache["params_id"] != id(params):
        raise StaleCache("cache does not belong to these parameters")
    g = np.asarray(output_grad, dtype=float)
    if cache["single"]:
        g = g[None, :]
    gw = [None] * len(params.weights)
    gb = [None] * len(params.biases)
    for i in range(len(params.weights) - 1, -1, -1):
        a_in = cache["inputs"][i]
        gw[i] = a_in.T @ g
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
        if i > 0:
            mask = cache["masks"][i - 1]
            if mask is not None:
                g = g * mask
            # stored activation is post-dropout; it is positive exactly where
            # the pre-dropout ReLU fired and the unit survived
            g = np.where(cache["inputs"][i] > 0.0, g, 0.0)
    grad_input = g[0] if cache["single"] else g
    return MlpParams(gw, gb), grad_input


class AdamW:
    """Adam with decoupled weight decay over an MlpParams instance."""

    def __init__(self, params, cfg):
        self.cfg = cfg
        self.step_count = 0
        self.m = [np.zeros_like(a) for a in params.weights + params.biases]
        self.v = [np.zeros_like(a) for a in params.weights + params.biases]

    def step(self, params, grads, lr=None):
        cfg = self.cfg
        if lr is None:
            lr = cfg.learning_rate
        self.step_count += 1
        t = self.step_count
        tensors = params.weights + params.biases
        gs = grads.weights + grads.biases
        # global gradient-norm clipping
        norm = np.sqrt(sum(float((g * g).sum()) for g in gs))
        scale = cfg.grad_clip / norm if norm > cfg.grad_clip else 1.0
        for i, (p, g) in enumerate(zip(tensors, gs)):
            g = g * scale
            self.m[i] = cfg.beta1 * self.m[i] + (1 - cfg.beta1) * g
            self.v[i] = cfg.beta2 * self.v[i] + (1 - cfg.beta2) * g * g
            m_hat = self.m[i] / (1 - cfg.beta1**t)
            v_hat = self.v[i] / (1 - cfg.beta2**t)
            p -= lr * (
                m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p
            )


def _epoch_lr(cfg, epoch):
    """Per-epoch learning rate; cosine annealing decays to 1% of the base."""
    if cfg.lr_schedule == "constant" or cfg.epochs <= 1:
        return cfg.learning_rate
    frac = epoch / (cfg.epochs - 1)
    return cfg.learning_rate * (0.01 + 0.99 * 0.5 * (1.0 + np.cos(np.pi * frac)))


def rotest_predict(params, kps2d, extras=None):
    """Decode the rotation head output into a rotation matrix."""
    x = _assemble_input(kps2d, extras)
    out, _ = mlp_forward(params, x)
    return rot_from_6d(out)


def _assemble_input(kps2d, extras=None):
    x = np.asarray(kps2d, dtype=float).ravel()
    if extras is not None:
        x = np.concatenate([x, np.asarray(extras, dtype=float).ravel()])
    return x


def translation_predict(params_t, kps2d, cam, image_size, depth_scale=1.0,
                        extras=None):
    """Regress (centroid, depth) and complete the translation.

    Returns (translation, clamped_flag); a non-positive depth output is
    clamped to 1 mm and flagged rather than raised.
    """
    out, _ = mlp_forward(params_t, _assemble_input(kps2d, extras))
    w, h = image_size
    cx, cy = out[0] * w, out[1] * h
    tz = out[2] * depth_scale
    clamped = tz <= 0
    if clamped:
        tz = 1e-3
    return recover_translation(cx, cy, tz, cam), bool(clamped)


def _epoch_indices(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _rotation_batch_loss(params, batch, model_points, cfg, rng, train=True):
    """Mean rotation loss over a batch; returns (loss, grads or None)."""
    inputs = np.stack([s.input for s in batch])
    out, cache = mlp_forward(
        params, inputs, dropout=cfg.dropout if train else 0.0, train=train, rng=rng
    )
    total = 0.0
    grad_out = np.zeros_like(out)
    for i, s in enumerate(batch):
        R_pred = rot_from_6d(out[i])
        lv = rotation_loss(
            s.rotation, R_pred, model_points[s.class_id], symmetric=s.symmetric
        )
        total += lv.value
        if train:
            grad_out[i] = rot_from_6d_backward(out[i], lv.gradient.reshape(3, 3))
    loss = total / len(batch)
    if not train:
        return loss, None
    grads, _ = mlp_backward(params, cache, grad_out / len(batch))
    return loss, grads


def train_rotest(dataset, cfg, model_points, val_dataset=None):
    """Minibatch AdamW training of the rotation head.

    model_points maps class id -> (n, 3) points used by the point-matching
    rotation loss.  Deterministic given (dataset, cfg.seed); single-threaded.
    Returns (params, curve) with per-epoch train/val losses.
    """
    rng = np.random.default_rng(cfg.seed)
    in_dim = len(dataset[0].input)
    sizes = [in_dim] + [cfg.hidden_dim] * (cfg.num_layers - 1) + [6]
    params = init_mlp(sizes, rng)
    opt = AdamW(params, cfg)
    curve = {"train": [], "val": []}
    val = val_dataset if val_dataset is not None else []
    for epoch in range(cfg.epochs):
        lr = _epoch_lr(cfg, epoch)
        epoch_loss = 0.0
        n_batches = 0
        for idx in _epoch_indices(len(dataset), cfg.batch_size, rng):
            batch = [dataset[i] for i in idx]
            loss, grads = _rotation_batch_loss(params, batch, model_points, cfg, rng)
            opt.step(params, grads, lr=lr)
            epoch_loss += loss
            n_batches += 1
        curve["train"].append(epoch_loss / max(n_batches, 1))
        if val:
            vloss, _ = _rotation_batch_loss(
                params, val, model_points, cfg, rng, train=False
            )
            curve["val"].append(vloss)
            if not np.isfinite(vloss):
                raise Divergence("validation loss diverged", curve=curve)
        if not np.isfinite(curve["train"][-1]):
            raise Divergence("training loss diverged", curve=curve)
    return params, curve


def train_translation(dataset, cfg, cam, image_size, val_dataset=None):
    """Minibatch AdamW training of the translation head (l1 on the full t).

    The head outputs normalized (cx, cy, tz); the loss is taken on the
    recovered metric translation, so the pinhole inverse is part of the
    differentiated pipeline.
    """
    rng = np.random.default_rng(cfg.seed)
    in_dim = len(dataset[0].input)
    sizes = [in_dim] + [cfg.hidden_dim] * (cfg.num_layers - 1) + [3]
    params = init_mlp(sizes, rng)
    # start the depth unit at the mean scene depth; a near-zero start sits in
    # the clamped region where the l1 gradient barely moves it
    params.biases[-1][2] = float(
        np.mean([s.depth for s in dataset]) / cfg.depth_scale
    )
    opt = AdamW(params, cfg)
    w, h = image_size
    curve = {"train": [], "val": []}

    def batch_loss(batch, train=True):
        inputs = np.stack([s.input for s in batch])
        out, cache = mlp_forward(
            params, inputs, dropout=cfg.dropout if train else 0.0, train=train, rng=rng
        )
        total = 0.0
        grad_out = np.zeros_like(out)
        for i, s in enumerate(batch):
            cx, cy = out[i, 0] * w, out[i, 1] * h
            tz = max(out[i, 2] * cfg.depth_scale, 1e-3)
            t_pred = recover_translation(cx, cy, tz, cam)
            t_gt = recover_translation(
                s.centroid[0] * w, s.centroid[1] * h, s.depth, cam
            )
            diff = t_pred - t_gt
            total += np.abs(diff).sum()
            if train:
                sg = np.sign(diff)
                # t = ((cx-px) tz/fx, (cy-py) tz/fy, tz)
                d_cx = sg[0] * tz / cam.fx
                d_cy = sg[1] * tz / cam.fy
                d_tz = (
                    sg[0] * (cx - cam.px) / cam.fx
                    + sg[1] * (cy - cam.py) / cam.fy
                    + sg[2]
                )
                if out[i, 2] * cfg.depth_scale <= 1e-3 and d_tz > 0.0:
                    # clamped: pass the gradient through only when it pushes
                    # the depth back up, so the unit cannot die at the floor
                    d_tz = 0.0
                grad_out[i] = [d_cx * w, d_cy * h, d_tz * cfg.depth_scale]
        loss = total / len(batch)
        if not train:
            return loss, None
        grads, _ = mlp_backward(params, cache, grad_out / len(batch))
        return loss, grads

    val = val_dataset if val_dataset is not None else []
    for epoch in range(cfg.epochs):
        lr = _epoch_lr(cfg, epoch)
        epoch_loss = 0.0
        n_batches = 0
        for idx in _epoch_indices(len(dataset), cfg.batch_size, rng):
            loss, grads = batch_loss([dataset[i] for i in idx])
            opt.step(params, grads, lr=lr)
            epoch_loss += loss
            n_batches += 1
        curve["train"].append(epoch_loss / max(n_batches, 1))
        if val:
            vloss, _ = batch_loss(val, train=False)
            curve["val"].append(vloss)
            if not np.isfinite(vloss):
                raise Divergence("validation loss diverged", curve=curve)
    return params, curve


def save_checkpoint(path, params, cfg, extra=None):
    """Versioned JSON checkpoint: layer sizes, row-major weights, config echo."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "sizes": params.sizes,
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "config": {
            k: getattr(cfg, k)
            for k in (
                "learning_rate", "batch_size", "epochs", "dropout", "seed",
                "weight_decay", "grad_clip", "hidden_dim", "num_layers",
                "input_layout", "loss_points", "depth_scale",
            )
        },
        "extra": extra or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Load and validate a checkpoint; returns (MlpParams, config dict, extra)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DimensionMismatch(f"unsupported checkpoint version {doc.get('version')}")
    weights = [np.asarray(w, dtype=float) for w in doc["weights"]]
    biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
    params = MlpParams(weights, biases)
    if params.sizes != doc["sizes"]:
        raise DimensionMismatch("checkpoint layer sizes do not chain")
    for w, b in zip(weights, biases):
        if w.shape[1] != b.shape[0]:
            raise DimensionMismatch("weight/bias shape mismatch in checkpoint")
    return params, doc["config"], doc.get("extra", {})

"""Scaled dot-product attention, multi-head combination, sinusoidal encodings.

These are exercised as verified math (shape and invariant checks), not as a
trained model; there is no parameter learning here.
"""

import numpy as np

from .errors import OddDimension, ShapeMismatch


def positional_encoding(n_positions, d):
    """Sine/cosine positional encodings, (n_positions, d).

    Even indices 2k hold sin(pos / 10000^(2k/d)); odd indices 2k+1 hold
    cos(pos / 10000^((2k+1)/d)).
    """
    if d % 2 != 0:
        raise OddDimension("embedding dimension must be even")
    pos = np.arange(n_positions)[:, None].astype(float)
    idx = np.arange(d)[None, :].astype(float)
    angle = pos / np.power(10000.0, idx / d)
    pe = np.empty((n_positions, d))
    pe[:, 0::2] = np.sin(angle[:, 0::2])
    pe[:, 1::2] = np.cos(angle[:, 1::2])
    return pe


def softmax(x, axis=-1):
    """Row-stable softmax (max subtraction)."""
    x = np.asarray(x, dtype=float)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def scaled_attention(Q, K, V, d, h):
    """softmax(Q K^T / sqrt(d/h)) V with the paper-form scaling divisor."""
    Q, K, V = (np.asarray(a, dtype=float) for a in (Q, K, V))
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise ShapeMismatch("Q, K, V must be 2D token matrices")
    if Q.shape[1] != K.shape[1] or K.shape[0] != V.shape[0]:
        raise ShapeMismatch(
            f"incompatible attention shapes {Q.shape}, {K.shape}, {V.shape}"
        )
    weights = softmax(Q @ K.T / np.sqrt(d / h), axis=-1)
    return weights @ V


def attention_weights(Q, K, d, h):
    """The row-stochastic attention matrix alone (for invariant checks)."""
    Q, K = np.asarray(Q, dtype=float), np.asarray(K, dtype=float)
    return softmax(Q @ K.T / np.sqrt(d / h), axis=-1)


def init_mha_params(d, h, rng):
    """Per-head projection matrices plus the output projection."""
    if d % h != 0:
        raise ShapeMismatch(f"embedding dim {d} not divisible by {h} heads")
    dh = d // h
    scale = 1.0 / np.sqrt(d)
    return {
        "Wq": [rng.normal(scale=scale, size=(d, dh)) for _ in range(h)],
        "Wk": [rng.normal(scale=scale, size=(d, dh)) for _ in range(h)],
        "Wv": [rng.normal(scale=scale, size=(d, dh)) for _ in range(h)],
        "Wo": rng.normal(scale=scale, size=(d, d)),
    }


def multi_head_attention(x_q, x_kv, params, h):
    """Concatenated per-head attention followed by the output projection.

    Self-attention when x_q is x_kv; cross-attention otherwise (queries attend
    to the key/value sequence).
    """
    x_q, x_kv = np.asarray(x_q, dtype=float), np.asarray(x_kv, dtype=float)
    d = x_q.shape[1]
    if x_kv.shape[1] != d:
        raise ShapeMismatch("query and key/value embeddings differ in dimension")
    if len(params["Wq"]) != h:
        raise ShapeMismatch(f"params built for {len(params['Wq'])} heads, got h={h}")
    heads = []
    for i in range(h):
        Q = x_q @ params["Wq"][i]
        K = x_kv @ params["Wk"][i]
        V = x_kv @ params["Wv"][i]
        heads.append(scaled_attention(Q, K, V, d, h))
    return np.concatenate(heads, axis=1) @ params["Wo"]

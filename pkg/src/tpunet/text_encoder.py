"""Trainable text encoder mapping token ids to temporal features F_t.

One embedding+position layer followed by a single masked self-attention
block and a small feed-forward, both with residual connections. Stands
in for a pretrained language encoder at desk scale: the prompt language
is a closed template, so this capacity is enough.
"""

import math
from typing import Dict

import numpy as np

from . import tensor as T
from .prompt import PAD_ID
from .tensor import Tensor


class TextEncoderError(ValueError):
    pass


def make_params(rng: np.random.Generator, V: int, D: int, L: int) -> Dict[str, Tensor]:
    def w(shape, fan_in):
        return Tensor(rng.normal(0.0, math.sqrt(2.0 / fan_in), shape), requires_grad=True)

    # embedding scale 1/sqrt(D): there is no normalization layer here, so
    # token features must enter the He-initialized blocks near unit scale
    # or the text branch starts orders of magnitude quieter than the image
    emb = 1.0 / math.sqrt(D)
    return {
        "embed": Tensor(rng.normal(0.0, emb, (V, D)), requires_grad=True),
        "pos": Tensor(rng.normal(0.0, emb, (L, D)), requires_grad=True),
        "wq": w((D, D), D),
        "wk": w((D, D), D),
        "wv": w((D, D), D),
        "wo": w((D, D), D),
        "ff1": w((D, 2 * D), D),
        "b1": Tensor(np.zeros(2 * D), requires_grad=True),
        "ff2": w((2 * D, D), 2 * D),
        "b2": Tensor(np.zeros(D), requires_grad=True),
    }


def pad_mask_of(ids: np.ndarray) -> np.ndarray:
    """True at real-token positions, False at PAD."""
    return np.asarray(ids) != PAD_ID


def encode_text(ids: np.ndarray, params: Dict[str, Tensor]) -> Tensor:
    """Token ids [B, L] -> features [B, L, D].

    PAD keys get exactly zero attention weight. A fully padded sample
    would leave the softmax with nothing to normalize over, so it falls
    back to attending position 0 only.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise TextEncoderError(f"ids must be [B, L], got shape {ids.shape}")
    V = params["embed"].data.shape[0]
    if ids.min() < 0 or ids.max() >= V:
        raise TextEncoderError(f"token id out of range [0, {V})")

    D = params["embed"].data.shape[1]
    x = T.embed_lookup(params["embed"], ids) + params["pos"]

    keep = pad_mask_of(ids)
    empty = ~keep.any(axis=1)
    if empty.any():
        keep = keep.copy()
        keep[empty, 0] = True
    mask = keep[:, None, :]  # every query sees only non-PAD keys

    q = T.matmul(x, params["wq"])
    k = T.matmul(x, params["wk"])
    v = T.matmul(x, params["wv"])
    scores = T.matmul(q, T.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(D))
    attn = T.softmax(scores, axis=-1, mask=mask)
    x = x + T.matmul(T.matmul(attn, v), params["wo"])

    h = T.relu(T.matmul(x, params["ff1"]) + params["b1"])
    x = x + (T.matmul(h, params["ff2"]) + params["b2"])
    return x


def pool_text(F_t: Tensor, pad_mask: np.ndarray) -> Tensor:
    """Mean over non-PAD positions, [B, L, D] -> [B, D]."""
    pad_mask = np.asarray(pad_mask, dtype=bool)
    counts = pad_mask.sum(axis=1)
    if (counts == 0).any():
        raise TextEncoderError("cannot pool an all-PAD sample")
    weights = pad_mask[:, :, None] / counts[:, None, None]
    return T.reduce_sum(F_t * Tensor(weights), axis=1)

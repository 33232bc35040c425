"""Bidirectional contrastive alignment of pooled image and text features.

Matched (image, prompt) pairs sit on the diagonal of the cosine
similarity matrix; the loss is InfoNCE in both directions, weighted by
lambda. tau is a fixed softmax temperature.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DomainError, Tensor

EPS_NORM = 1e-8


@dataclass
class AlignmentBatch:
    image_vecs: Tensor    # [Nb, D]
    text_vecs: Tensor     # [Nb, D]
    tau: float = 0.1
    lam: float = 0.5

    def __post_init__(self):
        if self.tau <= 0:
            raise DomainError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.lam <= 1.0:
            raise DomainError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.image_vecs.data.shape != self.text_vecs.data.shape:
            raise T.ShapeError(
                f"image {self.image_vecs.data.shape} vs text {self.text_vecs.data.shape}"
            )


def pool_image(F_m: Tensor) -> Tensor:
    """Spatial mean per channel, [B, C, H', W'] -> [B, C]."""
    return T.reduce_mean(F_m, axis=(2, 3))


def _normalize_rows(x: Tensor) -> Tensor:
    norms = T.sqrt(T.reduce_sum(T.square(x), axis=-1, keepdims=True))
    return x / T.clip(norms, EPS_NORM, np.inf)


def cosine_sim(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of two vectors, with an epsilon floor on norms."""
    u2 = T.reshape(u, (1, -1))
    v2 = T.reshape(v, (1, -1))
    return T.reshape(T.reduce_sum(_normalize_rows(u2) * _normalize_rows(v2), axis=-1), ())


def similarity_matrix(batch: AlignmentBatch) -> Tensor:
    """S[i, k] = cos(image_i, text_k), shape [Nb, Nb]."""
    img = _normalize_rows(batch.image_vecs)
    txt = _normalize_rows(batch.text_vecs)
    return T.matmul(img, T.transpose(txt, (1, 0)))


def _diag_nll(scores: Tensor, axis: int) -> Tensor:
    """Mean over pairs of -log softmax(scores, axis) on the diagonal."""
    n = scores.data.shape[0]
    probs = T.softmax(scores, axis=axis)
    eye = Tensor(np.eye(n))
    matched = T.reduce_sum(probs * eye, axis=axis)
    return T.reduce_mean(-T.log(matched))


def loss_i2t(batch: AlignmentBatch) -> Tensor:
    """Image-to-text InfoNCE: each image must pick out its own prompt."""
    return _diag_nll(similarity_matrix(batch) / batch.tau, axis=1)


def loss_t2i(batch: AlignmentBatch) -> Tensor:
    """Text-to-image InfoNCE: each prompt must pick out its own image."""
    return _diag_nll(similarity_matrix(batch) / batch.tau, axis=0)


def contrastive_loss(batch: AlignmentBatch) -> Tensor:
    lam = batch.lam
    if lam == 1.0:
        return loss_i2t(batch)
    if lam == 0.0:
        return loss_t2i(batch)
    return loss_i2t(batch) * lam + loss_t2i(batch) * (1.0 - lam)

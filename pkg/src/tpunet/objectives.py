"""Segmentation losses and overlap metrics.

Losses operate on probabilities (sigmoid applied upstream) and stay
differentiable; dice/jaccard are evaluation metrics on binarized masks.
"""

from typing import Union

import numpy as np

from . import tensor as T
from .tensor import Tensor

BCE_EPS = 1e-7


def bce(pred: Tensor, target: Union[Tensor, np.ndarray]) -> Tensor:
    """Mean binary cross-entropy; predictions clamped to [eps, 1-eps]."""
    if not isinstance(target, Tensor):
        target = Tensor(target)
    p = T.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    return T.reduce_mean(-(target * T.log(p) + (1.0 - target) * T.log(1.0 - p)))


def tversky(pred: Tensor, target: Union[Tensor, np.ndarray],
            alpha: float = 0.5, beta: float = 0.5, smooth: float = 1.0) -> Tensor:
    """Tversky loss with soft counts, averaged over batch and classes.

    alpha weights false positives, beta false negatives; alpha = beta =
    0.5 reduces to the soft Dice loss.
    """
    if alpha < 0 or beta < 0:
        raise T.DomainError(f"alpha and beta must be >= 0, got {alpha}, {beta}")
    if not isinstance(target, Tensor):
        target = Tensor(target)
    axes = tuple(range(2, pred.data.ndim))  # reduce spatial dims per (sample, class)
    tp = T.reduce_sum(pred * target, axis=axes)
    fp = T.reduce_sum(pred * (1.0 - target), axis=axes)
    fn = T.reduce_sum((1.0 - pred) * target, axis=axes)
    score = (tp + smooth) / (tp + fp * alpha + fn * beta + smooth)
    return T.reduce_mean(1.0 - score)


def seg_loss(pred: Tensor, target: Union[Tensor, np.ndarray],
             alpha: float = 0.5, beta: float = 0.5) -> Tensor:
    """Average of BCE and Tversky."""
    return (bce(pred, target) + tversky(pred, target, alpha, beta)) * 0.5


def binarize(prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(prob) >= threshold).astype(np.float64)


def _overlap_counts(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise T.ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    inter = np.logical_and(a, b).sum()
    return inter, a.sum(), b.sum()


def dice(a, b) -> float:
    """2|A∩B| / (|A|+|B|); both masks empty scores 1.0."""
    inter, na, nb = _overlap_counts(a, b)
    if na + nb == 0:
        return 1.0
    return float(2.0 * inter / (na + nb))


def jaccard(a, b) -> float:
    """|A∩B| / |A∪B|; both masks empty scores 1.0."""
    inter, na, nb = _overlap_counts(a, b)
    union = na + nb - inter
    if union == 0:
        return 1.0
    return float(inter / union)

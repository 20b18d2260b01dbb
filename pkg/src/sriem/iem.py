"""Importance extraction: per-item weights from average masked pairwise affinity.

Shapes use a trailing (t, d) layout with optional leading batch axes, so the
same functions serve a single session (t x d) and a padded batch (B x t x d).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ndmath as nd
from .errors import DimensionError
from .ndmath import Tensor

SCALE_MODES = ("sqrt-d", "sqrt-l")


@dataclass
class IEMParams:
    W_q: Tensor  # d x l
    W_k: Tensor  # d x l

    def __post_init__(self):
        if self.W_q.shape != self.W_k.shape or self.W_q.ndim != 2:
            raise DimensionError(f"W_q {self.W_q.shape} and W_k {self.W_k.shape} must both be d x l")

    @property
    def d(self) -> int:
        return self.W_q.shape[0]

    @property
    def l(self) -> int:
        return self.W_q.shape[1]


@dataclass
class ImportanceResult:
    affinity: Tensor    # C, (..., t, t)
    raw_scores: Tensor  # alpha, (..., t)
    weights: Tensor     # beta, (..., t)


def _full_mask(x: Tensor) -> np.ndarray:
    return np.ones(x.shape[:-1], dtype=bool)


def project_qk(embeddings: Tensor, params: IEMParams) -> tuple[Tensor, Tensor]:
    """Q = sigmoid(E W_q), K = sigmoid(E W_k) with E laid out t x d."""
    if embeddings.shape[-1] != params.d:
        raise DimensionError(f"embeddings {embeddings.shape} do not match W_q {params.W_q.shape}")
    return nd.sigmoid(embeddings @ params.W_q), nd.sigmoid(embeddings @ params.W_k)


def affinity(Q: Tensor, K: Tensor, d: int, scale_by: str = "sqrt-d") -> Tensor:
    """C = sigmoid(Q K^T) / sqrt(d); sigmoid first, then the scaling."""
    if Q.shape != K.shape:
        raise DimensionError(f"Q {Q.shape} and K {K.shape} differ")
    if scale_by == "sqrt-d":
        denom = math.sqrt(d)
    elif scale_by == "sqrt-l":
        denom = math.sqrt(Q.shape[-1])
    else:
        raise ValueError(f"scale_by must be one of {SCALE_MODES}, got {scale_by!r}")
    return nd.sigmoid(Q @ nd.transpose(K)) / denom


def pair_mask(mask: np.ndarray) -> np.ndarray:
    """Valid (i, j) pairs: both positions real and i != j."""
    mask = np.asarray(mask, dtype=bool)
    t = mask.shape[-1]
    return mask[..., :, None] & mask[..., None, :] & ~np.eye(t, dtype=bool)


def importance_scores(C: Tensor, mask=None) -> Tensor:
    """alpha_i = (1/t) * sum_{j valid, j != i} C_ij, with t the number of valid positions."""
    if C.ndim < 2 or C.shape[-1] != C.shape[-2]:
        raise DimensionError(f"affinity must be square, got {C.shape}")
    mask = np.ones(C.shape[:-1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    t_valid = np.maximum(mask.sum(axis=-1, keepdims=True), 1)
    masked = nd.mul(C, pair_mask(mask).astype(np.float64))
    return nd.mul(nd.tsum(masked, axis=-1), 1.0 / t_valid)


def normalize_importance(alpha: Tensor, mask=None) -> Tensor:
    """beta = masked softmax(alpha); pads get exactly 0."""
    return nd.softmax_row(alpha, mask)


def extract_importance(embeddings: Tensor, params: IEMParams, mask=None,
                       scale_by: str = "sqrt-d") -> ImportanceResult:
    mask = _full_mask(embeddings) if mask is None else np.asarray(mask, dtype=bool)
    Q, K = project_qk(embeddings, params)
    C = affinity(Q, K, params.d, scale_by)
    alpha = importance_scores(C, mask)
    return ImportanceResult(C, alpha, normalize_importance(alpha, mask))

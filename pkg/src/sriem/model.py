"""The session recommender: embeddings, attention variant, preference fusion, scoring, loss.

Three attention variants share one forward signature:

``iem``
    importance extraction (average masked affinity, see :mod:`sriem.iem`).
``sat``
    scaled dot-product self-attention with average pooling of the attended
    vectors.
``stamp``
    additive attention queried by the session mean and the last item.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ndmath as nd
from .dataset import Batch, Vocabulary
from .errors import ContractError, DimensionError
from .iem import IEMParams, ImportanceResult, extract_importance
from .ndmath import Tensor

VARIANTS = ("iem", "sat", "stamp")
LOSS_MODES = ("bce-sum", "categorical-ce")
EPS = 1e-12


@dataclass
class ModelConfig:
    n_items: int
    d: int = 200
    l: int = 100
    variant: str = "iem"
    loss_mode: str = "bce-sum"
    scale_by: str = "sqrt-d"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.n_items < 1 or self.d < 1 or self.l < 1:
            raise ValueError("n_items, d and l must be positive")


def _variant_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, l = cfg.d, cfg.l
    shapes = {"embeddings": (cfg.n_items + 1, d), "W_0": (d, 2 * d)}
    if cfg.variant == "iem":
        shapes.update(W_q=(d, l), W_k=(d, l))
    elif cfg.variant == "sat":
        shapes.update(sat_W_q=(d, l), sat_W_k=(d, l), sat_W_v=(d, l), sat_W_o=(l, d))
    else:
        shapes.update(stamp_W_1=(d, l), stamp_W_2=(d, l), stamp_W_3=(d, l),
                      stamp_w=(l, 1), stamp_b=(l,))
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)
    vocab: Vocabulary | None = None

    @property
    def embeddings(self) -> Tensor:
        return self.tensors["embeddings"]

    @property
    def W_0(self) -> Tensor:
        return self.tensors["W_0"]

    @property
    def iem(self) -> IEMParams:
        return IEMParams(self.tensors["W_q"], self.tensors["W_k"])

    def named(self) -> list[tuple[str, Tensor]]:
        return list(self.tensors.items())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(t.data.copy(), requires_grad=True, name=k)
                                         for k, t in self.tensors.items()}, self.vocab)


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) for every matrix; padding row and STAMP bias start at zero."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(config.d)
    tensors = {}
    for name, shape in _variant_shapes(config).items():
        data = np.zeros(shape) if name == "stamp_b" else rng.uniform(-bound, bound, size=shape)
        if name == "embeddings":
            data[0] = 0.0
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    return ModelParams(config, tensors)


def check_shapes(params: ModelParams) -> None:
    expected = _variant_shapes(params.config)
    if set(expected) != set(params.tensors):
        raise DimensionError(f"parameter names {sorted(params.tensors)} != {sorted(expected)}")
    for name, shape in expected.items():
        if params.tensors[name].shape != shape:
            raise DimensionError(f"{name}: shape {params.tensors[name].shape}, expected {shape}")


# building blocks ---------------------------------------------------------------

def long_term_preference(beta: Tensor, embeddings: Tensor) -> Tensor:
    """z_l = sum_i beta_i e_i; beta (..., t), embeddings (..., t, d) -> (..., d)."""
    beta = nd.as_tensor(beta)
    t, d = embeddings.shape[-2:]
    lead = beta.shape[:-1]
    z = nd.reshape(beta, lead + (1, t)) @ embeddings
    return nd.reshape(z, lead + (d,))


def last_item(embeddings: Tensor, mask) -> Tensor:
    """Embedding of the last valid position (valid positions are left-aligned)."""
    mask = np.asarray(mask, dtype=bool)
    lengths = mask.sum(axis=-1)
    if np.any(lengths < 1):
        raise ContractError("session has no items")
    if embeddings.ndim == 2:
        return embeddings[int(lengths) - 1]
    rows = np.arange(embeddings.shape[0])
    return embeddings[rows, lengths - 1]


def fuse(z_l: Tensor, embeddings: Tensor, mask, W_0: Tensor) -> tuple[Tensor, Tensor]:
    """z_s = last item embedding; z_h = W_0 [z_l; z_s].  Returns (z_h, z_s)."""
    z_s = last_item(embeddings, mask)
    z_h = nd.concat([z_l, z_s], axis=-1) @ nd.transpose(W_0)
    return z_h, z_s


def score_candidates(z_h: Tensor, table: Tensor) -> tuple[Tensor, Tensor]:
    """Dot-product scores against every real item (row 0 excluded) and their softmax."""
    candidates = table[1:]
    scores = z_h @ nd.transpose(candidates)
    return scores, nd.softmax_row(scores)


def loss(probs: Tensor, targets, mode: str = "bce-sum", eps: float = EPS) -> Tensor:
    """Mean over rows of the per-row loss; ``targets`` are item indices in [1, n].

    ``bce-sum``: -sum_i [y_i log p_i + (1 - y_i) log(1 - p_i)] over all n items.
    ``categorical-ce``: -log p_target.
    """
    n = probs.shape[-1]
    targets = np.asarray(targets, dtype=np.int64)
    if np.any(targets < 1) or np.any(targets > n):
        raise ContractError(f"target outside [1, {n}]: {targets}")
    onehot = np.zeros(probs.shape)
    if probs.ndim == 1:
        onehot[int(targets) - 1] = 1.0
    else:
        onehot[np.arange(probs.shape[0]), targets - 1] = 1.0
    p = nd.clip(probs, eps, 1.0 - eps)
    ll = nd.mul(nd.log(p), onehot)
    if mode == "bce-sum":
        ll = ll + nd.mul(nd.log(1.0 - p), 1.0 - onehot)
    elif mode != "categorical-ce":
        raise ValueError(f"loss mode must be one of {LOSS_MODES}, got {mode!r}")
    per_row = -nd.tsum(ll, axis=-1)
    return nd.mean(per_row)


# attention variants --------------------------------------------------------------

def variant_iem(embeddings: Tensor, mask, params: ModelParams) -> tuple[Tensor, ImportanceResult]:
    imp = extract_importance(embeddings, params.iem, mask, params.config.scale_by)
    return long_term_preference(imp.weights, embeddings), imp


def _self_attention_mask(mask: np.ndarray) -> np.ndarray:
    t = mask.shape[-1]
    cols = np.broadcast_to(mask[..., None, :], mask.shape + (t,))
    off_diag = cols & ~np.eye(t, dtype=bool)
    # a lone item can only attend to itself
    lonely = ~off_diag.any(axis=-1, keepdims=True)
    return np.where(lonely, cols, off_diag)


def variant_sat(embeddings: Tensor, mask, params: ModelParams) -> tuple[Tensor, ImportanceResult]:
    """softmax(Q K^T / sqrt(l)) V W_o with the diagonal masked, average-pooled over valid rows.

    The reported weights are the pooled attention each item receives, so that
    z_l = sum_j weights_j * (e_j W_v W_o).
    """
    mask = np.asarray(mask, dtype=bool)
    p = params.tensors
    Q, K, V = embeddings @ p["sat_W_q"], embeddings @ p["sat_W_k"], embeddings @ p["sat_W_v"]
    scores = (Q @ nd.transpose(K)) / math.sqrt(params.config.l)
    attn = nd.softmax_row(scores, _self_attention_mask(mask))
    attended = (attn @ V) @ p["sat_W_o"]
    pool = mask / mask.sum(axis=-1, keepdims=True)
    z_l = long_term_preference(pool, attended)
    received = (pool[..., :, None] * attn.data).sum(axis=-2)
    return z_l, ImportanceResult(Tensor(attn.data), Tensor(received), Tensor(received))


def variant_stamp(embeddings: Tensor, mask, params: ModelParams) -> tuple[Tensor, ImportanceResult]:
    """beta_i = softmax_i(w^T sigmoid(W_1 e_i + W_2 q_mean + W_3 e_t + b)) over valid positions."""
    mask = np.asarray(mask, dtype=bool)
    p = params.tensors
    lead = embeddings.shape[:-2]
    l = params.config.l
    q_mean = long_term_preference(mask / mask.sum(axis=-1, keepdims=True), embeddings)
    e_t = last_item(embeddings, mask)
    query = q_mean @ p["stamp_W_2"] + e_t @ p["stamp_W_3"]
    hidden = nd.sigmoid(embeddings @ p["stamp_W_1"] + nd.reshape(query, lead + (1, l)) + p["stamp_b"])
    raw = nd.reshape(hidden @ p["stamp_w"], lead + (embeddings.shape[-2],))
    beta = nd.softmax_row(raw, mask)
    return long_term_preference(beta, embeddings), ImportanceResult(Tensor(np.zeros(0)), raw, beta)


_VARIANT_FNS = {"iem": variant_iem, "sat": variant_sat, "stamp": variant_stamp}


# full model --------------------------------------------------------------------

@dataclass
class ForwardResult:
    """Batched outputs; row b of every field belongs to batch row b."""

    z_l: Tensor
    z_s: Tensor
    z_h: Tensor
    scores: Tensor
    probs: Tensor
    importance: ImportanceResult
    loss: Tensor | None = None

    def row(self, b: int) -> dict[str, np.ndarray]:
        return {
            "z_l": self.z_l.data[b], "z_s": self.z_s.data[b], "z_h": self.z_h.data[b],
            "scores": self.scores.data[b], "probs": self.probs.data[b],
            "weights": self.importance.weights.data[b],
        }


def encode(batch: Batch, params: ModelParams) -> tuple[Tensor, Tensor, Tensor, ImportanceResult]:
    """Session representation only: returns (z_h, z_l, z_s, importance)."""
    emb = nd.embedding_lookup(params.embeddings, batch.items)
    z_l, imp = _VARIANT_FNS[params.config.variant](emb, batch.mask, params)
    z_h, z_s = fuse(z_l, emb, batch.mask, params.W_0)
    return z_h, z_l, z_s, imp


def forward(batch: Batch, params: ModelParams, with_loss: bool = True) -> ForwardResult:
    z_h, z_l, z_s, imp = encode(batch, params)
    scores, probs = score_candidates(z_h, params.embeddings)
    out = ForwardResult(z_l, z_s, z_h, scores, probs, imp)
    if with_loss:
        out.loss = loss(probs, batch.targets, params.config.loss_mode)
    return out

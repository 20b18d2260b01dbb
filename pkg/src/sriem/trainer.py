"""Adam with step decay, coupled L2, validation-based model selection and early stopping."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from typing import Callable

import numpy as np

from . import ndmath as nd
from .dataset import SessionCorpus, batchify, prefix_split
from .errors import NonFiniteError, TrainingError
from .evaluation import evaluate
from .model import ModelConfig, ModelParams, forward, init_params

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    decay_factor: float = 0.1
    decay_every: int = 3
    batch_size: int = 128
    l2: float = 1e-5
    epochs: int = 30
    patience: int = 3
    seed: int = 0
    max_len: int = 10
    valid_fraction: float = 0.1
    eval_n: int = 20

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        if self.batch_size < 1 or self.decay_every < 1:
            raise ValueError("batch_size and decay_every must be >= 1")


def schedule(epoch: int, config: TrainConfig) -> float:
    """lr0 * decay_factor ** (epoch // decay_every), evaluated in decimal so 1e-3 -> 1e-4 exactly."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    k = epoch // config.decay_every
    return float(Decimal(repr(config.lr0)) * Decimal(repr(config.decay_factor)) ** k)


# optimizer -------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              l2: float = 0.0) -> np.ndarray:
    """One bias-corrected Adam update of ``param`` in place; L2 enters as 2*l2*w in the gradient."""
    g = grad + 2.0 * l2 * param if l2 else grad
    state.step += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * g
    state.v *= beta2
    state.v += (1.0 - beta2) * g * g
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return param


class Adam:
    def __init__(self, params: ModelParams, l2: float = 0.0, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.l2, self.beta1, self.beta2, self.eps = l2, beta1, beta2, eps
        self.state = {k: AdamState(np.zeros_like(t.data), np.zeros_like(t.data))
                      for k, t in params.tensors.items()}

    def step(self, lr: float) -> None:
        for name, t in self.params.tensors.items():
            grad = t.grad if t.grad is not None else np.zeros_like(t.data)
            if not np.all(np.isfinite(grad)):
                raise NonFiniteError(f"non-finite gradient in {name}")
            adam_step(t.data, grad, self.state[name], lr, self.beta1, self.beta2, self.eps, self.l2)


# training loop ---------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_recall: float
    val_mrr: float
    lr: float
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Deterministic content only; wall times live in :meth:`timings`."""
        rows = [{k: v for k, v in asdict(e).items() if k != "wall_time"} for e in self.epochs]
        return {"best_epoch": self.best_epoch, "epochs": rows, "config": self.config}

    def timings(self) -> list[dict]:
        return [{"epoch": e.epoch, "wall_time": e.wall_time} for e in self.epochs]

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "val_recall", "val_mrr", "lr", "best"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.loss), repr(e.val_recall), repr(e.val_mrr), repr(e.lr),
                            int(e.epoch == self.best_epoch)])


def split_validation(sessions: list, fraction: float) -> tuple[list, list]:
    """Hold out the most recent ``fraction`` of (chronologically ordered) sessions."""
    n_valid = math.ceil(fraction * len(sessions)) if fraction > 0 else 0
    n_valid = min(n_valid, max(len(sessions) - 1, 0))
    cut = len(sessions) - n_valid
    return sessions[:cut], sessions[cut:]


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def train(corpus: SessionCorpus, model_config: ModelConfig, config: TrainConfig | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> tuple[ModelParams, TrainReport]:
    """Train from scratch; returns the best-validation-MRR parameters and the report.

    Validation uses the most recent ``valid_fraction`` of training sessions; when
    that slice is empty, selection falls back to the training sessions.
    """
    config = config or TrainConfig()
    train_sessions, valid_sessions = split_validation(corpus.train, config.valid_fraction)
    if not valid_sessions:
        valid_sessions = train_sessions
    pairs = prefix_split(train_sessions)
    if not pairs:
        raise TrainingError("no training pairs")

    params = init_params(model_config, config.seed)
    params.vocab = corpus.vocab
    opt = Adam(params, l2=config.l2)
    report = TrainReport(config={"model": asdict(model_config), "train": asdict(config)})
    best: ModelParams | None = None
    best_mrr = -1.0
    since_best = 0

    for epoch in range(config.epochs):
        start = time.perf_counter()
        lr = schedule(epoch, config)
        total, count = 0.0, 0
        try:
            for batch in batchify(pairs, config.batch_size, config.max_len, _epoch_seed(config.seed, epoch)):
                params.zero_grad()
                with nd.Tape() as tape:
                    out = forward(batch, params)
                    nd.backward(out.loss, tape)
                opt.step(lr)
                total += out.loss.item() * len(batch)
                count += len(batch)
        except NonFiniteError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}", best, report) from exc
        val = evaluate(params, valid_sessions, config.eval_n, config.max_len)
        rec = EpochRecord(epoch, total / count, val.recall_at_n, val.mrr_at_n, lr,
                          time.perf_counter() - start)
        report.epochs.append(rec)
        logger.info("epoch %d loss %.6f val recall@%d %.4f mrr %.4f lr %g", epoch, rec.loss,
                    config.eval_n, rec.val_recall, rec.val_mrr, lr)
        if on_epoch is not None:
            on_epoch(rec)
        if rec.val_mrr > best_mrr:
            best_mrr, best, since_best = rec.val_mrr, params.copy(), 0
            report.best_epoch = epoch
        else:
            since_best += 1
        if since_best >= config.patience:
            break
    return best, report

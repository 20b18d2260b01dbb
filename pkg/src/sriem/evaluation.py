"""Recall@N / MRR@N with a per-session-length breakdown."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .dataset import batchify, prefix_split
from .model import ModelParams, forward


def rank_of_target(scores, target: int) -> int:
    """1-based rank of item ``target`` (scores[target - 1]); ties go to the smaller index."""
    s = np.asarray(scores)
    st = s[target - 1]
    return int(1 + np.count_nonzero(s > st) + np.count_nonzero(s[: target - 1] == st))


def ranks_of_targets(scores: np.ndarray, targets: Sequence[int]) -> np.ndarray:
    """Row-wise :func:`rank_of_target` for a B x n score matrix."""
    scores = np.asarray(scores)
    targets = np.asarray(targets, dtype=np.int64)
    st = scores[np.arange(len(targets)), targets - 1][:, None]
    before = np.arange(scores.shape[1])[None, :] < (targets - 1)[:, None]
    return 1 + (scores > st).sum(axis=1) + ((scores == st) & before).sum(axis=1)


def recall_at_n(ranks, n: int = 20) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        return 0.0
    if np.any(ranks < 1):
        raise ValueError("ranks start at 1")
    return float(np.mean(ranks <= n))


def mrr_at_n(ranks, n: int = 20) -> float:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        return 0.0
    if np.any(ranks < 1):
        raise ValueError("ranks start at 1")
    return float(np.mean(np.where(ranks <= n, 1.0 / ranks, 0.0)))


@dataclass
class EvalReport:
    recall_at_n: float
    mrr_at_n: float
    n_cutoff: int
    example_count: int
    per_length_buckets: dict[int, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["per_length_buckets"] = {str(k): v for k, v in self.per_length_buckets.items()}
        return doc

    def write_json(self, path, extra: dict | None = None) -> None:
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["length", "recall", "mrr", "count"])
            for length, b in sorted(self.per_length_buckets.items()):
                w.writerow([length, repr(b["recall"]), repr(b["mrr"]), b["count"]])
            w.writerow(["all", repr(self.recall_at_n), repr(self.mrr_at_n), self.example_count])


def report_from_ranks(ranks: np.ndarray, lengths: np.ndarray, n: int) -> EvalReport:
    buckets = {}
    for length in np.unique(lengths):
        sel = ranks[lengths == length]
        buckets[int(length)] = {"recall": recall_at_n(sel, n), "mrr": mrr_at_n(sel, n),
                                "count": int(sel.size)}
    return EvalReport(recall_at_n(ranks, n), mrr_at_n(ranks, n), n, int(ranks.size), buckets)


def _score_shard(params: ModelParams, pairs, max_len: int, batch_size: int):
    ranks, lengths = [], []
    for batch in batchify(pairs, batch_size, max_len):
        out = forward(batch, params, with_loss=False)
        ranks.append(ranks_of_targets(out.scores.data, batch.targets))
        lengths.append(batch.lengths)
    return ranks, lengths


def evaluate(params: ModelParams, sessions: Sequence[Sequence[int]], n: int = 20,
             max_len: int = 10, batch_size: int = 512, workers: int = 1) -> EvalReport:
    """Score every prefix-split pair; buckets are prefix lengths 1..max_len (longer pooled in max_len)."""
    pairs = prefix_split(sessions)
    if not pairs:
        return EvalReport(0.0, 0.0, n, 0, {})
    workers = max(1, min(workers, len(pairs)))
    bounds = np.linspace(0, len(pairs), workers + 1).astype(int)
    shards = [pairs[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    if workers == 1:
        results = [_score_shard(params, shards[0], max_len, batch_size)]
    else:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda s: _score_shard(params, s, max_len, batch_size), shards))
    ranks = np.concatenate([r for rs, _ in results for r in rs])
    lengths = np.concatenate([x for _, ls in results for x in ls])
    return report_from_ranks(ranks, lengths, n)

"""Forward-pass timing of the session encoder and log-log scaling fits.

Each timed call encodes a batch of ``batch_size`` random sessions of length
``t`` (embedding lookup, attention variant, preference fusion).  Candidate
scoring is excluded: it costs O(n d) per session whatever the length, and
would hide the length dependence being measured.  A batch, not a single
session, is timed so that fixed per-primitive interpreter overhead does not
swamp the arithmetic.
"""
from __future__ import annotations

import csv
import gc
import time
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .dataset import make_batch
from .model import ModelConfig, encode, init_params

MIN_REPS = 30
CSV_COLUMNS = ("variant", "t", "d", "l", "reps", "median_ns", "iqr_ns")


@dataclass
class BenchRecord:
    variant: str
    t: int
    d: int
    l: int
    reps: int
    median_ns: float
    iqr_ns: float


def _setup(config: ModelConfig, t: int, batch_size: int, seed: int):
    params = init_params(config, seed)
    rng = np.random.default_rng(seed)
    sessions = rng.integers(1, config.n_items + 1, size=(batch_size, t)).tolist()
    return params, make_batch(sessions, [1] * batch_size, t)


def time_points(points: Sequence[tuple[ModelConfig, int]], reps: int = MIN_REPS,
                batch_size: int = 256, seed: int = 0, warmup: int = 10) -> list[BenchRecord]:
    """Time several (config, t) points.

    Every point is exercised ``warmup`` times before any timing starts, so the
    first point does not absorb process start-up costs (page faults, allocator
    growth).  Points are then timed one after another, each after a short
    re-warm, so each is measured with its own working set in cache.
    """
    if reps < MIN_REPS:
        raise ValueError(f"reps must be >= {MIN_REPS}, got {reps}")
    setups = [_setup(cfg, t, batch_size, seed) for cfg, t in points]
    samples = np.empty((len(points), reps))
    gc_was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()  # as timeit does: collector pauses are not encoder cost
    try:
        with threadpool_limits(limits=1):
            for params, batch in setups:
                for _ in range(warmup):
                    encode(batch, params)
            for k, (params, batch) in enumerate(setups):
                for _ in range(3):
                    encode(batch, params)
                for r in range(reps):
                    start = time.perf_counter_ns()
                    encode(batch, params)
                    samples[k, r] = time.perf_counter_ns() - start
    finally:
        if gc_was_enabled:
            gc.enable()
    records = []
    for (cfg, t), row in zip(points, samples):
        q1, med, q3 = np.percentile(row, [25, 50, 75])
        records.append(BenchRecord(cfg.variant, t, cfg.d, cfg.l, reps, float(med), float(q3 - q1)))
    return records


def time_encoder(config: ModelConfig, t: int, reps: int = MIN_REPS, batch_size: int = 256,
                 seed: int = 0, warmup: int = 10) -> BenchRecord:
    return time_points([(config, t)], reps, batch_size, seed, warmup)[0]


def fit_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def bench_forward(config: ModelConfig, t_grid: Sequence[int], reps: int = MIN_REPS,
                  batch_size: int = 256, seed: int = 0) -> tuple[list[BenchRecord], float]:
    """Time the encoder over ``t_grid`` at fixed d, l; returns records and the fitted exponent in t."""
    records = time_points([(config, t) for t in t_grid], reps, batch_size, seed)
    if len(set(t_grid)) < 2:
        return records, 0.0
    return records, fit_slope([r.t for r in records], [r.median_ns for r in records])


def bench_dims(config: ModelConfig, d_grid: Sequence[int], t: int, reps: int = MIN_REPS,
               batch_size: int = 256, seed: int = 0, l_ratio: float = 0.5) -> tuple[list[BenchRecord], float]:
    """Time the encoder over embedding sizes with l = l_ratio * d; returns records and exponent in d."""
    configs = [replace(config, d=d, l=max(1, int(round(d * l_ratio)))) for d in d_grid]
    records = time_points([(cfg, t) for cfg in configs], reps, batch_size, seed)
    return records, fit_slope([r.d for r in records], [r.median_ns for r in records])


def write_bench_csv(records: Sequence[BenchRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in records:
            w.writerow(asdict(r))

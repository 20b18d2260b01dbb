"""Click-log ingestion, session preprocessing, prefix splitting and batching."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataFormatError, PreprocessingError

logger = logging.getLogger(__name__)

FORMATS = ("yoochoose-csv", "diginetica-csv", "simple-sessions")
CACHE_VERSION = 1
MALFORMED_LIMIT = 0.01
# simple-sessions lines carry no clock; line i starts at i * SESSION_SPACING seconds
SESSION_SPACING = 60.0

Pair = tuple[list[int], int]


@dataclass(frozen=True)
class ClickEvent:
    session_key: str
    timestamp: float
    item_key: str

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")


@dataclass
class PreprocessConfig:
    min_item_support: int = 5
    min_session_length: int = 2
    test_days: float = 1.0
    # when set, the most recent fraction of sessions is held out instead of a time window
    test_fraction: float | None = None


class Vocabulary:
    """Bijection between external item keys and internal indices 1..n (0 is padding)."""

    def __init__(self, keys: Sequence[str]):
        self.keys = list(keys)
        self._index = {k: i + 1 for i, k in enumerate(self.keys)}
        if len(self._index) != len(self.keys):
            raise ValueError("duplicate item keys in vocabulary")

    def __len__(self) -> int:
        return len(self.keys)

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def index(self, key: str) -> int:
        return self._index[key]

    def key(self, idx: int) -> str:
        if not 1 <= idx <= len(self.keys):
            raise IndexError(f"item index {idx} outside [1, {len(self.keys)}]")
        return self.keys[idx - 1]

    def encode(self, keys: Iterable[str]) -> list[int]:
        keys = list(keys)
        unknown = [k for k in keys if k not in self._index]
        if unknown:
            raise KeyError(f"unknown item keys: {', '.join(map(str, unknown))}")
        return [self._index[k] for k in keys]


@dataclass
class SessionCorpus:
    vocab: Vocabulary
    train: list[list[int]]
    test: list[list[int]]
    stats: dict = field(default_factory=dict)

    @property
    def n_items(self) -> int:
        return len(self.vocab)


@dataclass
class Batch:
    items: np.ndarray    # B x L, 0 = pad, valid positions left-aligned
    mask: np.ndarray     # B x L bool
    lengths: np.ndarray  # B
    targets: np.ndarray  # B

    def __len__(self) -> int:
        return len(self.targets)


# loading ---------------------------------------------------------------------

def _iso_seconds(text: str) -> float:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _parse_simple(lines) -> tuple[list[ClickEvent], list[tuple[int, str]], int]:
    events, bad = [], []
    session_no = 0
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) < 2:
            bad.append((lineno, line.rstrip("\n")))
            continue
        base = session_no * SESSION_SPACING
        events.extend(ClickEvent(parts[0], base + j, item) for j, item in enumerate(parts[1:]))
        session_no += 1
    return events, bad, session_no + len(bad)


def _parse_yoochoose(lines) -> tuple[list[ClickEvent], list[tuple[int, str]], int]:
    events, bad = [], []
    for lineno, row in enumerate(csv.reader(lines), 1):
        if not row:
            continue
        try:
            session, stamp, item = row[0], row[1], row[2]
            if not session or not item:
                raise ValueError
            events.append(ClickEvent(session.strip(), _iso_seconds(stamp), item.strip()))
        except (IndexError, ValueError):
            if lineno == 1 and row and row[0].lower().startswith("session"):
                continue
            bad.append((lineno, ",".join(row)))
    return events, bad, len(events) + len(bad)


def _parse_diginetica(lines) -> tuple[list[ClickEvent], list[tuple[int, str]], int]:
    events, bad = [], []
    reader = csv.reader(lines, delimiter=";")
    header = next(reader, None)
    if header is None:
        return events, bad, 0
    cols = {name.strip(): i for i, name in enumerate(header)}
    try:
        si, ii, fi, di = (cols[c] for c in ("sessionId", "itemId", "timeframe", "eventdate"))
    except KeyError as exc:
        raise DataFormatError(f"diginetica header lacks column {exc}") from None
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        try:
            day = datetime.strptime(row[di].strip(), "%Y-%m-%d").replace(tzinfo=timezone.utc)
            stamp = day.timestamp() + float(row[fi]) / 1000.0
            events.append(ClickEvent(row[si].strip(), stamp, row[ii].strip()))
        except (IndexError, ValueError):
            bad.append((lineno, ";".join(row)))
    return events, bad, len(events) + len(bad)


_PARSERS = {
    "simple-sessions": _parse_simple,
    "yoochoose-csv": _parse_yoochoose,
    "diginetica-csv": _parse_diginetica,
}


def load_clicks(path: str | os.PathLike, format: str = "simple-sessions") -> list[ClickEvent]:
    """Read a click log.  More than 1% malformed lines raises DataFormatError."""
    if format not in _PARSERS:
        raise DataFormatError(f"unknown format {format!r}; expected one of {FORMATS}")
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.readlines()
    events, bad, total = _PARSERS[format](lines)
    if not events and not bad:
        logger.warning("%s: no click events found", path)
        return []
    if bad:
        sample = "; ".join(f"line {n}: {text!r}" for n, text in bad[:3])
        if len(bad) > MALFORMED_LIMIT * max(total, 1):
            raise DataFormatError(f"{path}: {len(bad)} of {total} lines malformed ({sample})")
        logger.warning("%s: skipped %d malformed lines (%s)", path, len(bad), sample)
    return events


# preprocessing -----------------------------------------------------------------

def _filter_to_fixed_point(train: dict, test: dict, min_support: int, min_len: int) -> int:
    """Alternate item-support, unseen-test-item and length filters until nothing changes."""
    rounds = 0
    while True:
        rounds += 1
        support = Counter(item for part in (train, test) for s in part.values() for item in s)
        changed = False
        for part in (train, test):
            for key in list(part):
                kept = [item for item in part[key] if support[item] >= min_support]
                if len(kept) != len(part[key]):
                    part[key] = kept
                    changed = True
        train_items = {item for s in train.values() for item in s}
        for key in list(test):
            kept = [item for item in test[key] if item in train_items]
            if len(kept) != len(test[key]):
                test[key] = kept
                changed = True
        for part in (train, test):
            for key in [k for k, s in part.items() if len(s) < min_len]:
                del part[key]
                changed = True
        if not changed:
            return rounds


def preprocess(events: Sequence[ClickEvent], config: PreprocessConfig | None = None) -> SessionCorpus:
    """Group clicks into sessions, filter to a fixed point and split train/test by time."""
    config = config or PreprocessConfig()
    if not events:
        raise PreprocessingError("no click events to preprocess")
    stages = {"clicks_in": len(events)}

    grouped: dict[str, list[tuple[float, int, str]]] = {}
    for order, ev in enumerate(events):
        grouped.setdefault(ev.session_key, []).append((ev.timestamp, order, ev.item_key))
    sessions = {k: sorted(v) for k, v in grouped.items()}
    stages["sessions_in"] = len(sessions)
    end_time = {k: v[-1][0] for k, v in sessions.items()}
    chrono = sorted(sessions, key=lambda k: (end_time[k], sessions[k][0][1]))

    if config.test_fraction is not None:
        if not 0.0 <= config.test_fraction < 1.0:
            raise PreprocessingError(f"test_fraction must lie in [0, 1), got {config.test_fraction}")
        n_test = math.ceil(config.test_fraction * len(chrono))
        test_keys = set(chrono[len(chrono) - n_test:]) if n_test else set()
    else:
        cutoff = max(end_time.values()) - config.test_days * 86400.0
        test_keys = {k for k in chrono if end_time[k] > cutoff}

    train = {k: [x[2] for x in sessions[k]] for k in chrono if k not in test_keys}
    test = {k: [x[2] for x in sessions[k]] for k in chrono if k in test_keys}
    stages["train_sessions_split"] = len(train)
    stages["test_sessions_split"] = len(test)
    rounds = _filter_to_fixed_point(train, test, config.min_item_support, config.min_session_length)
    stages["filter_rounds"] = rounds
    stages["train_sessions_kept"] = len(train)
    stages["test_sessions_kept"] = len(test)
    if not train:
        raise PreprocessingError(f"corpus empty after filtering; stage counts: {stages}")

    keys: dict[str, None] = {}
    for k in train:  # dicts keep chronological insertion order
        for item in train[k]:
            keys.setdefault(item, None)
    vocab = Vocabulary(list(keys))
    train_s = [vocab.encode(s) for s in train.values()]
    test_s = [vocab.encode(s) for s in test.values()]
    corpus = SessionCorpus(vocab, train_s, test_s)
    corpus.stats = corpus_stats(corpus)
    corpus.stats["stages"] = stages
    return corpus


def corpus_stats(corpus: SessionCorpus) -> dict:
    """Summary counts: clicks, sessions per split, items, mean length and pair counts."""
    lengths = [len(s) for s in corpus.train] + [len(s) for s in corpus.test]
    clicks = sum(lengths)
    return {
        "clicks": clicks,
        "train_sessions": len(corpus.train),
        "test_sessions": len(corpus.test),
        "items": len(corpus.vocab),
        "avg_session_length": clicks / len(lengths) if lengths else 0.0,
        "train_pairs": sum(len(s) - 1 for s in corpus.train),
        "test_pairs": sum(len(s) - 1 for s in corpus.test),
    }


def save_corpus(corpus: SessionCorpus, path: str | os.PathLike) -> None:
    doc = {
        "version": CACHE_VERSION,
        "vocab": corpus.vocab.keys,
        "train": corpus.train,
        "test": corpus.test,
        "stats": corpus.stats,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_corpus(path: str | os.PathLike) -> SessionCorpus:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != CACHE_VERSION:
        raise DataFormatError(f"{path}: unsupported corpus cache version {doc.get('version')!r}")
    return SessionCorpus(Vocabulary(doc["vocab"]), doc["train"], doc["test"], doc.get("stats", {}))


# pairs and batches -------------------------------------------------------------

def prefix_split(sessions: Iterable[Sequence[int]]) -> list[Pair]:
    """[x1..xt] -> ([x1], x2), ([x1, x2], x3), ..., ([x1..x_{t-1}], xt)."""
    pairs = []
    for s in sessions:
        s = list(s)
        pairs.extend((s[:k], s[k]) for k in range(1, len(s)))
    return pairs


def make_batch(prefixes: Sequence[Sequence[int]], targets: Sequence[int], max_len: int) -> Batch:
    """Keep the ``max_len`` most recent items of each prefix, left-aligned, zero padded."""
    items = np.zeros((len(prefixes), max_len), dtype=np.int64)
    lengths = np.zeros(len(prefixes), dtype=np.int64)
    for row, p in enumerate(prefixes):
        if len(p) == 0:
            raise ValueError("empty session prefix")
        kept = list(p)[-max_len:]
        items[row, : len(kept)] = kept
        lengths[row] = len(kept)
    return Batch(items, items != 0, lengths, np.asarray(targets, dtype=np.int64))


def batchify(pairs: Sequence[Pair], batch_size: int = 128, max_len: int = 10,
             shuffle_seed: int | None = None) -> Iterator[Batch]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(pairs))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(pairs))
    for start in range(0, len(pairs), batch_size):
        chunk = [pairs[i] for i in order[start:start + batch_size]]
        yield make_batch([p for p, _ in chunk], [t for _, t in chunk], max_len)

"""From a raw click log to padded training batches.

Writes a tiny log in the plain "session item item ..." format, filters rare
items and short sessions until nothing changes, splits off the most recent
sessions as test data, and shows how prefixes become left-aligned batches.

Run:  python3 demos/06_data_pipeline.py
"""
import tempfile
from pathlib import Path

from sriem.dataset import PreprocessConfig, batchify, load_clicks, prefix_split, preprocess

log = """\
monday    a b c d
tuesday   a b c
wednesday b c a
thursday  a b rare
friday    c a b
saturday  a b c a b c a b c a b c
sunday    b c
"""
path = Path(tempfile.mkdtemp()) / "clicks.txt"
path.write_text(log)

events = load_clicks(path, "simple-sessions")
corpus = preprocess(events, PreprocessConfig(min_item_support=3, test_fraction=0.3))
print("vocabulary (index 0 is padding):", {k: corpus.vocab.index(k) for k in corpus.vocab.keys})
print("train sessions:", corpus.train)
print("test sessions: ", corpus.test)
print("stats:", corpus.stats)

pairs = prefix_split(corpus.train)
print(f"\n{len(pairs)} (prefix, next item) pairs, e.g. {pairs[:3]}")
batch = next(batchify(pairs, batch_size=4, max_len=10))
print("first training batch (left-aligned, zero padded):\n", batch.items)
print("targets:", batch.targets, " lengths:", batch.lengths)

# the 12-click test session: its longest prefixes keep only the 10 most recent clicks
longest = max(corpus.test, key=len)
batch = next(batchify(prefix_split([longest])[-3:], batch_size=3, max_len=10))
print("\nlongest test prefixes, truncated to 10:\n", batch.items)

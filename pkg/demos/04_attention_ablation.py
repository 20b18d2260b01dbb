"""Swap the importance module for standard self-attention or STAMP-style attention.

All three variants share embeddings, fusion and scoring; only the way the
long-term preference is pooled differs.  The corpus gets 20% random noise
clicks so that picking out the relevant items matters.

Run:  python3 demos/04_attention_ablation.py        (about 15 seconds)
"""
from sriem.evaluation import evaluate
from sriem.model import VARIANTS, ModelConfig
from sriem.synthetic import transition_corpus
from sriem.trainer import TrainConfig, train

corpus = transition_corpus(n_sessions=2000, n_items=50, noise=0.2, seed=0)
print(f"{'variant':8s} {'Recall@20':>10s} {'MRR@20':>8s} {'epochs':>7s}")
for variant in VARIANTS:
    params, report = train(corpus, ModelConfig(corpus.n_items, d=32, l=16, variant=variant),
                           TrainConfig(seed=0))
    rep = evaluate(params, corpus.test)
    print(f"{variant:8s} {rep.recall_at_n:10.4f} {rep.mrr_at_n:8.4f} {len(report.epochs):7d}")

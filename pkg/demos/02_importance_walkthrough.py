"""Importance extraction step by step on a hand-built session.

Four items: three that point in unrelated directions and one "hub" that sits
between them.  The hub is moderately similar to everything, so its average
affinity to the rest of the session is the highest and it receives the largest
weight.

Run:  python3 demos/02_importance_walkthrough.py
"""
import numpy as np

from sriem.iem import (
    IEMParams, affinity, extract_importance, importance_scores, normalize_importance, project_qk,
)
from sriem.ndmath import Tensor

np.set_printoptions(precision=4, suppress=True)

names = ["shoes", "hub", "tent", "hub", "lamp"]
vectors = {"shoes": [3, -3, -3], "tent": [-3, 3, -3], "lamp": [-3, -3, 3], "hub": [1, 1, 1]}
E = Tensor(np.array([vectors[n] for n in names], dtype=float))
params = IEMParams(Tensor(2 * np.eye(3)), Tensor(2 * np.eye(3)))

Q, K = project_qk(E, params)
print("queries Q = sigmoid(E W_q):\n", Q.data)

C = affinity(Q, K, d=params.d)
print("\naffinity C = sigmoid(Q K^T) / sqrt(d):\n", C.data)

alpha = importance_scores(C)
print("\nraw importance (mean off-diagonal affinity per row):", alpha.data)

beta = normalize_importance(alpha)
print("normalized importance:", beta.data, " sum =", beta.data.sum())
for name, w in zip(names, beta.data):
    print(f"  {name:6s} {'#' * int(round(w * 200))} {w:.4f}")

# padding never changes the weights of the real items
padded = Tensor(np.vstack([E.data, np.full((3, 3), 9.0)]))
mask = np.array([True] * 5 + [False] * 3)
print("\nwith three junk pad rows masked out:", extract_importance(padded, params, mask).weights.data)

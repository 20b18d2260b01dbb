"""The tape: record a small graph, run backward, and check it against finite differences.

Run:  python3 demos/01_autodiff_and_gradcheck.py
"""
import numpy as np

from sriem import ndmath as nd
from sriem.gradcheck import max_relative_error, numerical_grad
from sriem.ndmath import Tensor

rng = np.random.default_rng(0)
A = Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="A")
B = Tensor(rng.normal(size=(4, 5)), requires_grad=True, name="B")
mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1], [1, 0, 0, 0, 0]], dtype=bool)


def objective():
    # masked softmax over a sigmoid layer, then a weighted sum down to one number
    probs = nd.softmax_row(nd.sigmoid(A @ B), mask)
    return nd.tsum(probs * np.arange(5.0))


with nd.Tape() as tape:
    loss = objective()
    nd.backward(loss, tape)

print("recorded ops, in forward order:", tape.ops())
print("loss =", loss.item())

for t in (A, B):
    numeric = numerical_grad(lambda: objective().item(), t)
    print(f"{t.name}: max relative error vs central differences = {max_relative_error(t.grad, numeric):.2e}")

# masked entries are exactly zero and every row still sums to one
print(nd.softmax_row(Tensor(np.zeros((3, 5))), mask).data.round(3))

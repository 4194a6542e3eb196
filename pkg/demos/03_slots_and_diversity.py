"""Multi-view slots and the diversity regularizer.

A bank of learnable queries cross-attends a description sequence, giving one
slot per view.  The regularizer is a softmax over raw slot dot products, so
it is smallest when slots point in different directions.  Optimizing it alone
pulls nearly identical slots apart.
"""

import math

import numpy as np

from ccr import tensor as T
from ccr.slots import SlotGenerator, generate_slots, regularization_loss

rng = np.random.default_rng(0)
gen = SlotGenerator.init(n_q=4, d=16, heads=4, rng=rng)
slots, weights = generate_slots(rng.normal(size=(24, 16)), gen)
print("slots:", slots.shape, "attention:", weights.shape)

print("orthonormal pair:", regularization_loss(np.eye(2)).item(), "expected", math.log(1 + math.exp(-1)))
print("duplicated pair: ", regularization_loss(np.ones((2, 4)) / 2).item(), "expected", math.log(2))


def mean_offdiag_cosine(m):
    n = m / np.linalg.norm(m, axis=1, keepdims=True)
    c = n @ n.T
    return (c.sum() - len(c)) / (len(c) ** 2 - len(c))


u = rng.normal(size=32)
start = u / np.linalg.norm(u) + 1e-2 * rng.normal(size=(4, 32))
m = T.parameter(start / np.linalg.norm(start, axis=1, keepdims=True))
for step in range(201):
    m.grad = None
    loss = regularization_loss(m)
    loss.backward()
    if step % 50 == 0:
        print(f"step {step:3d}  L_reg {loss.item():.4f}  mean off-diagonal cosine {mean_offdiag_cosine(m.data):+.3f}")
    m.data = m.data - 0.1 * m.grad

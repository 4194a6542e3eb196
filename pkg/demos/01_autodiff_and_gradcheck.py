"""Backprop through attention and check it against central differences.

The engine records every numpy operation on a Tensor and replays the graph
backwards.  Here we build a small attention block, differentiate a scalar
of its output, and confirm the gradients with the finite-difference checker.
"""

import numpy as np

from ccr import tensor as T
from ccr.functional import AttentionParams, multi_head_attention
from ccr.gradcheck import finite_difference_check

rng = np.random.default_rng(0)
params = AttentionParams.init(d=8, heads=2, rng=rng)
queries = T.parameter(rng.normal(size=(3, 8)), "queries")
keys = T.parameter(rng.normal(size=(5, 8)), "keys")


def loss():
    out, _ = multi_head_attention(queries, keys, keys, params)
    return (out * out).mean()


print("loss:", loss().item())
_, weights = multi_head_attention(queries, keys, keys, params)
print("attention weights per head (rows sum to one):")
print(np.round(weights.data, 3))

report = finite_difference_check(loss, {"queries": queries, "keys": keys, **params.parameters()})
print(report)

"""Train the dual-stream model on easy synthetic data and rank a test gallery.

Non-English captions query visual items.  The final score blends the global
cosine with the best caption-to-slot cosine, weighted by beta.
"""

import numpy as np

from ccr import HyperParams, SynthSpec, evaluate_dataset, fit, generate_synthetic

data = generate_synthetic(SynthSpec(n_items=600, n_test=200), seed=0)
train, test = data.subset("train"), data.subset("test")
hp = HyperParams(d=64, epochs=10)

model, log = fit(train, hp, seed=0)
print("epoch mean loss:", np.round(log.epoch_means(), 3))
for term in ("L_ts", "L_v", "L_c", "L_rkt", "L_reg"):
    print(f"  final {term:6s} {log.records[-1][term]:.4f}")

for beta in (0.0, 0.8, 1.0):
    ev = evaluate_dataset(model, test, beta=beta)
    print(f"beta={beta:.1f}  t2v {ev.t2v.recalls}  v2t {ev.v2t.recalls}  SumR {ev.sumr:.1f}")

"""What the controller actually sees: percentiles, not loss values.

Run:  python demos/02_unitless_features.py
"""

import numpy as np

from hyperlab.features import (
    CDF_BASES,
    IntegralCdfState,
    NormalizerState,
    cdf_cosine,
    estimate_noise_scale,
    normalize_clip,
)

print("=== Integral CDF features ===")
# A within-run percentile under a continuous exponentially weighted history.
# Base b controls how much more a point at the end of training weighs than
# one at the start; one copy per base.
rng = np.random.default_rng(0)
stream = IntegralCdfState()
losses = 2.0 * np.exp(-3 * np.linspace(0, 1, 12)) + 0.05 * rng.normal(size=12)
print(f"bases: {CDF_BASES}")
for i, (t, y) in enumerate(zip(np.linspace(0, 1, 12), losses)):
    feats = stream.value(float(y))  # value first, then absorb: the first is 0.5
    stream.observe(float(y), float(t))
    if i in (0, 1, 5, 11):
        print(f"step {i:2d}  loss={y:7.4f}  percentile per base: {np.round(feats, 3)}")

print()
print("=== Scale invariance ===")
# Multiply every loss by 1000: the percentiles do not move.
a, b = IntegralCdfState(), IntegralCdfState()
for t, y in zip(np.linspace(0, 1, 8), losses[:8]):
    a.observe(float(y), float(t))
    b.observe(float(1000 * y), float(t))
print("original:", np.round(a.value(float(losses[8])), 6))
print("x1000:   ", np.round(b.value(float(1000 * losses[8])), 6))

print()
print("=== EMA normalization with clipping ===")
s = NormalizerState()
for x in [5.0] * 50:
    normalize_clip(s, x)
print("after a constant stream, output is", normalize_clip(s, 5.0))
print("a sudden 100x outlier clips to   ", normalize_clip(s, 500.0))

print()
print("=== Dimension-corrected cosine similarity ===")
# Raw cosine between random high-dim vectors concentrates near 0; scaling
# by sqrt(d) before the Gaussian CDF makes the feature uniform under
# independence, whatever the tensor size.
for d in (10, 100, 10000):
    u, v = rng.normal(size=d), rng.normal(size=d)
    raw = float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))
    corrected, _ = cdf_cosine(u, v)
    print(f"d={d:6d}  raw cos={raw:+.4f}  cdf cosine={corrected:.4f}")

print()
print("=== Gradient-noise-scale estimate ===")
# Two batch sizes are enough to estimate tr(Sigma) / |G|^2.
d, sigma = 64, 0.5
mu = rng.normal(size=d)
g1 = mu + rng.normal(size=d) * sigma
g64 = mu + rng.normal(size=d) * sigma / 8.0
est = estimate_noise_scale(float(g1 @ g1), float(g64 @ g64), 1, 64)
print(f"true scale = {d * sigma**2 / float(mu @ mu):.3f}, estimated = {est:.3f}")

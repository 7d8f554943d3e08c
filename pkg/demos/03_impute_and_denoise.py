"""Fill a missing patch, and clean up a noisy series.

    python demos/03_impute_and_denoise.py demo_out/sines.ckpt
"""
import sys

import numpy as np

from interpomae import MaskPattern, Series, denoise, generate_sines, impute, load_checkpoint

bundle = load_checkpoint(sys.argv[1] if len(sys.argv) > 1 else "demo_out/sines.ckpt").bundle
T, P = bundle.config.T, bundle.config.P
held_out = generate_sines(64, 24, 5, seed=99)

model, col_mean = [], []
for s in held_out:
    for t in range(T):
        rows = slice(t * P, (t + 1) * P)
        observed = np.delete(s.values, np.arange(t * P, (t + 1) * P), axis=0)
        filled = impute(bundle, s, MaskPattern(T, (t,)))
        assert np.array_equal(np.delete(filled.values, np.arange(t * P, (t + 1) * P), axis=0), observed)
        model.append(np.mean((filled.values[rows] - s.values[rows]) ** 2))
        col_mean.append(np.mean((observed.mean(axis=0) - s.values[rows]) ** 2))
print(f"one missing patch: model mse {np.mean(model):.5f}, column-mean fill {np.mean(col_mean):.5f}")

rng = np.random.default_rng(17)
before, after = [], []
for s in held_out:
    noisy = Series(s.values + rng.normal(0, 0.1, s.values.shape), s.id)
    before.append(np.mean((noisy.values - s.values) ** 2))
    after.append(np.mean((denoise(bundle, noisy).values - s.values) ** 2))
print(f"noise std 0.1: noisy mse {np.mean(before):.5f}, denoised mse {np.mean(after):.5f}")

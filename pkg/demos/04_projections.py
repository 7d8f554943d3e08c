"""PCA and t-SNE of real vs synthetic Sines, written as CSV point clouds.

    python demos/04_projections.py demo_out/sines.ckpt [out_dir]

Plot x against y coloured by label with any tool you like.
"""
import sys
from pathlib import Path

import numpy as np

from interpomae import Series, Uniform, generate_sines, load_checkpoint, synthesize
from interpomae import evaluation as ev

bundle = load_checkpoint(sys.argv[1] if len(sys.argv) > 1 else "demo_out/sines.ckpt").bundle
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out")
out.mkdir(exist_ok=True)

real = generate_sines(200, 24, 5, seed=99)
synth = [synthesize(bundle, s, Uniform(2), np.random.default_rng(i)) for i, s in enumerate(real)]

# project in the model's normalized units so every channel weighs the same
norm = lambda ss: [Series(bundle.norm.apply(s.values), s.id) for s in ss]  # noqa: E731
X, labels = ev.flatten_for_projection(norm(real), norm(synth))

pca = ev.pca_project(X, 2, labels)
print("explained variance ratio", np.round(pca.explained_variance_ratio, 3))
ev.write_projection(pca, out / "sines_pca.csv")

tsne = ev.tsne_project(X, perplexity=30, iters=1000, seed=0, labels=labels)
print(f"t-SNE KL {tsne.kl_history[0]:.3f} -> {tsne.kl_history[-1]:.3f}")
ev.write_projection(tsne, out / "sines_tsne.csv")

for row in ev.marginal_report(real, synth):
    print(f"channel {row['channel']}: mean delta {row['mean_delta']:+.3f} std delta {row['std_delta']:+.3f} ks {row['ks']:.3f}")

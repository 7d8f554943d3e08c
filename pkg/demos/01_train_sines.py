"""Train on Sines and look at the three loss curves.

    python demos/01_train_sines.py [out_dir]

Set DEMO_EPOCHS=a,b,c to shorten the run (default 200,200,400).
"""
import os
import sys
from pathlib import Path

import numpy as np

from interpomae import ModelConfig, TrainConfig, TrainState, Uniform, fit, generate_sines, init_params, save_checkpoint
from interpomae.data import fit_normalizer, to_grids
from interpomae.train import write_log

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)
epochs = [int(e) for e in os.environ.get("DEMO_EPOCHS", "200,200,400").split(",")]

# 256 five-channel sinusoids of length 24, cut into 6 patches of 4 steps
series = generate_sines(256, 24, 5, seed=17)
norm = fit_normalizer(series)
X = to_grids(series, 4, norm)
print("training grid", X.shape)  # [n, T, P, C]

bundle = init_params(ModelConfig(T=6, P=4, C=5, seed=17), norm)
cfg = TrainConfig(*epochs, mask_spec=Uniform(2), seed=17)
state = TrainState.start(bundle, cfg)


def progress(st):
    phase, epoch, loss = st.history[-1]
    if epoch == 1 or epoch % 50 == 0:
        print(f"phase {phase} epoch {epoch:4d} loss {loss:.4f}")


fit(state, X, on_epoch=progress)

# phase 1 is the autoencoder, phase 2 the interpolator alone, phase 3 everything
for phase in (1, 2, 3):
    losses = np.array([l for p, _, l in state.history if p == phase])
    if len(losses):
        print(f"phase {phase}: {losses[0]:.4f} -> {losses[-1]:.4f}")

save_checkpoint(out / "sines.ckpt", state)
write_log(state.history, out / "sines_log.csv")
print("wrote", out / "sines.ckpt")

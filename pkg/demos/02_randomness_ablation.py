"""Which randomness source hides the convergence trend?

Each cell unfixes one factor of the evaluation batch and redraws it every
step. Timesteps are the troublemaker: the loss scale depends strongly on
t, and even a batch of 512 does not average it away. Captions and encoder
noise barely matter.

    python3 demos/02_randomness_ablation.py [seed]
"""

import sys
from pathlib import Path

from dvar_lab import harness as H
from dvar_lab.diffusion import FACTORS
from dvar_lab.serialize import write_csv

OUT = Path(__file__).with_name("out")

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = H.RunConfig(seed=seed, max_steps=2000)

rep = H.ablate_randomness(cfg, factors=[None, *FACTORS], eval_batch_sizes=[4, 64, 512])

print(f"{'factor':16s} {'B':>4s} {'dvar stop':>10s} {'trend':>9s} {'noise':>9s} {'snr':>8s}")
for f, B, stop, trend, noise, snr in rep.table():
    print(f"{f:16s} {B:4d} {str(stop or 'never'):>10s} {trend:9.4f} {noise:9.4f} {snr:8.2f}")

OUT.mkdir(exist_ok=True)
write_csv(OUT / f"ablation_seed{seed}.csv", rep.header, rep.table())
print(f"wrote {OUT / f'ablation_seed{seed}.csv'}")

"""Why the stopping rule watches a fixed batch and not the training loss.

A single run on the default toy world. The training loss is drawn from a
fresh batch each step, so its variance is dominated by which timesteps and
noise it happened to draw. The same objective on a batch frozen at the
start only changes through the embedding, and its trend is plain to see.

    python3 demos/01_fixed_batch_signal.py [seed]
"""

import sys
from pathlib import Path

import numpy as np

from dvar_lab import harness as H
from dvar_lab.criteria import replay
from dvar_lab.plotting import Series, grid_svg, moving_average

OUT = Path(__file__).with_name("out")
DVAR = {"kind": "dvar", "window": 282, "threshold": 0.39}

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = H.RunConfig(seed=seed)

# Full budget so both traces can be inspected past the stopping point.
rec = H.run_inversion(H.budget_config(cfg))
train, det = rec.series("train_loss"), rec.series("det_loss")
steps = np.arange(1, len(det) + 1, dtype=float)

stop_det = replay(det, DVAR)
stop_train = replay(train, DVAR)
print(f"seed {seed}: DVAR on the fixed batch stops at {stop_det}; on the training loss: {stop_train or 'never'}")

# Step-to-step noise against the total decrease, for each trace
for name, x in (("train_loss", train), ("det_loss", det)):
    print(f"  {name:10s} trend {H.trend_amplitude(x):8.4f}  noise {H.noise_amplitude(x):8.4f}")

# How good is the embedding at the stop, compared with the end of the budget?
stopped = H.run_inversion(H.dvar_config(cfg))
print(f"  oracle score at stop {stopped.oracle_score():.4f}, after {cfg.max_steps} steps {rec.oracle_score():.4f}")

OUT.mkdir(exist_ok=True)
panels = [
    ("training loss (smoothed 50)", [Series("train_loss", steps, moving_average(train, 50))]),
    ("fixed-batch loss", [Series("det_loss", steps, det)]),
]
(OUT / "fixed_batch_signal.svg").write_text(grid_svg(panels), encoding="utf-8")
print(f"wrote {OUT / 'fixed_batch_signal.svg'}")

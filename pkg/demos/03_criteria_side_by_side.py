"""Five stopping rules replayed on the same fixed-batch trace.

The alternatives are scale sensitive (EMA percentile and Hall divide by the
loss level) or react to the local slope only (trend), so on a loss with a
large offset they fire early or erratically. DVAR compares the recent
variance with the variance of the whole run and is unaffected by offsets.

    python3 demos/03_criteria_side_by_side.py
"""

import numpy as np

from dvar_lab import harness as H

print(f"{'seed':>4s} " + " ".join(f"{k:>15s}" for k in H.default_comparison_suite(5000)))
for seed in range(5):
    rec = H.run_inversion(H.budget_config(H.RunConfig(seed=seed), 3000))
    table = H.compare_criteria(rec)
    print(f"{seed:4d} " + " ".join(f"{str(v['stop_step'] or 'never'):>15s}" for v in table.values()))

# Add a constant to the same trace: only the relative criteria move.
rec = H.run_inversion(H.budget_config(H.RunConfig(seed=0), 3000))
det = rec.series("det_loss")
for offset in (0.0, -0.9 * det.min()):
    table = H.compare_criteria(det + offset)
    print(f"offset {offset:8.2f}: " + ", ".join(f"{k}={v['stop_step'] or 'never'}" for k, v in table.items()))
print("loss level", np.round(det[[0, -1]], 3))

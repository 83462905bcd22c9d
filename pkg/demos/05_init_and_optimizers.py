"""Initialization strategies and SAM against AdamW.

Init: the vocabulary entry that scores best with the sample-based scorer,
a fixed manual pick, or a random token. Optimizer: AdamW versus SGD with
sharpness-aware minimization, which costs two gradient evaluations a step.

On this toy world neither SGD variant gets close to the target within the
budget (the fixed-batch loss still drifts, so DVAR does not fire), while
AdamW's per-coordinate normalized steps converge in a few hundred steps.
The quality advantage reported for SAM at full scale does not carry over.

    python3 demos/05_init_and_optimizers.py
"""

from dataclasses import replace

from dvar_lab import harness as H
from dvar_lab.optim import OptimizerConfig

seeds = range(4)
variants = {
    "init=random": {},
    "init=best": {"init_strategy": "best"},
    "init=manual[0]": {"init_strategy": "manual", "init_index": 0},
    "sgd": {"optimizer": OptimizerConfig("sgd", lr=0.05)},
    "sam_sgd": {"optimizer": OptimizerConfig("sam_sgd", lr=0.05, rho=0.05)},
}

for name, kw in variants.items():
    rows = []
    for s in seeds:
        rec = H.run_inversion(H.dvar_config(replace(H.RunConfig(seed=s), **kw)))
        rows.append((rec.stop_step, rec.oracle_score(), rec.grad_evals, rec.timing["total"]))
    st, sc, ge, tt = zip(*rows)
    print(f"{name:16s} stop {H.median_iqr(st)[0]:7.0f}  score {H.median_iqr(sc)[0]:.4f}  "
          f"grad evals {H.median_iqr(ge)[0]:8.0f}  time {H.median_iqr(tt)[0]:.2f}s")

"""The stopping protocols on a handful of seeds.

* baseline: full budget, pick the best of the checkpoints scored every 500
  steps with the sample-based scorer (which never sees the target);
* clip-s: stop after 5 score evaluations (every 50 steps) without a gain;
* few-iters: a fixed budget equal to the mean clip-s stop;
* dvar: the fixed-batch variance rule.

Quality is the oracle cosine against the hidden target embedding. Medians
and interquartile ranges are over seeds.

    python3 demos/04_protocols.py [n_seeds]
"""

import sys
import time

from dvar_lab import harness as H

n = int(sys.argv[1]) if len(sys.argv) > 1 else 5
seeds = range(n)
results = {"baseline": [], "clip-s": [], "few-iters": [], "dvar": []}


def timed(fn, cfg):
    t0 = time.perf_counter()
    rec = fn(cfg)
    return rec, time.perf_counter() - t0


clip_runs = [timed(H.run_clip_s, H.RunConfig(seed=s)) for s in seeds]
few = H.compute_few_iters([r.stop_step for r, _ in clip_runs])
print(f"few-iters budgets from clip-s: max {few.max}, mean {few.mean}")

for s, (clip, t_clip) in zip(seeds, clip_runs):
    cfg = H.RunConfig(seed=s)
    for name, (rec, t) in (("baseline", timed(H.run_baseline_original, cfg)),
                           ("clip-s", (clip, t_clip)),
                           ("few-iters", timed(lambda c: H.run_few_iters(c, few.mean), cfg)),
                           ("dvar", timed(H.run_inversion, H.dvar_config(cfg)))):
        results[name].append((rec.stop_step, rec.oracle_score(), t))

print(f"{'protocol':10s} {'steps (median [q1, q3])':>28s} {'score':>20s} {'seconds':>9s}")
for name, rows in results.items():
    st, sc, tt = zip(*rows)
    m, q1, q3 = H.median_iqr(st)
    ms, s1, s3 = H.median_iqr(sc)
    print(f"{name:10s} {m:10.0f} [{q1:6.0f}, {q3:6.0f}]   {ms:.4f} [{s1:.3f}, {s3:.3f}] {H.median_iqr(tt)[0]:9.2f}")

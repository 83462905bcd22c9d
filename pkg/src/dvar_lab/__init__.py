"""DVAR early stopping on a deterministic evaluation batch, plus a toy
textual-inversion testbed that exhibits the noisy-loss / flat-det-loss split."""

from .criteria import (Decision, Dvar, EmaPercentile, FixedIters, Hall, LossTrace, Patience, Trend,
                       make_criterion, read_trace, replay, write_trace)
from .diffusion import (FACTORS, EvalBatch, det_loss, forward_process, ldm_loss, make_mask, make_schedule,
                        resolve_batch, sample_eval_batch, sample_train_batch)
from .errors import ConfigError, NonFiniteError, TraceFormatError
from .harness import (RunConfig, RunRecord, ablate_randomness, compare_criteria, compute_few_iters,
                      run_baseline_original, run_clip_s, run_inversion, sweep_train_batch)
from .optim import SAM, SGD, AdamW, OptimizerConfig, make_optimizer
from .toymodel import FrozenWorld, WorldConfig, build_world, make_score_fn, score, select_init

__version__ = "0.1.0"

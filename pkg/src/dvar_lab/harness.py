"""Training runs, stopping protocols, ablations and sweeps on the toy world.

A run is a pure function of its :class:`RunConfig`. All randomness comes
from named streams derived from the master seed, one per concern (training
batches, the evaluation batch, the score bank, the initial token, resampled
factors), so changing what one stream draws never moves another.

Each step follows the usual textual-inversion loop with deterministic
evaluation: draw a fresh training batch, take an optimizer step, evaluate
``L_det`` on the stored batch, feed the stopper.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from . import serialize
from .criteria import Decision, LossTrace, make_criterion, replay
from .diffusion import (FACTORS, DEFAULT_CHUNK, EvalBatch, det_loss, make_mask, sample_eval_batch,
                        sample_train_batch)
from .errors import ConfigError, NonFiniteError
from .optim import SAM, OptimizerConfig, make_optimizer
from .toymodel import (INIT_STRATEGIES, SCORE_KINDS, FrozenWorld, WorldConfig, build_world, loss_and_grad,
                       make_score_fn, score, select_init)

SCHEMA = 1
STOPPER_SOURCES = ("det_loss", "train_loss", "score")
ROW_KEYS = ("step", "train_loss", "det_loss", "grad_norm", "ratio", "score")

# Toy stand-ins for the paper's protocol constants.
TOY_BUDGET = 5000
PAPER_BUDGET = 6100
TOY_MIN_DELTA = 0.005
PAPER_MIN_DELTA = 0.05

_STREAM_IDS = {"train": 1, "eval": 2, "score": 3, "init": 4, "resample": 5}


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for one named concern of one run."""
    return np.random.default_rng([int(seed), _STREAM_IDS[name], *map(int, extra)])


def _factor_id(factor: Optional[str]) -> int:
    return 0 if factor is None else FACTORS.index(factor) + 1


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    stopper: dict = field(default_factory=lambda: {"kind": "dvar", "window": 282, "threshold": 0.39})
    stopper_source: str = "det_loss"
    max_steps: int = TOY_BUDGET
    eval_batch_size: int = 4
    unfixed: tuple = ()
    train_batch_size: int = 4
    score_kind: str = "oracle_cosine"
    score_every: int = 0
    score_samples: int = 8
    init_strategy: str = "random"
    init_index: Optional[int] = None
    min_delta: float = TOY_MIN_DELTA
    chunk: int = DEFAULT_CHUNK

    def __post_init__(self):
        object.__setattr__(self, "unfixed", tuple(self.unfixed))
        object.__setattr__(self, "stopper", dict(self.stopper))
        if isinstance(self.seed, bool) or int(self.seed) != self.seed:
            raise ConfigError("seed", f"must be an integer, got {self.seed!r}")
        for name in ("max_steps", "eval_batch_size", "train_batch_size", "score_samples", "chunk"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(name, f"must be an integer >= 1, got {value!r}")
        if not isinstance(self.score_every, (int, np.integer)) or self.score_every < 0:
            raise ConfigError("score_every", f"must be an integer >= 0, got {self.score_every!r}")
        make_mask(self.unfixed)
        if self.stopper_source not in STOPPER_SOURCES:
            raise ConfigError("stopper_source", f"must be one of {list(STOPPER_SOURCES)}, got {self.stopper_source!r}")
        if self.stopper_source == "score" and self.score_every == 0:
            raise ConfigError("score_every", "a score-driven stopper needs score_every >= 1")
        if self.score_kind not in SCORE_KINDS:
            raise ConfigError("score_kind", f"must be one of {list(SCORE_KINDS)}, got {self.score_kind!r}")
        if self.init_strategy not in INIT_STRATEGIES:
            raise ConfigError("init_strategy", f"must be one of {list(INIT_STRATEGIES)}, got {self.init_strategy!r}")
        if self.init_strategy == "manual" and self.init_index is None:
            raise ConfigError("init_index", "manual init needs an index")
        make_criterion(self.stopper)  # validates kind and parameters

    @property
    def fixed_mask(self) -> dict:
        return make_mask(self.unfixed)

    def to_dict(self) -> dict:
        d = {"schema": SCHEMA}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("world", "optimizer"):
                value = value.to_dict()
            elif f.name == "unfixed":
                continue
            d[f.name] = value
        d["fixed_mask"] = self.fixed_mask
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        schema = d.pop("schema", SCHEMA)
        if schema != SCHEMA:
            raise ConfigError("schema", f"unsupported schema {schema!r}; expected {SCHEMA}")
        known = {f.name for f in fields(cls)}
        if "fixed_mask" in d:
            mask = d.pop("fixed_mask")
            if not isinstance(mask, dict) or set(mask) - set(FACTORS):
                raise ConfigError("fixed_mask", f"must map factor names {list(FACTORS)} to booleans")
            d["unfixed"] = tuple(f for f in FACTORS if not mask.get(f, True))
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown config field")
        if "world" in d:
            if not isinstance(d["world"], dict):
                raise ConfigError("world", "must be an object")
            d["world"] = WorldConfig.from_dict(d["world"])
        if "optimizer" in d:
            if not isinstance(d["optimizer"], dict):
                raise ConfigError("optimizer", "must be an object")
            d["optimizer"] = OptimizerConfig.from_dict(d["optimizer"])
        if "stopper" in d and not isinstance(d["stopper"], dict):
            raise ConfigError("stopper", "must be an object with a 'kind'")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from None

    def canonical_json(self) -> str:
        return json.dumps(json.loads(serialize.dumps(self.to_dict(), indent=None)), sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()[:12]


def apply_overrides(config: RunConfig, overrides: Sequence[str]) -> RunConfig:
    """Apply ``key=value`` strings; dotted keys reach into nested objects.

    Values are parsed as JSON where possible, otherwise taken as strings.
    """
    d = config.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.strip().split(".")
        node = d
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(key, "unknown config field")
            node = node[p]
        if parts[0] not in d and parts[0] != "unfixed":
            raise ConfigError(key, "unknown config field")
        if parts == ["unfixed"]:
            d.pop("fixed_mask", None)
            value = [value] if isinstance(value, str) else value
            d["fixed_mask"] = make_mask([v for v in value if v])
            continue
        node[parts[-1]] = value
    return RunConfig.from_dict(d)


@dataclass
class RunRecord:
    config: RunConfig
    rows: list
    stop_step: int
    stop_reason: str            # "criterion", "budget" or "aborted"
    final_v: np.ndarray
    init_v: np.ndarray
    eval_batch: EvalBatch
    timing: dict = field(default_factory=dict)
    valid: bool = True
    error: Optional[str] = None
    grad_evals: int = 0
    checkpoints: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def series(self, key: str) -> np.ndarray:
        if key not in ROW_KEYS:
            raise KeyError(key)
        return np.array([np.nan if r[key] is None else r[key] for r in self.rows], dtype=float)

    def trace(self, key: str = "det_loss") -> LossTrace:
        steps = np.array([r["step"] for r in self.rows if r[key] is not None], dtype=np.int64)
        values = np.array([r[key] for r in self.rows if r[key] is not None], dtype=float)
        return LossTrace(steps, values)

    def oracle_score(self, world: FrozenWorld | None = None) -> float:
        world = world or build_world(self.config.world, self.config.seed)
        return score(world, make_score_fn(world, "oracle_cosine"), self.final_v)

    def summary(self) -> dict:
        last = self.rows[-1] if self.rows else {}
        return {
            "config_hash": self.config.config_hash(),
            "seed": self.config.seed,
            "stop_step": self.stop_step,
            "stop_reason": self.stop_reason,
            "final_det_loss": last.get("det_loss"),
            "final_train_loss": last.get("train_loss"),
            "final_oracle_score": self.oracle_score() if self.valid else None,
            "grad_evals": self.grad_evals,
            "valid": self.valid,
        }

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "stop_step": self.stop_step,
            "stop_reason": self.stop_reason,
            "valid": self.valid,
            "error": self.error,
            "grad_evals": self.grad_evals,
            "init_v": self.init_v,
            "final_v": self.final_v,
            "eval_batch": self.eval_batch.to_dict(),
            "checkpoints": {str(k): v for k, v in self.checkpoints.items()},
            "extras": self.extras,
        }

    def save(self, out_dir) -> Path:
        """Write run.json, steps.jsonl, summary.csv and timing.json.

        Wall times go to their own file so the other three depend on the
        config alone and are byte-identical across repeated runs.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        serialize.write_json(out / "run.json", self.to_dict())
        serialize.write_jsonl(out / "steps.jsonl", self.rows, keys=ROW_KEYS)
        summ = self.summary()
        serialize.write_csv(out / "summary.csv", list(summ), [list(summ.values())])
        serialize.write_json(out / "timing.json", self.timing)
        return out

    @classmethod
    def load(cls, out_dir) -> "RunRecord":
        out = Path(out_dir)
        d = serialize.read_json(out / "run.json")
        rows = serialize.read_jsonl(out / "steps.jsonl")
        timing = serialize.read_json(out / "timing.json") if (out / "timing.json").exists() else {}
        return cls(
            config=RunConfig.from_dict(d["config"]),
            rows=rows,
            stop_step=d["stop_step"],
            stop_reason=d["stop_reason"],
            final_v=np.asarray(d["final_v"], dtype=float),
            init_v=np.asarray(d["init_v"], dtype=float),
            eval_batch=EvalBatch.from_dict(d["eval_batch"]),
            timing=timing,
            valid=d["valid"],
            error=d["error"],
            grad_evals=d["grad_evals"],
            checkpoints={int(k): np.asarray(v) for k, v in d["checkpoints"].items()},
            extras=d.get("extras", {}),
        )


def run_dir(root, config: RunConfig, tag: str = "run") -> Path:
    return Path(root) / f"{tag}-{config.config_hash()}"


def make_eval_batch(world, config: RunConfig, B: int | None = None, unfixed=None) -> EvalBatch:
    """The stored evaluation batch. Depends on (seed, B) only; the mask is applied on top."""
    B = config.eval_batch_size if B is None else B
    unfixed = config.unfixed if unfixed is None else unfixed
    batch = sample_eval_batch(world, B, stream(config.seed, "eval", B))
    return batch.with_mask(make_mask(unfixed))


def _resample_rng(config: RunConfig, B: int, unfixed) -> np.random.Generator:
    return stream(config.seed, "resample", B, *sorted(_factor_id(f) for f in unfixed))


Scorer = Callable[[np.ndarray, int], float]


def run_inversion(config: RunConfig, scorer: Scorer | None = None, on_step: Callable | None = None,
                  checkpoint_on_score: bool = False, world: FrozenWorld | None = None) -> RunRecord:
    """Train one concept embedding under ``config``.

    ``scorer(v, step)`` replaces the configured score function (useful for
    tests and for plugging in an external metric). ``on_step(step, v, row)``
    is called after each recorded step; it must not touch the run's streams.
    """
    t_start = time.perf_counter()
    world = world or build_world(config.world, config.seed)
    rng_train = stream(config.seed, "train")
    eval_batch = make_eval_batch(world, config)
    rng_resample = _resample_rng(config, eval_batch.size, config.unfixed) if config.unfixed else None

    if scorer is None:
        score_fn = make_score_fn(world, config.score_kind, config.score_samples, rng=stream(config.seed, "score"))
        scorer = lambda v, step: score(world, score_fn, v)  # noqa: E731
    init_score_fn = None
    if config.init_strategy == "best":
        init_score_fn = make_score_fn(world, "sample_similarity", config.score_samples, rng=stream(config.seed, "score"))
    v = select_init(world, config.init_strategy, init_score_fn, stream(config.seed, "init"), config.init_index)
    init_v = v.copy()

    opt = make_optimizer(config.optimizer)
    stopper = make_criterion(config.stopper)
    rows, checkpoints = [], {}
    t_train = t_det = t_score = 0.0
    stop_step, stop_reason, valid, error = config.max_steps, "budget", True, None

    for step in range(1, config.max_steps + 1):
        try:
            t0 = time.perf_counter()
            batch = sample_train_batch(world, config.train_batch_size, rng_train)
            if isinstance(opt, SAM):
                first = {}

                def grad_fn(u):
                    loss, g = loss_and_grad(world, batch, u)
                    first.setdefault("loss", loss)
                    first.setdefault("grad", g)
                    return g

                v_next = opt.step(v, grad_fn)
                train_loss, grad = first["loss"], first["grad"]
            else:
                train_loss, grad = loss_and_grad(world, batch, v)
                if not np.isfinite(train_loss):
                    raise NonFiniteError(f"training loss is {train_loss}")
                v_next = opt.step(v, grad)
            if not np.all(np.isfinite(v_next)):
                raise NonFiniteError("embedding became non-finite")
            v = v_next
            t1 = time.perf_counter()

            det = det_loss(world.denoiser, eval_batch, world, v, rng=rng_resample, chunk=config.chunk)
            if not np.isfinite(det):
                raise NonFiniteError(f"det loss is {det}")
            t2 = time.perf_counter()

            s = None
            if config.score_every and step % config.score_every == 0:
                s = float(scorer(v, step))
                if not np.isfinite(s):
                    raise NonFiniteError(f"score is {s}")
                if checkpoint_on_score:
                    checkpoints[step] = v.copy()
            t3 = time.perf_counter()

            decision = Decision(False, None)
            source = {"det_loss": det, "train_loss": train_loss, "score": s}[config.stopper_source]
            if source is not None or config.stopper.get("kind") == "fixed_iters":
                decision = stopper.observe(source, step=step)
            t4 = time.perf_counter()
            t_train += t1 - t0
            t_det += (t2 - t1) + (t4 - t3)
            t_score += t3 - t2
        except NonFiniteError as exc:
            stop_step, stop_reason, valid, error = step - 1, "aborted", False, f"step {step}: {exc}"
            break
        rows.append({
            "step": step,
            "train_loss": float(train_loss),
            "det_loss": float(det),
            "grad_norm": float(np.linalg.norm(grad)),
            "ratio": decision.diagnostic,
            "score": s,
        })
        if on_step is not None:
            on_step(step, v, rows[-1])
        if decision.stop:
            stop_step, stop_reason = step, "criterion"
            break

    total = time.perf_counter() - t_start
    grad_evals = getattr(opt, "grad_evals", opt.step_count) * config.train_batch_size
    return RunRecord(
        config=config, rows=rows, stop_step=stop_step, stop_reason=stop_reason, final_v=v, init_v=init_v,
        eval_batch=eval_batch, valid=valid, error=error, grad_evals=int(grad_evals), checkpoints=checkpoints,
        timing={"train": t_train, "det_eval": t_det, "score_eval": t_score,
                "other": max(total - t_train - t_det - t_score, 0.0), "total": total},
    )


# -- protocols ------------------------------------------------------------------------------


def dvar_config(config: RunConfig, window: int = 282, threshold: float = 0.39) -> RunConfig:
    return replace(config, stopper={"kind": "dvar", "window": window, "threshold": threshold},
                   stopper_source="det_loss")


def budget_config(config: RunConfig, budget: int | None = None) -> RunConfig:
    budget = config.max_steps if budget is None else budget
    return replace(config, stopper={"kind": "fixed_iters", "budget": budget}, max_steps=budget)


def best_checkpoint(steps: Sequence[int], scores: Sequence[float]) -> int:
    """Index of the highest score; ties go to the earliest checkpoint."""
    if len(steps) == 0:
        raise ValueError("no checkpoints")
    return int(np.argmax(np.asarray(scores, dtype=float)))


def run_baseline_original(config: RunConfig, eval_every: int = 500, scorer: Scorer | None = None) -> RunRecord:
    """Fixed budget, score every ``eval_every`` steps, keep the best checkpoint."""
    cfg = replace(budget_config(config), score_kind="sample_similarity", score_every=eval_every,
                  score_samples=8, stopper_source="det_loss")
    rec = run_inversion(cfg, scorer=scorer, checkpoint_on_score=True)
    if rec.checkpoints:
        steps = sorted(rec.checkpoints)
        scores = [next(r["score"] for r in rec.rows if r["step"] == s) for s in steps]
        best = steps[best_checkpoint(steps, scores)]
        rec.final_v = rec.checkpoints[best].copy()
        rec.extras["selected_step"] = best
        rec.extras["selected_score"] = scores[steps.index(best)]
    return rec


def clip_s_config(config: RunConfig, eval_every: int = 50, patience: int = 5, min_delta: float | None = None,
                  reference: str = "best") -> RunConfig:
    min_delta = config.min_delta if min_delta is None else min_delta
    return replace(config, score_kind="sample_similarity", score_every=eval_every, stopper_source="score",
                   stopper={"kind": "patience", "patience": patience, "min_delta": min_delta, "reference": reference})


def run_clip_s(config: RunConfig, eval_every: int = 50, patience: int = 5, min_delta: float | None = None,
               scorer: Scorer | None = None) -> RunRecord:
    """Score-patience stopping: ``patience`` evaluations without a gain above ``min_delta``."""
    return run_inversion(clip_s_config(config, eval_every, patience, min_delta), scorer=scorer)


class FewIters(NamedTuple):
    max: int
    mean: int


def compute_few_iters(stop_steps: Sequence[int]) -> FewIters:
    """Budgets taken from a set of score-patience runs: their max and rounded mean."""
    steps = [int(s) for s in stop_steps]
    if not steps:
        raise ValueError("compute_few_iters needs at least one stop step")
    return FewIters(max(steps), int(np.floor(np.mean(steps) + 0.5)))


def run_few_iters(config: RunConfig, budget: int) -> RunRecord:
    return run_inversion(budget_config(config, budget))


# -- parallel helpers -----------------------------------------------------------------------


def _run_one(args):
    fn, cfg = args
    return fn(cfg)


def map_runs(fn, configs: Sequence[RunConfig], jobs: int = 1) -> list:
    """Apply ``fn`` to each config, optionally across processes. Order is kept."""
    if jobs <= 1 or len(configs) <= 1:
        return [fn(c) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, [(fn, c) for c in configs]))


# -- ablation -------------------------------------------------------------------------------


def trend_amplitude(trace) -> float:
    """Mean of the first tenth minus mean of the last tenth."""
    x = np.asarray(trace, dtype=float)
    k = max(1, len(x) // 10)
    return float(np.mean(x[:k]) - np.mean(x[-k:]))


def noise_amplitude(trace) -> float:
    """Step-to-step noise level, std of first differences over sqrt(2)."""
    x = np.asarray(trace, dtype=float)
    if len(x) < 2:
        return 0.0
    return float(np.std(np.diff(x)) / np.sqrt(2.0))


@dataclass
class AblationCell:
    factor: Optional[str]
    batch_size: int
    trace: np.ndarray
    dvar_stop: Optional[int]    # first firing step of a DVAR run alongside training
    trend: float
    noise: float

    @property
    def snr(self) -> float:
        return self.trend / self.noise if self.noise > 0 else float("inf")


@dataclass
class AblationReport:
    seed: int
    factors: tuple
    batch_sizes: tuple
    cells: dict                 # (factor, B) -> AblationCell
    det_trace: np.ndarray

    def table(self) -> list:
        return [[f or "none", B, c.dvar_stop, c.trend, c.noise, c.snr]
                for (f, B), c in self.cells.items()]

    header = ["factor", "batch_size", "dvar_stop", "trend", "noise", "snr"]


def ablate_randomness(config: RunConfig, factors: Sequence[Optional[str]] = (), eval_batch_sizes: Sequence[int] = (),
                      dvar: dict | None = None, cells: Sequence[tuple] | None = None) -> AblationReport:
    """Train once at full budget and evaluate one extra batch per (factor, B) cell.

    Each cell unfixes exactly one factor (``None`` unfixes nothing). Cells
    form the grid ``factors x eval_batch_sizes`` unless ``cells`` lists the
    pairs explicitly. A streaming DVAR watches every cell during the run and
    keeps going after it fires, so the full trace is recorded. The training
    trajectory does not depend on the cells because they draw from their own
    streams.
    """
    pairs = list(cells) if cells is not None else [(f, B) for f in factors for B in eval_batch_sizes]
    for f, B in pairs:
        if f is not None and f not in FACTORS:
            raise ConfigError("factors", f"unknown factor {f!r}; valid: {list(FACTORS)}")
        if int(B) != B or B < 1:
            raise ConfigError("eval_batch_sizes", f"must be integers >= 1, got {B!r}")
    dvar = dvar or {"kind": "dvar", "window": 282, "threshold": 0.39}
    world = build_world(config.world, config.seed)
    state = []
    for f, B in pairs:
        unfixed = () if f is None else (f,)
        batch = make_eval_batch(world, config, int(B), unfixed)
        rng = _resample_rng(config, int(B), unfixed) if unfixed else None
        state.append({"key": (f, int(B)), "batch": batch, "rng": rng, "crit": make_criterion(dvar),
                      "trace": [], "stop": None})

    def on_step(step, v, row):
        for cell in state:
            x = det_loss(world.denoiser, cell["batch"], world, v, rng=cell["rng"], chunk=config.chunk)
            cell["trace"].append(x)
            if cell["crit"].observe(x, step=step).stop and cell["stop"] is None:
                cell["stop"] = step

    base = replace(budget_config(config), unfixed=())
    rec = run_inversion(base, on_step=on_step, world=world)
    out = {}
    for cell in state:
        tr = np.asarray(cell["trace"])
        f, B = cell["key"]
        out[cell["key"]] = AblationCell(f, B, tr, cell["stop"], trend_amplitude(tr), noise_amplitude(tr))
    return AblationReport(config.seed, tuple(dict.fromkeys(f for f, _ in pairs)),
                          tuple(dict.fromkeys(B for _, B in pairs)), out, rec.series("det_loss"))


# -- training batch sweep -------------------------------------------------------------------


@dataclass
class SweepEntry:
    batch_size: int
    train_loss: np.ndarray
    grad_norm: np.ndarray
    dvar_train_stop: Optional[int]
    grad_evals_per_step: int
    relative_cost: float


def sweep_train_batch(config: RunConfig, batch_sizes: Sequence[int], jobs: int = 1,
                      dvar: dict | None = None) -> list:
    """Full-budget runs at several training batch sizes; DVAR replayed on the raw train loss."""
    sizes = [int(b) for b in batch_sizes]
    if any(b < 1 for b in sizes):
        raise ConfigError("batch_sizes", "must be >= 1")
    dvar = dvar or {"kind": "dvar", "window": 282, "threshold": 0.39}
    configs = [replace(budget_config(config), train_batch_size=b) for b in sizes]
    records = map_runs(run_inversion, configs, jobs)
    per_step = [b * (2 if config.optimizer.kind == "sam_sgd" else 1) for b in sizes]
    base = min(per_step)
    out = []
    for b, rec, cost in zip(sizes, records, per_step):
        tl = rec.series("train_loss")
        out.append(SweepEntry(b, tl, rec.series("grad_norm"), replay(tl, dvar), cost, cost / base))
    return out


# -- criteria comparison --------------------------------------------------------------------


def default_comparison_suite(budget: int, window: int = 282) -> dict:
    return {
        "dvar": {"kind": "dvar", "window": window, "threshold": 0.39},
        "ema_percentile": {"kind": "ema_percentile", "window": window, "smoothing": 0.1, "threshold": 0.01},
        "hall": {"kind": "hall", "window": window, "threshold": 0.05},
        "trend": {"kind": "trend", "window": window, "threshold": 1e-4},
        "fixed_iters": {"kind": "fixed_iters", "budget": budget},
    }


def compare_criteria(trace_or_config, suite: dict | None = None) -> dict:
    """Replay every criterion of ``suite`` on one trace.

    Accepts a :class:`LossTrace`, a sequence of values, a :class:`RunRecord`
    (its det-loss trace) or a :class:`RunConfig` (run at full budget first).
    Returns ``{name: {"stop_step": int | None, "diagnostic": float | None}}``.
    """
    obj = trace_or_config
    if isinstance(obj, RunConfig):
        obj = run_inversion(budget_config(obj))
    if isinstance(obj, RunRecord):
        obj = obj.trace("det_loss")
    trace = obj if isinstance(obj, LossTrace) else LossTrace.from_values(obj)
    if suite is None:
        budget = int(trace.steps[-1]) if len(trace) else 1
        suite = default_comparison_suite(budget)
    table = {}
    for name, cfg in suite.items():
        crit = make_criterion(cfg)
        stop, diag = None, None
        for s, v in zip(trace.steps, trace.values):
            d = crit.observe(v, step=int(s))
            diag = d.diagnostic
            if d.stop:
                stop = int(s)
                break
        table[name] = {"stop_step": stop, "diagnostic": diag}
    return table


def median_iqr(values) -> tuple:
    """(median, q1, q3) of the finite entries."""
    x = np.asarray([v for v in values if v is not None], dtype=float)
    if len(x) == 0:
        return (float("nan"),) * 3
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    return float(med), float(q1), float(q3)

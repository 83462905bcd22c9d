"""``dvar-lab`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
The master seed comes from ``--seed``, else ``DVAR_LAB_SEED``, else the
config file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness, plotting, serialize
from .criteria import CRITERION_KINDS, LossTrace, make_criterion, read_trace
from .diffusion import FACTORS
from .errors import ConfigError, NonFiniteError, TraceFormatError
from .harness import RunConfig

PROTOCOLS = ("dvar", "baseline", "clip-s", "few-iters")

CRITERION_DEFAULT_THRESHOLD = {"dvar": 0.39, "ema_percentile": 0.01, "hall": 0.05, "trend": 1e-4}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError("config", f"file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be an object")
        if "schema" not in data:
            raise ConfigError("schema", "config files must declare \"schema\": 1")
        cfg = RunConfig.from_dict(data)
    else:
        cfg = RunConfig()
    cfg = harness.apply_overrides(cfg, getattr(args, "overrides", None) or [])
    env = os.environ.get("DVAR_LAB_SEED")
    if env is not None and env.strip():
        try:
            cfg = replace(cfg, seed=int(env))
        except ValueError:
            raise ConfigError("DVAR_LAB_SEED", f"must be an integer, got {env!r}") from None
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "paper_scale", False):
        cfg = replace(cfg, max_steps=harness.PAPER_BUDGET, min_delta=harness.PAPER_MIN_DELTA)
    return cfg


def _emit(line: str) -> None:
    sys.stdout.write(line + "\n")
    sys.stdout.flush()


# -- train ----------------------------------------------------------------------------------


def _train_record(cfg: RunConfig, protocol: str, budget, few_seeds, few_mode):
    if protocol == "dvar":
        return harness.run_inversion(cfg), {}
    if protocol == "baseline":
        return harness.run_baseline_original(cfg), {}
    if protocol == "clip-s":
        return harness.run_clip_s(cfg), {}
    if budget is None:
        seeds = few_seeds or list(range(cfg.seed, cfg.seed + 5))
        stops = [harness.run_clip_s(replace(cfg, seed=s)).stop_step for s in seeds]
        few = harness.compute_few_iters(stops)
        budget = few.mean if few_mode == "mean" else few.max
        extra = {"clip_s_stops": stops, "few_iters": few._asdict()}
    else:
        extra = {}
    rec = harness.run_few_iters(cfg, budget)
    return rec, extra


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.protocol not in PROTOCOLS:
        raise UsageError(f"unknown protocol {args.protocol!r}; valid protocols: {', '.join(PROTOCOLS)}")
    if args.budget is not None and args.protocol != "few-iters":
        cfg = replace(cfg, max_steps=args.budget)
    t0 = time.perf_counter()
    rec, extra = _train_record(cfg, args.protocol, args.budget if args.protocol == "few-iters" else None,
                               args.few_iters_seeds, args.few_iters_mode)
    rec.extras.update(extra)
    rec.extras["protocol"] = args.protocol
    out = harness.run_dir(args.out, rec.config, tag=args.protocol)
    rec.save(out)
    plotting.plot(plotting.PlotSpec([str(out / "steps.jsonl")], ["det_loss", "train_loss"], smooth=args.smooth,
                                    output=str(out / "losses.svg"), title=f"{args.protocol} seed {rec.config.seed}"))
    wall = time.perf_counter() - t0
    if not rec.valid:
        _emit(f"aborted at step {rec.stop_step + 1}: {rec.error} ({out})")
        return 1
    summ = rec.summary()
    _emit(f"protocol={args.protocol} seed={rec.config.seed} stop_step={rec.stop_step} reason={rec.stop_reason} "
          f"final_score={summ['final_oracle_score']:.4f} wall={wall:.2f}s dir={out}")
    return 0


# -- replay ---------------------------------------------------------------------------------


def _criterion_config(args) -> dict:
    kind = args.criterion
    if kind == "dvar":
        return {"kind": kind, "window": args.window, "threshold": args.threshold if args.threshold is not None else 0.39,
                "warmup": args.warmup}
    if kind == "ema_percentile":
        return {"kind": kind, "window": args.window, "smoothing": args.smoothing,
                "threshold": args.threshold if args.threshold is not None else 0.01}
    if kind in ("hall", "trend"):
        return {"kind": kind, "window": args.window,
                "threshold": args.threshold if args.threshold is not None else CRITERION_DEFAULT_THRESHOLD[kind]}
    if kind == "patience":
        return {"kind": kind, "patience": args.patience, "min_delta": args.min_delta, "reference": args.reference}
    if args.budget is None:
        raise ConfigError("budget", "fixed_iters needs --budget")
    return {"kind": kind, "budget": args.budget}


def cmd_replay(args) -> int:
    path = Path(args.trace)
    if not path.exists():
        raise ConfigError("trace", f"file not found: {path}")
    if path.suffix == ".jsonl":
        try:
            cols = plotting.load_series(path, [args.series])
        except KeyError:
            raise ConfigError("series", f"series {args.series!r} not found in {path}") from None
        steps, vals = cols[args.series]
        ok = np.isfinite(vals)
        trace = LossTrace(steps[ok].astype(np.int64), vals[ok])
    else:
        trace = read_trace(path)
    cfg = _criterion_config(args)
    crit = make_criterion(cfg)
    stop, diag = None, None
    for s, v in zip(trace.steps, trace.values):
        d = crit.observe(v, step=int(s))
        diag = d.diagnostic
        if d.stop:
            stop = int(s)
            break
    _emit(f"stop_step {stop if stop is not None else 'never'}")
    _emit(f"diagnostic {serialize.fmt_float(diag) if diag is not None else 'undefined'}")
    return 0


# -- ablate / sweep / compare ---------------------------------------------------------------


def _ablate_one(args_tuple):
    cfg, factors, sizes = args_tuple
    return harness.ablate_randomness(cfg, factors, sizes)


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    factors = [None if f in ("none", "") else f for f in args.factors.split(",")]
    for f in factors:
        if f is not None and f not in FACTORS:
            raise ConfigError("factors", f"unknown factor {f!r}; valid: {list(FACTORS)} or none")
    seeds = args.seeds or [cfg.seed]
    out = Path(args.out) / f"ablate-{cfg.config_hash()}"
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(replace(cfg, seed=s), factors, args.sizes) for s in seeds]
    reports = harness.map_runs(_ablate_one, jobs, args.jobs)
    rows, panels = [], []
    for rep in reports:
        for (f, B), cell in rep.cells.items():
            name = f"{f or 'none'}-B{B}-seed{rep.seed}"
            serialize.write_jsonl(out / f"{name}.jsonl",
                                  [{"step": i + 1, "det_loss": float(x)} for i, x in enumerate(cell.trace)])
            rows.append([rep.seed, f or "none", B, cell.dvar_stop, cell.trend, cell.noise, cell.snr])
            _emit(f"seed={rep.seed} factor={f or 'none'} B={B} dvar_stop={cell.dvar_stop or 'never'} "
                  f"trend={cell.trend:.4g} noise={cell.noise:.4g}")
            steps = np.arange(1, len(cell.trace) + 1, dtype=float)
            panels.append((name, [plotting.Series("det_loss", steps, cell.trace)]))
    serialize.write_csv(out / "ablation.csv", ["seed", "factor", "batch_size", "dvar_stop", "trend", "noise", "snr"], rows)
    (out / "ablation.svg").write_text(plotting.grid_svg(panels), encoding="utf-8")
    _emit(f"report {out / 'ablation.csv'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out) / f"sweep-{cfg.config_hash()}"
    out.mkdir(parents=True, exist_ok=True)
    entries = harness.sweep_train_batch(cfg, args.sizes, jobs=args.jobs)
    rows, series = [], []
    for e in entries:
        steps = np.arange(1, len(e.train_loss) + 1, dtype=float)
        serialize.write_jsonl(out / f"B{e.batch_size}.jsonl",
                              [{"step": int(s), "train_loss": float(a), "grad_norm": float(g)}
                               for s, a, g in zip(steps, e.train_loss, e.grad_norm)])
        rows.append([e.batch_size, e.dvar_train_stop, e.grad_evals_per_step, e.relative_cost])
        series.append(plotting.Series(f"grad_norm B={e.batch_size}", steps,
                                      plotting.moving_average(e.grad_norm, args.smooth)))
        _emit(f"B={e.batch_size} dvar_on_train={e.dvar_train_stop or 'never'} "
              f"grad_evals_per_step={e.grad_evals_per_step} relative_cost={e.relative_cost:g}")
    serialize.write_csv(out / "sweep.csv", ["batch_size", "dvar_train_stop", "grad_evals_per_step", "relative_cost"], rows)
    (out / "grad_norm.svg").write_text(plotting.render_svg(series, title="gradient norm"), encoding="utf-8")
    _emit(f"report {out / 'sweep.csv'}")
    return 0


def cmd_compare(args) -> int:
    if args.run:
        src = harness.RunRecord.load(args.run)
        name = Path(args.run).name
    elif args.trace:
        src = read_trace(args.trace)
        name = Path(args.trace).stem
    else:
        src = harness.budget_config(_load_config(args))
        name = f"compare-{src.config_hash()}"
    table = harness.compare_criteria(src)
    header = ["criterion", "stop_step", "diagnostic"]
    rows = [[k, v["stop_step"], v["diagnostic"]] for k, v in table.items()]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    serialize.write_csv(out / f"{name}-criteria.csv", header, rows)
    _emit(" ".join(f"{k}={v['stop_step'] if v['stop_step'] is not None else 'never'}" for k, v in table.items()))
    return 0


def cmd_plot(args) -> int:
    for p in args.inputs:
        if not Path(p).exists():
            raise ConfigError("inputs", f"file not found: {p}")
    spec = plotting.PlotSpec(args.inputs, args.series.split(","), smooth=args.smooth, output=args.out,
                             title=args.title or "", normalize=args.normalize)
    try:
        plotting.plot(spec)
    except KeyError as exc:
        raise ConfigError("series", f"series {exc.args[0]!r} not found in input") from None
    _emit(f"wrote {args.out}")
    return 0


# -- parser ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dvar-lab", description="DVAR early stopping and the toy textual-inversion testbed")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add_config(sp):
        sp.add_argument("--config", help="JSON run config (schema 1)")
        sp.add_argument("--seed", type=int, help="master seed (overrides DVAR_LAB_SEED and the config)")
        sp.add_argument("--paper-scale", action="store_true",
                        help="paper protocol constants: budget 6100, CLIP-s min_delta 0.05")
        sp.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides, e.g. optimizer.lr=0.01")

    t = sub.add_parser("train", help="run one training protocol")
    add_config(t)
    t.add_argument("--protocol", default="dvar", help=f"one of {', '.join(PROTOCOLS)}")
    t.add_argument("--budget", type=int, help="step budget (few-iters: skip the CLIP-s calibration)")
    t.add_argument("--few-iters-seeds", type=_int_list, help="seeds of the CLIP-s runs that set the few-iters budget")
    t.add_argument("--few-iters-mode", choices=("mean", "max"), default="mean")
    t.add_argument("--smooth", type=int, default=1, help="moving-average window for the loss plot")
    t.add_argument("--out", default="runs")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("replay", help="apply a criterion to a recorded trace")
    r.add_argument("trace", help="step,value CSV (or steps.jsonl with --series)")
    r.add_argument("--criterion", choices=CRITERION_KINDS, default="dvar")
    r.add_argument("--window", type=int, default=282)
    r.add_argument("--threshold", type=float, default=None,
                   help="dvar 0.39, ema_percentile 0.01, hall 0.05, trend 1e-4 unless given")
    r.add_argument("--warmup", type=int, default=0)
    r.add_argument("--smoothing", type=float, default=0.1)
    r.add_argument("--patience", type=int, default=5)
    r.add_argument("--min-delta", type=float, default=0.05)
    r.add_argument("--reference", choices=("best", "last"), default="best")
    r.add_argument("--budget", type=int)
    r.add_argument("--series", default="det_loss", help="column to read from a .jsonl input")
    r.set_defaults(func=cmd_replay)

    a = sub.add_parser("ablate", help="unfix one randomness factor at a time")
    add_config(a)
    a.add_argument("--factors", default=",".join(FACTORS))
    a.add_argument("--sizes", type=_int_list, default=[4, 32, 128, 512])
    a.add_argument("--seeds", type=_int_list)
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--out", default="runs")
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("sweep", help="training batch-size sweep")
    add_config(s)
    s.add_argument("--sizes", type=_int_list, default=[2, 8, 32, 128])
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--smooth", type=int, default=50)
    s.add_argument("--out", default="runs")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare", help="replay all criteria on one trace")
    add_config(c)
    c.add_argument("--run", help="a run directory written by train")
    c.add_argument("--trace", help="a step,value CSV")
    c.add_argument("--out", default="runs")
    c.set_defaults(func=cmd_compare)

    pl = sub.add_parser("plot", help="render series to SVG")
    pl.add_argument("inputs", nargs="+")
    pl.add_argument("--series", default="det_loss")
    pl.add_argument("--smooth", type=int, default=1)
    pl.add_argument("--normalize", action="store_true", help="min-max scale each series to [0, 1]")
    pl.add_argument("--title")
    pl.add_argument("--out", default="plot.svg")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "smooth", 1) < 1:
            raise ConfigError("smooth", "must be >= 1")
        if getattr(args, "jobs", 1) < 1:
            raise ConfigError("jobs", "must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, TraceFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Streaming early-stopping criteria and offline replay.

Every criterion is a small state machine with the same surface::

    crit = Dvar(window=282, threshold=0.39)
    for step, loss in enumerate(losses, 1):
        if crit.observe(loss, step=step).stop:
            break

``observe`` takes one scalar per call and returns a :class:`Decision`.
Non-finite inputs raise :class:`~dvar_lab.errors.NonFiniteError` before any
state is touched, so a caller may catch the error and keep feeding values.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError, NonFiniteError, TraceFormatError

DEFAULT_WINDOW = 282
DEFAULT_ALPHA = 0.39
EPS_VAR = 1e-30

CRITERION_KINDS = ("dvar", "ema_percentile", "hall", "trend", "patience", "fixed_iters")


@dataclass(frozen=True)
class Decision:
    stop: bool
    diagnostic: Optional[float] = None


CONTINUE = Decision(False, None)


def _finite(x) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise NonFiniteError(f"non-finite observation {x!r}")
    return x


def _check_window(n, name="window", minimum=1):
    if isinstance(n, bool) or int(n) != n or n < minimum:
        raise ConfigError(f"stopper.{name}", f"must be an integer >= {minimum}, got {n!r}")
    return int(n)


def _check_threshold(x, name="threshold"):
    if not (isinstance(x, (int, float)) and math.isfinite(x) and x >= 0):
        raise ConfigError(f"stopper.{name}", f"must be a finite non-negative number, got {x!r}")
    return float(x)


class _Ring:
    """Fixed-capacity buffer of the most recent values, oldest first on read."""

    def __init__(self, capacity: int):
        self.data = np.empty(capacity)
        self.capacity = capacity
        self.size = 0
        self.head = 0  # next write slot

    def push(self, x: float) -> Optional[float]:
        evicted = self.data[self.head] if self.size == self.capacity else None
        self.data[self.head] = x
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return evicted

    def values(self) -> np.ndarray:
        if self.size < self.capacity:
            return self.data[:self.size].copy()
        return np.concatenate([self.data[self.head:], self.data[:self.head]])

    @property
    def full(self) -> bool:
        return self.size == self.capacity


class Dvar:
    """Ratio of the rolling variance over the last ``window`` values to the
    variance of the whole history; stop once it drops below ``threshold``.

    Both variances use the population convention. The global moments are kept
    with Welford's update; the rolling variance is recomputed from the ring
    buffer each step, which is exact and costs O(window).
    """

    kind = "dvar"

    def __init__(self, window: int = DEFAULT_WINDOW, threshold: float = DEFAULT_ALPHA,
                 warmup: int = 0, eps_var: float = EPS_VAR):
        self.window = _check_window(window)
        self.threshold = _check_threshold(threshold)
        if not 0 < self.threshold < 1:
            raise ConfigError("stopper.threshold", f"must lie in (0, 1), got {threshold!r}")
        self.warmup = _check_window(warmup, "warmup", minimum=0)
        self.eps_var = float(eps_var)
        self.buffer = _Ring(self.window)
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.last_ratio: Optional[float] = None

    @property
    def global_var(self) -> float:
        return self.m2 / self.count if self.count else 0.0

    @property
    def rolling_var(self) -> float:
        return float(np.var(self.buffer.values())) if self.buffer.size else 0.0

    def observe(self, value, step=None) -> Decision:
        x = _finite(value)
        self.buffer.push(x)
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)
        self.last_ratio = None
        if self.count < self.window + self.warmup:
            return CONTINUE
        total = self.global_var
        if total <= self.eps_var:
            return CONTINUE
        ratio = self.rolling_var / total
        self.last_ratio = ratio
        return Decision(ratio < self.threshold, ratio)


class EmaPercentile:
    """Relative change of an exponential moving average over ``lag`` steps.

    statistic = (EMA_t - EMA_{t-lag}) / EMA_{t-lag}, stop when its absolute
    value is below ``threshold``. Not shift-invariant: adding a constant to the
    loss changes the denominator.
    """

    kind = "ema_percentile"

    def __init__(self, window: int = DEFAULT_WINDOW, smoothing: float = 0.1,
                 threshold: float = 0.01, absolute: bool = True):
        self.window = _check_window(window)
        if not 0 < smoothing <= 1:
            raise ConfigError("stopper.smoothing", f"must lie in (0, 1], got {smoothing!r}")
        self.smoothing = float(smoothing)
        self.threshold = _check_threshold(threshold)
        self.absolute = bool(absolute)
        self.history: deque = deque(maxlen=self.window + 1)
        self.ema: Optional[float] = None

    def observe(self, value, step=None) -> Decision:
        x = _finite(value)
        self.ema = x if self.ema is None else self.smoothing * x + (1 - self.smoothing) * self.ema
        self.history.append(self.ema)
        if len(self.history) <= self.window:
            return CONTINUE
        past = self.history[0]
        if past == 0:
            return CONTINUE
        stat = (self.ema - past) / past
        s = abs(stat) if self.absolute else stat
        return Decision(s < self.threshold, stat)


class Hall:
    """(rolling max - rolling min) / rolling mean over ``window`` values."""

    kind = "hall"

    def __init__(self, window: int = DEFAULT_WINDOW, threshold: float = 0.05, absolute: bool = True):
        self.window = _check_window(window)
        self.threshold = _check_threshold(threshold)
        self.absolute = bool(absolute)
        self.buffer = _Ring(self.window)

    def observe(self, value, step=None) -> Decision:
        x = _finite(value)
        self.buffer.push(x)
        if not self.buffer.full:
            return CONTINUE
        w = self.buffer.values()
        mean = float(np.mean(w))
        if mean == 0:
            return CONTINUE
        stat = float((w.max() - w.min()) / mean)
        s = abs(stat) if self.absolute else stat
        return Decision(s < self.threshold, stat)


class Trend:
    """Least-squares slope of the last ``window`` values against 0..window-1.

    The sums sum(y) and sum(i*y) are slid in O(1) per step and recomputed from
    the buffer once per window to stop rounding drift.
    """

    kind = "trend"

    def __init__(self, window: int = DEFAULT_WINDOW, threshold: float = 1e-4, absolute: bool = True):
        self.window = _check_window(window, minimum=2)
        self.threshold = _check_threshold(threshold)
        self.absolute = bool(absolute)
        self.buffer = _Ring(self.window)
        n = self.window
        self._sx = n * (n - 1) / 2.0
        self._denom = n * (n - 1) * (2 * n - 1) / 6.0 * n - self._sx ** 2
        self.sy = 0.0
        self.sxy = 0.0
        self._since_sync = 0

    def _resync(self):
        w = self.buffer.values()
        self.sy = float(np.sum(w))
        self.sxy = float(np.dot(np.arange(len(w)), w))
        self._since_sync = 0

    @property
    def slope(self) -> float:
        n = self.window
        return (n * self.sxy - self._sx * self.sy) / self._denom

    def observe(self, value, step=None) -> Decision:
        x = _finite(value)
        n = self.window
        size_before = self.buffer.size
        evicted = self.buffer.push(x)
        if evicted is None:
            self.sxy += size_before * x
            self.sy += x
        else:
            # shift every index down by one, drop the oldest, append at n-1
            self.sxy = self.sxy - (self.sy - evicted) + (n - 1) * x
            self.sy = self.sy - evicted + x
        self._since_sync += 1
        if self._since_sync >= n:
            self._resync()
        if not self.buffer.full:
            return CONTINUE
        slope = self.slope
        s = abs(slope) if self.absolute else slope
        return Decision(s < self.threshold, slope)


class Patience:
    """Stop after ``patience`` consecutive evaluations without an improvement
    larger than ``min_delta``.

    With ``reference='best'`` improvement is measured against the best score
    that last reset the counter; with ``'last'`` against the previous score.
    Each call is one evaluation event; the caller decides the cadence.
    """

    kind = "patience"

    def __init__(self, patience: int = 5, min_delta: float = 0.05, reference: str = "best"):
        self.patience = _check_window(patience, "patience")
        self.min_delta = _check_threshold(min_delta, "min_delta")
        if reference not in ("best", "last"):
            raise ConfigError("stopper.reference", f"must be 'best' or 'last', got {reference!r}")
        self.reference = reference
        self.best: Optional[float] = None
        self.last: Optional[float] = None
        self.evals_since_improvement = 0
        self.n_evals = 0

    def observe(self, value, step=None) -> Decision:
        x = _finite(value)
        self.n_evals += 1
        if self.best is None:
            self.best = self.last = x
            return CONTINUE
        ref = self.best if self.reference == "best" else self.last
        gain = x - ref
        if gain > self.min_delta:
            self.best = x
            self.evals_since_improvement = 0
        else:
            self.evals_since_improvement += 1
        self.last = x
        return Decision(self.evals_since_improvement >= self.patience, gain)


class FixedIters:
    """Stop once the step index reaches ``budget``.

    Without an explicit ``step`` the observation count is used.
    """

    kind = "fixed_iters"

    def __init__(self, budget: int):
        self.budget = _check_window(budget, "budget")
        self.count = 0

    def observe(self, value=None, step=None) -> Decision:
        self.count += 1
        s = self.count if step is None else int(step)
        return Decision(s >= self.budget, float(s))


_CLASSES = {c.kind: c for c in (Dvar, EmaPercentile, Hall, Trend, Patience, FixedIters)}


def make_criterion(config):
    """Build a criterion from ``{"kind": ..., **params}`` (or a kind string)."""
    if isinstance(config, str):
        config = {"kind": config}
    params = dict(config)
    kind = params.pop("kind", None)
    if kind not in _CLASSES:
        raise ConfigError("stopper.kind", f"unknown criterion {kind!r}; valid: {list(CRITERION_KINDS)}")
    try:
        return _CLASSES[kind](**params)
    except TypeError as exc:
        raise ConfigError("stopper", f"bad parameters for {kind}: {exc}") from None


@dataclass(frozen=True)
class LossTrace:
    """Strictly increasing non-negative integer steps paired with finite values."""

    steps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if steps.shape != values.shape or steps.ndim != 1:
            raise ValueError("steps and values must be 1-d and of equal length")
        if len(steps) and (steps[0] < 0 or np.any(np.diff(steps) <= 0)):
            raise ValueError("steps must be non-negative and strictly increasing")
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("trace contains NaN or Inf")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, values: Iterable[float], start: int = 1) -> "LossTrace":
        values = np.asarray(list(values), dtype=float)
        return cls(np.arange(start, start + len(values)), values)

    def __len__(self):
        return len(self.steps)


def read_trace(path) -> LossTrace:
    """Parse a ``step,value`` CSV. Errors name the 1-based file line."""
    steps, values = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["step", "value"]:
            raise TraceFormatError(1, "expected header 'step,value'")
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise TraceFormatError(line, f"expected 2 fields, got {len(row)}")
            try:
                step = int(row[0])
            except ValueError:
                raise TraceFormatError(line, f"step {row[0]!r} is not an integer") from None
            try:
                value = float(row[1])
            except ValueError:
                raise TraceFormatError(line, f"value {row[1]!r} is not a number") from None
            if step < 0:
                raise TraceFormatError(line, "step must be non-negative")
            if not math.isfinite(value):
                raise TraceFormatError(line, "value must be finite")
            if steps and step <= steps[-1]:
                raise TraceFormatError(line, "steps must be strictly increasing")
            steps.append(step)
            values.append(value)
    return LossTrace(np.array(steps, dtype=np.int64), np.array(values, dtype=float))


def write_trace(path, trace: LossTrace) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,value\n")
        for s, v in zip(trace.steps, trace.values):
            fh.write(f"{int(s)},{float(v):.17g}\n")


def replay(trace, config) -> Optional[int]:
    """First trace step at which the configured criterion fires, else None."""
    if not isinstance(trace, LossTrace):
        trace = LossTrace.from_values(trace)
    crit = make_criterion(config)
    for s, v in zip(trace.steps, trace.values):
        if crit.observe(v, step=int(s)).stop:
            return int(s)
    return None


def replay_decisions(trace, config) -> list:
    """The full Decision sequence (no early exit)."""
    if not isinstance(trace, LossTrace):
        trace = LossTrace.from_values(trace)
    crit = make_criterion(config)
    return [crit.observe(v, step=int(s)) for s, v in zip(trace.steps, trace.values)]

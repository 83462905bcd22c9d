"""First-order optimizers over a single embedding vector.

Each optimizer owns its state and returns the updated parameter from
``step``; the input array is never modified in place.

    m_t   = b1 * m_{t-1} + (1 - b1) * g
    v_t   = b2 * v_{t-1} + (1 - b2) * g^2
    theta = theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)

is the AdamW rule used here (bias-corrected moments, decoupled decay).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from .errors import ConfigError, NonFiniteError

OPTIMIZER_KINDS = ("sgd", "adamw", "sam_sgd")

DEFAULT_LR = {"sgd": 1e-2, "adamw": 5e-3, "sam_sgd": 1e-2}


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adamw"
    lr: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    momentum: float = 0.0
    rho: float = 0.05

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError("optimizer.kind", f"unknown optimizer {self.kind!r}; valid: {list(OPTIMIZER_KINDS)}")
        for name in ("beta1", "beta2", "eps", "weight_decay", "momentum", "rho"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError(f"optimizer.{name}", "must be finite")
        if self.lr is not None and not (np.isfinite(self.lr) and self.lr > 0):
            raise ConfigError("optimizer.lr", f"must be a positive finite number, got {self.lr!r}")
        if self.rho < 0:
            raise ConfigError("optimizer.rho", "must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("optimizer.beta1", "betas must lie in [0, 1)")

    @property
    def learning_rate(self) -> float:
        return DEFAULT_LR[self.kind] if self.lr is None else self.lr

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"optimizer.{sorted(unknown)[0]}", "unknown field")
        return cls(**d)


def _check_finite(grad) -> np.ndarray:
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("gradient contains NaN or Inf")
    return grad


class SGD:
    """Plain SGD with optional heavy-ball momentum (PyTorch convention)."""

    kind = "sgd"
    grad_evals_per_step = 1

    def __init__(self, lr: float = 1e-2, momentum: float = 0.0):
        if not lr > 0:
            raise ConfigError("optimizer.lr", "must be > 0")
        self.lr = lr
        self.momentum = momentum
        self.buf = None
        self.step_count = 0

    def step(self, v, grad):
        grad = _check_finite(grad)
        v = np.asarray(v, dtype=float)
        if grad.shape != v.shape:
            raise ValueError(f"gradient shape {grad.shape} != parameter shape {v.shape}")
        if self.momentum:
            self.buf = grad.copy() if self.buf is None else self.momentum * self.buf + grad
            direction = self.buf
        else:
            direction = grad
        self.step_count += 1
        return v - self.lr * direction


class AdamW:
    kind = "adamw"
    grad_evals_per_step = 1

    def __init__(self, lr: float = 5e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if not lr > 0:
            raise ConfigError("optimizer.lr", "must be > 0")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = None
        self.v = None
        self.step_count = 0

    def step(self, theta, grad):
        grad = _check_finite(grad)
        theta = np.asarray(theta, dtype=float)
        if grad.shape != theta.shape:
            raise ValueError(f"gradient shape {grad.shape} != parameter shape {theta.shape}")
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.step_count += 1
        k = self.step_count
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** k)
        v_hat = self.v / (1 - self.beta2 ** k)
        return theta - self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * theta)


class SAM:
    """Sharpness-aware minimization around an SGD base step.

    One step costs two gradient evaluations: at ``v`` and at the ascent point
    ``v + rho * g / |g|``. At an exact stationary point (``|g| = 0``) the step
    is a no-op and the base optimizer state is left alone.
    """

    kind = "sam_sgd"
    grad_evals_per_step = 2

    def __init__(self, lr: float = 1e-2, rho: float = 0.05, momentum: float = 0.0):
        if rho < 0:
            raise ConfigError("optimizer.rho", "must be >= 0")
        self.rho = rho
        self.base = SGD(lr=lr, momentum=momentum)
        self.step_count = 0
        self.grad_evals = 0

    @property
    def lr(self) -> float:
        return self.base.lr

    def step(self, v, grad_fn: Callable[[np.ndarray], np.ndarray]):
        v = np.asarray(v, dtype=float)
        g = _check_finite(grad_fn(v))
        self.grad_evals += 1
        norm = float(np.linalg.norm(g))
        self.step_count += 1
        if norm == 0:
            return v.copy()
        g_sam = _check_finite(grad_fn(v + self.rho * g / norm))
        self.grad_evals += 1
        return self.base.step(v, g_sam)


def make_optimizer(config: OptimizerConfig):
    lr = config.learning_rate
    if config.kind == "sgd":
        return SGD(lr=lr, momentum=config.momentum)
    if config.kind == "adamw":
        return AdamW(lr=lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps,
                     weight_decay=config.weight_decay)
    return SAM(lr=lr, rho=config.rho, momentum=config.momentum)

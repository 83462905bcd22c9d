"""DDPM forward process and the stochastic / deterministic inversion objectives.

The objective is written against an abstract denoiser: any callable
``denoiser(z_t, c, t) -> eps_hat`` operating on batches. Everything that
depends on the toy world (encoding images, embedding captions) is reached
through the small ``world`` protocol used by :func:`resolve_batch`:

* ``world.n_images``, ``world.n_captions``, ``world.dims.m``;
* ``world.schedule`` (a :class:`DiffusionSchedule`);
* ``world.encode(x, eta)`` and ``world.images``;
* ``world.condition(caption_indices, v)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError

FACTORS = ("images", "captions", "encoder_noise", "timesteps", "diffusion_noise")

# Large evaluation batches are pushed through the denoiser in chunks.
DEFAULT_CHUNK = 64


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> DiffusionSchedule:
    """Linear-beta DDPM schedule; ``alpha_bars`` is the cumulative product of ``1 - beta``."""
    if int(T) != T or T < 1:
        raise ConfigError("T", f"must be a positive integer, got {T!r}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError("beta_start", f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, int(T)) if T > 1 else np.array([float(beta_start)])
    alpha_bars = np.cumprod(1.0 - betas)
    betas.setflags(write=False)
    alpha_bars.setflags(write=False)
    return DiffusionSchedule(betas=betas, alpha_bars=alpha_bars)


def forward_process(z0, eps, t, schedule: DiffusionSchedule):
    """Noise ``z0`` to step ``t``: ``sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps``.

    ``t`` may be a scalar or one timestep per batch row.
    """
    z0 = np.asarray(z0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if z0.shape != eps.shape:
        raise ValueError(f"z0 and eps shapes differ: {z0.shape} vs {eps.shape}")
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= schedule.T):
        raise IndexError(f"timestep out of range [0, {schedule.T})")
    abar = schedule.alpha_bars[t]
    if abar.ndim == 1 and z0.ndim == 2:
        abar = abar[:, None]
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps


def _full_mask() -> dict:
    return {f: True for f in FACTORS}


def make_mask(unfixed=()) -> dict:
    """Fixed-mask dict with every factor fixed except the ones in ``unfixed``."""
    unknown = set(unfixed) - set(FACTORS)
    if unknown:
        raise ConfigError("factors", f"unknown factor(s) {sorted(unknown)}; valid: {list(FACTORS)}")
    return {f: f not in unfixed for f in FACTORS}


@dataclass(frozen=True)
class EvalBatch:
    """Stored inputs of the objective plus a per-factor "fixed" mask.

    Factors marked fixed are read verbatim at every evaluation; the others are
    redrawn by :func:`resolve_batch`. Resampling images always resamples the
    encoder noise too, because the latent of a new image needs a new draw.
    """

    image_indices: np.ndarray
    caption_indices: np.ndarray
    encoder_noise: np.ndarray
    timesteps: np.ndarray
    diffusion_noise: np.ndarray
    fixed: Mapping[str, bool] = field(default_factory=_full_mask)

    def __post_init__(self):
        B = len(self.image_indices)
        if B < 1:
            raise ConfigError("eval_batch_size", "must be >= 1")
        for name in ("caption_indices", "encoder_noise", "timesteps", "diffusion_noise"):
            if len(getattr(self, name)) != B:
                raise ValueError(f"{name} has {len(getattr(self, name))} rows, expected {B}")
        if set(self.fixed) != set(FACTORS):
            raise ConfigError("fixed_mask", f"must name exactly {list(FACTORS)}")
        for name in ("image_indices", "caption_indices", "encoder_noise", "timesteps", "diffusion_noise"):
            getattr(self, name).setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.image_indices)

    @property
    def fully_fixed(self) -> bool:
        return all(self.fixed.values())

    def with_mask(self, fixed: Mapping[str, bool]) -> "EvalBatch":
        return EvalBatch(self.image_indices, self.caption_indices, self.encoder_noise,
                         self.timesteps, self.diffusion_noise, dict(fixed))

    def to_dict(self) -> dict:
        return {
            "image_indices": self.image_indices.tolist(),
            "caption_indices": self.caption_indices.tolist(),
            "encoder_noise": self.encoder_noise.tolist(),
            "timesteps": self.timesteps.tolist(),
            "diffusion_noise": self.diffusion_noise.tolist(),
            "fixed": dict(self.fixed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalBatch":
        return cls(
            image_indices=np.asarray(d["image_indices"], dtype=np.int64),
            caption_indices=np.asarray(d["caption_indices"], dtype=np.int64),
            encoder_noise=np.asarray(d["encoder_noise"], dtype=float),
            timesteps=np.asarray(d["timesteps"], dtype=np.int64),
            diffusion_noise=np.asarray(d["diffusion_noise"], dtype=float),
            fixed=dict(d["fixed"]),
        )


@dataclass(frozen=True)
class ResolvedBatch:
    """Materialized latents for one evaluation; the condition is computed per ``v``."""

    z0: np.ndarray
    z_t: np.ndarray
    eps: np.ndarray
    t: np.ndarray
    caption_indices: np.ndarray

    @property
    def size(self) -> int:
        return len(self.t)


def _draw_images(world, B, rng):
    return rng.integers(0, world.n_images, size=B)


def _draw_captions(world, B, rng):
    return rng.integers(0, world.n_captions, size=B)


def _draw_noise(world, B, rng):
    return rng.standard_normal((B, world.dims.m))


def _draw_timesteps(world, B, rng):
    return rng.integers(0, world.schedule.T, size=B)


def sample_eval_batch(world, B: int, rng: np.random.Generator, fixed: Mapping[str, bool] | None = None) -> EvalBatch:
    """Draw every factor once. Draw order is fixed so the mask never shifts the stream."""
    if B < 1:
        raise ConfigError("eval_batch_size", f"must be >= 1, got {B}")
    return EvalBatch(
        image_indices=_draw_images(world, B, rng),
        caption_indices=_draw_captions(world, B, rng),
        encoder_noise=_draw_noise(world, B, rng),
        timesteps=_draw_timesteps(world, B, rng),
        diffusion_noise=_draw_noise(world, B, rng),
        fixed=dict(fixed) if fixed is not None else _full_mask(),
    )


def resolve_batch(world, batch: EvalBatch, rng: np.random.Generator | None = None) -> ResolvedBatch:
    """Fill in unfixed factors with fresh draws and run the encoder and forward process."""
    fixed = batch.fixed
    B = batch.size
    if not batch.fully_fixed and rng is None:
        raise ValueError("an rng is required when some factors are unfixed")
    images = batch.image_indices
    eta = batch.encoder_noise
    if not fixed["images"]:
        images = _draw_images(world, B, rng)
        eta = _draw_noise(world, B, rng)
    captions = batch.caption_indices if fixed["captions"] else _draw_captions(world, B, rng)
    if fixed["images"] and not fixed["encoder_noise"]:
        eta = _draw_noise(world, B, rng)
    t = batch.timesteps if fixed["timesteps"] else _draw_timesteps(world, B, rng)
    eps = batch.diffusion_noise if fixed["diffusion_noise"] else _draw_noise(world, B, rng)
    z0 = world.encode(world.images[images], eta)
    z_t = forward_process(z0, eps, t, world.schedule)
    return ResolvedBatch(z0=z0, z_t=z_t, eps=eps, t=np.asarray(t), caption_indices=np.asarray(captions))


def sample_train_batch(world, B: int, rng: np.random.Generator) -> ResolvedBatch:
    """A fully stochastic batch, i.e. one draw of the regular training objective."""
    batch = sample_eval_batch(world, B, rng, fixed=make_mask(FACTORS))
    return resolve_batch(world, batch, rng)


Denoiser = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def ldm_loss(denoiser: Denoiser, z_t, c, t, eps, chunk: int = DEFAULT_CHUNK) -> float:
    """Mean squared error between ``eps`` and the denoiser output.

    Reduced as a mean over batch rows and latent coordinates. Batches larger
    than ``chunk`` are evaluated piecewise and the chunk means are recombined
    weighted by chunk size.
    """
    z_t = np.asarray(z_t, dtype=float)
    eps = np.asarray(eps, dtype=float)
    c = np.asarray(c, dtype=float)
    t = np.asarray(t)
    if z_t.shape != eps.shape or len(c) != len(z_t) or len(t) != len(z_t):
        raise ValueError(f"shape mismatch: z_t {z_t.shape}, eps {eps.shape}, c {c.shape}, t {t.shape}")
    B = len(z_t)
    total = 0.0
    for lo in range(0, B, chunk):
        hi = min(lo + chunk, B)
        out = np.asarray(denoiser(z_t[lo:hi], c[lo:hi], t[lo:hi]))
        if out.shape != eps[lo:hi].shape:
            raise ValueError(f"denoiser output shape {out.shape} != {eps[lo:hi].shape}")
        total += np.mean((eps[lo:hi] - out) ** 2) * (hi - lo)
    return float(total / B)


def batch_loss(world, denoiser: Denoiser, resolved: ResolvedBatch, v, chunk: int = DEFAULT_CHUNK) -> float:
    c = world.condition(resolved.caption_indices, v)
    return ldm_loss(denoiser, resolved.z_t, c, resolved.t, resolved.eps, chunk=chunk)


def det_loss(denoiser: Denoiser, eval_batch: EvalBatch, world, v, rng=None, chunk: int = DEFAULT_CHUNK) -> float:
    """Objective on the stored evaluation batch.

    With every factor fixed this is a deterministic function of ``v``; with a
    partial mask the unfixed factors are redrawn from ``rng`` first.
    """
    resolved = resolve_batch(world, eval_batch, rng)
    return batch_loss(world, denoiser, resolved, v, chunk=chunk)

"""A frozen, desk-scale stand-in for a latent text-to-image diffusion stack.

The world holds everything that stays fixed during inversion: a one-hidden-layer
tanh noise predictor, an affine "text encoder" per caption template, a
stochastic linear image encoder, a vocabulary of token embeddings, a hidden
target embedding and the reference images. Only the concept embedding ``v``
is trained; it reaches the denoiser through ``c = A_j v + b_j``.

The world "knows" the concept: after the reference images are drawn, the
denoiser's output bias is calibrated on a fixed sample bank so that the
population objective is stationary at the hidden target embedding.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .diffusion import DiffusionSchedule, make_schedule
from .errors import ConfigError


@dataclass(frozen=True)
class WorldConfig:
    m: int = 16          # latent size
    m_img: int = 32      # image size
    d: int = 8           # token embedding size
    d_c: int = 16        # condition size
    h: int = 64          # denoiser hidden width
    d_t: int = 8         # sinusoidal time features
    n_captions: int = 10
    vocab_size: int = 128
    n_images: int = 5
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    sigma_enc: float = 0.01
    caption_jitter: float = 0.02
    time_gain: float = 3.0
    concept_gain: float = 0.2
    concept_out_gain: float = 7.0
    latent_gain: float = 0.5
    nuisance_gain: float = 25.0
    leak: float = 0.05
    embedding_scale: float = 0.15
    latent_scale: float = 1.0
    image_spread: float = 0.3
    bank_size: int = 2048
    seed: Optional[int] = None

    def __post_init__(self):
        for name in ("m", "m_img", "d", "d_c", "h", "d_t", "n_captions", "n_images", "T", "bank_size"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"world.{name}", f"must be a positive integer, got {value!r}")
        if self.vocab_size < 1:
            raise ConfigError("world.vocab_size", f"must be >= 1, got {self.vocab_size!r}")
        if self.d_t % 2:
            raise ConfigError("world.d_t", "must be even (sin/cos pairs)")
        if self.h <= self.d_c:
            raise ConfigError("world.h", f"must exceed d_c={self.d_c} (condition units come first), got {self.h!r}")
        if self.m_img < self.m:
            raise ConfigError("world.m_img", "must be >= m so the encoder has a right inverse")
        for name in ("sigma_enc", "caption_jitter", "time_gain", "concept_gain", "concept_out_gain", "latent_gain", "nuisance_gain", "leak", "embedding_scale", "latent_scale", "image_spread"):
            if not np.isfinite(getattr(self, name)) or getattr(self, name) < 0:
                raise ConfigError(f"world.{name}", "must be finite and non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"world.{sorted(unknown)[0]}", "unknown field")
        return cls(**d)


def time_features(t, T: int, d_t: int) -> np.ndarray:
    """Sinusoidal features of ``t / T`` at octave-spaced frequencies, shape (B, d_t)."""
    s = np.asarray(t, dtype=float).reshape(-1, 1) / T
    freqs = np.pi * 2.0 ** np.arange(d_t // 2)
    return np.concatenate([np.sin(s * freqs), np.cos(s * freqs)], axis=1)


@dataclass(frozen=True)
class Activations:
    world_id: int
    x: np.ndarray
    hidden: np.ndarray
    caption_indices: Optional[np.ndarray] = None


class FrozenWorld:
    """All immutable randomness of the testbed. Build with :func:`build_world`."""

    def __init__(self, config: WorldConfig, seed: int, arrays: dict):
        self.config = config
        self.seed = seed
        self.schedule: DiffusionSchedule = make_schedule(config.T, config.beta_start, config.beta_end)
        for name, value in arrays.items():
            value = np.array(value, dtype=float)
            value.setflags(write=False)
            setattr(self, name, value)
        self._names = tuple(arrays)

    # -- protocol used by the diffusion module -------------------------------------------
    @property
    def dims(self) -> WorldConfig:
        return self.config

    @property
    def n_images(self) -> int:
        return self.images.shape[0]

    @property
    def n_captions(self) -> int:
        return self.A.shape[0]

    def encode(self, x, eta):
        return encode(self, x, eta)

    def condition(self, caption_indices, v):
        idx = np.asarray(caption_indices)
        return np.einsum("bij,j->bi", self.A[idx], np.asarray(v, dtype=float)) + self.b[idx]

    def denoiser(self, z_t, c, t):
        return denoise_forward(self, z_t, c, t)[0]

    # -- comparison and fingerprints ----------------------------------------------------------
    def arrays(self) -> dict:
        return {name: getattr(self, name) for name in self._names}

    def __eq__(self, other):
        if not isinstance(other, FrozenWorld):
            return NotImplemented
        if self.config != other.config or self._names != other._names:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.arrays().values(), other.arrays().values()))

    __hash__ = object.__hash__


def _stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, sum(ord(ch) * 131 ** i for i, ch in enumerate(name)) % 2**32])


def _orthogonal(rng, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _raw_forward(W1, b1, W2, b2, x):
    hidden = np.tanh(x @ W1.T + b1)
    return hidden @ W2.T + b2, hidden


def build_world(config: WorldConfig | None = None, master_seed: int = 0) -> FrozenWorld:
    config = config or WorldConfig()
    seed = config.seed if config.seed is not None else int(master_seed)
    rng = _stream(seed, "world")
    m, d, d_c, h, d_t = config.m, config.d, config.d_c, config.h, config.d_t
    fan_in = m + d_c + d_t

    # Hidden units split in two groups. Condition units see only c through an
    # orthogonal map with small gain and no bias, so tanh stays close to
    # linear there and the objective is close to quadratic in v. Nuisance
    # units see the noisy latent and the time features; their (large) output
    # mostly lives outside the subspace the condition can move, which makes
    # the loss scale strongly t-dependent without biasing the optimum.
    hc = d_c
    W1 = rng.standard_normal((h, fan_in)) / np.sqrt(fan_in)
    W1[:hc, :] = 0.0
    W1[:hc, m:m + d_c] = config.concept_gain * _orthogonal(rng, d_c)
    W1[hc:, :m] *= config.latent_gain
    W1[hc:, m:m + d_c] = 0.0
    W1[hc:, m + d_c:] *= config.time_gain
    b1 = rng.standard_normal(h) / np.sqrt(fan_in)
    b1[:hc] = 0.0
    W2 = rng.standard_normal((m, h)) / np.sqrt(h)
    W2[:, :hc] = config.concept_out_gain * _orthogonal(rng, max(m, hc))[:m, :hc]
    b2 = rng.standard_normal(m) / np.sqrt(h)

    # Caption templates share one affine map up to a small per-template jitter.
    A0 = rng.standard_normal((d_c, d)) / (np.sqrt(d) * config.embedding_scale)
    b0 = rng.standard_normal(d_c) / np.sqrt(d)
    K = config.n_captions
    A = A0 + config.caption_jitter * rng.standard_normal((K, d_c, d)) / (np.sqrt(d) * config.embedding_scale)
    b = b0 + config.caption_jitter * rng.standard_normal((K, d_c)) / np.sqrt(d)

    M = rng.standard_normal((m, config.m_img)) / np.sqrt(config.m_img)
    vocab = config.embedding_scale * rng.standard_normal((config.vocab_size, d))
    target = config.embedding_scale * rng.standard_normal(d)

    basis = np.linalg.qr(W2[:, :hc] @ W1[:hc, m:m + d_c] @ A0)[0]
    inside = basis @ basis.T
    W2[:, hc:] = config.nuisance_gain * ((np.eye(m) - inside) + config.leak * inside) @ W2[:, hc:]

    # Reference latents: a shared concept centre plus per-image variation.
    xi = rng.standard_normal((config.n_images, m))
    xi -= xi.mean(axis=0)
    offsets = config.image_spread * xi
    bank = _Bank.draw(_stream(seed, "world-bank"), config)

    arrays = dict(W1=W1, b1=b1, W2=W2, b2=b2, A=A, b=b, M=M, vocab=vocab, target=target)
    z_images = config.latent_scale * rng.standard_normal(m) + offsets
    schedule = make_schedule(config.T, config.beta_start, config.beta_end)
    arrays["b2"] = _calibrate_output_bias(arrays, z_images, bank, config, schedule)
    # Minimum-norm preimage; M has full row rank so M @ x recovers the latent.
    images = np.linalg.pinv(M) @ z_images.T
    arrays["images"] = images.T
    return FrozenWorld(config, seed, arrays)


@dataclass
class _Bank:
    image: np.ndarray
    caption: np.ndarray
    eta: np.ndarray
    t: np.ndarray
    eps: np.ndarray

    @classmethod
    def draw(cls, rng, config: WorldConfig) -> "_Bank":
        n = config.bank_size
        return cls(
            image=rng.integers(0, config.n_images, n),
            caption=rng.integers(0, config.n_captions, n),
            eta=rng.standard_normal((n, config.m)),
            t=rng.integers(0, config.T, n),
            eps=rng.standard_normal((n, config.m)),
        )


def _calibrate_output_bias(arrays, z_images, bank: _Bank, config: WorldConfig, schedule) -> np.ndarray:
    """Shift ``b2`` so the bank-averaged objective is stationary at the target.

    The output bias enters the gradient with respect to ``v`` linearly, so one
    minimum-norm least-squares solve is exact.
    """
    W1, b1, W2, b2 = arrays["W1"], arrays["b1"], arrays["W2"], arrays["b2"]
    m, d_c = config.m, config.d_c
    A, b = arrays["A"][bank.caption], arrays["b"][bank.caption]
    abar = schedule.alpha_bars[bank.t][:, None]
    z0 = z_images[bank.image] + config.sigma_enc * bank.eta
    z_t = np.sqrt(abar) * z0 + np.sqrt(1 - abar) * bank.eps
    c = np.einsum("bij,j->bi", A, arrays["target"]) + b
    x = np.concatenate([z_t, c, time_features(bank.t, config.T, config.d_t)], axis=1)
    out, hidden = _raw_forward(W1, b1, W2, b2, x)
    n = len(out)
    slope = 1 - hidden ** 2
    Wc = W1[:, m:m + d_c]
    back = ((bank.eps - out) @ W2) * slope @ Wc
    g0 = -2.0 * np.einsum("bcd,bc->d", A, back) / (n * m)
    # sum over the bank of d out_b / d v, shape (m, d)
    J = 2.0 * (W2 @ np.einsum("bh,bhd->hd", slope, np.einsum("hc,bcd->bhd", Wc, A))).T / (n * m)
    delta = np.linalg.lstsq(J, -g0, rcond=None)[0]
    return b2 + delta


def encode(world: FrozenWorld, x, eta):
    """Stochastic linear encoder: ``M x + sigma_enc * eta``."""
    x = np.asarray(x, dtype=float)
    return x @ world.M.T + world.config.sigma_enc * np.asarray(eta, dtype=float)


def caption_embed(world: FrozenWorld, j: int, v):
    if not 0 <= j < world.n_captions:
        raise IndexError(f"caption template {j} out of range [0, {world.n_captions})")
    return world.A[j] @ np.asarray(v, dtype=float) + world.b[j]


def denoise_forward(world: FrozenWorld, z_t, c, t):
    """Predict the injected noise; returns ``(eps_hat, activations)``."""
    z_t = np.atleast_2d(np.asarray(z_t, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    cfg = world.config
    if z_t.shape[1] != cfg.m or c.shape[1] != cfg.d_c or len(z_t) != len(c):
        raise ValueError(f"bad shapes z_t {z_t.shape}, c {c.shape}")
    x = np.concatenate([z_t, c, time_features(t, cfg.T, cfg.d_t)], axis=1)
    out, hidden = _raw_forward(world.W1, world.b1, world.W2, world.b2, x)
    return out, Activations(id(world), x, hidden)


def denoise_backward(world: FrozenWorld, activations: Activations, grad_out):
    """Back-propagate ``dL/d eps_hat`` to ``dL/dc``."""
    grad_out = np.atleast_2d(np.asarray(grad_out, dtype=float))
    if activations.world_id != id(world):
        raise ValueError("activations come from a different world")
    if grad_out.shape != (activations.hidden.shape[0], world.config.m):
        raise ValueError(f"upstream gradient shape {grad_out.shape} does not match the forward pass")
    m, d_c = world.config.m, world.config.d_c
    g_hidden = (grad_out @ world.W2) * (1.0 - activations.hidden ** 2)
    return g_hidden @ world.W1[:, m:m + d_c]


def loss_and_grad(world: FrozenWorld, resolved, v):
    """Mean squared error on a resolved batch and its gradient with respect to ``v``."""
    c = world.condition(resolved.caption_indices, v)
    out, act = denoise_forward(world, resolved.z_t, c, resolved.t)
    resid = resolved.eps - out
    loss = float(np.mean(resid ** 2))
    g_c = denoise_backward(world, act, -2.0 * resid / resid.size)
    grad = np.einsum("bij,bi->j", world.A[resolved.caption_indices], g_c)
    return loss, grad


# -- scoring --------------------------------------------------------------------------------

SCORE_KINDS = ("oracle_cosine", "sample_similarity")


@dataclass(frozen=True)
class ScoreFn:
    """Reconstruction-score surrogate.

    ``oracle_cosine`` compares against the hidden target and is meant for
    evaluation only. ``sample_similarity`` never sees the target: it noises
    the reference latents with a fixed bank of draws at ``t``, takes one
    denoising step with and without the concept token (``v = 0``), and
    averages the cosine between what the token adds to each sample and what
    is missing from the token-free reconstruction of its reference. The
    frozen denoiser's token-independent error is large, so comparing raw
    reconstructions would bury the concept signal.
    """

    kind: str = "sample_similarity"
    n_samples: int = 8
    t: Optional[int] = None
    noise: Optional[np.ndarray] = None
    captions: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise ConfigError("score.kind", f"unknown scorer {self.kind!r}; valid: {list(SCORE_KINDS)}")


def make_score_fn(world: FrozenWorld, kind: str = "sample_similarity", n_samples: int = 8,
                  rng: np.random.Generator | None = None, t: int | None = None) -> ScoreFn:
    if kind == "oracle_cosine":
        return ScoreFn(kind)
    rng = rng if rng is not None else _stream(world.seed, "score-bank")
    t = world.schedule.T // 2 if t is None else t
    noise = rng.standard_normal((n_samples, world.config.m))
    captions = rng.integers(0, world.n_captions, n_samples)
    return ScoreFn(kind, n_samples, t, noise, captions)


def _cos(a, b):
    na, nb = np.linalg.norm(a, axis=-1), np.linalg.norm(b, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.sum(a * b, axis=-1) / (na * nb)
    return np.where((na == 0) | (nb == 0), 0.0, out)


def score(world: FrozenWorld, score_fn: ScoreFn, v) -> float:
    v = np.asarray(v, dtype=float)
    if score_fn.kind == "oracle_cosine":
        return float(np.clip(_cos(v, world.target), -1.0, 1.0))
    refs = world.images @ world.M.T
    src = refs[np.arange(score_fn.n_samples) % len(refs)]
    t = np.full(score_fn.n_samples, score_fn.t)
    abar = world.schedule.alpha_bars[score_fn.t]
    z_t = np.sqrt(abar) * src + np.sqrt(1 - abar) * score_fn.noise

    def reconstruct(u):
        eps_hat = world.denoiser(z_t, world.condition(score_fn.captions, u), t)
        return (z_t - np.sqrt(1 - abar) * eps_hat) / np.sqrt(abar)

    base = reconstruct(np.zeros_like(v))
    sims = _cos(reconstruct(v) - base, src - base)
    return float(np.clip(sims.mean(), -1.0, 1.0))


INIT_STRATEGIES = ("best", "manual", "random")


def select_init(world: FrozenWorld, strategy: str = "random", score_fn: ScoreFn | None = None,
                rng: np.random.Generator | None = None, index: int | None = None) -> np.ndarray:
    """Pick the starting embedding from the vocabulary pool."""
    pool = world.vocab
    if len(pool) == 0:
        raise ConfigError("init.strategy", "vocabulary pool is empty")
    if strategy == "best":
        if score_fn is None:
            raise ConfigError("init.strategy", "'best' needs a score function")
        scores = [score(world, score_fn, u) for u in pool]
        return pool[int(np.argmax(scores))].copy()
    if strategy == "manual":
        if index is None or not 0 <= index < len(pool):
            raise ConfigError("init.index", f"manual index {index!r} out of range [0, {len(pool)})")
        return pool[index].copy()
    if strategy == "random":
        if rng is None:
            raise ConfigError("init.strategy", "'random' needs an rng")
        return pool[int(rng.integers(0, len(pool)))].copy()
    raise ConfigError("init.strategy", f"unknown strategy {strategy!r}; valid: {list(INIT_STRATEGIES)}")

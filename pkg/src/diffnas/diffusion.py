"""Training and sampling engine: forward noising, the noise-prediction
loss with plain gradient-descent updates, the ancestral reverse step, and
synthetic 1-D dataset generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import denoiser
from .denoiser import DenoiserParams, TrainStrategy
from .errors import (InvalidRangeError, InvalidShapeError, NonFiniteError,
                     ShapeMismatchError, TimestepError)
from .schedule import NoiseSchedule, respace


@dataclass(frozen=True)
class RunSettings:
    """Fixed (non-searched) diffusion settings shared by a run."""

    schedule_kind: str = "linear"
    T: int = 100
    sample_steps: int = 20
    batch_size: int = 16
    variance_mode: str = "eq3"

    def __post_init__(self):
        if self.sample_steps > self.T:
            raise InvalidRangeError("sample_steps must not exceed T")
        if self.batch_size < 1:
            raise InvalidRangeError("batch_size must be >= 1")
        if self.schedule_kind not in ("linear", "cosine"):
            raise InvalidRangeError(f"unknown schedule kind {self.schedule_kind!r}")
        if self.variance_mode != "eq3":
            raise InvalidRangeError(
                f"unsupported variance mode {self.variance_mode!r}")


@dataclass(frozen=True)
class Dataset:
    """Synthetic training corpus of shape (N, 1, L) signals."""

    samples: np.ndarray
    generator_kind: str
    seed: int

    def __post_init__(self):
        self.samples.setflags(write=False)

    @property
    def length(self) -> int:
        return self.samples.shape[2]


def gen_dataset(kind: str, n: int, length: int, seed: int) -> Dataset:
    """Deterministic synthetic data: a sine mixture or a 2-mode Gaussian mixture."""
    if length % 8 != 0 or length < 8:
        raise InvalidShapeError(f"length must be a positive multiple of 8: {length}")
    if n < 2:
        raise InvalidRangeError(f"need at least 2 samples, got {n}")
    rng = np.random.default_rng(seed)
    pos = np.arange(length) / length
    if kind == "sine_mixture":
        freq = rng.integers(1, 4, size=n)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=n)
        amp = rng.uniform(0.5, 1.5, size=n)
        samples = amp[:, None] * np.sin(2.0 * np.pi * freq[:, None] * pos[None, :]
                                        + phase[:, None])
    elif kind == "gaussian_mixture":
        # two well-separated fixed modes in sample space
        centers = np.stack([np.sin(2.0 * np.pi * pos) + 1.5,
                            -np.sin(2.0 * np.pi * pos) - 1.5])
        comp = rng.integers(0, 2, size=n)
        samples = centers[comp] + 0.15 * rng.standard_normal((n, length))
    else:
        raise InvalidRangeError(f"unknown dataset kind {kind!r}")
    return Dataset(samples=samples[:, None, :], generator_kind=kind, seed=seed)


def forward_sample(x0: np.ndarray, t: int, eps: np.ndarray,
                   schedule: NoiseSchedule) -> np.ndarray:
    """sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; pure."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeMismatchError(f"x0 {x0.shape} vs eps {eps.shape}")
    if not (1 <= t <= schedule.T):
        raise TimestepError(f"t={t} outside [1, {schedule.T}]")
    abar = schedule.alpha_bar[t - 1]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def training_step(params: DenoiserParams, batch: np.ndarray,
                  schedule: NoiseSchedule, strategy: TrainStrategy,
                  rng: np.random.Generator,
                  adam_state: "AdamState | None" = None
                  ) -> tuple[DenoiserParams, float]:
    """One noise-prediction update; returns (params, batch loss).

    Per-element uniform t and fresh Gaussian noise; loss is the batch mean
    of the squared noise-prediction error norm. Updates are plain gradient
    descent unless an AdamState is supplied. Mutates params in place.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3 or batch.shape[0] < 1:
        raise InvalidShapeError(f"batch must be (B, 1, L), got {batch.shape}")
    n = batch.shape[0]
    t = rng.integers(1, schedule.T + 1, size=n)
    eps = rng.standard_normal(batch.shape)
    abar = schedule.alpha_bar[t - 1][:, None, None]
    x_t = np.sqrt(abar) * batch + np.sqrt(1.0 - abar) * eps

    pred = denoiser.forward(params, x_t, t, training=True,
                            dropout=strategy.dropout, rng=rng)
    resid = pred - eps
    loss = float(np.sum(resid ** 2) / n)
    if not np.isfinite(loss):
        raise NonFiniteError(f"training loss diverged: {loss}")
    denoiser.backward(params, 2.0 * resid / n)
    if adam_state is not None:
        adam_state.apply(params, strategy.learning_rate)
    else:
        for name, w in params.weights.items():
            w -= strategy.learning_rate * params.grads[name]
    return params, loss


class AdamState:
    """Optional Adam moments for the end-to-end demos; Eq-style SGD is the default."""

    def __init__(self, params: DenoiserParams, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in params.weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.weights.items()}

    def apply(self, params: DenoiserParams, lr: float) -> None:
        self.step += 1
        b1c = 1.0 - self.beta1 ** self.step
        b2c = 1.0 - self.beta2 ** self.step
        for name, w in params.weights.items():
            g = params.grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            w -= lr * (self.m[name] / b1c) / (np.sqrt(self.v[name] / b2c) + self.eps)


def sample_step(x_t: np.ndarray, t: int, params: DenoiserParams,
                schedule: NoiseSchedule, eps: np.ndarray) -> np.ndarray:
    """One ancestral reverse step; the stochastic term is dropped at t=1."""
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x_t.shape != eps.shape:
        raise ShapeMismatchError(f"x_t {x_t.shape} vs eps {eps.shape}")
    if not (1 <= t <= schedule.T):
        raise TimestepError(f"t={t} outside [1, {schedule.T}]")
    alpha = schedule.alpha[t - 1]
    abar = schedule.alpha_bar[t - 1]
    pred = denoiser.forward(params, x_t, t)
    mean = (x_t - (1.0 - alpha) / np.sqrt(1.0 - abar) * pred) / np.sqrt(alpha)
    if t == 1:
        return mean
    return mean + schedule.sigma[t - 1] * eps


def sample(params: DenoiserParams, schedule: NoiseSchedule, n: int,
           sample_steps: int, seed: int) -> np.ndarray:
    """Generate n samples via the reverse chain on a respaced schedule."""
    if sample_steps > schedule.T:
        raise InvalidRangeError("sample_steps must not exceed schedule.T")
    if n == 0:
        return np.zeros((0, 1, params.data_length))
    rng = np.random.default_rng(seed)
    sched = respace(schedule, sample_steps)
    x = rng.standard_normal((n, 1, params.data_length))
    for t in range(sched.T, 0, -1):
        alpha = sched.alpha[t - 1]
        abar = sched.alpha_bar[t - 1]
        pred = denoiser.forward(params, x, t)
        x = (x - (1.0 - alpha) / np.sqrt(1.0 - abar) * pred) / np.sqrt(alpha)
        if t > 1:
            x += sched.sigma[t - 1] * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"sampling diverged at step t={t}")
    return x

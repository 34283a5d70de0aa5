"""Diffusion noise schedules and derived per-step tables.

Timesteps are 1-indexed in every public contract: `beta[t-1]` is the
variance added at step t, `alpha_bar[t-1]` the cumulative signal kept
through step t. The reverse-step standard deviation is stored directly as
sigma[t-1] = sqrt(1 - alpha_bar[t-1]).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidRangeError

BETA_CLIP = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable per-step tables; safe to share across workers."""

    kind: str
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @classmethod
    def from_beta(cls, kind: str, beta: np.ndarray,
                  alpha_bar: np.ndarray | None = None) -> "NoiseSchedule":
        beta = np.asarray(beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise InvalidRangeError("beta must be a non-empty 1-D array")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise InvalidRangeError("beta values must lie in (0, 1)")
        alpha = 1.0 - beta
        if alpha_bar is None:
            alpha_bar = np.cumprod(alpha)
        else:
            alpha_bar = np.asarray(alpha_bar, dtype=np.float64)
        sigma = np.sqrt(1.0 - alpha_bar)
        for arr in (beta, alpha, alpha_bar, sigma):
            arr.setflags(write=False)
        return cls(kind=kind, T=beta.size, beta=beta, alpha=alpha,
                   alpha_bar=alpha_bar, sigma=sigma)


def build_linear(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly interpolated beta from beta_start (t=1) to beta_end (t=T)."""
    if T < 1:
        raise InvalidRangeError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidRangeError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, T)
    return NoiseSchedule.from_beta("linear", beta)


def build_cosine(T: int, s: float = 0.008) -> NoiseSchedule:
    """Cosine-squared cumulative schedule with offset s, betas clipped at 0.999."""
    if T < 1:
        raise InvalidRangeError(f"T must be >= 1, got {T}")
    if not (0.0 < s < 1.0):
        raise InvalidRangeError(f"offset s must lie in (0, 1), got {s}")

    def f(t: float) -> float:
        return math.cos(((t / T + s) / (1.0 + s)) * math.pi / 2.0) ** 2

    f0 = f(0.0)
    abar = np.array([f(t) / f0 for t in range(T + 1)])  # abar[0] = 1
    beta = 1.0 - abar[1:] / abar[:-1]
    beta = np.clip(beta, None, BETA_CLIP)
    return NoiseSchedule.from_beta("cosine", beta)


def respace(schedule: NoiseSchedule, num_steps: int) -> NoiseSchedule:
    """Shorter schedule over an evenly strided timestep subsequence.

    The kept indices carry over the original alpha_bar values unchanged;
    betas are recomputed as 1 - abar[t_j]/abar[t_{j-1}].
    """
    if not (1 <= num_steps <= schedule.T):
        raise InvalidRangeError(
            f"num_steps must lie in [1, {schedule.T}], got {num_steps}")
    idx = np.linspace(0, schedule.T - 1, num_steps).round().astype(int)
    abar = schedule.alpha_bar[idx].copy()
    prev = np.concatenate([[1.0], abar[:-1]])
    beta = 1.0 - abar / prev
    return NoiseSchedule.from_beta(schedule.kind, beta, alpha_bar=abar)


def respaced_timesteps(T: int, num_steps: int) -> np.ndarray:
    """The 1-indexed original timesteps a respaced schedule keeps."""
    if not (1 <= num_steps <= T):
        raise InvalidRangeError(f"num_steps must lie in [1, {T}], got {num_steps}")
    return np.linspace(0, T - 1, num_steps).round().astype(int) + 1

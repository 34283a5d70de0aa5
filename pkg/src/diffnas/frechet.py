"""Frechet distance between Gaussian fits of two sample sets.

Samples are compared in raw flattened signal space; at desk scale there is
no pretrained feature extractor and ranking conclusions survive without one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (DimensionMismatchError, InsufficientSamplesError,
                     NotPSDError)

COV_EPS = 1e-6
EIG_FLOOR = 1e-10
NEG_EIG_TOL = -1e-8


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_stats(samples: np.ndarray) -> GaussianStats:
    """Unbiased mean/covariance; epsilon*I added if near-singular."""
    x = np.asarray(samples, dtype=np.float64).reshape(len(samples), -1)
    if x.shape[0] < 2:
        raise InsufficientSamplesError(f"need >= 2 samples, got {x.shape[0]}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    if np.linalg.eigvalsh(cov).min() < EIG_FLOOR:
        cov = cov + COV_EPS * np.eye(cov.shape[0])
    return GaussianStats(mean=mean, cov=cov)


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(Ca + Cb - 2 (Ca Cb)^{1/2}).

    The cross term is computed via the symmetric eigendecomposition of
    Ca^{1/2} Cb Ca^{1/2}, whose trace of square roots equals Tr((Ca Cb)^{1/2}).
    """
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dim {a.dim} vs {b.dim}")
    wa, va = np.linalg.eigh(a.cov)
    if wa.min() < NEG_EIG_TOL * max(1.0, abs(wa.max())):
        raise NotPSDError(f"covariance has eigenvalue {wa.min():.3e}")
    wa = np.clip(wa, 0.0, None)
    sqrt_a = (va * np.sqrt(wa)) @ va.T
    inner = sqrt_a @ b.cov @ sqrt_a
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    if w.min() < NEG_EIG_TOL * max(1.0, abs(w.max())):
        raise NotPSDError(f"covariance product has eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    diff = a.mean - b.mean
    d2 = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.sqrt(w).sum())
    return max(d2, 0.0)


def fid_between(samples_a: np.ndarray, samples_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of the two sets."""
    return frechet_distance(fit_stats(samples_a), fit_stats(samples_b))

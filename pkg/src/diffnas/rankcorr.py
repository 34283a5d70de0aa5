"""Rank-correlation metrics quantifying proxy-ranking fidelity."""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateVarianceError, InvalidRangeError


def _check(xs: Sequence[float], ys: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidRangeError("inputs must be equal-length 1-D sequences")
    if x.size < 2:
        raise InvalidRangeError("need at least 2 points")
    return x, y


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Product-moment correlation coefficient."""
    x, y = _check(xs, ys)
    xc = x - x.mean()
    yc = y - y.mean()
    vx = float(xc @ xc)
    vy = float(yc @ yc)
    if vx == 0.0 or vy == 0.0:
        raise DegenerateVarianceError("an input has zero variance")
    return float(xc @ yc / np.sqrt(vx * vy))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; ties receive the mean of their rank span."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson applied to average ranks."""
    x, y = _check(xs, ys)
    return pearson(_average_ranks(x), _average_ranks(y))


def kendall(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Tau-b via pair enumeration: (C - D) / sqrt((n0 - tx)(n0 - ty))."""
    x, y = _check(xs, ys)
    n = x.size
    concordant = discordant = ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            # direct comparisons (not differences) so infinite scores, such
            # as diverged-run sentinels, still order and tie correctly
            if x[i] == x[j] and y[i] == y[j]:
                ties_x += 1
                ties_y += 1
            elif x[i] == x[j]:
                ties_x += 1
            elif y[i] == y[j]:
                ties_y += 1
            elif (x[i] < x[j]) == (y[i] < y[j]):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    denom = np.sqrt(float(n0 - ties_x) * float(n0 - ties_y))
    if denom == 0.0:
        raise DegenerateVarianceError("all pairs tied in one input")
    return float((concordant - discordant) / denom)


class RankingAccuracy(NamedTuple):
    spearman: float
    pearson: float
    kendall: float

    @property
    def objective(self) -> float:
        """The scalar the strategy search maximizes."""
        return self.spearman


def ranking_accuracy(proxy_scores: Sequence[float],
                     full_scores: Sequence[float]) -> RankingAccuracy:
    """All three coefficients between a proxy ranking and the full ranking.

    Infinite scores (diverged-run sentinels) rank worst; the rank-based
    coefficients handle them, while the product-moment coefficient is
    undefined for them and reported as nan.
    """
    x = np.asarray(proxy_scores, dtype=np.float64)
    y = np.asarray(full_scores, dtype=np.float64)
    finite = bool(np.isfinite(x).all() and np.isfinite(y).all())
    return RankingAccuracy(
        spearman=spearman(proxy_scores, full_scores),
        pearson=pearson(proxy_scores, full_scores) if finite else float("nan"),
        kendall=kendall(proxy_scores, full_scores),
    )

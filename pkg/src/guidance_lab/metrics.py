"""Desk-scale evaluation: mode suppression, exact 2-Wasserstein, preference score.

``suppression_rate`` is the headline negative-guidance metric: the fraction
of generated points that sit strictly closer to the negative-condition mode
than to the positive one.  Equidistant points count as the positive side, so
guidance is only penalized by strict movement toward the negative mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DimensionError, ParameterError, UndefinedMetricError
from .linalg import Tensor

W2_MAX_POINTS = 256


def suppression_rate(samples: Tensor, neg_center, pos_center) -> float:
    """Fraction of samples strictly nearer the negative center (ties go positive)."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    neg = np.asarray(neg_center, dtype=np.float64)
    pos = np.asarray(pos_center, dtype=np.float64)
    if samples.shape[0] == 0:
        raise UndefinedMetricError("suppression_rate is undefined on zero samples")
    if np.array_equal(neg, pos):
        raise ParameterError("centers must be distinct")
    d_neg = np.linalg.norm(samples - neg, axis=1)
    d_pos = np.linalg.norm(samples - pos, axis=1)
    return float(np.mean(d_neg < d_pos))


def mean_distance(samples: Tensor, center) -> float:
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] == 0:
        raise UndefinedMetricError("mean_distance is undefined on zero samples")
    return float(np.mean(np.linalg.norm(samples - np.asarray(center, dtype=np.float64), axis=1)))


def w2_exact(samples_a: Tensor, samples_b: Tensor) -> float:
    """Exact 2-Wasserstein distance between equal-size point multisets.

    Solves the optimal assignment on the squared-distance cost matrix and
    returns the square root of the mean matched cost.
    """
    a = np.atleast_2d(np.asarray(samples_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(samples_b, dtype=np.float64))
    if a.shape != b.shape:
        raise DimensionError(f"point sets differ in shape: {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n == 0:
        raise UndefinedMetricError("w2_exact is undefined on empty point sets")
    if n > W2_MAX_POINTS:
        raise ParameterError(f"w2_exact supports at most {W2_MAX_POINTS} points, got {n}")
    diff = a[:, None, :] - b[None, :, :]
    cost = np.sum(diff**2, axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def preference_score(p: int, n: int, s: int) -> float:
    """(preferred - not preferred) / total votes, in [-1, 1]."""
    if min(p, n, s) < 0:
        raise ParameterError("vote counts must be non-negative")
    total = p + n + s
    if total == 0:
        raise UndefinedMetricError("preference_score is undefined on zero votes")
    return (p - n) / total


@dataclass(frozen=True)
class MetricsReport:
    suppression_rate: float
    mean_neg_mode_distance: float
    w2_to_target: float
    n_samples: int

    def __post_init__(self):
        if not (0.0 <= self.suppression_rate <= 1.0):
            raise ParameterError(f"suppression_rate out of [0, 1]: {self.suppression_rate}")

    def to_dict(self) -> dict:
        return {
            "suppression_rate": self.suppression_rate,
            "mean_neg_mode_distance": self.mean_neg_mode_distance,
            "w2_to_target": self.w2_to_target,
            "n_samples": self.n_samples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def build_report(samples: Tensor, neg_center, pos_center, target: Tensor) -> MetricsReport:
    """Bundle the three metrics for one sampled population.

    ``target`` is a reference draw from the intended distribution; the
    transport distance uses at most ``W2_MAX_POINTS`` points from each side.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    m = min(len(samples), len(target), W2_MAX_POINTS)
    return MetricsReport(
        suppression_rate=suppression_rate(samples, neg_center, pos_center),
        mean_neg_mode_distance=mean_distance(samples, neg_center),
        w2_to_target=w2_exact(samples[:m], target[:m]),
        n_samples=int(len(samples)),
    )

"""Utility aggregation over ranker head scores.

A weight vector turns per-head predictions into one scalar per item; the
serving layer ranks candidates by that scalar and keeps the top k.  The
contribution helpers quantify how much of the final score each head is
responsible for, which is what the weight-range analysis reports on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def utility_score(weights: np.ndarray, head_scores: np.ndarray) -> float:
    """Weighted linear combination sum_i w_i * h_i.

    Both arguments must have the same length m (one entry per ranker head).
    """
    weights = np.asarray(weights, dtype=float)
    head_scores = np.asarray(head_scores, dtype=float)
    if weights.shape != head_scores.shape or weights.ndim != 1:
        raise ValueError(
            f"weights {weights.shape} and head_scores {head_scores.shape} must be "
            "1-d vectors of equal length"
        )
    return float(weights @ head_scores)


def utility_scores(weights: np.ndarray, head_score_matrix: np.ndarray) -> np.ndarray:
    """Vectorized utility over a (n_items, m) score matrix."""
    weights = np.asarray(weights, dtype=float)
    head_score_matrix = np.asarray(head_score_matrix, dtype=float)
    if head_score_matrix.ndim != 2 or head_score_matrix.shape[1] != weights.shape[0]:
        raise ValueError(
            f"score matrix {head_score_matrix.shape} incompatible with "
            f"{weights.shape[0]} weights"
        )
    return head_score_matrix @ weights


def rank_top_k(weights: np.ndarray, head_score_matrix: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k highest-utility items, best first.

    Ties broken by ascending item index so rankings are reproducible.
    """
    scores = utility_scores(weights, head_score_matrix)
    n = scores.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds candidate count {n}")
    if k < 0:
        raise ValueError("k must be non-negative")
    # Stable sort of negated utilities keeps ascending index among ties.
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def head_contribution(weights: np.ndarray, head_scores: np.ndarray) -> np.ndarray:
    """Share of the utility magnitude owned by each head.

    c_i = |w_i h_i| / sum_j |w_j h_j|.  Raises if every product is zero
    (the share is undefined there).
    """
    weights = np.asarray(weights, dtype=float)
    head_scores = np.asarray(head_scores, dtype=float)
    if weights.shape != head_scores.shape or weights.ndim != 1:
        raise ValueError("weights and head_scores must be 1-d vectors of equal length")
    mags = np.abs(weights * head_scores)
    total = mags.sum()
    if total <= 0.0:
        raise ValueError("all weight*score products are zero; contribution undefined")
    return mags / total


def head_contribution_matrix(weights: np.ndarray, head_score_matrix: np.ndarray) -> np.ndarray:
    """Per-item contribution shares for a (n_items, m) score matrix."""
    weights = np.asarray(weights, dtype=float)
    mags = np.abs(head_score_matrix * weights)
    totals = mags.sum(axis=1, keepdims=True)
    if np.any(totals <= 0.0):
        raise ValueError("some items have all-zero weight*score products")
    return mags / totals


@dataclass(frozen=True)
class ContributionCurvePoint:
    head: int
    weight: float
    mean_contribution: float
    stderr: float


def contribution_vs_weight_curve(
    head_index: int,
    weight_values: np.ndarray,
    base_weights: np.ndarray,
    head_score_matrix: np.ndarray,
) -> list[ContributionCurvePoint]:
    """Mean contribution of one head as its weight sweeps a range.

    The other heads keep their entries from ``base_weights``.  With
    positive scores the mean is monotone non-decreasing in the swept
    weight.
    """
    weight_values = np.asarray(weight_values, dtype=float)
    if weight_values.size == 0:
        raise ValueError("weight_values must be non-empty")
    if head_score_matrix.shape[0] == 0:
        raise ValueError("empty item sample")
    points = []
    for w in weight_values:
        weights = np.array(base_weights, dtype=float)
        weights[head_index] = w
        shares = head_contribution_matrix(weights, head_score_matrix)[:, head_index]
        n = shares.shape[0]
        stderr = float(shares.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        points.append(
            ContributionCurvePoint(
                head=head_index,
                weight=float(w),
                mean_contribution=float(shares.mean()),
                stderr=stderr,
            )
        )
    return points

"""Offline policy evaluation on holdout exploration logs.

The hit-based estimator averages observed rewards over the records where
the target policy would have chosen the logged action.  Under uniform
exploration the propensities are a single constant, so the 1/mu weights of
the self-normalized inverse-propensity estimator cancel and the two forms
agree to float tolerance; ``snips_estimate`` keeps the explicit-weight
form around for exactly that check.

Alpha sweeping reuses one precomputed Q matrix for the whole grid: the
model is trained once, the trade-off family falls out of inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .actions import ActionGrid
from .envsim import RequestContext
from .errors import NoSupportError
from .logstore import InteractionRecord
from .numerics import binomial_se, pearson
from .policy import StaticPolicy, scalarize
from .valuenet import ValueModel, featurize_contexts

OBJECTIVES = ("repin", "p2p")


@dataclass(frozen=True)
class PolicyEstimate:
    """Hit-based value estimate for one policy on one holdout log."""

    label: str
    hit_count: int
    v_repin: float | None
    v_p2p: float | None
    se_repin: float | None
    se_p2p: float | None

    @property
    def has_support(self) -> bool:
        return self.hit_count >= 1

    def values(self) -> tuple[float, float]:
        if not self.has_support:
            raise NoSupportError(f"policy {self.label!r} has no hit events")
        return self.v_repin, self.v_p2p


def hit_estimate(
    predicted_actions: np.ndarray,
    logged_actions: np.ndarray,
    rewards: np.ndarray,
    label: str = "policy",
) -> PolicyEstimate:
    """Mean reward over records where predicted == logged action.

    ``rewards`` is (n, 2) with columns (repin, p2p).  Zero hits yield an
    explicit no-support estimate rather than 0/0.
    """
    hits = predicted_actions == logged_actions
    count = int(hits.sum())
    if count == 0:
        return PolicyEstimate(label=label, hit_count=0, v_repin=None, v_p2p=None,
                              se_repin=None, se_p2p=None)
    means = rewards[hits].mean(axis=0)
    return PolicyEstimate(
        label=label,
        hit_count=count,
        v_repin=float(means[0]),
        v_p2p=float(means[1]),
        se_repin=binomial_se(float(means[0]), count),
        se_p2p=binomial_se(float(means[1]), count),
    )


def snips_estimate(
    predicted_actions: np.ndarray,
    logged_actions: np.ndarray,
    rewards: np.ndarray,
    propensities: np.ndarray,
) -> tuple[float, float]:
    """Self-normalized IPS with explicit 1/mu weights (equivalence oracle)."""
    w = (predicted_actions == logged_actions).astype(float) / propensities
    total = w.sum()
    if total == 0.0:
        raise NoSupportError("no matched records for SNIPS")
    return (
        float((w * rewards[:, 0]).sum() / total),
        float((w * rewards[:, 1]).sum() / total),
    )


def reward_at_hit(policy, records: list[InteractionRecord], label: str | None = None) -> PolicyEstimate:
    """Hit-based estimate for a policy exposing select_actions(contexts)."""
    contexts = [RequestContext.from_features(r.user_id, r.day_index, r.features) for r in records]
    predicted = np.asarray(policy.select_actions(contexts))
    logged = np.asarray([r.action_index for r in records])
    rewards = np.asarray([[r.r_repin, r.r_p2p] for r in records], dtype=float)
    return hit_estimate(predicted, logged, rewards, label=label or getattr(policy, "label", "policy"))


def offline_lift(policy_est: PolicyEstimate, baseline_est: PolicyEstimate) -> tuple[float, float]:
    """Per-objective absolute difference V(policy) - V(baseline), same holdout."""
    pv = policy_est.values()
    bv = baseline_est.values()
    return pv[0] - bv[0], pv[1] - bv[1]


@dataclass
class FrontierPoint:
    """One evaluated scalarization with its paired offline lifts."""

    alpha: float
    hit_count: int
    supported: bool
    delta_repin: float | None = None
    delta_p2p: float | None = None
    delta_repin_pct: float | None = None
    delta_p2p_pct: float | None = None
    stderr_repin: float | None = None  # SE of the lift, baseline noise included
    stderr_p2p: float | None = None
    stderr_repin_pct: float | None = None  # same SE scaled like the pct lifts
    stderr_p2p_pct: float | None = None
    dominated: bool = False
    selected_role: str = ""
    model_hash: str = ""


@dataclass
class SweepResult:
    points: list[FrontierPoint]
    baseline: PolicyEstimate
    model_hash: str


def holdout_arrays(records: list[InteractionRecord]) -> tuple[np.ndarray, np.ndarray]:
    logged = np.asarray([r.action_index for r in records])
    rewards = np.asarray([[r.r_repin, r.r_p2p] for r in records], dtype=float)
    return logged, rewards


def sweep(
    model: ValueModel,
    grid: ActionGrid,
    records: list[InteractionRecord],
    alphas: np.ndarray | None = None,
    model_hash: str = "",
    record_mask: np.ndarray | None = None,
    q_matrix: np.ndarray | None = None,
) -> SweepResult:
    """Evaluate the policy family {pi_alpha} on one holdout log.

    One Q matrix serves every alpha; no retraining happens anywhere in the
    sweep.  Unsupported points are kept and marked, never dropped.
    ``record_mask`` restricts the evaluation (e.g. to one cohort) while
    reusing the same Q matrix.
    """
    if alphas is None:
        alphas = default_alpha_grid()
    logged, rewards = holdout_arrays(records)
    if q_matrix is None:
        contexts = [RequestContext.from_features(r.user_id, r.day_index, r.features) for r in records]
        ctx = featurize_contexts(contexts, model.config)
        q_matrix = model.score_all_actions_featurized(ctx, grid)
    if record_mask is not None:
        logged = logged[record_mask]
        rewards = rewards[record_mask]
        q_matrix = q_matrix[record_mask]

    baseline_policy = StaticPolicy(grid.baseline_pair, grid)
    baseline_pred = np.full(logged.shape, baseline_policy.action_index, dtype=np.intp)
    baseline = hit_estimate(baseline_pred, logged, rewards, label="production")

    points = []
    for alpha in np.asarray(alphas, dtype=float):
        predicted = np.argmax(scalarize(q_matrix, alpha), axis=1)
        est = hit_estimate(predicted, logged, rewards, label=f"alpha={alpha:.4f}")
        point = FrontierPoint(
            alpha=float(alpha),
            hit_count=est.hit_count,
            supported=est.has_support and baseline.has_support,
            model_hash=model_hash,
        )
        if point.supported:
            d_r, d_p = offline_lift(est, baseline)
            point.delta_repin = d_r
            point.delta_p2p = d_p
            point.delta_repin_pct = 100.0 * d_r / baseline.v_repin if baseline.v_repin else None
            point.delta_p2p_pct = 100.0 * d_p / baseline.v_p2p if baseline.v_p2p else None
            point.stderr_repin = float(np.hypot(est.se_repin, baseline.se_repin))
            point.stderr_p2p = float(np.hypot(est.se_p2p, baseline.se_p2p))
            if baseline.v_repin:
                point.stderr_repin_pct = 100.0 * point.stderr_repin / baseline.v_repin
            if baseline.v_p2p:
                point.stderr_p2p_pct = 100.0 * point.stderr_p2p / baseline.v_p2p
        points.append(point)
    pareto_filter(points)
    return SweepResult(points=points, baseline=baseline, model_hash=model_hash)


def default_alpha_grid(size: int = 25) -> np.ndarray:
    return np.linspace(0.0, 1.0, size)


def pareto_filter(points: list[FrontierPoint]) -> list[FrontierPoint]:
    """Set the dominated flag: p is dominated iff some q is >= on both lifts
    and > on at least one.  Unsupported points are excluded from the
    comparison and marked dominated."""
    supported = [p for p in points if p.supported]
    deltas = np.asarray([[p.delta_repin, p.delta_p2p] for p in supported])
    flags = dominated_mask(deltas) if len(supported) else np.zeros(0, dtype=bool)
    for p, f in zip(supported, flags):
        p.dominated = bool(f)
    for p in points:
        if not p.supported:
            p.dominated = True
    return points


def dominated_mask(points: np.ndarray) -> np.ndarray:
    """Boolean mask of dominated rows of an (n, 2) objective matrix.

    Sort-and-scan skyline; duplicates do not dominate each other.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n == 0:
        return np.zeros(0, dtype=bool)
    # Descending x, then descending y; scan tracking the best y among
    # strictly better x groups.
    order = np.lexsort((-points[:, 1], -points[:, 0]))
    dominated = np.zeros(n, dtype=bool)
    best_y_strictly_ahead = -np.inf  # max y among points with strictly larger x
    i = 0
    while i < n:
        j = i
        x = points[order[i], 0]
        group_max_y = -np.inf
        while j < n and points[order[j], 0] == x:
            y = points[order[j], 1]
            # Dominated by a strictly-larger-x point with y >= ours, or by a
            # same-x point with strictly larger y.
            if y <= best_y_strictly_ahead or y < group_max_y:
                dominated[order[j]] = True
            group_max_y = max(group_max_y, y)
            j += 1
        best_y_strictly_ahead = max(best_y_strictly_ahead, group_max_y)
        i = j
    return dominated


def brute_force_dominated_mask(points: np.ndarray) -> np.ndarray:
    """O(n^2) dominance oracle used to verify the fast filter."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    out = np.zeros(n, dtype=bool)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            ge = points[j, 0] >= points[i, 0] and points[j, 1] >= points[i, 1]
            gt = points[j, 0] > points[i, 0] or points[j, 1] > points[i, 1]
            if ge and gt:
                out[i] = True
                break
    return out


@dataclass(frozen=True)
class OperatingPoints:
    """The three governance selections from the feasible frontier."""

    repin_leaning: FrontierPoint | None
    balanced: FrontierPoint | None
    p2p_leaning: FrontierPoint | None

    @property
    def feasible(self) -> bool:
        return self.repin_leaning is not None

    def roles(self) -> dict[str, FrontierPoint]:
        if not self.feasible:
            return {}
        return {
            "repin_leaning": self.repin_leaning,
            "balanced": self.balanced,
            "p2p_leaning": self.p2p_leaning,
        }


def select_operating_points(points: list[FrontierPoint]) -> OperatingPoints:
    """Pick repin-leaning / balanced / p2p-leaning among non-degrading points.

    Feasible set: supported, non-dominated, and non-negative lift on both
    objectives.  The balanced point maximizes min over objectives of the
    min-max normalized lift (a scale-free knee rule); a zero-range axis
    contributes equally for every point.  A single feasible point fills
    all three roles; an empty feasible set yields an explicit none result.
    """
    feasible = [
        p for p in points
        if p.supported and not p.dominated and p.delta_repin >= 0.0 and p.delta_p2p >= 0.0
    ]
    if not feasible:
        return OperatingPoints(None, None, None)
    d = np.asarray([[p.delta_repin, p.delta_p2p] for p in feasible])
    repin_leaning = feasible[int(np.argmax(d[:, 0]))]
    p2p_leaning = feasible[int(np.argmax(d[:, 1]))]
    lo, hi = d.min(axis=0), d.max(axis=0)
    span = hi - lo
    norm = np.ones_like(d)
    for axis in range(2):
        if span[axis] > 0:
            norm[:, axis] = (d[:, axis] - lo[axis]) / span[axis]
    balanced = feasible[int(np.argmax(norm.min(axis=1)))]
    for role, point in (("repin_leaning", repin_leaning), ("balanced", balanced), ("p2p_leaning", p2p_leaning)):
        point.selected_role = (point.selected_role + "+" + role).strip("+") if point.selected_role else role
    return OperatingPoints(repin_leaning=repin_leaning, balanced=balanced, p2p_leaning=p2p_leaning)


def offline_online_correlation(
    offline: np.ndarray, online: np.ndarray
) -> dict[str, float | None]:
    """Pearson r per objective across paired operating points.

    ``offline``/``online`` are (n, 2) lift matrices in matching point
    order.  A zero-variance series yields None for that objective.
    """
    offline = np.asarray(offline, dtype=float)
    online = np.asarray(online, dtype=float)
    if offline.shape != online.shape or offline.ndim != 2 or offline.shape[1] != 2:
        raise ValueError("need matching (n, 2) lift matrices")
    if offline.shape[0] < 3:
        raise ValueError("need at least 3 paired points for a correlation")
    return {
        "repin": pearson(offline[:, 0], online[:, 0]),
        "p2p": pearson(offline[:, 1], online[:, 1]),
    }

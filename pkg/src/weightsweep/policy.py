"""Deterministic operating policies over a trained value model.

A scalarized policy picks argmax_a of alpha*Q_p2p + (1-alpha)*Q_repin for
each request; changing alpha is a configuration change, never a retrain.
Model failures (non-finite outputs, simulated timeouts) fall back to the
production static action and are counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .actions import ActionGrid
from .envsim import RequestContext
from .errors import ConfigError, InferenceFailure
from .valuenet import ValueModel


def fallback_action(grid: ActionGrid) -> int:
    """Index of the production baseline action; serving reverts here on failure."""
    if grid.baseline_index is None:
        raise ConfigError("grid has no baseline action to fall back to")
    return grid.baseline_index


def scalarize(q: np.ndarray, alpha: float) -> np.ndarray:
    """alpha * Q_p2p + (1 - alpha) * Q_repin over a (..., |A|, 2) array."""
    return alpha * q[..., 1] + (1.0 - alpha) * q[..., 0]


class StaticPolicy:
    """Context-independent weights (e.g. the production pair)."""

    def __init__(self, pair: tuple[float, float], grid: ActionGrid | None = None):
        self.pair = (float(pair[0]), float(pair[1]))
        self.grid = grid

    @property
    def action_index(self) -> int:
        if self.grid is None:
            raise ConfigError("static policy has no grid to index into")
        return self.grid.index_of(self.pair)

    def select_actions(self, contexts: list[RequestContext]) -> np.ndarray:
        return np.full(len(contexts), self.action_index, dtype=np.intp)

    def tuned_weights(self, contexts: list[RequestContext]) -> np.ndarray:
        return np.tile(np.asarray(self.pair), (len(contexts), 1))


class ScalarizedPolicy:
    """argmax over the grid of the alpha-scalarized two-head values.

    Ties break toward the lowest action index.  ``force_fail`` simulates
    an inference outage for fallback testing.
    """

    def __init__(
        self,
        model: ValueModel,
        grid: ActionGrid,
        alpha: float,
        force_fail: bool = False,
    ):
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError(f"alpha {alpha} outside [0, 1]")
        if model.grid_hash != grid.content_hash():
            raise ConfigError("model was trained against a different grid")
        self.model = model
        self.grid = grid
        self.alpha = float(alpha)
        self.force_fail = force_fail
        self.fallback_count = 0

    def q_matrix(self, contexts: list[RequestContext]) -> np.ndarray:
        return self.model.score_all_actions(contexts, self.grid)

    def select_actions(self, contexts: list[RequestContext]) -> np.ndarray:
        try:
            if self.force_fail:
                raise InferenceFailure("simulated inference outage")
            q = self.q_matrix(contexts)
        except InferenceFailure:
            self.fallback_count += len(contexts)
            return np.full(len(contexts), fallback_action(self.grid), dtype=np.intp)
        scores = scalarize(q, self.alpha)
        return np.argmax(scores, axis=1).astype(np.intp)

    def select_action(self, context: RequestContext) -> int:
        return int(self.select_actions([context])[0])

    def tuned_weights(self, contexts: list[RequestContext]) -> np.ndarray:
        idx = self.select_actions(contexts)
        return self.grid.pairs_array()[idx]


class CohortPolicy:
    """Cohort-conditioned alpha: each request uses its cohort's scalarization."""

    def __init__(
        self,
        model: ValueModel,
        grid: ActionGrid,
        alpha_by_cohort: dict[str, float],
        cohort_of: Callable[[RequestContext], str] | None = None,
    ):
        missing = {"CORE", "CASUAL", "REST"} - set(alpha_by_cohort)
        if missing:
            raise ConfigError(f"cohort map missing {sorted(missing)}")
        self.model = model
        self.grid = grid
        self.alpha_by_cohort = {c: float(a) for c, a in alpha_by_cohort.items()}
        self._cohort_of = cohort_of or (lambda ctx: ctx.cohort)
        self._sub = {
            c: ScalarizedPolicy(model, grid, a) for c, a in self.alpha_by_cohort.items()
        }

    def select_actions(self, contexts: list[RequestContext]) -> np.ndarray:
        cohorts = [self._cohort_of(ctx) for ctx in contexts]
        for c in cohorts:
            if c not in self._sub:
                raise ConfigError(f"unknown cohort {c!r}")
        q = self.model.score_all_actions(contexts, self.grid)
        alphas = np.asarray([self.alpha_by_cohort[c] for c in cohorts])
        scores = alphas[:, None] * q[:, :, 1] + (1.0 - alphas[:, None]) * q[:, :, 0]
        return np.argmax(scores, axis=1).astype(np.intp)

    def select_action(self, context: RequestContext) -> int:
        return int(self.select_actions([context])[0])

    def tuned_weights(self, contexts: list[RequestContext]) -> np.ndarray:
        idx = self.select_actions(contexts)
        return self.grid.pairs_array()[idx]

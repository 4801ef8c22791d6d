"""Discrete utility-weight action grid and the uniform exploration policy.

Actions are (repin weight, p2p weight) pairs from the Cartesian product of
K linearly spaced values per axis.  The production pair sits off the grid,
so it is appended as a designated extra action: that way the static
production policy has logged support under uniform exploration and can be
evaluated with the same hit-based estimator as everything else.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

PRODUCTION_WEIGHTS = (91.6, 9.1)
DEFAULT_REPIN_RANGE = (10.0, 200.0)
DEFAULT_P2P_RANGE = (1.0, 30.0)


@dataclass(frozen=True)
class NormalizedAction:
    """Min-max normalized (repin, p2p) pair, both components in [0, 1]."""

    repin: float
    p2p: float


@dataclass(frozen=True)
class ActionGrid:
    repin_values: tuple[float, ...]
    p2p_values: tuple[float, ...]
    actions: tuple[tuple[float, float], ...]  # row-major over (repin, p2p)
    baseline_index: int | None = None
    _index: dict[tuple[float, float], int] = field(repr=False, hash=False, compare=False, default=None)

    def __post_init__(self):
        object.__setattr__(
            self, "_index", {pair: i for i, pair in enumerate(self.actions)}
        )

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def size(self) -> int:
        return len(self.actions)

    def pair(self, index: int) -> tuple[float, float]:
        return self.actions[index]

    def index_of(self, pair: tuple[float, float]) -> int:
        return self._index[(float(pair[0]), float(pair[1]))]

    @property
    def baseline_pair(self) -> tuple[float, float]:
        if self.baseline_index is None:
            raise ConfigError("grid has no baseline action")
        return self.actions[self.baseline_index]

    def pairs_array(self) -> np.ndarray:
        return np.asarray(self.actions, dtype=float)

    def to_json_dict(self) -> dict:
        return {
            "repin_values": list(self.repin_values),
            "p2p_values": list(self.p2p_values),
            "actions": [list(a) for a in self.actions],
            "baseline_index": self.baseline_index,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ActionGrid":
        return cls(
            repin_values=tuple(d["repin_values"]),
            p2p_values=tuple(d["p2p_values"]),
            actions=tuple((a[0], a[1]) for a in d["actions"]),
            baseline_index=d["baseline_index"],
        )

    def content_hash(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def build_grid(
    repin_range: tuple[float, float] = DEFAULT_REPIN_RANGE,
    p2p_range: tuple[float, float] = DEFAULT_P2P_RANGE,
    k: int = 7,
    include_baseline: bool = True,
    baseline: tuple[float, float] = PRODUCTION_WEIGHTS,
) -> ActionGrid:
    """K linearly spaced values per axis, endpoints inclusive, row-major product."""
    if k < 2:
        raise ConfigError(f"grid needs at least 2 values per axis, got k={k}")
    for lo, hi in (repin_range, p2p_range):
        if not lo < hi:
            raise ConfigError(f"degenerate weight range [{lo}, {hi}]")
    repin_values = tuple(float(v) for v in np.linspace(repin_range[0], repin_range[1], k))
    p2p_values = tuple(float(v) for v in np.linspace(p2p_range[0], p2p_range[1], k))
    actions = [(r, p) for r in repin_values for p in p2p_values]
    baseline_index = None
    if include_baseline:
        baseline_index = len(actions)
        actions.append((float(baseline[0]), float(baseline[1])))
    return ActionGrid(
        repin_values=repin_values,
        p2p_values=p2p_values,
        actions=tuple(actions),
        baseline_index=baseline_index,
    )


def normalize_action(grid: ActionGrid, action: tuple[float, float]) -> NormalizedAction:
    """Min-max normalize each component within its axis range."""
    r, p = float(action[0]), float(action[1])
    r_lo, r_hi = grid.repin_values[0], grid.repin_values[-1]
    p_lo, p_hi = grid.p2p_values[0], grid.p2p_values[-1]
    if not (r_lo <= r <= r_hi and p_lo <= p <= p_hi):
        raise ValueError(
            f"action ({r}, {p}) outside grid ranges [{r_lo},{r_hi}]x[{p_lo},{p_hi}]"
        )
    return NormalizedAction(
        repin=(r - r_lo) / (r_hi - r_lo),
        p2p=(p - p_lo) / (p_hi - p_lo),
    )


def normalize_actions(grid: ActionGrid, pairs: np.ndarray) -> np.ndarray:
    """Vectorized normalization of an (n, 2) array of weight pairs."""
    pairs = np.asarray(pairs, dtype=float)
    lo = np.array([grid.repin_values[0], grid.p2p_values[0]])
    hi = np.array([grid.repin_values[-1], grid.p2p_values[-1]])
    if np.any(pairs < lo) or np.any(pairs > hi):
        raise ValueError("some actions fall outside the grid ranges")
    return (pairs - lo) / (hi - lo)


def uniform_policy(grid: ActionGrid, rng: np.random.Generator) -> tuple[int, float]:
    """One uniform draw over every grid action (baseline included).

    Returns (action_index, propensity) with propensity exactly 1/|A|.
    """
    n = len(grid)
    if n == 0:
        raise ConfigError("empty grid")
    index = int(rng.integers(0, n))
    return index, 1.0 / n

"""Synthetic multi-head recommender traffic with a known ground truth.

Each user carries hidden mixture weights over engagement archetypes.  Item
quality drives both the ranker's head scores and the true engagement
probabilities, so the utility-weight action causally changes what is
served and therefore what gets engaged.  Archetype affinities shift the
per-user engagement logits, which makes the reward-optimal weight pair
context dependent once ``heterogeneity_strength`` is positive.  Because
the generative model is known, every offline estimate can be checked
against a Monte Carlo oracle on fresh traffic.

All randomness flows through per-purpose substreams of the config seed
(see rng.py), so reruns are bit-identical and requests can be simulated
in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import rng as streams
from .errors import ConfigError
from .numerics import sigmoid
from .utility import rank_top_k

HEAD_NAMES = ("repin", "p2p", "click", "closeup", "hide")
COHORTS = ("CORE", "CASUAL", "REST")
DEVICE_TYPES = ("ios", "android", "web")
ACTION_TYPES = ("repin", "click", "impression")
SURFACE = "homefeed"
EMBED_DECIMALS = 6  # embeddings quantized at creation; log round-trips stay exact


@dataclass(frozen=True)
class EnvConfig:
    """Knobs for the synthetic environment.

    The engagement-model constants (score_locs/scales, prob_base/slopes)
    are calibrated once so that production-weight traffic reproduces the
    reference engagement sparsity (>=80% of requests with at most one
    event per objective) and the repin+p2p share of the utility score
    (~0.9).  Override them only together with a recalibration.
    """

    seed: int
    num_users: int = 10_000
    candidates_per_request: int = 2_000
    top_k: int = 25
    d_pref: int = 8
    d_user: int = 16
    d_item: int = 16
    history_len: int = 16
    num_age_buckets: int = 8
    cohort_fractions: tuple[float, float, float] = (0.20, 0.50, 0.30)
    heterogeneity_strength: float = 1.0

    # Ranker head-score model: h = sigmoid(loc + scale * q), q ~ N(0,1).
    score_locs: tuple[float, ...] = (-3.0, -1.7, -2.6, -2.6, -3.5)
    score_scales: tuple[float, ...] = (0.8, 0.7, 0.6, 0.6, 0.5)
    # Utility weights of the non-tuned heads (click, closeup, hide).
    fixed_head_weights: tuple[float, ...] = (4.0, 2.5, -5.0)

    # True engagement model: p = sigmoid(base + affinity + slope * q + noise).
    prob_base: tuple[float, float] = (-5.5, -4.1)
    prob_slopes: tuple[float, float] = (0.9, 0.9)
    prob_noise: float = 0.35
    affinity_scale: float = 0.9
    hour_effect: float = 0.15  # evening logit boost, both objectives

    embedding_noise: float = 0.15
    item_noise: float = 0.20
    forced_archetype: int | None = None  # test knob: one-hot latent for all users

    def validate(self) -> None:
        if self.num_users <= 0:
            raise ConfigError("num_users must be positive")
        if not self.candidates_per_request >= self.top_k >= 1:
            raise ConfigError("need candidates_per_request >= top_k >= 1")
        if len(self.score_locs) != len(HEAD_NAMES) or len(self.score_scales) != len(HEAD_NAMES):
            raise ConfigError(f"score calibration must cover all {len(HEAD_NAMES)} heads")
        if len(self.fixed_head_weights) != len(HEAD_NAMES) - 2:
            raise ConfigError("fixed_head_weights must cover the non-tuned heads")
        if abs(sum(self.cohort_fractions) - 1.0) > 1e-9:
            raise ConfigError("cohort_fractions must sum to 1")
        if self.heterogeneity_strength < 0:
            raise ConfigError("heterogeneity_strength must be >= 0")
        if self.forced_archetype is not None and not 0 <= self.forced_archetype < self.d_pref:
            raise ConfigError("forced_archetype out of range")

    @property
    def num_heads(self) -> int:
        return len(HEAD_NAMES)


# Per-archetype engagement-affinity loadings; archetypes 0-2 lean repin,
# 3-5 lean p2p, 6-7 are near neutral.  Length must match d_pref.
_REPIN_LOADINGS = np.array([1.0, 0.7, 0.4, -0.4, -0.7, -1.0, 0.15, -0.15])
_P2P_LOADINGS = np.array([-1.0, -0.7, -0.4, 0.4, 0.7, 1.0, -0.15, 0.15])

# Dirichlet concentrations of the latent mixture per cohort.  CORE skews
# toward repin archetypes, CASUAL toward p2p, REST stays diffuse.
_COHORT_DIRICHLET = {
    "CORE": np.array([2.0, 1.5, 1.0, 0.3, 0.3, 0.3, 0.6, 0.6]),
    "CASUAL": np.array([0.5, 0.5, 0.6, 1.2, 1.2, 1.2, 0.8, 0.8]),
    "REST": np.array([0.7, 0.7, 0.7, 0.7, 0.7, 0.7, 1.1, 1.1]),
}


def cohort_label(days_saved: int, days_active: int) -> str:
    """CORE saved on >=4 of the last 28 days; CASUAL active on >=4; REST otherwise."""
    if days_saved >= 4:
        return "CORE"
    if days_active >= 4:
        return "CASUAL"
    return "REST"


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    latent_preference: np.ndarray  # mixture weights over archetypes, sums to 1
    user_embedding: np.ndarray  # noisy observable projection of the latent
    days_active: int
    days_saved: int

    @property
    def cohort(self) -> str:
        return cohort_label(self.days_saved, self.days_active)


@dataclass(frozen=True)
class HistoryEntry:
    item_embedding: np.ndarray
    action_type: str
    age_bucket: int


@dataclass(frozen=True)
class RequestContext:
    """Serving-time view of one request; never contains reward information."""

    user_id: int
    user_embedding: np.ndarray
    history: tuple[HistoryEntry, ...]
    device_type: str
    surface: str
    hour_of_day: int
    day_index: int
    cohort: str

    def to_features(self) -> dict:
        return {
            "user_embedding": [float(v) for v in self.user_embedding],
            "history": [
                {
                    "item_embedding": [float(v) for v in h.item_embedding],
                    "action_type": h.action_type,
                    "age_bucket": h.age_bucket,
                }
                for h in self.history
            ],
            "device_type": self.device_type,
            "surface": self.surface,
            "hour_of_day": self.hour_of_day,
            "cohort": self.cohort,
        }

    @classmethod
    def from_features(cls, user_id: int, day_index: int, features: dict) -> "RequestContext":
        return cls(
            user_id=user_id,
            user_embedding=np.asarray(features["user_embedding"], dtype=float),
            history=tuple(
                HistoryEntry(
                    item_embedding=np.asarray(h["item_embedding"], dtype=float),
                    action_type=h["action_type"],
                    age_bucket=h["age_bucket"],
                )
                for h in features["history"]
            ),
            device_type=features["device_type"],
            surface=features["surface"],
            hour_of_day=features["hour_of_day"],
            day_index=day_index,
            cohort=features["cohort"],
        )


@dataclass(frozen=True)
class CandidateItem:
    item_embedding: np.ndarray
    head_scores: np.ndarray
    true_engagement_prob: np.ndarray


class CandidateSet(Sequence):
    """Array-backed candidate list.

    Item embeddings are materialized lazily from a spawned seed: nothing
    downstream of serving consumes them, and skipping the draws keeps
    request sampling cheap without losing determinism.
    """

    def __init__(self, head_scores: np.ndarray, true_probs: np.ndarray, embed_seed: np.random.SeedSequence, d_item: int):
        self.head_scores = head_scores  # (C, m)
        self.true_probs = true_probs  # (C, 2)
        self._embed_seed = embed_seed
        self._d_item = d_item
        self._embeddings: np.ndarray | None = None

    def __len__(self) -> int:
        return self.head_scores.shape[0]

    @property
    def item_embeddings(self) -> np.ndarray:
        if self._embeddings is None:
            gen = np.random.default_rng(self._embed_seed)
            self._embeddings = np.round(
                gen.standard_normal((len(self), self._d_item)), EMBED_DECIMALS
            )
        return self._embeddings

    def __getitem__(self, i):
        if isinstance(i, slice):
            raise TypeError("index candidates individually or use take()")
        return CandidateItem(
            item_embedding=self.item_embeddings[i],
            head_scores=self.head_scores[i],
            true_engagement_prob=self.true_probs[i],
        )

    def take(self, indices: np.ndarray) -> "ServedList":
        return ServedList(self.true_probs[indices], np.asarray(indices))


@dataclass(frozen=True)
class ServedList:
    """The top-k slate actually shown for one request."""

    true_probs: np.ndarray  # (k, 2)
    indices: np.ndarray

    def __len__(self) -> int:
        return self.true_probs.shape[0]


@dataclass(frozen=True)
class PolicyValue:
    """Monte Carlo estimate of mean clipped rewards under a policy."""

    mean_repin: float
    mean_p2p: float
    se_repin: float
    se_p2p: float
    num_requests: int
    cohort_means: dict = field(default_factory=dict)  # cohort -> (mean_r, mean_p, n)


def generate_population(config: EnvConfig) -> list[UserProfile]:
    """Deterministic user pool; cohort labels follow the 28-day save/activity rule."""
    config.validate()
    profiles = []
    fractions = np.asarray(config.cohort_fractions)
    for uid in range(config.num_users):
        gen = streams.substream(config.seed, streams.STREAM_POPULATION, uid)
        cohort = COHORTS[int(gen.choice(len(COHORTS), p=fractions))]
        if cohort == "CORE":
            days_saved = int(gen.integers(4, 29))
            days_active = int(gen.integers(days_saved, 29))
        elif cohort == "CASUAL":
            days_saved = int(gen.integers(0, 4))
            days_active = int(gen.integers(4, 29))
        else:
            days_active = int(gen.integers(0, 4))
            days_saved = int(gen.integers(0, days_active + 1))
        if config.forced_archetype is not None:
            latent = np.zeros(config.d_pref)
            latent[config.forced_archetype] = 1.0
        else:
            latent = gen.dirichlet(_COHORT_DIRICHLET[cohort][: config.d_pref])
        # Observable projection of the latent; matrix is shared env state,
        # noise is fixed per user.
        proj = _user_projection(config)
        emb = np.tanh(proj @ latent) + config.embedding_noise * gen.standard_normal(config.d_user)
        profiles.append(
            UserProfile(
                user_id=uid,
                latent_preference=latent,
                user_embedding=np.round(emb, EMBED_DECIMALS),
                days_active=days_active,
                days_saved=days_saved,
            )
        )
    return profiles


_PROJ_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _projections(config: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    key = (config.seed, config.d_pref, config.d_user, config.d_item)
    if key not in _PROJ_CACHE:
        gen = streams.substream(config.seed, 0)
        user_proj = gen.standard_normal((config.d_user, config.d_pref)) * 1.2
        item_proj = gen.standard_normal((config.d_item, config.d_pref)) * 1.2
        _PROJ_CACHE[key] = (user_proj, item_proj)
    return _PROJ_CACHE[key]


def _user_projection(config: EnvConfig) -> np.ndarray:
    return _projections(config)[0]


def _item_projection(config: EnvConfig) -> np.ndarray:
    return _projections(config)[1]


class Environment:
    """Request sampling, serving, and ground-truth engagement for one config."""

    def __init__(self, config: EnvConfig):
        config.validate()
        self.config = config
        self.population = generate_population(config)
        self._repin_loadings = _REPIN_LOADINGS[: config.d_pref] * config.affinity_scale
        self._p2p_loadings = _P2P_LOADINGS[: config.d_pref] * config.affinity_scale
        self._score_locs = np.asarray(config.score_locs)
        self._score_scales = np.asarray(config.score_scales)

    def cohort_of(self, user_id: int) -> str:
        return self.population[user_id].cohort

    def affinities(self, user: UserProfile) -> tuple[float, float]:
        """Latent engagement-logit shifts for (repin, p2p)."""
        h = self.config.heterogeneity_strength
        z = user.latent_preference
        return h * float(z @ self._repin_loadings), h * float(z @ self._p2p_loadings)

    def full_weights(self, tuned_pair: tuple[float, float]) -> np.ndarray:
        """Complete weight vector: tuned (repin, p2p) plus the fixed heads."""
        return np.concatenate(([tuned_pair[0], tuned_pair[1]], self.config.fixed_head_weights))

    def production_weights(self, production_pair: tuple[float, float]) -> np.ndarray:
        return self.full_weights(production_pair)

    # -- request sampling ------------------------------------------------

    def request_rng(self, day_index: int, request_index: int) -> np.random.Generator:
        return streams.substream(self.config.seed, streams.STREAM_REQUEST, day_index, request_index)

    def sample_request(
        self,
        day_index: int,
        rng: np.random.Generator,
        user_id: int | None = None,
    ) -> tuple[RequestContext, CandidateSet]:
        """One request context plus its candidate pool.

        Draw order is fixed (user, context, history, candidates) so a
        given generator state always yields the same request.
        """
        cfg = self.config
        if user_id is None:
            user_id = int(rng.integers(0, cfg.num_users))
        user = self.population[user_id]

        device = DEVICE_TYPES[int(rng.choice(3, p=[0.5, 0.35, 0.15]))]
        hour = int(rng.integers(0, 24))
        history = self._sample_history(user, rng)
        context = RequestContext(
            user_id=user_id,
            user_embedding=user.user_embedding,
            history=history,
            device_type=device,
            surface=SURFACE,
            hour_of_day=hour,
            day_index=day_index,
            cohort=user.cohort,
        )
        candidates = self._sample_candidates(user, hour, rng)
        return context, candidates

    def _sample_history(self, user: UserProfile, rng: np.random.Generator) -> tuple[HistoryEntry, ...]:
        cfg = self.config
        p_hist = min(0.1 + 0.8 * user.days_active / 28.0, 1.0)
        length = int(rng.binomial(cfg.history_len, p_hist))
        if length == 0:
            return ()
        aff_r, _ = self.affinities(user)
        base = np.tanh(_item_projection(cfg) @ user.latent_preference)
        items = np.round(
            base[None, :] + cfg.item_noise * rng.standard_normal((length, cfg.d_item)),
            EMBED_DECIMALS,
        )
        # Repin-leaning users repin more often in their history.
        logits = np.array([aff_r, 0.0, 0.8])
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        kinds = rng.choice(len(ACTION_TYPES), size=length, p=probs)
        ages = rng.integers(0, cfg.num_age_buckets, size=length)
        return tuple(
            HistoryEntry(item_embedding=items[i], action_type=ACTION_TYPES[kinds[i]], age_bucket=int(ages[i]))
            for i in range(length)
        )

    def _sample_candidates(self, user: UserProfile, hour: int, rng: np.random.Generator) -> CandidateSet:
        cfg = self.config
        c = cfg.candidates_per_request
        q = rng.standard_normal((c, cfg.num_heads))
        head_scores = sigmoid(self._score_locs + self._score_scales * q)
        aff_r, aff_p = self.affinities(user)
        eta = rng.standard_normal((c, 2))
        hour_boost = cfg.hour_effect if 18 <= hour <= 23 else 0.0
        logits = np.stack(
            [
                cfg.prob_base[0] + aff_r + hour_boost + cfg.prob_slopes[0] * q[:, 0],
                cfg.prob_base[1] + aff_p + hour_boost + cfg.prob_slopes[1] * q[:, 1],
            ],
            axis=1,
        ) + cfg.prob_noise * eta
        true_probs = sigmoid(logits)
        embed_seed = np.random.SeedSequence(rng.integers(0, 2**63 - 1, size=4))
        return CandidateSet(head_scores, true_probs, embed_seed, cfg.d_item)

    # -- serving and engagement -------------------------------------------

    def serve(self, candidates: CandidateSet, tuned_pair: tuple[float, float]) -> ServedList:
        weights = self.full_weights(tuned_pair)
        top = rank_top_k(weights, candidates.head_scores, self.config.top_k)
        return candidates.take(top)

    def simulate_engagement(
        self,
        served: ServedList,
        context: RequestContext,
        rng: np.random.Generator,
    ) -> tuple[int, int]:
        """Independent Bernoulli draws over the served items' true probabilities."""
        if len(served) != self.config.top_k:
            raise ValueError(
                f"served list has {len(served)} items, expected top_k={self.config.top_k}"
            )
        u = rng.random((len(served), 2))
        events = (u < served.true_probs).sum(axis=0)
        return int(events[0]), int(events[1])

    # -- ground-truth oracle -----------------------------------------------

    def true_policy_value(
        self,
        policy,
        num_requests: int,
        seed: int,
        user_ids: np.ndarray | None = None,
        chunk: int = 256,
    ) -> PolicyValue:
        """Mean clipped rewards under fresh traffic served by ``policy``.

        ``policy`` must expose tuned_weights(contexts) -> (n, 2).  When
        ``user_ids`` is given, requests draw only from that subset
        (user-level A/B splits).
        """
        if num_requests <= 0:
            raise ValueError("num_requests must be positive")
        sums = np.zeros(2)
        count = 0
        cohort_sums: dict[str, np.ndarray] = {c: np.zeros(3) for c in COHORTS}
        for start in range(0, num_requests, chunk):
            size = min(chunk, num_requests - start)
            contexts = []
            candidate_sets = []
            gens = []
            for i in range(start, start + size):
                gen = streams.substream(seed, streams.STREAM_EVAL, i)
                uid = None
                if user_ids is not None:
                    uid = int(user_ids[int(gen.integers(0, len(user_ids)))])
                ctx, cands = self.sample_request(day_index=0, rng=gen, user_id=uid)
                contexts.append(ctx)
                candidate_sets.append(cands)
                gens.append(gen)
            pairs = np.asarray(policy.tuned_weights(contexts), dtype=float)
            for ctx, cands, gen, pair in zip(contexts, candidate_sets, gens, pairs):
                served = self.serve(cands, (pair[0], pair[1]))
                n_r, n_p = self.simulate_engagement(served, ctx, gen)
                r = np.array([min(n_r, 1), min(n_p, 1)], dtype=float)
                sums += r
                cs = cohort_sums[ctx.cohort]
                cs[:2] += r
                cs[2] += 1
                count += 1
        means = sums / count
        ses = np.sqrt(np.clip(means * (1 - means), 0, None) / count)
        cohort_means = {
            c: (s[0] / s[2], s[1] / s[2], int(s[2])) for c, s in cohort_sums.items() if s[2] > 0
        }
        return PolicyValue(
            mean_repin=float(means[0]),
            mean_p2p=float(means[1]),
            se_repin=float(ses[0]),
            se_p2p=float(ses[1]),
            num_requests=count,
            cohort_means=cohort_means,
        )

    def sample_head_scores(self, num_items: int, seed: int) -> np.ndarray:
        """Item head-score sample for contribution analyses (user independent)."""
        gen = streams.substream(seed, streams.STREAM_EVAL, 0xC0)
        q = gen.standard_normal((num_items, self.config.num_heads))
        return sigmoid(self._score_locs + self._score_scales * q)

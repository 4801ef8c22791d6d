"""Minibatch training of the value network.

Adam with global gradient-norm clipping, deterministic shuffling from the
config seed, and a NaN guard that aborts with the last finite parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as streams
from .actions import ActionGrid, normalize_actions
from .envsim import RequestContext
from .errors import ConfigError, TrainingDivergedError
from .logstore import InteractionRecord
from .valuenet import (
    ContextBatch,
    ModelConfig,
    ValueModel,
    backward_batch,
    featurize_contexts,
    init_bn_state,
    init_params,
    mse_loss,
    forward_batch,
)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 5
    optimizer: str = "adam"
    seed: int = 0
    grad_clip: float = 10.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.optimizer != "adam":
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainingSet:
    """Featurized training examples ready for minibatching."""

    ctx: ContextBatch
    act_norm: np.ndarray  # (n, 2)
    rewards: np.ndarray  # (n, 2) in {0, 1}
    record_ids: np.ndarray  # for leakage checks against the holdout

    def __len__(self) -> int:
        return len(self.ctx)

    def slice(self, idx: np.ndarray) -> tuple[ContextBatch, np.ndarray, np.ndarray]:
        sub = ContextBatch(
            user_emb=self.ctx.user_emb[idx],
            hist_items=self.ctx.hist_items[idx],
            hist_type=self.ctx.hist_type[idx],
            hist_age=self.ctx.hist_age[idx],
            hist_mask=self.ctx.hist_mask[idx],
            hist_len=self.ctx.hist_len[idx],
            device_idx=self.ctx.device_idx[idx],
            hour_idx=self.ctx.hour_idx[idx],
        )
        return sub, self.act_norm[idx], self.rewards[idx]


def build_training_set(
    records: list[InteractionRecord],
    grid: ActionGrid,
    model_config: ModelConfig,
) -> TrainingSet:
    contexts = [
        RequestContext.from_features(r.user_id, r.day_index, r.features) for r in records
    ]
    pairs = np.asarray([grid.pair(r.action_index) for r in records], dtype=float)
    rewards = np.asarray([[r.r_repin, r.r_p2p] for r in records], dtype=float)
    record_ids = np.asarray(
        [r.record_id if r.record_id is not None else -1 for r in records], dtype=np.int64
    )
    ctx = featurize_contexts(contexts, model_config)
    return TrainingSet(ctx=ctx, act_norm=normalize_actions(grid, pairs), rewards=rewards, record_ids=record_ids)


def _clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = np.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale


def train(
    train_set: TrainingSet,
    grid: ActionGrid,
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> ValueModel:
    """Run the configured epochs and return the frozen model.

    Deterministic given the seed: initialization, shuffling, and the
    reduction order are all fixed.
    """
    train_config.validate()
    model_config.validate()
    n = len(train_set)
    if n == 0:
        raise ConfigError("empty training set")

    init_rng = streams.substream(train_config.seed, streams.STREAM_TRAIN, 0)
    params = init_params(model_config, init_rng)
    bn_state = init_bn_state(model_config)
    adam_m = {k: np.zeros_like(v) for k, v in params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in params.items()}
    step = 0
    loss_curve: list[tuple[int, float]] = []
    last_good = {k: v.copy() for k, v in params.items()}
    momentum = model_config.bn_momentum

    for epoch in range(train_config.epochs):
        order = streams.substream(train_config.seed, streams.STREAM_TRAIN, 1, epoch).permutation(n)
        epoch_loss = 0.0
        seen = 0
        for start in range(0, n, train_config.batch_size):
            idx = order[start: start + train_config.batch_size]
            ctx, act_norm, rewards = train_set.slice(idx)
            loss, grads, batch_stats = backward_batch(
                params, bn_state, model_config, ctx, act_norm, rewards
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch} step {step}",
                    last_good_params=last_good,
                )
            _clip_global_norm(grads, train_config.grad_clip)
            step += 1
            lr_t = train_config.learning_rate * (
                np.sqrt(1.0 - train_config.adam_beta2**step)
                / (1.0 - train_config.adam_beta1**step)
            )
            for k in params:
                adam_m[k] = train_config.adam_beta1 * adam_m[k] + (1 - train_config.adam_beta1) * grads[k]
                adam_v[k] = train_config.adam_beta2 * adam_v[k] + (1 - train_config.adam_beta2) * grads[k] ** 2
                params[k] -= lr_t * adam_m[k] / (np.sqrt(adam_v[k]) + train_config.adam_eps)
            if model_config.normalization == "batch":
                b = len(idx)
                bessel = b / (b - 1) if b > 1 else 1.0
                for layer, (mu, var) in enumerate(batch_stats):
                    bn_state[f"bn{layer}_mean"] = (1 - momentum) * bn_state[f"bn{layer}_mean"] + momentum * mu
                    bn_state[f"bn{layer}_var"] = (1 - momentum) * bn_state[f"bn{layer}_var"] + momentum * var * bessel
            for k, v in params.items():
                if not np.all(np.isfinite(v)):
                    raise TrainingDivergedError(
                        f"parameter {k} became non-finite at epoch {epoch} step {step}",
                        last_good_params=last_good,
                    )
            epoch_loss += loss * len(idx)
            seen += len(idx)
        last_good = {k: v.copy() for k, v in params.items()}
        loss_curve.append((epoch, epoch_loss / seen))

    return ValueModel(
        config=model_config,
        params=params,
        bn_state=bn_state,
        grid_hash=grid.content_hash(),
        train_seed=train_config.seed,
        loss_curve=loss_curve,
    )


def evaluate_loss(model: ValueModel, data: TrainingSet, batch_size: int = 4096) -> float:
    """Inference-mode MSE over a featurized dataset."""
    total = 0.0
    n = len(data)
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        ctx, act_norm, rewards = data.slice(idx)
        pred = forward_batch(model.params, model.bn_state, model.config, ctx, act_norm, training=False)
        diff = pred - rewards
        total += float((diff * diff).sum())
    return total / n

"""Two-head action-value network with hand-written numpy backprop.

The model predicts clipped-reward probabilities for both objectives from
(request context, normalized weight action):

    state  = MLP(concat(attention-pooled history, user embedding, context embeddings))
    action = MLP(min-max normalized weight pair)
    z      = 3 x (batchnorm -> linear -> relu) over concat(state, action)
    q      = sigmoid(linear(z)) per objective, trained with summed MSE

Gradients are computed analytically for every parameter, including
through batch normalization in training mode, the attention block, and
masked average pooling; a finite-difference oracle in the tests checks
each path.  Inference freezes the normalization running statistics, so
it is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .actions import ActionGrid, normalize_actions
from .envsim import ACTION_TYPES, DEVICE_TYPES, SURFACE, RequestContext
from .errors import ConfigError, InferenceFailure

FEATURE_GROUPS = ("user", "history", "context")


@dataclass(frozen=True)
class ModelConfig:
    d_user: int = 16
    d_item: int = 16
    history_len: int = 16
    num_age_buckets: int = 8
    d_type: int = 4
    d_age: int = 4
    d_ctx: int = 4  # device and hour embedding width
    d_qk: int = 16
    d_v: int = 16
    d_state: int = 32
    d_action: int = 16
    backbone_dims: tuple[int, ...] = (64, 64, 64)
    feature_groups: tuple[str, ...] = FEATURE_GROUPS
    normalization: str = "batch"  # "batch" or "static" (debug: plain affine)
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def validate(self) -> None:
        if not self.feature_groups:
            raise ConfigError("at least one feature group required")
        for g in self.feature_groups:
            if g not in FEATURE_GROUPS:
                raise ConfigError(f"unknown feature group {g!r}")
        if self.normalization not in ("batch", "static"):
            raise ConfigError(f"unknown normalization mode {self.normalization!r}")
        if len(self.backbone_dims) != 3:
            raise ConfigError("backbone has exactly 3 layers")

    @property
    def d_entry(self) -> int:
        return self.d_item + self.d_type + self.d_age

    @property
    def d_concat(self) -> int:
        d = 0
        if "history" in self.feature_groups:
            d += self.d_v
        if "user" in self.feature_groups:
            d += self.d_user
        if "context" in self.feature_groups:
            d += 2 * self.d_ctx
        return d


def _uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    config.validate()
    p: dict[str, np.ndarray] = {}
    if "history" in config.feature_groups:
        p["emb_action_type"] = rng.normal(0.0, 0.05, (len(ACTION_TYPES), config.d_type))
        p["emb_age"] = rng.normal(0.0, 0.05, (config.num_age_buckets, config.d_age))
        p["pos"] = rng.normal(0.0, 0.05, (config.history_len, config.d_entry))
        d_e = config.d_entry
        p["attn_wq"] = _uniform_init(rng, d_e, (d_e, config.d_qk))
        p["attn_wk"] = _uniform_init(rng, d_e, (d_e, config.d_qk))
        p["attn_wv"] = _uniform_init(rng, d_e, (d_e, config.d_v))
        p["attn_wo"] = _uniform_init(rng, config.d_v, (config.d_v, config.d_v))
        p["attn_bo"] = np.zeros(config.d_v)
        p["null_hist"] = rng.normal(0.0, 0.05, (config.d_v,))
    if "context" in config.feature_groups:
        p["emb_device"] = rng.normal(0.0, 0.05, (len(DEVICE_TYPES), config.d_ctx))
        p["emb_hour"] = rng.normal(0.0, 0.05, (24, config.d_ctx))
    p["state_w"] = _uniform_init(rng, config.d_concat, (config.d_concat, config.d_state))
    p["state_b"] = np.zeros(config.d_state)
    p["act_w"] = _uniform_init(rng, 2, (2, config.d_action))
    p["act_b"] = np.zeros(config.d_action)
    dims = (config.d_state + config.d_action,) + config.backbone_dims
    for layer in range(3):
        d_in, d_out = dims[layer], dims[layer + 1]
        p[f"bn{layer}_gamma"] = np.ones(d_in)
        p[f"bn{layer}_beta"] = np.zeros(d_in)
        p[f"lin{layer}_w"] = _uniform_init(rng, d_in, (d_in, d_out))
        p[f"lin{layer}_b"] = np.zeros(d_out)
    for head in ("repin", "p2p"):
        p[f"head_{head}_w"] = _uniform_init(rng, dims[-1], (dims[-1], 1))
        p[f"head_{head}_b"] = np.zeros(1)
    return p


def init_bn_state(config: ModelConfig) -> dict[str, np.ndarray]:
    dims = (config.d_state + config.d_action,) + config.backbone_dims
    state = {}
    for layer in range(3):
        state[f"bn{layer}_mean"] = np.zeros(dims[layer])
        state[f"bn{layer}_var"] = np.ones(dims[layer])
    return state


def parameter_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


# -- featurization ----------------------------------------------------------

_DEVICE_INDEX = {d: i for i, d in enumerate(DEVICE_TYPES)}
_ACTION_TYPE_INDEX = {a: i for i, a in enumerate(ACTION_TYPES)}


@dataclass
class ContextBatch:
    user_emb: np.ndarray  # (B, d_user)
    hist_items: np.ndarray  # (B, N, d_item)
    hist_type: np.ndarray  # (B, N) int
    hist_age: np.ndarray  # (B, N) int
    hist_mask: np.ndarray  # (B, N) float
    hist_len: np.ndarray  # (B,) int
    device_idx: np.ndarray  # (B,) int
    hour_idx: np.ndarray  # (B,) int

    def __len__(self) -> int:
        return self.user_emb.shape[0]


def featurize_contexts(contexts: list[RequestContext], config: ModelConfig) -> ContextBatch:
    """Pack contexts into padded arrays; rejects out-of-vocabulary values."""
    b = len(contexts)
    n = config.history_len
    user_emb = np.zeros((b, config.d_user))
    hist_items = np.zeros((b, n, config.d_item))
    hist_type = np.zeros((b, n), dtype=np.intp)
    hist_age = np.zeros((b, n), dtype=np.intp)
    hist_mask = np.zeros((b, n))
    hist_len = np.zeros(b, dtype=np.intp)
    device_idx = np.zeros(b, dtype=np.intp)
    hour_idx = np.zeros(b, dtype=np.intp)
    for i, ctx in enumerate(contexts):
        if ctx.surface != SURFACE:
            raise ValueError(f"unknown surface {ctx.surface!r}")
        if ctx.device_type not in _DEVICE_INDEX:
            raise ValueError(f"unknown device_type {ctx.device_type!r}")
        if not 0 <= ctx.hour_of_day < 24:
            raise ValueError(f"hour_of_day {ctx.hour_of_day} outside [0, 24)")
        if len(ctx.history) > n:
            raise ValueError(f"history length {len(ctx.history)} exceeds {n}")
        if len(ctx.user_embedding) != config.d_user:
            raise ValueError("user embedding width mismatch")
        user_emb[i] = ctx.user_embedding
        device_idx[i] = _DEVICE_INDEX[ctx.device_type]
        hour_idx[i] = ctx.hour_of_day
        hist_len[i] = len(ctx.history)
        for j, entry in enumerate(ctx.history):
            if entry.action_type not in _ACTION_TYPE_INDEX:
                raise ValueError(f"unknown action_type {entry.action_type!r}")
            if not 0 <= entry.age_bucket < config.num_age_buckets:
                raise ValueError(f"age_bucket {entry.age_bucket} out of range")
            hist_items[i, j] = entry.item_embedding
            hist_type[i, j] = _ACTION_TYPE_INDEX[entry.action_type]
            hist_age[i, j] = entry.age_bucket
            hist_mask[i, j] = 1.0
    return ContextBatch(user_emb, hist_items, hist_type, hist_age, hist_mask, hist_len, device_idx, hour_idx)


# -- forward/backward --------------------------------------------------------


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    neg = ~pos
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[neg])
    out[neg] = ex / (1.0 + ex)
    return out


def forward_batch(
    params: dict[str, np.ndarray],
    bn_state: dict[str, np.ndarray],
    config: ModelConfig,
    ctx: ContextBatch,
    act_norm: np.ndarray,
    training: bool,
    cache: dict | None = None,
) -> np.ndarray:
    """Predicted (q_repin, q_p2p) per row, shape (B, 2).

    With ``training=True`` batch normalization uses batch statistics
    (required for exact gradients); inference uses the frozen running
    statistics.  Pass ``cache={}`` to record intermediates for backward.
    """
    b = len(ctx)
    blocks = []
    if "history" in config.feature_groups:
        e_type = params["emb_action_type"][ctx.hist_type]  # (B,N,d_type)
        e_age = params["emb_age"][ctx.hist_age]
        entries = np.concatenate([ctx.hist_items, e_type, e_age], axis=2)
        mask = ctx.hist_mask  # (B,N)
        x = (entries + params["pos"][None, :, :]) * mask[:, :, None]
        q = x @ params["attn_wq"]
        k = x @ params["attn_wk"]
        v = x @ params["attn_wv"]
        scale = 1.0 / np.sqrt(config.d_qk)
        scores = (q @ k.transpose(0, 2, 1)) * scale
        scores = scores + (mask[:, None, :] - 1.0) * 1e9
        scores -= scores.max(axis=2, keepdims=True)
        exps = np.exp(scores)
        attn = exps / exps.sum(axis=2, keepdims=True)  # (B,N,N)
        o = attn @ v
        h = o @ params["attn_wo"] + params["attn_bo"]
        denom = np.maximum(ctx.hist_len, 1).astype(float)
        pooled_raw = (h * mask[:, :, None]).sum(axis=1) / denom[:, None]
        empty = (ctx.hist_len == 0)[:, None]
        pooled = np.where(empty, params["null_hist"][None, :], pooled_raw)
        blocks.append(pooled)
        if cache is not None:
            cache.update(x=x, q=q, k=k, v=v, attn=attn, o=o, h=h, mask=mask,
                         denom=denom, empty=empty, pooled_raw=pooled_raw, scale=scale)
    if "user" in config.feature_groups:
        blocks.append(ctx.user_emb)
    if "context" in config.feature_groups:
        dev = params["emb_device"][ctx.device_idx]
        hour = params["emb_hour"][ctx.hour_idx]
        blocks.append(dev)
        blocks.append(hour)
    state_in = np.concatenate(blocks, axis=1)
    state_pre = state_in @ params["state_w"] + params["state_b"]
    state = _relu(state_pre)

    act_pre = act_norm @ params["act_w"] + params["act_b"]
    act = _relu(act_pre)

    z = np.concatenate([state, act], axis=1)
    if cache is not None:
        cache.update(state_in=state_in, state_pre=state_pre, state=state,
                     act_norm=act_norm, act_pre=act_pre, act=act, z0=z,
                     block_sizes=[blk.shape[1] for blk in blocks])
    layers = []
    for layer in range(3):
        gamma = params[f"bn{layer}_gamma"]
        beta = params[f"bn{layer}_beta"]
        if config.normalization == "batch":
            if training:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
            else:
                mu = bn_state[f"bn{layer}_mean"]
                var = bn_state[f"bn{layer}_var"]
            inv_std = 1.0 / np.sqrt(var + config.bn_eps)
            xhat = (z - mu) * inv_std
        else:
            mu = np.zeros(z.shape[1])
            var = None
            inv_std = np.ones(z.shape[1])
            xhat = z
        y = gamma * xhat + beta
        pre = y @ params[f"lin{layer}_w"] + params[f"lin{layer}_b"]
        z_next = _relu(pre)
        layers.append(dict(z=z, xhat=xhat, inv_std=inv_std, y=y, pre=pre, mu=mu, var=var))
        z = z_next
    logits = np.concatenate(
        [z @ params["head_repin_w"] + params["head_repin_b"],
         z @ params["head_p2p_w"] + params["head_p2p_b"]],
        axis=1,
    )
    out = _sigmoid(logits)
    if cache is not None:
        cache.update(layers=layers, z_final=z, logits=logits, out=out, training=training)
    if not np.all(np.isfinite(out)):
        raise InferenceFailure("value network produced non-finite outputs")
    return out


def mse_loss(pred: np.ndarray, rewards: np.ndarray) -> float:
    """(1/B) * sum_i [(q_p2p - r_p2p)^2 + (q_repin - r_repin)^2]."""
    if pred.shape[0] == 0:
        raise ValueError("empty batch")
    diff = pred - rewards
    return float((diff * diff).sum() / pred.shape[0])


def loss_batch(
    params, bn_state, config, ctx, act_norm, rewards, training: bool = True
) -> float:
    pred = forward_batch(params, bn_state, config, ctx, act_norm, training=training)
    return mse_loss(pred, rewards)


def backward_batch(
    params: dict[str, np.ndarray],
    bn_state: dict[str, np.ndarray],
    config: ModelConfig,
    ctx: ContextBatch,
    act_norm: np.ndarray,
    rewards: np.ndarray,
) -> tuple[float, dict[str, np.ndarray], list[tuple[np.ndarray, np.ndarray]]]:
    """Loss, analytic gradients, and per-layer batch (mean, var) pairs.

    The batch statistics are returned so the training step can fold them
    into the running estimates; the loss/gradient computation itself never
    mutates state.
    """
    cache: dict = {}
    pred = forward_batch(params, bn_state, config, ctx, act_norm, training=True, cache=cache)
    loss = mse_loss(pred, rewards)
    b = pred.shape[0]
    grads: dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in params.items()}

    dlogits = 2.0 * (pred - rewards) / b * pred * (1.0 - pred)  # (B,2)
    z_final = cache["z_final"]
    grads["head_repin_w"] = z_final.T @ dlogits[:, 0:1]
    grads["head_repin_b"] = dlogits[:, 0:1].sum(axis=0)
    grads["head_p2p_w"] = z_final.T @ dlogits[:, 1:2]
    grads["head_p2p_b"] = dlogits[:, 1:2].sum(axis=0)
    dz = dlogits[:, 0:1] @ params["head_repin_w"].T + dlogits[:, 1:2] @ params["head_p2p_w"].T

    for layer in reversed(range(3)):
        lc = cache["layers"][layer]
        dpre = dz * (lc["pre"] > 0)
        grads[f"lin{layer}_w"] = lc["y"].T @ dpre
        grads[f"lin{layer}_b"] = dpre.sum(axis=0)
        dy = dpre @ params[f"lin{layer}_w"].T
        gamma = params[f"bn{layer}_gamma"]
        grads[f"bn{layer}_gamma"] = (dy * lc["xhat"]).sum(axis=0)
        grads[f"bn{layer}_beta"] = dy.sum(axis=0)
        dxhat = dy * gamma
        if config.normalization == "batch":
            inv_std = lc["inv_std"]
            xhat = lc["xhat"]
            dz = (inv_std / b) * (
                b * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
            )
        else:
            dz = dxhat

    d_state = dz[:, : config.d_state]
    d_act = dz[:, config.d_state:]

    dact_pre = d_act * (cache["act_pre"] > 0)
    grads["act_w"] = cache["act_norm"].T @ dact_pre
    grads["act_b"] = dact_pre.sum(axis=0)

    dstate_pre = d_state * (cache["state_pre"] > 0)
    grads["state_w"] = cache["state_in"].T @ dstate_pre
    grads["state_b"] = dstate_pre.sum(axis=0)
    dstate_in = dstate_pre @ params["state_w"].T

    offset = 0
    sizes = cache["block_sizes"]
    block_grads = []
    for size in sizes:
        block_grads.append(dstate_in[:, offset: offset + size])
        offset += size
    bi = 0
    if "history" in config.feature_groups:
        dpooled = block_grads[bi]
        bi += 1
        empty = cache["empty"]
        grads["null_hist"] = (dpooled * empty).sum(axis=0)
        dpooled_raw = dpooled * (~empty)
        mask = cache["mask"]
        dh = dpooled_raw[:, None, :] * (mask / cache["denom"][:, None])[:, :, None]
        o = cache["o"]
        grads["attn_wo"] = np.einsum("bnd,bne->de", o, dh)
        grads["attn_bo"] = dh.sum(axis=(0, 1))
        do = dh @ params["attn_wo"].T
        attn = cache["attn"]
        v = cache["v"]
        dattn = do @ v.transpose(0, 2, 1)
        dv = attn.transpose(0, 2, 1) @ do
        dscores = attn * (dattn - (dattn * attn).sum(axis=2, keepdims=True))
        scale = cache["scale"]
        q, k = cache["q"], cache["k"]
        dq = (dscores @ k) * scale
        dk = (dscores.transpose(0, 2, 1) @ q) * scale
        x = cache["x"]
        grads["attn_wq"] = np.einsum("bnd,bnk->dk", x, dq)
        grads["attn_wk"] = np.einsum("bnd,bnk->dk", x, dk)
        grads["attn_wv"] = np.einsum("bnd,bnk->dk", x, dv)
        dx = dq @ params["attn_wq"].T + dk @ params["attn_wk"].T + dv @ params["attn_wv"].T
        dx = dx * mask[:, :, None]  # through the entry mask
        grads["pos"] = dx.sum(axis=0)
        d_type = dx[:, :, config.d_item: config.d_item + config.d_type]
        d_age = dx[:, :, config.d_item + config.d_type:]
        np.add.at(grads["emb_action_type"], ctx.hist_type, d_type)
        np.add.at(grads["emb_age"], ctx.hist_age, d_age)
    if "user" in config.feature_groups:
        bi += 1  # user embedding is input data, no parameters
    if "context" in config.feature_groups:
        np.add.at(grads["emb_device"], ctx.device_idx, block_grads[bi])
        np.add.at(grads["emb_hour"], ctx.hour_idx, block_grads[bi + 1])

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise InferenceFailure(f"non-finite gradient in {name}")

    batch_stats = []
    if config.normalization == "batch":
        for layer in range(3):
            lc = cache["layers"][layer]
            batch_stats.append((lc["mu"], lc["var"]))
    return loss, grads, batch_stats


# -- trained model container --------------------------------------------------


@dataclass(frozen=True)
class ValuePair:
    q_repin: float
    q_p2p: float


@dataclass
class ValueModel:
    """Frozen parameters plus everything needed to reproduce inference."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    bn_state: dict[str, np.ndarray]
    grid_hash: str
    train_seed: int
    loss_curve: list[tuple[int, float]] = field(default_factory=list)

    def forward(self, context: RequestContext, pair: tuple[float, float], grid: ActionGrid) -> ValuePair:
        ctx = featurize_contexts([context], self.config)
        norm = normalize_actions(grid, np.asarray([pair]))
        out = forward_batch(self.params, self.bn_state, self.config, ctx, norm, training=False)
        return ValuePair(q_repin=float(out[0, 0]), q_p2p=float(out[0, 1]))

    def encode_action(self, pair: tuple[float, float], grid: ActionGrid) -> np.ndarray:
        norm = normalize_actions(grid, np.asarray([pair]))
        return _relu(norm @ self.params["act_w"] + self.params["act_b"])[0]

    def predict_all_actions(self, context: RequestContext, grid: ActionGrid) -> list[ValuePair]:
        q = self.score_all_actions([context], grid)[0]
        return [ValuePair(q_repin=float(r), q_p2p=float(p)) for r, p in q]

    def score_all_actions(
        self,
        contexts: list[RequestContext],
        grid: ActionGrid,
        chunk_rows: int = 200_000,
    ) -> np.ndarray:
        """Q values for every grid action, shape (n_contexts, |A|, 2).

        States are encoded once per context and tiled across the action
        axis; row order matches the grid index order.
        """
        ctx = featurize_contexts(contexts, self.config)
        return self.score_all_actions_featurized(ctx, grid, chunk_rows=chunk_rows)

    def score_all_actions_featurized(
        self,
        ctx: ContextBatch,
        grid: ActionGrid,
        chunk_rows: int = 200_000,
    ) -> np.ndarray:
        n_ctx = len(ctx)
        n_act = len(grid)
        states = _encode_states(self.params, self.config, ctx)
        act_norm = normalize_actions(grid, grid.pairs_array())
        acts = _relu(act_norm @ self.params["act_w"] + self.params["act_b"])
        out = np.empty((n_ctx, n_act, 2))
        ctx_per_chunk = max(1, chunk_rows // max(n_act, 1))
        for start in range(0, n_ctx, ctx_per_chunk):
            stop = min(start + ctx_per_chunk, n_ctx)
            s = np.repeat(states[start:stop], n_act, axis=0)
            a = np.tile(acts, (stop - start, 1))
            z = np.concatenate([s, a], axis=1)
            q = _backbone_heads(self.params, self.bn_state, self.config, z)
            out[start:stop] = q.reshape(stop - start, n_act, 2)
        if not np.all(np.isfinite(out)):
            raise InferenceFailure("value network produced non-finite outputs")
        return out


def _encode_states(params, config: ModelConfig, ctx: ContextBatch) -> np.ndarray:
    """Inference-mode state encoding (no batch coupling anywhere)."""
    blocks = []
    if "history" in config.feature_groups:
        e_type = params["emb_action_type"][ctx.hist_type]
        e_age = params["emb_age"][ctx.hist_age]
        entries = np.concatenate([ctx.hist_items, e_type, e_age], axis=2)
        mask = ctx.hist_mask
        x = (entries + params["pos"][None, :, :]) * mask[:, :, None]
        q = x @ params["attn_wq"]
        k = x @ params["attn_wk"]
        v = x @ params["attn_wv"]
        scores = (q @ k.transpose(0, 2, 1)) / np.sqrt(config.d_qk)
        scores = scores + (mask[:, None, :] - 1.0) * 1e9
        scores -= scores.max(axis=2, keepdims=True)
        exps = np.exp(scores)
        attn = exps / exps.sum(axis=2, keepdims=True)
        h = (attn @ v) @ params["attn_wo"] + params["attn_bo"]
        denom = np.maximum(ctx.hist_len, 1).astype(float)
        pooled = (h * mask[:, :, None]).sum(axis=1) / denom[:, None]
        empty = (ctx.hist_len == 0)[:, None]
        pooled = np.where(empty, params["null_hist"][None, :], pooled)
        blocks.append(pooled)
    if "user" in config.feature_groups:
        blocks.append(ctx.user_emb)
    if "context" in config.feature_groups:
        blocks.append(params["emb_device"][ctx.device_idx])
        blocks.append(params["emb_hour"][ctx.hour_idx])
    state_in = np.concatenate(blocks, axis=1)
    return _relu(state_in @ params["state_w"] + params["state_b"])


def _backbone_heads(params, bn_state, config: ModelConfig, z: np.ndarray) -> np.ndarray:
    for layer in range(3):
        gamma = params[f"bn{layer}_gamma"]
        beta = params[f"bn{layer}_beta"]
        if config.normalization == "batch":
            inv_std = 1.0 / np.sqrt(bn_state[f"bn{layer}_var"] + config.bn_eps)
            xhat = (z - bn_state[f"bn{layer}_mean"]) * inv_std
        else:
            xhat = z
        y = gamma * xhat + beta
        z = _relu(y @ params[f"lin{layer}_w"] + params[f"lin{layer}_b"])
    logits = np.concatenate(
        [z @ params["head_repin_w"] + params["head_repin_b"],
         z @ params["head_p2p_w"] + params["head_p2p_b"]],
        axis=1,
    )
    return _sigmoid(logits)

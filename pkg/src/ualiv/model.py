"""The lifelong-interaction-value network and its training step.

One shared embedding encoder turns a pair state into
H = concat(user block, author block, dynamic block).  Each feedback
label (click, watch, follow, gift) owns a task tower consisting of a
supervised reward head and two future-value heads; the tower's value
is

    q(H) = r_hat(H) + gamma * min(v_hat_1(H), v_hat_2(H))

with the minimum over the two composed heads curbing overestimation.
Bootstrap targets come from slowly tracking target copies of the
encoder and every head:

    y = r + gamma * max over the author's items of the target q

evaluated at the approximated next state, with no gradient flowing
through y.  A small assistance classifier over the static blocks
predicts whether a gift occurs, sharpening the shared embeddings for
the sparsest label.  The per-tower loss is
huber(r_hat, r) + sum over both heads of huber(q_k, y); the total adds
the towers and the assistance term.

Ablation switches: ``disable_mt`` trains a single tower (the one used
for ranking), ``disable_sl`` drops the reward-head decomposition and
trains plain double Q heads, ``disable_assist`` removes the gift
classifier.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import rng as rngmod
from .core import TOWERS, LIVScores, TransitionSample, UAState
from .errors import ConfigError, NumericError, UnavailableError, ValidationError

N_COUNTER_FEATURES = 6


@dataclass
class ModelConfig:
    gamma: float = 0.9
    tau: float = 0.005
    lr_critic: float = 1e-3
    lr_embedding: float = 1e-3
    batch_size: int = 1024
    hidden_dims: tuple = (64, 64)
    embed_dim: int = 32
    huber_delta: float = 1.0
    grad_clip_norm: float = 10.0
    disable_mt: bool = False
    disable_sl: bool = False
    disable_assist: bool = False
    primary_tower: str = "watch"
    towers: tuple = TOWERS

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must be in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must be in (0, 1]")
        if min(self.lr_critic, self.lr_embedding, self.huber_delta) <= 0:
            raise ConfigError("learning rates and huber delta must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if tuple(self.towers) != TOWERS:
            raise ConfigError("the tower set is fixed to click/watch/follow/gift")
        if self.primary_tower not in TOWERS:
            raise ConfigError(f"unknown primary tower {self.primary_tower!r}")
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)

    @property
    def active_towers(self) -> tuple:
        return (self.primary_tower,) if self.disable_mt else TOWERS


@dataclass
class FeatureSpace:
    """Vocabulary sizes plus the static item catalog metadata the model
    needs to encode hypothetical next interactions."""

    n_users: int
    n_cohorts: int
    n_tiers: int
    n_authors: int
    n_items: int
    n_categories: int
    item_author: np.ndarray
    item_category: np.ndarray

    @classmethod
    def from_population(cls, population, config) -> "FeatureSpace":
        return cls(
            n_users=population.n_users,
            n_cohorts=config.n_cohorts,
            n_tiers=config.n_activity_tiers,
            n_authors=population.n_authors,
            n_items=population.n_items,
            n_categories=config.n_categories,
            item_author=np.asarray(population.item_author, dtype=np.int64),
            item_category=np.asarray(population.item_category, dtype=np.int64),
        )


@dataclass(frozen=True)
class StateEmbedding:
    """Encoded state H = concat(user block, author block, dynamic block)."""

    h: np.ndarray
    embed_dim: int

    @property
    def user_block(self) -> np.ndarray:
        return self.h[: self.embed_dim]

    @property
    def author_block(self) -> np.ndarray:
        return self.h[self.embed_dim : 2 * self.embed_dim]

    @property
    def dynamic_block(self) -> np.ndarray:
        return self.h[2 * self.embed_dim :]


def batch_features(states) -> dict:
    """Splits a list of states into the encoder's integer/float arrays."""
    return {
        "user_id": np.array([s.user_static.user_id for s in states], dtype=np.int64),
        "cohort": np.array([s.user_static.cohort_id for s in states], dtype=np.int64),
        "tier": np.array([s.user_static.activity_tier for s in states], dtype=np.int64),
        "author_id": np.array([s.author_static.author_id for s in states], dtype=np.int64),
        "item_id": np.array([s.author_static.item_id for s in states], dtype=np.int64),
        "category": np.array([s.author_static.category_id for s in states], dtype=np.int64),
        "counters": np.array([s.dynamic.as_vector() for s in states], dtype=np.float32),
    }


_TABLE_FIELDS = ("user_id", "cohort", "tier", "author_id", "item_id", "category")


def next_state_features(space: FeatureSpace, batch) -> tuple:
    """Flattened padded (B*J) feature arrays of every candidate next state
    (the approximated next counters paired with each of the author's items).
    Returns (features, valid mask of shape (B, J), J)."""
    B = len(batch)
    J = max(max((len(s.author_items) for s in batch), default=1), 1)
    items = np.zeros((B, J), dtype=np.int64)
    mask = np.zeros((B, J), dtype=bool)
    for i, s in enumerate(batch):
        n = len(s.author_items)
        if n == 0:
            continue
        items[i, :n] = s.author_items
        mask[i, :n] = True
        if n < J:
            items[i, n:] = s.author_items[0]
    flat_items = items.reshape(-1)
    next_states = [s.next_state for s in batch]
    feats = {
        "user_id": np.repeat(np.array([s.user_static.user_id for s in next_states], dtype=np.int64), J),
        "cohort": np.repeat(np.array([s.user_static.cohort_id for s in next_states], dtype=np.int64), J),
        "tier": np.repeat(np.array([s.user_static.activity_tier for s in next_states], dtype=np.int64), J),
        "author_id": space.item_author[flat_items],
        "item_id": flat_items,
        "category": space.item_category[flat_items],
        "counters": np.repeat(np.array([s.dynamic.as_vector() for s in next_states], dtype=np.float32), J, axis=0),
    }
    return feats, mask, J


class StateEncoder:
    """Shared embedding layer: sum-pooled static id embeddings per block
    plus a learned projection of log1p-compressed counters."""

    def __init__(self, space: FeatureSpace, embed_dim: int, rng: np.random.Generator, dtype=np.float32):
        self.space = space
        self.embed_dim = int(embed_dim)
        self.dtype = dtype
        vocab = {
            "user_id": space.n_users,
            "cohort": space.n_cohorts,
            "tier": space.n_tiers,
            "author_id": space.n_authors,
            "item_id": space.n_items,
            "category": space.n_categories,
        }
        self.tables = {name: nn.EmbeddingTable(vocab[name], embed_dim, rng, dtype) for name in _TABLE_FIELDS}
        self.dyn_net = nn.DenseNetwork([N_COUNTER_FEATURES, embed_dim], ["identity"], rng, dtype)

    @property
    def width(self) -> int:
        return 3 * self.embed_dim

    def params(self, prefix: str = "enc/") -> dict:
        out = {f"{prefix}{name}": table.rows for name, table in self.tables.items()}
        out.update(self.dyn_net.params(prefix + "dyn/"))
        return out

    def set_params(self, params: dict, prefix: str = "enc/") -> None:
        for name, table in self.tables.items():
            arr = params[f"{prefix}{name}"]
            if arr.shape != table.rows.shape:
                raise ConfigError(f"embedding shape mismatch for {name}")
            table.rows = arr
        self.dyn_net.set_params(params, prefix + "dyn/")

    def clone(self) -> "StateEncoder":
        other = StateEncoder.__new__(StateEncoder)
        other.space = self.space
        other.embed_dim = self.embed_dim
        other.dtype = self.dtype
        other.tables = copy.deepcopy(self.tables)
        other.dyn_net = copy.deepcopy(self.dyn_net)
        return other

    def astype(self, dtype) -> "StateEncoder":
        other = self.clone()
        for table in other.tables.values():
            table.rows = table.rows.astype(dtype)
        other.dyn_net = other.dyn_net.astype(dtype)
        other.dtype = dtype
        return other

    def encode_batch(self, feats: dict):
        """Returns (H, cache) for a feature batch; H has shape (B, 3e)."""
        idx = {name: self.tables[name].indices(feats[name]) for name in _TABLE_FIELDS}
        h_user = self.tables["user_id"].rows[idx["user_id"]] + self.tables["cohort"].rows[idx["cohort"]] + self.tables["tier"].rows[idx["tier"]]
        h_author = self.tables["author_id"].rows[idx["author_id"]] + self.tables["item_id"].rows[idx["item_id"]] + self.tables["category"].rows[idx["category"]]
        x_dyn = np.log1p(np.asarray(feats["counters"], dtype=self.dyn_net.weights[0].dtype))
        h_dyn, dyn_cache = self.dyn_net.forward(x_dyn)
        H = np.concatenate([h_user, h_author, h_dyn], axis=1)
        return H, {"idx": idx, "dyn_cache": dyn_cache}

    def backward(self, grad_H: np.ndarray, cache) -> dict:
        e = self.embed_dim
        g_user = grad_H[:, :e]
        g_author = grad_H[:, e : 2 * e]
        g_dyn = grad_H[:, 2 * e :]
        grads = {}
        for name, gblock in (("user_id", g_user), ("cohort", g_user), ("tier", g_user),
                             ("author_id", g_author), ("item_id", g_author), ("category", g_author)):
            rows = np.zeros_like(self.tables[name].rows)
            np.add.at(rows, cache["idx"][name], gblock)
            grads[f"enc/{name}"] = rows
        dyn_grads, _ = self.dyn_net.backward(g_dyn, cache["dyn_cache"])
        for key, g in dyn_grads.items():
            grads[f"enc/dyn/{key}"] = g
        return grads


def _head_dims(in_width: int, hidden: tuple) -> list:
    return [in_width, *hidden, 1]


class TaskTower:
    """One label's heads: supervised reward head plus two value heads
    (or two plain Q heads when the decomposition is disabled)."""

    def __init__(self, name: str, in_width: int, hidden: tuple, decomposed: bool, rng: np.random.Generator, dtype=np.float32):
        self.name = name
        self.decomposed = decomposed
        dims = _head_dims(in_width, hidden)
        if decomposed:
            self.nets = {"r": nn.DenseNetwork(dims, rng=rng, dtype=dtype),
                         "v1": nn.DenseNetwork(dims, rng=rng, dtype=dtype),
                         "v2": nn.DenseNetwork(dims, rng=rng, dtype=dtype)}
        else:
            self.nets = {"q1": nn.DenseNetwork(dims, rng=rng, dtype=dtype),
                         "q2": nn.DenseNetwork(dims, rng=rng, dtype=dtype)}

    def params(self, prefix: str) -> dict:
        out = {}
        for key, net in self.nets.items():
            out.update(net.params(f"{prefix}{key}/"))
        return out


class LIVModel:
    """Shared encoder + task towers + assistance classifier + Adam.

    A model instance is a single-writer training object; ``snapshot``
    returns an independent deep copy for read-only scoring.
    """

    def __init__(self, config: ModelConfig, space: FeatureSpace, seed: int = 0):
        self.config = config
        self.space = space
        self.seed = int(seed)
        rng = rngmod.stream(seed, "model-init")
        e = config.embed_dim
        self.encoder = StateEncoder(space, e, rng)
        self.towers = {
            name: TaskTower(name, self.encoder.width, config.hidden_dims, not config.disable_sl, rng)
            for name in config.active_towers
        }
        self.assist_net = None
        if not config.disable_assist:
            self.assist_net = nn.DenseNetwork([2 * e, 64, 1], rng=rng)

        self.target_encoder = self.encoder.clone()
        self.target_towers = copy.deepcopy(self.towers)

        self._embed_params = self.encoder.params()
        self._head_params = {}
        for name, tower in self.towers.items():
            self._head_params.update(tower.params(f"tower/{name}/"))
        if self.assist_net is not None:
            self._head_params.update(self.assist_net.params("assist/"))
        self.adam_embed = nn.AdamState(self._embed_params)
        self.adam_heads = nn.AdamState(self._head_params)
        self.step_count = 0

    # -- parameter plumbing ----------------------------------------------------

    def online_params(self) -> dict:
        return {**self._embed_params, **self._head_params}

    def target_params(self) -> dict:
        out = self.target_encoder.params()
        for name, tower in self.target_towers.items():
            out.update(tower.params(f"tower/{name}/"))
        return out

    def snapshot(self) -> "LIVModel":
        """Independent read-only copy; training this one never moves it."""
        return copy.deepcopy(self)

    # -- encoding ---------------------------------------------------------------

    def encode_state(self, state: UAState) -> StateEmbedding:
        H, _ = self.encoder.encode_batch(batch_features([state]))
        return StateEmbedding(h=H[0], embed_dim=self.config.embed_dim)

    def _tower_heads(self, towers: dict, encoder_H: np.ndarray, name: str):
        """Forward all heads of one tower; returns dict of (value, cache)."""
        tower = towers[name]
        out = {}
        for key, net in tower.nets.items():
            y, cache = net.forward(encoder_H)
            out[key] = (y[:, 0], cache)
        return out

    def _compose_q(self, heads: dict):
        """(q1, q2, q) from head values under the current decomposition."""
        gamma = self.config.gamma
        if "r" in heads:
            r = heads["r"][0]
            q1 = r + gamma * heads["v1"][0]
            q2 = r + gamma * heads["v2"][0]
        else:
            q1 = heads["q1"][0]
            q2 = heads["q2"][0]
        return q1, q2, np.minimum(q1, q2)

    # -- public value views ------------------------------------------------------

    def tower_q(self, embedding: StateEmbedding, tower: str) -> float:
        if tower not in self.towers:
            raise ValidationError(f"tower {tower!r} is not active")
        heads = self._tower_heads(self.towers, embedding.h[None, :], tower)
        _, _, q = self._compose_q(heads)
        return float(q[0])

    def decompose_q(self, embedding: StateEmbedding, tower: str):
        """(r_hat, v_hat_1, v_hat_2) with q = r_hat + gamma*min(v1, v2)."""
        if tower not in self.towers:
            raise ValidationError(f"tower {tower!r} is not active")
        if self.config.disable_sl:
            raise UnavailableError("tower trained without the supervised decomposition")
        heads = self._tower_heads(self.towers, embedding.h[None, :], tower)
        return float(heads["r"][0][0]), float(heads["v1"][0][0]), float(heads["v2"][0][0])

    def score(self, states) -> list:
        """Four-tower values per state from the current parameters."""
        if not states:
            return []
        H, _ = self.encoder.encode_batch(batch_features(states))
        return self.score_encoded(H)

    def score_encoded(self, H: np.ndarray) -> list:
        values = {name: np.zeros(H.shape[0], dtype=np.float64) for name in TOWERS}
        for name in self.towers:
            heads = self._tower_heads(self.towers, H, name)
            _, _, q = self._compose_q(heads)
            values[name] = q.astype(np.float64)
        return [
            LIVScores(q_click=float(values["click"][i]), q_watch=float(values["watch"][i]),
                      q_follow=float(values["follow"][i]), q_gift=float(values["gift"][i]))
            for i in range(H.shape[0])
        ]

    # -- bootstrap targets --------------------------------------------------------

    def bellman_targets(self, batch) -> dict:
        """Per-tower bootstrap targets y for a batch; no gradients flow."""
        B = len(batch)
        for s in batch:
            if not s.terminal and len(s.author_items) == 0:
                raise ValidationError("non-terminal sample with empty author item set")
        feats, mask, J = next_state_features(self.space, batch)
        H_next, _ = self.target_encoder.encode_batch(feats)
        gamma = self.config.gamma
        terminal = np.array([s.terminal for s in batch], dtype=bool)
        targets = {}
        for name in self.towers:
            heads = self._tower_heads(self.target_towers, H_next, name)
            _, _, q = self._compose_q(heads)
            q = q.reshape(B, J)
            q = np.where(mask, q, -np.inf)
            best = np.max(q, axis=1)
            best = np.where(np.isfinite(best), best, 0.0)
            r = np.array([s.reward.channel(name) for s in batch], dtype=np.float32)
            y = r + gamma * best.astype(np.float32)
            targets[name] = np.where(terminal, r, y).astype(np.float32)
        return targets

    def bellman_target(self, sample: TransitionSample, tower: str) -> float:
        if tower not in self.towers:
            raise ValidationError(f"tower {tower!r} is not active")
        return float(self.bellman_targets([sample])[tower][0])

    # -- losses ---------------------------------------------------------------------

    def _tower_loss_terms(self, name: str, heads: dict, rewards: np.ndarray, y: np.ndarray):
        """Per-sample loss vector and upstream gradients for one tower."""
        delta = self.config.huber_delta
        gamma = self.config.gamma
        q1, q2, _ = self._compose_q(heads)
        loss_vec = nn.huber(q1, y, delta) + nn.huber(q2, y, delta)
        g1 = nn.huber_grad(q1, y, delta)
        g2 = nn.huber_grad(q2, y, delta)
        if "r" in heads:
            r_pred = heads["r"][0]
            loss_vec = loss_vec + nn.huber(r_pred, rewards, delta)
            upstream = {"r": nn.huber_grad(r_pred, rewards, delta) + g1 + g2, "v1": gamma * g1, "v2": gamma * g2}
        else:
            upstream = {"q1": g1, "q2": g2}
        return loss_vec, upstream

    def tower_loss(self, batch, tower: str) -> float:
        """Mean huber(r_hat, r) + sum_k huber(q_k, y) over the batch."""
        if not batch:
            raise ValidationError("empty batch")
        if tower not in self.towers:
            raise ValidationError(f"tower {tower!r} is not active")
        H, _ = self.encoder.encode_batch(batch_features([s.state for s in batch]))
        y = self.bellman_targets(batch)[tower]
        heads = self._tower_heads(self.towers, H, tower)
        rewards = np.array([s.reward.channel(tower) for s in batch], dtype=np.float32)
        loss_vec, _ = self._tower_loss_terms(tower, heads, rewards, y)
        return float(np.mean(loss_vec))

    def assistance_gift_loss(self, batch) -> float:
        if not batch:
            raise ValidationError("empty batch")
        if self.assist_net is None:
            return 0.0
        H, _ = self.encoder.encode_batch(batch_features([s.state for s in batch]))
        logits, _ = self.assist_net.forward(H[:, : 2 * self.config.embed_dim])
        labels = np.array([1.0 if s.reward.r_gift > 0 else 0.0 for s in batch], dtype=np.float32)
        return float(np.mean(nn.bce(logits[:, 0], labels)))

    def total_loss(self, batch) -> float:
        """Sum of the active tower losses plus the assistance term."""
        total = sum(self.tower_loss(batch, name) for name in self.towers)
        return float(total + self.assistance_gift_loss(batch))

    # -- training ---------------------------------------------------------------------

    def train_step(self, batch) -> dict:
        """One Adam step on the total loss, then a polyak target sync."""
        if not batch:
            raise ValidationError("empty batch")
        cfg = self.config
        B = len(batch)
        feats = batch_features([s.state for s in batch])
        H, enc_cache = self.encoder.encode_batch(feats)
        targets = self.bellman_targets(batch)

        grads: dict = {}
        grad_H = np.zeros_like(H)
        metrics = {"step": self.step_count + 1}
        total = 0.0
        for name, tower in self.towers.items():
            heads = self._tower_heads(self.towers, H, name)
            rewards = np.array([s.reward.channel(name) for s in batch], dtype=np.float32)
            y = targets[name]
            loss_vec, upstream = self._tower_loss_terms(name, heads, rewards, y)
            tower_mean = float(np.mean(loss_vec))
            total += tower_mean
            for key, up in upstream.items():
                head_grads, gH = tower.nets[key].backward((up / B)[:, None], heads[key][1])
                nn.accumulate(grads, head_grads, f"tower/{name}/{key}/")
                grad_H += gH
            metrics[f"{name}/critic_loss"] = tower_mean
            metrics[f"{name}/target_q_mean"] = float(np.mean(y))
            if "r" in heads:
                metrics[f"{name}/reward_mae"] = float(np.mean(np.abs(heads["r"][0] - rewards)))
            else:
                metrics[f"{name}/reward_mae"] = float("nan")

        assist_loss = 0.0
        if self.assist_net is not None:
            X = H[:, : 2 * cfg.embed_dim]
            logits, assist_cache = self.assist_net.forward(X)
            labels = np.array([1.0 if s.reward.r_gift > 0 else 0.0 for s in batch], dtype=np.float32)
            assist_loss = float(np.mean(nn.bce(logits[:, 0], labels)))
            total += assist_loss
            g_logit = (nn.bce_grad(logits[:, 0], labels) / B)[:, None]
            a_grads, gX = self.assist_net.backward(g_logit, assist_cache)
            nn.accumulate(grads, a_grads, "assist/")
            grad_H[:, : 2 * cfg.embed_dim] += gX
        metrics["assist_loss"] = assist_loss

        if not np.isfinite(total):
            bad_rows = np.nonzero(~np.isfinite(H).all(axis=1))[0].tolist()
            bad_rewards = [i for i, s in enumerate(batch) if not all(np.isfinite(s.reward.as_vector()))]
            raise NumericError(
                f"non-finite loss at step {self.step_count + 1}; "
                f"non-finite encodings at {bad_rows[:16]}, non-finite rewards at {bad_rewards[:16]}"
            )

        enc_grads = self.encoder.backward(grad_H, enc_cache)
        grads.update(enc_grads)
        metrics["grad_norm"] = nn.clip_global_norm(grads, cfg.grad_clip_norm)

        nn.adam_step(self._embed_params, grads, self.adam_embed, cfg.lr_embedding)
        nn.adam_step(self._head_params, grads, self.adam_heads, cfg.lr_critic)
        nn.soft_update(self.target_params(), self.online_params(), cfg.tau)
        self.step_count += 1
        metrics["total_loss"] = total
        return metrics

    # -- checkpointing -------------------------------------------------------------------

    def checkpoint_blocks(self) -> dict:
        blocks = {}
        for key, arr in self.online_params().items():
            blocks[f"online/{key}"] = arr
        for key, arr in self.target_params().items():
            blocks[f"target/{key}"] = arr
        for group, state in (("embed", self.adam_embed), ("heads", self.adam_heads)):
            for key, arr in state.m.items():
                blocks[f"adam/{group}/m/{key}"] = arr
            for key, arr in state.v.items():
                blocks[f"adam/{group}/v/{key}"] = arr
        return blocks

    def checkpoint_header(self) -> dict:
        cfg = self.config
        return {
            "kind": "liv-model",
            "seed": self.seed,
            "step_count": self.step_count,
            "adam_t": {"embed": self.adam_embed.t, "heads": self.adam_heads.t},
            "hyperparameters": {
                "gamma": cfg.gamma, "tau": cfg.tau, "lr_critic": cfg.lr_critic,
                "lr_embedding": cfg.lr_embedding, "batch_size": cfg.batch_size,
                "hidden_dims": list(cfg.hidden_dims), "embed_dim": cfg.embed_dim,
                "huber_delta": cfg.huber_delta, "grad_clip_norm": cfg.grad_clip_norm,
                "disable_mt": cfg.disable_mt, "disable_sl": cfg.disable_sl,
                "disable_assist": cfg.disable_assist, "primary_tower": cfg.primary_tower,
            },
        }

    def load_blocks(self, header: dict, blocks: dict) -> None:
        if header.get("kind") != "liv-model":
            raise ValidationError("checkpoint is not a liv-model checkpoint")
        def pull(name, arr):
            src = blocks.get(name)
            if src is None or src.shape != arr.shape:
                raise ValidationError(f"checkpoint missing or mismatched block {name}")
            arr[...] = src

        for key, arr in self.online_params().items():
            pull(f"online/{key}", arr)
        for key, arr in self.target_params().items():
            pull(f"target/{key}", arr)
        for group, state in (("embed", self.adam_embed), ("heads", self.adam_heads)):
            for key in state.m:
                pull(f"adam/{group}/m/{key}", state.m[key])
                pull(f"adam/{group}/v/{key}", state.v[key])
            state.t = int(header["adam_t"][group])
        self.step_count = int(header["step_count"])

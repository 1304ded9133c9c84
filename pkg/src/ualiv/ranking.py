"""Serving-stage ranking and the desk-scale baselines.

``score_candidates`` + ``top_k`` implement the serving decision: score
every candidate item for the requesting user, expose the K best in
descending order with ties broken by ascending item id so evaluation
is deterministic.  The value-model variant ranks by a configurable
non-negative weighting of the four tower values; the supervised
baseline ranks by predicted click probability from static features
only; the single-task Q baseline ranks by its combined click+watch
value; the random baseline draws seeded uniforms.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import rng as rngmod
from .core import AuthorStatic, DynamicCounters, UAKey, UAState, UserStatic
from .errors import ConfigError, ValidationError
from .model import FeatureSpace, StateEncoder, batch_features, next_state_features

STATIC_FIELDS = ("user_id", "cohort", "tier", "author_id", "item_id", "category")


def top_k(scores, candidates, k: int):
    """Indices into ``candidates`` of the K best scores, deterministic."""
    scores = np.asarray(scores, dtype=np.float64)
    items = np.asarray(candidates, dtype=np.int64)
    if k > items.shape[0]:
        raise ValidationError(f"k={k} exceeds candidate count {items.shape[0]}")
    order = np.lexsort((items, -scores))
    return items[order[:k]]


@dataclass
class RankingPolicy:
    """A scoring rule over candidate items plus its parameter snapshot."""

    variant: str  # rliv_ua | ranking_model | dqn | random
    weights: np.ndarray | None = None       # tower weights for rliv_ua
    liv_model: object = None
    ranking_net: object = None
    dqn_model: object = None
    ctr_mix: float = 0.0                    # optional blend hook, off by default
    rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if self.variant not in ("rliv_ua", "ranking_model", "dqn", "random"):
            raise ConfigError(f"unknown policy variant {self.variant!r}")
        if self.variant == "rliv_ua":
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (4,) or np.any(w < 0) or not np.any(w > 0):
                raise ConfigError("tower weights must be 4 non-negative values with at least one positive")
            self.weights = w


def assemble_states(user_static: UserStatic, candidates, counters_lookup) -> list:
    """Builds one state per candidate (author_id, item_id, category_id)."""
    states = []
    for author_id, item_id, category_id in candidates:
        key = UAKey(user_static.user_id, int(author_id))
        counters = counters_lookup(key)
        states.append(
            UAState(
                user_static=user_static,
                author_static=AuthorStatic(author_id=int(author_id), item_id=int(item_id), category_id=int(category_id)),
                dynamic=counters,
            )
        )
    return states


def score_candidates(policy: RankingPolicy, user_static: UserStatic, candidates, counters_lookup) -> np.ndarray:
    """Scores for each candidate; a pure function of the policy snapshot."""
    if len(candidates) == 0:
        raise ValidationError("empty candidate list")
    if policy.variant == "random":
        return policy.rng.uniform(size=len(candidates))
    states = assemble_states(user_static, candidates, counters_lookup)
    if policy.variant == "rliv_ua":
        livs = policy.liv_model.score(states)
        scores = np.array(
            [policy.weights @ (s.q_click, s.q_watch, s.q_follow, s.q_gift) for s in livs], dtype=np.float64
        )
        if policy.ctr_mix > 0.0 and policy.ranking_net is not None:
            scores = scores + policy.ctr_mix * policy.ranking_net.predict(batch_features(states))
        return scores
    if policy.variant == "ranking_model":
        return policy.ranking_net.predict(batch_features(states)).astype(np.float64)
    if policy.variant == "dqn":
        return policy.dqn_model.q_values(states).astype(np.float64)
    raise ConfigError(f"unknown policy variant {policy.variant!r}")


class RankingModelNet:
    """Click-probability model over static features: sum-pooled pairwise
    embedding interactions plus an MLP over the concatenated embeddings."""

    def __init__(self, space: FeatureSpace, embed_dim: int = 32, hidden=(64, 64), seed: int = 0):
        rng = rngmod.stream(seed, "ranking-model-init")
        vocab = {
            "user_id": space.n_users, "cohort": space.n_cohorts, "tier": space.n_tiers,
            "author_id": space.n_authors, "item_id": space.n_items, "category": space.n_categories,
        }
        self.embed_dim = int(embed_dim)
        self.tables = {name: nn.EmbeddingTable(vocab[name], embed_dim, rng) for name in STATIC_FIELDS}
        self.mlp = nn.DenseNetwork([len(STATIC_FIELDS) * embed_dim, *hidden, 1], rng=rng)
        self.params = {f"emb/{n}": t.rows for n, t in self.tables.items()}
        self.params.update(self.mlp.params("mlp/"))
        self.adam = nn.AdamState(self.params)

    def _forward(self, feats):
        idx = {n: self.tables[n].indices(feats[n]) for n in STATIC_FIELDS}
        embs = [self.tables[n].rows[idx[n]] for n in STATIC_FIELDS]
        stack = np.stack(embs, axis=1)                      # (B, F, e)
        total = stack.sum(axis=1)                           # (B, e)
        fm = 0.5 * ((total ** 2).sum(axis=1) - (stack ** 2).sum(axis=(1, 2)))
        concat = stack.reshape(stack.shape[0], -1)
        mlp_out, cache = self.mlp.forward(concat)
        logit = mlp_out[:, 0] + fm
        return logit, {"idx": idx, "stack": stack, "total": total, "mlp_cache": cache}

    def predict(self, feats) -> np.ndarray:
        logit, _ = self._forward(feats)
        return nn.sigmoid(logit)

    def train_step(self, feats, labels, lr: float = 1e-3) -> float:
        logit, cache = self._forward(feats)
        labels = np.asarray(labels, dtype=np.float32)
        loss = float(np.mean(nn.bce(logit, labels)))
        B = logit.shape[0]
        g_logit = (nn.bce_grad(logit, labels) / B).astype(np.float32)
        grads = {}
        mlp_grads, g_concat = self.mlp.backward(g_logit[:, None], cache["mlp_cache"])
        nn.accumulate(grads, mlp_grads, "mlp/")
        g_stack = g_concat.reshape(cache["stack"].shape)
        # pairwise term: d fm / d e_i = (sum of embeddings) - e_i
        g_stack = g_stack + g_logit[:, None, None] * (cache["total"][:, None, :] - cache["stack"])
        for f, name in enumerate(STATIC_FIELDS):
            rows = np.zeros_like(self.tables[name].rows)
            np.add.at(rows, cache["idx"][name], g_stack[:, f, :])
            grads[f"emb/{name}"] = rows
        nn.clip_global_norm(grads, 10.0)
        nn.adam_step(self.params, grads, self.adam, lr)
        return loss


def ranking_model_train(events, space: FeatureSpace, seed: int = 0, steps: int = 2000, batch_size: int = 256, lr: float = 1e-3) -> RankingModelNet:
    """Fits the click predictor on labeled exposure events."""
    if not events:
        raise ValidationError("empty training corpus")
    labels_all = np.array([1.0 if e.reward.r_click > 0 else 0.0 for e in events], dtype=np.float32)
    if labels_all.min() == labels_all.max():
        warnings.warn("single-class click corpus; training proceeds but the model will be degenerate")
    feats_all = batch_features([e.state for e in events])
    net = RankingModelNet(space, seed=seed)
    gen = rngmod.stream(seed, "ranking-model-batches")
    n = len(events)
    for _ in range(steps):
        idx = gen.integers(0, n, size=min(batch_size, n))
        feats = {k: v[idx] for k, v in feats_all.items()}
        net.train_step(feats, labels_all[idx], lr)
    return net


class DQNModel:
    """Single-task Q baseline on the combined click+watch reward.

    Same encoder and replay plumbing as the value model, but one Q head,
    no decomposition, and hard target copies on a fixed cadence."""

    def __init__(self, space: FeatureSpace, seed: int = 0, gamma: float = 0.9, embed_dim: int = 32,
                 hidden=(64, 64), lr: float = 1e-3, sync_every: int = 1000, huber_delta: float = 1.0,
                 grad_clip_norm: float = 10.0):
        self.space = space
        self.gamma = float(gamma)
        self.lr = float(lr)
        self.sync_every = int(sync_every)
        self.huber_delta = float(huber_delta)
        self.grad_clip_norm = float(grad_clip_norm)
        rng = rngmod.stream(seed, "dqn-init")
        self.encoder = StateEncoder(space, embed_dim, rng)
        self.q_net = nn.DenseNetwork([self.encoder.width, *hidden, 1], rng=rng)
        self.target_encoder = self.encoder.clone()
        self.target_q_net = self.q_net.astype(self.q_net.weights[0].dtype)
        self._hard_sync()
        self.params = self.encoder.params()
        self.params.update(self.q_net.params("q/"))
        self.adam = nn.AdamState(self.params)
        self.step_count = 0

    def _hard_sync(self):
        for t, o in zip(self.target_q_net.weights, self.q_net.weights):
            t[...] = o
        for t, o in zip(self.target_q_net.biases, self.q_net.biases):
            t[...] = o
        for name, table in self.target_encoder.tables.items():
            table.rows[...] = self.encoder.tables[name].rows
        for t, o in zip(self.target_encoder.dyn_net.weights, self.encoder.dyn_net.weights):
            t[...] = o
        for t, o in zip(self.target_encoder.dyn_net.biases, self.encoder.dyn_net.biases):
            t[...] = o

    @staticmethod
    def combined_reward(sample) -> float:
        return sample.reward.r_click + sample.reward.r_watch

    def q_values(self, states) -> np.ndarray:
        H, _ = self.encoder.encode_batch(batch_features(states))
        q, _ = self.q_net.forward(H)
        return q[:, 0]

    def train_step(self, batch) -> dict:
        if not batch:
            raise ValidationError("empty batch")
        B = len(batch)
        feats, mask, J = next_state_features(self.space, batch)
        H_next, _ = self.target_encoder.encode_batch(feats)
        q_next, _ = self.target_q_net.forward(H_next)
        q_next = np.where(mask, q_next[:, 0].reshape(B, J), -np.inf)
        best = np.max(q_next, axis=1)
        best = np.where(np.isfinite(best), best, 0.0)
        r = np.array([self.combined_reward(s) for s in batch], dtype=np.float32)
        terminal = np.array([s.terminal for s in batch], dtype=bool)
        y = np.where(terminal, r, r + self.gamma * best.astype(np.float32)).astype(np.float32)

        H, enc_cache = self.encoder.encode_batch(batch_features([s.state for s in batch]))
        q, q_cache = self.q_net.forward(H)
        q = q[:, 0]
        loss = float(np.mean(nn.huber(q, y, self.huber_delta)))
        g_q = (nn.huber_grad(q, y, self.huber_delta) / B)[:, None]
        grads = {}
        q_grads, grad_H = self.q_net.backward(g_q, q_cache)
        nn.accumulate(grads, q_grads, "q/")
        grads.update(self.encoder.backward(grad_H, enc_cache))
        nn.clip_global_norm(grads, self.grad_clip_norm)
        nn.adam_step(self.params, grads, self.adam, self.lr)
        self.step_count += 1
        if self.step_count % self.sync_every == 0:
            self._hard_sync()
        return {"step": self.step_count, "critic_loss": loss, "target_q_mean": float(np.mean(y))}


def dqn_train_step(model: DQNModel, batch) -> dict:
    return model.train_step(batch)

"""Seeded synthetic environment with a progressive click-follow-gift model.

Users and authors carry unit-norm latent vectors; the dot product is
the pair affinity.  Click probability rises with affinity, item
quality, and the logarithm of the pair's accumulated clicks, so
relationships deepen progressively: repeated clicks raise the follow
chance, and gifts only happen after a follow.  Sessions end through a
quitting hazard that grows with consecutive request-level misses, plus
a hard request cap.

Every probability has a closed form (exposed as ``*_probability``
methods) so Monte Carlo calibration tests can compare realized rates
against exact expectations.  All draws flow from per-session streams
derived from (run seed, user id, session index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .core import AuthorStatic, DynamicCounters, UAKey, UAState, UserStatic
from .errors import InternalError, ValidationError


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class SimConfig:
    n_users: int = 2000
    n_authors: int = 200
    items_per_author: int = 5
    n_categories: int = 20
    n_cohorts: int = 8
    n_activity_tiers: int = 4
    latent_dim: int = 8
    top_k: int = 6
    candidate_count: int = 30
    temperature: float = 3.0
    engagement_bonus: float = 0.8
    click_bias: float = -1.2
    quality_sigma: float = 0.5
    base_follow: float = 0.3
    base_gift: float = 0.25
    gift_amount_median: float = 5.0
    gift_amount_sigma: float = 0.75
    gift_cap: float = 100.0
    mean_watch_seconds: float = 20.0
    max_watch_seconds: float = 60.0
    quit_patience: int = 3
    quit_base: float = 0.4
    max_requests: int = 50
    seed: int = 0

    @property
    def n_items(self) -> int:
        return self.n_authors * self.items_per_author


@dataclass
class Population:
    """Fixed world: latent affinities, item catalog, user demographics."""

    user_latent: np.ndarray
    user_activity: np.ndarray
    user_cohort: np.ndarray
    user_tier: np.ndarray
    author_latent: np.ndarray
    item_author: np.ndarray
    item_category: np.ndarray
    item_quality: np.ndarray

    @property
    def n_users(self) -> int:
        return self.user_latent.shape[0]

    @property
    def n_authors(self) -> int:
        return self.author_latent.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_author.shape[0]

    def author_items(self, author_id: int) -> np.ndarray:
        return np.nonzero(self.item_author == author_id)[0]

    def affinity(self, user_id: int, author_id: int) -> float:
        return float(self.user_latent[user_id] @ self.author_latent[author_id])


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def generate_population(config: SimConfig) -> Population:
    """Deterministic world generation from the config seed."""
    if config.n_users < 1 or config.n_authors < 1 or config.items_per_author < 1:
        raise ValidationError("population sizes must be positive")
    gen = rngmod.stream(config.seed, "population")
    user_latent = _unit_rows(gen.standard_normal((config.n_users, config.latent_dim)))
    user_activity = gen.uniform(0.0, 1.0, config.n_users)
    user_cohort = gen.integers(0, config.n_cohorts, config.n_users)
    user_tier = np.minimum((user_activity * config.n_activity_tiers).astype(np.int64), config.n_activity_tiers - 1)
    author_latent = _unit_rows(gen.standard_normal((config.n_authors, config.latent_dim)))
    item_author = np.repeat(np.arange(config.n_authors), config.items_per_author)
    item_category = gen.integers(0, config.n_categories, config.n_items)
    item_quality = gen.normal(0.0, config.quality_sigma, config.n_items)
    return Population(
        user_latent=user_latent,
        user_activity=user_activity,
        user_cohort=user_cohort,
        user_tier=user_tier,
        author_latent=author_latent,
        item_author=item_author,
        item_category=item_category,
        item_quality=item_quality,
    )


@dataclass(frozen=True)
class InteractionOutcome:
    item_id: int
    author_id: int
    clicked: bool
    watch_seconds: float
    followed: bool
    gift_amount: float


@dataclass
class SessionState:
    user_id: int
    session_index: int
    request_index: int = 0
    consecutive_misses: int = 0
    alive: bool = True
    rng: np.random.Generator = field(default=None, repr=False)


@dataclass
class RequestLog:
    """Optional per-exposure bookkeeping for oracle tests and traces."""

    counters_before: list = field(default_factory=list)
    click_draws: list = field(default_factory=list)   # (probability, outcome)
    follow_draws: list = field(default_factory=list)  # eligible draws only
    gift_draws: list = field(default_factory=list)    # eligible draws only


class Environment:
    """One lifelong simulation run: counters persist across sessions."""

    def __init__(self, config: SimConfig, population: Population | None = None, run_seed: int | None = None):
        self.config = config
        self.population = population if population is not None else generate_population(config)
        self.run_seed = config.seed if run_seed is None else run_seed
        self._counters: dict = {}
        self._session_counts: dict = {}

    # -- state access ---------------------------------------------------------

    def true_counters(self, key: UAKey) -> DynamicCounters:
        """Ground-truth counters; a never-seen pair has all-zero counters."""
        return self._counters.get((key.user_id, key.author_id), DynamicCounters())

    def state_for(self, user_id: int, item_id: int) -> UAState:
        pop = self.population
        author_id = int(pop.item_author[item_id])
        return UAState(
            user_static=UserStatic(
                user_id=int(user_id),
                cohort_id=int(pop.user_cohort[user_id]),
                activity_tier=int(pop.user_tier[user_id]),
            ),
            author_static=AuthorStatic(
                author_id=author_id,
                item_id=int(item_id),
                category_id=int(pop.item_category[item_id]),
            ),
            dynamic=self.true_counters(UAKey(int(user_id), author_id)),
        )

    # -- closed-form probabilities -------------------------------------------

    def click_probability(self, user_id: int, item_id: int, counters: DynamicCounters) -> float:
        cfg = self.config
        pop = self.population
        author_id = int(pop.item_author[item_id])
        logit = (
            cfg.temperature * pop.affinity(user_id, author_id)
            + cfg.engagement_bonus * math.log1p(counters.click_count)
            + float(pop.item_quality[item_id])
            + cfg.click_bias
        )
        return _sigmoid(logit)

    def follow_probability(self, user_id: int, author_id: int, clicks_incl_current: int) -> float:
        cfg = self.config
        aff = self.population.affinity(user_id, author_id)
        return cfg.base_follow * _sigmoid(aff) * min(1.0, clicks_incl_current / 3.0)

    def gift_probability(self, user_id: int, author_id: int) -> float:
        return self.config.base_gift * _sigmoid(self.population.affinity(user_id, author_id))

    # -- session lifecycle ----------------------------------------------------

    def reset_session(self, user_id: int) -> SessionState:
        if not 0 <= user_id < self.population.n_users:
            raise ValidationError(f"unknown user {user_id}")
        index = self._session_counts.get(user_id, 0)
        self._session_counts[user_id] = index + 1
        gen = rngmod.stream(self.run_seed, "session", user_id, index)
        return SessionState(user_id=int(user_id), session_index=index, rng=gen)

    def sample_candidates(self, session: SessionState) -> np.ndarray:
        n = min(self.config.candidate_count, self.population.n_items)
        return session.rng.choice(self.population.n_items, size=n, replace=False)

    def simulate_request(self, session: SessionState, exposed_items, log: RequestLog | None = None):
        """Plays one exposure list; returns (outcomes, quit).

        Draw order per exposure is fixed (click, watch, follow, gift),
        and counters update after each exposure, so two exposures of
        the same pair inside one request see each other's effects.
        The follow chance uses the click count including the current
        click, so a first-ever click can already convert.
        """
        if not session.alive:
            raise InternalError("simulate_request on a dead session")
        if len(exposed_items) == 0:
            raise ValidationError("exposure list must be non-empty")
        cfg = self.config
        pop = self.population
        gen = session.rng
        outcomes = []
        any_click = False
        for item_id in exposed_items:
            item_id = int(item_id)
            author_id = int(pop.item_author[item_id])
            pair = (session.user_id, author_id)
            counters = self._counters.get(pair, DynamicCounters())
            if log is not None:
                log.counters_before.append(counters)

            p_click = self.click_probability(session.user_id, item_id, counters)
            clicked = bool(gen.random() < p_click)
            if log is not None:
                log.click_draws.append((p_click, clicked))
            watch_seconds = 0.0
            followed = False
            gift_amount = 0.0
            if clicked:
                any_click = True
                aff = pop.affinity(session.user_id, author_id)
                scale = cfg.mean_watch_seconds * _sigmoid(cfg.temperature * aff)
                watch_seconds = min(float(gen.exponential(scale)), cfg.max_watch_seconds)
                if counters.follow_flag == 0:
                    p_follow = self.follow_probability(session.user_id, author_id, counters.click_count + 1)
                    followed = bool(gen.random() < p_follow)
                    if log is not None:
                        log.follow_draws.append((p_follow, followed))
                if counters.follow_flag == 1 or followed:
                    p_gift = self.gift_probability(session.user_id, author_id)
                    gifted = bool(gen.random() < p_gift)
                    if log is not None:
                        log.gift_draws.append((p_gift, gifted))
                    if gifted:
                        raw = float(gen.lognormal(math.log(cfg.gift_amount_median), cfg.gift_amount_sigma))
                        gift_amount = min(raw, cfg.gift_cap)
            outcome = InteractionOutcome(
                item_id=item_id,
                author_id=author_id,
                clicked=clicked,
                watch_seconds=watch_seconds,
                followed=followed,
                gift_amount=gift_amount,
            )
            outcomes.append(outcome)
            self._counters[pair] = _advance(counters, outcome)

        session.request_index += 1
        if any_click:
            session.consecutive_misses = 0
        else:
            session.consecutive_misses += 1
        quit_prob = min(1.0, cfg.quit_base * session.consecutive_misses / cfg.quit_patience)
        quit = bool(gen.random() < quit_prob)
        if session.request_index >= cfg.max_requests:
            quit = True
        if quit:
            session.alive = False
        return outcomes, quit


def _advance(counters: DynamicCounters, outcome: InteractionOutcome) -> DynamicCounters:
    """Ground-truth counter update; each channel moves iff its signal fired."""
    return DynamicCounters(
        click_count=counters.click_count + (1 if outcome.clicked else 0),
        watch_count=counters.watch_count + (1 if outcome.watch_seconds > 0 else 0),
        follow_flag=1 if (counters.follow_flag == 1 or outcome.followed) else 0,
        gift_count=counters.gift_count + (1 if outcome.gift_amount > 0 else 0),
        cumulative_watch_seconds=counters.cumulative_watch_seconds + outcome.watch_seconds,
        cumulative_gift_amount=counters.cumulative_gift_amount + outcome.gift_amount,
    )


# --- session traces -----------------------------------------------------------

@dataclass(frozen=True)
class ExposureRecord:
    position: int
    item_id: int
    author_id: int
    category_id: int
    counters_before: DynamicCounters
    outcome: InteractionOutcome


@dataclass(frozen=True)
class RequestRecord:
    request_index: int
    exposures: tuple


@dataclass(frozen=True)
class SessionTrace:
    """Ordered ground-truth record of one session; the oracle for the
    sample builder and for metric recomputation."""

    user_id: int
    session_index: int
    cohort_id: int
    activity_tier: int
    requests: tuple
    quit: bool


def trace_to_dict(trace: SessionTrace) -> dict:
    return {
        "user_id": trace.user_id,
        "session_index": trace.session_index,
        "cohort_id": trace.cohort_id,
        "activity_tier": trace.activity_tier,
        "quit": trace.quit,
        "requests": [
            {
                "request_index": req.request_index,
                "exposures": [
                    {
                        "position": exp.position,
                        "item_id": exp.item_id,
                        "author_id": exp.author_id,
                        "category_id": exp.category_id,
                        "counters_before": {
                            "click_count": exp.counters_before.click_count,
                            "watch_count": exp.counters_before.watch_count,
                            "follow_flag": exp.counters_before.follow_flag,
                            "gift_count": exp.counters_before.gift_count,
                            "cumulative_watch_seconds": exp.counters_before.cumulative_watch_seconds,
                            "cumulative_gift_amount": exp.counters_before.cumulative_gift_amount,
                        },
                        "outcome": {
                            "item_id": exp.outcome.item_id,
                            "author_id": exp.outcome.author_id,
                            "clicked": exp.outcome.clicked,
                            "watch_seconds": exp.outcome.watch_seconds,
                            "followed": exp.outcome.followed,
                            "gift_amount": exp.outcome.gift_amount,
                        },
                    }
                    for exp in req.exposures
                ],
            }
            for req in trace.requests
        ],
    }


def trace_from_dict(d: dict) -> SessionTrace:
    requests = []
    for req in d["requests"]:
        exposures = []
        for exp in req["exposures"]:
            exposures.append(
                ExposureRecord(
                    position=int(exp["position"]),
                    item_id=int(exp["item_id"]),
                    author_id=int(exp["author_id"]),
                    category_id=int(exp["category_id"]),
                    counters_before=DynamicCounters(**exp["counters_before"]),
                    outcome=InteractionOutcome(**exp["outcome"]),
                )
            )
        requests.append(RequestRecord(request_index=int(req["request_index"]), exposures=tuple(exposures)))
    return SessionTrace(
        user_id=int(d["user_id"]),
        session_index=int(d["session_index"]),
        cohort_id=int(d["cohort_id"]),
        activity_tier=int(d["activity_tier"]),
        requests=tuple(requests),
        quit=bool(d["quit"]),
    )

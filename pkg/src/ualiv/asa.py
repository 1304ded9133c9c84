"""Training-sample construction from interaction events.

The next state of a transition is not observed until the same pair
interacts again, which may be far in the future, so it is approximated
immediately: statics are copied and each dynamic counter advances iff
its own reward channel fired.  Because the environment scopes all
dynamics to the pair itself, this approximation is exact against the
simulator's ground truth, which the trace-replay oracle asserts.

Normalization caps default to powers of two in the simulator config so
normalized rewards denormalize bit-exactly back to raw seconds/amounts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import rng as rngmod
from .core import (
    AuthorStatic,
    DynamicCounters,
    RewardVector,
    TransitionSample,
    UAKey,
    UAState,
    UserStatic,
    reward_from_feedback,
)
from .errors import UnavailableError, ValidationError
from .sim import InteractionOutcome, SessionTrace

AUTHOR_ITEM_CAP = 32


@dataclass(frozen=True)
class ExposureEvent:
    key: UAKey
    state: UAState
    action_item: int
    timestamp: int


@dataclass(frozen=True)
class FeedbackEvent:
    key: UAKey
    item_id: int
    kind: str  # click | watch | follow | gift
    value: float
    timestamp: int


@dataclass(frozen=True)
class LabeledEvent:
    key: UAKey
    state: UAState
    action_item: int
    reward: RewardVector
    timestamp: int


class LabelJoiner:
    """Merges an exposure with all feedback that lands inside the window.

    Feedback earlier than the exposure is dropped and counted (clock
    skew signal); feedback after the window is ignored.  The merge is
    a per-channel max/sum, so arrival order inside the window does not
    matter.
    """

    def __init__(self, window_seconds: int, max_watch_seconds: float, gift_cap: float):
        if window_seconds <= 0:
            raise ValidationError("window must be positive")
        self.window_seconds = int(window_seconds)
        self.max_watch_seconds = float(max_watch_seconds)
        self.gift_cap = float(gift_cap)
        self.skew_drops = 0

    def join(self, exposure: ExposureEvent, feedback_events) -> LabeledEvent:
        clicked = False
        watch_seconds = 0.0
        followed = False
        gift_amount = 0.0
        for fb in feedback_events:
            if fb.key != exposure.key or fb.item_id != exposure.action_item:
                continue
            if fb.timestamp < exposure.timestamp:
                self.skew_drops += 1
                continue
            if fb.timestamp > exposure.timestamp + self.window_seconds:
                continue
            if fb.kind == "click":
                clicked = True
            elif fb.kind == "watch":
                watch_seconds += fb.value
            elif fb.kind == "follow":
                followed = True
            elif fb.kind == "gift":
                gift_amount += fb.value
            else:
                raise ValidationError(f"unknown feedback kind {fb.kind!r}")
        merged = InteractionOutcome(
            item_id=exposure.action_item,
            author_id=exposure.key.author_id,
            clicked=clicked,
            watch_seconds=watch_seconds,
            followed=followed,
            gift_amount=gift_amount,
        )
        reward = reward_from_feedback(merged, self.max_watch_seconds, self.gift_cap)
        return LabeledEvent(
            key=exposure.key,
            state=exposure.state,
            action_item=exposure.action_item,
            reward=reward,
            timestamp=exposure.timestamp,
        )


def approximate_next_state(state: UAState, reward: RewardVector, max_watch_seconds: float, gift_cap: float) -> UAState:
    """Adjacent-state approximation: counters advance iff their channel
    reward is positive; accumulators grow by the denormalized values."""
    d = state.dynamic
    nxt = DynamicCounters(
        click_count=d.click_count + (1 if reward.r_click > 0 else 0),
        watch_count=d.watch_count + (1 if reward.r_watch > 0 else 0),
        follow_flag=1 if (d.follow_flag == 1 or reward.r_follow > 0) else 0,
        gift_count=d.gift_count + (1 if reward.r_gift > 0 else 0),
        cumulative_watch_seconds=d.cumulative_watch_seconds + reward.r_watch * max_watch_seconds,
        cumulative_gift_amount=d.cumulative_gift_amount + reward.r_gift * gift_cap,
    )
    return replace(state, dynamic=nxt)


def build_sample(event: LabeledEvent, author_items, terminal: bool, max_watch_seconds: float, gift_cap: float) -> TransitionSample:
    author_items = tuple(int(i) for i in author_items)
    if not author_items and not terminal:
        raise ValidationError("non-terminal sample needs a non-empty author item set")
    return TransitionSample(
        key=event.key,
        state=event.state,
        action_item=event.action_item,
        reward=event.reward,
        next_state=approximate_next_state(event.state, event.reward, max_watch_seconds, gift_cap),
        author_items=author_items,
        terminal=terminal,
    )


def author_item_set(population, author_id: int, seed: int, cap: int = AUTHOR_ITEM_CAP) -> tuple:
    """The author's catalog items for the bootstrap max, subsampled
    deterministically when larger than the cap."""
    items = population.author_items(author_id)
    if items.shape[0] > cap:
        gen = rngmod.stream(seed, "author-items", author_id)
        items = np.sort(gen.choice(items, size=cap, replace=False))
    return tuple(int(i) for i in items)


class TraceSampleBuilder:
    """Replays session traces into transition samples using only the
    exposure/feedback record, reconstructing all dynamics itself.

    Keeps its own per-pair counter map across traces (relationships
    are lifelong), which the exactness oracle compares against the
    simulator's recorded ground truth.
    """

    def __init__(self, population, max_watch_seconds: float, gift_cap: float, seed: int = 0):
        self.population = population
        self.max_watch_seconds = float(max_watch_seconds)
        self.gift_cap = float(gift_cap)
        self.seed = int(seed)
        self._counters: dict = {}
        self._item_sets: dict = {}

    def _items_for(self, author_id: int) -> tuple:
        if author_id not in self._item_sets:
            self._item_sets[author_id] = author_item_set(self.population, author_id, self.seed)
        return self._item_sets[author_id]

    def samples_from_trace(self, trace: SessionTrace):
        for request in trace.requests:
            for exp in request.exposures:
                key = UAKey(trace.user_id, exp.author_id)
                pair = (key.user_id, key.author_id)
                state = UAState(
                    user_static=UserStatic(
                        user_id=trace.user_id,
                        cohort_id=trace.cohort_id,
                        activity_tier=trace.activity_tier,
                    ),
                    author_static=AuthorStatic(
                        author_id=exp.author_id,
                        item_id=exp.item_id,
                        category_id=exp.category_id,
                    ),
                    dynamic=self._counters.get(pair, DynamicCounters()),
                )
                reward = reward_from_feedback(exp.outcome, self.max_watch_seconds, self.gift_cap)
                event = LabeledEvent(key=key, state=state, action_item=exp.item_id, reward=reward, timestamp=0)
                sample = build_sample(event, self._items_for(exp.author_id), False, self.max_watch_seconds, self.gift_cap)
                self._counters[pair] = sample.next_state.dynamic
                yield sample


class ReplayBuffer:
    """Bounded FIFO sample store with uniform with-replacement sampling."""

    def __init__(self, capacity: int, seed: int = 0):
        if capacity < 1:
            raise ValidationError("capacity must be positive")
        self.capacity = int(capacity)
        self.rng = rngmod.stream(seed, "replay-buffer")
        self._storage: list = []
        self._next = 0  # overwrite cursor once full

    def __len__(self) -> int:
        return len(self._storage)

    def push(self, sample: TransitionSample) -> None:
        if len(self._storage) < self.capacity:
            self._storage.append(sample)
        else:
            self._storage[self._next] = sample
            self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int) -> list:
        if not self._storage:
            raise UnavailableError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, len(self._storage), size=int(batch_size))
        return [self._storage[i] for i in idx]


def buffer_push(buffer: ReplayBuffer, sample: TransitionSample) -> None:
    buffer.push(sample)


def buffer_sample(buffer: ReplayBuffer, batch_size: int) -> list:
    return buffer.sample(batch_size)

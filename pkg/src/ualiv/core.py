"""Core data types of the sparse cross-request interaction process.

A state is the pair (user statics, author/item statics, dynamic
per-pair counters); a reward is the four-channel vector over the label
set {click, watch, follow, gift}.  All types are immutable values and
round-trip losslessly through JSON lines, the interchange format
between the simulator, the sample builder, and the trainer.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

from .errors import ValidationError

TOWERS = ("click", "watch", "follow", "gift")


@dataclass(frozen=True, order=True)
class UAKey:
    user_id: int
    author_id: int


def make_ua_key(user_id: int, author_id: int) -> UAKey:
    if user_id < 0 or author_id < 0:
        raise ValidationError("user and author ids must be non-negative")
    return UAKey(int(user_id), int(author_id))


@dataclass(frozen=True)
class DynamicCounters:
    """Lifelong per-pair interaction tallies; never decrease."""

    click_count: int = 0
    watch_count: int = 0
    follow_flag: int = 0
    gift_count: int = 0
    cumulative_watch_seconds: float = 0.0
    cumulative_gift_amount: float = 0.0

    def as_vector(self):
        return (
            float(self.click_count),
            float(self.watch_count),
            float(self.follow_flag),
            float(self.gift_count),
            float(self.cumulative_watch_seconds),
            float(self.cumulative_gift_amount),
        )


@dataclass(frozen=True)
class UserStatic:
    user_id: int
    cohort_id: int
    activity_tier: int


@dataclass(frozen=True)
class AuthorStatic:
    author_id: int
    item_id: int
    category_id: int


@dataclass(frozen=True)
class UAState:
    user_static: UserStatic
    author_static: AuthorStatic
    dynamic: DynamicCounters

    def with_item(self, item_id: int, category_id: int) -> "UAState":
        return replace(self, author_static=replace(self.author_static, item_id=int(item_id), category_id=int(category_id)))


@dataclass(frozen=True)
class RewardVector:
    """Per-interaction rewards, each channel normalized into [0, 1]."""

    r_click: float = 0.0
    r_watch: float = 0.0
    r_follow: float = 0.0
    r_gift: float = 0.0

    def channel(self, tower: str) -> float:
        return {"click": self.r_click, "watch": self.r_watch, "follow": self.r_follow, "gift": self.r_gift}[tower]

    def as_vector(self):
        return (self.r_click, self.r_watch, self.r_follow, self.r_gift)


ZERO_REWARD = RewardVector()


def reward_from_feedback(outcome, max_watch_seconds: float, gift_cap: float) -> RewardVector:
    """Maps one interaction outcome onto the four reward channels.

    Watch seconds and gift amount are scaled by their configured caps
    so every channel lives on a comparable [0, 1] scale.  The follow
    channel is 1 only for a newly formed follow.
    """
    if outcome.watch_seconds < 0:
        raise ValidationError("negative watch time")
    return RewardVector(
        r_click=1.0 if outcome.clicked else 0.0,
        r_watch=min(outcome.watch_seconds / max_watch_seconds, 1.0),
        r_follow=1.0 if outcome.followed else 0.0,
        r_gift=min(outcome.gift_amount / gift_cap, 1.0),
    )


@dataclass(frozen=True)
class TransitionSample:
    """(s, a, r, s') with the approximated next state and the author's
    item set over which the bootstrap maximum runs."""

    key: UAKey
    state: UAState
    action_item: int
    reward: RewardVector
    next_state: UAState
    author_items: tuple
    terminal: bool = False


@dataclass(frozen=True)
class LIVScores:
    q_click: float
    q_watch: float
    q_follow: float
    q_gift: float

    def channel(self, tower: str) -> float:
        return {"click": self.q_click, "watch": self.q_watch, "follow": self.q_follow, "gift": self.q_gift}[tower]


# --- JSON-lines serialization ------------------------------------------------

def state_to_dict(state: UAState) -> dict:
    return {
        "user_static": asdict(state.user_static),
        "author_static": asdict(state.author_static),
        "dynamic": asdict(state.dynamic),
    }


def state_from_dict(d: dict) -> UAState:
    return UAState(
        user_static=UserStatic(**d["user_static"]),
        author_static=AuthorStatic(**d["author_static"]),
        dynamic=DynamicCounters(**d["dynamic"]),
    )


def sample_to_dict(sample: TransitionSample) -> dict:
    return {
        "key": {"user_id": sample.key.user_id, "author_id": sample.key.author_id},
        "state": state_to_dict(sample.state),
        "action_item": sample.action_item,
        "reward": asdict(sample.reward),
        "next_state": state_to_dict(sample.next_state),
        "author_items": list(sample.author_items),
        "terminal": sample.terminal,
    }


def sample_from_dict(d: dict) -> TransitionSample:
    return TransitionSample(
        key=UAKey(**d["key"]),
        state=state_from_dict(d["state"]),
        action_item=int(d["action_item"]),
        reward=RewardVector(**d["reward"]),
        next_state=state_from_dict(d["next_state"]),
        author_items=tuple(d["author_items"]),
        terminal=bool(d["terminal"]),
    )


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")


def read_jsonl(path):
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)

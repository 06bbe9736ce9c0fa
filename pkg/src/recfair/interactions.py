"""User-item interaction handling: loading, deduplication, and profile statistics.

Interactions arrive keyed by raw item references (usually ISBNs); clustering
maps them onto items, which can leave a user with several ratings for one
item.  Those collapse to a single row, taking the median rating in explicit
mode.  Profile statistics count the known-gender and female-authored items a
user has interacted with.
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .ingest import KNOWN_GENDERS, AuthorGender

__all__ = [
    "EXPLICIT",
    "IMPLICIT",
    "Interaction",
    "InteractionSet",
    "ProfileStats",
    "UnknownUserError",
    "dedupe_ratings",
    "load_interactions_csv",
    "profile_stats",
]

EXPLICIT = "explicit"
IMPLICIT = "implicit"
_MODES = (EXPLICIT, IMPLICIT)


class UnknownUserError(KeyError):
    """Raised when a user id is absent from an interaction set."""


@dataclass
class Interaction:
    user_id: str
    item_id: str
    rating: float | None = None
    timestamp: int | None = None


@dataclass
class InteractionSet:
    """Deduplicated user-item events, at most one per (user, item) pair."""

    mode: str
    interactions: list[Interaction]
    _by_user: dict[str, list[Interaction]] = field(init=False, repr=False)

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        self._by_user = {}
        for it in self.interactions:
            self._by_user.setdefault(it.user_id, []).append(it)

    @property
    def n_users(self) -> int:
        return len(self._by_user)

    @property
    def n_items(self) -> int:
        return len({it.item_id for it in self.interactions})

    def users(self) -> list[str]:
        return sorted(self._by_user)

    def items(self) -> list[str]:
        return sorted({it.item_id for it in self.interactions})

    def for_user(self, user_id: str) -> list[Interaction]:
        if user_id not in self._by_user:
            raise UnknownUserError(user_id)
        return list(self._by_user[user_id])

    def has_user(self, user_id: str) -> bool:
        return user_id in self._by_user


def _median(values: list[float]) -> float:
    # statistics.median averages the two middle values on even counts,
    # which is the convention used for duplicate-rating resolution.
    return float(statistics.median(values))


def dedupe_ratings(
    rows: Iterable[Interaction], mode: str
) -> tuple[InteractionSet, list[Interaction]]:
    """Collapse repeated (user, item) pairs into one interaction each.

    Explicit mode merges duplicate ratings by median and rejects rows with
    no rating value; implicit mode keeps presence only.  Returns the
    deduplicated set together with the rejected rows.
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    groups: dict[tuple[str, str], list[Interaction]] = {}
    order: list[tuple[str, str]] = []
    rejected: list[Interaction] = []
    for row in rows:
        if mode == EXPLICIT and row.rating is None:
            rejected.append(row)
            continue
        key = (row.user_id, row.item_id)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)

    merged = []
    for key in order:
        group = groups[key]
        timestamps = [r.timestamp for r in group if r.timestamp is not None]
        ts = max(timestamps) if timestamps else None
        if mode == EXPLICIT:
            rating = _median([r.rating for r in group])
        else:
            rating = None
        merged.append(Interaction(key[0], key[1], rating, ts))
    return InteractionSet(mode, merged), rejected


@dataclass
class ProfileStats:
    """Known-gender profile counts for one user: n known-gender items, y female."""

    user_id: str
    n: int
    y: int

    def __post_init__(self):
        if not 0 <= self.y <= self.n:
            raise ValueError(f"profile counts out of range: y={self.y}, n={self.n}")


def profile_stats(
    user_id: str,
    interactions: InteractionSet,
    genders: Mapping[str, AuthorGender],
) -> ProfileStats:
    """Count a user's known-gender and female-authored items.

    Items whose gender is ambiguous, unknown, or unlinked do not count.
    Unknown users raise; users whose profile has no known-gender item
    legitimately return (0, 0).
    """
    rows = interactions.for_user(user_id)
    n = y = 0
    for it in rows:
        g = genders.get(it.item_id, AuthorGender.UNLINKED)
        if g in KNOWN_GENDERS:
            n += 1
            if g is AuthorGender.FEMALE:
                y += 1
    return ProfileStats(user_id, n, y)


def load_interactions_csv(
    path,
    mode: str,
    scale: tuple[float, float] | None = None,
    item_map: Mapping[str, str] | None = None,
) -> tuple[InteractionSet, list[Interaction]]:
    """Load and deduplicate ``user,item,rating,timestamp`` rows.

    ``item_map`` resolves raw item references (ISBNs) to item ids; unmapped
    references become their own singleton items so unlinkable books remain
    recommendable.  ``scale`` validates explicit ratings against the
    dataset's declared range.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for lineno, rec in enumerate(reader, start=2):
            raw_item = rec["item"]
            if item_map is not None:
                item = item_map.get(raw_item, "it:" + raw_item)
            else:
                item = raw_item
            rating = None
            if rec.get("rating"):
                rating = float(rec["rating"])
                if scale is not None and not (scale[0] <= rating <= scale[1]):
                    raise ValueError(
                        f"{path}:{lineno}: rating {rating} outside declared "
                        f"scale [{scale[0]}, {scale[1]}]"
                    )
            ts = int(rec["timestamp"]) if rec.get("timestamp") else None
            rows.append(Interaction(rec["user"], item, rating, ts))
    return dedupe_ratings(rows, mode)


def write_interactions_csv(iset: InteractionSet, fh) -> None:
    """Write interactions back out in the ``user,item,rating,timestamp`` format."""
    w = csv.writer(fh)
    w.writerow(["user", "item", "rating", "timestamp"])
    for it in iset.interactions:
        w.writerow(
            [
                it.user_id,
                it.item_id,
                "" if it.rating is None else repr(it.rating),
                "" if it.timestamp is None else it.timestamp,
            ]
        )

"""MovieLens-style ratings and genre files, and the item -> groups mapping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .errors import MissingMappingError, ParseError, RangeError

RATING_MIN = 1.0
RATING_MAX = 5.0


@dataclass(frozen=True)
class RatingDataset:
    """Sparse explicit-feedback observations with dense 0-based indices.

    ``user_ids`` / ``item_ids`` hold the external identifiers, sorted, so
    that ``user_ids[u]`` is the external id of internal user ``u``.
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray | None = None
    user_ids: np.ndarray | None = None
    item_ids: np.ndarray | None = None

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64)
        items = np.asarray(self.items, dtype=np.int64)
        ratings = np.asarray(self.ratings, dtype=np.float64)
        if not (users.shape == items.shape == ratings.shape) or users.ndim != 1:
            raise ValueError("users, items and ratings must be 1-d arrays of equal length")
        if users.size:
            if users.min() < 0 or users.max() >= self.num_users:
                raise ValueError("user index out of range")
            if items.min() < 0 or items.max() >= self.num_items:
                raise ValueError("item index out of range")
            if ratings.min() < RATING_MIN or ratings.max() > RATING_MAX:
                raise RangeError("ratings must lie in [1, 5]")
            keys = users * self.num_items + items
            if np.unique(keys).size != keys.size:
                raise ValueError("duplicate (user, item) observation")
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "ratings", ratings)
        if self.timestamps is not None:
            object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype=np.int64))
        if self.user_ids is None:
            object.__setattr__(self, "user_ids", np.arange(1, self.num_users + 1, dtype=np.int64))
        if self.item_ids is None:
            object.__setattr__(self, "item_ids", np.arange(1, self.num_items + 1, dtype=np.int64))
        for name in ("users", "items", "ratings", "timestamps", "user_ids", "item_ids"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    def __len__(self):
        return int(self.users.size)

    @property
    def item_index(self) -> dict[int, int]:
        """External item id -> internal index."""
        return {int(ext): idx for idx, ext in enumerate(self.item_ids)}

    def rated_items(self) -> list[set[int]]:
        out: list[set[int]] = [set() for _ in range(self.num_users)]
        for u, i in zip(self.users.tolist(), self.items.tolist()):
            out[u].add(i)
        return out

    def __eq__(self, other):
        if not isinstance(other, RatingDataset):
            return NotImplemented
        if (self.num_users, self.num_items) != (other.num_users, other.num_items):
            return False
        if (self.timestamps is None) != (other.timestamps is None):
            return False
        pairs = [
            (self.users, other.users),
            (self.items, other.items),
            (self.ratings, other.ratings),
            (self.user_ids, other.user_ids),
            (self.item_ids, other.item_ids),
        ]
        if self.timestamps is not None:
            pairs.append((self.timestamps, other.timestamps))
        return all(np.array_equal(a, b) for a, b in pairs)

    __hash__ = None


def parse_ratings(stream: Iterable[str]) -> RatingDataset:
    """Parse ``UserID::MovieID::Rating[::Timestamp]`` lines.

    External ids are re-indexed densely from 0 in sorted order. Blank lines
    are skipped.
    """
    raw_users, raw_items, raw_ratings, raw_ts = [], [], [], []
    has_ts = None
    seen = {}
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split("::")
        if len(fields) not in (3, 4):
            raise ParseError(f"expected 3 or 4 '::'-separated fields, got {len(fields)}", lineno)
        try:
            user = int(fields[0])
            item = int(fields[1])
        except ValueError:
            raise ParseError("non-integer user or item id", lineno) from None
        try:
            rating = float(fields[2])
        except ValueError:
            raise ParseError(f"non-numeric rating {fields[2]!r}", lineno) from None
        if not math.isfinite(rating):
            raise ParseError(f"non-numeric rating {fields[2]!r}", lineno)
        if rating < RATING_MIN or rating > RATING_MAX:
            raise RangeError(f"rating {fields[2]} outside [1, 5]", lineno)
        if has_ts is None:
            has_ts = len(fields) == 4
        elif has_ts != (len(fields) == 4):
            raise ParseError("inconsistent timestamp column", lineno)
        if has_ts:
            try:
                raw_ts.append(int(fields[3]))
            except ValueError:
                raise ParseError("non-integer timestamp", lineno) from None
        if (user, item) in seen:
            raise ParseError(f"duplicate rating for user {user}, item {item} "
                             f"(first on line {seen[user, item]})", lineno)
        seen[user, item] = lineno
        raw_users.append(user)
        raw_items.append(item)
        raw_ratings.append(rating)

    user_ids = np.unique(np.asarray(raw_users, dtype=np.int64))
    item_ids = np.unique(np.asarray(raw_items, dtype=np.int64))
    users = np.searchsorted(user_ids, np.asarray(raw_users, dtype=np.int64))
    items = np.searchsorted(item_ids, np.asarray(raw_items, dtype=np.int64))
    return RatingDataset(
        num_users=int(user_ids.size),
        num_items=int(item_ids.size),
        users=users,
        items=items,
        ratings=np.asarray(raw_ratings, dtype=np.float64),
        timestamps=np.asarray(raw_ts, dtype=np.int64) if has_ts else None,
        user_ids=user_ids,
        item_ids=item_ids,
    )


def _format_rating(r: float) -> str:
    return str(int(r)) if float(r).is_integer() else repr(float(r))


def dump_ratings(dataset: RatingDataset, stream: TextIO) -> None:
    """Write ``dataset`` back in the double-colon format using external ids."""
    uid, iid = dataset.user_ids, dataset.item_ids
    for k in range(len(dataset)):
        parts = [str(uid[dataset.users[k]]), str(iid[dataset.items[k]]),
                 _format_rating(dataset.ratings[k])]
        if dataset.timestamps is not None:
            parts.append(str(dataset.timestamps[k]))
        stream.write("::".join(parts) + "\n")


@dataclass(frozen=True)
class GroupMapping:
    """Item -> non-empty set of group ids (genres)."""

    num_groups: int
    membership: tuple[frozenset[int], ...]
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        membership = tuple(frozenset(int(g) for g in m) for m in self.membership)
        for item, groups in enumerate(membership):
            if not groups:
                raise ValueError(f"item {item} maps to no group")
            if min(groups) < 0 or max(groups) >= self.num_groups:
                raise ValueError(f"item {item} has a group id outside [0, {self.num_groups})")
        object.__setattr__(self, "membership", membership)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"group{g}" for g in range(self.num_groups)))
        elif len(self.names) != self.num_groups:
            raise ValueError("names must have one entry per group")
        matrix = np.zeros((len(membership), self.num_groups), dtype=bool)
        for item, groups in enumerate(membership):
            matrix[item, list(groups)] = True
        matrix.setflags(write=False)
        object.__setattr__(self, "_matrix", matrix)

    @property
    def num_items(self) -> int:
        return len(self.membership)

    @property
    def matrix(self) -> np.ndarray:
        """Boolean ``num_items x num_groups`` incidence matrix."""
        return self._matrix

    def groups_of(self, item: int) -> frozenset[int]:
        if item < 0 or item >= len(self.membership):
            raise MissingMappingError([item])
        return self.membership[item]


def parse_item_groups(stream: Iterable[str], item_index: dict[int, int]) -> GroupMapping:
    """Parse ``MovieID::Title::Genre1|Genre2`` lines into a :class:`GroupMapping`.

    ``item_index`` maps external movie ids to internal item indices; movies
    absent from it are read (their genres still enter the vocabulary) but
    not mapped. Group ids follow first-seen order in the file.
    """
    vocab: dict[str, int] = {}
    membership: dict[int, frozenset[int]] = {}
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        # the id is the first field and the genres the last, whatever the title holds
        head, sep, genres = line.rpartition("::")
        movie, sep2, _title = head.partition("::")
        if not sep or not sep2:
            raise ParseError("expected 'MovieID::Title::Genres'", lineno)
        try:
            ext = int(movie)
        except ValueError:
            raise ParseError(f"non-integer movie id {movie!r}", lineno) from None
        names = [g.strip() for g in genres.split("|") if g.strip()]
        if not names:
            raise ParseError(f"movie {ext} has an empty genre field", lineno)
        ids = []
        for name in names:
            if name not in vocab:
                vocab[name] = len(vocab)
            ids.append(vocab[name])
        if ext in item_index:
            membership[item_index[ext]] = frozenset(ids)

    num_items = len(item_index)
    missing = [ext for ext, idx in item_index.items() if idx not in membership]
    if missing:
        raise MissingMappingError(missing)
    names_sorted = tuple(sorted(vocab, key=vocab.get))
    return GroupMapping(
        num_groups=len(vocab),
        membership=tuple(membership[i] for i in range(num_items)),
        names=names_sorted,
    )


def dump_group_vocabulary(mapping: GroupMapping, stream: TextIO) -> None:
    for gid, name in enumerate(mapping.names):
        stream.write(f"{gid}\t{name}\n")


def seen_groups(mapping: GroupMapping, rated_items: Iterable[int]) -> set[int]:
    """Union of the group sets of ``rated_items``."""
    out: set[int] = set()
    missing = []
    n = mapping.num_items
    for item in rated_items:
        if item < 0 or item >= n:
            missing.append(item)
            continue
        out |= mapping.membership[item]
    if missing:
        raise MissingMappingError(missing)
    return out

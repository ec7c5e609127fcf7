"""Top-n selection strategies over scored candidate items."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import CapacityError
from .factorization import FactorModel

EXPLOIT = "exploit"
EPSILON_GREEDY = "epsilon_greedy"
POLICIES = (EXPLOIT, EPSILON_GREEDY)


@dataclass(frozen=True)
class PolicyConfig:
    rec_len: int = 10
    epsilon: float = 0.0
    seed: int = 0
    kind: str = EXPLOIT

    def __post_init__(self):
        if self.rec_len < 1:
            raise ValueError("rec_len must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.kind not in POLICIES:
            raise ValueError(f"unknown policy {self.kind!r}; expected one of {POLICIES}")


@dataclass(frozen=True)
class ScoredRanking:
    """Candidates sorted by ``(score desc, item_id asc)``."""

    items: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return int(self.items.size)

    def __iter__(self):
        return iter(zip(self.items.tolist(), self.scores.tolist()))


def rank_items(items, scores) -> ScoredRanking:
    items = np.asarray(items, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((items, -scores))
    return ScoredRanking(items[order], scores[order])


def score_candidates(model: FactorModel, user_id: int, candidates: Iterable[int]) -> ScoredRanking:
    items = np.fromiter(sorted(set(candidates)), dtype=np.int64)
    if items.size == 0:
        raise ValueError("no candidates to score")
    if items[0] < 0 or items[-1] >= model.num_items:
        raise IndexError("candidate item out of range")
    scores = model.item_factors[items] @ model.user_factors[user_id]
    return rank_items(items, scores)


def top_n_exploit(ranking: ScoredRanking, n: int) -> list[int]:
    if n > len(ranking):
        raise CapacityError(f"requested {n} items from {len(ranking)} candidates")
    return ranking.items[:n].tolist()


def epsilon_greedy(ranking: ScoredRanking, n: int, epsilon: float, rng: np.random.Generator) -> list[int]:
    """Fill ``round(epsilon * n)`` slots uniformly at random, the rest by rank.

    Random slots are drawn first, without replacement, from all candidates;
    exploit slots then take the best-ranked items not already chosen.
    Random picks occupy the leading positions of the returned list.
    """
    if n > len(ranking):
        raise CapacityError(f"requested {n} items from {len(ranking)} candidates")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    k = int(round(epsilon * n))
    if k == 0:
        return top_n_exploit(ranking, n)
    picked = rng.choice(len(ranking), size=k, replace=False)
    mask = np.zeros(len(ranking), dtype=bool)
    mask[picked] = True
    rest = np.flatnonzero(~mask)[: n - k]
    return ranking.items[picked].tolist() + ranking.items[rest].tolist()


def select(ranking: ScoredRanking, policy: PolicyConfig, rng: np.random.Generator | None) -> list[int]:
    """Apply ``policy``, truncating ``rec_len`` to the candidate count."""
    n = min(policy.rec_len, len(ranking))
    if policy.kind == EXPLOIT or policy.epsilon == 0.0:
        return top_n_exploit(ranking, n)
    return epsilon_greedy(ranking, n, policy.epsilon, rng)


def oracle_scores(item_groups, seen: set[int], rng: np.random.Generator) -> np.ndarray:
    """Random scores where every item inside ``seen`` beats every item that
    would introduce a new group.

    ``item_groups`` is a sequence of group sets, one per candidate.
    """
    inside = np.array([set(g) <= seen for g in item_groups], dtype=bool)
    base = rng.random(len(inside))
    return np.where(inside, 1.0 + base, base)


def new_groups(recs: Iterable[int], mapping, seen: set[int]) -> set[int]:
    out: set[int] = set()
    for item in recs:
        out |= mapping.membership[item]
    return out - set(seen)

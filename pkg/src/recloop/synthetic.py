"""Planted low-rank problems for experiments and tests.

Items belong to a primary group (plus, sometimes, a secondary one) and
their latent vectors cluster around a per-group centroid, so group
membership carries taste signal that the model never sees directly. The
logged ratings only cover the "warm" groups; the remaining "cold" groups
have never been shown to anyone, which is what a feedback loop inherits
from a past recommender.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .completion import GroundTruth, PercentileRescaler
from .dataset import GroupMapping, RatingDataset


@dataclass(frozen=True)
class PlantedProblem:
    dataset: RatingDataset
    mapping: GroupMapping
    truth: GroundTruth
    raw: np.ndarray
    user_factors: np.ndarray
    item_factors: np.ndarray
    cold_groups: tuple[int, ...]


def make_planted_problem(n_users=200, n_items=500, n_groups=10, rank=3, n_cold=3,
                         obs_per_user=10, secondary_prob=0.25, item_spread=0.35,
                         noise=0.25, exposure=1.5, seed=0) -> PlantedProblem:
    """Build ``(dataset, mapping, truth)`` with a rank-``rank`` planted signal.

    ``exposure`` tilts each user's logged items towards what they like
    (sampling weight ``exp(exposure * z)`` on the standardized true score).
    """
    if n_cold >= n_groups:
        raise ValueError("need at least one warm group")
    rng = np.random.default_rng(seed)
    centroids = rng.normal(size=(n_groups, rank))
    primary = rng.permutation(np.arange(n_items) % n_groups)
    membership = []
    for i in range(n_items):
        groups = {int(primary[i])}
        if rng.random() < secondary_prob:
            groups.add(int(rng.integers(n_groups)))
        membership.append(frozenset(groups))
    mapping = GroupMapping(n_groups, tuple(membership))

    V = centroids[primary] + item_spread * rng.normal(size=(n_items, rank))
    U = rng.normal(size=(n_users, rank))
    raw = U @ V.T + noise * rng.normal(size=(n_users, n_items))
    truth = GroundTruth(PercentileRescaler().fit_transform(raw),
                        {"seed": seed, "generator": "planted-low-rank"})

    cold = tuple(sorted(rng.choice(n_groups, size=n_cold, replace=False).tolist()))
    warm_items = np.flatnonzero(~mapping.matrix[:, list(cold)].any(axis=1))
    if warm_items.size < obs_per_user:
        raise ValueError("not enough warm items for the requested observations")
    users, items = [], []
    for u in range(n_users):
        z = raw[u, warm_items]
        z = (z - z.mean()) / (z.std() or 1.0)
        w = np.exp(exposure * z)
        chosen = rng.choice(warm_items, size=obs_per_user, replace=False, p=w / w.sum())
        users.extend([u] * obs_per_user)
        items.extend(sorted(chosen.tolist()))
    users = np.asarray(users)
    items = np.asarray(items)
    dataset = RatingDataset(n_users, n_items, users, items,
                            truth.ratings[users, items].astype(np.float64))
    return PlantedProblem(dataset, mapping, truth, raw, U, V, cold)

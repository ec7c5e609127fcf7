"""Does the model rank items from already-seen groups above the rest?

Per sampled user, unrated items are split into those sharing at least one
group with the user's seen set and those sharing none. The per-user mean
predicted rating of each side enters a Welch two-sample t-test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .dataset import GroupMapping, RatingDataset
from .errors import DegenerateVarianceError, EligibilityError
from .factorization import FactorModel, Hyperparams, init_model, sgd_fit


def welch_t_test(sample_a, sample_b):
    """Two-sided Welch t-test; returns ``(t, df, p)``."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least 2 observations")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("samples must be finite")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    se2 = va + vb
    diff = a.mean() - b.mean()
    if se2 == 0.0:
        if diff == 0.0:
            raise DegenerateVarianceError("both samples are constant and equal")
        raise DegenerateVarianceError("both samples are constant")
    t = diff / math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    # two-sided tail of Student's t via the regularized CDF
    p = 2.0 * special.stdtr(df, -abs(t))
    return float(t), float(df), float(min(1.0, max(0.0, p)))


@dataclass(frozen=True)
class RankingTestReport:
    mean_seen: float
    mean_unseen: float
    var_seen: float
    var_unseen: float
    t_stat: float
    df: float
    p_value: float
    sample_sizes: tuple[int, int]
    repetitions: int = 1
    resampled: int = 0
    label: str = ""

    def as_row(self) -> dict:
        return {
            "label": self.label, "mean_seen": self.mean_seen, "mean_unseen": self.mean_unseen,
            "var_seen": self.var_seen, "var_unseen": self.var_unseen, "t_stat": self.t_stat,
            "df": self.df, "p_value": self.p_value, "n_seen": self.sample_sizes[0],
            "n_unseen": self.sample_sizes[1], "repetitions": self.repetitions,
            "resampled": self.resampled,
        }


REPORT_COLUMNS = ("label", "mean_seen", "mean_unseen", "var_seen", "var_unseen", "t_stat", "df",
                  "p_value", "n_seen", "n_unseen", "repetitions", "resampled")


def _report(seen_means, unseen_means, repetitions=1, resampled=0, label=""):
    a = np.asarray(seen_means)
    b = np.asarray(unseen_means)
    t, df, p = welch_t_test(a, b)
    return RankingTestReport(float(a.mean()), float(b.mean()), float(a.var(ddof=1)), float(b.var(ddof=1)),
                             t, df, p, (int(a.size), int(b.size)), repetitions, resampled, label)


def _user_split(model, rated_mask, seen_mask, mapping, user):
    """Per-user means of predicted ratings on seen-group / unseen-group unrated items."""
    unrated = np.flatnonzero(~rated_mask[user])
    touches_seen = mapping.matrix[unrated][:, seen_mask[user]].any(axis=1)
    seen_items = unrated[touches_seen]
    unseen_items = unrated[~touches_seen]
    if seen_items.size == 0 or unseen_items.size == 0:
        return None
    scores = model.item_factors @ model.user_factors[user]
    return float(scores[seen_items].mean()), float(scores[unseen_items].mean())


@dataclass
class _Masks:
    rated: np.ndarray
    seen: np.ndarray
    eligible: np.ndarray = field(default=None)


def _masks(dataset: RatingDataset, mapping: GroupMapping) -> _Masks:
    rated = np.zeros((dataset.num_users, dataset.num_items), dtype=bool)
    rated[dataset.users, dataset.items] = True
    seen = (rated.astype(np.int32) @ mapping.matrix.astype(np.int32)) > 0
    eligible = np.flatnonzero(seen.any(axis=1) & ~seen.all(axis=1))
    return _Masks(rated, seen, eligible)


def ranking_assumption_test(model: FactorModel, dataset: RatingDataset, mapping: GroupMapping,
                            sample_users: int, rng: np.random.Generator, label: str = "") -> RankingTestReport:
    """One repetition: sample eligible users and test seen vs unseen means.

    Eligible users have seen some but not all groups. A sampled user whose
    unrated items all fall on one side is replaced by another eligible user;
    the number of replacements is reported as ``resampled``.
    """
    return _collect(model, dataset, mapping, sample_users, rng, label)[0]


@dataclass
class ValidationResult:
    repetitions: list[RankingTestReport]
    pooled: RankingTestReport
    seen_means: list[np.ndarray]
    unseen_means: list[np.ndarray]

    def rows(self):
        for rep in self.repetitions:
            yield rep.as_row()
        yield self.pooled.as_row()


def validate_ranking(dataset: RatingDataset, mapping: GroupMapping, hp: Hyperparams,
                     sample_users: int, repetitions: int = 10, seed: int = 0) -> ValidationResult:
    """Repeat training + :func:`ranking_assumption_test` with derived seeds.

    The pooled row runs the test on the per-user means of all repetitions.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    reports, all_seen, all_unseen = [], [], []
    for rep in range(repetitions):
        init_seq, shuffle_seq, sample_seq = np.random.SeedSequence(int(seed), spawn_key=(rep,)).spawn(3)
        model = init_model(dataset.num_users, dataset.num_items,
                           hp.with_seed(int(init_seq.generate_state(1)[0])))
        sgd_fit(model, dataset.users, dataset.items, dataset.ratings, hp,
                rng=np.random.default_rng(shuffle_seq))
        report = _collect(model, dataset, mapping, sample_users, np.random.default_rng(sample_seq),
                          f"rep{rep}")
        reports.append(report[0])
        all_seen.append(report[1])
        all_unseen.append(report[2])
    seen_cat = np.concatenate(all_seen)
    unseen_cat = np.concatenate(all_unseen)
    pooled = _report(seen_cat, unseen_cat, repetitions,
                     sum(r.resampled for r in reports), "pooled")
    return ValidationResult(reports, pooled, all_seen, all_unseen)


def _collect(model, dataset, mapping, sample_users, rng, label):
    if sample_users < 2:
        raise ValueError("sample_users must be >= 2")
    m = _masks(dataset, mapping)
    if m.eligible.size < sample_users:
        raise EligibilityError(f"{m.eligible.size} eligible users, {sample_users} requested")
    seen_means, unseen_means, resampled = [], [], 0
    for user in rng.permutation(m.eligible):
        split = _user_split(model, m.rated, m.seen, mapping, int(user))
        if split is None:
            resampled += 1
            continue
        seen_means.append(split[0])
        unseen_means.append(split[1])
        if len(seen_means) == sample_users:
            break
    if len(seen_means) < sample_users:
        raise EligibilityError(f"only {len(seen_means)} users have unrated items on both sides")
    return _report(seen_means, unseen_means, 1, resampled, label), np.array(seen_means), np.array(unseen_means)

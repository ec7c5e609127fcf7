"""The closed recommend -> rate -> retrain loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .completion import GroundTruth, build_semisynthetic
from .dataset import GroupMapping, RatingDataset
from .errors import InvariantViolation, RecloopError, TrainingError
from .factorization import FactorModel, Hyperparams, init_model, sgd_fit
from .policies import PolicyConfig, rank_items, select

log = logging.getLogger(__name__)

PERFECT = "perfect"
RANK_DEPENDENT = "rank_dependent"
FROM_SCRATCH = "from_scratch"
WARM_START = "warm_start"
SEEN_FROM_RECOMMENDED = "recommended"
SEEN_FROM_RATED = "rated"

_TRAIN, _USER = 0, 1


def derive_seed(master_seed: int, *path: int) -> np.random.SeedSequence:
    """Hierarchical seed: master -> run -> iteration -> user.

    Adding runs or users never changes the streams of existing ones.
    """
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(p) for p in path))


@dataclass(frozen=True)
class FeedbackModel:
    kind: str = PERFECT
    theta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (PERFECT, RANK_DEPENDENT):
            raise ValueError(f"unknown feedback kind {self.kind!r}")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0, 1]")


@dataclass(frozen=True)
class SimulationConfig:
    iterations: int = 30
    runs: int = 10
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    feedback: FeedbackModel = field(default_factory=FeedbackModel)
    relevance_threshold: int = 4
    retrain: str = FROM_SCRATCH
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    master_seed: int = 0
    # under rank-dependent feedback: do displayed-but-unrated items count as seen?
    seen_from: str = SEEN_FROM_RECOMMENDED

    def __post_init__(self):
        if self.iterations < 1 or self.runs < 1:
            raise ValueError("iterations and runs must be >= 1")
        if self.relevance_threshold not in (1, 2, 3, 4, 5):
            raise ValueError("relevance_threshold must be in {1..5}")
        if self.retrain not in (FROM_SCRATCH, WARM_START):
            raise ValueError(f"unknown retrain mode {self.retrain!r}")
        if self.seen_from not in (SEEN_FROM_RECOMMENDED, SEEN_FROM_RATED):
            raise ValueError(f"unknown seen_from {self.seen_from!r}")


def relevant_groups(truth: GroundTruth, mapping: GroupMapping, user_id: int, threshold: int = 4) -> set[int]:
    """Groups holding at least one item the user rates ``>= threshold``."""
    if threshold not in (1, 2, 3, 4, 5):
        raise ValueError("threshold must be in {1..5}")
    liked = np.flatnonzero(truth.ratings[user_id] >= threshold)
    return set(np.flatnonzero(mapping.matrix[liked].any(axis=0)).tolist())


def relevance_matrix(truth: GroundTruth, mapping: GroupMapping, threshold: int = 4) -> np.ndarray:
    liked = (truth.ratings >= threshold).astype(np.int32)
    return (liked @ mapping.matrix.astype(np.int32)) > 0


def perfect_feedback(recs, truth: GroundTruth, user_id: int) -> list[tuple[int, int]]:
    row = truth.ratings[user_id]
    return [(int(i), int(row[i])) for i in recs]


def rank_dependent_feedback(recs, truth: GroundTruth, user_id: int, theta: float,
                            rng: np.random.Generator) -> list[tuple[int, int]]:
    """Item at 1-based rank ``k`` is rated with probability ``theta**(k-1)``."""
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    recs = list(recs)
    if not recs:
        return []
    probs = theta ** np.arange(len(recs))
    keep = rng.random(len(recs)) < probs
    row = truth.ratings[user_id]
    return [(int(i), int(row[i])) for i, k in zip(recs, keep) if k]


@dataclass
class LoopState:
    """Per-user bookkeeping as boolean masks.

    ``rated``: users x items; ``shown``: users x items (recommended at some
    point); ``seen``: users x groups (S_t); ``relevant``: users x groups
    (frozen at t = 0). The blind spot is derived, never stored.
    """

    rated: np.ndarray
    shown: np.ndarray
    seen: np.ndarray
    relevant: np.ndarray
    iteration: int = 0
    exhausted: np.ndarray | None = None

    @classmethod
    def initial(cls, dataset: RatingDataset, mapping: GroupMapping, relevant: np.ndarray) -> "LoopState":
        rated = np.zeros((dataset.num_users, dataset.num_items), dtype=bool)
        rated[dataset.users, dataset.items] = True
        seen = (rated.astype(np.int32) @ mapping.matrix.astype(np.int32)) > 0
        return cls(rated, rated.copy(), seen, relevant.copy(), 0,
                   np.zeros(dataset.num_users, dtype=bool))

    def copy(self) -> "LoopState":
        return LoopState(self.rated.copy(), self.shown.copy(), self.seen.copy(),
                         self.relevant, self.iteration, self.exhausted.copy())

    def rated_items(self, user: int) -> set[int]:
        return set(np.flatnonzero(self.rated[user]).tolist())

    def seen_groups(self, user: int) -> set[int]:
        return set(np.flatnonzero(self.seen[user]).tolist())

    def relevant_groups(self, user: int) -> set[int]:
        return set(np.flatnonzero(self.relevant[user]).tolist())

    def blind_counts(self) -> np.ndarray:
        return (self.relevant & ~self.seen).sum(axis=1)

    def error_counts(self) -> np.ndarray:
        return (self.seen & ~self.relevant).sum(axis=1)


@dataclass
class IterationResult:
    recs: list[list[int]]
    rated: list[list[tuple[int, int]]]
    newly_exhausted: list[int]


def run_iteration(state: LoopState, model: FactorModel, policy: PolicyConfig, feedback: FeedbackModel,
                  truth: GroundTruth, mapping: GroupMapping, rng_for_user=None,
                  seen_from: str = SEEN_FROM_RECOMMENDED):
    """One recommend/rate step for every user; returns ``(new_state, result)``.

    ``rng_for_user(u)`` supplies the generator for user ``u`` and is only
    called when the policy or the feedback model is stochastic. Users with
    no unrated item left are marked exhausted and skipped.
    """
    new = state.copy()
    scores = model.score_matrix()
    stochastic = ((policy.kind != "exploit" and policy.epsilon > 0)
                  or feedback.kind == RANK_DEPENDENT)
    all_recs, all_rated, newly = [], [], []
    for u in range(new.rated.shape[0]):
        if new.exhausted[u]:
            all_recs.append([])
            all_rated.append([])
            continue
        cands = np.flatnonzero(~new.rated[u])
        if cands.size == 0:
            new.exhausted[u] = True
            newly.append(u)
            all_recs.append([])
            all_rated.append([])
            continue
        rng = rng_for_user(u) if (stochastic and rng_for_user is not None) else None
        if stochastic and rng is None:
            raise ValueError("a stochastic policy or feedback model needs rng_for_user")
        recs = select(rank_items(cands, scores[u, cands]), policy, rng)
        if feedback.kind == PERFECT:
            rated = perfect_feedback(recs, truth, u)
        else:
            rated = rank_dependent_feedback(recs, truth, u, feedback.theta, rng)
        new.shown[u, recs] = True
        if rated:
            new.rated[u, [i for i, _ in rated]] = True
        exposed = recs if (feedback.kind == RANK_DEPENDENT and seen_from == SEEN_FROM_RECOMMENDED) \
            else [i for i, _ in rated]
        if exposed:
            new.seen[u] |= mapping.matrix[exposed].any(axis=0)
        all_recs.append(recs)
        all_rated.append(rated)
    new.iteration += 1
    return new, IterationResult(all_recs, all_rated, newly)


class SimulationAborted(RecloopError):
    """Training failed mid-simulation; ``trace`` holds the completed runs."""

    def __init__(self, trace, run, iteration, cause):
        self.trace = trace
        self.run = run
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"run {run}, iteration {iteration}: {cause}")


@dataclass
class SimulationTrace:
    """Snapshots ``0..iterations`` of every user's seen set, per run."""

    config: SimulationConfig
    seen: np.ndarray          # runs x (iterations + 1) x users x groups, bool
    relevant: np.ndarray      # users x groups, bool
    recommended: np.ndarray   # runs x iterations x users, count of recs
    rated: np.ndarray         # runs x iterations x users, count of rated recs
    exhausted: list[list[tuple[int, int]]]  # per run: (iteration, user)
    seeds: dict = field(default_factory=dict)

    @property
    def runs(self) -> int:
        return self.seen.shape[0]

    @property
    def iterations(self) -> int:
        return self.seen.shape[1] - 1

    def seen_counts(self) -> np.ndarray:
        return self.seen.sum(axis=3)

    def blind_counts(self) -> np.ndarray:
        return (self.relevant[None, None] & ~self.seen).sum(axis=3)

    def error_counts(self) -> np.ndarray:
        return (self.seen & ~self.relevant[None, None]).sum(axis=3)

    def user_series(self, run: int, user: int) -> dict:
        s = self.seen_counts()[run, :, user]
        b = self.blind_counts()[run, :, user]
        e = self.error_counts()[run, :, user]
        ds, avg_s = metrics.discovery_series(s)
        db, avg_b = metrics.blind_series(b)
        return dict(seen=s, blind=b, error=e, delta_s=ds, avg_discovery=avg_s,
                    delta_b=db, avg_blind_decrease=avg_b)

    def aggregate(self) -> dict[str, np.ndarray]:
        """User-mean metrics, each shaped ``runs x iterations`` (t = 1..n)."""
        s = self.seen_counts().astype(np.float64)
        b = self.blind_counts().astype(np.float64)
        e = self.error_counts().astype(np.float64)
        ds = np.diff(s, axis=1)
        db = np.abs(b[:, :-1] - b[:, 1:])
        out = {
            "seen_count": s[:, 1:].mean(axis=2),
            "blind_spot": b[:, 1:].mean(axis=2),
            "delta_s": ds.mean(axis=2),
            "delta_b": db.mean(axis=2),
            "error_e": e[:, 1:].mean(axis=2),
        }
        n = np.arange(1, self.iterations + 1)
        out["avg_discovery"] = np.cumsum(out["delta_s"], axis=1) / n
        out["avg_blind_decrease"] = np.cumsum(out["delta_b"], axis=1) / n
        return out

    def final_avg_discovery(self) -> np.ndarray:
        """Per-run user-mean discovery average at the last iteration."""
        return self.aggregate()["avg_discovery"][:, -1]

    def rows(self):
        """CSV rows in :data:`metrics.TRACE_COLUMNS` order."""
        agg = self.aggregate()
        rec_len = self.config.policy.rec_len
        for r in range(self.runs):
            for t in range(1, self.iterations + 1):
                yield (r, t,
                       agg["seen_count"][r, t - 1], agg["blind_spot"][r, t - 1],
                       agg["delta_s"][r, t - 1], agg["delta_b"][r, t - 1],
                       agg["avg_discovery"][r, t - 1], agg["avg_blind_decrease"][r, t - 1],
                       agg["error_e"][r, t - 1],
                       metrics.azuma_bound(metrics.BoundParams(0.05, rec_len, t)),
                       metrics.azuma_bound(metrics.BoundParams(0.01, rec_len, t)))

    def check_filtration(self) -> None:
        """``S_t`` is a subset of ``S_{t+1}`` for every run, user and t."""
        grew_back = self.seen[:, :-1] & ~self.seen[:, 1:]
        if grew_back.any():
            r, t, u, g = np.argwhere(grew_back)[0]
            raise InvariantViolation(f"run {r}, user {u}: group {g} left the seen set at t={t + 1}")

    def check_increments(self) -> None:
        """``0 <= dS_t <= |Rec|`` for every run, user and t."""
        ds = np.diff(self.seen_counts(), axis=1)
        rec_len = self.config.policy.rec_len
        bad = (ds < 0) | (ds > rec_len)
        if bad.any():
            r, t, u = np.argwhere(bad)[0]
            raise InvariantViolation(f"run {r}, user {u}: dS={ds[r, t, u]} at t={t + 1}")

    def blind_spot_check(self) -> dict:
        """Per-(run, user) check of the blind-spot averaging inequality.

        Returns counts of checked, skipped (error not non-increasing) and
        violating series.
        """
        s = self.seen_counts()
        b = self.blind_counts()
        e = self.error_counts()
        checked = skipped = violated = 0
        for r in range(self.runs):
            for u in range(s.shape[2]):
                ds = np.diff(s[r, :, u])
                dbs = np.abs(b[r, :-1, u] - b[r, 1:, u])
                gap = metrics.blind_spot_gap(dbs, ds, e[r, :, u])
                if gap is None:
                    skipped += 1
                    continue
                checked += 1
                if (gap < 0).any():
                    violated += 1
        return {"checked": checked, "skipped": skipped, "violated": violated}


def _train_model(train_users, train_items, train_ratings, num_users, num_items,
                 hp: Hyperparams, seq: np.random.SeedSequence, previous: FactorModel | None):
    init_seq, shuffle_seq = seq.spawn(2)
    if previous is None:
        model = init_model(num_users, num_items, hp.with_seed(int(init_seq.generate_state(1)[0])))
    else:
        model = previous.copy()
    sgd_fit(model, train_users, train_items, train_ratings, hp, rng=np.random.default_rng(shuffle_seq))
    return model


def run_simulation(config: SimulationConfig, dataset: RatingDataset, mapping: GroupMapping,
                   truth: GroundTruth | None = None) -> SimulationTrace:
    """Run ``config.runs`` independent feedback loops of ``config.iterations`` steps.

    Each run starts from the observed ratings. Every iteration retrains the
    model on the accumulated ratings (observed ratings keep their original
    values, added ones carry the ground-truth class), then lets the policy
    recommend to every user.
    """
    if mapping.num_items != dataset.num_items:
        raise ValueError("mapping and dataset disagree on the number of items")
    if truth is None:
        truth = build_semisynthetic(dataset, config.hyperparams)
    if truth.ratings.shape != (dataset.num_users, dataset.num_items):
        raise ValueError("ground truth shape does not match the dataset")

    relevant = relevance_matrix(truth, mapping, config.relevance_threshold)
    U, G = dataset.num_users, mapping.num_groups
    R, T = config.runs, config.iterations
    seen = np.zeros((R, T + 1, U, G), dtype=bool)
    n_recs = np.zeros((R, T, U), dtype=np.int32)
    n_rated = np.zeros((R, T, U), dtype=np.int32)
    exhausted: list[list[tuple[int, int]]] = []
    seeds = {"master_seed": config.master_seed, "runs": {}}

    def partial(completed):
        return SimulationTrace(replace(config, runs=max(completed, 1)), seen[:max(completed, 1)], relevant,
                               n_recs[:max(completed, 1)], n_rated[:max(completed, 1)], exhausted, seeds)

    for r in range(R):
        state = LoopState.initial(dataset, mapping, relevant)
        seen[r, 0] = state.seen
        tu = [dataset.users]
        ti = [dataset.items]
        tr = [dataset.ratings]
        model = None
        run_exhausted = []
        seeds["runs"][r] = int(derive_seed(config.master_seed, r).generate_state(1)[0])
        for t in range(1, T + 1):
            train_seq = derive_seed(config.master_seed, r, t, _TRAIN)
            try:
                model = _train_model(np.concatenate(tu), np.concatenate(ti), np.concatenate(tr),
                                     U, dataset.num_items, config.hyperparams, train_seq,
                                     model if config.retrain == WARM_START else None)
            except TrainingError as exc:
                if r == 0:
                    raise SimulationAborted(None, r, t, exc) from exc
                raise SimulationAborted(partial(r), r, t, exc) from exc

            def rng_for_user(u, _r=r, _t=t):
                return np.random.default_rng(derive_seed(config.master_seed, _r, _t, _USER, u))

            state, res = run_iteration(state, model, config.policy, config.feedback, truth, mapping,
                                       rng_for_user, config.seen_from)
            seen[r, t] = state.seen
            for u, (recs, rated) in enumerate(zip(res.recs, res.rated)):
                n_recs[r, t - 1, u] = len(recs)
                n_rated[r, t - 1, u] = len(rated)
                if rated:
                    tu.append(np.full(len(rated), u, dtype=np.int64))
                    ti.append(np.fromiter((i for i, _ in rated), dtype=np.int64, count=len(rated)))
                    tr.append(np.fromiter((v for _, v in rated), dtype=np.float64, count=len(rated)))
            run_exhausted.extend((t, u) for u in res.newly_exhausted)
            log.debug("run %d iteration %d: mean |S_t| = %.3f", r, t, state.seen.sum(axis=1).mean())
        exhausted.append(run_exhausted)
        log.info("run %d/%d done", r + 1, R)
    return SimulationTrace(config, seen, relevant, n_recs, n_rated, exhausted, seeds)

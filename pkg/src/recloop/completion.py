"""Semi-synthetic ground truth: complete the rating matrix, then rescale
each user's row into five percentile classes."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .dataset import RatingDataset
from .errors import DataError
from .factorization import Hyperparams, init_model, train

PERCENTILE_METHOD = "nearest-rank-quintile-v1"
QUINTILES = (20, 40, 60, 80)
_MAGIC = b"RECLOOP-GT1\n"


def quintile_thresholds(row: np.ndarray) -> np.ndarray:
    """Nearest-rank 20/40/60/80th percentiles of ``row``."""
    s = np.sort(row)
    n = s.size
    ranks = [max(1, math.ceil(p * n / 100)) for p in QUINTILES]
    return s[np.asarray(ranks) - 1]


def percentile_rescale(row) -> np.ndarray:
    """Map one row of raw predictions to classes ``1..5``.

    A value ``v`` gets ``1 + #{quintile thresholds < v}``, so values at or
    below the 20th percentile map to 1 and values above the 80th to 5. A
    constant row maps entirely to 1.
    """
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.size == 0:
        raise ValueError("row must be a non-empty 1-d array")
    if not np.isfinite(row).all():
        raise DataError("row contains non-finite values")
    thr = quintile_thresholds(row)
    return (np.searchsorted(thr, row, side="left") + 1).astype(np.int8)


class PercentileRescaler(TransformerMixin, BaseEstimator):
    """Row-wise quintile discretizer (stateless; ``fit`` only validates)."""

    def fit(self, X, y=None):
        check_array(X)
        return self

    def transform(self, X):
        X = check_array(X)
        return np.vstack([percentile_rescale(row) for row in X])


@dataclass(frozen=True)
class GroundTruth:
    """Dense ``num_users x num_items`` matrix of classes 1..5."""

    ratings: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        r = np.asarray(self.ratings)
        if r.ndim != 2:
            raise ValueError("ground truth must be 2-d")
        if r.size and (r.min() < 1 or r.max() > 5):
            raise DataError("ground truth values must lie in {1..5}")
        r = r.astype(np.int8)
        r.setflags(write=False)
        object.__setattr__(self, "ratings", r)

    @property
    def num_users(self) -> int:
        return self.ratings.shape[0]

    @property
    def num_items(self) -> int:
        return self.ratings.shape[1]

    def __eq__(self, other):
        if not isinstance(other, GroundTruth):
            return NotImplemented
        return np.array_equal(self.ratings, other.ratings)

    __hash__ = None

    def to_bytes(self) -> bytes:
        header = dict(self.meta)
        header.update(num_users=self.num_users, num_items=self.num_items,
                      dtype="int8", percentile_method=header.get("percentile_method", PERCENTILE_METHOD))
        return (_MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n"
                + np.ascontiguousarray(self.ratings).tobytes())

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "GroundTruth":
        if not blob.startswith(_MAGIC):
            raise DataError("not a ground-truth file (bad magic)")
        rest = blob[len(_MAGIC):]
        nl = rest.index(b"\n")
        header = json.loads(rest[:nl])
        body = rest[nl + 1:]
        shape = (header["num_users"], header["num_items"])
        if len(body) != shape[0] * shape[1]:
            raise DataError("ground-truth body size does not match header")
        ratings = np.frombuffer(body, dtype=np.int8).reshape(shape)
        return cls(ratings, header)

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def complete_matrix(dataset: RatingDataset, hp: Hyperparams) -> np.ndarray:
    """Fit MF on every observation and predict the full matrix.

    Observed cells are replaced by predictions too.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    model = init_model(dataset.num_users, dataset.num_items, hp)
    model, _ = train(model, dataset, hp)
    return model.score_matrix()


def build_semisynthetic(dataset: RatingDataset, hp: Hyperparams) -> GroundTruth:
    raw = complete_matrix(dataset, hp)
    classes = PercentileRescaler().fit_transform(raw)
    meta = {"seed": hp.seed, "hyperparams": asdict(hp), "percentile_method": PERCENTILE_METHOD}
    return GroundTruth(classes, meta)

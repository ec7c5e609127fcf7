"""Bias-free matrix factorization trained by per-observation SGD.

Scores are the plain dot product of user and item latent vectors. The
objective summed over observed ``(u, i, r)`` is::

    (r - p_u . q_i)**2 + l2 * (|p_u|**2 + |q_i|**2)

Each SGD step moves ``(p_u, q_i)`` by ``-learning_rate / 2`` times the
gradient of that term (the usual ``p += lr * (err * q - l2 * p)`` form).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from .dataset import RatingDataset
from .errors import TrainingError

INIT_SCALE = 0.05


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.001
    latent_dim: int = 10
    l2_coeff: float = 0.01
    epochs: int = 300
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.l2_coeff < 0:
            raise ValueError("l2_coeff must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def with_seed(self, seed: int) -> "Hyperparams":
        return Hyperparams(self.learning_rate, self.latent_dim, self.l2_coeff, self.epochs, int(seed))


@dataclass
class FactorModel:
    user_factors: np.ndarray
    item_factors: np.ndarray
    hyperparams: Hyperparams = field(default_factory=Hyperparams)

    @property
    def num_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_factors.shape[0]

    def copy(self) -> "FactorModel":
        return FactorModel(self.user_factors.copy(), self.item_factors.copy(), self.hyperparams)

    def predict(self, user: int, item: int) -> float:
        _check_index(user, self.num_users, "user")
        _check_index(item, self.num_items, "item")
        return float(self.user_factors[user] @ self.item_factors[item])

    def score_matrix(self, users=None) -> np.ndarray:
        """Scores for all items of ``users`` (all users when omitted)."""
        P = self.user_factors if users is None else self.user_factors[users]
        return P @ self.item_factors.T

    def save(self, path) -> None:
        """Write a self-describing ``.npz`` checkpoint."""
        meta = json.dumps({"num_users": self.num_users, "num_items": self.num_items,
                           "hyperparams": asdict(self.hyperparams)}, sort_keys=True)
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(meta), user_factors=self.user_factors,
                     item_factors=self.item_factors)

    @classmethod
    def load(cls, path) -> "FactorModel":
        with np.load(Path(path), allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            model = cls(data["user_factors"].copy(), data["item_factors"].copy(),
                        Hyperparams(**meta["hyperparams"]))
        if (model.num_users, model.num_items) != (meta["num_users"], meta["num_items"]):
            raise ValueError("checkpoint dimensions do not match its header")
        return model


def _check_index(idx, size, what):
    if not 0 <= idx < size:
        raise IndexError(f"{what} index {idx} out of range [0, {size})")


def init_model(num_users: int, num_items: int, hp: Hyperparams) -> FactorModel:
    """Factors drawn i.i.d. from U[-0.05, 0.05] using ``hp.seed``."""
    if num_users < 1 or num_items < 1:
        raise ValueError("num_users and num_items must be >= 1")
    rng = np.random.default_rng(hp.seed)
    P = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(num_users, hp.latent_dim))
    Q = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(num_items, hp.latent_dim))
    return FactorModel(P, Q, hp)


def predict(model: FactorModel, user_id: int, item_id: int) -> float:
    return model.predict(user_id, item_id)


def observation_loss(p, q, r, l2):
    err = r - float(np.dot(p, q))
    return err * err + l2 * (float(np.dot(p, p)) + float(np.dot(q, q)))


def observation_gradient(p, q, r, l2):
    """Gradient of :func:`observation_loss` w.r.t. ``(p, q)``.

    :func:`sgd_step` applies ``-lr / 2`` times this.
    """
    err = r - float(np.dot(p, q))
    return -2.0 * err * q + 2.0 * l2 * p, -2.0 * err * p + 2.0 * l2 * q


def sgd_step(p, q, r, lr, l2):
    """Single-observation update, returning new ``(p, q)`` (reference path)."""
    gp, gq = observation_gradient(p, q, r, l2)
    return p - 0.5 * lr * gp, q - 0.5 * lr * gq


@njit(cache=True)
def _sgd_epoch(P, Q, users, items, ratings, order, lr, l2):
    k = P.shape[1]
    for idx in order:
        u = users[idx]
        i = items[idx]
        pred = 0.0
        for f in range(k):
            pred += P[u, f] * Q[i, f]
        err = ratings[idx] - pred
        for f in range(k):
            pu = P[u, f]
            qi = Q[i, f]
            P[u, f] = pu + lr * (err * qi - l2 * pu)
            Q[i, f] = qi + lr * (err * pu - l2 * qi)


def _mse(P, Q, users, items, ratings) -> float:
    pred = np.einsum("ij,ij->i", P[users], Q[items])
    return float(np.mean((ratings - pred) ** 2))


def sgd_fit(model: FactorModel, users, items, ratings, hp: Hyperparams, rng=None):
    """Run ``hp.epochs`` SGD epochs in place; returns the per-epoch training MSE.

    The observation order is reshuffled every epoch by ``rng`` (a
    ``numpy.random.Generator``; seeded from ``hp.seed`` if omitted).
    """
    users = np.ascontiguousarray(users, dtype=np.int64)
    items = np.ascontiguousarray(items, dtype=np.int64)
    ratings = np.ascontiguousarray(ratings, dtype=np.float64)
    if users.size == 0:
        raise ValueError("cannot train on an empty dataset")
    if rng is None:
        rng = np.random.default_rng(hp.seed)
    P = np.ascontiguousarray(model.user_factors, dtype=np.float64)
    Q = np.ascontiguousarray(model.item_factors, dtype=np.float64)
    trace = np.empty(hp.epochs)
    for epoch in range(hp.epochs):
        order = rng.permutation(users.size)
        _sgd_epoch(P, Q, users, items, ratings, order, hp.learning_rate, hp.l2_coeff)
        if not (np.isfinite(P).all() and np.isfinite(Q).all()):
            raise TrainingError(epoch + 1)
        trace[epoch] = _mse(P, Q, users, items, ratings)
    model.user_factors = P
    model.item_factors = Q
    model.hyperparams = hp
    return trace


def train(model: FactorModel, dataset: RatingDataset, hp: Hyperparams):
    """Train a copy of ``model`` on ``dataset``; returns ``(model, mse_per_epoch)``.

    The shuffle stream is derived from ``hp.seed`` but kept separate from
    the stream :func:`init_model` draws the initial factors from.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if (model.num_users, model.num_items) != (dataset.num_users, dataset.num_items):
        raise ValueError("model and dataset dimensions differ")
    fitted = model.copy()
    trace = sgd_fit(fitted, dataset.users, dataset.items, dataset.ratings, hp,
                    rng=np.random.default_rng([hp.seed, 1]))
    return fitted, trace


def loss(model: FactorModel, dataset: RatingDataset, l2_coeff: float) -> float:
    """Regularized squared-error objective summed over observations."""
    if len(dataset):
        if dataset.users.max() >= model.num_users or dataset.items.max() >= model.num_items:
            raise IndexError("dataset index outside model dimensions")
    P = model.user_factors[dataset.users]
    Q = model.item_factors[dataset.items]
    err = dataset.ratings - np.einsum("ij,ij->i", P, Q)
    reg = np.einsum("ij,ij->i", P, P) + np.einsum("ij,ij->i", Q, Q)
    return float(np.sum(err * err) + l2_coeff * np.sum(reg))


class MatrixFactorization(RegressorMixin, BaseEstimator):
    """scikit-learn estimator around the SGD factorization.

    ``X`` is an ``(n, 2)`` integer array of ``(user, item)`` indices and
    ``y`` the ratings. ``n_users`` / ``n_items`` default to ``max + 1`` of
    the training indices.

    Parameters
    ----------
    learning_rate, latent_dim, l2_coeff, epochs
        SGD hyperparameters.
    random_state : int
        Seeds initialization and the per-epoch shuffle.
    warm_start : bool
        Reuse the fitted factors on the next ``fit`` call instead of
        re-initializing.
    """

    def __init__(self, learning_rate=0.001, latent_dim=10, l2_coeff=0.01, epochs=300,
                 random_state=0, n_users=None, n_items=None, warm_start=False):
        self.learning_rate = learning_rate
        self.latent_dim = latent_dim
        self.l2_coeff = l2_coeff
        self.epochs = epochs
        self.random_state = random_state
        self.n_users = n_users
        self.n_items = n_items
        self.warm_start = warm_start

    def _hyperparams(self) -> Hyperparams:
        return Hyperparams(self.learning_rate, self.latent_dim, self.l2_coeff,
                           self.epochs, int(self.random_state))

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=None, y_numeric=True)
        X = X.astype(np.int64)
        if X.shape[1] != 2:
            raise ValueError("X must have exactly two columns (user, item)")
        if (X < 0).any():
            raise ValueError("negative index in X")
        hp = self._hyperparams()
        n_users = self.n_users if self.n_users is not None else int(X[:, 0].max()) + 1
        n_items = self.n_items if self.n_items is not None else int(X[:, 1].max()) + 1
        if self.warm_start and hasattr(self, "model_"):
            model = self.model_
            if (model.num_users, model.num_items) != (n_users, n_items):
                raise ValueError("warm start with different dimensions")
        else:
            model = init_model(n_users, n_items, hp)
        self.loss_curve_ = sgd_fit(model, X[:, 0], X[:, 1], np.asarray(y, dtype=np.float64), hp,
                                   rng=np.random.default_rng([hp.seed, 1]))
        self.model_ = model
        self.user_factors_ = model.user_factors
        self.item_factors_ = model.item_factors
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=None).astype(np.int64)
        if X.shape[1] != 2:
            raise ValueError("X must have exactly two columns (user, item)")
        m = self.model_
        if (X[:, 0] >= m.num_users).any() or (X[:, 1] >= m.num_items).any() or (X < 0).any():
            raise IndexError("index out of range")
        return np.einsum("ij,ij->i", m.user_factors[X[:, 0]], m.item_factors[X[:, 1]])

"""k-nearest-neighbour regression on patient features.

Features are min-max scaled with ranges taken from the training set;
a constant feature keeps unit range. Distances are Euclidean and ties are
broken by training-row index, so predictions are fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError
from ..records import feature_matrix, outcomes

DEFAULT_K_GRID = (1, 2, 3, 5, 8, 13)


@dataclass
class KNNRegressor:
    X: np.ndarray
    y: np.ndarray
    lo: np.ndarray
    span: np.ndarray

    @classmethod
    def fit(cls, X, y) -> "KNNRegressor":
        X = np.array(X, dtype=float, ndmin=2)
        y = np.asarray(y, dtype=float)
        if len(X) == 0:
            raise DomainError("kNN needs a non-empty training set")
        if len(y) != len(X):
            raise DomainError("features and targets differ in length")
        lo, hi = X.min(axis=0), X.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        return cls(X, y, lo, span)

    def scale(self, Q) -> np.ndarray:
        return (np.array(Q, dtype=float, ndmin=2) - self.lo) / self.span

    def neighbours(self, Q, k: int, exclude_self: bool = False) -> np.ndarray:
        """Indices of the ``k`` nearest training rows, nearest first.

        With ``exclude_self`` the query rows must be the training rows
        themselves and row ``i`` is never its own neighbour.
        """
        n = len(self.X)
        avail = n - 1 if exclude_self else n
        if not 1 <= k <= avail:
            raise DomainError(f"k must be in [1, {avail}], got {k}")
        A = self.scale(self.X)
        Qs = self.scale(Q)
        d2 = ((Qs[:, None, :] - A[None, :, :]) ** 2).sum(axis=2)
        if exclude_self:
            d2[np.arange(n), np.arange(n)] = np.inf
        # Stable sort on distance keeps index order among ties.
        return np.argsort(d2, axis=1, kind="stable")[:, :k]

    def predict(self, Q, k: int) -> np.ndarray:
        return self.y[self.neighbours(Q, k)].mean(axis=1)

    def loo_predict(self, k: int) -> np.ndarray:
        return self.y[self.neighbours(self.X, k, exclude_self=True)].mean(axis=1)

    def loo_error(self, k: int) -> float:
        """Mean absolute leave-one-out error."""
        return float(np.mean(np.abs(self.loo_predict(k) - self.y)))


@dataclass(frozen=True)
class KChoice:
    k: int
    loo_error: float
    errors: dict


def choose_k(model: KNNRegressor, grid=DEFAULT_K_GRID) -> KChoice:
    """Grid value with the smallest leave-one-out error; ties go to the smaller k."""
    usable = sorted({int(k) for k in grid if 1 <= int(k) <= len(model.X) - 1})
    if not usable:
        raise DomainError(f"no k in {tuple(grid)} is usable with {len(model.X)} training rows")
    errs = {k: model.loo_error(k) for k in usable}
    best = min(usable, key=lambda k: (errs[k], k))
    return KChoice(best, errs[best], errs)


def knn_predict(train_records, query_features, k_nn: int) -> np.ndarray:
    """Mean outcome of the ``k_nn`` nearest training records to each query."""
    train_records = list(train_records)
    if not train_records:
        raise DomainError("kNN needs a non-empty training set")
    model = KNNRegressor.fit(feature_matrix(train_records), outcomes(train_records))
    return model.predict(query_features, k_nn)

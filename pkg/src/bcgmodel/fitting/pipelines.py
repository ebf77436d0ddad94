"""Residual-correction pipelines stacked on top of the fitted ODE model.

Every pipeline learns ``r = log(max(obs, 1)) - log(max(ode, 1))`` from patient
features and corrects a model prediction as ``max(ode, 1) * exp(r_hat)``. The
candidate set is fixed and small: a model search in the spirit of automated
pipeline optimization, but reproducible and serializable to plain JSON.

Candidate names: ``identity``, ``knn:<k>``, ``ridge:<alpha>``,
``tree:<max_depth>``, ``group-mean``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError
from ..records import feature_matrix
from .knn import KNNRegressor
from .stats import EPS_FLOOR, rmae

DEFAULT_CANDIDATES = ("identity", "knn:3", "knn:5", "knn:10", "ridge:1", "tree:3", "group-mean")


def log_residuals(observed, model) -> np.ndarray:
    obs = np.maximum(np.asarray(observed, dtype=float), EPS_FLOOR)
    mod = np.maximum(np.asarray(model, dtype=float), EPS_FLOOR)
    return np.log(obs) - np.log(mod)


def apply_residual(model, r) -> np.ndarray:
    """Corrected outcome; a zero residual returns the model value untouched."""
    model = np.asarray(model, dtype=float)
    r = np.asarray(r, dtype=float)
    return np.where(r == 0.0, model, np.maximum(model, EPS_FLOOR) * np.exp(r))


class Pipeline:
    name = "pipeline"

    def fit(self, X: np.ndarray, r: np.ndarray) -> "Pipeline":
        raise NotImplementedError

    def predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    @property
    def spec(self) -> str:
        return self.name

    def correct(self, records, model) -> np.ndarray:
        return apply_residual(model, self.predict(feature_matrix(list(records))))


class Identity(Pipeline):
    name = "identity"

    def fit(self, X, r):
        return self

    def predict(self, X):
        return np.zeros(len(X))

    def to_dict(self):
        return {"kind": "identity"}


@dataclass
class KNNResidual(Pipeline):
    k: int
    model: KNNRegressor | None = None
    name = "knn"

    @property
    def spec(self):
        return f"knn:{self.k}"

    def fit(self, X, r):
        if len(X) < 1:
            raise DomainError("kNN pipeline needs training rows")
        self.model = KNNRegressor.fit(X, r)
        return self

    def predict(self, X):
        if self.model is None:
            raise DomainError("pipeline is not fitted")
        return self.model.predict(X, min(self.k, len(self.model.X)))

    def to_dict(self):
        m = self.model
        return {"kind": "knn", "k": self.k, "X": m.X.tolist(), "y": m.y.tolist()}


def _design(X: np.ndarray) -> np.ndarray:
    # One-hot of age band, gender, smoking and weight class, then log10 T(0).
    X = np.asarray(X, dtype=float)
    cols = []
    for c, levels in ((0, 6), (1, 2), (2, 2), (3, 3)):
        cols.append(np.eye(levels)[X[:, c].astype(int)])
    cols.append(X[:, 4:5])
    return np.hstack(cols)


@dataclass
class RidgeResidual(Pipeline):
    alpha: float
    coef: np.ndarray | None = None
    intercept: float = 0.0
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    name = "ridge"

    @property
    def spec(self):
        return f"ridge:{self.alpha:g}"

    def fit(self, X, r):
        if len(X) < 1:
            raise DomainError("ridge pipeline needs training rows")
        if not self.alpha > 0:
            raise DomainError("ridge penalty must be > 0")
        D = _design(X)
        self.x_mean = D.mean(axis=0)
        sd = D.std(axis=0)
        self.x_scale = np.where(sd > 0, sd, 1.0)
        Z = (D - self.x_mean) / self.x_scale
        r = np.asarray(r, dtype=float)
        self.intercept = float(r.mean())
        A = Z.T @ Z + self.alpha * np.eye(Z.shape[1])
        self.coef = np.linalg.solve(A, Z.T @ (r - self.intercept))
        return self

    def predict(self, X):
        if self.coef is None:
            raise DomainError("pipeline is not fitted")
        Z = (_design(X) - self.x_mean) / self.x_scale
        return Z @ self.coef + self.intercept

    def to_dict(self):
        return {"kind": "ridge", "alpha": self.alpha, "coef": self.coef.tolist(),
                "intercept": self.intercept, "x_mean": self.x_mean.tolist(),
                "x_scale": self.x_scale.tolist()}


def _grow(X, r, depth, max_depth, min_leaf):
    node = {"value": float(r.mean()), "n": int(len(r))}
    if depth >= max_depth or len(r) < 2 * min_leaf:
        return node
    base = float(((r - r.mean()) ** 2).sum())
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, rs = X[order, j], r[order]
        csum, csq = np.cumsum(rs), np.cumsum(rs * rs)
        tot, totsq, n = csum[-1], csq[-1], len(rs)
        for i in range(min_leaf, n - min_leaf + 1):
            if xs[i - 1] == xs[i]:
                continue
            sl, ql = csum[i - 1], csq[i - 1]
            sse = (ql - sl * sl / i) + (totsq - ql - (tot - sl) ** 2 / (n - i))
            if best is None or sse < best[0] - 1e-12 * max(base, 1.0):
                best = (sse, j, 0.5 * (xs[i - 1] + xs[i]))
    if best is None or best[0] >= base:
        return node
    _, j, thr = best
    left = X[:, j] <= thr
    node.update(feature=int(j), threshold=float(thr),
                left=_grow(X[left], r[left], depth + 1, max_depth, min_leaf),
                right=_grow(X[~left], r[~left], depth + 1, max_depth, min_leaf))
    return node


def _walk(node, x):
    while "feature" in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return node["value"]


@dataclass
class TreeResidual(Pipeline):
    """Least-squares regression tree; first-best split wins ties."""

    max_depth: int
    min_leaf: int = 5
    root: dict | None = None
    name = "tree"

    @property
    def spec(self):
        return f"tree:{self.max_depth}"

    def fit(self, X, r):
        if len(X) < 1:
            raise DomainError("tree pipeline needs training rows")
        self.root = _grow(np.asarray(X, dtype=float), np.asarray(r, dtype=float), 0,
                          self.max_depth, self.min_leaf)
        return self

    def predict(self, X):
        if self.root is None:
            raise DomainError("pipeline is not fitted")
        return np.array([_walk(self.root, x) for x in np.asarray(X, dtype=float)])

    def to_dict(self):
        return {"kind": "tree", "max_depth": self.max_depth, "min_leaf": self.min_leaf, "root": self.root}


def _group_index(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return (((X[:, 0] * 2 + X[:, 1]) * 2 + X[:, 2]) * 3 + X[:, 3]).astype(int)


@dataclass
class GroupMeanResidual(Pipeline):
    """Mean residual per group; unseen groups get the overall mean."""

    means: dict = field(default_factory=dict)
    overall: float = 0.0
    name = "group-mean"

    def fit(self, X, r):
        if len(X) < 1:
            raise DomainError("group-mean pipeline needs training rows")
        r = np.asarray(r, dtype=float)
        g = _group_index(X)
        self.overall = float(r.mean())
        self.means = {int(k): float(r[g == k].mean()) for k in sorted(set(g.tolist()))}
        return self

    def predict(self, X):
        return np.array([self.means.get(int(k), self.overall) for k in _group_index(X)])

    def to_dict(self):
        return {"kind": "group-mean", "overall": self.overall,
                "means": {str(k): v for k, v in sorted(self.means.items())}}


def make_pipeline(spec: str) -> Pipeline:
    kind, _, arg = spec.partition(":")
    try:
        if kind == "identity" and not arg:
            return Identity()
        if kind == "knn":
            k = int(arg)
            if k < 1:
                raise ValueError
            return KNNResidual(k)
        if kind == "ridge":
            return RidgeResidual(float(arg))
        if kind == "tree":
            return TreeResidual(int(arg))
        if kind == "group-mean" and not arg:
            return GroupMeanResidual()
    except ValueError:
        pass
    raise DomainError(f"unknown pipeline candidate {spec!r}")


def pipeline_from_dict(d: dict) -> Pipeline:
    kind = d["kind"]
    if kind == "identity":
        return Identity()
    if kind == "knn":
        p = KNNResidual(int(d["k"]))
        p.model = KNNRegressor.fit(np.array(d["X"], dtype=float), np.array(d["y"], dtype=float))
        return p
    if kind == "ridge":
        p = RidgeResidual(float(d["alpha"]))
        p.coef = np.array(d["coef"], dtype=float)
        p.intercept = float(d["intercept"])
        p.x_mean = np.array(d["x_mean"], dtype=float)
        p.x_scale = np.array(d["x_scale"], dtype=float)
        return p
    if kind == "tree":
        return TreeResidual(int(d["max_depth"]), int(d["min_leaf"]), d["root"])
    if kind == "group-mean":
        return GroupMeanResidual({int(k): float(v) for k, v in d["means"].items()}, float(d["overall"]))
    raise DomainError(f"unknown pipeline kind {kind!r}")


@dataclass
class Selection:
    spec: str
    pipeline: Pipeline
    scores: dict
    failures: dict

    def summary(self) -> dict:
        return {"selected": self.spec, "validate_rmae": self.scores, "failures": self.failures}


def select_pipeline(candidates, train_records, train_model, validate_records, validate_model,
                    metric=rmae) -> Selection:
    """Fit every candidate on train, score on validate, keep the argmin.

    ``train_model`` / ``validate_model`` are the ODE predictions for those
    records. Ties go to the earlier candidate.
    """
    candidates = list(candidates)
    if not candidates:
        raise DomainError("no pipeline candidates given")
    train_records = list(train_records)
    validate_records = list(validate_records)
    if not validate_records:
        raise DomainError("pipeline selection needs a non-empty validate set")
    Xt = feature_matrix(train_records)
    rt = log_residuals([r.final_cells for r in train_records], train_model)
    Xv = feature_matrix(validate_records)
    obs_v = np.array([r.final_cells for r in validate_records], dtype=float)
    scores, failures, fitted = {}, {}, {}
    for spec in candidates:
        try:
            p = make_pipeline(spec) if isinstance(spec, str) else spec
            key = p.spec
            if key in scores or key in failures:
                continue
            p.fit(Xt, rt)
            pred = apply_residual(validate_model, p.predict(Xv))
            s = float(metric(pred, obs_v))
            if not math.isfinite(s):
                raise DomainError("non-finite validation score")
            scores[key] = s
            fitted[key] = p
        except Exception as exc:  # noqa: BLE001 - reported per candidate
            failures[spec if isinstance(spec, str) else getattr(spec, "spec", repr(spec))] = str(exc)
    if not scores:
        raise DomainError("every pipeline candidate failed: " +
                          "; ".join(f"{k}: {v}" for k, v in failures.items()))
    best = min(scores, key=lambda k: scores[k])
    # min() returns the first minimum in insertion (candidate) order.
    return Selection(best, fitted[best], scores, failures)

"""Stratified k-fold splits with a train/validate split inside each fold."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError

VALIDATE_FRACTION = 0.2


@dataclass(frozen=True)
class Fold:
    train: np.ndarray
    validate: np.ndarray
    test: np.ndarray

    def to_dict(self) -> dict:
        return {"train": self.train.tolist(), "validate": self.validate.tolist(), "test": self.test.tolist()}


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple[Fold, ...]
    k: int
    seed: int
    n: int

    def to_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "n": self.n, "folds": [f.to_dict() for f in self.folds]}


def _stratified_order(idx: np.ndarray, strata: np.ndarray, rng) -> np.ndarray:
    # Shuffle within each stratum, then concatenate strata in label order, so
    # dealing the result round-robin spreads every stratum evenly.
    out = []
    for s in np.unique(strata[idx]):
        members = idx[strata[idx] == s]
        out.append(members[rng.permutation(len(members))])
    return np.concatenate(out) if out else idx[:0]


def kfold_split(records_or_groups, k: int, seed: int, validate_fraction: float = VALIDATE_FRACTION) -> FoldSplit:
    """Split ``n`` items into ``k`` folds, stratified by group.

    Accepts records (stratified by their group) or an array of stratum
    labels. Fold ``i``'s test set is the ``i``-th slice of a round-robin deal;
    the remaining items are dealt into validate every ``1/validate_fraction``
    positions, stratum by stratum, and the rest form the train set.
    """
    items = list(records_or_groups)
    n = len(items)
    if k < 2:
        raise DomainError(f"k-fold needs k >= 2, got {k}")
    if k > n:
        raise DomainError(f"k = {k} exceeds the number of records ({n})")
    if not 0 < validate_fraction < 1:
        raise DomainError("validate fraction must lie in (0, 1)")
    if n and hasattr(items[0], "group"):
        strata = np.array([r.group.index for r in items])
    else:
        strata = np.asarray(items, dtype=int)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6B66]))
    order = _stratified_order(np.arange(n), strata, rng)
    fold_of = np.empty(n, dtype=int)
    fold_of[order] = np.arange(n) % k
    period = max(2, int(round(1.0 / validate_fraction)))
    folds = []
    for f in range(k):
        test = np.sort(np.flatnonzero(fold_of == f))
        rest = _stratified_order(np.flatnonzero(fold_of != f), strata, rng)
        is_val = (np.arange(len(rest)) % period) == period - 1
        if not is_val.any() and len(rest) >= 2:
            is_val[-1] = True
        folds.append(Fold(np.sort(rest[~is_val]), np.sort(rest[is_val]), test))
    return FoldSplit(tuple(folds), k, int(seed), n)

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bcgmodel.demographics import Gender, PatientProfile, Smoking, WeightClass
from bcgmodel.errors import DomainError
from bcgmodel.fitting.kfold import kfold_split
from bcgmodel.fitting.pipelines import (
    DEFAULT_CANDIDATES,
    apply_residual,
    log_residuals,
    make_pipeline,
    pipeline_from_dict,
    select_pipeline,
)
from bcgmodel.records import feature_matrix, make_record


def _records(n, rng, groups=((50, Gender.MALE, Smoking.SMOKER, WeightClass.NORMAL),)):
    out = []
    for i in range(n):
        age, g, s, w = groups[i % len(groups)]
        v0 = float(10 ** rng.uniform(0, 2.3))
        out.append(make_record(f"R{i}", PatientProfile(age + i % 5, g, s, w, v0, 1.0)))
    return out


def _with_outcomes(records, values):
    out = []
    for r, v in zip(records, values):
        p = r.profile
        prof = PatientProfile(p.age_years, p.gender, p.smoking, p.weight_class, p.initial_tumor_volume, v * 2e-6)
        out.append(make_record(r.patient_id, prof))
    return out


def test_residual_roundtrip():
    model = np.array([1e3, 5e6, 0.0])
    obs = np.array([2e3, 1e6, 7.0])
    r = log_residuals(obs, model)
    assert np.allclose(apply_residual(model, r), np.maximum(obs, 1.0), rtol=1e-12)
    assert np.array_equal(apply_residual(model, np.zeros(3)), model)


def test_single_candidate_is_selected(rng):
    recs = _records(10, rng)
    model = np.full(10, 1e6)
    sel = select_pipeline(["knn:3"], recs[:7], model[:7], recs[7:], model[7:])
    assert sel.spec == "knn:3" and set(sel.scores) == {"knn:3"}


def test_tie_goes_to_first_candidate(rng):
    recs = _records(12, rng)
    obs = np.array([r.final_cells for r in recs])
    # Model already equals data: every candidate learns a zero residual.
    sel = select_pipeline(["group-mean", "identity"], recs[:8], obs[:8], recs[8:], obs[8:])
    assert sel.scores["group-mean"] == sel.scores["identity"]
    assert sel.spec == "group-mean"
    sel = select_pipeline(["identity", "group-mean"], recs[:8], obs[:8], recs[8:], obs[8:])
    assert sel.spec == "identity"


def test_ridge_wins_on_linear_residual(rng):
    base = _records(60, rng)
    logt0 = feature_matrix(base)[:, 4]
    model = np.full(60, 1e6)
    recs = _with_outcomes(base, model * np.exp(0.8 * (logt0 - logt0.mean())))
    tr, va = slice(0, 45), slice(45, 60)
    sel = select_pipeline(["group-mean", "ridge:1", "identity"], recs[tr], model[tr], recs[va], model[va])
    assert sel.spec == "ridge:1"
    assert sel.scores["ridge:1"] < 0.5 * sel.scores["group-mean"]


def test_failing_candidate_is_reported(rng):
    recs = _records(10, rng)
    model = np.full(10, 1e6)
    sel = select_pipeline(["bogus:1", "identity"], recs[:7], model[:7], recs[7:], model[7:])
    assert sel.spec == "identity" and "bogus:1" in sel.failures
    with pytest.raises(DomainError):
        select_pipeline(["bogus"], recs[:7], model[:7], recs[7:], model[7:])
    with pytest.raises(DomainError):
        select_pipeline(["identity"], recs[:7], model[:7], [], [])


@pytest.mark.parametrize("spec", DEFAULT_CANDIDATES)
def test_pipeline_serialization_roundtrip(spec, rng):
    groups = ((30, Gender.MALE, Smoking.SMOKER, WeightClass.NORMAL),
              (70, Gender.FEMALE, Smoking.NON_SMOKER, WeightClass.OVERWEIGHT))
    recs = _records(30, rng, groups)
    X = feature_matrix(recs)
    r = rng.normal(0, 0.3, 30) + 0.2 * X[:, 1]
    p = make_pipeline(spec).fit(X, r)
    q = pipeline_from_dict(p.to_dict())
    assert q.spec == p.spec
    assert np.array_equal(q.predict(X), p.predict(X))


def test_unknown_pipeline_spec():
    for bad in ("identity:1", "knn:0", "knn:x", "tree", "svm:2"):
        with pytest.raises(DomainError):
            make_pipeline(bad)


def test_kfold_ten_records_five_folds():
    split = kfold_split(np.zeros(10, dtype=int), 5, 0)
    assert [len(f.test) for f in split.folds] == [2] * 5
    for f in split.folds:
        assert len(f.train) + len(f.validate) == 8
        assert len(f.validate) >= 1


@given(st.integers(2, 7), st.integers(0, 60), st.integers(0, 2 ** 32), st.integers(1, 5))
def test_kfold_partition_properties(k, extra, seed, n_strata):
    n = k + extra
    strata = np.arange(n) % n_strata
    split = kfold_split(strata, k, seed)
    tests = np.concatenate([f.test for f in split.folds])
    assert sorted(tests.tolist()) == list(range(n))
    for f in split.folds:
        parts = [set(f.train.tolist()), set(f.validate.tolist()), set(f.test.tolist())]
        assert sum(len(p) for p in parts) == n
        assert set.union(*parts) == set(range(n))
    # Each stratum is spread over the folds as evenly as possible.
    for s in range(n_strata):
        counts = [int(np.sum(strata[f.test] == s)) for f in split.folds]
        assert max(counts) - min(counts) <= 1
    sizes = [len(f.test) for f in split.folds]
    assert max(sizes) - min(sizes) <= 1


def test_kfold_deterministic_and_seed_dependent():
    labels = np.arange(40) % 3
    a = kfold_split(labels, 4, 9).to_dict()
    b = kfold_split(labels, 4, 9).to_dict()
    c = kfold_split(labels, 4, 10).to_dict()
    assert a == b and a != c


def test_kfold_accepts_records(rng):
    recs = _records(12, rng)
    split = kfold_split(recs, 3, 1)
    assert split.n == 12 and math.fsum(len(f.test) for f in split.folds) == 12


def test_kfold_rejects_bad_k():
    with pytest.raises(DomainError):
        kfold_split(np.zeros(5, dtype=int), 1, 0)
    with pytest.raises(DomainError):
        kfold_split(np.zeros(5, dtype=int), 6, 0)
    with pytest.raises(DomainError):
        kfold_split(np.zeros(5, dtype=int), 2, 0, validate_fraction=1.0)

import json

import numpy as np
import pytest

from bcgmodel.cohort import GroundTruth, generate_cohort, sample_ground_truth
from bcgmodel.demographics import Gender, PatientProfile, Smoking, WeightClass
from bcgmodel.errors import DomainError
from bcgmodel.fitting.gd import FitContext, GDSettings, ThetaTable, gd_fit
from bcgmodel.fitting.kfold import kfold_split
from bcgmodel.fitting.pipelines import Identity
from bcgmodel.fitting.procedure import (
    MODEL_ORIGINAL,
    MODEL_PERSONALIZED,
    MODEL_POOLED,
    FitConfig,
    FitReport,
    FoldResult,
    evaluate,
    fit_full,
    group_error_table,
    predict,
    recovered_rates,
)
from bcgmodel.io import canonical_json, load_json
from bcgmodel.model import BASE_RATES, RATE_NAMES
from bcgmodel.records import make_record

BASE = np.array([BASE_RATES[n] for n in RATE_NAMES])
QUICK = GDSettings(max_iters=3, patience=2)


def _two_group_cohort(n, seed, spread=0.3):
    w = np.zeros(72)
    w[40] = w[65] = 0.5
    gt = sample_ground_truth(5, spread, weights=w)
    return gt, generate_cohort(gt, n, seed)


class _Fixed(Identity):
    """Stub pipeline: every record predicted as ``value``."""

    def __init__(self, value):
        self.value = value

    def correct(self, records, model):
        return np.full(len(list(records)), float(self.value))


def _fold(index, pipeline, groups=(40,)):
    return FoldResult(index, ThetaTable.uniform(BASE), pipeline, list(groups), {}, 0.0, [], "step1", 0,
                      {}, 0.0, 0.0)


def _record(pid, age=50, weight=WeightClass.NORMAL):
    return make_record(pid, PatientProfile(age, Gender.MALE, Smoking.SMOKER, weight, 20.0, 5.0))


def test_predict_averages_folds():
    rep = FitReport([_fold(0, _Fixed(10.0)), _fold(1, _Fixed(20.0))], 2, 0, 0, FitContext())
    recs = [_record("a"), _record("b")]
    p = predict(rep, recs)
    assert p.values.tolist() == [15.0, 15.0]
    assert p.per_fold.shape == (2, 2)


def test_predict_single_fold_is_that_fold():
    rep = FitReport([_fold(0, _Fixed(42.0))], 1, 0, 0, FitContext())
    assert predict(rep, [_record("a")]).values.tolist() == [42.0]


def test_low_confidence_flags_unseen_groups():
    rep = FitReport([_fold(0, _Fixed(1.0), groups=(40,)), _fold(1, _Fixed(1.0), groups=(41,))], 2, 0, 0,
                    FitContext())
    seen = _record("a")
    unseen = _record("b", age=20, weight=WeightClass.UNDERWEIGHT)
    assert seen.group.index in (40, 41)
    assert predict(rep, [seen, unseen]).low_confidence.tolist() == [False, True]


def test_report_fold_count_must_match_k():
    with pytest.raises(DomainError):
        FitReport([_fold(0, Identity())], 2, 0, 0, FitContext())


def test_fit_full_needs_three_records_per_fold():
    recs = [_record(f"r{i}") for i in range(5)]
    with pytest.raises(DomainError):
        fit_full(recs, FitConfig(k=2))


def test_identical_patients_give_identical_fold_thetas():
    recs = [_record(f"r{i}") for i in range(6)]
    rep = fit_full(recs, FitConfig(k=2, gd=QUICK, augment=False, baselines=False))
    a, b = rep.folds
    assert np.array_equal(a.theta.rates, b.theta.rates)
    assert a.trained_groups == b.trained_groups == [recs[0].group.index]


def test_without_augmentation_folds_equal_plain_gd():
    _, recs = _two_group_cohort(16, 2)
    cfg = FitConfig(k=2, seed=4, gd=QUICK, augment=False, baselines=False)
    rep = fit_full(recs, cfg)
    split = kfold_split(recs, cfg.k, cfg.seed, cfg.validate_fraction)
    for fold, res in zip(split.folds, rep.folds):
        train = [recs[i] for i in fold.train]
        theta, _ = gd_fit(train, ThetaTable.uniform(cfg.bounds().midpoint()), cfg.bounds(), cfg.gd, cfg.context())
        assert np.array_equal(theta.rates, res.theta.rates)
        assert res.pipeline.spec == "identity" and res.kept == "step1"


@pytest.fixture(scope="module")
def small_report():
    gt, recs = _two_group_cohort(24, 3)
    cfg = FitConfig(k=2, seed=1, gd=QUICK, refit_iters=2, retry_cap=2)
    return gt, recs, fit_full(recs, cfg)


def test_full_procedure_records_every_step(small_report):
    _, recs, rep = small_report
    assert rep.n_records == len(recs) and len(rep.folds) == 2
    for f in rep.folds:
        assert f.attempts and len(f.attempts) <= 2
        assert f.kept in ("step1", "refit", "refit-best")
        assert f.selection["selected"] == f.pipeline.spec
        assert np.isfinite(f.test_rmae)
        accepted = [a.accepted for a in f.attempts]
        assert sum(accepted) <= 1 and (not any(accepted) or accepted[-1])
        if f.kept == "refit":
            assert f.attempts[-1].p < 0.05
    assert set(rep.baselines) == {MODEL_POOLED, MODEL_ORIGINAL}
    assert sum(rep.group_test_counts) == len(recs)
    assert rep.group_test_rmae[0] is None


def test_report_json_roundtrip(small_report):
    _, recs, rep = small_report
    text = canonical_json(rep.to_dict())
    back = FitReport.from_dict(load_json(text))
    assert canonical_json(back.to_dict()) == text
    assert np.array_equal(predict(back, recs).values, predict(rep, recs).values)
    json.loads(text)


def test_fit_is_deterministic(small_report):
    _, recs, rep = small_report
    again = fit_full(recs, FitConfig(k=2, seed=1, gd=QUICK, refit_iters=2, retry_cap=2))
    assert canonical_json(again.to_dict()) == canonical_json(rep.to_dict())


def test_evaluate_reports_three_models(small_report):
    gt, _, rep = small_report
    fresh = generate_cohort(gt, 10, 99, id_prefix="H")
    comp = evaluate(rep, fresh)
    assert set(comp.rmae) == {MODEL_PERSONALIZED, MODEL_POOLED, MODEL_ORIGINAL}
    assert comp.n == 10 and len(comp.tests) == 3
    for t in comp.tests.values():
        assert 0.0 <= t["p"] <= 1.0
    lines = comp.table().splitlines()
    assert lines[0] == "model,rmae,sd" and "better,worse,t,p" in lines


def test_evaluate_needs_baselines():
    _, recs = _two_group_cohort(12, 6)
    rep = fit_full(recs, FitConfig(k=2, gd=QUICK, augment=False, baselines=False))
    with pytest.raises(DomainError):
        evaluate(rep, recs)


def test_group_error_table_layout(small_report):
    _, _, rep = small_report
    lines = group_error_table(rep).splitlines()
    assert len(lines) == 13
    assert lines[0].split(",")[:3] == ["age_band", "gender", "non-smoker/underweight"]
    assert all(len(line.split(",")) == 8 for line in lines)
    assert sum(line.count("NA") for line in lines[1:]) == 72 - sum(1 for n in rep.group_test_counts if n)


def test_recovered_rates_is_geometric_fold_mean():
    t1, t2 = ThetaTable.uniform(BASE), ThetaTable.uniform(BASE * 4)
    f1, f2 = _fold(0, Identity()), _fold(1, Identity())
    f1.theta, f2.theta = t1, t2
    rep = FitReport([f1, f2], 2, 0, 0, FitContext())
    assert np.allclose(recovered_rates(rep), BASE * 2, rtol=1e-14)


def test_fold_errors_name_the_fold():
    _, recs = _two_group_cohort(12, 7)
    with pytest.raises(DomainError, match="fold 0"):
        fit_full(recs, FitConfig(k=2, gd=QUICK, candidates=("bogus",), baselines=False, retry_cap=1,
                                 refit_iters=1))


def test_config_validation():
    for bad in (dict(k=1), dict(significance=0.0), dict(retry_cap=0), dict(n_synthetic=-1), dict(candidates=())):
        with pytest.raises(DomainError):
            FitConfig(**bad)


def test_ground_truth_roundtrip():
    gt = sample_ground_truth(2, 0.5, noise=0.1)
    back = GroundTruth.from_dict(load_json(canonical_json(gt.to_dict())))
    assert np.array_equal(back.theta.rates, gt.theta.rates)
    assert back.noise == 0.1

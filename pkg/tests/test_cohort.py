import math

import numpy as np
import pytest

from bcgmodel.cohort import (
    AGE_WEIGHTS,
    GEN_SOLVER,
    GENDER_WEIGHTS,
    SMOKING_WEIGHTS,
    WEIGHT_WEIGHTS,
    GroundTruth,
    _draw_profile,
    default_mixture,
    generate_cohort,
    sample_ground_truth,
    uniform_mixture,
)
from bcgmodel.demographics import AGE_BANDS, classify
from bcgmodel.errors import DomainError
from bcgmodel.fitting.gd import FitContext, simulate_outcomes
from bcgmodel.model import BASE_RATES, RATE_NAMES

BASE = np.array([BASE_RATES[n] for n in RATE_NAMES])


def test_zero_spread_gives_base_rates():
    gt = sample_ground_truth(1, 0.0)
    assert np.array_equal(gt.theta.rates, np.broadcast_to(BASE, (72, 12)))


def test_spread_bounds_every_rate():
    gt = sample_ground_truth(4, 0.5)
    ratio = np.log(gt.theta.rates / BASE)
    assert np.all(np.abs(ratio) <= 0.5 + 1e-12)
    assert ratio.std() > 0.2
    assert len({tuple(r) for r in gt.theta.rates}) == 72


def test_truth_depends_only_on_seed():
    assert np.array_equal(sample_ground_truth(9, 0.5).theta.rates, sample_ground_truth(9, 0.5).theta.rates)
    assert not np.array_equal(sample_ground_truth(9, 0.5).theta.rates, sample_ground_truth(10, 0.5).theta.rates)


def test_mixtures_are_normalized():
    for w in (default_mixture(), uniform_mixture()):
        assert w.shape == (72,) and math.isclose(w.sum(), 1.0) and np.all(w > 0)


def test_profile_marginals_match_weights():
    gt = GroundTruth(theta=sample_ground_truth(1, 0.0).theta)
    rng = np.random.default_rng(2024)
    n = 10_000
    draws = [_draw_profile(gt, rng) for _ in range(n)]
    for attr, weights in (("age_band", AGE_WEIGHTS), ("gender", GENDER_WEIGHTS),
                          ("smoking", SMOKING_WEIGHTS), ("weight_class", WEIGHT_WEIGHTS)):
        counts = np.bincount([int(getattr(g, attr)) for _, g in draws], minlength=len(weights))
        w = np.asarray(weights)
        sd = np.sqrt(w * (1 - w) / n)
        assert np.all(np.abs(counts / n - w) <= 4.5 * sd), attr
    for prof, gid in draws[:500]:
        assert classify(prof) == gid
        lo, hi = AGE_BANDS[gid.age_band]
        assert lo <= prof.age_years <= (85 if hi is None else hi)
        assert 1.0 <= prof.initial_tumor_volume <= 200.0


def test_cohort_size_and_ids():
    gt = sample_ground_truth(1, 0.5)
    recs = generate_cohort(gt, 417, 7)
    assert len(recs) == 417
    assert len({r.patient_id for r in recs}) == 417
    assert recs[0].patient_id == "P0000"


def test_noiseless_outcomes_are_model_outcomes():
    gt = sample_ground_truth(3, 0.5)
    recs = generate_cohort(gt, 40, 5)
    model = simulate_outcomes(gt.theta, recs, FitContext(gt.effector0, gt.mu_B, GEN_SOLVER))
    assert [r.final_cells for r in recs] == [float(round(m)) for m in model]


def test_noise_is_lognormal_with_requested_scale():
    gt_clean = sample_ground_truth(3, 0.5)
    gt_noisy = sample_ground_truth(3, 0.5, noise=0.15)
    a = generate_cohort(gt_clean, 300, 8)
    b = generate_cohort(gt_noisy, 300, 8)
    assert [r.profile.initial_tumor_volume for r in a] == [r.profile.initial_tumor_volume for r in b]
    ratio = np.array([np.log(y.final_cells / x.final_cells) for x, y in zip(a, b) if x.final_cells > 1e3])
    assert len(ratio) > 100
    assert abs(ratio.std() - 0.15) < 0.03 and abs(ratio.mean()) < 0.03


def test_cohort_is_reproducible():
    gt = sample_ground_truth(3, 0.5)
    assert generate_cohort(gt, 25, 1) == generate_cohort(gt, 25, 1)
    assert generate_cohort(gt, 25, 1) != generate_cohort(gt, 25, 2)


def test_prefix_of_a_larger_cohort_is_stable():
    gt = sample_ground_truth(3, 0.5)
    assert generate_cohort(gt, 30, 4)[:10] == generate_cohort(gt, 10, 4)


def test_invalid_ground_truth():
    theta = sample_ground_truth(1, 0.0).theta
    with pytest.raises(DomainError):
        GroundTruth(theta=theta, weights=np.ones(72))
    with pytest.raises(DomainError):
        GroundTruth(theta=theta, volume_range=(5.0, 1.0))
    with pytest.raises(DomainError):
        GroundTruth(theta=theta, noise=-0.1)
    with pytest.raises(DomainError):
        sample_ground_truth(1, -0.5)
    with pytest.raises(DomainError):
        generate_cohort(GroundTruth(theta=theta), 0, 1)

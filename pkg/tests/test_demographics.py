import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bcgmodel.demographics import (
    AGE_BANDS,
    CapacityCalibration,
    Gender,
    GroupId,
    N_GROUPS,
    PatientProfile,
    Smoking,
    WeightClass,
    bladder_capacity,
    classify,
    enumerate_groups,
    volume_to_cells,
)
from bcgmodel.errors import ConfigError, DomainError


def prof(age, g="male", s="smoker", w="normal", v=1.0):
    return PatientProfile(age, g, s, w, v)


def test_classify_examples():
    gid = classify(prof(30, "male", "smoker", "normal"))
    assert (gid.age_band, gid.gender, gid.smoking, gid.weight_class) == (1, Gender.MALE, Smoking.SMOKER,
                                                                        WeightClass.NORMAL)
    gid = classify(prof(19, "female", "non-smoker", "underweight"))
    assert gid.age_band == 0 and gid.index == ((0 * 2 + 1) * 2 + 0) * 3 + 0


def test_minor_rejected():
    with pytest.raises(DomainError):
        prof(18)


@pytest.mark.parametrize("band", range(len(AGE_BANDS)))
def test_band_boundaries_inclusive(band):
    lo, hi = AGE_BANDS[band]
    assert classify(prof(lo)).age_band == band
    if hi is not None:
        assert classify(prof(hi)).age_band == band
        assert classify(prof(hi + 1)).age_band == band + 1
    else:
        assert classify(prof(110)).age_band == band


def test_enumerate_groups():
    groups = enumerate_groups()
    assert len(groups) == 6 * 2 * 2 * 3 == 72 == N_GROUPS
    assert len(set(groups)) == 72
    assert groups[0].index == 0
    assert [g.index for g in groups] == list(range(72))
    for i in range(72):
        assert GroupId.from_index(i).index == i


def test_every_group_reachable():
    seen = set()
    for lo, _ in AGE_BANDS:
        for g in Gender:
            for s in Smoking:
                for w in WeightClass:
                    seen.add(classify(PatientProfile(lo, g, s, w, 1.0)).index)
    assert seen == set(range(72))


def test_dense_index_formula():
    for g in enumerate_groups():
        assert g.index == ((g.age_band * 2 + int(g.gender)) * 2 + int(g.smoking)) * 3 + int(g.weight_class)


def test_capacity_reference_adult():
    assert bladder_capacity(prof(45, w="normal")) == 1.84e9


def test_capacity_constant_without_slopes():
    c = CapacityCalibration(c0=1.5e9, c_age=0.0, c_weight=0.0)
    vals = {bladder_capacity(prof(a, w=w), c) for a in (19, 45, 80) for w in ("underweight", "overweight")}
    assert vals == {1.5e9}


def test_capacity_nonpositive_is_config_error():
    with pytest.raises(ConfigError):
        bladder_capacity(prof(80), CapacityCalibration(c0=1.0, c_age=-1e9))


def test_capacity_mean_over_uniform_cohort():
    # Ages are uniform over a window symmetric about the reference age and
    # weight classes balanced, so the Monte-Carlo mean should be c0.
    rng = np.random.default_rng(4)
    ages = rng.integers(25, 66, 20000)
    ws = rng.integers(0, 3, 20000)
    caps = [bladder_capacity(PatientProfile(int(a), "male", "smoker", WeightClass(int(w)), 1.0))
            for a, w in zip(ages, ws)]
    assert abs(np.mean(caps) / 1.84e9 - 1.0) < 0.01


def test_volume_to_cells_examples():
    assert volume_to_cells(2e-6, 2e-6) == 1
    assert volume_to_cells(100.0, 2e-6) == 100.0 / 2e-6 == 5e7
    assert volume_to_cells(0.0) == 0
    with pytest.raises(DomainError):
        volume_to_cells(1.0, 0.0)


@given(st.floats(min_value=0, max_value=1e4), st.floats(min_value=0, max_value=1e4))
def test_volume_to_cells_monotone(a, b):
    lo, hi = sorted((a, b))
    assert volume_to_cells(lo) <= volume_to_cells(hi)


@given(st.integers(19, 120))
def test_classify_total(age):
    assert 0 <= classify(prof(age)).index < 72


def test_attribute_parsing():
    p = PatientProfile(40, "F", "non_smoker", "over-weight", 1.0)
    assert p.gender is Gender.FEMALE and p.smoking is Smoking.NON_SMOKER and p.weight_class is WeightClass.OVERWEIGHT
    with pytest.raises(DomainError):
        PatientProfile(40, "unknown", "smoker", "normal", 1.0)
    with pytest.raises(DomainError):
        PatientProfile(40, "male", "smoker", "normal", 0.0)

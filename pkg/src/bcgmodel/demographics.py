"""Socio-demographic groups and patient-specific constants.

Patients fall into one of 72 disjoint groups: six age bands, two genders,
two smoking statuses and three weight classes. The dense index is
``((age_band * 2 + gender) * 2 + smoking) * 3 + weight_class``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

from .errors import ConfigError, DomainError

# Inclusive age ranges; the last band is open-ended.
AGE_BANDS = ((19, 25), (26, 35), (36, 45), (46, 55), (56, 65), (66, None))
AGE_LABELS = ("19-25", "26-35", "36-45", "46-55", "56-65", "66+")
MIN_AGE = 19


class Gender(IntEnum):
    MALE = 0
    FEMALE = 1

    @property
    def label(self) -> str:
        return self.name.lower()


class Smoking(IntEnum):
    NON_SMOKER = 0
    SMOKER = 1

    @property
    def label(self) -> str:
        return "smoker" if self is Smoking.SMOKER else "non-smoker"


class WeightClass(IntEnum):
    UNDERWEIGHT = 0
    NORMAL = 1
    OVERWEIGHT = 2

    @property
    def label(self) -> str:
        return self.name.lower()


N_GROUPS = len(AGE_BANDS) * len(Gender) * len(Smoking) * len(WeightClass)


def parse_gender(value) -> Gender:
    if isinstance(value, Gender):
        return value
    key = str(value).strip().lower()
    table = {"male": Gender.MALE, "m": Gender.MALE, "female": Gender.FEMALE, "f": Gender.FEMALE}
    if key not in table:
        raise DomainError(f"unknown gender {value!r}")
    return table[key]


def parse_smoking(value) -> Smoking:
    if isinstance(value, Smoking):
        return value
    key = str(value).strip().lower().replace("_", "-")
    table = {"smoker": Smoking.SMOKER, "non-smoker": Smoking.NON_SMOKER, "nonsmoker": Smoking.NON_SMOKER}
    if key not in table:
        raise DomainError(f"unknown smoking status {value!r}")
    return table[key]


def parse_weight(value) -> WeightClass:
    if isinstance(value, WeightClass):
        return value
    key = str(value).strip().lower().replace("_", "").replace("-", "").replace(" ", "")
    table = {
        "underweight": WeightClass.UNDERWEIGHT,
        "normal": WeightClass.NORMAL,
        "normalweight": WeightClass.NORMAL,
        "overweight": WeightClass.OVERWEIGHT,
    }
    if key not in table:
        raise DomainError(f"unknown weight class {value!r}")
    return table[key]


def age_band(age: int) -> int:
    if age < MIN_AGE:
        raise DomainError(f"patients must be adults (age >= {MIN_AGE}), got {age}")
    for i, (lo, hi) in enumerate(AGE_BANDS):
        if hi is None or lo <= age <= hi:
            return i
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class PatientProfile:
    """Socio-demographics and measured tumor volumes [mm^3] of one patient."""

    age_years: int
    gender: Gender
    smoking: Smoking
    weight_class: WeightClass
    initial_tumor_volume: float
    final_tumor_volume: float = 0.0

    def __post_init__(self):
        if int(self.age_years) != self.age_years:
            raise DomainError(f"age must be an integer, got {self.age_years!r}")
        object.__setattr__(self, "age_years", int(self.age_years))
        if self.age_years < MIN_AGE:
            raise DomainError(f"patients must be adults (age >= {MIN_AGE}), got {self.age_years}")
        object.__setattr__(self, "gender", parse_gender(self.gender))
        object.__setattr__(self, "smoking", parse_smoking(self.smoking))
        object.__setattr__(self, "weight_class", parse_weight(self.weight_class))
        v0, v1 = float(self.initial_tumor_volume), float(self.final_tumor_volume)
        if not (math.isfinite(v0) and v0 > 0):
            raise DomainError(f"initial tumor volume must be finite and > 0, got {v0!r}")
        if not (math.isfinite(v1) and v1 >= 0):
            raise DomainError(f"final tumor volume must be finite and >= 0, got {v1!r}")
        object.__setattr__(self, "initial_tumor_volume", v0)
        object.__setattr__(self, "final_tumor_volume", v1)


@dataclass(frozen=True, order=True)
class GroupId:
    """One cell of the age x gender x smoking x weight grid."""

    age_band: int
    gender: Gender
    smoking: Smoking
    weight_class: WeightClass

    def __post_init__(self):
        if not 0 <= self.age_band < len(AGE_BANDS):
            raise DomainError(f"age band index out of range: {self.age_band}")
        object.__setattr__(self, "gender", Gender(self.gender))
        object.__setattr__(self, "smoking", Smoking(self.smoking))
        object.__setattr__(self, "weight_class", WeightClass(self.weight_class))

    @property
    def index(self) -> int:
        return ((self.age_band * 2 + self.gender) * 2 + self.smoking) * 3 + self.weight_class

    @classmethod
    def from_index(cls, index: int) -> "GroupId":
        if not 0 <= index < N_GROUPS:
            raise DomainError(f"group index out of range: {index}")
        index, w = divmod(index, 3)
        index, s = divmod(index, 2)
        a, g = divmod(index, 2)
        return cls(a, Gender(g), Smoking(s), WeightClass(w))

    @property
    def label(self) -> str:
        return "/".join((AGE_LABELS[self.age_band], self.gender.label, self.smoking.label,
                         self.weight_class.label))


def classify(profile: PatientProfile) -> GroupId:
    return GroupId(age_band(profile.age_years), profile.gender, profile.smoking, profile.weight_class)


def enumerate_groups() -> list[GroupId]:
    return [GroupId.from_index(i) for i in range(N_GROUPS)]


@dataclass(frozen=True)
class CapacityCalibration:
    """Affine bladder-capacity model ``c0 + c_age*(age-ref)/10 + c_weight*(w-1)``.

    The weight factor is -1, 0, +1 for under-, normal and overweight. The
    defaults reproduce the Table 1 average of 1.84e9 cells for a normal-weight
    45-year-old; the slopes are assumptions, not published values.
    """

    c0: float = 1.84e9
    c_age: float = 1.5e7
    c_weight: float = 1.2e8
    age_ref: float = 45.0

    def __post_init__(self):
        for name in ("c0", "c_age", "c_weight", "age_ref"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"capacity calibration {name} must be finite")


def bladder_capacity(profile: PatientProfile, calib: CapacityCalibration | None = None) -> float:
    """Healthy-cell capacity ``H_m`` of the patient's bladder."""
    calib = calib or CapacityCalibration()
    age_factor = (profile.age_years - calib.age_ref) / 10.0
    weight_factor = float(int(profile.weight_class) - 1)
    value = calib.c0 + calib.c_age * age_factor + calib.c_weight * weight_factor
    if not value > 0:
        raise ConfigError(f"capacity calibration gives non-positive H_m ({value!r}) for {profile}")
    return float(value)


# Mean bladder-cancer cell volume [mm^3]; an assumed constant, override via config.
CELL_VOLUME_MM3 = 2e-6


def volume_to_cells(volume_mm3: float, cell_volume_mm3: float = CELL_VOLUME_MM3) -> float:
    """Cell count of a polyp, ``round(volume / cell_volume)``."""
    if not (math.isfinite(cell_volume_mm3) and cell_volume_mm3 > 0):
        raise DomainError(f"cell volume must be > 0, got {cell_volume_mm3!r}")
    if not (math.isfinite(volume_mm3) and volume_mm3 >= 0):
        raise DomainError(f"volume must be finite and >= 0, got {volume_mm3!r}")
    return float(round(volume_mm3 / cell_volume_mm3))


def cells_to_volume(cells: float, cell_volume_mm3: float = CELL_VOLUME_MM3) -> float:
    return float(cells) * cell_volume_mm3

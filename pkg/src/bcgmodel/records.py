"""Patient records: a profile plus the derived quantities the model needs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .demographics import (
    CELL_VOLUME_MM3,
    CapacityCalibration,
    GroupId,
    PatientProfile,
    bladder_capacity,
    classify,
    volume_to_cells,
)
from .errors import DomainError
from .model import TreatmentProtocol

# Observation time after the last dose, in units of the dose interval.
FOLLOW_UP_INTERVALS = 2.0


def treatment_end(protocol: TreatmentProtocol, follow_up_intervals: float = FOLLOW_UP_INTERVALS) -> float:
    """``t_f = (N - 1) tau + follow_up * tau``."""
    return protocol.last_dose_time + follow_up_intervals * protocol.interval


@dataclass(frozen=True)
class PatientRecord:
    """One patient as seen by the fitting procedure.

    ``initial_cells`` and ``final_cells`` are ``T_i + T_u`` at the start and
    at ``t_f``; ``capacity`` is the patient's ``H_m``.
    """

    patient_id: str
    profile: PatientProfile
    initial_cells: float
    final_cells: float
    capacity: float
    t_f: float
    protocol: TreatmentProtocol = field(default_factory=TreatmentProtocol)
    row: int | None = field(default=None, compare=False)
    synthetic: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not self.initial_cells > 0:
            raise DomainError(f"{self.patient_id}: initial tumor must be > 0 cells")
        if not (math.isfinite(self.final_cells) and self.final_cells >= 0):
            raise DomainError(f"{self.patient_id}: final tumor must be finite and >= 0")
        if not self.t_f > 0:
            raise DomainError(f"{self.patient_id}: t_f must be > 0")
        if not self.initial_cells < self.capacity:
            raise DomainError(f"{self.patient_id}: tumor exceeds bladder capacity")

    @property
    def group(self) -> GroupId:
        return classify(self.profile)

    def features(self) -> np.ndarray:
        """``(age band, gender, smoking, weight class, log10 T(0))``."""
        g = self.group
        return np.array([g.age_band, int(g.gender), int(g.smoking), int(g.weight_class),
                         math.log10(self.initial_cells)], dtype=float)


def make_record(
    patient_id: str,
    profile: PatientProfile,
    protocol: TreatmentProtocol | None = None,
    calib: CapacityCalibration | None = None,
    cell_volume: float = CELL_VOLUME_MM3,
    follow_up_intervals: float = FOLLOW_UP_INTERVALS,
    row: int | None = None,
) -> PatientRecord:
    """Derive cell counts, capacity and ``t_f`` from a profile."""
    protocol = protocol or TreatmentProtocol()
    return PatientRecord(
        patient_id=str(patient_id),
        profile=profile,
        initial_cells=volume_to_cells(profile.initial_tumor_volume, cell_volume),
        final_cells=volume_to_cells(profile.final_tumor_volume, cell_volume),
        capacity=bladder_capacity(profile, calib),
        t_f=treatment_end(protocol, follow_up_intervals),
        protocol=protocol,
        row=row,
    )


def feature_matrix(records) -> np.ndarray:
    if not records:
        return np.zeros((0, 5))
    return np.array([r.features() for r in records])


def outcomes(records) -> np.ndarray:
    return np.array([r.final_cells for r in records], dtype=float)

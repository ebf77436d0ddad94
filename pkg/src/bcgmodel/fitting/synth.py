"""Synthetic augmentation of a training set, gated by a kNN comparison.

Candidates are drawn uniformly inside the per-feature min/max box of the
real training records: integer age in years, each categorical attribute over
its observed index range, and ``log10 T(0)``. A candidate's outcome label is
the kNN prediction from the real records. It is kept when the fitted ODE
model lands within the kNN's own mean leave-one-out absolute error of that
label, i.e. when model and kNN agree about as well as kNN agrees with data.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..demographics import (
    CELL_VOLUME_MM3,
    CapacityCalibration,
    Gender,
    PatientProfile,
    Smoking,
    WeightClass,
    bladder_capacity,
    cells_to_volume,
)
from ..errors import DomainError
from ..records import PatientRecord, feature_matrix, outcomes
from .gd import FitContext, ThetaTable, simulate_outcomes
from .knn import DEFAULT_K_GRID, KNNRegressor, choose_k

ATTEMPTS_PER_SAMPLE = 100


@dataclass
class SynthesisResult:
    records: list[PatientRecord]
    attempts: int
    k: int
    threshold: float
    capped: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def acceptance_rate(self) -> float:
        return len(self.records) / self.attempts if self.attempts else float("nan")

    def summary(self) -> dict:
        return {"accepted": len(self.records), "attempts": self.attempts, "k": self.k,
                "threshold": self.threshold, "capped": self.capped, "notes": list(self.notes)}


def _modal_protocol(records):
    # Most frequent (protocol, t_f) pair; first appearance wins ties.
    counts = Counter((r.protocol, r.t_f) for r in records)
    best = max(counts.values())
    for r in records:
        if counts[(r.protocol, r.t_f)] == best:
            return r.protocol, r.t_f
    raise AssertionError("unreachable")


def synthesize_samples(
    train,
    theta: ThetaTable,
    n: int,
    seed: int,
    ctx: FitContext | None = None,
    k_grid=DEFAULT_K_GRID,
    calibration: CapacityCalibration | None = None,
    cell_volume: float = CELL_VOLUME_MM3,
    model_predictor: Callable | None = None,
    batch: int = 64,
) -> SynthesisResult:
    """Draw up to ``n`` accepted synthetic records.

    ``model_predictor(records) -> outcomes`` replaces the ODE prediction in
    the gate; by default the records are simulated under ``theta``. At most
    ``100 * n`` candidates are examined; hitting that cap returns what was
    accepted with ``capped`` set.
    """
    train = [r for r in train if not r.synthetic]
    if not train:
        raise DomainError("synthesis needs a non-empty real training set")
    if n < 0:
        raise DomainError(f"number of synthetic samples must be >= 0, got {n}")
    ctx = ctx or FitContext()
    calibration = calibration or CapacityCalibration()
    knn = KNNRegressor.fit(feature_matrix(train), outcomes(train))
    if len(train) >= 2:
        choice = choose_k(knn, k_grid)
        k, threshold = choice.k, choice.loo_error
    else:
        k, threshold = 1, 0.0
    if n == 0:
        return SynthesisResult([], 0, k, threshold)
    predictor = model_predictor or (lambda recs: simulate_outcomes(theta, recs, ctx))

    ages = np.array([r.profile.age_years for r in train])
    cats = np.array([[int(r.profile.gender), int(r.profile.smoking), int(r.profile.weight_class)]
                     for r in train])
    cells = np.array([r.initial_cells for r in train])
    lo_c, hi_c = cells.min(), cells.max()
    protocol, t_f = _modal_protocol(train)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    cap = ATTEMPTS_PER_SAMPLE * n

    accepted: list[PatientRecord] = []
    attempts = 0
    serial = 0
    while len(accepted) < n and attempts < cap:
        m = min(batch, cap - attempts)
        age = rng.integers(ages.min(), ages.max() + 1, size=m)
        cat = np.column_stack([rng.integers(cats[:, c].min(), cats[:, c].max() + 1, size=m)
                               for c in range(3)])
        u = rng.uniform(math.log10(lo_c), math.log10(hi_c), size=m)
        t0 = np.clip(np.round(10.0 ** u), lo_c, hi_c)
        cands = []
        for i in range(m):
            prof = PatientProfile(int(age[i]), Gender(cat[i, 0]), Smoking(cat[i, 1]), WeightClass(cat[i, 2]),
                                  cells_to_volume(t0[i], cell_volume), 0.0)
            cands.append(PatientRecord(f"S{serial + i}", prof, float(t0[i]), 0.0,
                                       bladder_capacity(prof, calibration), t_f, protocol, synthetic=True))
        serial += m
        labels = knn.predict(feature_matrix(cands), k)
        model = np.asarray(predictor(cands), dtype=float)
        for rec, lab, mod in zip(cands, labels, model):
            if len(accepted) >= n:
                break
            attempts += 1
            if math.isfinite(mod) and abs(mod - lab) <= threshold:
                prof = PatientProfile(rec.profile.age_years, rec.profile.gender, rec.profile.smoking,
                                      rec.profile.weight_class, rec.profile.initial_tumor_volume,
                                      cells_to_volume(lab, cell_volume))
                accepted.append(PatientRecord(f"S{len(accepted)}", prof, rec.initial_cells, float(lab),
                                              rec.capacity, t_f, protocol, synthetic=True))
    res = SynthesisResult(accepted, attempts, k, threshold)
    if len(accepted) < n:
        res.capped = True
        res.notes.append(f"attempt cap {cap} reached with {len(accepted)} of {n} samples accepted")
    return res

"""Synthetic patient cohorts drawn from known per-group parameters.

Used in place of clinical data. Ground-truth outcomes come from the
six-population model, optionally perturbed by multiplicative log-normal noise.
Every record is drawn from its own ``(seed, index)`` stream, so a cohort is
reproducible regardless of how it is generated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .demographics import (
    AGE_BANDS,
    CELL_VOLUME_MM3,
    N_GROUPS,
    CapacityCalibration,
    GroupId,
    PatientProfile,
    cells_to_volume,
    volume_to_cells,
)
from .errors import DomainError, NumericalError
from .fitting.gd import FitContext, ParameterBounds, RecordArrays, ThetaTable
from .model import BASE_RATES, EFFECTOR0, MU_B, RATE_NAMES, TreatmentProtocol
from .records import FOLLOW_UP_INTERVALS, PatientRecord, make_record
from .solver import SolverConfig

# Marginals of the default mixture: bladder cancer is mostly diagnosed in
# older, male, smoking patients. Illustrative, not calibrated to any registry.
AGE_WEIGHTS = (0.02, 0.04, 0.09, 0.17, 0.30, 0.38)
GENDER_WEIGHTS = (0.78, 0.22)
SMOKING_WEIGHTS = (0.40, 0.60)
WEIGHT_WEIGHTS = (0.06, 0.42, 0.52)

MAX_AGE = 85
MAX_RESAMPLES = 10
GEN_SOLVER = SolverConfig(rtol=1e-8, atol=1e-6)


def default_mixture() -> np.ndarray:
    w = np.empty(N_GROUPS)
    for g in range(N_GROUPS):
        gid = GroupId.from_index(g)
        w[g] = (AGE_WEIGHTS[gid.age_band] * GENDER_WEIGHTS[gid.gender]
                * SMOKING_WEIGHTS[gid.smoking] * WEIGHT_WEIGHTS[gid.weight_class])
    return w / w.sum()


def uniform_mixture() -> np.ndarray:
    return np.full(N_GROUPS, 1.0 / N_GROUPS)


@dataclass
class GroundTruth:
    """Known per-group rates plus the distributions a cohort is drawn from."""

    theta: ThetaTable
    weights: np.ndarray = field(default_factory=default_mixture)
    volume_range: tuple[float, float] = (1.0, 200.0)
    noise: float = 0.0
    protocol: TreatmentProtocol = field(default_factory=TreatmentProtocol)
    calibration: CapacityCalibration = field(default_factory=CapacityCalibration)
    cell_volume: float = CELL_VOLUME_MM3
    effector0: float = EFFECTOR0
    mu_B: float = MU_B
    follow_up: float = FOLLOW_UP_INTERVALS
    max_age: int = MAX_AGE

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (N_GROUPS,) or np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-9):
            raise DomainError("mixture weights must be 72 non-negative values summing to 1")
        self.weights = w
        lo, hi = self.volume_range
        if not 0 < lo <= hi:
            raise DomainError(f"invalid volume range {self.volume_range!r}")
        if not self.noise >= 0:
            raise DomainError(f"noise level must be >= 0, got {self.noise!r}")

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.to_dict(),
            "weights": self.weights.tolist(),
            "volume_range": list(self.volume_range),
            "noise": self.noise,
            "protocol": {"dose": self.protocol.dose, "injections": self.protocol.injections,
                         "interval": self.protocol.interval},
            "calibration": {"c0": self.calibration.c0, "c_age": self.calibration.c_age,
                            "c_weight": self.calibration.c_weight, "age_ref": self.calibration.age_ref},
            "cell_volume": self.cell_volume,
            "effector0": self.effector0,
            "mu_B": self.mu_B,
            "follow_up": self.follow_up,
            "max_age": self.max_age,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            theta=ThetaTable.from_dict(d["theta"]),
            weights=np.array(d["weights"], dtype=float),
            volume_range=tuple(d["volume_range"]),
            noise=float(d["noise"]),
            protocol=TreatmentProtocol(**d["protocol"]),
            calibration=CapacityCalibration(**d["calibration"]),
            cell_volume=float(d["cell_volume"]),
            effector0=float(d["effector0"]),
            mu_B=float(d["mu_B"]),
            follow_up=float(d["follow_up"]),
            max_age=int(d["max_age"]),
        )


def sample_ground_truth(
    seed: int,
    spread: float,
    base: dict | None = None,
    bounds: ParameterBounds | None = None,
    **kwargs,
) -> GroundTruth:
    """Per-group rates ``base * exp(U(-spread, spread))``, clipped to ``bounds``.

    Extra keyword arguments are passed to :class:`GroundTruth`.
    """
    if not spread >= 0:
        raise DomainError(f"spread must be >= 0, got {spread!r}")
    base = base or BASE_RATES
    bounds = bounds or ParameterBounds.around(base)
    b = np.array([base[n] for n in RATE_NAMES], dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6774]))
    u = rng.uniform(-spread, spread, size=(N_GROUPS, len(RATE_NAMES))) if spread > 0 else 0.0
    rates = np.clip(b * np.exp(u), bounds.lower, bounds.upper)
    return GroundTruth(theta=ThetaTable(np.broadcast_to(rates, (N_GROUPS, len(RATE_NAMES))).copy()), **kwargs)


def _draw_profile(gt: GroundTruth, rng) -> tuple[PatientProfile, GroupId]:
    g = int(rng.choice(N_GROUPS, p=gt.weights))
    gid = GroupId.from_index(g)
    lo, hi = AGE_BANDS[gid.age_band]
    age = int(rng.integers(lo, (gt.max_age if hi is None else hi) + 1))
    while True:
        vol = float(math.exp(rng.uniform(math.log(gt.volume_range[0]), math.log(gt.volume_range[1]))))
        if volume_to_cells(vol, gt.cell_volume) >= 1:
            break
    prof = PatientProfile(age, gid.gender, gid.smoking, gid.weight_class, vol, 0.0)
    return prof, gid


def generate_cohort(gt: GroundTruth, size: int, seed: int, id_prefix: str = "P") -> list[PatientRecord]:
    """Draw ``size`` patients and their noisy simulated outcomes.

    Outcomes are rounded to whole cells, so with ``noise == 0`` each record's
    ``final_cells`` is the model outcome rounded to the nearest cell.
    """
    if size < 1:
        raise DomainError(f"cohort size must be >= 1, got {size}")
    ctx = FitContext(effector0=gt.effector0, mu_B=gt.mu_B, solver=GEN_SOLVER)
    width = max(4, len(str(size - 1)))
    drafts: list[PatientRecord | None] = [None] * size
    rngs = [np.random.default_rng(np.random.SeedSequence([int(seed), i])) for i in range(size)]
    pending = list(range(size))
    for attempt in range(MAX_RESAMPLES):
        if not pending:
            break
        recs = []
        for i in pending:
            prof, _ = _draw_profile(gt, rngs[i])
            recs.append(make_record(f"{id_prefix}{i:0{width}d}", prof, gt.protocol, gt.calibration,
                                    gt.cell_volume, gt.follow_up))
        arr = RecordArrays(recs, ctx)
        rates = np.array([gt.theta.rates_for(r) for r in recs])
        model = arr.simulate(rates, np.arange(len(recs)))
        still = []
        for i, rec, m in zip(pending, recs, model):
            if not math.isfinite(m):
                still.append(i)
                continue
            eps = rngs[i].standard_normal()
            value = max(m, 0.0) * (math.exp(gt.noise * eps) if gt.noise > 0 else 1.0)
            cells = float(round(value))
            prof = PatientProfile(rec.profile.age_years, rec.profile.gender, rec.profile.smoking,
                                  rec.profile.weight_class, rec.profile.initial_tumor_volume,
                                  cells_to_volume(cells, gt.cell_volume))
            drafts[i] = make_record(rec.patient_id, prof, gt.protocol, gt.calibration,
                                    gt.cell_volume, gt.follow_up)
        pending = still
    if pending:
        raise NumericalError(f"could not simulate {len(pending)} records after {MAX_RESAMPLES} draws")
    return [r for r in drafts if r is not None]

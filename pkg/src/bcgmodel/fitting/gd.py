"""Per-group parameter fitting of the ODE model by projected gradient descent.

Rates are optimized in log space inside a box ``[base / f, base * f]``; the
starting point is the geometric midpoint of the box. Each group's loss is the
RMAE over that group's training patients only, so groups are independent
problems and are advanced together by :func:`optim.projected_gd`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..demographics import N_GROUPS
from ..errors import DomainError, NumericalError
from ..model import (
    BASE_RATES,
    EFFECTOR0,
    MU_B,
    ORIGINAL4_RATES,
    RATE_NAMES,
    ParameterSet,
)
from ..records import PatientRecord
from ..solver import SolverConfig, final_tumor_many
from .optim import projected_gd
from .stats import EPS_FLOOR

N_RATES = len(RATE_NAMES)

FIT_SOLVER = SolverConfig(rtol=1e-6, atol=1e-3)


@dataclass(frozen=True)
class FitContext:
    """Everything besides the rates that a simulated outcome depends on."""

    effector0: float = EFFECTOR0
    mu_B: float = MU_B
    solver: SolverConfig = FIT_SOLVER
    model: str = "bcg6"

    @property
    def active(self) -> np.ndarray:
        if self.model == "original4":
            return np.array([n in ORIGINAL4_RATES for n in RATE_NAMES])
        return np.ones(N_RATES, dtype=bool)


@dataclass(frozen=True)
class ParameterBounds:
    """Box on the 12 rates; optimisation happens on ``log`` of these."""

    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def around(cls, base: dict | None = None, factor: float = 10.0) -> "ParameterBounds":
        base = base or BASE_RATES
        b = np.array([base[n] for n in RATE_NAMES], dtype=float)
        if factor <= 1 or np.any(b <= 0):
            raise DomainError("bounds need factor > 1 and positive base rates")
        return cls(b / factor, b * factor)

    @property
    def log_lower(self) -> np.ndarray:
        return np.log(self.lower)

    @property
    def log_upper(self) -> np.ndarray:
        return np.log(self.upper)

    def midpoint(self) -> np.ndarray:
        return np.sqrt(self.lower * self.upper)

    def contains(self, rates) -> bool:
        r = np.asarray(rates)
        tol = 1e-12
        return bool(np.all(r >= self.lower * (1 - tol)) and np.all(r <= self.upper * (1 + tol)))


@dataclass
class ThetaTable:
    """Rates per group. ``pooled`` tables have a single shared row."""

    rates: np.ndarray
    status: list[str] = field(default_factory=list)
    pooled: bool = False

    def __post_init__(self):
        self.rates = np.array(self.rates, dtype=float, ndmin=2)
        if self.rates.shape[1] != N_RATES:
            raise DomainError(f"rate table must have {N_RATES} columns")
        if not self.status:
            self.status = ["initial"] * len(self.rates)

    @classmethod
    def uniform(cls, rates, pooled: bool = False) -> "ThetaTable":
        n = 1 if pooled else N_GROUPS
        return cls(np.tile(np.asarray(rates, dtype=float), (n, 1)), pooled=pooled)

    def copy(self) -> "ThetaTable":
        return ThetaTable(self.rates.copy(), list(self.status), self.pooled)

    def group_of(self, record: PatientRecord) -> int:
        return 0 if self.pooled else record.group.index

    def rates_for(self, record: PatientRecord) -> np.ndarray:
        return self.rates[self.group_of(record)]

    def parameter_set(self, record: PatientRecord, ctx: FitContext | None = None) -> ParameterSet:
        ctx = ctx or FitContext()
        ps = ParameterSet(mu_B=ctx.mu_B, H_m=record.capacity).with_protocol(record.protocol)
        return ps.with_rates(self.rates_for(record))

    def to_dict(self) -> dict:
        return {
            "pooled": self.pooled,
            "rate_names": list(RATE_NAMES),
            "rates": self.rates.tolist(),
            "status": list(self.status),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ThetaTable":
        if list(d["rate_names"]) != list(RATE_NAMES):
            raise DomainError("rate table columns do not match the model")
        return cls(np.array(d["rates"], dtype=float), list(d["status"]), bool(d["pooled"]))


class RecordArrays:
    """Column view of a record list, ready for batched simulation."""

    def __init__(self, records, ctx: FitContext):
        self.records = list(records)
        n = len(self.records)
        self.T0 = np.array([r.initial_cells for r in self.records], dtype=float)
        self.Hm = np.array([r.capacity for r in self.records], dtype=float)
        self.tf = np.array([r.t_f for r in self.records], dtype=float)
        self.obs = np.array([r.final_cells for r in self.records], dtype=float)
        self.fixed = np.zeros((n, 5))
        for i, r in enumerate(self.records):
            self.fixed[i] = (ctx.mu_B, r.capacity, r.protocol.dose, r.protocol.injections, r.protocol.interval)
        self.y0 = np.zeros((n, 6))
        self.y0[:, 1] = ctx.effector0
        self.y0[:, 3] = self.T0
        if ctx.model == "bcg6":
            self.y0[:, 4] = self.Hm - self.T0
        self.ctx = ctx

    def __len__(self):
        return len(self.records)

    def simulate(self, rates: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Outcome of record ``idx[k]`` under rate row ``rates[k]``; NaN on failure."""
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            return np.zeros(0)
        rows = np.concatenate([np.asarray(rates, dtype=float).reshape(len(idx), N_RATES),
                               self.fixed[idx]], axis=1)
        out, _ = final_tumor_many(rows, self.y0[idx], self.tf[idx], self.ctx.solver, self.ctx.model)
        return out


def simulate_outcomes(theta: ThetaTable, records, ctx: FitContext | None = None) -> np.ndarray:
    """Predicted ``T(t_f)`` of each record under its group's rates."""
    ctx = ctx or FitContext()
    arr = RecordArrays(records, ctx)
    rates = np.array([theta.rates_for(r) for r in arr.records]).reshape(len(arr), N_RATES)
    return arr.simulate(rates, np.arange(len(arr)))


def predict_outcome(theta: ParameterSet, record: PatientRecord, ctx: FitContext | None = None) -> float:
    """Simulated ``T_i(t_f) + T_u(t_f)`` for one patient.

    The patient's capacity and protocol override those carried by ``theta``;
    only its rates are used.
    """
    ctx = ctx or FitContext()
    arr = RecordArrays([record], ctx)
    value = arr.simulate(theta.rates()[None, :], np.array([0]))[0]
    if not math.isfinite(value):
        raise NumericalError(f"simulation failed for patient {record.patient_id}")
    return float(max(value, 0.0))


def smoothed_rmae(rel_residuals, delta: float) -> float:
    """Mean pseudo-Huber ``sqrt(r^2 + delta^2) - delta``; plain RMAE at ``delta=0``."""
    r = np.asarray(rel_residuals, dtype=float)
    if delta <= 0:
        return float(np.mean(np.abs(r)))
    return float(np.mean(np.sqrt(r * r + delta * delta) - delta))


@dataclass
class GroupFit:
    losses: list[float]
    status: str
    iterations: int
    n_patients: int
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"losses": self.losses, "status": self.status, "iterations": self.iterations,
                "n_patients": self.n_patients, "notes": self.notes}


@dataclass(frozen=True)
class GDSettings:
    """Knobs of :func:`gd_fit`.

    ``step_fraction`` sets the stencil step as a fraction of each coordinate's
    log-box width. ``smoothing`` is the pseudo-Huber ``delta`` of the training
    objective; 0 gives the plain RMAE, whose kinks stall backtracking.
    """

    lr: float = 0.5
    max_iters: int = 60
    tol: float = 1e-4
    patience: int = 5
    loss_floor: float = 1e-9
    step_fraction: float = 1e-4
    smoothing: float = 1e-2
    bb_steps: bool = True

    def __post_init__(self):
        if not (self.lr > 0 and self.max_iters >= 0 and self.tol >= 0 and self.patience >= 1
                and 0 < self.step_fraction < 0.25 and self.smoothing >= 0):
            raise DomainError(f"invalid gradient-descent settings: {self}")


def gd_fit(
    records,
    theta0: ThetaTable,
    bounds: ParameterBounds | None = None,
    settings: GDSettings | None = None,
    ctx: FitContext | None = None,
    groups=None,
) -> tuple[ThetaTable, dict[int, GroupFit]]:
    """Fit every group's rates to its own patients.

    ``groups`` restricts fitting to the listed group indices; the others keep
    their ``theta0`` rows. A group with no patients keeps ``theta0`` and is
    marked ``"unfitted"``.
    """
    ctx = ctx or FitContext()
    bounds = bounds or ParameterBounds.around()
    settings = settings or GDSettings()
    records = list(records)
    if not records:
        raise DomainError("gd_fit needs at least one training record")
    theta = theta0.copy()
    for g in range(len(theta.rates)):
        if not bounds.contains(theta.rates[g]):
            raise DomainError(f"theta0 for group {g} lies outside the parameter bounds")
    arr = RecordArrays(records, ctx)
    members: dict[int, np.ndarray] = {}
    for i, r in enumerate(records):
        members.setdefault(theta.group_of(r), []).append(i)
    members = {g: np.array(v, dtype=int) for g, v in members.items()}
    wanted = range(len(theta.rates)) if groups is None else sorted(set(groups))
    todo = [g for g in wanted if g in members]
    report: dict[int, GroupFit] = {}
    for g in wanted:
        if g not in members:
            theta.status[g] = "unfitted"
    if not todo:
        return theta, report

    floor_obs = {g: np.maximum(arr.obs[members[g]], EPS_FLOOR) for g in todo}

    def batch_loss(problem_ids, z):
        problem_ids = np.asarray(problem_ids, dtype=int)
        rate_rows, rec_idx, counts = [], [], []
        for k, pid in enumerate(problem_ids):
            m = members[todo[pid]]
            rate_rows.append(np.broadcast_to(np.exp(z[k]), (len(m), N_RATES)))
            rec_idx.append(m)
            counts.append(len(m))
        pred = arr.simulate(np.concatenate(rate_rows), np.concatenate(rec_idx))
        out = np.empty(len(problem_ids))
        off = 0
        for k, pid in enumerate(problem_ids):
            g = todo[pid]
            c = counts[k]
            p = pred[off:off + c]
            off += c
            if not np.all(np.isfinite(p)):
                out[k] = np.nan
            else:
                r = (np.maximum(p, 0.0) - arr.obs[members[g]]) / floor_obs[g]
                out[k] = smoothed_rmae(r, settings.smoothing)
        return out

    lo, hi = bounds.log_lower, bounds.log_upper
    h = settings.step_fraction * (hi - lo)
    z0 = np.log(theta.rates[todo])
    results = projected_gd(
        batch_loss, z0, lo, hi, h,
        lr=settings.lr, max_iters=settings.max_iters, tol=settings.tol,
        patience=settings.patience, loss_floor=settings.loss_floor, active=ctx.active,
        bb_steps=settings.bb_steps,
    )
    for k, g in enumerate(todo):
        res = results[k]
        # Untouched coordinates keep their exact start value (no exp/log round trip).
        moved = np.clip(np.exp(res.x), bounds.lower, bounds.upper)
        theta.rates[g] = np.where(res.x == z0[k], theta.rates[g], moved)
        theta.status[g] = "fitted" if res.status != "failed" else "failed"
        report[g] = GroupFit(res.losses, res.status, res.iterations, len(members[g]), res.notes)
    return theta, report

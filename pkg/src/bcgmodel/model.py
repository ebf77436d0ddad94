r"""State and parameter types plus the right-hand sides of both BCG models.

Six-population model (personalized), time in hours:

.. math::

    \begin{aligned}
    \dot B   &= \textstyle\sum_m b\,\delta(t - m\tau) - p_1 E B - p_2 B T_u - p_8 B H_u - \mu_B B \\
    \dot E   &= -\mu_E E + \alpha (T_i + H_i) + p_4 E B - p_5 E T_i - p_6 E H_i \\
    \dot T_i &= p_2 B T_u - p_3 T_i E \\
    \dot T_u &= \lambda T_u - p_2 B T_u - p_3 T_u E \\
    \dot H_u &= p_7 H_u \bigl(1 - (H_u + H_i + T_u + T_i)/H_m\bigr) - p_8 B H_u \\
    \dot H_i &= p_8 B H_u - p_9 E H_i
    \end{aligned}

The delta train is not part of :func:`rhs6`; doses are discrete jumps applied
by :func:`apply_impulse` at :func:`impulse_times`.

The four-population model is the continuous-infusion predecessor without the
healthy compartment and without immune kill of uninfected tumor cells.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .errors import DomainError

STATE_NAMES = ("B", "E", "T_i", "T_u", "H_u", "H_i")

# Fitted rate constants, in the order used by every parameter vector.
RATE_NAMES = ("p1", "p2", "p3", "p4", "p5", "p6", "p7", "p8", "p9", "alpha", "lam", "mu_E")
# Protocol / patient constants that are never fitted.
FIXED_NAMES = ("mu_B", "H_m", "b", "N", "tau")
PARAM_NAMES = RATE_NAMES + FIXED_NAMES

# Rates that actually enter the four-population model.
ORIGINAL4_RATES = ("p1", "p2", "p3", "p4", "p5", "alpha", "lam", "mu_E")

# Table 1 protocol values.
MU_B = 4.16e-3
DOSE = 2.8e6
INJECTIONS = 6
INTERVAL = 168.0
H_M = 1.84e9

# Base magnitudes for the fitted rates [1/h, or 1/(h*cell) for bilinear terms].
# Not given by the source; chosen so a Table 1 course acts on tumors of
# 1e6..1e8 cells inside a seven-week horizon.
BASE_RATES = {
    "p1": 1.0e-9,
    "p2": 4.0e-10,
    "p3": 2.0e-9,
    "p4": 2.0e-10,
    "p5": 1.0e-11,
    "p6": 1.0e-12,
    "p7": 5.0e-3,
    "p8": 2.0e-13,
    "p9": 1.0e-9,
    "alpha": 2.0e-5,
    "lam": 1.0e-3,
    "mu_E": 2.0e-3,
}

EFFECTOR0 = 1.0e5


def _check_finite(values, what: str) -> None:
    for name, v in values:
        if not math.isfinite(v):
            raise DomainError(f"{what}: {name} is not finite ({v!r})")


@dataclass(frozen=True)
class State6:
    """Population sizes of the six compartments at one instant."""

    B: float
    E: float
    T_i: float
    T_u: float
    H_u: float
    H_i: float

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not math.isfinite(v):
                raise DomainError(f"State6.{f.name} is not finite ({v!r})")
            if v < 0:
                raise DomainError(f"State6.{f.name} is negative ({v!r})")
            object.__setattr__(self, f.name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.B, self.E, self.T_i, self.T_u, self.H_u, self.H_i], dtype=float)

    @classmethod
    def from_array(cls, y) -> "State6":
        return cls(*(float(v) for v in y))

    @property
    def tumor(self) -> float:
        return self.T_i + self.T_u


@dataclass(frozen=True)
class State4:
    """State of the four-population model (no healthy compartment)."""

    B: float
    E: float
    T_i: float
    T_u: float

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not math.isfinite(v):
                raise DomainError(f"State4.{f.name} is not finite ({v!r})")
            if v < 0:
                raise DomainError(f"State4.{f.name} is negative ({v!r})")
            object.__setattr__(self, f.name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.B, self.E, self.T_i, self.T_u], dtype=float)


@dataclass(frozen=True)
class TreatmentProtocol:
    """Dose size, injection count and inter-dose interval [h]."""

    dose: float = DOSE
    injections: int = INJECTIONS
    interval: float = INTERVAL

    def __post_init__(self):
        if not math.isfinite(self.dose) or self.dose < 0:
            raise DomainError(f"dose must be finite and >= 0, got {self.dose!r}")
        if int(self.injections) != self.injections or self.injections < 0:
            raise DomainError(f"injections must be a non-negative integer, got {self.injections!r}")
        if not (math.isfinite(self.interval) and self.interval > 0):
            raise DomainError(f"interval must be > 0, got {self.interval!r}")
        object.__setattr__(self, "injections", int(self.injections))
        object.__setattr__(self, "dose", float(self.dose))
        object.__setattr__(self, "interval", float(self.interval))

    @property
    def last_dose_time(self) -> float:
        return max(self.injections - 1, 0) * self.interval


@dataclass(frozen=True)
class ParameterSet:
    """Rate constants of the six-population model plus protocol constants."""

    p1: float = BASE_RATES["p1"]
    p2: float = BASE_RATES["p2"]
    p3: float = BASE_RATES["p3"]
    p4: float = BASE_RATES["p4"]
    p5: float = BASE_RATES["p5"]
    p6: float = BASE_RATES["p6"]
    p7: float = BASE_RATES["p7"]
    p8: float = BASE_RATES["p8"]
    p9: float = BASE_RATES["p9"]
    alpha: float = BASE_RATES["alpha"]
    lam: float = BASE_RATES["lam"]
    mu_E: float = BASE_RATES["mu_E"]
    mu_B: float = MU_B
    H_m: float = H_M
    b: float = DOSE
    N: int = INJECTIONS
    tau: float = INTERVAL

    def __post_init__(self):
        _check_finite(((n, float(getattr(self, n))) for n in PARAM_NAMES), "ParameterSet")
        for name in RATE_NAMES + ("mu_B", "b"):
            v = float(getattr(self, name))
            if v < 0:
                raise DomainError(f"ParameterSet.{name} must be >= 0, got {v!r}")
            object.__setattr__(self, name, v)
        if int(self.N) != self.N or self.N < 0:
            raise DomainError(f"ParameterSet.N must be a non-negative integer, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        if not self.tau > 0:
            raise DomainError(f"ParameterSet.tau must be > 0, got {self.tau!r}")
        if not self.H_m > 0:
            raise DomainError(f"ParameterSet.H_m must be > 0, got {self.H_m!r}")
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "H_m", float(self.H_m))

    @property
    def protocol(self) -> TreatmentProtocol:
        return TreatmentProtocol(self.b, self.N, self.tau)

    def rates(self) -> np.ndarray:
        """The 12 fitted rates in :data:`RATE_NAMES` order."""
        return np.array([getattr(self, n) for n in RATE_NAMES], dtype=float)

    def as_array(self) -> np.ndarray:
        """All 17 values in :data:`PARAM_NAMES` order (the kernel layout)."""
        return np.array([float(getattr(self, n)) for n in PARAM_NAMES], dtype=float)

    def with_rates(self, rates) -> "ParameterSet":
        return replace(self, **{n: float(v) for n, v in zip(RATE_NAMES, rates)})

    def with_protocol(self, protocol: TreatmentProtocol) -> "ParameterSet":
        return replace(self, b=protocol.dose, N=protocol.injections, tau=protocol.interval)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ParameterSet":
        unknown = set(data) - set(PARAM_NAMES)
        if unknown:
            raise DomainError(f"unknown parameter names: {sorted(unknown)}")
        return cls(**data)


def _unpack(params: ParameterSet):
    return (params.p1, params.p2, params.p3, params.p4, params.p5, params.p6,
            params.p7, params.p8, params.p9, params.alpha, params.lam, params.mu_E,
            params.mu_B, params.H_m)


def rhs6(state: State6, params: ParameterSet) -> np.ndarray:
    """Continuous part of the six-population model.

    Returns the six time-derivatives ``(dB, dE, dT_i, dT_u, dH_u, dH_i)``.
    The dose train is excluded; see :func:`apply_impulse`.
    """
    if not isinstance(state, State6):
        state = State6.from_array(state)
    B, E, Ti, Tu, Hu, Hi = state.B, state.E, state.T_i, state.T_u, state.H_u, state.H_i
    p1, p2, p3, p4, p5, p6, p7, p8, p9, alpha, lam, mu_E, mu_B, H_m = _unpack(params)
    return np.array([
        -p1 * E * B - p2 * B * Tu - p8 * B * Hu - mu_B * B,
        -mu_E * E + alpha * (Ti + Hi) + p4 * E * B - p5 * E * Ti - p6 * E * Hi,
        p2 * B * Tu - p3 * Ti * E,
        lam * Tu - p2 * B * Tu - p3 * Tu * E,
        p7 * Hu * (1.0 - (Hu + Hi + Tu + Ti) / H_m) - p8 * B * Hu,
        p8 * B * Hu - p9 * E * Hi,
    ])


def rhs4(state: State4, params: ParameterSet, infusion: float | None = None) -> np.ndarray:
    """Right-hand side of the four-population continuous-infusion model.

    ``infusion`` is the BCG inflow rate; it defaults to ``params.b``. The
    BCG and effector decay rates are ``params.mu_B`` and ``params.mu_E``.
    """
    if not isinstance(state, State4):
        state = State4(*state)
    b = params.b if infusion is None else float(infusion)
    if not math.isfinite(b) or b < 0:
        raise DomainError(f"infusion rate must be finite and >= 0, got {b!r}")
    B, E, Ti, Tu = state.B, state.E, state.T_i, state.T_u
    p1, p2, p3, p4, p5 = params.p1, params.p2, params.p3, params.p4, params.p5
    return np.array([
        -p1 * E * B - p2 * B * Tu - params.mu_B * B + b,
        -params.mu_E * E + params.alpha * Ti + p4 * E * B - p5 * E * Ti,
        p2 * B * Tu - p3 * Ti * E,
        params.lam * Tu - p2 * B * Tu,
    ])


def impulse_times(protocol: TreatmentProtocol) -> list[float]:
    """Dose times ``0, tau, ..., (N-1) tau``."""
    return [m * protocol.interval for m in range(protocol.injections)]


def apply_impulse(state: State6, dose: float) -> State6:
    """Instantaneous instillation: raise ``B`` by ``dose``."""
    if not math.isfinite(dose) or dose < 0:
        raise DomainError(f"dose must be finite and >= 0, got {dose!r}")
    return replace(state, B=state.B + dose)


def initial_state(e: float, T0: float, H_m: float) -> State6:
    """Start-of-treatment state ``(0, e, 0, T0, H_m - T0, 0)``."""
    if not e > 0:
        raise DomainError(f"initial effector count must be > 0, got {e!r}")
    if not T0 > 0:
        raise DomainError(f"initial tumor size must be > 0, got {T0!r}")
    if not T0 < H_m:
        raise DomainError(f"tumor ({T0!r} cells) does not fit a bladder of capacity {H_m!r}")
    return State6(0.0, e, 0.0, T0, H_m - T0, 0.0)

"""Error metric and the two t-tests used by the fitting procedure."""

from __future__ import annotations

import math
import sys
from typing import NamedTuple

import numpy as np
from scipy import stats as _st

from ..errors import DegenerateTestError, DomainError

# Denominator floor for complete responders (observed burden 0 cells).
EPS_FLOOR = 1.0
# Stand-in for an infinite t statistic when every paired difference is equal.
T_GUARD = sys.float_info.max ** 0.5


class RMAEResult(NamedTuple):
    value: float
    floored: tuple[int, ...]


def relative_errors(predicted, observed, floor: float = EPS_FLOOR) -> np.ndarray:
    """Per-patient ``|pred - obs| / max(obs, floor)``."""
    pred = np.asarray(predicted, dtype=float)
    obs = np.asarray(observed, dtype=float)
    if pred.shape != obs.shape:
        raise DomainError(f"length mismatch: {pred.shape} vs {obs.shape}")
    return np.abs(pred - obs) / np.maximum(obs, floor)


def rmae_detail(predicted, observed, floor: float = EPS_FLOOR) -> RMAEResult:
    """RMAE plus the indices whose observed value needed the floor."""
    obs = np.asarray(observed, dtype=float)
    if obs.size < 1:
        raise DomainError("rmae needs at least one observation")
    err = relative_errors(predicted, obs, floor)
    return RMAEResult(float(np.mean(err)), tuple(int(i) for i in np.flatnonzero(obs < floor)))


def rmae(predicted, observed) -> float:
    """Relative mean absolute error ``mean(|pred - obs| / obs)``.

    Observations below one cell (complete responders) use a denominator of
    one cell; :func:`rmae_detail` reports which ones.
    """
    return rmae_detail(predicted, observed).value


class TTest(NamedTuple):
    t: float
    p: float
    df: float


def paired_ttest_onetail(errors_before, errors_after, on_degenerate: str = "raise") -> TTest:
    """Paired test of ``after < before`` on ``d = before - after``.

    ``t = mean(d) / (sd(d) / sqrt(n))`` with the upper Student-t tail on
    ``n - 1`` degrees of freedom. Zero-variance differences raise
    :class:`DegenerateTestError`; with ``on_degenerate="guard"`` they return a
    huge finite ``t`` of the sign of ``mean(d)`` instead (p of 0, 0.5 or 1).
    """
    a = np.asarray(errors_before, dtype=float)
    b = np.asarray(errors_after, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError("paired samples must be 1-D and of equal length")
    n = a.size
    if n < 2:
        raise DomainError(f"paired test needs n >= 2, got {n}")
    d = a - b
    mean = float(np.mean(d))
    sd = float(np.std(d, ddof=1))
    if sd == 0.0 or not math.isfinite(sd):
        if on_degenerate != "guard":
            raise DegenerateTestError(f"paired differences have zero variance (mean {mean!r})")
        if mean > 0:
            return TTest(T_GUARD, 0.0, n - 1.0)
        if mean < 0:
            return TTest(-T_GUARD, 1.0, n - 1.0)
        return TTest(0.0, 0.5, n - 1.0)
    t = mean / (sd / math.sqrt(n))
    return TTest(t, float(_st.t.sf(t, n - 1)), n - 1.0)


class WelchResult(NamedTuple):
    t: float
    p: float
    df: float
    ci: tuple[float, float]
    diff: float


def welch_ttest_twotail(a, b, confidence: float = 0.95) -> WelchResult:
    """Welch two-sample test of equal means with a CI for ``mean(a) - mean(b)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise DomainError(f"Welch test needs >= 2 samples per arm, got {a.size} and {b.size}")
    va = float(np.var(a, ddof=1)) / a.size
    vb = float(np.var(b, ddof=1)) / b.size
    diff = float(np.mean(a) - np.mean(b))
    se2 = va + vb
    if se2 == 0.0:
        raise DegenerateTestError("both samples have zero variance")
    se = math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    t = diff / se
    p = float(2.0 * _st.t.sf(abs(t), df))
    q = float(_st.t.ppf(0.5 + confidence / 2.0, df))
    return WelchResult(t, p, df, (diff - q * se, diff + q * se), diff)

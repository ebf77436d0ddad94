import math
from fractions import Fraction

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bcgmodel.errors import DegenerateTestError, DomainError
from bcgmodel.fitting.stats import paired_ttest_onetail, relative_errors, rmae, rmae_detail, welch_ttest_twotail

mp.mp.dps = 40


def _mean_var(xs):
    fx = [Fraction(x) for x in xs]
    m = sum(fx) / len(fx)
    v = sum((x - m) ** 2 for x in fx) / (len(fx) - 1)
    return m, v


def t_upper_tail(t, df):
    t, df = mp.mpf(t), mp.mpf(df)
    half = mp.betainc(df / 2, mp.mpf(1) / 2, 0, df / (df + t * t), regularized=True) / 2
    return half if t >= 0 else 1 - half


def oracle_paired(before, after):
    d = [Fraction(a) - Fraction(b) for a, b in zip(before, after)]
    m, v = _mean_var(d)
    n = len(d)
    t = mp.mpf(m.numerator) / m.denominator / mp.sqrt(mp.mpf(v.numerator) / v.denominator / n)
    return float(t), float(t_upper_tail(t, n - 1))


def oracle_welch(a, b):
    ma, va = _mean_var(a)
    mb, vb = _mean_var(b)
    sa, sb = va / len(a), vb / len(b)
    se2 = sa + sb
    df = se2 ** 2 / (sa ** 2 / (len(a) - 1) + sb ** 2 / (len(b) - 1))
    diff = ma - mb
    t = mp.mpf(diff.numerator) / diff.denominator / mp.sqrt(mp.mpf(se2.numerator) / se2.denominator)
    dff = mp.mpf(df.numerator) / df.denominator
    p = mp.betainc(dff / 2, mp.mpf(1) / 2, 0, dff / (dff + t * t), regularized=True)
    return float(t), float(p), float(dff)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def test_rmae_examples():
    assert rmae([5.0, 7.0], [5.0, 7.0]) == 0.0
    assert rmae([110.0], [100.0]) == pytest.approx(0.10, abs=1e-15)
    assert rmae([110.0, 90.0], [100.0, 100.0]) == pytest.approx(0.10, abs=1e-15)


def test_rmae_zero_observed_floored_and_flagged():
    d = rmae_detail([3.0, 10.0], [0.0, 10.0])
    assert d.value == pytest.approx(1.5)
    assert d.floored == (0,)


@given(st.lists(st.floats(1, 1e6), min_size=1, max_size=20), st.floats(1.0, 1e3))
def test_rmae_scale_consistent(obs, c):
    pred = [o * 1.3 for o in obs]
    a = rmae(pred, obs)
    b = rmae([c * p for p in pred], [c * o for o in obs])
    assert a == pytest.approx(b, rel=1e-12)


def test_rmae_length_mismatch():
    with pytest.raises(DomainError):
        rmae([1.0], [1.0, 2.0])
    with pytest.raises(DomainError):
        relative_errors([1.0, 2.0], [1.0])
    with pytest.raises(DomainError):
        rmae([], [])


def test_paired_hand_example():
    before, after = [5, 7, 9, 6], [4, 6, 7, 6]
    t, p, df = paired_ttest_onetail(before, after)
    # d = (1, 1, 2, 0): mean 1, sd sqrt(2/3), t = 1 / (sqrt(2/3)/2) = sqrt(6)
    assert rel(t, math.sqrt(6)) < 1e-12
    ot, op = oracle_paired(before, after)
    assert rel(t, ot) < 1e-10 and rel(p, op) < 1e-10 and df == 3


def test_paired_degenerate():
    with pytest.raises(DegenerateTestError):
        paired_ttest_onetail([3, 4, 5], [2, 3, 4])
    t, p, _ = paired_ttest_onetail([3, 4, 5], [2, 3, 4], on_degenerate="guard")
    assert math.isfinite(t) and t > 1e100 and p == 0.0
    with pytest.raises(DomainError):
        paired_ttest_onetail([1.0], [0.5])


def test_paired_random_against_oracle():
    rng = np.random.default_rng(8)
    for _ in range(50):
        n = int(rng.integers(2, 12))
        a = rng.normal(0, 1, n).round(6)
        b = (a - rng.normal(0.3, 1, n)).round(6)
        t, p, _ = paired_ttest_onetail(a, b)
        ot, op = oracle_paired(a.tolist(), b.tolist())
        assert rel(t, ot) < 1e-10 and rel(p, op) < 1e-10


def test_welch_random_against_oracle():
    rng = np.random.default_rng(9)
    for _ in range(50):
        a = rng.normal(0, 1, int(rng.integers(2, 10))).round(6)
        b = rng.normal(0.5, 2, int(rng.integers(2, 10))).round(6)
        res = welch_ttest_twotail(a, b)
        ot, op, odf = oracle_welch(a.tolist(), b.tolist())
        assert rel(res.t, ot) < 1e-10 and rel(res.p, op) < 1e-10 and rel(res.df, odf) < 1e-10
        # The CI half-width over the standard error is the two-sided 95% t quantile.
        se = res.diff / res.t
        q = (res.ci[1] - res.diff) / abs(se)
        tail = mp.betainc(mp.mpf(res.df) / 2, mp.mpf(1) / 2, 0, res.df / (res.df + q * q), regularized=True)
        assert abs(float(tail) - 0.05) < 1e-10


def test_welch_examples():
    a = [1.0, 2.0, 3.0, 4.0]
    r = welch_ttest_twotail(a, a)
    assert r.t == 0 and r.ci[0] == pytest.approx(-r.ci[1])
    b = [x + 10.0 + 1e-3 * i for i, x in enumerate(a)]
    r = welch_ttest_twotail(b, [x + 1e-4 * i for i, x in enumerate(a)])
    assert r.ci[0] > 0
    with pytest.raises(DomainError):
        welch_ttest_twotail([1.0], [1.0, 2.0])


def test_welch_textbook_case():
    # Two small samples; the statistic is reproduced from exact sums.
    a = [19.1, 20.3, 21.7, 18.9, 22.4]
    b = [16.2, 17.8, 15.4, 18.9]
    ma, mb = sum(a) / 5, sum(b) / 4
    va = sum((x - ma) ** 2 for x in a) / 4
    vb = sum((x - mb) ** 2 for x in b) / 3
    t_hand = (ma - mb) / math.sqrt(va / 5 + vb / 4)
    r = welch_ttest_twotail(a, b)
    assert rel(r.t, t_hand) < 1e-10

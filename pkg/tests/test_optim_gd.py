import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bcgmodel.cohort import GroundTruth, generate_cohort, uniform_mixture
from bcgmodel.errors import DomainError
from bcgmodel.fitting.gd import (
    FitContext,
    GDSettings,
    ParameterBounds,
    ThetaTable,
    gd_fit,
    simulate_outcomes,
    smoothed_rmae,
)
from bcgmodel.fitting.optim import projected_gd, stencil_gradient
from bcgmodel.model import BASE_RATES, RATE_NAMES

BASE = np.array([BASE_RATES[n] for n in RATE_NAMES])
LAM = RATE_NAMES.index("lam")


def test_stencil_constant():
    r = stencil_gradient(lambda x: 7.0, np.array([1.0, 2.0]), 0.01)
    assert np.all(r.grad == 0)


def test_stencil_quartic_at_two():
    for h in (1e-4, 1e-3, 1e-2, 0.05, 0.1):
        g = stencil_gradient(lambda x: x[0] ** 4, np.array([2.0]), h).grad[0]
        assert abs(g - 32.0) <= 1e-9 * 32.0


def test_stencil_linear_2d():
    g = stencil_gradient(lambda x: 3 * x[0] + 5 * x[1], np.array([0.3, -1.2]), 1e-3).grad
    assert np.allclose(g, [3.0, 5.0], rtol=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=5, max_size=5), st.floats(-2, 2),
       st.floats(min_value=1e-4, max_value=1e-1))
def test_stencil_exact_degree_four(coefs, x0, h):
    poly = np.polynomial.Polynomial(coefs)
    d = poly.deriv()(x0)
    g = stencil_gradient(lambda x: poly(x[0]), np.array([x0]), h).grad[0]
    scale = max(abs(d), sum(abs(c) for c in coefs))
    assert abs(g - d) <= 1e-9 * scale


def test_stencil_one_sided_near_bound():
    r = stencil_gradient(lambda x: x[0] ** 3, np.array([0.0]), 0.01, lower=[0.0], upper=[1.0])
    assert r.one_sided[0]
    assert abs(r.grad[0]) < 1e-12


def test_stencil_nonfinite_flags_coordinate():
    f = lambda x: math.inf if x[1] > 1.0 else x[0] + x[1]
    r = stencil_gradient(f, np.array([0.0, 1.0]), 0.01)
    assert not r.failed[0] and r.failed[1] and np.isnan(r.grad[1])


def test_stencil_rejects_nonpositive_step():
    with pytest.raises(DomainError):
        stencil_gradient(lambda x: 0.0, np.array([0.0]), 0.0)


def _quad_problem(rng, G=3, d=4):
    A = []
    for _ in range(G):
        Q = rng.normal(size=(d, d))
        A.append(Q @ Q.T + d * np.eye(d))
    xs = rng.uniform(-1, 1, size=(G, d))

    def loss(ids, pts):
        return np.array([float((p - xs[i]) @ A[i] @ (p - xs[i])) for i, p in zip(ids, pts)])

    return loss, xs


def test_projected_gd_quadratic_converges(rng):
    loss, xs = _quad_problem(rng)
    res = projected_gd(loss, np.zeros_like(xs), -5.0, 5.0, 1e-3, lr=0.01, max_iters=2000, tol=0.0,
                       patience=5, loss_floor=1e-16)
    for r, x in zip(res, xs):
        assert np.max(np.abs(r.x - x)) < 1e-6


def test_projected_gd_monotone(rng):
    loss, xs = _quad_problem(rng, G=4, d=6)
    res = projected_gd(loss, np.full_like(xs, 3.0), -1.0, 4.0, 1e-3, lr=1.0, max_iters=100)
    for r in res:
        assert all(b <= a for a, b in zip(r.losses, r.losses[1:]))
        assert np.all(r.x >= -1.0) and np.all(r.x <= 4.0)


def test_projected_gd_respects_box_optimum_outside(rng):
    loss = lambda ids, pts: np.array([float(np.sum((p - 10.0) ** 2)) for p in pts])
    res = projected_gd(loss, np.zeros((1, 2)), -1.0, 1.0, 1e-3, lr=0.5, max_iters=50)
    assert np.allclose(res[0].x, 1.0)


def test_smoothed_rmae():
    r = np.array([0.1, -0.2])
    assert smoothed_rmae(r, 0.0) == pytest.approx(0.15)
    assert smoothed_rmae(r, 1e-2) < 0.15
    assert smoothed_rmae(np.zeros(3), 1e-2) == 0.0


def _one_group_cohort(theta_row, n=12, seed=3):
    # Uniform mixture restricted to one group so every record shares the rates.
    w = np.zeros(72)
    w[40] = 1.0
    gt = GroundTruth(theta=ThetaTable.uniform(theta_row), weights=w)
    return generate_cohort(gt, n, seed)


def test_gd_fit_at_optimum_does_not_move():
    recs = _one_group_cohort(BASE)
    theta, rep = gd_fit(recs, ThetaTable.uniform(BASE))
    assert rep[40].iterations == 0 and rep[40].status == "converged"
    assert np.array_equal(theta.rates[40], BASE)
    assert theta.status[0] == "unfitted"


def test_gd_fit_recovers_single_rate():
    true = BASE.copy()
    true[LAM] = 0.002
    recs = _one_group_cohort(true)
    # Freeze every rate except lambda with a hairline box.
    lower, upper = BASE * (1 - 1e-12), BASE * (1 + 1e-12)
    lower[LAM], upper[LAM] = 1e-4, 1e-2
    bounds = ParameterBounds(lower, upper)
    start = BASE.copy()
    start[LAM] = 0.001
    theta, rep = gd_fit(recs, ThetaTable.uniform(start), bounds, GDSettings(max_iters=100))
    assert abs(theta.rates[40, LAM] / 0.002 - 1) < 0.05
    assert all(b <= a for a, b in zip(rep[40].losses, rep[40].losses[1:]))


def test_gd_fit_rejects_out_of_box_start():
    recs = _one_group_cohort(BASE, n=3)
    with pytest.raises(DomainError):
        gd_fit(recs, ThetaTable.uniform(BASE * 100))
    with pytest.raises(DomainError):
        gd_fit([], ThetaTable.uniform(BASE))


def test_group_losses_use_own_patients_only():
    recs = _one_group_cohort(BASE, n=6)
    theta0 = ThetaTable.uniform(BASE)
    _, rep_a = gd_fit(recs, theta0, settings=GDSettings(max_iters=2))
    assert set(rep_a) == {40}
    assert rep_a[40].n_patients == 6


def test_predict_inert_tumor():
    from bcgmodel.fitting.gd import predict_outcome
    from bcgmodel.model import ParameterSet
    from bcgmodel.records import make_record
    from bcgmodel.demographics import PatientProfile

    rec = make_record("x", PatientProfile(50, "male", "smoker", "normal", 2.0))
    inert = ParameterSet(**{k: 0.0 for k in BASE_RATES}, b=0.0)
    assert predict_outcome(inert, rec) == pytest.approx(rec.initial_cells, rel=1e-9)
    grow = ParameterSet(**{**{k: 0.0 for k in BASE_RATES}, "lam": 1e-3}, b=0.0)
    assert predict_outcome(grow, rec) == pytest.approx(rec.initial_cells * math.exp(1e-3 * rec.t_f), rel=1e-5)


def test_predict_self_consistent_under_refinement():
    from bcgmodel.fitting.gd import predict_outcome
    from bcgmodel.model import ParameterSet
    from bcgmodel.records import make_record
    from bcgmodel.demographics import PatientProfile
    from bcgmodel.solver import SolverConfig

    rec = make_record("x", PatientProfile(50, "male", "smoker", "normal", 2.0))
    ps = ParameterSet(**{**{k: 0.0 for k in BASE_RATES}, "p2": 4e-8, "lam": 1e-3}).with_protocol(rec.protocol)
    coarse = predict_outcome(ps, rec, FitContext(solver=SolverConfig(fixed_step=4.0)))
    fine = predict_outcome(ps, rec, FitContext(solver=SolverConfig(fixed_step=2.0)))
    ref = predict_outcome(ps, rec, FitContext(solver=SolverConfig(rtol=1e-11, atol=1e-9)))
    assert abs(fine - ref) <= abs(coarse - ref) + 1e-9 * ref
    assert fine == pytest.approx(ref, rel=1e-6)


def test_simulate_outcomes_nonnegative():
    recs = _one_group_cohort(BASE, n=5)
    out = simulate_outcomes(ThetaTable.uniform(BASE), recs)
    assert np.all(out >= 0) and out.shape == (5,)

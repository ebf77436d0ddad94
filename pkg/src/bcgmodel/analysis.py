"""Equilibria, Jacobians and linear stability of the six-population model.

Both equilibria live in the post-treatment regime, where the dose train is
over and the system is autonomous. The analytic Jacobian below is obtained by
differentiating the right-hand side directly; :func:`discrepancy_report`
compares it against the matrices as they were printed alongside the model,
several of whose entries do not follow from the equations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConsistencyError, DomainError, NumericalError
from .model import STATE_NAMES, ParameterSet, State6, rhs6

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class Equilibrium:
    state: State6
    residual: float
    label: str

    def to_dict(self) -> dict:
        return {"label": self.label, "state": dict(zip(STATE_NAMES, self.state.as_array().tolist())),
                "residual": self.residual}


@dataclass(frozen=True)
class StabilityVerdict:
    eigenvalues: tuple[complex, ...]
    classification: str
    max_real: float

    def to_dict(self) -> dict:
        return {
            "classification": self.classification,
            "max_real": self.max_real,
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
        }


def scaled_residual(state: State6, params: ParameterSet) -> float:
    """``||rhs6(x)|| / (1 + ||x||)``."""
    x = state.as_array()
    return float(np.linalg.norm(rhs6(state, params)) / (1.0 + np.linalg.norm(x)))


def find_equilibria(params: ParameterSet) -> list[Equilibrium]:
    """The trivial (all zero) and healthy (``H_u = H_m``) equilibria, residual-checked."""
    out = []
    for label, state in (("trivial", State6(0, 0, 0, 0, 0, 0)),
                         ("healthy", State6(0, 0, 0, 0, params.H_m, 0))):
        res = scaled_residual(state, params)
        if not res < RESIDUAL_TOL:
            raise ConsistencyError(f"{label} equilibrium has residual {res:.3e}; model and rhs disagree")
        out.append(Equilibrium(state, res, label))
    return out


def rhs6_generic(y, p):
    """The six-population right-hand side for any numeric type.

    Mirrors the compiled kernel term by term but uses no float literals, so
    ``fractions.Fraction`` inputs are evaluated exactly.
    """
    B, E, Ti, Tu, Hu, Hi = y
    p1, p2, p3, p4, p5, p6, p7, p8, p9, alpha, lam, mu_E, mu_B, H_m = p[:14]
    return [
        -p1 * E * B - p2 * B * Tu - p8 * B * Hu - mu_B * B,
        -mu_E * E + alpha * (Ti + Hi) + p4 * E * B - p5 * E * Ti - p6 * E * Hi,
        p2 * B * Tu - p3 * Ti * E,
        lam * Tu - p2 * B * Tu - p3 * Tu * E,
        p7 * Hu * (1 - (Hu + Hi + Tu + Ti) / H_m) - p8 * B * Hu,
        p8 * B * Hu - p9 * E * Hi,
    ]


def jacobian_numeric(state, params: ParameterSet, h: float = 1e-6, exact: bool = True) -> np.ndarray:
    """Central differences with per-component step ``h * (1 + |x_j|)``.

    Perturbed points may leave the non-negative orthant; the right-hand side
    is a polynomial so it is evaluated there unchanged. With ``exact`` the
    differences are taken in rational arithmetic: the field is quadratic, so
    the central difference is then the exact derivative and the only rounding
    is the final conversion. In doubles, an entry whose contribution to
    ``f_i`` is below ``eps * |f_i| / h_j`` is lost to cancellation; states
    spanning nine decades hit this routinely.
    """
    if not h > 0:
        raise DomainError(f"finite-difference step must be > 0, got {h!r}")
    x = state.as_array() if isinstance(state, State6) else np.asarray(state, dtype=float)
    p = params.as_array()
    conv = Fraction if exact else float
    xs = [conv(float(v)) for v in x]
    ps = [conv(float(v)) for v in p]
    J = np.empty((6, 6))
    for j in range(6):
        hj = conv(h) * (1 + abs(xs[j]))
        xp, xm = list(xs), list(xs)
        xp[j] += hj
        xm[j] -= hj
        fp, fm = rhs6_generic(xp, ps), rhs6_generic(xm, ps)
        for i in range(6):
            J[i, j] = float((fp[i] - fm[i]) / (2 * hj))
    if not np.all(np.isfinite(J)):
        raise DomainError("numerical Jacobian has non-finite entries")
    return J


def jacobian_analytic(state, params: ParameterSet) -> np.ndarray:
    x = state.as_array() if isinstance(state, State6) else np.asarray(state, dtype=float)
    B, E, Ti, Tu, Hu, Hi = x
    q = params
    p1, p2, p3, p4, p5, p6, p7, p8, p9 = q.p1, q.p2, q.p3, q.p4, q.p5, q.p6, q.p7, q.p8, q.p9
    S = Hu + Hi + Tu + Ti
    g = -p7 * Hu / q.H_m
    return np.array([
        [-p1 * E - p2 * Tu - p8 * Hu - q.mu_B, -p1 * B, 0.0, -p2 * B, -p8 * B, 0.0],
        [p4 * E, -q.mu_E + p4 * B - p5 * Ti - p6 * Hi, q.alpha - p5 * E, 0.0, 0.0, q.alpha - p6 * E],
        [p2 * Tu, -p3 * Ti, -p3 * E, p2 * B, 0.0, 0.0],
        [-p2 * Tu, -p3 * Tu, 0.0, q.lam - p2 * B - p3 * E, 0.0, 0.0],
        [-p8 * Hu, 0.0, g, g, p7 * (1.0 - S / q.H_m) + g - p8 * B, g],
        [p8 * Hu, -p9 * Hi, 0.0, 0.0, p8 * B, -p9 * E],
    ])


def eigenvalues(matrix) -> np.ndarray:
    """All eigenvalues of a real square matrix, sorted by (real, imag)."""
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError("eigenvalues need a square matrix")
    if not np.all(np.isfinite(A)):
        raise DomainError("matrix has non-finite entries")
    try:
        w = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue iteration did not converge: {exc}") from exc
    w = np.asarray(w, dtype=complex)
    return w[np.lexsort((w.imag, w.real))]


def classify_stability(eigs, tol: float = 1e-12) -> StabilityVerdict:
    """Unstable if some real part exceeds ``tol``, stable if all are below ``-tol``.

    Anything else is non-hyperbolic: linearization alone decides nothing there.
    """
    w = np.asarray(eigs, dtype=complex)
    if w.size == 0:
        raise DomainError("no eigenvalues given")
    w = w[np.lexsort((w.imag, w.real))]
    mr = float(np.max(w.real))
    if mr > tol:
        cls = "unstable"
    elif mr < -tol:
        cls = "stable"
    else:
        cls = "non-hyperbolic"
    return StabilityVerdict(tuple(complex(z) for z in w), cls, mr)


def stability_at(eq: Equilibrium, params: ParameterSet, tol: float = 1e-12) -> StabilityVerdict:
    return classify_stability(eigenvalues(jacobian_analytic(eq.state, params)), tol)


# Matrices as printed next to the model, entry by entry: (expression, evaluator).
# Evaluators take (state array, ParameterSet).

def _printed_general():
    rows = (
        (("-p1*E - p2*T_u - mu_B", lambda x, q: -q.p1 * x[1] - q.p2 * x[3] - q.mu_B),
         ("-p1*B", lambda x, q: -q.p1 * x[0]), ("0", None),
         ("-p2*B", lambda x, q: -q.p2 * x[0]), ("-p8*B", lambda x, q: -q.p8 * x[0]), ("0", None)),
        (("p4*E", lambda x, q: q.p4 * x[1]),
         ("-mu_E + p4*E - p5*T_i - p6*H_i",
          lambda x, q: -q.mu_E + q.p4 * x[1] - q.p5 * x[2] - q.p6 * x[5]),
         ("alpha - p5*E", lambda x, q: q.alpha - q.p5 * x[1]), ("0", None), ("0", None),
         ("alpha - p6*E", lambda x, q: q.alpha - q.p6 * x[1])),
        (("0", None), ("-p3*T_i", lambda x, q: -q.p3 * x[2]), ("-p3*E", lambda x, q: -q.p3 * x[1]),
         ("p2*B", lambda x, q: q.p2 * x[0]), ("0", None), ("0", None)),
        (("-p2*T_u", lambda x, q: -q.p2 * x[3]), ("-p3*T_u", lambda x, q: -q.p3 * x[3]), ("0", None),
         ("lam - p2*B - p3*E", lambda x, q: q.lam - q.p2 * x[0] - q.p3 * x[1]), ("0", None), ("0", None)),
        (("-p8*H_u", lambda x, q: -q.p8 * x[4]), ("0", None),
         ("-1/H_m", lambda x, q: -1.0 / q.H_m), ("-1/H_m", lambda x, q: -1.0 / q.H_m),
         ("p7 - p8*B - 2*H_u/H_m", lambda x, q: q.p7 - q.p8 * x[0] - 2.0 * x[4] / q.H_m),
         ("-1/H_m", lambda x, q: -1.0 / q.H_m)),
        (("p8*H_u", lambda x, q: q.p8 * x[4]), ("-p9*E", lambda x, q: -q.p9 * x[1]), ("0", None),
         ("0", None), ("p8*B", lambda x, q: q.p8 * x[0]), ("-p9*E", lambda x, q: -q.p9 * x[1])),
    )
    return rows


def _printed_at(kind: str):
    z = ("0", None)
    inv = ("-1/H_m", lambda x, q: -1.0 / q.H_m)
    common = (
        (("-mu_B", lambda x, q: -q.mu_B), z, z, z, z, z),
        (z, ("-mu_E", lambda x, q: -q.mu_E), ("alpha", lambda x, q: q.alpha), z, z,
         ("alpha", lambda x, q: q.alpha)),
        (z, z, z, z, z, z),
        (z, z, z, ("lam", lambda x, q: q.lam), z, z),
    )
    if kind == "trivial":
        tail = ((z, z, inv, inv, ("p7", lambda x, q: q.p7), inv), (z, z, z, z, z, z))
    else:
        tail = ((("-p8*H_m", lambda x, q: -q.p8 * q.H_m), z, inv, inv,
                 ("p7 + 2", lambda x, q: q.p7 + 2.0), inv),
                (("p8*H_m", lambda x, q: q.p8 * q.H_m), z, z, z, z, z))
    return common + tail


# Closed forms of the derived entries that differ from the printed ones.
_DERIVED_EXPR = {
    ("J", 0, 0): "-p1*E - p2*T_u - p8*H_u - mu_B",
    ("J", 1, 1): "-mu_E + p4*B - p5*T_i - p6*H_i",
    ("J", 2, 0): "p2*T_u",
    ("J", 4, 2): "-p7*H_u/H_m",
    ("J", 4, 3): "-p7*H_u/H_m",
    ("J", 4, 4): "p7*(1 - (H_u + H_i + T_u + T_i)/H_m) - p7*H_u/H_m - p8*B",
    ("J", 4, 5): "-p7*H_u/H_m",
    ("J", 5, 1): "-p9*H_i",
    ("J_trivial", 4, 2): "0",
    ("J_trivial", 4, 3): "0",
    ("J_trivial", 4, 5): "0",
    ("J_healthy", 0, 0): "-p8*H_m - mu_B",
    ("J_healthy", 4, 2): "-p7",
    ("J_healthy", 4, 3): "-p7",
    ("J_healthy", 4, 4): "-p7",
    ("J_healthy", 4, 5): "-p7",
}


def printed_matrix(name: str, state, params: ParameterSet) -> np.ndarray:
    """Evaluate one of the printed matrices (``J``, ``J_trivial``, ``J_healthy``)."""
    table = {"J": _printed_general, "J_trivial": lambda: _printed_at("trivial"),
             "J_healthy": lambda: _printed_at("healthy")}
    if name not in table:
        raise DomainError(f"unknown printed matrix {name!r}")
    x = state.as_array() if isinstance(state, State6) else np.asarray(state, dtype=float)
    rows = table[name]()
    return np.array([[0.0 if f is None else float(f(x, params)) for _, f in row] for row in rows])


@dataclass(frozen=True)
class Discrepancy:
    matrix: str
    row: str
    column: str
    printed: str
    derived: str
    printed_value: float
    derived_value: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def discrepancy_report(params: ParameterSet, state=None, rtol: float = 1e-9) -> list[Discrepancy]:
    """Entries where a printed matrix disagrees with the derived Jacobian.

    The general matrix is compared at ``state`` (default: a generic interior
    point so that no term vanishes by accident); ``J_trivial`` and
    ``J_healthy`` at their equilibria. Agreement is decided symbolically
    (entries listed in the derived-expression table) and confirmed
    numerically: a listed entry that happens to coincide numerically is still
    reported, since the formulas differ.
    """
    if state is None:
        state = State6(3.0e5, 2.0e5, 4.0e6, 7.0e6, 0.6 * params.H_m, 5.0e6)
    cases = (("J", state), ("J_trivial", State6(0, 0, 0, 0, 0, 0)),
             ("J_healthy", State6(0, 0, 0, 0, params.H_m, 0)))
    tables = {"J": _printed_general(), "J_trivial": _printed_at("trivial"),
              "J_healthy": _printed_at("healthy")}
    out = []
    for name, st in cases:
        printed = printed_matrix(name, st, params)
        derived = jacobian_analytic(st, params)
        for i in range(6):
            for j in range(6):
                listed = (name, i, j) in _DERIVED_EXPR
                pv, dv = printed[i, j], derived[i, j]
                differs = not math.isclose(pv, dv, rel_tol=rtol, abs_tol=1e-300)
                if listed or differs:
                    expr = _DERIVED_EXPR.get((name, i, j), tables[name][i][j][0])
                    out.append(Discrepancy(name, STATE_NAMES[i], STATE_NAMES[j],
                                           tables[name][i][j][0], expr, float(pv), float(dv)))
    return out


def stability_report(params: ParameterSet, tol: float = 1e-12) -> dict:
    """Everything ``analyze-stability`` prints, as plain data."""
    eqs = find_equilibria(params)
    entries = []
    for eq in eqs:
        J = jacobian_analytic(eq.state, params)
        verdict = classify_stability(eigenvalues(J), tol)
        num = jacobian_numeric(eq.state, params)
        entries.append({
            **eq.to_dict(),
            "jacobian": J.tolist(),
            "max_abs_numeric_difference": float(np.max(np.abs(num - J))),
            "verdict": verdict.to_dict(),
        })
    return {
        "parameters": params.to_dict(),
        "equilibria": entries,
        "printed_matrix_discrepancies": [d.to_dict() for d in discrepancy_report(params)],
    }

"""Five-point-stencil gradients and projected gradient descent with backtracking.

:func:`projected_gd` runs many independent problems in lock-step so that all
their loss evaluations for one iteration can be handed to a single batched
evaluator. With the ODE loss this amortizes one compiled call over every
(group, stencil point, patient) triple.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import DomainError, NumericalError

CENTRAL = (np.array([-2.0, -1.0, 1.0, 2.0]), np.array([1.0, -8.0, 8.0, -1.0]))
FORWARD = (np.array([0.0, 1.0, 2.0, 3.0, 4.0]), np.array([-25.0, 48.0, -36.0, 16.0, -3.0]))
BACKWARD = (-FORWARD[0], -FORWARD[1])


@dataclass
class StencilPlan:
    """Evaluation points for one gradient and how to combine them.

    ``points[0]`` is always the base point. ``rows[j]`` / ``weights[j]`` give
    the rows and integer coefficients whose weighted sum, divided by
    ``12 h[j]``, is the derivative along coordinate ``j``; integer weights let
    a constant loss cancel exactly. ``one_sided[j]`` marks coordinates where
    the box forced a one-sided formula.
    """

    points: np.ndarray
    rows: list[np.ndarray]
    weights: list[np.ndarray]
    h: np.ndarray
    one_sided: np.ndarray

    def combine(self, values: np.ndarray) -> np.ndarray:
        grad = np.zeros(len(self.rows))
        for j, (r, w) in enumerate(zip(self.rows, self.weights)):
            grad[j] = np.dot(w, values[r]) / (12.0 * self.h[j]) if len(r) else 0.0
        return grad


def stencil_plan(theta, h, lower=None, upper=None, active=None) -> StencilPlan:
    theta = np.asarray(theta, dtype=float)
    d = theta.size
    h = np.broadcast_to(np.asarray(h, dtype=float), (d,)).copy()
    if np.any(h <= 0):
        raise DomainError("stencil steps must be > 0")
    lo = np.full(d, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    hi = np.full(d, np.inf) if upper is None else np.asarray(upper, dtype=float)
    act = np.ones(d, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    points = [theta.copy()]
    rows, weights = [], []
    one_sided = np.zeros(d, dtype=bool)
    for j in range(d):
        if not act[j]:
            rows.append(np.zeros(0, dtype=int))
            weights.append(np.zeros(0))
            continue
        if theta[j] - 2 * h[j] >= lo[j] and theta[j] + 2 * h[j] <= hi[j]:
            offs, w = CENTRAL
        elif theta[j] + 4 * h[j] <= hi[j]:
            offs, w = FORWARD
            one_sided[j] = True
        elif theta[j] - 4 * h[j] >= lo[j]:
            offs, w = BACKWARD
            one_sided[j] = True
        else:
            raise DomainError(f"box too narrow for a stencil along coordinate {j}")
        r = []
        for o in offs:
            if o == 0.0:
                r.append(0)
                continue
            x = theta.copy()
            x[j] += o * h[j]
            r.append(len(points))
            points.append(x)
        rows.append(np.array(r, dtype=int))
        weights.append(w)
    return StencilPlan(np.array(points), rows, weights, h, one_sided)


@dataclass
class GradientResult:
    grad: np.ndarray
    value: float
    one_sided: np.ndarray
    failed: np.ndarray


def stencil_gradient(loss: Callable, theta, h, lower=None, upper=None) -> GradientResult:
    """Coordinate-wise ``(f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h``.

    Exact for polynomials of degree four. Where the box ``[lower, upper]``
    leaves no room for the central stencil a one-sided fourth-order formula is
    used and flagged. Coordinates whose stencil touches a non-finite loss get
    a NaN derivative and are flagged in ``failed``.
    """
    plan = stencil_plan(theta, h, lower, upper)
    values = np.array([float(loss(x)) for x in plan.points])
    grad = plan.combine(values)
    failed = np.array([not np.all(np.isfinite(values[r])) for r in plan.rows], dtype=bool)
    grad[failed] = np.nan
    return GradientResult(grad, float(values[0]), plan.one_sided, failed)


# A batched loss takes (problem index per row, points) and returns one value per row.
BatchLoss = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class GDResult:
    x: np.ndarray
    losses: list[float]
    status: str
    iterations: int
    one_sided_steps: int = 0
    lr_halvings: int = 0
    notes: list[str] = field(default_factory=list)


def projected_gd(
    batch_loss: BatchLoss,
    x0,
    lower,
    upper,
    h,
    lr: float = 0.1,
    max_iters: int = 100,
    tol: float = 1e-4,
    patience: int = 5,
    loss_floor: float = 0.0,
    max_halvings: int = 20,
    lr_max: float = 1e3,
    armijo: float = 1e-4,
    active=None,
    bb_steps: bool = True,
) -> list[GDResult]:
    """Projected gradient descent on ``G`` independent problems at once.

    ``x0``, ``lower``, ``upper`` are ``(G, d)``; ``h`` is ``(d,)`` or ``(G, d)``.
    Each accepted step satisfies the Armijo condition, so every loss curve
    is non-increasing. A problem stops when its loss reaches ``loss_floor``,
    when the loss improved by less than ``tol`` (relative) over the last
    ``patience`` iterations, when backtracking exhausts ``max_halvings``, or
    at ``max_iters``. The first trial step is ``lr``; later ones use the
    Barzilai-Borwein length ``s.s / s.y`` from the previous accepted step when
    ``bb_steps`` is set and that quotient is positive, else double the last
    accepted step (capped at ``lr_max``). Each rejection halves the trial.
    """
    x = np.array(x0, dtype=float, ndmin=2)
    G, d = x.shape
    lo = np.broadcast_to(np.asarray(lower, dtype=float), (G, d))
    hi = np.broadcast_to(np.asarray(upper, dtype=float), (G, d))
    hh = np.broadcast_to(np.asarray(h, dtype=float), (G, d))
    act = np.ones(d, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    if np.any(x < lo) or np.any(x > hi):
        raise DomainError("starting point outside the box")

    f = batch_loss(np.arange(G), x.copy())
    results = [GDResult(x[g].copy(), [float(f[g])], "running", 0) for g in range(G)]
    step = np.full(G, float(lr))
    prev: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    running = []
    for g in range(G):
        if not np.isfinite(f[g]):
            results[g].status = "failed"
            results[g].notes.append("non-finite loss at the starting point")
        elif f[g] <= loss_floor:
            results[g].status = "converged"
        else:
            running.append(g)

    for it in range(max_iters):
        if not running:
            break
        plans = [stencil_plan(x[g], hh[g], lo[g], hi[g], act) for g in running]
        ids = np.concatenate([np.full(len(pl.points) - 1, g) for g, pl in zip(running, plans)])
        pts = np.concatenate([pl.points[1:] for pl in plans])
        vals = batch_loss(ids, pts) if len(ids) else np.zeros(0)
        grads = {}
        off = 0
        for g, pl in zip(running, plans):
            m = len(pl.points) - 1
            v = np.concatenate([[f[g]], vals[off:off + m]])
            off += m
            gr = pl.combine(v)
            bad = ~np.isfinite(gr)
            if np.any(bad):
                results[g].notes.append(f"iter {it}: non-finite stencil loss on coords {np.flatnonzero(bad).tolist()}")
                gr[bad] = 0.0
            if np.any(pl.one_sided):
                results[g].one_sided_steps += 1
            grads[g] = gr
            if bb_steps and g in prev:
                s_vec = x[g] - prev[g][0]
                y_vec = gr - prev[g][1]
                sy = float(np.dot(s_vec, y_vec))
                if sy > 0:
                    step[g] = min(float(np.dot(s_vec, s_vec)) / sy, lr_max)

        searching = [g for g in running if np.any(grads[g] != 0.0)]
        for g in running:
            if g not in searching:
                results[g].status = "converged"
        accepted = {}
        tries = 0
        while searching and tries <= max_halvings:
            cand = np.array([np.clip(x[g] - step[g] * grads[g], lo[g], hi[g]) for g in searching])
            fc = batch_loss(np.array(searching), cand)
            still = []
            for g, xc, fv in zip(searching, cand, fc):
                decrease = float(np.dot(grads[g], x[g] - xc))
                moved = np.any(xc != x[g])
                if np.isfinite(fv) and moved and fv <= f[g] - armijo * decrease:
                    accepted[g] = (xc, float(fv))
                else:
                    step[g] *= 0.5
                    results[g].lr_halvings += 1
                    still.append(g)
            searching = still
            tries += 1
        for g in searching:
            results[g].status = "stalled"
            results[g].notes.append(f"iter {it}: backtracking exhausted")

        nxt = []
        for g in running:
            if g not in accepted:
                continue
            prev[g] = (x[g].copy(), grads[g])
            x[g], f[g] = accepted[g]
            step[g] = min(step[g] * 2.0, lr_max)
            r = results[g]
            r.losses.append(f[g])
            r.iterations += 1
            if f[g] <= loss_floor:
                r.status = "converged"
            elif len(r.losses) > patience and (
                r.losses[-1 - patience] - r.losses[-1] < tol * r.losses[-1 - patience]
            ):
                r.status = "converged"
            else:
                nxt.append(g)
        running = nxt

    for g in running:
        results[g].status = "max_iters"
    for g in range(G):
        results[g].x = x[g].copy()
    if all(r.status == "failed" for r in results):
        raise NumericalError("gradient descent failed for every problem: non-finite starting loss")
    return results

"""Impulsive integration of the BCG models.

Doses happen at times known in advance, so the integrator simply stops at
each one, adds the dose to ``B`` and restarts. Between doses an embedded
Dormand-Prince 5(4) pair with error control advances the state.

Two entry points:

* :func:`integrate` returns a full :class:`Trajectory` with dense output.
* :func:`final_tumor_many` evaluates only the end-of-course tumor burden for
  many (parameter, patient) rows at once; this is the hot loop of fitting.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import ConfigError, DivergenceError, DomainError, NumericalError, StiffnessError
from .model import STATE_NAMES, ParameterSet, State6, TreatmentProtocol, impulse_times

log = logging.getLogger(__name__)

MODEL_KINDS = {"bcg6": K.MODEL6, "original4": K.MODEL4}

_threads = 1


def set_threads(n: int) -> None:
    """Number of worker threads used by :func:`final_tumor_many`."""
    global _threads
    if int(n) < 1:
        raise ConfigError(f"threads must be >= 1, got {n!r}")
    _threads = int(n)


def get_threads() -> int:
    return _threads


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and step controls for the embedded Runge-Kutta pair.

    ``fixed_step`` switches off error control and takes equal steps of at
    most that size inside every inter-dose segment. ``output_dt`` is the
    spacing of the grid used by :meth:`Trajectory.grid`; ``None`` exports
    the raw accepted steps.
    """

    rtol: float = 1e-8
    atol: float = 1e-6
    initial_step: float | None = None
    max_step: float | None = None
    output_dt: float | None = None
    fixed_step: float | None = None

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ConfigError(f"tolerances must be > 0 (rtol={self.rtol!r}, atol={self.atol!r})")
        for name in ("initial_step", "max_step", "output_dt", "fixed_step"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be > 0 when given, got {v!r}")

    def kernel_args(self):
        return (
            self.rtol,
            self.atol,
            0.0 if self.initial_step is None else self.initial_step,
            math.inf if self.max_step is None else self.max_step,
            0.0 if self.fixed_step is None else self.fixed_step,
        )


@dataclass
class Trajectory:
    """Accepted steps of one integration, including pre/post dose pairs.

    ``t`` is non-decreasing; a time appears twice exactly at a dose, first
    with the pre-impulse state and then with the post-impulse state.
    ``min_preclamp`` is the most negative component produced by a step
    before clamping to zero (0.0 if none was clamped). ``dense[i]`` holds the
    continuous-extension term of the step ending at row ``i``.
    """

    t: np.ndarray
    y: np.ndarray
    f: np.ndarray
    event_times: list[float]
    config: SolverConfig
    min_preclamp: float = 0.0
    n_accepted: int = 0
    n_rejected: int = 0
    n_rhs: int = 0
    events: list[tuple[int, int]] = field(default_factory=list)
    dense: np.ndarray | None = None

    @property
    def t_span(self) -> tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])

    @property
    def clamp_ok(self) -> bool:
        return self.min_preclamp >= -10.0 * self.config.atol

    def state(self, i: int) -> State6:
        return State6.from_array(self.y[i])

    def sample_at(self, t: float) -> State6:
        return sample_at(self, t)

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Output-grid rows: grid points plus pre/post rows at each dose."""
        if self.config.output_dt is None:
            return self.t.copy(), self.y.copy()
        t0, t1 = self.t_span
        n = int(math.floor((t1 - t0) / self.config.output_dt + 1e-9))
        grid = [t0 + k * self.config.output_dt for k in range(n + 1)]
        if grid[-1] < t1:
            grid.append(t1)
        ev = set(self.event_times)
        rows_t, rows_y = [], []
        pending = sorted(self.events)
        gi = 0
        for pre, post in pending + [(None, None)]:
            te = math.inf if pre is None else self.t[pre]
            while gi < len(grid) and grid[gi] < te:
                if grid[gi] not in ev:
                    rows_t.append(grid[gi])
                    rows_y.append(sample_at(self, grid[gi]).as_array())
                gi += 1
            if pre is None:
                break
            rows_t.extend([self.t[pre], self.t[post]])
            rows_y.extend([self.y[pre], self.y[post]])
            while gi < len(grid) and grid[gi] == te:
                gi += 1
        return np.asarray(rows_t, dtype=float), np.asarray(rows_y, dtype=float)

    def to_csv(self, fh=None) -> str | None:
        """Write ``t,B,E,T_i,T_u,H_u,H_i`` rows; return text if ``fh`` is None."""
        out = io.StringIO() if fh is None else fh
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("t",) + STATE_NAMES)
        ts, ys = self.grid()
        for t, y in zip(ts, ys):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in y])
        return out.getvalue() if fh is None else None


def _raise_for(status: int, t: float, h: float, y) -> None:
    state = np.array(y, dtype=float)
    if status == K.STIFF:
        raise StiffnessError(f"step size underflow (h={h:.3e}) at t={t:.6g}", t, h, state)
    if status == K.DIVERGED:
        raise DivergenceError(f"state became non-finite near t={t:.6g}", t, state)
    if status == K.MAXSTEPS:
        raise NumericalError(f"step limit exceeded near t={t:.6g}")
    raise NumericalError(f"integrator failed with status {status} near t={t:.6g}")


def integrate(
    params: ParameterSet,
    state0: State6,
    t_span: tuple[float, float],
    config: SolverConfig | None = None,
    protocol: TreatmentProtocol | None = None,
) -> Trajectory:
    """Integrate the six-population model over ``t_span`` with exact dosing.

    Doses are taken from ``protocol`` (default: the one carried by
    ``params``); every dose time inside ``[t0, t1]`` produces a pre/post
    pair in the trajectory.
    """
    config = config or SolverConfig()
    protocol = protocol or params.protocol
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not (math.isfinite(t0) and math.isfinite(t1) and t0 < t1):
        raise DomainError(f"t_span must satisfy t0 < t1, got {t_span!r}")
    if not isinstance(state0, State6):
        state0 = State6.from_array(state0)
    p = params.as_array()
    rtol, atol, h0, hmax, fixed = config.kernel_args()
    events = [te for te in impulse_times(protocol) if t0 <= te <= t1]

    cap = 256
    ts = np.empty(cap)
    ys = np.empty((cap, 6))
    fs = np.empty((cap, 6))
    ds = np.zeros((cap, 6))
    work = np.empty((10, 6))
    stats = np.zeros(4)
    y = state0.as_array()
    f = np.empty(6)
    K.rhs6_into(y, p, f)
    ts[0], ys[0], fs[0] = t0, y, f
    n = 1
    h = h0
    pairs = []

    def run_segment(ta, tb):
        nonlocal ts, ys, fs, ds, cap, n, h
        while True:
            y_save, f_save, s_save = y.copy(), f.copy(), stats.copy()
            st, rows, h_new = K.segment(K.MODEL6, p, 0.0, ta, tb, y, f, h, rtol, atol, hmax, fixed,
                                        True, ts, ys, fs, ds, n, stats, work)
            if st == K.CAPACITY:
                cap *= 4
                ts = np.resize(ts, cap)
                ys = np.resize(ys, (cap, 6))
                fs = np.resize(fs, (cap, 6))
                ds = np.resize(ds, (cap, 6))
                y[:], f[:], stats[:] = y_save, f_save, s_save
                continue
            if st != K.OK:
                _raise_for(st, ts[rows - 1] if rows else ta, h_new, y)
            n = rows
            h = h_new
            return

    t_cur = t0
    for te in events:
        if te > t_cur:
            run_segment(t_cur, te)
            t_cur = te
        if n + 1 >= cap:
            cap *= 4
            ts, ys, fs = np.resize(ts, cap), np.resize(ys, (cap, 6)), np.resize(fs, (cap, 6))
            ds = np.resize(ds, (cap, 6))
        y[0] += protocol.dose
        K.rhs6_into(y, p, f)
        ts[n], ys[n], fs[n], ds[n] = te, y, f, 0.0
        pairs.append((n - 1, n))
        n += 1
    if t1 > t_cur:
        run_segment(t_cur, t1)

    traj = Trajectory(
        t=ts[:n].copy(), y=ys[:n].copy(), f=fs[:n].copy(), event_times=events, config=config,
        min_preclamp=float(stats[3]), n_accepted=int(stats[0]), n_rejected=int(stats[1]),
        n_rhs=int(stats[2]), events=pairs, dense=ds[:n].copy(),
    )
    if not traj.clamp_ok:
        log.warning("clamped a component at %.3e (limit %.3e)", traj.min_preclamp, -10 * atol)
    return traj


def sample_at(traj: Trajectory, t: float) -> State6:
    """State at time ``t`` from the integrator's fourth-order dense output.

    Falls back to cubic Hermite between steps without a stored extension
    term. At a dose time the post-impulse state is returned.
    """
    t0, t1 = traj.t_span
    if not (t0 <= t <= t1):
        raise DomainError(f"t={t!r} outside trajectory span [{t0}, {t1}]")
    i = int(np.searchsorted(traj.t, t, side="right")) - 1
    if traj.t[i] == t or i == len(traj.t) - 1:
        return State6.from_array(np.maximum(traj.y[i], 0.0))
    ta, tb = traj.t[i], traj.t[i + 1]
    h = tb - ta
    s = (t - ta) / h
    y0, y1 = traj.y[i], traj.y[i + 1]
    r2 = y1 - y0
    r3 = h * traj.f[i] - r2
    r4 = r2 - h * traj.f[i + 1] - r3
    r5 = traj.dense[i + 1] if traj.dense is not None else 0.0
    y = y0 + s * (r2 + (1 - s) * (r3 + s * (r4 + (1 - s) * r5)))
    return State6.from_array(np.maximum(y, 0.0))


def final_tumor_many(
    params: np.ndarray,
    y0: np.ndarray,
    t_end: np.ndarray,
    config: SolverConfig | None = None,
    model: str = "bcg6",
    threads: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """End-of-course ``T_i + T_u`` for each row; rows are independent.

    ``params`` is ``(M, 17)`` in :data:`model.PARAM_NAMES` order, ``y0`` is
    ``(M, 6)`` and ``t_end`` is ``(M,)``. Returns ``(values, status)`` where a
    failed row has value NaN and a non-zero status code. Output does not
    depend on ``threads``.
    """
    config = config or SolverConfig()
    kind = MODEL_KINDS[model]
    params = np.ascontiguousarray(params, dtype=float)
    y0 = np.ascontiguousarray(y0, dtype=float)
    t_end = np.ascontiguousarray(np.broadcast_to(t_end, (params.shape[0],)), dtype=float)
    m = params.shape[0]
    out = np.empty(m)
    status = np.zeros(m, dtype=np.int64)
    args = config.kernel_args()
    nthreads = _threads if threads is None else int(threads)
    if nthreads <= 1 or m < 64:
        K.final_tumor_batch(kind, params, y0, t_end, *args, out, status)
        return out, status
    bounds = np.linspace(0, m, nthreads + 1).astype(int)

    def work(i):
        a, b = bounds[i], bounds[i + 1]
        o, s = out[a:b], status[a:b]
        K.final_tumor_batch(kind, params[a:b], y0[a:b], t_end[a:b], *args, o, s)

    with ThreadPoolExecutor(max_workers=nthreads) as pool:
        list(pool.map(work, range(nthreads)))
    return out, status

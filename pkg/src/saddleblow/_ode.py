"""Batched explicit Runge-Kutta integration with per-row step control.

Every row of the state array is an independent initial value problem; rows
share right-hand-side evaluations but keep their own time, step size and
termination status. Row results depend only on that row's data, so the
batch composition does not change any trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

RUNNING, ESCAPED, CONVERGED, TIME_BUDGET, NUMERICAL_ERROR = range(5)

# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array(_A[6] + [0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

Rhs = Callable[[NDArray], NDArray]


@dataclass
class OdeOptions:
    method: str = "adaptive"
    h: float = 1e-2
    rtol: float = 1e-9
    atol: float = 1e-12
    t_max: float = 100.0
    max_step: float = np.inf
    max_steps: int = 1_000_000


@dataclass
class OdeResult:
    t: NDArray
    y: NDArray
    fy: NDArray
    status: NDArray
    n_steps: int


def _hermite(y0, f0, y1, f1, h, theta):
    t2 = theta * theta
    t3 = t2 * theta
    return (
        (2 * t3 - 3 * t2 + 1) * y0
        + (t3 - 2 * t2 + theta) * h * f0
        + (-2 * t3 + 3 * t2) * y1
        + (t3 - t2) * h * f1
    )


def _locate(event, y0, f0, y1, f1, h) -> tuple[float, NDArray]:
    """Bisect ``event`` along the cubic Hermite interpolant of one step."""
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if event(_hermite(y0, f0, y1, f1, h, mid)[None, :])[0] > 0:
            hi = mid
        else:
            lo = mid
    return hi, _hermite(y0, f0, y1, f1, h, hi)


def _initial_step(y, f, opts: OdeOptions) -> NDArray:
    scale = opts.atol + opts.rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2, axis=1))
    d1 = np.sqrt(np.mean((f / scale) ** 2, axis=1))
    h = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    return np.minimum(h, min(opts.max_step, opts.t_max))


def integrate(
    rhs: Rhs,
    y0: NDArray,
    opts: OdeOptions,
    check: Callable[[NDArray, NDArray], NDArray],
    post: Callable[[NDArray], NDArray] | None = None,
    event: Callable[[NDArray], NDArray] | None = None,
    record: Callable[[NDArray, NDArray, NDArray, NDArray], None] | None = None,
) -> OdeResult:
    """Integrate ``y' = rhs(y)`` row by row until each row stops.

    Parameters
    ----------
    check
        ``check(y, rhs(y))`` returns a status code per row (``RUNNING`` to
        continue). Called on the initial state and after every accepted step.
    post
        Optional projection applied to every accepted state.
    event
        Optional scalar function, positive outside the region of interest.
        When a step ends with status ``ESCAPED`` the crossing is located on
        the step's Hermite interpolant and the row is cut there.
    record
        Called as ``record(rows, t, y, fy)`` with the accepted rows.
    """
    y = np.array(y0, dtype=float, copy=True)
    n = y.shape[0]
    t = np.zeros(n)
    fy = rhs(y)
    status = np.asarray(check(y, fy), dtype=int).copy()
    status[~np.all(np.isfinite(y), axis=1)] = NUMERICAL_ERROR
    if record is not None:
        record(np.arange(n), t.copy(), y.copy(), fy.copy())
    adaptive = opts.method == "adaptive"
    h = _initial_step(y, fy, opts) if adaptive else np.full(n, opts.h)
    n_steps = 0
    while True:
        idx = np.flatnonzero(status == RUNNING)
        if idx.size == 0:
            break
        if n_steps >= opts.max_steps:
            status[idx] = NUMERICAL_ERROR
            break
        n_steps += 1
        Y = y[idx]
        F = fy[idx]
        T = t[idx]
        hh = np.minimum(np.minimum(h[idx], opts.max_step), opts.t_max - T)
        H = hh[:, None]
        if adaptive:
            K = [F]
            for s in range(1, 7):
                incr = sum(a * K[j] for j, a in enumerate(_A[s]) if a != 0.0)
                K.append(rhs(Y + H * incr))
            Ynew = Y + H * sum(b * K[j] for j, b in enumerate(_B5) if b != 0.0)
            Fnew = K[6]
            err = H * sum(e * K[j] for j, e in enumerate(_E) if e != 0.0)
            scale = opts.atol + opts.rtol * np.maximum(np.abs(Y), np.abs(Ynew))
            errn = np.sqrt(np.mean((err / scale) ** 2, axis=1))
            errn = np.where(np.isfinite(errn), errn, np.inf)
            accept = errn <= 1.0
            factor = np.clip(0.9 * np.maximum(errn, 1e-10) ** -0.2, 0.2, 5.0)
            factor = np.where(accept, factor, np.minimum(factor, 1.0))
            h[idx] = hh * factor
        else:
            k1 = F
            k2 = rhs(Y + 0.5 * H * k1)
            k3 = rhs(Y + 0.5 * H * k2)
            k4 = rhs(Y + H * k3)
            Ynew = Y + H / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            Fnew = None
            accept = np.ones(idx.size, dtype=bool)

        bad = ~np.all(np.isfinite(Ynew), axis=1) & accept
        underflow = ~accept & (hh < 1e-14 * (1.0 + np.abs(T)))
        status[idx[bad | underflow]] = NUMERICAL_ERROR
        acc = np.flatnonzero(accept & ~bad)
        if acc.size == 0:
            continue
        rows = idx[acc]
        Yacc = Ynew[acc]
        if post is not None:
            Yacc = post(Yacc)
        Facc = rhs(Yacc) if (post is not None or Fnew is None) else Fnew[acc]
        Tacc = T[acc] + hh[acc]
        st = np.asarray(check(Yacc, Facc), dtype=int).copy()
        st[~np.all(np.isfinite(Facc), axis=1)] = NUMERICAL_ERROR
        if event is not None:
            for j in np.flatnonzero(st == ESCAPED):
                theta, yc = _locate(event, Y[acc[j]], F[acc[j]], Yacc[j], Facc[j], hh[acc[j]])
                if post is not None:
                    yc = post(yc[None, :])[0]
                Yacc[j] = yc
                Facc[j] = rhs(yc[None, :])[0]
                Tacc[j] = T[acc[j]] + theta * hh[acc[j]]
        done_time = (st == RUNNING) & (Tacc >= opts.t_max * (1 - 1e-15))
        st[done_time] = TIME_BUDGET
        t[rows] = Tacc
        y[rows] = Yacc
        fy[rows] = Facc
        status[rows] = st
        if record is not None:
            record(rows, Tacc, Yacc, Facc)
    return OdeResult(t=t, y=y, fy=fy, status=status, n_steps=n_steps)

"""Gradient flow, blown-up flow, limit-set diagnostics and avoidance experiments."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from os import PathLike
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import trapezoid
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from . import _ode
from .blowup import BlowupField, CylinderPoint, field_batch
from .errors import DomainError, InsufficientTail, NonpositiveValues, NumericalError
from .objective import HomogeneousPoly, Objective

MIN_TAIL = 50
TAIL_FRACTION = 0.2
MC_CHUNK = 50


class Termination(str, Enum):
    ESCAPED = "Escaped"
    CONVERGED = "Converged"
    TIME_BUDGET = "TimeBudget"
    NUMERICAL_ERROR = "NumericalError"


_STATUS = {
    _ode.ESCAPED: Termination.ESCAPED,
    _ode.CONVERGED: Termination.CONVERGED,
    _ode.TIME_BUDGET: Termination.TIME_BUDGET,
    _ode.NUMERICAL_ERROR: Termination.NUMERICAL_ERROR,
}


@dataclass
class FlowConfig:
    """Integration settings.

    ``integrator`` is ``"adaptive"`` (Dormand-Prince 5(4) with ``rtol`` and
    ``atol``) or ``"rk4"`` (fixed step ``h``).
    """

    integrator: str = "adaptive"
    h: float = 1e-2
    rtol: float = 1e-9
    atol: float = 1e-12
    t_max: float = 100.0
    stop_radius: float = 1.0
    grad_tol: float = 1e-8
    renormalize_sphere: bool = True
    max_step: float = math.inf
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.integrator not in ("adaptive", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.integrator == "rk4" and not self.h > 0:
            raise ValueError("rk4 needs a positive step h")
        if self.integrator == "adaptive" and not (self.rtol > 0 and self.atol > 0):
            raise ValueError("adaptive integration needs positive tolerances")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if not self.stop_radius > 0:
            raise ValueError("stop_radius must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")

    def ode_options(self) -> _ode.OdeOptions:
        return _ode.OdeOptions(
            method=self.integrator,
            h=self.h,
            rtol=self.rtol,
            atol=self.atol,
            t_max=self.t_max,
            max_step=self.max_step,
            max_steps=self.max_steps,
        )


@dataclass
class Trajectory:
    """Sampled solution of a flow.

    For gradient flows ``states`` holds ``w`` and ``grad_norms`` holds
    ``|grad f(w)|``. For blown-up flows ``states`` holds ``(r, u)``,
    ``values`` holds ``f(w* + r u)`` and ``grad_norms`` holds ``|X(r, u)|``.
    """

    t: NDArray
    states: NDArray
    values: NDArray
    grad_norms: NDArray
    termination: Termination
    kind: str = "gradient"
    center: NDArray | None = None

    @property
    def arc_length(self) -> float:
        if len(self.t) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(self.states, axis=0), axis=1)))

    @property
    def samples(self) -> list[tuple[float, NDArray, float, float]]:
        return list(zip(self.t.tolist(), list(self.states), self.values.tolist(), self.grad_norms.tolist()))

    def columns(self) -> list[str]:
        m = self.states.shape[1]
        if self.kind == "blowup":
            names = ["r"] + [f"u{j}" for j in range(m - 1)]
        else:
            names = [f"w{j}" for j in range(m)]
        return ["t", *names, "f", "grad_norm"]

    def rows(self) -> NDArray:
        return np.column_stack([self.t, self.states, self.values, self.grad_norms])

    def to_csv(self, path: str | PathLike) -> None:
        write_csv(path, self.columns(), self.rows())


def write_csv(path: str | PathLike, header: list[str], rows: NDArray) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for row in rows:
            out.writerow([format(float(x), ".17g") for x in row])


def _recorder(n_dim: int):
    store: dict[str, list] = {"t": [], "y": [], "fy": []}

    def record(rows, t, y, fy):
        store["t"].append(t[0])
        store["y"].append(y[0].copy())
        store["fy"].append(fy[0].copy())

    return store, record


def _gradient_system(obj: Objective, cfg: FlowConfig, center: NDArray | None):
    def rhs(Y):
        return -obj.gradients(Y)

    R = cfg.stop_radius

    def check(Y, F):
        st = np.full(Y.shape[0], _ode.RUNNING)
        st[np.linalg.norm(F, axis=1) <= cfg.grad_tol] = _ode.CONVERGED
        if center is not None:
            st[np.linalg.norm(Y - center, axis=1) > R] = _ode.ESCAPED
        return st

    event = None
    if center is not None:

        def event(Y):
            return np.linalg.norm(Y - center, axis=1) - R

    return rhs, check, event


def integrate_gradient_flow(
    obj: Objective, w0: ArrayLike, config: FlowConfig | None = None, center: ArrayLike | None = None
) -> Trajectory:
    """Solve ``w' = -grad f(w)`` from ``w0``.

    The run stops as ``Escaped`` once ``|w - center| > stop_radius`` (only when
    ``center`` is given; the crossing time is located inside the last step),
    ``Converged`` once ``|grad f| <= grad_tol``, and ``TimeBudget`` at
    ``t_max``.
    """
    cfg = config or FlowConfig()
    w0 = np.asarray(w0, dtype=float).reshape(1, -1)
    if not np.all(np.isfinite(w0)):
        raise DomainError("initial point must be finite")
    c = None if center is None else np.asarray(center, dtype=float)
    rhs, check, event = _gradient_system(obj, cfg, c)
    store, record = _recorder(w0.shape[1])
    res = _ode.integrate(rhs, w0, cfg.ode_options(), check, event=event, record=record)
    states = np.array(store["y"])
    return Trajectory(
        t=np.array(store["t"]),
        states=states,
        values=obj.values(states),
        grad_norms=np.linalg.norm(np.array(store["fy"]), axis=1),
        termination=_STATUS[int(res.status[0])],
        kind="gradient",
        center=c,
    )


def _sphere_projection(Y):
    out = Y.copy()
    out[:, 1:] /= np.linalg.norm(out[:, 1:], axis=1, keepdims=True)
    return out


def integrate_blowup_flow(
    fld: BlowupField, pt0: CylinderPoint | tuple[float, ArrayLike], config: FlowConfig | None = None
) -> Trajectory:
    """Solve ``(r, u)' = -X(r, u)`` on the cylinder from ``pt0``.

    ``u`` is renormalized after every accepted step when
    ``renormalize_sphere`` is set. Escape means ``r`` exceeding
    ``min(stop_radius, r_max)``; convergence means ``|X| <= grad_tol``.
    """
    cfg = config or FlowConfig()
    r0, u0 = (pt0.r, pt0.u) if isinstance(pt0, CylinderPoint) else pt0
    r0 = float(r0)
    if not 0 < r0 < fld.r_max:
        raise DomainError("the blown-up flow starts at 0 < r < r_max")
    u0 = np.asarray(u0, dtype=float)
    y0 = np.concatenate([[r0], u0 / np.linalg.norm(u0)])[None, :]
    R = min(cfg.stop_radius, fld.r_max)

    def rhs(Y):
        return -field_batch(fld, Y[:, 0], Y[:, 1:])

    def check(Y, F):
        st = np.full(Y.shape[0], _ode.RUNNING)
        st[np.linalg.norm(F, axis=1) <= cfg.grad_tol] = _ode.CONVERGED
        st[Y[:, 0] > R] = _ode.ESCAPED
        return st

    def event(Y):
        return Y[:, 0] - R

    store, record = _recorder(y0.shape[1])
    post = _sphere_projection if cfg.renormalize_sphere else None
    res = _ode.integrate(rhs, y0, cfg.ode_options(), check, post=post, event=event, record=record)
    states = np.array(store["y"])
    ambient = fld.w_star[None, :] + states[:, :1] * states[:, 1:]
    return Trajectory(
        t=np.array(store["t"]),
        states=states,
        values=fld.obj.values(ambient),
        grad_norms=np.linalg.norm(np.array(store["fy"]), axis=1),
        termination=_STATUS[int(res.status[0])],
        kind="blowup",
        center=fld.w_star,
    )


# --- Monte Carlo ---------------------------------------------------------------


@dataclass
class AvoidanceReport:
    """Outcome counts of a Monte Carlo avoidance experiment.

    ``n_undecided`` lumps runs that converged to some other critical point,
    ran out of time, or failed numerically; ``undecided_breakdown`` splits it.
    """

    n_total: int
    n_escaped: int
    n_converged_to_saddle: int
    n_undecided: int
    seed: int
    radius: float
    undecided_breakdown: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def ball_sample(rng: np.random.Generator, center: NDArray, radius: float) -> NDArray:
    """One point uniform in the ball, rejecting points within ``1e-6 radius`` of the center."""
    d = center.shape[0]
    while True:
        g = rng.standard_normal(d)
        nrm = np.linalg.norm(g)
        if nrm == 0:
            continue
        rad = radius * rng.random() ** (1.0 / d)
        if rad >= radius * 1e-6:
            return center + rad * g / nrm


def initial_points(center: ArrayLike, radius: float, n: int, seed: int) -> NDArray:
    """Initial conditions; point ``i`` uses its own stream keyed by ``(seed, i)``."""
    c = np.asarray(center, dtype=float)
    pts = np.empty((n, c.shape[0]))
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        pts[i] = ball_sample(rng, c, radius)
    return pts


def monte_carlo_avoidance(
    obj: Objective,
    w_star: ArrayLike,
    radius: float,
    n: int,
    config: FlowConfig | None = None,
    seed: int = 0,
    threads: int = 1,
) -> AvoidanceReport:
    """Integrate the gradient flow from ``n`` random points near ``w*`` and tally outcomes.

    Trajectories are processed in fixed chunks, so the counts do not depend
    on ``threads``.
    """
    cfg = config or FlowConfig()
    c = np.asarray(w_star, dtype=float)
    if not radius < cfg.stop_radius:
        raise DomainError("sampling radius must be below the stop radius")
    pts = initial_points(c, radius, n, seed)
    rhs, check, event = _gradient_system(obj, cfg, c)
    opts = cfg.ode_options()

    def run(chunk: NDArray) -> _ode.OdeResult:
        return _ode.integrate(rhs, chunk, opts, check, event=event)

    chunks = [pts[i : i + MC_CHUNK] for i in range(0, n, MC_CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(ch) for ch in chunks]
    status = np.concatenate([r.status for r in results]) if results else np.zeros(0, int)
    final = np.concatenate([r.y for r in results]) if results else np.zeros((0, c.shape[0]))
    near = np.linalg.norm(final - c, axis=1) <= 10.0 * math.sqrt(cfg.grad_tol)
    conv = status == _ode.CONVERGED
    breakdown = {
        "converged_elsewhere": int(np.sum(conv & ~near)),
        "time_budget": int(np.sum(status == _ode.TIME_BUDGET)),
        "numerical_error": int(np.sum(status == _ode.NUMERICAL_ERROR)),
    }
    return AvoidanceReport(
        n_total=int(n),
        n_escaped=int(np.sum(status == _ode.ESCAPED)),
        n_converged_to_saddle=int(np.sum(conv & near)),
        n_undecided=sum(breakdown.values()),
        seed=int(seed),
        radius=float(radius),
        undecided_breakdown=breakdown,
    )


# --- diagnostics -----------------------------------------------------------------


@dataclass
class OmegaDiagnostics:
    tail_points: NDArray
    tail_diameter: float
    omega2_directions: NDArray
    p_tail_oscillation: float
    r_sup: float | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "tail_points": self.tail_points.tolist(),
            "tail_diameter": self.tail_diameter,
            "omega2_directions": self.omega2_directions.tolist(),
            "p_tail_oscillation": self.p_tail_oscillation,
            "r_sup": self.r_sup,
        }


def _tail(traj: Trajectory) -> slice:
    n = len(traj.t)
    start = n - int(math.ceil(TAIL_FRACTION * n))
    if n - start < MIN_TAIL:
        raise InsufficientTail(f"tail has {n - start} samples, need {MIN_TAIL}")
    return slice(start, n)


def _cluster_centers(points: NDArray, radius: float) -> NDArray:
    if len(points) == 0:
        return points
    tree = cKDTree(points)
    label = np.full(len(points), -1)
    centers = []
    for i in range(len(points)):
        if label[i] >= 0:
            continue
        members = [j for j in tree.query_ball_point(points[i], radius) if label[j] < 0]
        label[members] = i
        centers.append(points[members].mean(axis=0))
    return np.array(centers)


def omega_diagnostics(
    traj: Trajectory,
    fld: BlowupField | None = None,
    w_star: ArrayLike | None = None,
    P: HomogeneousPoly | None = None,
    cluster_radius: float = 1e-2,
) -> OmegaDiagnostics:
    """Tail statistics approximating the limit set and the limit directions.

    The tail is the last 20% of samples. Directions are ``u`` for blown-up
    trajectories and ``(w - w*) / |w - w*|`` otherwise. The oscillation of
    ``p`` over the tail directions is reported when a leading polynomial is
    available (from ``fld`` or ``P``), otherwise it is NaN.
    """
    sl = _tail(traj)
    tail = traj.states[sl]
    P = P if P is not None else (fld.P if fld is not None else None)
    r_sup = None
    if traj.kind == "blowup":
        dirs = tail[:, 1:]
        r_sup = float(np.max(np.abs(traj.states[:, 0])))
    else:
        c = w_star if w_star is not None else (fld.w_star if fld is not None else traj.center)
        if c is None:
            raise DomainError("a center is needed for direction statistics")
        rel = tail - np.asarray(c, dtype=float)
        nrm = np.linalg.norm(rel, axis=1)
        keep = nrm > 0
        dirs = rel[keep] / nrm[keep, None]
    diam = float(pdist(tail).max()) if len(tail) > 1 else 0.0
    scale = max(1.0, float(np.max(np.abs(tail))))
    osc = float("nan")
    if P is not None and len(dirs):
        pv = P.values(dirs)
        osc = float(pv.max() - pv.min())
    centers = _cluster_centers(dirs, cluster_radius)
    if len(centers):
        centers = centers / np.linalg.norm(centers, axis=1, keepdims=True)
    return OmegaDiagnostics(
        tail_points=_cluster_centers(tail, cluster_radius * scale),
        tail_diameter=diam,
        omega2_directions=centers,
        p_tail_oscillation=osc,
        r_sup=r_sup,
    )


@dataclass
class DecayProfile:
    arc_length: float
    exponent: float
    window: tuple[float, float]


def value_decay_profile(traj: Trajectory, c: float) -> DecayProfile:
    """Least-squares slope of ``log(f - c)`` against ``log t`` on the tail.

    Raises
    ------
    InsufficientTail
        If the tail has fewer than 50 samples at positive times.
    NonpositiveValues
        If ``f - c <= 0`` somewhere on the tail.
    """
    sl = _tail(traj)
    t = traj.t[sl]
    h = traj.values[sl] - c
    pos = t > 0
    if np.sum(pos) < MIN_TAIL:
        raise InsufficientTail("tail needs samples at positive times")
    if np.any(h[pos] <= 0):
        raise NonpositiveValues("f - c must be positive on the tail")
    slope = float(np.polyfit(np.log(t[pos]), np.log(h[pos]), 1)[0])
    return DecayProfile(arc_length=traj.arc_length, exponent=slope, window=(float(t[pos][0]), float(t[-1])))


def energy_bound(traj: Trajectory) -> tuple[float, float]:
    """``(arc_length^2, t_span * int |grad f|^2 dt)`` by the trapezoid rule."""
    if len(traj.t) < 2:
        return 0.0, 0.0
    span = float(traj.t[-1] - traj.t[0])
    integral = float(trapezoid(traj.grad_norms**2, traj.t))
    return traj.arc_length**2, span * integral

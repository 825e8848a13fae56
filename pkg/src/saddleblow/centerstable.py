"""Lipschitz center-stable graphs of a perturbed linear map by the graph transform.

For an invertible ``T`` split as ``E1 + E2`` (eigenvalue moduli ``<= 1`` and
``> 1``), and a map ``f`` with ``f(0) = 0`` whose deviation ``f - T`` has a
small Lipschitz constant, the set of points whose forward orbits stay in the
cone ``S1 = {|x|_1 >= |y|_2}`` is the graph of a 1-Lipschitz ``g: E1 -> E2``.
The graph is the fixed point of ``g -> (alpha_2 o (id, g)) o (alpha_1 o (id, g))^-1``
with ``alpha = f^-1`` in split coordinates.

Maps act on rows: a callback receives an ``(n, m)`` array and returns one.
Points of ``E1`` and ``E2`` are represented by their coordinates in the
orthonormal Schur bases ``Q1`` and ``Q2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray
from scipy.interpolate import RegularGridInterpolator

from .errors import (
    BoxEscape,
    ContractionFailure,
    DomainError,
    HypothesisViolated,
    IllConditioned,
    MaxIterations,
    NoUnstableDirection,
    OrbitOverflow,
    RootFindFailure,
)

RowMap = Callable[[NDArray], NDArray]

_MAX_TRUNC = 1 << 14
# eigenvalue moduli up to 1 + UNIT_CIRCLE_TOL count as the center-stable part
UNIT_CIRCLE_TOL = 1e-10


def _power_stack(M: NDArray, scale: float, n: int) -> NDArray:
    """``scale**j M**j`` for ``j = 0..n``."""
    out = np.empty((n + 1,) + M.shape)
    out[0] = np.eye(M.shape[0])
    for j in range(1, n + 1):
        out[j] = scale * (M @ out[j - 1])
    return out


def _sup_norms(stack: NDArray, X: NDArray) -> NDArray:
    if stack.shape[1] == 0:
        return np.zeros(X.shape[0])
    return np.linalg.norm(np.einsum("kij,bj->bki", stack, X), axis=2).max(axis=1)


@dataclass
class LinearSplitting:
    """Spectral splitting of ``T`` with adapted norms on both parts.

    ``Q1`` and ``Q2`` are orthonormal bases of ``E1`` and ``E2``; ``T1`` and
    ``T2`` are the restrictions of ``T`` in those bases. The adapted norms are
    ``|x|_1 = max_n theta^-n |T1^n x|`` and ``|y|_2 = max_n mu^n |T2^-n y|``
    over ``0 <= n <= n_trunc``.
    """

    T: NDArray
    Q1: NDArray
    Q2: NDArray
    T1: NDArray
    T2: NDArray
    theta: float
    rho: float
    mu: float
    n_trunc: int
    _stack1: NDArray = field(repr=False, default=None)
    _stack2: NDArray = field(repr=False, default=None)

    def __post_init__(self):
        self._basis = np.hstack([self.Q1, self.Q2])
        self._coords = np.linalg.inv(self._basis)
        self._stack1 = _power_stack(self.T1, 1.0 / self.theta, self.n_trunc)
        T2inv = np.linalg.inv(self.T2) if self.n2 else self.T2
        self._stack2 = _power_stack(T2inv, self.mu, self.n_trunc)

    @property
    def dim(self) -> int:
        return self.T.shape[0]

    @property
    def n1(self) -> int:
        return self.Q1.shape[1]

    @property
    def n2(self) -> int:
        return self.Q2.shape[1]

    def split(self, Z: ArrayLike) -> tuple[NDArray, NDArray]:
        """Coordinates ``(x, y)`` of rows of ``Z`` in the bases of ``E1`` and ``E2``."""
        C = np.atleast_2d(np.asarray(Z, dtype=float)) @ self._coords.T
        return C[:, : self.n1], C[:, self.n1 :]

    def join(self, X: ArrayLike, Y: ArrayLike) -> NDArray:
        return np.hstack([np.atleast_2d(X), np.atleast_2d(Y)]) @ self._basis.T

    def norm1(self, X: ArrayLike) -> NDArray:
        return _sup_norms(self._stack1, np.atleast_2d(np.asarray(X, dtype=float)))

    def norm2(self, Y: ArrayLike) -> NDArray:
        return _sup_norms(self._stack2, np.atleast_2d(np.asarray(Y, dtype=float)))

    def norm(self, Z: ArrayLike) -> NDArray:
        """Adapted product norm ``max(|x|_1, |y|_2)`` of rows of ``Z``."""
        X, Y = self.split(Z)
        return np.maximum(self.norm1(X), self.norm2(Y))

    def truncation_gap(self) -> float:
        """Largest relative change of the adapted norms on the basis vectors when depth is halved."""
        half = self.n_trunc // 2
        gaps = []
        for stack, n in ((self._stack1, self.n1), (self._stack2, self.n2)):
            if n == 0:
                continue
            E = np.eye(n)
            full = _sup_norms(stack, E)
            short = _sup_norms(stack[: half + 1], E)
            gaps.append(float(np.max((full - short) / full)))
        return max(gaps, default=0.0)

    def operator_bounds(self) -> tuple[float, float]:
        """Upper bounds on ``|T|`` and ``|T^-1|`` in the adapted product norm.

        On ``E1`` the truncated-sup construction gives ``|T1| <= theta`` and
        ``|T1^-1| <= max(|T1^-1|_euc, theta^-1)``; on ``E2`` it gives
        ``|T2| <= max(|T2|_euc, mu)`` and ``|T2^-1| <= mu^-1``.
        """
        norm_T = [self.mu if self.n2 == 0 else max(np.linalg.norm(self.T2, 2), self.mu)]
        norm_Tinv = [1.0 / self.mu]
        if self.n1:
            norm_T.append(self.theta)
            norm_Tinv.append(max(np.linalg.norm(np.linalg.inv(self.T1), 2), 1.0 / self.theta))
        return float(max(norm_T)), float(max(norm_Tinv))


def _schur_basis(T: NDArray, inside: bool) -> NDArray:
    cut = 1.0 + UNIT_CIRCLE_TOL
    if inside:
        sort = lambda re, im: re * re + im * im <= cut * cut  # noqa: E731
    else:
        sort = lambda re, im: re * re + im * im > cut * cut  # noqa: E731
    _, Z, n = scipy.linalg.schur(T, output="real", sort=sort)
    Q = Z[:, :n]
    # sign convention: largest-magnitude entry of each column is positive
    piv = np.argmax(np.abs(Q), axis=0)
    return Q * np.sign(Q[piv, np.arange(Q.shape[1])])


def split_spectrum(
    T: ArrayLike, theta_frac: float = 1.0 / 3.0, rho_frac: float = 2.0 / 3.0, n_trunc: int = 64
) -> LinearSplitting:
    """Split ``T`` into its ``|lambda| <= 1`` and ``|lambda| > 1`` invariant subspaces.

    ``mu`` is the square root of the smallest eigenvalue modulus above one,
    ``theta = mu**theta_frac`` and ``rho = mu**rho_frac``. The truncation depth
    is raised from ``n_trunc`` until the tail terms of both adapted norms are
    dominated, which makes ``|T x|_1 <= theta |x|_1`` and ``|T y|_2 >= mu |y|_2``
    hold exactly.

    Raises
    ------
    NoUnstableDirection
        If every eigenvalue has modulus at most one.
    IllConditioned
        If ``T`` is singular or the two subspaces are nearly parallel.
    """
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise DomainError("T must be square")
    if not 0 < theta_frac < rho_frac < 1:
        raise DomainError("need 0 < theta_frac < rho_frac < 1")
    mods = np.abs(np.linalg.eigvals(T))
    if mods.min() == 0 or np.linalg.cond(T) > 1e14:
        raise IllConditioned("T is singular")
    unstable = mods[mods > 1.0 + UNIT_CIRCLE_TOL]
    if unstable.size == 0:
        raise NoUnstableDirection("T has no eigenvalue of modulus greater than one")
    mu = float(np.sqrt(unstable.min()))
    theta, rho = mu**theta_frac, mu**rho_frac
    Q1 = _schur_basis(T, inside=True)
    Q2 = _schur_basis(T, inside=False)
    if Q1.shape[1] and np.min(scipy.linalg.subspace_angles(Q1, Q2)) < 1e-8:
        raise IllConditioned("stable and unstable subspaces are nearly parallel")
    T1 = Q1.T @ T @ Q1
    T2 = Q2.T @ T @ Q2
    T2inv = np.linalg.inv(T2)
    n = n_trunc
    while True:
        with np.errstate(over="ignore", invalid="ignore"):
            tail1 = np.linalg.norm(np.linalg.matrix_power(T1 / theta, n + 1), 2) if Q1.shape[1] else 0.0
            tail2 = np.linalg.norm(np.linalg.matrix_power(T2inv * mu, n + 1), 2)
        if tail1 <= 1.0 and tail2 <= 1.0:
            break
        n *= 2
        if n > _MAX_TRUNC:
            raise IllConditioned("adapted norms need an excessive truncation depth")
    return LinearSplitting(T=T, Q1=Q1, Q2=Q2, T1=T1, T2=T2, theta=theta, rho=rho, mu=mu, n_trunc=n)


def eta_budget(splitting: LinearSplitting, safety: float = 0.9) -> float:
    """Largest admissible ``Lip(f - T)``, times ``safety``.

    With ``a = |T^-1|`` and ``eta_hat = 2 a^2 eta``, the conditions are
    ``2 eta < 1/a``, ``|T| eta_hat < 1``,
    ``(1/mu + 2 eta_hat) / (1/theta - eta_hat) < 1``,
    ``1/theta - eta_hat > 1/rho``, ``theta + eta < rho`` and ``rho < mu - eta``.
    """
    s = splitting
    norm_T, a = s.operator_bounds()
    c = 2 * a * a
    limits = [
        1.0 / (2 * a),
        1.0 / (norm_T * c),
        (1 / s.theta - 1 / s.mu) / (3 * c),
        (1 / s.theta - 1 / s.rho) / c,
        s.rho - s.theta,
        s.mu - s.rho,
    ]
    return safety * float(min(limits))


def eta_hat(splitting: LinearSplitting, eta: float) -> float:
    return 2 * splitting.operator_bounds()[1] ** 2 * eta


def contraction_bound(splitting: LinearSplitting, eta: float) -> float:
    """Graph-transform contraction factor ``(1/mu + 2 eta_hat) / (1/theta - eta_hat)``."""
    eh = eta_hat(splitting, eta)
    return (1 / splitting.mu + 2 * eh) / (1 / splitting.theta - eh)


def _smooth_step(t: NDArray) -> NDArray:
    """``C^inf`` step: 0 for ``t <= 0``, 1 for ``t >= 1``."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1 - t, 1.0)), 0.0)
    return a / (a + b)


def bump(V: ArrayLike) -> NDArray:
    """Smooth bump of the row norms: 1 on the unit ball, 0 outside the 2-ball."""
    r = np.linalg.norm(np.atleast_2d(V), axis=1)
    return 1.0 - _smooth_step(r - 1.0)


def _jacobians(F: RowMap, Z: NDArray, step: float = 1e-6) -> NDArray:
    n, m = Z.shape
    J = np.empty((n, m, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = step
        J[:, :, j] = (F(Z + e) - F(Z - e)) / (2 * step)
    return J


def _operator_norms(J: NDArray, splitting: LinearSplitting | None, seed: int = 0) -> NDArray:
    """Per-matrix operator norms, Euclidean or estimated in the adapted product norm.

    The adapted estimate maximizes ``|J v| / |v|`` over the vertices of the
    unit cube in split coordinates and 64 Gaussian directions.
    """
    if splitting is None:
        return np.linalg.norm(J, ord=2, axis=(1, 2))
    m = J.shape[1]
    verts = np.array(list(product((-1.0, 1.0), repeat=m))) if m <= 10 else np.empty((0, m))
    rng = np.random.default_rng(seed)
    C = np.vstack([verts, np.eye(m), rng.standard_normal((64, m))])
    V = splitting.join(C[:, : splitting.n1], C[:, splitting.n1 :])
    den = splitting.norm(V)
    out = np.empty(J.shape[0])
    for i, Ji in enumerate(J):
        out[i] = np.max(splitting.norm(V @ Ji.T) / den)
    return out


def lipschitz_deviation(
    f: RowMap,
    T: ArrayLike,
    radius: float,
    splitting: LinearSplitting | None = None,
    n_samples: int = 400,
    seed: int = 0,
) -> float:
    """Sampled estimate of ``sup |D(f - T)|`` over the Euclidean ``radius``-ball.

    The operator norm is Euclidean, or the adapted product norm when a
    splitting is given.
    """
    T = np.asarray(T, dtype=float)
    m = T.shape[0]
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_samples, m))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    Z = dirs * (radius * rng.random(n_samples) ** (1.0 / m))[:, None]
    Z = np.vstack([np.zeros((1, m)), Z])
    J = _jacobians(lambda W: f(W) - W @ T.T, Z)
    return float(np.max(_operator_norms(J, splitting, seed)))


def bump_localize(h: RowMap, T: ArrayLike, s: float, splitting: LinearSplitting | None = None, n_samples: int = 400, seed: int = 0) -> tuple[RowMap, float]:
    """``f_s(z) = T z + bump(z / s) h(z)`` and a sampled ``Lip(f_s - T)`` over the ``2s``-ball."""
    if not s > 0:
        raise DomainError("bump scale must be positive")
    T = np.asarray(T, dtype=float)

    def f_s(Z: NDArray) -> NDArray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return Z @ T.T + bump(Z / s)[:, None] * h(Z)

    return f_s, lipschitz_deviation(f_s, T, 2 * s, splitting, n_samples, seed)


@dataclass
class GraphFunction:
    """Piecewise multilinear ``g: E1 -> E2`` on a rectangular grid.

    ``values`` has shape ``grid_shape + (n2,)``. Outside the grid box the
    argument is clamped to the box, which preserves the Lipschitz constant.
    """

    axes: list[NDArray]
    values: NDArray

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=float) for a in self.axes]
        self._interp = RegularGridInterpolator(self.axes, self.values, method="linear")

    @classmethod
    def zero(cls, axes: list[NDArray], n2: int) -> "GraphFunction":
        return cls(axes, np.zeros(tuple(len(a) for a in axes) + (n2,)))

    @property
    def nodes(self) -> NDArray:
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @property
    def node_values(self) -> NDArray:
        return self.values.reshape(-1, self.values.shape[-1])

    def with_node_values(self, V: NDArray) -> "GraphFunction":
        return GraphFunction(self.axes, np.asarray(V).reshape(self.values.shape))

    def __call__(self, X: ArrayLike) -> NDArray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lo = np.array([a[0] for a in self.axes])
        hi = np.array([a[-1] for a in self.axes])
        return self._interp(np.clip(X, lo, hi))

    def to_csv_rows(self) -> NDArray:
        return np.hstack([self.nodes, self.node_values])


def make_grid(n1: int, half_width: float, n_nodes: int) -> list[NDArray]:
    """Symmetric axes with an odd node count so the origin is a node."""
    if n1 not in (1, 2):
        raise DomainError("graph grids support dim(E1) in {1, 2}")
    if n_nodes < 3 or n_nodes % 2 == 0:
        raise DomainError("n_nodes must be odd and at least 3")
    ax = np.linspace(-half_width, half_width, n_nodes)
    ax[n_nodes // 2] = 0.0
    return [ax.copy() for _ in range(n1)]


@dataclass
class GraphProblem:
    """A map ``f`` near the linear ``T`` of ``splitting``, with grid settings.

    ``lip_dev`` is ``Lip(f - T)`` in the adapted product norm; it must be
    below ``eta_budget(splitting)``.
    """

    splitting: LinearSplitting
    f: RowMap
    lip_dev: float
    half_width: float = 2.5
    n_nodes: int = 101
    pad: float = 1.5
    invert_tol: float = 1e-12
    root_tol: float = 1e-13
    max_inner: int = 500

    def __post_init__(self):
        if not self.lip_dev < eta_budget(self.splitting):
            raise HypothesisViolated(
                f"Lip(f - T) = {self.lip_dev:.3e} exceeds the budget {eta_budget(self.splitting):.3e}"
            )

    @classmethod
    def build(
        cls,
        T: ArrayLike,
        f: RowMap,
        half_width: float = 2.5,
        n_nodes: int = 101,
        lip_dev: float | None = None,
        lip_radius: float | None = None,
        seed: int = 0,
        **kwargs,
    ) -> "GraphProblem":
        """Split ``T`` and measure ``Lip(f - T)`` unless declared."""
        sp = split_spectrum(T)
        if lip_dev is None:
            radius = lip_radius if lip_radius is not None else 1.5 * half_width * np.sqrt(sp.dim)
            lip_dev = lipschitz_deviation(f, sp.T, radius, sp, seed=seed)
        return cls(splitting=sp, f=f, lip_dev=lip_dev, half_width=half_width, n_nodes=n_nodes, **kwargs)

    @property
    def eta_hat(self) -> float:
        return eta_hat(self.splitting, self.lip_dev)

    @property
    def contraction_bound(self) -> float:
        return contraction_bound(self.splitting, self.lip_dev)

    def grid(self) -> list[NDArray]:
        return make_grid(self.splitting.n1, self.half_width, self.n_nodes)

    def forward(self, Z: NDArray) -> NDArray:
        return np.asarray(self.f(np.atleast_2d(Z)), dtype=float)


def invert_map(problem: GraphProblem, z0: ArrayLike, max_iter: int | None = None) -> NDArray:
    """Solve ``f(z) = z0`` row-wise by iterating ``z -> z - T^-1 f(z) + T^-1 z0``.

    Raises
    ------
    ContractionFailure
        If the iteration diverges or stalls, or the residual stays large.
    """
    Z0 = np.atleast_2d(np.asarray(z0, dtype=float))
    sp = problem.splitting
    Tinv = np.linalg.inv(sp.T)
    max_iter = problem.max_inner if max_iter is None else max_iter
    Z = Z0 @ Tinv.T
    scale = 1.0 + sp.norm(Z0)
    prev = np.inf
    for _ in range(max_iter):
        Znew = Z - (problem.forward(Z) - Z0) @ Tinv.T
        step = sp.norm(Znew - Z) / scale
        Z = Znew
        worst = float(np.max(step))
        if not np.isfinite(worst) or worst > 1e3 * max(prev, 1e-300) and worst > 1.0:
            raise ContractionFailure("map inversion diverged; is Lip(f - T) misdeclared?")
        prev = worst
        if worst <= problem.invert_tol:
            break
    else:
        raise ContractionFailure(f"map inversion did not converge (last step {prev:.3e})")
    resid = np.linalg.norm(problem.forward(Z) - Z0, axis=1)
    if np.any(resid > 1e-10 * (1.0 + np.linalg.norm(Z0, axis=1))):
        raise ContractionFailure(f"inversion residual {resid.max():.3e}")
    return Z


def _alpha(problem: GraphProblem, X: NDArray, Y: NDArray) -> tuple[NDArray, NDArray]:
    sp = problem.splitting
    return sp.split(invert_map(problem, sp.join(X, Y)))


def graph_transform(problem: GraphProblem, g: GraphFunction) -> GraphFunction:
    """One application of the graph transform at every grid node.

    The preimage ``x`` of a node ``x'`` under ``h(x) = alpha_1(x, g(x))`` is
    found by the contraction ``x -> x - T1 (h(x) - x')`` seeded at ``T1 x'``.

    Raises
    ------
    RootFindFailure
        If the preimage iteration does not converge.
    BoxEscape
        If a preimage leaves the padded grid box.
    """
    sp = problem.splitting
    Xp = g.nodes
    X = Xp @ sp.T1.T
    limit = problem.pad * problem.half_width
    for _ in range(problem.max_inner):
        if np.any(np.abs(X) > limit):
            raise BoxEscape("graph-transform preimage left the padded box")
        A1, _ = _alpha(problem, X, g(X))
        Xnew = X - (A1 - Xp) @ sp.T1.T
        step = float(np.max(sp.norm1(Xnew - X) / (1.0 + sp.norm1(Xp))))
        X = Xnew
        if not np.isfinite(step):
            raise RootFindFailure("preimage iteration produced non-finite values")
        if step <= problem.root_tol:
            break
    else:
        raise RootFindFailure(f"preimage iteration did not converge (last step {step:.3e})")
    if np.any(np.abs(X) > limit):
        raise BoxEscape("graph-transform preimage left the padded box")
    _, A2 = _alpha(problem, X, g(X))
    return g.with_node_values(A2)


def graph_distance(problem: GraphProblem, g1: GraphFunction, g2: GraphFunction) -> float:
    """``max |g1(x) - g2(x)|_2 / |x|_1`` over the nonzero grid nodes."""
    sp = problem.splitting
    X = g1.nodes
    nx = sp.norm1(X)
    keep = nx > 0
    diff = sp.norm2(g1.node_values - g2.node_values)
    return float(np.max(diff[keep] / nx[keep]))


def graph_lipschitz(problem: GraphProblem, g: GraphFunction) -> float:
    """Largest ``|g(a) - g(b)|_2 / |a - b|_1`` over grid-adjacent node pairs."""
    sp = problem.splitting
    k = len(g.axes)
    n2 = g.values.shape[-1]
    best = 0.0
    for axis in range(k):
        dv = np.diff(g.values, axis=axis)
        shape = [1] * k
        shape[axis] = -1
        dx = np.broadcast_to(np.diff(g.axes[axis]).reshape(shape), dv.shape[:-1])
        unit = np.zeros((1, k))
        unit[0, axis] = 1.0
        ratios = sp.norm2(dv.reshape(-1, n2)) / (dx.reshape(-1) * sp.norm1(unit)[0])
        best = max(best, float(np.max(ratios)))
    return best


@dataclass
class CenterStableResult:
    graph: GraphFunction
    distances: list[float]
    ratios: list[float]
    iterations: int
    bound: float

    @property
    def max_ratio(self) -> float:
        return max(self.ratios, default=0.0)


def solve_center_stable(
    problem: GraphProblem, tol: float = 1e-11, max_iter: int = 300, ratio_floor: float = 1e-9
) -> CenterStableResult:
    """Iterate the graph transform from ``g = 0`` until successive graphs agree to ``tol``.

    ``ratios`` holds successive distance ratios while the distances exceed
    ``ratio_floor``, below which they are dominated by rounding.

    Raises
    ------
    MaxIterations
        With the last contraction ratio when ``max_iter`` is reached.
    """
    sp = problem.splitting
    g = GraphFunction.zero(problem.grid(), sp.n2)
    distances: list[float] = []
    ratios: list[float] = []
    for it in range(1, max_iter + 1):
        g_new = graph_transform(problem, g)
        d = graph_distance(problem, g, g_new)
        if distances and distances[-1] > ratio_floor:
            ratios.append(d / distances[-1])
        distances.append(d)
        g = g_new
        if d <= tol:
            return CenterStableResult(g, distances, ratios, it, problem.contraction_bound)
    err = MaxIterations(f"graph transform not converged after {max_iter} iterations (distance {distances[-1]:.3e})")
    err.last_ratio = ratios[-1] if ratios else float("nan")
    raise err


def graph_point(problem: GraphProblem, g: GraphFunction, x: ArrayLike, depth: int = 40) -> NDArray:
    """A point of the center-stable set with ``E1`` coordinate close to ``x``.

    The graph point over ``x`` is pushed forward ``depth`` steps, snapped back
    onto the graph, and pulled back by ``f^-1``; the pull-back contracts the
    ``E2`` error of the interpolated graph by about ``mu^-depth``.
    """
    sp = problem.splitting
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Z = sp.join(X, g(X))
    for _ in range(depth):
        Z = problem.forward(Z)
    Xn, _ = sp.split(Z)
    Z = sp.join(Xn, g(Xn))
    for _ in range(depth):
        Z = invert_map(problem, Z)
    return Z[0] if np.ndim(x) == 1 else Z


@dataclass
class Membership:
    on_graph: bool
    growth: NDArray
    growth_max: float
    bound: float
    exit_step: int | None
    distance_to_graph: float
    low_confidence: bool

    def to_json(self) -> dict:
        return {
            "on_graph": self.on_graph,
            "growth_max": self.growth_max,
            "bound": self.bound,
            "exit_step": self.exit_step,
            "distance_to_graph": self.distance_to_graph,
            "low_confidence": self.low_confidence,
        }


def membership_test(
    problem: GraphProblem, g: GraphFunction, z: ArrayLike, n_max: int = 50, bound: float | None = None
) -> Membership:
    """Forward-orbit growth ``rho^-n |f^n(z)|`` and ``S1`` exit step of ``z``.

    ``z`` is predicted on the graph when the growth stays below ``bound``
    (default ``10 max(1, |z|)``). ``exit_step`` is the first ``n`` with
    ``|x_n|_1 < |y_n|_2``. Points outside the grid box are flagged
    ``low_confidence`` because the graph there is extrapolated.

    Raises
    ------
    OrbitOverflow
        If the orbit exceeds ``1e150``; such a point is off the graph.
    """
    sp = problem.splitting
    Z = np.atleast_2d(np.asarray(z, dtype=float))
    growth = np.empty(n_max + 1)
    exit_step = None
    for n in range(n_max + 1):
        X, Y = sp.split(Z)
        nx, ny = sp.norm1(X)[0], sp.norm2(Y)[0]
        size = max(nx, ny)
        if not np.isfinite(size) or size > 1e150:
            raise OrbitOverflow(f"orbit overflowed at step {n}")
        growth[n] = size * sp.rho ** (-n)
        if exit_step is None and nx < ny:
            exit_step = n
        if n < n_max:
            Z = problem.forward(Z)
    X0, Y0 = sp.split(np.atleast_2d(np.asarray(z, dtype=float)))
    bound = 10.0 * max(1.0, growth[0]) if bound is None else bound
    gmax = float(growth.max())
    return Membership(
        on_graph=bool(gmax <= bound),
        growth=growth,
        growth_max=gmax,
        bound=float(bound),
        exit_step=exit_step,
        distance_to_graph=float(sp.norm2(Y0 - g(X0))[0]),
        low_confidence=bool(np.any(np.abs(X0) > problem.half_width)),
    )


def quadratic_perturbation(coef: float, target: int, source: int) -> RowMap:
    """``h(z) = coef z[source]^2 e_target``."""

    def h(Z: NDArray) -> NDArray:
        out = np.zeros_like(Z)
        out[:, target] = coef * Z[:, source] ** 2
        return out

    return h

"""The blown-up gradient field on the cylinder R x S^{d-1}.

With polar coordinates ``w = w* + r u`` the gradient field of ``f`` (for the
metric ``g = I + r^2 B``) is rescaled by ``r^(2-k)``. The rescaled field
``X`` extends to ``r = 0`` where it equals ``(0, grad p(u))``, and its
linearization at a rest point ``(0, u*)`` has spectrum
``{k p(u*)} U sigma(tangent Hessian of p at u*)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import linear_sum_assignment

from .errors import DomainError, MetricSingular, NotCritical
from .objective import HomogeneousPoly, Objective, leading_term
from .sphere import SphereCritPoint, sphere_grad, tangent_basis

Vector = NDArray[np.float64]
Matrix = NDArray[np.float64]

# below this radius the field is evaluated by its r = 0 extension; the
# extension is Lipschitz in r, and r^(1-k) would overflow for tiny r
EXTENSION_RADIUS = 1e-12


@dataclass(frozen=True)
class EuclideanMetric:
    """The flat metric; the perturbation field is identically zero."""


@dataclass(frozen=True)
class PerturbedMetric:
    """Metric ``g = I + r^2 B(w)`` for a symmetric-matrix-valued callback ``B``."""

    B: Callable[[Vector], ArrayLike]


MetricField = Union[EuclideanMetric, PerturbedMetric]


@dataclass(frozen=True)
class CylinderPoint:
    r: float
    u: Vector


@dataclass
class MetricBlocks:
    """Blocks of the pulled-back metric at ``(r, u)``.

    ``alpha`` is stored as the ambient ``d x d`` matrix ``pi_u B pi_u``; it
    acts on tangent vectors at ``u``.
    """

    lam: float
    v: Vector
    alpha: Matrix
    w: Vector
    c: float


def _B_at(B: Callable[[Vector], ArrayLike] | None, point: Vector) -> Matrix:
    d = point.shape[0]
    if B is None:
        return np.zeros((d, d))
    M = np.asarray(B(point.copy()), dtype=float).reshape(d, d)
    return 0.5 * (M + M.T)


def pullback_metric_blocks(
    B: Callable[[Vector], ArrayLike] | None, r: float, u: ArrayLike, center: ArrayLike | None = None
) -> MetricBlocks:
    """Metric blocks ``lambda, v, alpha, w, c`` at ``(r, u)``.

    ``B`` is evaluated at ``center + r u`` (``center`` defaults to the origin);
    ``None`` stands for the Euclidean metric.

    Raises
    ------
    MetricSingular
        If ``I + r^2 alpha`` is singular on the tangent space or the
        denominator of ``c`` is at most ``1e-12``.
    """
    u = np.asarray(u, dtype=float)
    d = u.shape[0]
    base = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    Bm = _B_at(B, base + r * u)
    proj = np.eye(d) - np.outer(u, u)
    lam = float(u @ Bm @ u)
    v = proj @ (Bm @ u)
    alpha = proj @ Bm @ proj
    Bt = tangent_basis(u)
    M = np.eye(d - 1) + r * r * (Bt.T @ Bm @ Bt)
    if d > 1 and np.linalg.cond(M) > 1e12:
        raise MetricSingular(f"I + r^2 alpha is singular at r = {r}")
    w = Bt @ np.linalg.solve(M, Bt.T @ v) if d > 1 else np.zeros(d)
    den = 1.0 + r * r * lam - r**4 * float(v @ w)
    if den <= 1e-12:
        raise MetricSingular(f"metric denominator {den:.3e} at r = {r}")
    return MetricBlocks(lam=lam, v=v, alpha=alpha, w=w, c=1.0 / den)


@dataclass
class BlowupField:
    """Blown-up field of ``obj`` around the critical point ``w_star``."""

    obj: Objective
    w_star: Vector
    k: int
    P: HomogeneousPoly
    metric: MetricField = field(default_factory=EuclideanMetric)
    r_max: float = 1.0

    @classmethod
    def build(
        cls,
        obj: Objective,
        w_star: ArrayLike,
        metric: MetricField | None = None,
        rho: float = 1.0,
        n_dirs: int = 64,
        seed: int = 0,
    ) -> "BlowupField":
        """Extract the leading term and, for perturbed metrics, bisect ``r_max``.

        ``r_max`` is the largest radius up to ``rho`` at which the metric blocks
        stay nonsingular along ``n_dirs`` sampled directions.
        """
        w_star = np.asarray(w_star, dtype=float)
        k, P = leading_term(obj, w_star)
        metric = metric or EuclideanMetric()
        r_max = float(rho)
        if isinstance(metric, PerturbedMetric):
            rng = np.random.default_rng(seed)
            dirs = rng.standard_normal((n_dirs, obj.dim))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            r_max = min(_singular_radius(metric.B, w_star, u, rho) for u in dirs)
        return cls(obj=obj, w_star=w_star, k=k, P=P, metric=metric, r_max=r_max)

    @property
    def B(self) -> Callable[[Vector], ArrayLike] | None:
        return self.metric.B if isinstance(self.metric, PerturbedMetric) else None


def _singular_radius(B, center: Vector, u: Vector, rho: float, n_bisect: int = 40) -> float:
    def ok(r):
        try:
            pullback_metric_blocks(B, r, u, center)
            return True
        except MetricSingular:
            return False

    if ok(rho):
        return rho
    lo, hi = 0.0, rho
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return 0.99 * lo


def _lifted(fld: BlowupField, r: float, u: Vector) -> tuple[float, Vector]:
    g = fld.obj.gradient(fld.w_star + r * u)
    d1 = float(g @ u)
    if fld.B is None:
        return d1, (g - d1 * u) / r
    blocks = pullback_metric_blocks(fld.B, r, u, fld.w_star)
    grad_r = r * (g - d1 * u)
    inner = d1 - r * float(blocks.w @ grad_r)
    a = blocks.c * inner
    Bt = tangent_basis(u)
    M = np.eye(u.shape[0] - 1) + r * r * (Bt.T @ _B_at(fld.B, fld.w_star + r * u) @ Bt)
    solved = Bt @ np.linalg.solve(M, Bt.T @ grad_r)
    z = -blocks.c * r * inner * blocks.w + solved / (r * r)
    return a, z


def lifted_gradient_components(fld: BlowupField, r: float, u: ArrayLike) -> tuple[float, Vector]:
    """Radial and tangential components ``(a, z)`` of the lifted gradient.

    Raises
    ------
    DomainError
        If ``r <= 0``.
    """
    if not r > 0:
        raise DomainError("lifted gradient needs r > 0")
    return _lifted(fld, float(r), np.asarray(u, dtype=float))


def _field(fld: BlowupField, r: float, u: Vector) -> tuple[float, Vector]:
    """``X(r, u)`` for any real ``r``; negative ``r`` is used only for differencing."""
    if abs(r) < EXTENSION_RADIUS:
        return 0.0, sphere_grad(fld.P, u)
    a, z = _lifted(fld, r, u)
    scale = r ** (2 - fld.k)
    return scale * a, scale * z


def vector_field(fld: BlowupField, pt: CylinderPoint | tuple[float, ArrayLike]) -> tuple[float, Vector]:
    """The extended field ``X = (X1, X2)`` at a point of the cylinder."""
    r, u = (pt.r, pt.u) if isinstance(pt, CylinderPoint) else pt
    r = float(r)
    if r < 0:
        raise DomainError("the blown-up field is exposed for r >= 0 only")
    return _field(fld, r, np.asarray(u, dtype=float))


def field_batch(fld: BlowupField, R: NDArray, U: NDArray) -> NDArray:
    """``X`` at many points, stacked as rows ``(X1, X2)`` of shape ``(n, 1 + d)``."""
    R = np.asarray(R, dtype=float)
    U = np.asarray(U, dtype=float)
    out = np.empty((U.shape[0], U.shape[1] + 1))
    if fld.B is not None:
        for i in range(U.shape[0]):
            x1, x2 = _field(fld, float(R[i]), U[i])
            out[i, 0] = x1
            out[i, 1:] = x2
        return out
    G = fld.obj.gradients(fld.w_star[None, :] + R[:, None] * U)
    d1 = np.einsum("ij,ij->i", G, U)
    tang = G - d1[:, None] * U
    zero = np.abs(R) < EXTENSION_RADIUS
    Rs = np.where(zero, 1.0, R)
    out[:, 0] = np.where(zero, 0.0, Rs ** (2 - fld.k) * d1)
    out[:, 1:] = tang * (Rs ** (1 - fld.k))[:, None]
    if zero.any():
        P = fld.P
        Uz = U[zero]
        out[zero, 1:] = P.gradients(Uz) - P.degree * P.values(Uz)[:, None] * Uz
    return out


def _exp_map(u: Vector, v: Vector) -> Vector:
    t = np.linalg.norm(v)
    if t == 0:
        return u.copy()
    return np.cos(t) * u + np.sin(t) * (v / t)


def linearization_spectrum(
    fld: BlowupField, crit: SphereCritPoint | ArrayLike, step: float | None = None, crit_tol: float | None = None
) -> NDArray[np.complex128]:
    """Eigenvalues of the Jacobian of ``X`` at the rest point ``(0, u*)``.

    The Jacobian is built by central differences in the chart
    ``(r, s) -> (r, exp_{u*}(E s))`` where ``E`` is the tangent basis at
    ``u*``; tangent components of ``X`` are read off through ``E^T``. The
    default step is ``1e-5 (1 + |k p(u*)|)``. Eigenvalues are returned sorted
    by real then imaginary part.

    Raises
    ------
    NotCritical
        If ``u*`` is not a critical point of ``p``.
    """
    u = np.asarray(crit.u if isinstance(crit, SphereCritPoint) else crit, dtype=float)
    u = u / np.linalg.norm(u)
    P = fld.P
    tol = 1e-10 * (1.0 + P.max_abs_coef) if crit_tol is None else crit_tol
    if np.linalg.norm(sphere_grad(P, u)) > tol:
        raise NotCritical("not critical: u* is not a critical point of p")
    kp = fld.k * P(u)
    h = 1e-5 * (1.0 + abs(kp)) if step is None else step
    E = tangent_basis(u)
    d = u.shape[0]

    def chart(y: Vector) -> Vector:
        x1, x2 = _field(fld, float(y[0]), _exp_map(u, E @ y[1:]))
        return np.concatenate([[x1], E.T @ x2])

    J = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        J[:, j] = (chart(e) - chart(-e)) / (2 * h)
    eig = np.linalg.eigvals(J)
    return eig[np.lexsort((eig.imag, eig.real))]


def predicted_spectrum(fld: BlowupField, crit: SphereCritPoint) -> NDArray[np.complex128]:
    """``{k p(u*)}`` together with the tangent Hessian eigenvalues at ``u*``."""
    vals = np.concatenate([[fld.k * crit.value], crit.tangent_eigs]).astype(complex)
    return vals[np.lexsort((vals.imag, vals.real))]


def multiset_distance(a: ArrayLike, b: ArrayLike) -> float:
    """Largest pairing error under the optimal matching of two equal-size multisets."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        return float("inf")
    if a.size == 0:
        return 0.0
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())

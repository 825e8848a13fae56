"""Critical points of a homogeneous polynomial restricted to the unit sphere.

For a degree-k homogeneous ``P`` the restriction ``p = P|_S`` has sphere
gradient ``grad P(u) - k P(u) u`` and, at a critical point, tangent Hessian
``D^2 P(u) - k P(u) I`` on the orthogonal complement of ``u``. The saddle
verdict only needs the values and Morse indices of these critical points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree
from scipy.stats import norm, qmc

from .errors import NotCritical, SearchBudgetExhausted
from .objective import HomogeneousPoly, Objective, leading_term

Vector = NDArray[np.float64]


@dataclass
class SearchOptions:
    """Tuning knobs for the multi-start critical point search.

    ``None`` entries are replaced by scale-aware defaults: ``n_starts = 200 d``
    and ``crit_tol = 1e-10 (1 + max |coefficient|)``.
    """

    n_starts: int | None = None
    max_iter: int = 300
    newton_iter: int = 40
    crit_tol: float | None = None
    dedup_dist: float = 1e-4
    lambda_tol: float = 1e-8
    p_tol: float = 1e-10
    seed: int = 0

    def resolved(self, P: HomogeneousPoly) -> "SearchOptions":
        return replace(
            self,
            n_starts=self.n_starts if self.n_starts is not None else 200 * P.dim,
            crit_tol=self.crit_tol if self.crit_tol is not None else 1e-10 * (1.0 + P.max_abs_coef),
        )


@dataclass
class SphereCritPoint:
    u: Vector
    value: float
    grad_residual: float
    tangent_eigs: Vector
    morse_index: int
    nullity: int

    def to_json(self) -> dict[str, Any]:
        return {
            "u": [float(x) for x in self.u],
            "value": float(self.value),
            "grad_residual": float(self.grad_residual),
            "tangent_eigs": [float(x) for x in np.sort(self.tangent_eigs)],
            "morse_index": int(self.morse_index),
            "nullity": int(self.nullity),
        }


@dataclass
class SaddleReport:
    """Verdict for one critical point of an objective.

    ``tamed_basis`` records why ``tamed`` was decided: ``"nondegenerate"``
    when every critical point has nullity zero, ``"stable-isolation"`` when
    degenerate points reappeared unchanged at a second search resolution,
    and ``"unstable-isolation"`` otherwise (then ``continuum`` is set).
    The verdict is heuristic in the last two cases.
    """

    k: int
    weakly_strict: bool
    tamed: bool
    is_saddle: bool
    crit_points: list[SphereCritPoint]
    violation: SphereCritPoint | None = None
    continuum: bool = False
    tamed_basis: str = "nondegenerate"
    leading: HomogeneousPoly | None = None
    spectra: list[dict[str, Any]] | None = field(default=None)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "k": self.k,
            "weakly_strict": self.weakly_strict,
            "tamed": self.tamed,
            "tamed_basis": self.tamed_basis,
            "continuum": self.continuum,
            "is_saddle": self.is_saddle,
            "n_crit_points": len(self.crit_points),
            "crit_points": [c.to_json() for c in self.crit_points],
            "violation": None if self.violation is None else self.violation.to_json(),
        }
        if self.leading is not None:
            out["leading_poly"] = self.leading.to_json()
        if self.spectra is not None:
            out["spectra"] = self.spectra
        return out


def tangent_basis(u: ArrayLike) -> NDArray:
    """Orthonormal basis of the tangent space at ``u`` as a ``(d, d-1)`` matrix.

    Gram-Schmidt runs over the standard basis vectors with their ``u``
    component removed, skipping the axis most aligned with ``u``.
    """
    u = np.asarray(u, dtype=float)
    d = u.shape[0]
    skip = int(np.argmax(np.abs(u)))
    basis: list[Vector] = []
    for j in range(d):
        if j == skip:
            continue
        v = -u[j] * u
        v[j] += 1.0
        for b in basis:
            v -= (b @ v) * b
        v /= np.linalg.norm(v)
        basis.append(v)
    if not basis:
        return np.zeros((d, 0))
    return np.stack(basis, axis=1)


def _sphere_grads(P: HomogeneousPoly, U: NDArray) -> NDArray:
    return P.gradients(U) - P.degree * P.values(U)[:, None] * U


def sphere_grad(P: HomogeneousPoly, u: ArrayLike) -> Vector:
    """Gradient of ``p = P|_S`` at the unit vector ``u``."""
    u = np.asarray(u, dtype=float)
    return _sphere_grads(P, u[None, :])[0]


def sphere_hess(P: HomogeneousPoly, u: ArrayLike, crit_tol: float | None = None) -> NDArray:
    """Tangent Hessian of ``p`` at a critical point, in :func:`tangent_basis`.

    Raises
    ------
    NotCritical
        If the sphere gradient at ``u`` exceeds ``crit_tol``.
    """
    u = np.asarray(u, dtype=float)
    tol = 1e-10 * (1.0 + P.max_abs_coef) if crit_tol is None else crit_tol
    res = float(np.linalg.norm(sphere_grad(P, u)))
    if res > tol:
        raise NotCritical(f"not critical: sphere gradient norm {res:.3e} exceeds {tol:.3e}")
    B = tangent_basis(u)
    H = B.T @ P.hessian(u) @ B - P.degree * P(u) * np.eye(B.shape[1])
    return 0.5 * (H + H.T)


def _refine(P: HomogeneousPoly, U: NDArray, n_iter: int) -> NDArray:
    """Extra batched Newton steps toward the rounding floor, keeping each row's best iterate."""
    best = U.copy()
    best_res = np.linalg.norm(_sphere_grads(P, best), axis=1)
    V = U.copy()
    for _ in range(n_iter):
        if not np.any(best_res > 0):
            break
        V, _ = _newton(P, V, 1, 0.0)
        V = _normalize(V)
        res = np.linalg.norm(_sphere_grads(P, V), axis=1)
        better = res < best_res
        best[better] = V[better]
        best_res[better] = res[better]
    return best


def _crit_point(P: HomogeneousPoly, u: Vector, opts: SearchOptions) -> SphereCritPoint:
    """Morse data at a converged point.

    Near a degenerate critical point the residual ``r`` only pins the point
    down to a distance of order ``sqrt(r)``, and the tangent eigenvalues move
    by the same order. Eigenvalues inside that band count toward the nullity
    even when they exceed ``lambda_tol``.
    """
    H = sphere_hess(P, u, opts.crit_tol)
    eigs = np.linalg.eigvalsh(H) if H.size else np.zeros(0)
    res = float(np.linalg.norm(sphere_grad(P, u)))
    k = P.degree
    band = max(opts.lambda_tol, 4.0 * math.sqrt(2.0 * k**3 * (1.0 + P.max_abs_coef) * res))
    return SphereCritPoint(
        u=u,
        value=P(u),
        grad_residual=res,
        tangent_eigs=np.sort(eigs),
        morse_index=int(np.sum(eigs < -band)),
        nullity=int(np.sum(np.abs(eigs) <= band)),
    )


def sphere_starts(dim: int, n: int, seed: int = 0) -> NDArray:
    """Low-discrepancy sample of ``n`` points on the unit sphere in R^dim."""
    pts = qmc.Halton(d=dim, scramble=True, seed=seed).random(n)
    pts = np.clip(pts, 1e-12, 1 - 1e-12)
    gauss = norm.ppf(pts)
    return gauss / np.linalg.norm(gauss, axis=1, keepdims=True)


def _normalize(U: NDArray) -> NDArray:
    return U / np.linalg.norm(U, axis=1, keepdims=True)


def _descend(P: HomogeneousPoly, U: NDArray, sign: float, max_iter: int, tol: float) -> NDArray:
    """Riemannian gradient descent of ``sign * p`` with per-row Armijo steps."""
    U = U.copy()
    step = np.full(U.shape[0], 0.5 / (P.degree * (1.0 + P.max_abs_coef)))
    vals = sign * P.values(U)
    for _ in range(max_iter):
        G = sign * _sphere_grads(P, U)
        gnorm2 = np.einsum("ij,ij->i", G, G)
        active = gnorm2 > tol * tol
        if not active.any():
            break
        trial = _normalize(U - step[:, None] * G)
        tvals = sign * P.values(trial)
        ok = active & (tvals <= vals - 1e-4 * step * gnorm2)
        U[ok] = trial[ok]
        vals[ok] = tvals[ok]
        step = np.where(ok, step * 1.5, np.where(active, step * 0.5, step))
    return U


def _newton(P: HomogeneousPoly, U: NDArray, n_iter: int, tol: float) -> tuple[NDArray, NDArray]:
    """Projected Newton iterations on the sphere gradient, batched.

    The tangent constraint is imposed through a bordered system, solved with a
    pseudo-inverse so that degenerate critical manifolds are still reached.
    """
    U = U.copy()
    d = U.shape[1]
    k = P.degree
    res = np.linalg.norm(_sphere_grads(P, U), axis=1)
    for _ in range(n_iter):
        todo = np.flatnonzero(res > tol)
        if todo.size == 0:
            break
        V = U[todo]
        vals = P.values(V)
        G = P.gradients(V) - k * vals[:, None] * V
        M = np.zeros((todo.size, d + 1, d + 1))
        M[:, :d, :d] = P.hessians(V) - k * vals[:, None, None] * np.eye(d)
        M[:, :d, d] = V
        M[:, d, :d] = V
        rhs = np.concatenate([-G, np.zeros((todo.size, 1))], axis=1)
        sol = np.einsum("nij,nj->ni", np.linalg.pinv(M, rcond=1e-13), rhs)
        eta = sol[:, :d]
        eta -= np.einsum("ij,ij->i", eta, V)[:, None] * V
        size = np.linalg.norm(eta, axis=1)
        eta *= np.minimum(1.0, 0.5 / np.maximum(size, 1e-300))[:, None]
        U[todo] = _normalize(V + eta)
        res[todo] = np.linalg.norm(_sphere_grads(P, U[todo]), axis=1)
    return U, res


def _dedup(cands: NDArray, resid: NDArray, dist: float) -> list[int]:
    """Greedy clustering by geodesic distance after a lexicographic sort.

    Returns indices (into ``cands``) of one representative per cluster, the
    member with the smallest residual.
    """
    if len(cands) == 0:
        return []
    order = np.lexsort(cands.T[::-1])
    pts = cands[order]
    tree = cKDTree(pts)
    chord = 2.0 * math.sin(min(dist, math.pi) / 2.0)
    label = np.full(len(pts), -1)
    reps = []
    for i in range(len(pts)):
        if label[i] >= 0:
            continue
        members = [j for j in tree.query_ball_point(pts[i], chord) if label[j] < 0]
        label[members] = i
        best = min(members, key=lambda j: (resid[order[j]], j))
        reps.append(int(order[best]))
    return reps


def _search(P: HomogeneousPoly, opts: SearchOptions) -> tuple[list[SphereCritPoint], int]:
    opts = opts.resolved(P)
    d = P.dim
    n = int(opts.n_starts)
    if d == 1:
        pts = [np.array([1.0]), np.array([-1.0])]
        return [_crit_point(P, u, opts) for u in pts], n
    starts = sphere_starts(d, n, opts.seed)
    # descent on p and on -p finds extrema; the raw starts feed Newton directly
    # so that saddle-type critical points of p are reached as well
    families = [
        _descend(P, starts, 1.0, opts.max_iter, opts.crit_tol),
        _descend(P, starts, -1.0, opts.max_iter, opts.crit_tol),
        starts,
    ]
    runs = np.concatenate(families, axis=0)
    polished, res = _newton(P, runs, opts.newton_iter, opts.crit_tol)
    polished = _normalize(polished)
    res = np.linalg.norm(_sphere_grads(P, polished), axis=1)
    ok = res <= opts.crit_tol
    n_converged = int(np.sum(ok.reshape(len(families), n).any(axis=0)))
    cands = polished[ok]
    reps = _dedup(cands, res[ok], opts.dedup_dist)
    refined = _refine(P, cands[reps], opts.newton_iter) if reps else cands[:0]
    found = [_crit_point(P, u, opts) for u in refined]
    found.sort(key=lambda c: tuple(c.u))
    return found, n_converged


def find_crit_points(P: HomogeneousPoly, options: SearchOptions | None = None) -> list[SphereCritPoint]:
    """Critical points of ``p = P|_S`` found by multi-start search.

    Raises
    ------
    SearchBudgetExhausted
        If fewer than a tenth of the starts converged.
    """
    opts = (options or SearchOptions()).resolved(P)
    found, n_conv = _search(P, opts)
    if n_conv < opts.n_starts / 10:
        raise SearchBudgetExhausted(f"only {n_conv} of {opts.n_starts} starts converged")
    return found


def polish(P: HomogeneousPoly, u0: ArrayLike, options: SearchOptions | None = None) -> SphereCritPoint:
    """Run projected Newton from a single start and attach Morse data."""
    opts = (options or SearchOptions()).resolved(P)
    u0 = np.asarray(u0, dtype=float)
    U, _ = _newton(P, _normalize(u0[None, :]), opts.newton_iter, opts.crit_tol)
    return _crit_point(P, _refine(P, _normalize(U), opts.newton_iter)[0], opts)


def _same_set(a: list[SphereCritPoint], b: list[SphereCritPoint], dist: float) -> bool:
    if len(a) != len(b):
        return False
    if not a:
        return True
    tree = cKDTree(np.array([c.u for c in b]))
    chord = 2.0 * math.sin(dist / 2.0)
    d, _ = tree.query(np.array([c.u for c in a]))
    return bool(np.all(d <= chord))


def classify_leading(k: int, P: HomogeneousPoly, options: SearchOptions | None = None) -> SaddleReport:
    """Weakly-strict, tamed and saddle verdicts from a leading polynomial."""
    opts = (options or SearchOptions()).resolved(P)
    crit = find_crit_points(P, opts)
    values = np.array([c.value for c in crit])
    samples = P.values(sphere_starts(P.dim, int(opts.n_starts), opts.seed + 1)) if P.dim > 1 else values
    lo = min(values.min(initial=np.inf), samples.min())
    hi = max(values.max(initial=-np.inf), samples.max())
    is_saddle = bool(lo < -opts.p_tol and hi > opts.p_tol)

    bad = [c for c in crit if c.value >= -opts.p_tol and c.morse_index < 1]
    violation = max(bad, key=lambda c: c.value) if bad else None

    continuum = False
    if all(c.nullity == 0 for c in crit):
        tamed, basis = True, "nondegenerate"
    else:
        coarse = replace(opts, n_starts=max(int(opts.n_starts) // 2, 1), seed=opts.seed + 7919)
        other, _ = _search(P, coarse)
        stable = _same_set(other, crit, 10 * opts.dedup_dist)
        tamed, basis = stable, ("stable-isolation" if stable else "unstable-isolation")
        continuum = not stable
    return SaddleReport(
        k=k,
        weakly_strict=violation is None,
        tamed=tamed,
        is_saddle=is_saddle,
        crit_points=crit,
        violation=violation,
        continuum=continuum,
        tamed_basis=basis,
        leading=P,
    )


def classify_saddle(
    obj: Objective,
    w_star: ArrayLike,
    options: SearchOptions | None = None,
    point_tol: float = 1e-8,
) -> SaddleReport:
    """Classify the critical point ``w*`` of ``obj``.

    Raises
    ------
    NotCritical
        If ``|grad f(w*)| > point_tol``.
    """
    g = obj.gradient(w_star)
    gn = float(np.linalg.norm(g))
    if gn > point_tol:
        raise NotCritical(f"not critical: |grad f(w*)| = {gn:.3e} exceeds {point_tol:.3e}")
    k, P = leading_term(obj, w_star)
    return classify_leading(k, P, options)

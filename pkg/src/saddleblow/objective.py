"""Objectives on R^d, their derivatives, and leading Taylor terms at a point.

Two kinds of objective are supported. :class:`PolynomialObjective` stores a
sparse coefficient table and is differentiated exactly;
:class:`BlackBoxObjective` wraps user callbacks and falls back to central
differences when no gradient is supplied.

The leading term at a critical point ``w*`` is the lowest-degree nonzero
homogeneous part of ``h -> f(w* + h) - f(w*)``. It is normalized as a Taylor
coefficient, so ``f(w* + h) = f(w*) + P(h) + O(|h|^(k+1))`` holds literally.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from functools import cached_property
from os import PathLike
from typing import Any, Callable, Iterable, Mapping

import numpy as np
from numpy.polynomial import chebyshev
from numpy.typing import ArrayLike, NDArray

from . import _poly
from .errors import NotCritical, NumericalError, OrderExceedsCap

Vector = NDArray[np.float64]
Matrix = NDArray[np.float64]

DEFAULT_K_MAX = 12


def _check_finite(x, what: str):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite {what}")
    return x


def _as_point(w: ArrayLike, dim: int) -> Vector:
    arr = np.asarray(w, dtype=float).reshape(-1)
    if arr.shape[0] != dim:
        raise ValueError(f"expected a point of dimension {dim}, got {arr.shape[0]}")
    return arr


class Objective(ABC):
    """A real function on R^dim with gradient and Hessian access."""

    dim: int

    @abstractmethod
    def values(self, points: NDArray) -> Vector:
        """Values at each row of an ``(n, dim)`` array."""

    @abstractmethod
    def gradients(self, points: NDArray) -> Matrix:
        """Gradients at each row of an ``(n, dim)`` array."""

    @abstractmethod
    def hessian(self, w: ArrayLike) -> Matrix:
        """Symmetric Hessian matrix at a single point."""

    def value(self, w: ArrayLike) -> float:
        w = _as_point(w, self.dim)
        return float(_check_finite(self.values(w[None, :])[0], "objective value"))

    def gradient(self, w: ArrayLike) -> Vector:
        w = _as_point(w, self.dim)
        return _check_finite(self.gradients(w[None, :])[0], "gradient")


class PolynomialObjective(Objective):
    """Exact sparse polynomial objective.

    Parameters
    ----------
    dim : int
        Number of variables.
    terms : iterable of (exponents, coefficient)
        Monomials; duplicates are summed and zero coefficients dropped.
    """

    def __init__(self, dim: int, terms: Iterable[tuple[Iterable[int], float]] | Mapping):
        if int(dim) < 1:
            raise ValueError("dimension must be positive")
        self.dim = int(dim)
        items = terms.items() if isinstance(terms, Mapping) else terms
        self.terms: _poly.Terms = _poly.collect_terms(self.dim, items)

    @cached_property
    def _compiled(self) -> _poly.CompiledPoly:
        return _poly.CompiledPoly(self.dim, self.terms)

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def values(self, points: NDArray) -> Vector:
        return self._compiled.values(points)

    def gradients(self, points: NDArray) -> Matrix:
        return self._compiled.gradients(points)

    def hessian(self, w: ArrayLike) -> Matrix:
        w = _as_point(w, self.dim)
        return _check_finite(self._compiled.hessians(w[None, :])[0], "Hessian")

    def to_json(self) -> dict[str, Any]:
        return {
            "dim": self.dim,
            "terms": [{"exps": list(e), "coef": c} for e, c in self.terms.items()],
        }

    def __repr__(self) -> str:
        return f"PolynomialObjective(dim={self.dim}, n_terms={len(self.terms)})"


class BlackBoxObjective(Objective):
    """Objective given by callbacks.

    Parameters
    ----------
    dim : int
        Number of variables.
    value_fn : callable
        Maps a length-``dim`` array to a float.
    gradient_fn : callable, optional
        Maps a length-``dim`` array to the gradient. Central differences with
        step ``h_fd * (1 + |w_j|)`` are used when omitted.
    h_fd : float
        Finite-difference step.
    """

    def __init__(
        self,
        dim: int,
        value_fn: Callable[[Vector], float],
        gradient_fn: Callable[[Vector], ArrayLike] | None = None,
        h_fd: float = 1e-6,
    ):
        if int(dim) < 1:
            raise ValueError("dimension must be positive")
        if not h_fd > 0:
            raise ValueError("h_fd must be positive")
        self.dim = int(dim)
        self.value_fn = value_fn
        self.gradient_fn = gradient_fn
        self.h_fd = float(h_fd)

    def values(self, points: NDArray) -> Vector:
        pts = np.asarray(points, dtype=float)
        return np.array([float(self.value_fn(p.copy())) for p in pts])

    def _fd_gradient(self, w: Vector) -> Vector:
        g = np.empty(self.dim)
        for j in range(self.dim):
            h = self.h_fd * (1.0 + abs(w[j]))
            wp = w.copy()
            wm = w.copy()
            wp[j] += h
            wm[j] -= h
            g[j] = (float(self.value_fn(wp)) - float(self.value_fn(wm))) / (2 * h)
        return g

    def _one_gradient(self, w: Vector) -> Vector:
        if self.gradient_fn is not None:
            return np.asarray(self.gradient_fn(w.copy()), dtype=float).reshape(self.dim)
        return self._fd_gradient(w)

    def gradients(self, points: NDArray) -> Matrix:
        pts = np.asarray(points, dtype=float)
        return np.array([self._one_gradient(p) for p in pts]).reshape(pts.shape)

    def hessian(self, w: ArrayLike) -> Matrix:
        w = _as_point(w, self.dim)
        d = self.dim
        H = np.empty((d, d))
        if self.gradient_fn is not None:
            for j in range(d):
                h = self.h_fd * (1.0 + abs(w[j]))
                wp = w.copy()
                wm = w.copy()
                wp[j] += h
                wm[j] -= h
                H[:, j] = (self._one_gradient(wp) - self._one_gradient(wm)) / (2 * h)
        else:
            f = self.value_fn
            # second differences need a larger step to stay above rounding
            steps = np.cbrt(self.h_fd) * 1e-1 * (1.0 + np.abs(w))
            f0 = float(f(w.copy()))
            for i in range(d):
                for j in range(i, d):
                    hi, hj = steps[i], steps[j]
                    if i == j:
                        wp = w.copy()
                        wm = w.copy()
                        wp[i] += hi
                        wm[i] -= hi
                        H[i, i] = (float(f(wp)) - 2 * f0 + float(f(wm))) / hi**2
                    else:
                        acc = 0.0
                        for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                            wq = w.copy()
                            wq[i] += si * hi
                            wq[j] += sj * hj
                            acc += si * sj * float(f(wq))
                        H[i, j] = H[j, i] = acc / (4 * hi * hj)
        H = 0.5 * (H + H.T)
        return _check_finite(H, "Hessian")


class HomogeneousPoly:
    """Homogeneous polynomial of degree ``degree >= 2`` in ``dim`` variables."""

    def __init__(self, dim: int, degree: int, terms: Mapping[tuple[int, ...], float] | Iterable):
        items = terms.items() if isinstance(terms, Mapping) else terms
        table = _poly.collect_terms(int(dim), items)
        if int(degree) < 2:
            raise ValueError("a leading polynomial has degree at least 2")
        if not table:
            raise ValueError("a leading polynomial must have a nonzero coefficient")
        bad = [e for e in table if sum(e) != degree]
        if bad:
            raise ValueError(f"monomials {bad[:3]} do not have degree {degree}")
        self.dim = int(dim)
        self.degree = int(degree)
        self.terms: _poly.Terms = table
        self._compiled = _poly.CompiledPoly(self.dim, table)

    @property
    def max_abs_coef(self) -> float:
        return max(abs(c) for c in self.terms.values())

    @property
    def coef_norm(self) -> float:
        return math.sqrt(sum(c * c for c in self.terms.values()))

    def coefficient(self, exps: Iterable[int]) -> float:
        return self.terms.get(tuple(int(e) for e in exps), 0.0)

    def values(self, points: NDArray) -> Vector:
        return self._compiled.values(points)

    def gradients(self, points: NDArray) -> Matrix:
        return self._compiled.gradients(points)

    def hessians(self, points: NDArray) -> NDArray:
        return self._compiled.hessians(points)

    def __call__(self, v: ArrayLike) -> float:
        return float(self.values(_as_point(v, self.dim)[None, :])[0])

    def gradient(self, v: ArrayLike) -> Vector:
        return self.gradients(_as_point(v, self.dim)[None, :])[0]

    def hessian(self, v: ArrayLike) -> Matrix:
        return self.hessians(_as_point(v, self.dim)[None, :])[0]

    def to_json(self) -> dict[str, Any]:
        return {
            "dim": self.dim,
            "degree": self.degree,
            "terms": [{"exps": list(e), "coef": c} for e, c in self.terms.items()],
        }

    def __repr__(self) -> str:
        return f"HomogeneousPoly(dim={self.dim}, degree={self.degree}, n_terms={len(self.terms)})"


def evaluate(obj: Objective, w: ArrayLike) -> float:
    """Value of ``obj`` at ``w``; raises NumericalError on a non-finite result."""
    return obj.value(w)


def gradient(obj: Objective, w: ArrayLike) -> Vector:
    return obj.gradient(w)


def hessian(obj: Objective, w: ArrayLike) -> Matrix:
    return obj.hessian(w)


# --- order of vanishing -------------------------------------------------------

_POLY_TOL = 1e-13
_BLACKBOX_TOL = 1e-6


def _shifted_terms(obj: PolynomialObjective, w_star: Vector, tol: float) -> _poly.Terms:
    shifted = _poly.shift(obj.terms, w_star)
    shifted.pop((0,) * obj.dim, None)
    if not shifted:
        return {}
    scale = 1.0 + max(abs(c) for c in shifted.values())
    return {e: c for e, c in shifted.items() if abs(c) > tol * scale}


def _probe_directions(dim: int, seed: int = 0) -> Matrix:
    eye = np.eye(dim)
    rng = np.random.default_rng(seed)
    extra = rng.standard_normal((10, dim))
    extra /= np.linalg.norm(extra, axis=1, keepdims=True)
    return np.vstack([eye, -eye, extra])


def _directional_taylor(
    obj: Objective, w_star: Vector, directions: Matrix, degree: int, radius: float
) -> tuple[Matrix, Vector]:
    """Taylor coefficients of t -> f(w* + t v) - f(w*) for each direction v.

    Returns an array ``a`` with ``a[m, j]`` the coefficient of ``t**j`` and the
    local function scale per direction.
    """
    n_nodes = degree + 8
    s = np.cos(np.pi * (np.arange(n_nodes) + 0.5) / n_nodes)
    f0 = obj.value(w_star)
    coeffs = np.zeros((len(directions), degree + 1))
    scales = np.zeros(len(directions))
    for m, v in enumerate(directions):
        pts = w_star[None, :] + radius * s[:, None] * v[None, :]
        g = _check_finite(obj.values(pts), "objective value") - f0
        cheb = chebyshev.chebfit(s, g, degree)
        mono = chebyshev.cheb2poly(cheb)
        coeffs[m, : len(mono)] = mono / radius ** np.arange(len(mono))
        scales[m] = np.max(np.abs(g))
    return coeffs, scales


def vanishing_order(
    obj: Objective,
    w_star: ArrayLike,
    k_max: int = DEFAULT_K_MAX,
    tol: float | None = None,
    probe_radius: float = 0.1,
) -> int:
    """Order of vanishing of ``f - f(w*)`` at ``w*``.

    Returns the largest ``k <= k_max`` such that all partial derivatives of
    order at most ``k - 1`` vanish, i.e. the degree of the lowest nonzero
    Taylor term. Polynomials are shifted exactly; coefficients smaller than
    ``tol`` times the coefficient scale count as zero (the default only
    absorbs rounding in ``w*``). Black boxes are probed along ``2d + 10``
    directions with Chebyshev fits of ``t -> f(w* + t v)``.
    """
    if k_max < 2:
        raise ValueError("k_max must be at least 2")
    w_star = _as_point(w_star, obj.dim)
    if isinstance(obj, PolynomialObjective):
        tol = _POLY_TOL if tol is None else tol
        shifted = _shifted_terms(obj, w_star, tol)
        if not shifted:
            raise OrderExceedsCap("f - f(w*) vanishes identically")
        k = min(sum(e) for e in shifted)
        if k > k_max:
            raise OrderExceedsCap(f"lowest nonzero term has degree {k} > k_max = {k_max}")
        return k
    tol = _BLACKBOX_TOL if tol is None else tol
    dirs = _probe_directions(obj.dim)
    coeffs, scales = _directional_taylor(obj, w_star, dirs, k_max + 2, probe_radius)
    best = None
    for m in range(len(dirs)):
        if scales[m] == 0:
            continue
        scaled = np.abs(coeffs[m]) * probe_radius ** np.arange(coeffs.shape[1])
        nz = np.flatnonzero(scaled[1 : k_max + 1] > tol * scales[m])
        if nz.size:
            j = int(nz[0]) + 1
            best = j if best is None else min(best, j)
    if best is None:
        raise OrderExceedsCap(f"no nonvanishing term up to degree {k_max} along the probes")
    return best


def _monomials(dim: int, degree: int) -> list[tuple[int, ...]]:
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(prefix + (remaining,))
            return
        for e in range(remaining, -1, -1):
            rec(prefix + (e,), remaining - e, slots - 1)

    rec((), degree, dim)
    return out


def leading_term(
    obj: Objective,
    w_star: ArrayLike,
    k_max: int = DEFAULT_K_MAX,
    tol: float | None = None,
    probe_radius: float = 0.1,
) -> tuple[int, HomogeneousPoly]:
    """Degree and leading homogeneous Taylor polynomial of ``f`` at ``w*``.

    Raises
    ------
    NotCritical
        If the lowest nonzero term is linear.
    OrderExceedsCap
        If no nonzero term exists up to ``k_max``.
    """
    w_star = _as_point(w_star, obj.dim)
    k = vanishing_order(obj, w_star, k_max=k_max, tol=tol, probe_radius=probe_radius)
    if k < 2:
        raise NotCritical("not critical: the linear Taylor term does not vanish")
    if isinstance(obj, PolynomialObjective):
        shifted = _shifted_terms(obj, w_star, _POLY_TOL if tol is None else tol)
        return k, HomogeneousPoly(obj.dim, k, _poly.homogeneous_part(shifted, k))
    # Black box: recover P from its values on many directions.
    monos = _monomials(obj.dim, k)
    rng = np.random.default_rng(1)
    n_dirs = max(2 * obj.dim + 10, 3 * len(monos))
    dirs = rng.standard_normal((n_dirs, obj.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    coeffs, _ = _directional_taylor(obj, w_star, dirs, k + 3, probe_radius)
    design = np.stack([np.prod(dirs ** np.array(e), axis=1) for e in monos], axis=1)
    sol, *_ = np.linalg.lstsq(design, coeffs[:, k], rcond=None)
    cut = (_BLACKBOX_TOL if tol is None else tol) * np.max(np.abs(sol))
    return k, HomogeneousPoly(obj.dim, k, {e: c for e, c in zip(monos, sol) if abs(c) > cut})


# --- serialization -----------------------------------------------------------


def objective_from_json(data: Mapping[str, Any]) -> PolynomialObjective:
    """Build a polynomial objective from ``{"dim": d, "terms": [...]}``."""
    extra = set(data) - {"dim", "terms"}
    if extra:
        raise ValueError(f"unknown objective keys: {sorted(extra)}")
    terms = []
    for t in data["terms"]:
        bad = set(t) - {"exps", "coef"}
        if bad:
            raise ValueError(f"unknown term keys: {sorted(bad)}")
        terms.append((t["exps"], t["coef"]))
    return PolynomialObjective(int(data["dim"]), terms)


def load_objective(path: str | PathLike) -> PolynomialObjective:
    with open(path) as fh:
        return objective_from_json(json.load(fh))

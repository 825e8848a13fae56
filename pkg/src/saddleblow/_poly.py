"""Sparse multivariate polynomials: exact algebra and batched evaluation.

A polynomial is a ``dict`` mapping exponent tuples to float coefficients.
Algebra (products, shifts) is done on these dicts; numerical evaluation goes
through :class:`CompiledPoly`, which flattens every monomial into a row of
variable indices so that values, gradients and Hessians of many points are
computed with a handful of array operations.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np
from numpy.typing import NDArray

Terms = dict[tuple[int, ...], float]


def collect_terms(dim: int, items: Iterable[tuple[Iterable[int], float]]) -> Terms:
    """Validate ``(exponents, coefficient)`` pairs and merge duplicates."""
    out: dict[tuple[int, ...], float] = defaultdict(float)
    for exps, coef in items:
        key = tuple(int(e) for e in exps)
        if len(key) != dim:
            raise ValueError(f"exponent tuple {key} does not have length {dim}")
        if any(e < 0 for e in key):
            raise ValueError(f"negative exponent in {key}")
        c = float(coef)
        if not math.isfinite(c):
            raise ValueError(f"non-finite coefficient {coef!r}")
        out[key] += c
    return {k: v for k, v in sorted(out.items()) if v != 0.0}


def degree_of(exps: tuple[int, ...]) -> int:
    return sum(exps)


def multiply(a: Mapping[tuple[int, ...], float], b: Mapping[tuple[int, ...], float]) -> Terms:
    out: dict[tuple[int, ...], float] = defaultdict(float)
    for ea, ca in a.items():
        for eb, cb in b.items():
            out[tuple(x + y for x, y in zip(ea, eb))] += ca * cb
    return {k: v for k, v in out.items() if v != 0.0}


def add(a: Mapping[tuple[int, ...], float], b: Mapping[tuple[int, ...], float], scale: float = 1.0) -> Terms:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0.0) + scale * v
    return {k: v for k, v in out.items() if v != 0.0}


def shift(terms: Mapping[tuple[int, ...], float], point: Iterable[float]) -> Terms:
    """Coefficients of ``h -> f(point + h)``, computed in exact rational arithmetic.

    Floats convert to fractions without rounding, so a coefficient that
    cancels mathematically comes out as an exact zero and is dropped.
    """
    a = [Fraction(float(x)) for x in point]
    out: dict[tuple[int, ...], Fraction] = defaultdict(Fraction)
    for exps, coef in terms.items():
        factors = []
        for j, e in enumerate(exps):
            if e == 0:
                factors.append([(0, Fraction(1))])
            elif a[j] == 0:
                factors.append([(e, Fraction(1))])
            else:
                factors.append([(l, math.comb(e, l) * a[j] ** (e - l)) for l in range(e + 1)])
        c = Fraction(coef)
        for combo in itertools.product(*factors):
            key = tuple(l for l, _ in combo)
            val = c
            for _, v in combo:
                val *= v
            out[key] += val
    return {k: float(v) for k, v in sorted(out.items()) if v != 0}


def homogeneous_part(terms: Mapping[tuple[int, ...], float], degree: int) -> Terms:
    return {k: v for k, v in terms.items() if sum(k) == degree}


class _TermTable:
    """Monomials stored as padded index rows, reduced into output slots."""

    def __init__(self, dim: int, rows: list[tuple[list[int], float, int]], n_out: int):
        self.dim = dim
        self.n_out = n_out
        rows = sorted(rows, key=lambda r: r[2])
        width = max([len(r[0]) for r in rows] + [1])
        idx = np.full((len(rows), width), dim, dtype=np.intp)
        for t, (vars_, _, _) in enumerate(rows):
            idx[t, : len(vars_)] = vars_
        self.idx = idx
        self.coef = np.array([r[1] for r in rows], dtype=float)
        target = np.array([r[2] for r in rows], dtype=np.intp)
        if len(rows):
            starts = np.flatnonzero(np.r_[True, target[1:] != target[:-1]])
            self.starts = starts
            self.slots = target[starts]
        else:
            self.starts = np.zeros(0, dtype=np.intp)
            self.slots = np.zeros(0, dtype=np.intp)

    def __call__(self, ext: NDArray) -> NDArray:
        n = ext.shape[0]
        out = np.zeros((n, self.n_out))
        if self.coef.size == 0:
            return out
        vals = np.prod(ext[:, self.idx], axis=2) * self.coef
        out[:, self.slots] = np.add.reduceat(vals, self.starts, axis=1)
        return out


def _index_row(exps: tuple[int, ...]) -> list[int]:
    return [j for j, e in enumerate(exps) for _ in range(e)]


class CompiledPoly:
    """Batched evaluator for a fixed sparse polynomial.

    Parameters
    ----------
    dim : int
        Number of variables.
    terms : mapping
        Exponent tuple to coefficient.
    """

    def __init__(self, dim: int, terms: Mapping[tuple[int, ...], float]):
        self.dim = dim
        self.terms = dict(terms)
        value_rows = []
        grad_rows = []
        hess_rows = []
        for exps, c in self.terms.items():
            value_rows.append((_index_row(exps), c, 0))
            for j, e in enumerate(exps):
                if e == 0:
                    continue
                de = list(exps)
                de[j] -= 1
                grad_rows.append((_index_row(tuple(de)), c * e, j))
                for i in range(j, dim):
                    ei = de[i]
                    if ei == 0:
                        continue
                    dde = list(de)
                    dde[i] -= 1
                    row = _index_row(tuple(dde))
                    hess_rows.append((row, c * e * ei, j * dim + i))
                    if i != j:
                        hess_rows.append((row, c * e * ei, i * dim + j))
        self._value = _TermTable(dim, value_rows, 1)
        self._grad = _TermTable(dim, grad_rows, dim)
        self._hess = _TermTable(dim, hess_rows, dim * dim)

    def _extend(self, points: NDArray) -> NDArray:
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise ValueError(f"expected points of shape (n, {self.dim}), got {pts.shape}")
        return np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1)

    def values(self, points: NDArray) -> NDArray:
        return self._value(self._extend(points))[:, 0]

    def gradients(self, points: NDArray) -> NDArray:
        return self._grad(self._extend(points))

    def hessians(self, points: NDArray) -> NDArray:
        n = np.shape(points)[0]
        return self._hess(self._extend(points)).reshape(n, self.dim, self.dim)

"""Linear neural network loss ``1/2 |W_N ... W_1 X - Y|^2`` and its degenerate saddles.

Weights are lists of matrices ``W_i`` of shape ``(dims[i+1], dims[i])``
(indices are zero-based here). The stacked weight vector lists ``W_1``
row-major, then ``W_2``, and so on.

At a weight tuple whose zero blocks sit at positions ``i_1 < ... < i_k``
the loss expands as ``f(W + H) = f(W) - theta(H_{i_1}, ..., H_{i_k}) + ...``
where ``theta(Q_1, ..., Q_k)`` is the trace of the product chain with the
zero blocks replaced by the ``Q_j``. Its negative is the leading Taylor
polynomial whenever the number of zero blocks equals the order of vanishing.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from functools import reduce
from os import PathLike
from typing import Any, Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import _poly
from .errors import HypothesisViolated, NotCritical, OrderExceedsCap, ShapeMismatch
from .objective import BlackBoxObjective, HomogeneousPoly, PolynomialObjective
from .sphere import SaddleReport, SearchOptions, classify_leading

Weights = list[NDArray]


@dataclass
class LNNProblem:
    """Depth ``N = len(dims) - 1`` network with data ``X`` (dims[0] x m) and ``Y`` (dims[N] x m)."""

    dims: tuple[int, ...]
    X: NDArray
    Y: NDArray

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) < 2 or min(self.dims) < 1:
            raise ShapeMismatch("dims needs at least two positive entries")
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if self.X.shape[0] != self.dims[0] or self.Y.shape[0] != self.dims[-1]:
            raise ShapeMismatch(f"X must have {self.dims[0]} rows and Y {self.dims[-1]} rows")
        if self.X.shape[1] != self.Y.shape[1] or self.X.shape[1] < 1:
            raise ShapeMismatch("X and Y need the same positive number of columns")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ValueError("data must be finite")

    @property
    def depth(self) -> int:
        return len(self.dims) - 1

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [(self.dims[i + 1], self.dims[i]) for i in range(self.depth)]

    @property
    def n_params(self) -> int:
        return sum(a * b for a, b in self.shapes)

    def offsets(self) -> list[int]:
        sizes = [a * b for a, b in self.shapes]
        return [int(x) for x in np.concatenate([[0], np.cumsum(sizes)[:-1]])]

    def zeros(self) -> Weights:
        return [np.zeros(s) for s in self.shapes]

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "LNNProblem":
        extra = set(data) - {"dims", "X", "Y"}
        if extra:
            raise ValueError(f"unknown problem keys: {sorted(extra)}")
        dims = [int(d) for d in data["dims"]]
        X = np.asarray(data["X"], dtype=float).reshape(dims[0], -1)
        Y = np.asarray(data["Y"], dtype=float).reshape(dims[-1], -1)
        return cls(tuple(dims), X, Y)

    def to_json(self) -> dict[str, Any]:
        return {"dims": list(self.dims), "X": self.X.ravel().tolist(), "Y": self.Y.ravel().tolist()}


def load_problem(path: str | PathLike) -> LNNProblem:
    with open(path) as fh:
        return LNNProblem.from_json(json.load(fh))


def check_weights(prob: LNNProblem, W: Sequence[ArrayLike]) -> Weights:
    if len(W) != prob.depth:
        raise ShapeMismatch(f"expected {prob.depth} weight blocks, got {len(W)}")
    out = []
    for i, (w, shape) in enumerate(zip(W, prob.shapes)):
        arr = np.asarray(w, dtype=float)
        if arr.shape != shape:
            raise ShapeMismatch(f"block {i} has shape {arr.shape}, expected {shape}")
        out.append(arr)
    return out


def flatten(prob: LNNProblem, W: Sequence[ArrayLike]) -> NDArray:
    return np.concatenate([w.ravel() for w in check_weights(prob, W)])


def unflatten(prob: LNNProblem, v: ArrayLike) -> Weights:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != prob.n_params:
        raise ShapeMismatch(f"expected {prob.n_params} parameters, got {v.shape[0]}")
    return [v[o : o + a * b].reshape(a, b) for o, (a, b) in zip(prob.offsets(), prob.shapes)]


def _chain(blocks: Sequence[NDArray], size: int) -> NDArray:
    """``blocks[-1] @ ... @ blocks[0]``, or the identity of ``size`` when empty."""
    if not blocks:
        return np.eye(size)
    return reduce(lambda acc, b: b @ acc, blocks[1:], blocks[0])


def residual(prob: LNNProblem, W: Sequence[ArrayLike]) -> NDArray:
    W = check_weights(prob, W)
    return _chain(W, prob.dims[0]) @ prob.X - prob.Y


def loss(prob: LNNProblem, W: Sequence[ArrayLike]) -> float:
    """``1/2 |W_N ... W_1 X - Y|_F^2``."""
    R = residual(prob, W)
    return 0.5 * float(np.sum(R * R))


def loss_gradient(prob: LNNProblem, W: Sequence[ArrayLike]) -> Weights:
    """Blocks ``(W_N..W_{i+1})^T R (W_{i-1}..W_1 X)^T`` with ``R`` the residual."""
    W = check_weights(prob, W)
    R = _chain(W, prob.dims[0]) @ prob.X - prob.Y
    grads = []
    for i in range(prob.depth):
        above = _chain(W[i + 1 :], prob.dims[i + 1])
        below = _chain(W[:i], prob.dims[0]) @ prob.X
        grads.append(above.T @ R @ below.T)
    return grads


def as_objective(prob: LNNProblem) -> BlackBoxObjective:
    """The loss on the stacked weight space, with its exact gradient."""
    return BlackBoxObjective(
        prob.n_params,
        lambda v: loss(prob, unflatten(prob, v)),
        lambda v: flatten(prob, loss_gradient(prob, unflatten(prob, v))),
    )


def zero_blocks(W: Sequence[ArrayLike], zero_tol: float | None = None) -> list[int]:
    """Zero-based positions of blocks with norm at most ``zero_tol``.

    The default tolerance is ``1e-12 (1 + |W|)``.
    """
    mats = [np.asarray(w, dtype=float) for w in W]
    if zero_tol is None:
        total = float(np.sqrt(sum(np.sum(m * m) for m in mats)))
        zero_tol = 1e-12 * (1.0 + total)
    return [i for i, m in enumerate(mats) if np.linalg.norm(m) <= zero_tol]


def zeta(W: Sequence[ArrayLike], zero_tol: float | None = None) -> int:
    """Number of zero weight blocks."""
    return len(zero_blocks(W, zero_tol))


def directional_coefficients(prob: LNNProblem, W: Sequence[ArrayLike], H: Sequence[ArrayLike]) -> tuple[NDArray, NDArray]:
    """Exact coefficients of ``t -> f(W + t H)`` and a magnitude bound per degree.

    The product ``(W_N + t H_N) ... (W_1 + t H_1) X`` is expanded as a
    matrix polynomial in ``t``; the loss coefficients follow from pairing
    its coefficient matrices.
    """
    W = check_weights(prob, W)
    H = check_weights(prob, H)
    coeffs = [prob.X.copy()]
    for Wi, Hi in zip(W, H):
        nxt = [Wi @ c for c in coeffs] + [np.zeros((Wi.shape[0], prob.X.shape[1]))]
        for j, c in enumerate(coeffs):
            nxt[j + 1] = nxt[j + 1] + Hi @ c
        coeffs = nxt
    coeffs[0] = coeffs[0] - prob.Y
    deg = len(coeffs) - 1
    out = np.zeros(2 * deg + 1)
    bound = np.zeros(2 * deg + 1)
    norms = [np.linalg.norm(c) for c in coeffs]
    for a in range(deg + 1):
        for b in range(deg + 1):
            out[a + b] += 0.5 * float(np.sum(coeffs[a] * coeffs[b]))
            bound[a + b] += 0.5 * norms[a] * norms[b]
    return out, bound


def kappa(
    prob: LNNProblem,
    W: Sequence[ArrayLike],
    k_max: int | None = None,
    n_dirs: int = 3,
    seed: int = 0,
    tol: float = 1e-12,
) -> int:
    """Order of vanishing of the loss at ``W``.

    The degree-``j`` homogeneous part of ``H -> f(W + H) - f(W)`` vanishes
    identically exactly when it vanishes at a random ``H`` (almost surely),
    so the order is read off exact directional expansions along ``n_dirs``
    Gaussian directions. A coefficient counts as zero when it is below
    ``tol`` times the magnitude of the terms it is summed from.
    """
    W = check_weights(prob, W)
    k_max = 2 * prob.depth if k_max is None else k_max
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_dirs):
        H = [rng.standard_normal(s) for s in prob.shapes]
        c, bound = directional_coefficients(prob, W, H)
        for j in range(1, min(k_max, len(c) - 1) + 1):
            if abs(c[j]) > tol * bound[j]:
                best = j if best is None else min(best, j)
                break
    if best is None:
        raise OrderExceedsCap(f"loss is flat to order {k_max} along the probe directions")
    return best


def loss_polynomial(prob: LNNProblem) -> PolynomialObjective:
    """Expanded loss as an exact polynomial in the stacked weights (small problems only)."""
    D = prob.n_params
    zero = (0,) * D

    def var(idx: int) -> _poly.Terms:
        e = [0] * D
        e[idx] = 1
        return {tuple(e): 1.0}

    cur = [[({zero: float(x)} if x != 0 else {}) for x in row] for row in prob.X]
    for o, (a, b) in zip(prob.offsets(), prob.shapes):
        nxt = []
        for r in range(a):
            row = []
            for col in range(len(cur[0])):
                acc: _poly.Terms = {}
                for s in range(b):
                    if cur[s][col]:
                        acc = _poly.add(acc, _poly.multiply(var(o + r * b + s), cur[s][col]))
                row.append(acc)
            nxt.append(row)
        cur = nxt
    total: _poly.Terms = {}
    for r, row in enumerate(cur):
        for col, entry in enumerate(row):
            diff = _poly.add(entry, {zero: float(prob.Y[r, col])}, scale=-1.0)
            total = _poly.add(total, _poly.multiply(diff, diff), scale=0.5)
    return PolynomialObjective(D, total)


def leading_poly(prob: LNNProblem, W: Sequence[ArrayLike], zero_tol: float | None = None) -> HomogeneousPoly:
    """Leading Taylor polynomial at a weight tuple with as many zero blocks as its order.

    Raises
    ------
    HypothesisViolated
        If the number of zero blocks differs from the order of vanishing.
    """
    W = check_weights(prob, W)
    zb = zero_blocks(W, zero_tol)
    k = len(zb)
    kap = kappa(prob, W)
    if k != kap:
        raise HypothesisViolated(f"zero blocks ({k}) differ from the order of vanishing ({kap})")
    if k < 2:
        raise NotCritical("not critical: the order of vanishing is 1")
    dims = prob.dims
    N = prob.depth
    A0 = _chain(W[: zb[0]], dims[0])
    gaps = [_chain(W[zb[j] + 1 : zb[j + 1]], dims[zb[j] + 1]) for j in range(k - 1)]
    top = _chain(W[zb[-1] + 1 :], dims[zb[-1] + 1])
    CA = A0 @ prob.X @ prob.Y.T @ top

    letters = iter(string.ascii_letters)
    a_idx = [next(letters) for _ in range(k)]
    b_idx = [next(letters) for _ in range(k)]
    operands = [CA] + gaps
    subs = [b_idx[0] + a_idx[-1]] + [b_idx[j + 1] + a_idx[j] for j in range(k - 1)]
    out = "".join(a + b for a, b in zip(a_idx, b_idx))
    K = np.einsum(",".join(subs) + "->" + out, *operands)

    offsets = prob.offsets()
    D = prob.n_params
    terms: dict[tuple[int, ...], float] = {}
    for pos in zip(*np.nonzero(K)):
        exps = [0] * D
        for j in range(k):
            blk = zb[j]
            exps[offsets[blk] + pos[2 * j] * dims[blk] + pos[2 * j + 1]] += 1
        terms[tuple(exps)] = -float(K[pos])
    if not terms:
        raise HypothesisViolated("the trace form vanishes identically")
    return HomogeneousPoly(D, k, terms)


def trace_hessian_check(P: HomogeneousPoly, n_samples: int = 100, seed: int = 0) -> float:
    """Largest ``|tr D^2 P(v)|`` over Gaussian samples ``v``."""
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((n_samples, P.dim))
    return float(np.max(np.abs(np.einsum("nii->n", P.hessians(V)))))


def certify_weakly_strict(
    prob: LNNProblem,
    W: Sequence[ArrayLike],
    options: SearchOptions | None = None,
    crit_tol: float = 1e-8,
    zero_tol: float | None = None,
) -> SaddleReport:
    """Saddle report for a critical weight tuple with as many zero blocks as its order.

    Raises
    ------
    NotCritical
        If the loss gradient exceeds ``crit_tol``.
    HypothesisViolated
        If the number of zero blocks differs from the order of vanishing.
    """
    W = check_weights(prob, W)
    gnorm = float(np.linalg.norm(flatten(prob, loss_gradient(prob, W))))
    if gnorm > crit_tol:
        raise NotCritical(f"not critical: |grad f| = {gnorm:.3e}")
    P = leading_poly(prob, W, zero_tol)
    return classify_leading(P.degree, P, options)

"""Random linear-network instances shared by the LNN tests."""

from __future__ import annotations

import numpy as np

from saddleblow.lnn import LNNProblem


def random_problem(rng: np.random.Generator, n_max: int = 4, d_max: int = 5, m_max: int = 4) -> LNNProblem:
    N = int(rng.integers(1, n_max + 1))
    dims = tuple(int(d) for d in rng.integers(1, d_max + 1, N + 1))
    m = int(rng.integers(1, m_max + 1))
    return LNNProblem(dims, rng.standard_normal((dims[0], m)), rng.standard_normal((dims[-1], m)))


def random_weights(rng: np.random.Generator, prob: LNNProblem) -> list[np.ndarray]:
    return [rng.standard_normal(s) for s in prob.shapes]


def zeroed_configs(n: int = 20, seed: int = 0, n_origin: int = 4):
    """Critical configurations with at least two zero blocks.

    Depth 2 or 3, widths 1 or 2, three data columns. The first ``n_origin``
    configurations are the origin, the rest zero a random subset of at least
    two blocks and keep the others Gaussian.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        N = int(rng.integers(2, 4))
        dims = tuple(int(d) for d in rng.integers(1, 3, N + 1))
        prob = LNNProblem(dims, rng.standard_normal((dims[0], 3)), rng.standard_normal((dims[-1], 3)))
        W = random_weights(rng, prob)
        n_zero = N if i < n_origin else int(rng.integers(2, N + 1))
        for j in rng.choice(N, n_zero, replace=False):
            W[j] = np.zeros(prob.shapes[j])
        out.append((prob, W))
    return out

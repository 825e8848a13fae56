import json

import numpy as np
import pytest
from conftest import xyz_objective
from lnn_cases import random_problem, random_weights
from oracles import central_gradient

from saddleblow import lnn
from saddleblow.errors import HypothesisViolated, NotCritical, OrderExceedsCap, ShapeMismatch
from saddleblow.objective import HomogeneousPoly, leading_term
from saddleblow.sphere import sphere_hess


def _scalar3():
    return lnn.LNNProblem((1, 1, 1, 1), [[1.0]], [[1.0]])


def test_problem_validation():
    with pytest.raises(ShapeMismatch):
        lnn.LNNProblem((2, 1), np.ones((3, 2)), np.ones((1, 2)))
    with pytest.raises(ShapeMismatch):
        lnn.LNNProblem((2, 1), np.ones((2, 2)), np.ones((1, 3)))
    with pytest.raises(ShapeMismatch):
        lnn.LNNProblem((2,), np.ones((2, 2)), np.ones((2, 2)))
    prob = lnn.LNNProblem((2, 3, 1), np.ones((2, 2)), np.ones((1, 2)))
    assert prob.shapes == [(3, 2), (1, 3)] and prob.n_params == 9 and prob.offsets() == [0, 6]
    with pytest.raises(ShapeMismatch):
        lnn.loss(prob, [np.zeros((2, 3)), np.zeros((1, 3))])
    with pytest.raises(ShapeMismatch):
        lnn.loss(prob, [np.zeros((3, 2))])


def test_problem_json_round_trip(tmp_path, rng):
    prob = random_problem(rng)
    path = tmp_path / "p.json"
    path.write_text(json.dumps(prob.to_json()))
    back = lnn.load_problem(path)
    assert back.dims == prob.dims
    np.testing.assert_array_equal(back.X, prob.X)
    np.testing.assert_array_equal(back.Y, prob.Y)
    with pytest.raises(ValueError):
        lnn.LNNProblem.from_json({**prob.to_json(), "Z": 1})


def test_flatten_round_trip(rng):
    prob = random_problem(rng)
    W = random_weights(rng, prob)
    back = lnn.unflatten(prob, lnn.flatten(prob, W))
    for a, b in zip(W, back):
        np.testing.assert_array_equal(a, b)


def test_loss_at_zero(rng):
    prob = random_problem(rng)
    assert lnn.loss(prob, prob.zeros()) == pytest.approx(0.5 * np.sum(prob.Y**2), rel=1e-15)


def test_loss_exact_fit(rng):
    X = rng.standard_normal((3, 3))
    Y = rng.standard_normal((2, 3))
    prob = lnn.LNNProblem((3, 2), X, Y)
    assert lnn.loss(prob, [Y @ np.linalg.inv(X)]) <= 1e-25


def test_scalar_depth_three_matches_xyz(rng):
    prob = _scalar3()
    obj = xyz_objective()
    for _ in range(20):
        w = rng.uniform(-2, 2, 3)
        W = [np.array([[w[0]]]), np.array([[w[1]]]), np.array([[w[2]]])]
        val = lnn.loss(prob, W)
        assert val == pytest.approx(0.5 * (w[2] * w[1] * w[0] - 1) ** 2, rel=1e-13, abs=1e-15)
        assert val == pytest.approx(obj.value(w), rel=1e-12, abs=1e-14)


def test_gradient_at_zero_vanishes(rng):
    for _ in range(10):
        prob = random_problem(rng)
        if prob.depth < 2:
            continue
        assert all(not g.any() for g in lnn.loss_gradient(prob, prob.zeros()))


def test_gradient_depth_one(rng):
    prob = lnn.LNNProblem((3, 2), rng.standard_normal((3, 4)), rng.standard_normal((2, 4)))
    W = [rng.standard_normal((2, 3))]
    np.testing.assert_allclose(lnn.loss_gradient(prob, W)[0], (W[0] @ prob.X - prob.Y) @ prob.X.T, rtol=1e-14)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(50):
        prob = random_problem(rng)
        v = lnn.flatten(prob, random_weights(rng, prob))
        f = lambda x: lnn.loss(prob, lnn.unflatten(prob, x))
        g = lnn.flatten(prob, lnn.loss_gradient(prob, lnn.unflatten(prob, v)))
        fd = central_gradient(f, v, h=1e-5)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1.0))
    assert worst <= 1e-6


def test_as_objective_consistent(rng):
    prob = random_problem(rng)
    obj = lnn.as_objective(prob)
    W = random_weights(rng, prob)
    v = lnn.flatten(prob, W)
    assert obj.value(v) == lnn.loss(prob, W)
    np.testing.assert_array_equal(obj.gradient(v), lnn.flatten(prob, lnn.loss_gradient(prob, W)))


def test_zeta_examples():
    A = np.array([[0.6, 0.8]])
    assert lnn.zeta([np.zeros((2, 2))] * 3) == 3
    assert lnn.zeta([np.zeros((1, 2)), A, np.zeros((1, 2))]) == 2
    assert lnn.zeta([A, A]) == 0
    assert lnn.zero_blocks([A, 1e-20 * A, np.zeros((1, 2))]) == [1, 2]


def test_kappa_at_origin_equals_depth(rng):
    for N in (1, 2, 3, 4):
        dims = tuple(int(d) for d in rng.integers(1, 4, N + 1))
        prob = lnn.LNNProblem(dims, rng.standard_normal((dims[0], 3)), rng.standard_normal((dims[-1], 3)))
        assert lnn.kappa(prob, prob.zeros()) == N


def test_kappa_scalar_example():
    assert lnn.kappa(_scalar3(), _scalar3().zeros()) == 3


def test_kappa_generic_depth_one(rng):
    prob = lnn.LNNProblem((2, 2), rng.standard_normal((2, 3)), rng.standard_normal((2, 3)))
    assert lnn.kappa(prob, [rng.standard_normal((2, 2))]) == 1
    W_opt = prob.Y @ np.linalg.pinv(prob.X)
    assert lnn.kappa(prob, [W_opt]) == 2


def test_kappa_bounded_by_twice_depth():
    rng = np.random.default_rng(202)
    for _ in range(100):
        prob = random_problem(rng, n_max=4, d_max=3)
        W = random_weights(rng, prob)
        for j in rng.choice(prob.depth, int(rng.integers(0, prob.depth + 1)), replace=False):
            W[j] = np.zeros(prob.shapes[j])
        assert 1 <= lnn.kappa(prob, W) <= 2 * prob.depth


def test_kappa_cap():
    prob = lnn.LNNProblem((1, 1, 1, 1), [[1.0]], [[1.0]])
    with pytest.raises(OrderExceedsCap):
        lnn.kappa(prob, prob.zeros(), k_max=2)


def test_directional_coefficients_reproduce_loss(rng):
    prob = random_problem(rng)
    W = random_weights(rng, prob)
    H = random_weights(rng, prob)
    c, _ = lnn.directional_coefficients(prob, W, H)
    for t in (-0.7, 0.3, 1.1):
        val = lnn.loss(prob, [w + t * h for w, h in zip(W, H)])
        assert np.polyval(c[::-1], t) == pytest.approx(val, rel=1e-10)


def _shifted_leading(prob, W):
    obj = lnn.loss_polynomial(prob)
    return leading_term(obj, lnn.flatten(prob, W))


def _coef_diff(P: HomogeneousPoly, Q: HomogeneousPoly) -> float:
    keys = set(P.terms) | set(Q.terms)
    return max(abs(P.coefficient(e) - Q.coefficient(e)) for e in keys)


def test_leading_poly_at_origin_is_negative_trace(rng):
    prob = lnn.LNNProblem((2, 3, 2), rng.standard_normal((2, 4)), rng.standard_normal((2, 4)))
    P = lnn.leading_poly(prob, prob.zeros())
    assert P.degree == 2
    for _ in range(5):
        H = random_weights(rng, prob)
        expected = -np.trace(H[1] @ H[0] @ prob.X @ prob.Y.T)
        assert P(lnn.flatten(prob, H)) == pytest.approx(expected, rel=1e-12)


def test_leading_poly_scalar_examples():
    P = lnn.leading_poly(_scalar3(), _scalar3().zeros())
    assert P.terms == {(1, 1, 1): -1.0}
    prob = lnn.LNNProblem((1, 1, 1), [[1.0]], [[1.0]])
    P2 = lnn.leading_poly(prob, prob.zeros())
    assert P2.terms == {(1, 1): -1.0}
    np.testing.assert_allclose(np.linalg.eigvalsh(P2.hessian([0.0, 0.0])), [-1.0, 1.0])


def test_leading_poly_matches_expanded_loss():
    rng = np.random.default_rng(303)
    checked = 0
    while checked < 15:
        prob = random_problem(rng, n_max=3, d_max=2, m_max=3)
        if prob.depth < 2:
            continue
        W = random_weights(rng, prob)
        n_zero = int(rng.integers(2, prob.depth + 1))
        for j in rng.choice(prob.depth, n_zero, replace=False):
            W[j] = np.zeros(prob.shapes[j])
        try:
            P = lnn.leading_poly(prob, W)
        except HypothesisViolated:
            continue
        k, Q = _shifted_leading(prob, W)
        assert k == P.degree
        assert _coef_diff(P, Q) <= 1e-10 * max(1.0, Q.max_abs_coef)
        checked += 1


def test_leading_poly_hypothesis_gate():
    # a global minimum: no zero blocks but order two
    prob = lnn.LNNProblem((1, 1, 1), [[1.0]], [[1.0]])
    with pytest.raises(HypothesisViolated):
        lnn.leading_poly(prob, [np.array([[2.0]]), np.array([[0.5]])])


def test_trace_check_examples(rng):
    assert lnn.trace_hessian_check(HomogeneousPoly(3, 3, {(1, 1, 1): -1.0})) == 0.0
    prob = lnn.LNNProblem((2, 2, 2), rng.standard_normal((2, 3)), rng.standard_normal((2, 3)))
    P = lnn.leading_poly(prob, prob.zeros())
    assert lnn.trace_hessian_check(P) <= 1e-12
    control = HomogeneousPoly(1, 2, {(2,): 1.0})
    assert lnn.trace_hessian_check(control) == pytest.approx(2.0)


def test_trace_check_on_random_leading_polys():
    rng = np.random.default_rng(404)
    for _ in range(20):
        prob = random_problem(rng, n_max=4, d_max=3)
        if prob.depth < 2:
            continue
        W = random_weights(rng, prob)
        for j in rng.choice(prob.depth, int(rng.integers(2, prob.depth + 1)), replace=False):
            W[j] = np.zeros(prob.shapes[j])
        try:
            P = lnn.leading_poly(prob, W)
        except HypothesisViolated:
            continue
        assert lnn.trace_hessian_check(P) <= 1e-8 * (1 + P.coef_norm)


def test_certify_origin_square(rng):
    prob = lnn.LNNProblem((2, 2, 2), rng.standard_normal((2, 3)), rng.standard_normal((2, 3)))
    rep = lnn.certify_weakly_strict(prob, prob.zeros())
    assert rep.k == 2 and rep.weakly_strict and rep.is_saddle


def test_certify_scalar_depth_three():
    rep = lnn.certify_weakly_strict(_scalar3(), _scalar3().zeros())
    assert rep.k == 3 and rep.weakly_strict and rep.tamed and len(rep.crit_points) == 14


def test_certify_positive_points_have_negative_direction(rng):
    prob = lnn.LNNProblem((1, 2, 1), rng.standard_normal((1, 3)), rng.standard_normal((1, 3)))
    rep = lnn.certify_weakly_strict(prob, prob.zeros())
    assert rep.weakly_strict
    for c in rep.crit_points:
        if c.value >= 0:
            assert c.morse_index >= 1


def test_certify_gates(rng):
    prob = lnn.LNNProblem((2, 2, 2), rng.standard_normal((2, 3)), rng.standard_normal((2, 3)))
    with pytest.raises(NotCritical):
        lnn.certify_weakly_strict(prob, random_weights(rng, prob))
    scal = lnn.LNNProblem((1, 1, 1), [[1.0]], [[1.0]])
    with pytest.raises(HypothesisViolated):
        lnn.certify_weakly_strict(scal, [np.array([[2.0]]), np.array([[0.5]])])


@pytest.mark.parametrize(
    "dims, X, Y, term, u",
    [
        # P = -h1 h2 (h3 . e1); flat where h1 = h2 = 0 and h3 is orthogonal to e1
        ((1, 1, 1, 2), [[1.0]], [[1.0], [0.0]], (1, 1, 1, 0), [0.0, 0.0, 0.0, 1.0]),
        # P = -(h1 . e1) h2 h3; flat where h2 = h3 = 0 and h1 is orthogonal to e1
        ((2, 1, 1, 1), [[1.0], [0.0]], [[1.0]], (1, 0, 1, 1), [0.0, 1.0, 0.0, 0.0]),
    ],
)
def test_origin_can_have_flat_nonnegative_critical_points(dims, X, Y, term, u):
    # three factors of the cubic vanish at u, so the gradient and the whole
    # Hessian of P vanish there: p has a critical point with p = 0 and no
    # descent direction
    prob = lnn.LNNProblem(dims, X, Y)
    P = lnn.leading_poly(prob, prob.zeros())
    assert P.terms == {term: -1.0}
    u = np.array(u)
    assert P(u) == 0.0 and not P.gradient(u).any() and not P.hessian(u).any()
    assert not sphere_hess(P, u).any()
    rep = lnn.certify_weakly_strict(prob, prob.zeros())
    assert not rep.weakly_strict
    v = rep.violation
    assert v.morse_index == 0 and abs(v.value) <= 1e-9
    assert np.max(np.abs(v.tangent_eigs)) <= 1e-6

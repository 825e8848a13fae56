import math

import numpy as np
import pytest
from oracles import diag_center_stable_coefficient, diag_half_two_eta_budget

from saddleblow import centerstable as cs
from saddleblow.errors import DomainError, HypothesisViolated, IllConditioned, MaxIterations, NoUnstableDirection

T_DIAG = np.diag([0.5, 2.0])
EPS = 5e-4


def _linear_problem(**kw):
    sp = cs.split_spectrum(T_DIAG)
    return cs.GraphProblem(sp, lambda Z: Z @ T_DIAG.T, 0.0, **kw)


def _demo_problem(n_nodes=101, eps=EPS):
    f, _ = cs.bump_localize(cs.quadratic_perturbation(eps, 1, 0), T_DIAG, 1.0)
    return cs.GraphProblem.build(T_DIAG, f, n_nodes=n_nodes)


@pytest.fixture(scope="module")
def demo():
    prob = _demo_problem()
    return prob, cs.solve_center_stable(prob)


# --- splitting -------------------------------------------------------------------


def test_split_diagonal():
    sp = cs.split_spectrum(T_DIAG)
    assert sp.n1 == 1 and sp.n2 == 1
    assert sp.mu == pytest.approx(math.sqrt(2), rel=1e-15)
    assert sp.theta == pytest.approx(2 ** (1 / 6), rel=1e-15)
    assert sp.rho == pytest.approx(2 ** (1 / 3), rel=1e-15)
    np.testing.assert_allclose(np.abs(sp.Q1[:, 0]), [1, 0], atol=1e-15)
    np.testing.assert_allclose(np.abs(sp.Q2[:, 0]), [0, 1], atol=1e-15)
    for v in (0.3, -2.0, 7.5):
        assert sp.norm1([[v]])[0] == pytest.approx(abs(v), rel=1e-15)
        assert sp.norm2([[v]])[0] == pytest.approx(abs(v), rel=1e-15)


def test_split_center_direction():
    sp = cs.split_spectrum(np.diag([1.0, 2.0]))
    assert sp.n1 == 1 and sp.theta > 1
    assert sp.norm1(sp.T1 @ [[1.0]])[0] <= sp.theta * sp.norm1([[1.0]])[0] + 1e-15


def test_split_rotation():
    c = math.cos(math.pi / 4)
    T = 3 * np.array([[c, -c], [c, c]])
    sp = cs.split_spectrum(T)
    assert sp.n1 == 0 and sp.n2 == 2
    assert sp.mu == pytest.approx(math.sqrt(3), rel=1e-12)


def test_split_spectra_of_blocks(rng):
    for _ in range(10):
        S = rng.standard_normal((4, 4))
        D = np.diag([0.3, -0.8, 1.7, -2.5])
        T = S @ D @ np.linalg.inv(S)
        sp = cs.split_spectrum(T)
        np.testing.assert_allclose(np.sort(np.abs(np.linalg.eigvals(sp.T1))), [0.3, 0.8], rtol=1e-8)
        np.testing.assert_allclose(np.sort(np.abs(np.linalg.eigvals(sp.T2))), [1.7, 2.5], rtol=1e-8)
        assert sp.mu == pytest.approx(math.sqrt(1.7), rel=1e-8)
        Z = rng.standard_normal((5, 4))
        np.testing.assert_allclose(sp.join(*sp.split(Z)), Z, atol=1e-12)


def test_split_errors():
    with pytest.raises(NoUnstableDirection):
        cs.split_spectrum(np.diag([0.5, 0.9]))
    with pytest.raises(DomainError):
        cs.split_spectrum(np.ones((2, 3)))
    with pytest.raises(IllConditioned):
        cs.split_spectrum(np.diag([0.0, 2.0]))


def test_adapted_norm_contracts(rng):
    for _ in range(5):
        S = rng.standard_normal((4, 4))
        T = S @ np.diag([0.9, -1.0, 1.3, 4.0]) @ np.linalg.inv(S)
        sp = cs.split_spectrum(T)
        X = rng.standard_normal((1000, sp.n1))
        Y = rng.standard_normal((1000, sp.n2))
        assert np.all(sp.norm1(X @ sp.T1.T) <= sp.theta * sp.norm1(X) * (1 + 1e-12))
        assert np.all(sp.norm2(Y @ sp.T2.T) >= sp.mu * sp.norm2(Y) * (1 - 1e-12))


def test_truncation_gap_small(rng):
    S = rng.standard_normal((3, 3))
    sp = cs.split_spectrum(S @ np.diag([0.95, 1.2, 3.0]) @ np.linalg.inv(S))
    assert sp.truncation_gap() <= 1e-12


# --- budget ------------------------------------------------------------------------


def test_budget_diagonal_regression():
    sp = cs.split_spectrum(T_DIAG)
    assert cs.eta_budget(sp) == pytest.approx(diag_half_two_eta_budget(), rel=1e-12)
    assert cs.eta_budget(sp) == pytest.approx(0.0068921976357671924, rel=1e-12)


def test_budget_monotone_in_unstable_scaling():
    vals = [cs.eta_budget(cs.split_spectrum(np.diag([0.5, 2.0 * c]))) for c in (1, 2, 4)]
    assert vals[0] > 0 and vals[0] <= vals[1] <= vals[2]


def test_budget_vanishes_as_gap_closes():
    vals = [cs.eta_budget(cs.split_spectrum(np.diag([0.5, 1 + d]))) for d in (1e-1, 1e-2, 1e-3, 1e-4)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-5


def test_budget_gate():
    sp = cs.split_spectrum(T_DIAG)
    with pytest.raises(HypothesisViolated):
        cs.GraphProblem(sp, lambda Z: Z @ T_DIAG.T, 1.0)


# --- bump and deviation ----------------------------------------------------------


def test_bump_profile(rng):
    V = rng.standard_normal((500, 2)) * 2
    r = np.linalg.norm(V, axis=1)
    b = cs.bump(V)
    assert np.all(b[r <= 1] == 1.0) and np.all(b[r >= 2] == 0.0)
    assert np.all((b >= 0) & (b <= 1))
    t = np.linspace(1, 2, 200)
    vals = cs.bump(np.column_stack([t, np.zeros_like(t)]))
    assert np.all(np.diff(vals) <= 0)


def test_bump_localize_zero_perturbation():
    f, lip = cs.bump_localize(lambda Z: np.zeros_like(Z), T_DIAG, 0.5)
    assert lip == 0.0
    Z = np.array([[0.3, -0.1], [3.0, 1.0]])
    np.testing.assert_array_equal(f(Z), Z @ T_DIAG.T)


def test_bump_localize_linear_outside_support(rng):
    s = 0.3
    f, _ = cs.bump_localize(cs.quadratic_perturbation(1.0, 1, 0), T_DIAG, s)
    Z = rng.standard_normal((200, 2))
    Z = Z[np.linalg.norm(Z, axis=1) > 2 * s]
    np.testing.assert_array_equal(f(Z), Z @ T_DIAG.T)


def test_bump_localize_deviation_shrinks_with_scale():
    h = cs.quadratic_perturbation(1.0, 1, 0)
    devs = [cs.bump_localize(h, T_DIAG, s)[1] for s in (1e-1, 1e-2, 1e-3)]
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] < 1e-2


def test_bump_localize_rejects_scale():
    with pytest.raises(DomainError):
        cs.bump_localize(lambda Z: Z, T_DIAG, 0.0)


# --- inverse and transform ---------------------------------------------------------


def test_invert_linear_one_step(rng):
    prob = _linear_problem()
    Z0 = rng.standard_normal((5, 2))
    np.testing.assert_allclose(cs.invert_map(prob, Z0, max_iter=1), Z0 @ np.linalg.inv(T_DIAG).T, atol=1e-15)


def test_invert_fixes_origin(demo):
    prob, _ = demo
    assert not cs.invert_map(prob, np.zeros((1, 2))).any()


def test_invert_residual(demo, rng):
    prob, _ = demo
    Z0 = rng.uniform(-prob.half_width, prob.half_width, (100, 2))
    Z = cs.invert_map(prob, Z0)
    assert np.max(np.abs(prob.forward(Z) - Z0)) <= 1e-10


def test_inverse_lipschitz(demo, rng):
    prob, _ = demo
    sp = prob.splitting
    A = rng.uniform(-2, 2, (300, 2))
    B = A + rng.normal(scale=0.05, size=A.shape)
    ratio = sp.norm(cs.invert_map(prob, A) - cs.invert_map(prob, B)) / sp.norm(A - B)
    assert np.max(ratio) <= 2 * sp.operator_bounds()[1]


def test_transform_zero_graph_is_invariant_for_linear_map():
    prob = _linear_problem()
    g = cs.GraphFunction.zero(prob.grid(), 1)
    assert not cs.graph_transform(prob, g).values.any()


def test_transform_identity_graph():
    prob = _linear_problem()
    axes = prob.grid()
    g = cs.GraphFunction(axes, axes[0][:, None].copy())
    out = cs.graph_transform(prob, g)
    inner = np.abs(axes[0]) <= prob.half_width / 2
    np.testing.assert_allclose(out.values[inner, 0], axes[0][inner] / 4, atol=1e-14)


def test_transform_contracts(demo, rng):
    prob, _ = demo
    axes = prob.grid()
    x = axes[0]
    bound = prob.contraction_bound
    for _ in range(5):
        a, b = rng.uniform(-0.3, 0.3, 2)
        g1 = cs.GraphFunction(axes, (a * np.sin(x) * np.abs(x) / 3)[:, None])
        g2 = cs.GraphFunction(axes, (b * x * np.abs(x) / 3)[:, None])
        assert cs.graph_lipschitz(prob, g1) <= 1 and cs.graph_lipschitz(prob, g2) <= 1
        d0 = cs.graph_distance(prob, g1, g2)
        d1 = cs.graph_distance(prob, cs.graph_transform(prob, g1), cs.graph_transform(prob, g2))
        assert d1 <= bound * d0 + 1e-3


# --- solver ------------------------------------------------------------------------


def test_solve_linear_one_iteration():
    res = cs.solve_center_stable(_linear_problem())
    assert res.iterations == 1
    assert np.max(np.abs(res.graph.values)) <= 1e-14


def test_solve_demo_contraction(demo):
    prob, res = demo
    assert prob.lip_dev < cs.eta_budget(prob.splitting)
    assert res.max_ratio <= res.bound + 0.05
    assert res.distances[-1] <= 1e-11


def test_solve_demo_graph_shape(demo):
    prob, res = demo
    g = res.graph
    assert np.max(np.abs(g.values)) > 0
    assert np.all(g(np.zeros((1, 1))) == 0.0)
    assert cs.graph_lipschitz(prob, g) <= 1 + 1e-6


def test_solve_demo_matches_invariant_parabola(demo):
    # inside the unit ball the map is exactly (x/2, 2y + eps x^2), whose
    # invariant curve through 0 tangent to E1 is y = c x^2
    prob, res = demo
    x = res.graph.axes[0]
    inner = np.abs(x) <= 0.5
    c = diag_center_stable_coefficient(EPS)
    np.testing.assert_allclose(res.graph.values[inner, 0], c * x[inner] ** 2, atol=1e-6)


def test_solve_demo_refinement(demo):
    prob, res = demo
    fine = cs.solve_center_stable(_demo_problem(n_nodes=201))
    x = res.graph.axes[0][:, None]
    assert np.max(np.abs(fine.graph(x) - res.graph(x))) <= 2e-3


def test_solve_demo_invariance(demo):
    prob, res = demo
    g = res.graph
    sp = prob.splitting
    X = g.nodes
    inner = np.abs(X[:, 0]) <= prob.half_width / 2
    img = prob.forward(sp.join(X[inner], g(X[inner])))
    xi, yi = sp.split(img)
    assert np.max(sp.norm2(yi - g(xi))) <= 2e-3


def test_solve_max_iterations(demo):
    prob, _ = demo
    with pytest.raises(MaxIterations) as info:
        cs.solve_center_stable(prob, max_iter=2)
    assert info.value.last_ratio <= prob.contraction_bound + 0.05


# --- membership -------------------------------------------------------------------


def test_membership_separates(demo):
    prob, res = demo
    sp = prob.splitting
    for x in (0.5, 1.0, -1.5):
        on = cs.graph_point(prob, res.graph, [x])
        mem_on = cs.membership_test(prob, res.graph, on, n_max=50)
        assert mem_on.on_graph
        off = on + sp.join(np.zeros(1), [0.1])[0]
        mem_off = cs.membership_test(prob, res.graph, off, n_max=50)
        assert not mem_off.on_graph and mem_off.exit_step is not None


def test_membership_plateau_independent_of_horizon(demo):
    prob, res = demo
    on = cs.graph_point(prob, res.graph, [1.0])
    short = cs.membership_test(prob, res.graph, on, n_max=20).growth_max
    long = cs.membership_test(prob, res.graph, on, n_max=50).growth_max
    assert long <= 10 * max(1.0, short)


def test_membership_origin(demo):
    prob, res = demo
    mem = cs.membership_test(prob, res.graph, np.zeros(2))
    assert mem.on_graph and mem.growth_max == 0.0 and mem.exit_step is None


def test_unstable_cone_grows(demo, rng):
    prob, _ = demo
    sp = prob.splitting
    eta = prob.lip_dev
    pts = rng.uniform(-1, 1, (400, 2))
    pts = pts[sp.norm2(sp.split(pts)[1]) >= sp.norm1(sp.split(pts)[0])][:100]
    base = sp.norm(pts)
    Z = pts
    for k in range(1, 11):
        Z = prob.forward(Z)
        X, Y = sp.split(Z)
        assert np.all(sp.norm2(Y) >= sp.norm1(X))
        assert np.all(sp.norm(Z) >= (sp.mu - eta) ** k * base * (1 - 1e-12))


def test_graph_function_csv_rows():
    prob = _linear_problem(n_nodes=11)
    g = cs.GraphFunction.zero(prob.grid(), 1)
    rows = g.to_csv_rows()
    assert rows.shape == (11, 2)
    assert rows[5, 0] == 0.0


def test_make_grid_centered():
    axes = cs.make_grid(2, 1.0, 11)
    assert len(axes) == 2 and all(len(a) % 2 == 1 and 0.0 in a for a in axes)


def test_make_grid_rejects_even_count():
    with pytest.raises(DomainError):
        cs.make_grid(1, 1.0, 10)
    with pytest.raises(DomainError):
        cs.make_grid(3, 1.0, 11)

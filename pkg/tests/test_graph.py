import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphnls.errors import ContinuityError, ValidationError
from graphnls.graph import (GraphPoint, GridField, TwoComponentState, ball_norm, derivative,
                            from_vector, graph_distance, h1_norm, inner_product, kinetic_form,
                            lp_norm, make_graph, random_smooth_field, rearrange,
                            rectangle_lp_power, stiffness_matrix, to_vector, x_norm)
from graphnls.profiles import half_soliton


def const(graph, value=1.0):
    return GridField(graph, np.full(graph.shape, value, dtype=complex))


# -- graph construction ----------------------------------------------------

def test_make_graph_spacing():
    assert make_graph(2, 1.0, 11).spacing == pytest.approx(0.1, abs=1e-15)
    g = make_graph(3, 30.0, 3001)
    assert g.spacing == pytest.approx(0.01, abs=1e-15)
    assert (g.points_per_edge - 1) * g.spacing == pytest.approx(g.edge_length, rel=1e-15)


@pytest.mark.parametrize("args", [(1, 1.0, 11), (3, 0.0, 11), (3, -1.0, 11), (3, 1.0, 2)])
def test_make_graph_rejects(args):
    with pytest.raises(ValidationError):
        make_graph(*args)


def test_vector_roundtrip_and_continuity():
    g = make_graph(3, 2.0, 21)
    f = random_smooth_field(g, np.random.default_rng(1), complex_valued=True)
    back = from_vector(g, to_vector(f))
    np.testing.assert_array_equal(back.values, f.values)
    bad = f.copy()
    bad.values[1, 0] += 1e-3
    with pytest.raises(ContinuityError):
        bad.check_continuity()
    with pytest.raises(ContinuityError):
        h1_norm(bad)


def test_two_component_state_needs_one_graph():
    with pytest.raises(ValidationError):
        TwoComponentState(GridField.zeros(make_graph(2, 1.0, 11)),
                          GridField.zeros(make_graph(3, 1.0, 11)))


# -- norms -----------------------------------------------------------------

def test_lp_norm_constant():
    g = make_graph(2, 1.0, 11)
    assert lp_norm(const(g), 2) == pytest.approx(np.sqrt(2), rel=1e-14)
    assert h1_norm(const(g)) ** 2 == pytest.approx(2.0, rel=1e-14)
    assert h1_norm(GridField.zeros(g)) == 0.0


def test_lp_norm_inf_is_max_modulus():
    g = make_graph(3, 2.0, 21)
    f = random_smooth_field(g, np.random.default_rng(2), complex_valued=True)
    assert lp_norm(f, np.inf) == np.max(np.abs(f.values))


def test_lp_norm_additive_over_edges():
    g = make_graph(3, 5.0, 51)
    f = random_smooth_field(g, np.random.default_rng(3))
    w = g.edge_weights()
    per_edge = [np.dot(w, np.abs(f.values[e]) ** 2) for e in range(3)]
    assert lp_norm(f) ** 2 == pytest.approx(sum(per_edge), rel=1e-14)


def test_half_soliton_mass_and_h1_against_closed_form():
    # fixture A: N=3, gamma=1, omega=0.16
    g = make_graph(3, 30.0, 3001)
    phi = half_soliton(0.16, 1.0, g)
    assert lp_norm(phi) == pytest.approx(np.sqrt(0.4), rel=1e-4)
    # per edge: mass 2s(1-t), kinetic 2 omega s (1-t^3)/3 with s = sqrt(omega), t = gamma/(N s)
    s, t = 0.4, 1.0 / 1.2
    h1_sq = 3 * (2 * s * (1 - t) + 2 * 0.16 * s * (1 - t ** 3) / 3)
    assert h1_norm(phi) ** 2 == pytest.approx(h1_sq, rel=1e-4)


def test_inner_product_identities():
    g = make_graph(3, 4.0, 41)
    rng = np.random.default_rng(4)
    f = random_smooth_field(g, rng, complex_valued=True)
    h = random_smooth_field(g, rng, complex_valued=True)
    assert inner_product(f, f) == pytest.approx(lp_norm(f) ** 2, rel=1e-14)
    assert inner_product(f, h * 1j) == pytest.approx(-inner_product(f * 1j, h), abs=1e-14)
    x = g.x
    a = GridField(g, np.tile(np.where(x < 1.0, 1.0, 0.0), (3, 1)).astype(complex))
    b = GridField(g, np.tile(np.where(x > 2.0, 1.0, 0.0), (3, 1)).astype(complex))
    assert inner_product(a, b) == 0.0
    with pytest.raises(ValidationError):
        inner_product(f, GridField.zeros(make_graph(3, 4.0, 21)))


def test_stiffness_form_matches_analytic_form():
    # ||u'||^2 - gamma |u(0)|^2 for u = exp(-x^2) on each edge: N * sqrt(pi/2)/2 - gamma
    gamma = 0.7
    errs = []
    for M in (401, 801):
        g = make_graph(3, 8.0, M)
        u = GridField.from_profile(g, lambda x: np.exp(-x ** 2))
        exact = 3 * np.sqrt(np.pi / 2) / 2 - gamma
        errs.append(abs(kinetic_form(u, gamma) - exact))
    assert errs[0] < 1e-3
    assert 3.5 < errs[0] / errs[1] < 4.5
    K = stiffness_matrix(make_graph(3, 8.0, 401), gamma)
    assert abs(K - K.T).max() == 0


def test_x_norm_combines_components():
    g = make_graph(2, 1.0, 11)
    s = TwoComponentState(const(g), const(g, 2.0))
    assert x_norm(s) ** 2 == pytest.approx(2.0 + 8.0, rel=1e-14)


def test_derivative_of_linear_function_exact():
    g = make_graph(2, 1.0, 11)
    f = GridField.from_profile(g, lambda x: 1.0 + 3.0 * x)
    np.testing.assert_allclose(derivative(f).real, 3.0, rtol=1e-12)


# -- metric structure ------------------------------------------------------

def test_graph_distance_examples():
    assert graph_distance(GraphPoint(1, 0.5), GraphPoint(1, 0.2)) == pytest.approx(0.3)
    assert graph_distance(GraphPoint(1, 0.5), GraphPoint(2, 0.2)) == pytest.approx(0.7)
    assert graph_distance(GraphPoint(1, 0.0), GraphPoint(3, 0.0)) == 0.0


def test_graph_distance_is_metric_on_small_grid():
    pts = [GraphPoint(e, 0.25 * i) for e in (1, 2, 3) for i in range(5)]
    for x, y in itertools.product(pts, repeat=2):
        assert graph_distance(x, y) == graph_distance(y, x)
        assert (graph_distance(x, y) == 0) == (x.coordinate == y.coordinate == 0
                                                or (x.edge == y.edge and x.coordinate == y.coordinate))
    for x, y, z in itertools.product(pts, repeat=3):
        assert graph_distance(x, z) <= graph_distance(x, y) + graph_distance(y, z) + 1e-15


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.floats(0, 5), st.integers(1, 3), st.floats(0, 5),
       st.integers(1, 3), st.floats(0, 5))
def test_graph_distance_triangle_property(e1, c1, e2, c2, e3, c3):
    x, y, z = GraphPoint(e1, c1), GraphPoint(e2, c2), GraphPoint(e3, c3)
    assert graph_distance(x, z) <= graph_distance(x, y) + graph_distance(y, z) + 1e-12


def test_graph_point_validation():
    with pytest.raises(ValidationError):
        GraphPoint(0, 1.0)
    with pytest.raises(ValidationError):
        GraphPoint(1, -0.5)


def test_ball_norm_examples():
    g = make_graph(3, 4.0, 41)
    one = const(g)
    assert ball_norm(one, GraphPoint(1, 0.0), 1.0, 2) == pytest.approx(np.sqrt(3), rel=1e-12)
    assert ball_norm(one, GraphPoint(1, 0.0), 1.0, 4) == pytest.approx(3 ** 0.25, rel=1e-12)
    # a radius that is not a grid multiple
    assert ball_norm(one, GraphPoint(1, 0.0), 0.55, 1) == pytest.approx(3 * 0.55, rel=1e-12)
    # centre inside edge 2 spills over the vertex onto the other edges
    assert ball_norm(one, GraphPoint(2, 0.3), 0.5, 1) == pytest.approx(0.8 + 2 * 0.2, rel=1e-12)
    f = random_smooth_field(g, np.random.default_rng(5))
    assert ball_norm(f, GraphPoint(1, 1.0), 10.0, 2) == pytest.approx(lp_norm(f, 2), rel=1e-12)
    assert ball_norm(f, GraphPoint(1, 1.0), 1e-9, 2) < 1e-3
    assert ball_norm(f, GraphPoint(1, 1.0), 10.0, np.inf) == lp_norm(f, np.inf)


# -- rearrangement ---------------------------------------------------------

def test_rearrange_step_example():
    g = make_graph(2, 4.0, 41)
    x = g.x
    u = np.zeros(g.shape)
    u[0, x < 1.0 - 1e-12] = 1.0
    u[1, x < 3.0 - 1e-12] = 1.0
    us = rearrange(GridField(g, u.astype(complex)))
    xs = us.graph.x
    assert us.graph.spacing == pytest.approx(g.spacing / 2)
    for e in range(2):
        np.testing.assert_array_equal(us.values[e].real, np.where(xs < 2.0 - 1e-12, 1.0, 0.0))


def test_rearrange_fixed_point_on_coarse_nodes():
    g = make_graph(3, 10.0, 101)
    f = GridField.from_profile(g, lambda x: np.exp(-x))
    fs = rearrange(f)
    np.testing.assert_array_equal(fs.values[:, ::3], f.values)


def test_rearrange_equimeasurable_and_monotone():
    g = make_graph(3, 6.0, 61)
    rng = np.random.default_rng(6)
    for _ in range(20):
        f = random_smooth_field(g, rng, complex_valued=True)
        fs = rearrange(f)
        ref = np.sort(np.repeat(np.abs(f.values).ravel(), 1))
        for e in range(3):
            np.testing.assert_array_equal(np.sort(fs.values[e].real), ref)
            assert np.all(np.diff(fs.values[e].real) <= 0)
        for p in (1, 2, 4):
            assert rectangle_lp_power(fs, p) == pytest.approx(rectangle_lp_power(f, p), rel=1e-13)
            tol = 2 * g.spacing * lp_norm(f, np.inf) ** p
            assert abs(lp_norm(fs, p) ** p - lp_norm(f, p) ** p) <= tol
        assert lp_norm(fs, np.inf) == lp_norm(f, np.inf)


# -- Gagliardo-Nirenberg ---------------------------------------------------

@pytest.mark.parametrize("p,q", [(2, 4), (2, 6), (1, 4), (4, np.inf)])
def test_gagliardo_nirenberg_ratio_bounded(p, q):
    # mu = (1/p - 1/q) / (1/2 + 1/p) makes the ratio dilation invariant, so it stays
    # bounded over fields of very different widths; a wrong exponent does not
    g = make_graph(3, 60.0, 6001)
    rng = np.random.default_rng(7)
    inv_q = 0.0 if np.isinf(q) else 1 / q
    mu = (1 / p - inv_q) / (0.5 + 1 / p)

    def ratios(m):
        out = []
        for s in (0.25, 0.5, 1.0, 2.0, 4.0):
            for _ in range(4):
                c = rng.uniform(0.2, 2.0, size=3)
                f = GridField.from_profile(g, lambda x: np.exp(-(x / s) ** 2))
                f = GridField(g, f.values * (1 + 0.5 * np.outer(c - c.mean(), np.tanh(g.x / s))))
                d = np.sqrt(np.sum(np.abs(derivative(f)) ** 2 * g.edge_weights()))
                out.append(lp_norm(f, q) / (d ** m * lp_norm(f, p) ** (1 - m)))
        return np.array(out)

    good = ratios(mu)
    assert good.max() / good.min() < 1.25
    bad = ratios(mu + 0.3)
    assert bad.max() / bad.min() > 1.5

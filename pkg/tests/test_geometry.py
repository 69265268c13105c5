from fractions import Fraction
from math import comb

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from psido.errors import CapExceeded, GridMismatch, InvalidFrame, NumericError
from psido.geometry import (
    Density,
    Frame,
    chart_forward,
    chart_inverse,
    density_in_frame,
    evaluate_faa_di_bruno,
    faa_di_bruno_terms,
    fd_weights,
    japanese,
    mixed_partial,
    multi_indices,
    numeric_jacobian,
    transition_map,
)
from psido.linearizations import make_model

coords = st.floats(-2.5, 2.5, allow_nan=False)


def test_japanese():
    assert japanese([0.0, 0.0]) == 1.0
    assert np.isclose(japanese([3.0, 4.0]), np.sqrt(26.0))
    assert japanese(np.zeros((5, 2))).shape == (5,)


@pytest.mark.parametrize("basis", [np.zeros((2, 2)), [[1.0, 2.0], [2.0, 4.0]], np.eye(3)])
def test_invalid_frame(basis):
    m = make_model("euclidean_standard", dim=2)
    with pytest.raises(InvalidFrame):
        Frame(m, [0.0, 0.0], basis)


def test_chart_examples():
    e = make_model("euclidean_standard", dim=2)
    assert np.allclose(chart_forward(Frame(e, [0, 0]), [1.0, 2.0]), [1.0, 2.0])
    h = make_model("hyperbolic_exp")
    f0 = Frame(h, [0.0, 0.0])
    assert np.allclose(chart_forward(f0, [0.7, 0.0]), [0.7, 0.0], atol=1e-12)
    # (0,1) lies at distance 1 along the y direction, where the metric is unit
    assert np.allclose(chart_forward(f0, [0.0, 1.0]), [0.0, 1.0], atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(coords, coords, coords, coords, st.floats(0.3, 2.0), st.floats(-1.0, 1.0))
def test_hyperbolic_chart_round_trip(zx, zy, px, py, scale, shear):
    h = make_model("hyperbolic_exp")
    fr = Frame(h, [zx, zy], [[scale, shear], [0.0, 1.0 / scale]])
    x = chart_forward(fr, [px, py])
    assert np.allclose(chart_forward(fr, chart_inverse(fr, x)), x, atol=1e-9)
    assert np.allclose(chart_inverse(fr, x), [px, py], atol=1e-9)


def test_transition_examples():
    e = make_model("euclidean_standard", dim=2)
    a, b = Frame(e, [0.0, 0.0]), Frame(e, [1.0, -2.0])
    x = np.array([0.3, 0.4])
    assert np.array_equal(transition_map(a, a, x), x)
    # b-coordinates of p are p - v; a-coordinates are p
    assert np.allclose(transition_map(a, b, x), x + [1.0, -2.0])
    assert np.allclose(transition_map(b, a, x), x - [1.0, -2.0])
    h = make_model("hyperbolic_exp")
    ha, hb = Frame(h, [0.0, 0.0]), Frame(h, [1.0, 0.0])
    assert np.allclose(transition_map(ha, hb, [0.0, 0.0]), chart_forward(ha, [1.0, 0.0]))
    with pytest.raises(GridMismatch):
        transition_map(a, Frame(make_model("euclidean_standard", dim=2), [0, 0]), x)


@pytest.mark.parametrize(
    "kind,params",
    [
        ("euclidean_standard", {"dim": 2}),
        ("euclidean_deformed", {"dim": 2, "sigma": 0.5}),
        ("hyperbolic_exp", {}),
    ],
)
def test_transition_composition_identity(kind, params):
    m = make_model(kind, **params)
    rng = np.random.default_rng(3)
    g = np.linspace(-5, 5, 10)
    box = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    for _ in range(3):
        fa = Frame(m, rng.uniform(-1, 1, 2), np.eye(2) + 0.2 * rng.standard_normal((2, 2)))
        fb = Frame(m, rng.uniform(-1, 1, 2), np.eye(2) + 0.2 * rng.standard_normal((2, 2)))
        back = transition_map(fb, fa, transition_map(fa, fb, box))
        assert np.max(np.abs(back - box)) <= 1e-8


def test_transition_jacobians_invert():
    h = make_model("hyperbolic_exp")
    fa, fb = Frame(h, [0.0, 0.0]), Frame(h, [0.5, -0.3], [[1.0, 0.2], [0.0, 1.0]])
    x = np.array([0.4, -0.7])
    ja = numeric_jacobian(lambda u: transition_map(fa, fb, u), x)
    jb = numeric_jacobian(lambda u: transition_map(fb, fa, u), transition_map(fa, fb, x))
    assert np.allclose(jb @ ja, np.eye(2), atol=1e-6)


def test_numeric_jacobian_examples():
    assert np.allclose(numeric_jacobian(lambda x: x, np.array([0.3, -1.0])), np.eye(2))
    A = np.array([[1.0, -2.0], [3.5, 0.25]])
    assert np.allclose(numeric_jacobian(lambda x: x @ A.T, np.array([2.0, 1.0])), A, atol=1e-12)
    f = lambda x: np.stack([x[..., 0] ** 2, x[..., 0] * x[..., 1]], -1)
    assert np.allclose(numeric_jacobian(f, np.array([1.0, 1.0])), [[2, 0], [1, 1]], atol=1e-9)
    with pytest.raises(ValueError):
        numeric_jacobian(f, np.array([1.0, 1.0]), h=0.0)
    with pytest.raises(NumericError), np.errstate(invalid="ignore", divide="ignore"):
        numeric_jacobian(lambda x: np.log(x), np.array([0.0]))


@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_fd_weights_exact_on_polynomials(order):
    nodes, w = fd_weights(order)
    assert np.all(nodes == -nodes[::-1])
    # exact on monomials of degree up to order + 3
    for deg in range(order + 4):
        approx = np.sum(w * nodes.astype(float) ** deg)
        exact = float(np.prod(range(1, order + 1))) if deg == order else 0.0
        assert abs(approx - exact) < 1e-9


def test_mixed_partial_matches_sympy():
    x, y = sp.symbols("x y")
    expr = sp.exp(-x**2 / 2) * sp.sin(x + 2 * y)
    f = sp.lambdify((x, y), expr, "numpy")
    pt = np.array([0.3, -0.4])
    for ox, oy in [(1, 0), (0, 2), (1, 1), (2, 1)]:
        exact = float(sp.diff(expr, x, ox, y, oy).subs({x: pt[0], y: pt[1]}))
        approx = mixed_partial(lambda v: f(v[..., 0], v[..., 1]), pt, [ox, oy])
        assert abs(approx - exact) < 1e-6 * max(1.0, abs(exact))


@pytest.mark.parametrize("dim,order", [(1, 3), (2, 2), (2, 4), (3, 3)])
def test_multi_indices_count(dim, order):
    idx = list(multi_indices(dim, order))
    assert len(idx) == len(set(idx)) == comb(dim + order - 1, order)
    assert all(sum(a) == order and min(a) >= 0 for a in idx)


def test_faa_second_order_example():
    terms = faa_di_bruno_terms((2,), 1, 1)
    got = {(t.outer_index, t.factors, t.coefficient) for t in terms}
    assert got == {
        ((2,), (((1,), (2,)),), Fraction(1)),
        ((1,), (((2,), (1,)),), Fraction(1)),
    }


@pytest.mark.parametrize("k,count", [(1, 1), (2, 2), (3, 3), (4, 5), (5, 7), (6, 11)])
def test_faa_term_counts_are_partition_numbers(k, count):
    assert len(faa_di_bruno_terms((k,), 1, 1)) == count


def test_faa_third_order_coefficients():
    coeffs = {t.outer_index: t.coefficient for t in faa_di_bruno_terms((3,), 1, 1)}
    assert coeffs == {(3,): 1, (2,): 3, (1,): 1}


@pytest.mark.parametrize("nu,n,p", [((2, 1), 2, 2), ((1, 1, 1), 3, 1), ((3,), 1, 2)])
def test_faa_structural_invariants(nu, n, p):
    for t in faa_di_bruno_terms(nu, n, p):
        assert isinstance(t.coefficient, Fraction)
        lam = np.sum([k for _, k in t.factors], axis=0)
        assert tuple(lam) == t.outer_index
        recon = np.sum([sum(k) * np.array(l) for l, k in t.factors], axis=0)
        assert tuple(recon) == nu
        assert all(sum(l) > 0 and sum(k) > 0 for l, k in t.factors)


def test_faa_evaluates_chain_rule():
    # f(u, v) = u^2 v, g(t) = (sin t, e^t), d^2/dt^2 of f(g(t)) at t0
    t = sp.symbols("t")
    u, v = sp.symbols("u v")
    f = u**2 * v
    g = (sp.sin(t), sp.exp(t))
    t0 = sp.Rational(1, 3)
    exact = float(sp.diff(f.subs({u: g[0], v: g[1]}), t, 2).subs(t, t0))
    gval = {u: g[0].subs(t, t0), v: g[1].subs(t, t0)}

    def outer(lam):
        return float(sp.diff(f, u, lam[0], v, lam[1]).subs(gval))

    def inner(l, i):
        return float(sp.diff(g[i], t, l[0]).subs(t, t0))

    val = evaluate_faa_di_bruno(faa_di_bruno_terms((2,), 1, 2), outer, inner)
    assert abs(val - exact) < 1e-12


def test_faa_errors():
    with pytest.raises(CapExceeded):
        faa_di_bruno_terms((7,), 1, 1)
    with pytest.raises(ValueError):
        faa_di_bruno_terms((0,), 1, 1)
    with pytest.raises(ValueError):
        faa_di_bruno_terms((1, 1), 1, 1)


def test_density_kind_validation():
    with pytest.raises(ValueError):
        Density("counting")


def test_density_frame_lebesgue():
    h = make_model("hyperbolic_exp")
    fa, fb = Frame(h, [0.0, 0.0]), Frame(h, [0.4, 0.2], [[1.2, 0.1], [0.0, 0.9]])
    d = Density("frame_lebesgue", fa)
    x = np.array([[0.3, -0.5], [1.0, 0.7]])
    assert np.allclose(density_in_frame(d, fa, x), 1.0)
    w = density_in_frame(d, fb, x)
    jac = numeric_jacobian(lambda u: transition_map(fa, fb, u), x)
    assert np.allclose(w, np.abs(np.linalg.det(jac)), rtol=1e-6)


def test_density_riemannian_hyperbolic():
    h = make_model("hyperbolic_exp")
    fr = Frame(h, [0.0, 0.0])
    d = Density("riemannian")
    # in a chart whose inverse is the identity near the base, the weight is
    # cosh(x) times |det d(model coords)/d(frame coords)|
    x = np.array([[0.3, -0.5], [1.1, 0.2]])
    p = chart_inverse(fr, x)
    jac = numeric_jacobian(lambda u: chart_inverse(fr, u), x)
    expected = np.cosh(p[:, 0]) * np.abs(np.linalg.det(jac))
    assert np.allclose(density_in_frame(d, fr, x), expected, rtol=1e-6)
    assert np.all(density_in_frame(d, fr, x) > 0)

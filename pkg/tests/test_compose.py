import numpy as np
import pytest

from psido.compose import (
    composition_expansion,
    composition_geometry,
    compose_kernels,
    expansion_terms,
    moyal_product,
)
from psido.errors import CapExceeded, GridMismatch
from psido.geometry import Frame
from psido.grids import GridSpec, SymbolGrid, canonical_cov
from psido.linearizations import make_model
from psido.quantize import KernelGrid, QuantizationSpec


def _x(v):
    return v[..., 0]


@pytest.fixture
def spec1():
    m = make_model("euclidean_standard", dim=1)
    return QuantizationSpec(m, Frame(m, [0.0]))


def _rel(a, b):
    return float(np.linalg.norm(np.ravel(a) - np.ravel(b)) / np.linalg.norm(np.ravel(b)))


def test_compose_with_identity_kernel():
    g = GridSpec(1, 4.0, 32)
    rng = np.random.default_rng(0)
    KA = KernelGrid(g, rng.standard_normal((32, 32)))
    delta = KernelGrid(g, np.eye(32) / g.h)
    assert np.max(np.abs(compose_kernels(KA, delta).data - KA.data)) <= 1e-8


def test_compose_rank_one_gaussians():
    g = GridSpec(1, 6.0, 96)
    x = g.axis()
    a1, a2 = 1.0, 0.5
    v1, w1 = np.exp(-np.pi * x**2), np.exp(-np.pi * a1 * x**2)
    v2, w2 = np.exp(-np.pi * a2 * x**2), np.exp(-np.pi * x**2 / 3)
    K = compose_kernels(KernelGrid(g, np.outer(v1, w1)), KernelGrid(g, np.outer(v2, w2)))
    overlap = 1.0 / np.sqrt(a1 + a2)  # int exp(-pi (a1 + a2) t^2) dt
    assert np.max(np.abs(K.data - overlap * np.outer(v1, w2))) <= 1e-7


def test_compose_associative_and_grid_checked():
    g = GridSpec(1, 3.0, 16)
    rng = np.random.default_rng(1)
    A, B, C = (KernelGrid(g, rng.standard_normal((16, 16))) for _ in range(3))
    left = compose_kernels(compose_kernels(A, B), C).data
    right = compose_kernels(A, compose_kernels(B, C)).data
    assert np.max(np.abs(left - right)) <= 1e-8 * np.max(np.abs(left))
    with pytest.raises(GridMismatch):
        compose_kernels(A, KernelGrid(GridSpec(1, 4.0, 16), np.zeros((16, 16))))


def _sym(f, base, lam=0.0):
    return SymbolGrid.from_callable(f, base, canonical_cov(base, lam))


def test_moyal_product_trivial_cases(spec1):
    base = GridSpec(1, 6.0, 64)
    a = _sym(lambda x, t: np.exp(-np.pi * (_x(x) ** 2 / 2 + _x(t) ** 2)), base)
    zero = a.with_data(np.zeros_like(a.data))
    assert np.max(np.abs(moyal_product(spec1, a, zero).data)) == 0
    # composing with a multiple of the identity scales the symbol
    c = _sym(lambda x, t: 2.5 + 0 * _x(x) * _x(t), base)
    assert _rel(moyal_product(spec1, a, c).data, 2.5 * a.data) <= 1e-8
    with pytest.raises(ValueError):
        moyal_product(spec1, a, a, mode="sideways")
    with pytest.raises(GridMismatch):
        moyal_product(spec1, a, _sym(lambda x, t: 1.0 + 0 * _x(x) * _x(t), GridSpec(1, 5.0, 64)))


def test_symmetrized_involution(spec1):
    base = GridSpec(1, 8.0, 128)
    a = _sym(lambda x, t: np.exp(-np.pi * (_x(x) ** 2 / 4 + _x(t) ** 2)) * (1 + 0.3j * _x(x)), base)
    b = _sym(lambda x, t: np.exp(-np.pi * (_x(x) ** 2 / 2 + _x(t) ** 2 / 2)) * (1 + 0.5 * _x(t)), base)
    ab = moyal_product(spec1, a, b, mode="symmetrized")
    ba = moyal_product(spec1, b.conj(), a.conj(), mode="symmetrized")
    assert _rel(np.conj(ab.data), ba.data) <= 1e-8


def test_euclidean_composition_geometry():
    m = make_model("euclidean_standard", dim=2)
    geo = composition_geometry(m, Frame(m, [0.0, 0.0]))
    assert geo.analytic
    rng = np.random.default_rng(2)
    x, z, zp = rng.standard_normal((3, 5, 2))
    assert np.allclose(geo.r(x, z, zp), z + zp)
    assert np.allclose(geo.s(x, z, 0 * zp), 0)
    assert np.allclose(geo.phi(x, z, zp), 0)
    assert np.allclose(geo.V(x, z, zp), np.eye(2))
    assert np.allclose(geo.q(x, z, zp), -zp)


def test_hyperbolic_composition_geometry():
    m = make_model("hyperbolic_exp")
    geo = composition_geometry(m, Frame(m, [0.0, 0.0]))
    assert not geo.analytic
    x, z = np.array([0.3, -0.2]), np.array([0.5, 0.4])
    assert np.allclose(geo.s(x, z, np.zeros(2)), 0, atol=1e-10)
    u = np.array([0.6, 0.8])
    eps = np.geomspace(1e-2, 1e-1, 6)
    vals = [np.linalg.norm(geo.phi(x, z, e * u)) for e in eps]
    slope = np.polyfit(np.log(eps), np.log(vals), 1)[0]
    assert slope >= 1.9


def test_expansion_leading_and_constant(spec1):
    base = GridSpec(1, 4.0, 32)
    fa = lambda x, t: np.exp(-np.pi * (_x(x) ** 2 / 4 + _x(t) ** 2)) * (1 + _x(x) / 2)
    fb = lambda x, t: np.exp(-np.pi * (_x(x) ** 2 / 8 + _x(t) ** 2 / 2))
    a, b = _sym(fa, base), _sym(fb, base)
    X, T = base.points()[:, None, :], canonical_cov(base, 0.0).points()[None, :, :]
    p0 = composition_expansion(spec1, a, b, 0)
    assert np.max(np.abs(p0.data - fa(X, T) * fb(X, T))) <= 1e-12
    c = _sym(lambda x, t: 3.0 + 0 * _x(x) * _x(t), base)
    pc = composition_expansion(spec1, a, c, 2)
    assert np.max(np.abs(pc.data - 3.0 * a.data)) <= 1e-6


def test_expansion_first_order_sign(spec1):
    # first-order piece is (1/(2 pi i)) d_theta a d_x b
    base = GridSpec(1, 4.0, 32)
    fa = lambda x, t: np.exp(-np.pi * (_x(x) ** 2 / 4 + _x(t) ** 2))
    fb = lambda x, t: np.exp(-np.pi * (_x(x) ** 2 / 8 + _x(t) ** 2 / 2))
    a, b = _sym(fa, base), _sym(fb, base)
    X, T = base.points()[:, None, :], canonical_cov(base, 0.0).points()[None, :, :]
    da = -2 * np.pi * _x(T) * fa(X, T)
    db = -np.pi / 4 * _x(X) * fb(X, T)
    pieces = expansion_terms(spec1, a, b, 1)
    assert np.max(np.abs(pieces[1] - da * db / (2j * np.pi))) <= 1e-6


def test_expansion_errors(spec1):
    base = GridSpec(1, 4.0, 16)
    a = _sym(lambda x, t: np.exp(-np.pi * (_x(x) ** 2 + _x(t) ** 2)), base)
    with pytest.raises(CapExceeded):
        expansion_terms(spec1, a, a, 3)
    with pytest.raises(ValueError):
        expansion_terms(spec1.with_lambda(0.5), a, a, 1)

"""Operator composition: kernel products, Moyal products and the truncated
composition expansion for normal (``lam = 0``) symbols."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import CapExceeded, GridMismatch
from .geometry import Density, Frame, density_in_frame, mixed_partial, multi_indices, numeric_jacobian
from .grids import SymbolGrid, canonical_cov
from .linearizations import ManifoldModel
from .quantize import (
    BoundaryWarning,
    KernelGrid,
    QuantizationSpec,
    expansion_coefficient,
    kernel_from_symbol,
    symbol_from_kernel,
)

__all__ = [
    "CompositionGeometry",
    "compose_kernels",
    "moyal_product",
    "composition_geometry",
    "composition_expansion",
    "expansion_terms",
]

EXPANSION_CAP = 2


def compose_kernels(KA: KernelGrid, KB: KernelGrid, density: Density | None = None,
                    frame: Frame | None = None) -> KernelGrid:
    """Kernel of ``AB``: ``K(x, y) = sum_t K_A(x, t) K_B(t, y) mu(t) h^n``."""
    if not KA.grid.matches(KB.grid):
        raise GridMismatch("kernel grids differ")
    density = density or KA.density
    if KA.density.kind != KB.density.kind:
        raise GridMismatch("kernel densities differ")
    g = KA.grid
    frame = frame or density.frame
    if frame is None:
        w = np.ones(g.size)
    else:
        w = density_in_frame(density, frame, g.points())
    data = KA.data @ ((w * g.cell)[:, None] * KB.data)
    return KernelGrid(g, data, density)


def moyal_product(spec: QuantizationSpec, a: SymbolGrid, b: SymbolGrid, mode: str = "lambda") -> SymbolGrid:
    """``sigma_lam(Op_lam(a) Op_lam(b))`` by the kernel route.

    ``mode='symmetrized'`` returns the average of the ``lam = 0`` and
    ``lam = 1`` products.
    """
    if mode == "symmetrized":
        p0 = moyal_product(spec.with_lambda(0.0), a, b, "lambda")
        p1 = moyal_product(spec.with_lambda(1.0), a, b, "lambda")
        return p0.with_data(0.5 * (p0.data + p1.data))
    if mode != "lambda":
        raise ValueError("mode must be 'lambda' or 'symmetrized'")
    if not a.base.matches(b.base):
        raise GridMismatch("symbol grids differ")
    KA = kernel_from_symbol(spec, a, check=False)
    KB = kernel_from_symbol(spec, b, check=False)
    K = compose_kernels(KA, KB, spec.density, spec.frame)
    return symbol_from_kernel(spec, K, class_meta=dict(a.class_meta))


# ---------------------------------------------------------------------------
# composition geometry


def _as(x, n):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class CompositionGeometry:
    """Maps describing two successive displacements ``psi = m_{-1}``.

    With ``x^{zeta, zeta'} = psi(psi(x, zeta), zeta')``:

    * ``r(x, zeta, zeta') = psi_x^{-1}(x^{zeta, zeta'})``
    * ``s = r - zeta``
    * ``phi = r - zeta - (dr_{x,zeta})_0 zeta'``
    * ``V = (dr_{x,zeta})_{zeta'}``, ``L = -(dr_{x,zeta})_0^T``
    * ``q(x, zeta, zeta') = P_{psi(x,zeta), -zeta'}(-zeta')``
    """

    model: ManifoldModel
    frame: Frame
    analytic: bool

    @property
    def dim(self) -> int:
        return self.model.dim

    def psi(self, x, zeta):
        return self.model.psi(self.frame, _as(x, 0), -_as(zeta, 0))

    def point(self, x, zeta, zeta_p):
        return self.psi(self.psi(x, zeta), zeta_p)

    def r(self, x, zeta, zeta_p):
        x, zeta, zeta_p = np.broadcast_arrays(_as(x, 0), _as(zeta, 0), _as(zeta_p, 0))
        if self.analytic:
            return zeta + zeta_p
        return -self.model.psi_bar(self.frame, x, self.point(x, zeta, zeta_p))

    def s(self, x, zeta, zeta_p):
        return self.r(x, zeta, zeta_p) - np.asarray(zeta, float)

    def V(self, x, zeta, zeta_p):
        x, zeta, zeta_p = np.broadcast_arrays(_as(x, 0), _as(zeta, 0), _as(zeta_p, 0))
        if self.analytic:
            return np.broadcast_to(np.eye(self.dim), x.shape + (self.dim,)).copy()
        return numeric_jacobian(lambda w: self.r(x, zeta, w), zeta_p)

    def dr0(self, x, zeta):
        x, zeta = np.broadcast_arrays(_as(x, 0), _as(zeta, 0))
        return self.V(x, zeta, np.zeros_like(zeta))

    def phi(self, x, zeta, zeta_p):
        x, zeta, zeta_p = np.broadcast_arrays(_as(x, 0), _as(zeta, 0), _as(zeta_p, 0))
        if self.analytic:
            return np.zeros_like(zeta)
        lin = np.einsum("...ij,...j->...i", self.dr0(x, zeta), zeta_p)
        return self.r(x, zeta, zeta_p) - zeta - lin

    def L(self, x, zeta):
        return -np.swapaxes(self.dr0(x, zeta), -1, -2)

    def transport(self, x, zeta, zeta_p):
        """``P_{psi(x, zeta), -zeta'}``, the transport entering ``q`` and ``f_b``."""
        x, zeta, zeta_p = np.broadcast_arrays(_as(x, 0), _as(zeta, 0), _as(zeta_p, 0))
        if self.analytic:
            return np.broadcast_to(np.eye(self.dim), x.shape + (self.dim,)).copy()
        return self.model.transport(self.frame, self.psi(x, zeta), -zeta_p)

    def q(self, x, zeta, zeta_p):
        P = self.transport(x, zeta, zeta_p)
        return np.einsum("...ij,...j->...i", P, -np.asarray(zeta_p, float))

    def jac_R(self, x, zeta, zeta_p):
        """``|det|`` of the Jacobian of ``(zeta, zeta') -> (r, q)``."""
        x, zeta, zeta_p = np.broadcast_arrays(_as(x, 0), _as(zeta, 0), _as(zeta_p, 0))
        if self.analytic:
            return np.ones(x.shape[:-1])
        n = self.dim

        def R(w):
            return np.concatenate([self.r(x, w[..., :n], w[..., n:]), self.q(x, w[..., :n], w[..., n:])], -1)

        jac = numeric_jacobian(R, np.concatenate([zeta, zeta_p], -1))
        return np.abs(np.linalg.det(jac))

    def f_b(self, b_eval: Callable, x, zeta, zeta_p, theta_p):
        """``b(x^{zeta,zeta'}, -P^{-T} theta') |J(R)| |det P^{-1}|``."""
        x, zeta, zeta_p, theta_p = np.broadcast_arrays(_as(x, 0), _as(zeta, 0), _as(zeta_p, 0), _as(theta_p, 0))
        P = self.transport(x, zeta, zeta_p)
        Pinv = np.linalg.inv(P)
        th = -np.einsum("...ji,...j->...i", Pinv, theta_p)
        pt = x - zeta - zeta_p if self.analytic else self.point(x, zeta, zeta_p)
        val = np.asarray(b_eval(pt, th), dtype=complex)
        if self.analytic:
            return val
        return val * self.jac_R(x, zeta, zeta_p) * np.abs(np.linalg.det(Pinv))


def composition_geometry(model: ManifoldModel, frame: Frame) -> CompositionGeometry:
    """Composition maps for ``model`` in ``frame`` (closed forms for affine frames)."""
    return CompositionGeometry(model, frame, bool(model.is_affine(frame)))


# ---------------------------------------------------------------------------
# expansion


def _callable(sym: SymbolGrid) -> Callable:
    if sym.func is not None:
        return sym.func
    warnings.warn("symbol has no exact callable; using spline interpolation",
                  BoundaryWarning, stacklevel=3)
    return sym.evaluate


def expansion_terms(spec: QuantizationSpec, a: SymbolGrid, b: SymbolGrid, order: int) -> list[np.ndarray]:
    """Homogeneous pieces of the composition expansion, grouped by ``|beta| + |gamma|``.

    Piece ``k`` is ``sum_{|beta|+|gamma|=k} c_beta c_gamma
    d_zeta^gamma d_theta^gamma d_zeta'^beta d_eta^beta G`` at
    ``(zeta, theta, zeta', eta) = (0, theta, 0, 0)``, where
    ``G = a(x, theta) exp(2 pi i <theta, phi(zeta')>) f_b(x, zeta, zeta', L theta + eta)``.
    """
    if order < 0 or order > EXPANSION_CAP:
        raise CapExceeded(f"expansion order is capped at {EXPANSION_CAP}")
    if spec.lam != 0.0:
        raise ValueError("the composition expansion is stated for lambda = 0 symbols")
    geo = composition_geometry(spec.model, spec.frame)
    n = spec.model.dim
    cov = canonical_cov(a.base, 0.0)
    X = a.base.points()[:, None, :]
    TH = cov.points()[None, :, :]
    X, TH = np.broadcast_arrays(X, TH)
    fa, fb = _callable(a), _callable(b)
    zero = np.zeros_like(X)
    w0 = np.concatenate([zero, TH, zero, zero], axis=-1)

    def G(w):
        zeta, theta, zeta_p, eta = (w[..., k * n:(k + 1) * n] for k in range(4))
        val = np.asarray(fa(X, theta), dtype=complex)
        if not geo.analytic:
            ph = geo.phi(X, zeta, zeta_p)
            val = val * np.exp(2j * np.pi * np.sum(theta * ph, axis=-1))
        Lt = np.einsum("...ij,...j->...i", geo.L(X, zeta), theta)
        return val * geo.f_b(fb, X, zeta, zeta_p, Lt + eta)

    pieces = []
    for k in range(order + 1):
        acc = np.zeros(X.shape[:-1], dtype=complex)
        for kb in range(k + 1):
            for beta in multi_indices(n, kb):
                for gamma in multi_indices(n, k - kb):
                    c = expansion_coefficient(beta) * expansion_coefficient(gamma)
                    orders = list(gamma) + list(gamma) + list(beta) + list(beta)
                    acc = acc + c * mixed_partial(G, w0, orders)
        pieces.append(acc)
    return pieces


def composition_expansion(spec: QuantizationSpec, a: SymbolGrid, b: SymbolGrid, order: int) -> SymbolGrid:
    """Truncated normal symbol of ``Op_0(a) Op_0(b)`` through total order ``order``."""
    pieces = expansion_terms(spec, a, b, order)
    cov = canonical_cov(a.base, 0.0)
    return SymbolGrid(a.base, cov, sum(pieces), dict(a.class_meta))

"""Fiberwise Fourier transform, lambda-quantization and symbol calculus on grids.

Conventions
-----------
The forward fiber transform is ``a^(theta) = sum_xi exp(-2 pi i theta.xi) a(xi) dxi``
and the inverse uses ``exp(+2 pi i theta.xi)`` with ``dtheta``.  For a
symbol ``a`` the kernel of ``Op_lam(a)`` is::

    K(x, y) = (F^-1 a)(m, xi) / (mu_lam(x, y) mu(m)),   (m, xi) = Phi_lam^-1(x, y)

and operators act by ``A v(x) = sum_y K(x, y) v(y) mu(y) h^n``.  Values of
``F^-1 a`` at fiber points outside the fiber box are taken as zero.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import factorial
from typing import Callable

import numpy as np

from .errors import CapExceeded, GridMismatch, HypothesisViolation, ResolutionError
from .geometry import Density, Frame, density_in_frame, mixed_partial, multi_indices, numeric_jacobian
from .grids import (
    GridFn,
    GridSpec,
    SymbolGrid,
    canonical_cov,
    canonical_fiber,
    centered_dft,
    interpolate,
    lambda_fraction,
)
from .linearizations import (
    ManifoldModel,
    mu_lambda,
    mu_lambda_at_phi,
    phi_lambda,
    phi_lambda_inv,
    upsilon_t,
)

__all__ = [
    "QuantizationSpec",
    "KernelGrid",
    "BoundaryWarning",
    "fiber_fourier",
    "kernel_from_symbol",
    "kernel_from_amplitude",
    "symbol_from_kernel",
    "apply_operator",
    "apply_kernel",
    "lambda_convert",
    "lambda_amplitude",
    "reduce_amplitude",
    "adjoint_symbol",
    "expansion_coefficient",
]

CONVERT_CAP = 3
_CHUNK = 1 << 22


class BoundaryWarning(UserWarning):
    """Data does not decay toward the edge of its grid."""


@dataclass(frozen=True, eq=False)
class QuantizationSpec:
    """Model, frame, density and quantization parameter ``lam``."""

    model: ManifoldModel
    frame: Frame
    density: Density | None = None
    lam: float = 0.0

    def __post_init__(self):
        lam = float(self.lam)
        if not 0.0 <= lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if lam not in (0.0, 1.0) and not self.model.h_psi_declared(self.frame):
            raise HypothesisViolation(
                f"lambda = {lam} needs the midpoint hypothesis, which {self.model.kind} lacks"
            )
        object.__setattr__(self, "lam", lam)
        if self.density is None:
            object.__setattr__(self, "density", Density("frame_lebesgue", self.frame))

    def with_lambda(self, lam: float) -> "QuantizationSpec":
        return QuantizationSpec(self.model, self.frame, self.density, lam)

    def mu(self, x) -> np.ndarray:
        return density_in_frame(self.density, self.frame, x)

    @property
    def affine(self) -> bool:
        return self.model.is_affine(self.frame)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "frame": self.frame.to_dict(),
            "density": self.density.to_dict(),
            "lambda": self.lam,
        }


@dataclass(frozen=True, eq=False)
class KernelGrid:
    """Kernel samples ``K[x_i, y_j]`` on a square grid.

    ``func``, when present, evaluates the kernel exactly at arbitrary
    ``(x, y)`` pairs.
    """

    grid: GridSpec
    data: np.ndarray
    density: Density = field(default_factory=Density)
    func: Callable | None = None

    def __post_init__(self):
        d = np.asarray(self.data, dtype=complex).reshape(self.grid.size, self.grid.size)
        if not np.all(np.isfinite(d)):
            raise ResolutionError("kernel has non-finite entries")
        object.__setattr__(self, "data", d)

    def weights(self, frame: Frame) -> np.ndarray:
        return density_in_frame(self.density, frame, self.grid.points())

    def hs_norm(self, frame: Frame) -> float:
        """Quadrature of ``(int int |K|^2 dmu dmu)^(1/2)``."""
        mu = self.weights(frame) * self.grid.cell
        return float(np.sqrt(np.einsum("i,ij,j->", mu, np.abs(self.data) ** 2, mu)))

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.data))

    def evaluate(self, x, y) -> np.ndarray:
        if self.func is not None:
            return self.func(np.asarray(x, float), np.asarray(y, float))
        g = self.grid
        idx = np.concatenate([g.index_of(x), g.index_of(y)], axis=-1)
        return interpolate(self.data.reshape(g.shape * 2), idx.reshape(-1, 2 * g.dim))

    def conj_transpose(self) -> "KernelGrid":
        f = self.func
        h = None if f is None else (lambda x, y: np.conj(f(y, x)))
        return KernelGrid(self.grid, self.data.conj().T, self.density, h)

    def __add__(self, other):
        return KernelGrid(self.grid, self.data + other.data, self.density)

    def __sub__(self, other):
        return KernelGrid(self.grid, self.data - other.data, self.density)


# ---------------------------------------------------------------------------
# helpers


def _index_grid(spec: GridSpec) -> np.ndarray:
    mesh = np.meshgrid(*([np.arange(spec.N)] * spec.dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _flat(idx: np.ndarray, N: int) -> np.ndarray:
    out = idx[..., 0]
    for a in range(1, idx.shape[-1]):
        out = out * N + idx[..., a]
    return out


def _inv_dft_rows(rows: np.ndarray, cov: GridSpec, shift=None) -> np.ndarray:
    """``sum_theta rows(theta) exp(2 pi i theta.(xi_j + shift)) dtheta^n`` on the dual grid."""
    n = cov.dim
    th = cov.points()
    if shift is not None:
        rows = rows * np.exp(2j * np.pi * (shift @ th.T))
    r = rows.reshape((rows.shape[0],) + cov.shape)
    out = centered_dft(r, axes=tuple(range(1, n + 1)), sign=+1) * cov.cell
    return out.reshape(rows.shape[0], -1)


def _fiber_sum(rows: np.ndarray, cov: GridSpec, xi: np.ndarray) -> np.ndarray:
    """Direct non-uniform sum ``sum_theta rows_p(theta) exp(2 pi i theta.xi_p) dtheta^n``."""
    n = cov.dim
    ax = cov.axis()
    if n == 1:
        E = np.exp(2j * np.pi * xi[:, 0:1] * ax[None, :])
        return np.sum(rows * E, axis=1) * cov.cell
    E1 = np.exp(2j * np.pi * xi[:, 0:1] * ax[None, :])
    E2 = np.exp(2j * np.pi * xi[:, 1:2] * ax[None, :])
    r = rows.reshape(-1, cov.N, cov.N)
    return np.einsum("pij,pi,pj->p", r, E1, E2) * cov.cell


def _inside_fiber(xi: np.ndarray, fiber: GridSpec) -> np.ndarray:
    tol = 1e-9 * fiber.h
    return np.all((xi >= -fiber.L - tol) & (xi < fiber.L - tol), axis=-1)


def _check_decay(a: SymbolGrid, rel: float = 1e-6):
    vals = np.abs(a.values())
    n = a.dim
    peak = vals.max(initial=0.0)
    if peak == 0.0:
        return
    edge = 0.0
    for ax in range(n, 2 * n):
        edge = max(edge, np.take(vals, [0, -1], axis=ax).max())
    if edge > rel * peak:
        warnings.warn(
            f"symbol does not decay at the covariable boundary ({edge / peak:.2e} of peak)",
            BoundaryWarning,
            stacklevel=3,
        )


def _check_cov(a: SymbolGrid, lam: float) -> bool:
    return a.cov.matches(canonical_cov(a.base, lam))


# ---------------------------------------------------------------------------
# fiber transform


def fiber_fourier(a: SymbolGrid, direction: str = "forward", mu: Callable | None = None) -> SymbolGrid:
    """Fourier transform along the fibers.

    ``forward`` maps samples on ``(x, xi)`` to ``(x, theta)`` with kernel
    ``exp(-2 pi i theta.xi)``; ``inverse`` uses ``exp(+2 pi i theta.xi)``.
    The output covariable grid is the discrete dual of the input one.  A
    density weight ``mu(x)`` multiplies before the forward transform and
    divides after the inverse one.
    """
    if direction not in ("forward", "inverse"):
        raise ValueError("direction must be 'forward' or 'inverse'")
    n = a.dim
    out_cov = a.cov.dual()
    if not out_cov.dual().matches(a.cov):
        raise GridMismatch("covariable grid is not self-dual")
    data = a.data
    w = None if mu is None else np.asarray(mu(a.base.points()), dtype=float)[:, None]
    if direction == "forward" and w is not None:
        data = data * w
    r = data.reshape((a.base.size,) + a.cov.shape)
    sign = -1 if direction == "forward" else +1
    res = centered_dft(r, axes=tuple(range(1, n + 1)), sign=sign) * a.cov.cell
    res = res.reshape(a.base.size, -1)
    if direction == "inverse" and w is not None:
        res = res / w
    return SymbolGrid(a.base, out_cov, res, dict(a.class_meta))


# ---------------------------------------------------------------------------
# symbol -> kernel


def _kernel_direct(spec: QuantizationSpec, a: SymbolGrid, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Kernel values at arbitrary pairs by direct fiber sums."""
    x = np.asarray(x, dtype=float).reshape(-1, a.dim)
    y = np.asarray(y, dtype=float).reshape(-1, a.dim)
    fiber = a.cov.dual()
    out = np.zeros(x.shape[0], dtype=complex)
    step = max(1, _CHUNK // a.cov.size)
    for s in range(0, x.shape[0], step):
        xs, ys = x[s:s + step], y[s:s + step]
        m, xi = phi_lambda_inv(spec.model, spec.frame, spec.lam, xs, ys)
        inside = _inside_fiber(xi, fiber)
        if not np.any(inside):
            continue
        rows = a.values_at(m[inside])
        ft = _fiber_sum(rows, a.cov, xi[inside])
        mul = mu_lambda(spec.model, spec.frame, spec.density, spec.lam, xs[inside], ys[inside])
        res = np.zeros(xs.shape[0], dtype=complex)
        res[inside] = ft / (mul * spec.mu(m[inside]))
        out[s:s + step] = res
    return out


def _kernel_affine(spec: QuantizationSpec, a: SymbolGrid) -> np.ndarray:
    """Kernel on the grid for affine frames and ``lam`` in {0, 1/2, 1}."""
    g = a.base
    N, n = g.N, g.dim
    IX = _index_grid(g)
    pts = g.points()
    mu = spec.mu(pts)
    K = np.zeros((g.size, g.size), dtype=complex)
    lam = spec.lam
    if lam in (0.0, 1.0):
        G = _inv_dft_rows(a.data, a.cov)
        step = max(1, _CHUNK // g.size)
        for s in range(0, g.size, step):
            ix = IX[s:s + step]
            J = ix[:, None, :] - IX[None, :, :] + N // 2
            valid = np.all((J >= 0) & (J < N), axis=-1)
            jf = _flat(np.clip(J, 0, N - 1), N)
            if lam == 0.0:
                vals = np.take_along_axis(G[s:s + step], jf, axis=1)
                vals = vals / mu[None, :]
            else:
                vals = G[np.arange(g.size)[None, :], jf]
                vals = vals / mu[s:s + step, None]
            K[s:s + step] = np.where(valid, vals, 0.0)
        return K
    # lam = 1/2: midpoints on the doubled lattice, one first-axis slice at a time
    ii, kk = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    Mab = ii + kk
    Jab = (ii - kk - Mab % 2) // 2 + N // 2
    okj = (Jab >= 0) & (Jab < N)
    if n == 1:
        M_tail = np.zeros((1, 0), dtype=int)
    else:
        M_tail = np.arange(2 * N - 1)[:, None]
    K = K.reshape((N,) * (2 * n))
    for M1 in range(2 * N - 1):
        M = np.concatenate([np.full((M_tail.shape[0], 1), M1), M_tail], axis=1)
        par = M % 2
        m_pts = -g.L + 0.5 * g.h * M
        even = np.all(par == 0, axis=1)
        rows = np.empty((M.shape[0], a.cov.size), dtype=complex)
        if np.any(even):
            rows[even] = a.data[_flat(M[even] // 2, N)]
        if np.any(~even):
            rows[~even] = a.values_at(m_pts[~even])
        G = _inv_dft_rows(rows, a.cov, shift=par * g.h) * spec.mu(m_pts)[:, None]
        G = G.reshape((M.shape[0],) + (N,) * n)
        sel = (Mab == M1) & okj
        i1, k1 = np.nonzero(sel)
        j1 = Jab[i1, k1]
        if n == 1:
            K[i1, k1] = G[0, j1]
        else:
            M2 = Mab[None]
            vals = G[M2, j1[:, None, None], Jab[None]]
            vals = np.where(okj[None], vals, 0.0)
            K[i1[:, None, None], ii[None], k1[:, None, None], kk[None]] = vals
    K = K.reshape(g.size, g.size)
    return K / (mu[:, None] * mu[None, :])


def kernel_from_symbol(spec: QuantizationSpec, a: SymbolGrid, check: bool = True) -> KernelGrid:
    """Kernel of ``Op_lam(a)`` sampled on ``a.base``.

    Affine frames with ``lam`` in {0, 1/2, 1} and a covariable grid from
    :func:`canonical_cov` use FFTs; everything else evaluates the fiber
    sum directly at ``xi_lam(x, y)``.
    """
    if check:
        _check_decay(a)
    g = a.base
    fast = spec.affine and spec.lam in (0.0, 0.5, 1.0) and _check_cov(a, spec.lam)
    if fast:
        data = _kernel_affine(spec, a)
    else:
        pts = g.points()
        X = np.repeat(pts, g.size, axis=0)
        Y = np.tile(pts, (g.size, 1))
        data = _kernel_direct(spec, a, X, Y).reshape(g.size, g.size)
    func = lambda x, y: _kernel_direct(spec, a, x, y)
    return KernelGrid(g, data, spec.density, func)


def kernel_from_amplitude(spec: QuantizationSpec, amp: Callable, base: GridSpec,
                          cov: GridSpec | None = None) -> KernelGrid:
    """Kernel of the operator with amplitude ``amp(x, zeta, theta)``.

    ``K(x, y) = sum_theta exp(2 pi i theta.xi) amp(m, xi, theta) dtheta^n / (mu_lam mu(m))``
    with ``(m, xi) = Phi_lam^-1(x, y)``.
    """
    cov = cov or canonical_cov(base, spec.lam)
    fiber = cov.dual()
    pts = base.points()
    X = np.repeat(pts, base.size, axis=0)
    Y = np.tile(pts, (base.size, 1))
    th = cov.points()
    out = np.zeros(X.shape[0], dtype=complex)
    step = max(1, _CHUNK // cov.size)
    for s in range(0, X.shape[0], step):
        xs, ys = X[s:s + step], Y[s:s + step]
        m, xi = phi_lambda_inv(spec.model, spec.frame, spec.lam, xs, ys)
        inside = _inside_fiber(xi, fiber)
        if not np.any(inside):
            continue
        mi, xii = m[inside], xi[inside]
        vals = np.asarray(amp(mi[:, None, :], xii[:, None, :], th[None, :, :]), dtype=complex)
        vals = np.broadcast_to(vals, (mi.shape[0], cov.size))
        ft = np.sum(vals * np.exp(2j * np.pi * (xii @ th.T)), axis=1) * cov.cell
        mul = mu_lambda(spec.model, spec.frame, spec.density, spec.lam, xs[inside], ys[inside])
        res = np.zeros(xs.shape[0], dtype=complex)
        res[inside] = ft / (mul * spec.mu(mi))
        out[s:s + step] = res
    return KernelGrid(base, out.reshape(base.size, base.size), spec.density)


# ---------------------------------------------------------------------------
# kernel -> symbol


def symbol_from_kernel(spec: QuantizationSpec, K: KernelGrid, cov: GridSpec | None = None,
                       class_meta: dict | None = None) -> SymbolGrid:
    """``lam``-symbol of the operator with kernel ``K``.

    ``a(x, theta) = mu(x) sum_xi exp(-2 pi i theta.xi) (mu_lam K)(Phi_lam(x, xi)) dxi``
    on the canonical fiber grid.  Kernel values off the grid come from
    ``K.func`` when available, otherwise from cubic interpolation; points
    outside the box count as zero.
    """
    g = K.grid
    n, N = g.dim, g.N
    fiber = canonical_fiber(g, spec.lam)
    out_cov = fiber.dual()
    pts = g.points()
    mu = spec.mu(pts)
    fr = lambda_fraction(spec.lam)
    p, q = (fr.numerator, fr.denominator) if 0 < fr < 1 else (int(spec.lam), 1)
    exact_grid = spec.affine and abs(p / q - spec.lam) < 1e-14
    IX = _index_grid(g)
    JC = _index_grid(fiber) - N // 2
    xi_pts = fiber.points()
    data = np.empty((g.size, fiber.size), dtype=complex)
    step = max(1, _CHUNK // fiber.size)
    for s in range(0, g.size, step):
        ix = IX[s:s + step]
        if exact_grid:
            left = ix[:, None, :] + p * JC[None, :, :]
            right = ix[:, None, :] - (q - p) * JC[None, :, :]
            ok = np.all((left >= 0) & (left < N) & (right >= 0) & (right < N), axis=-1)
            lf = _flat(np.clip(left, 0, N - 1), N)
            rf = _flat(np.clip(right, 0, N - 1), N)
            kv = np.where(ok, K.data[lf, rf], 0.0)
            integrand = kv * mu[lf] * mu[rf] / mu[s:s + step, None]
        else:
            xs = np.repeat(pts[s:s + step], fiber.size, axis=0)
            zs = np.tile(xi_pts, (ix.shape[0], 1))
            r = phi_lambda(spec.model, spec.frame, spec.lam, xs, zs)
            kv = np.asarray(K.evaluate(r.left, r.right), dtype=complex)
            mul = mu_lambda_at_phi(spec.model, spec.frame, spec.density, spec.lam, xs, zs)
            integrand = (mu[s:s + step, None] * (mul * kv).reshape(ix.shape[0], fiber.size))
        r_ = integrand.reshape((ix.shape[0],) + fiber.shape)
        res = centered_dft(r_, axes=tuple(range(1, n + 1)), sign=-1) * fiber.cell
        data[s:s + step] = res.reshape(ix.shape[0], -1)
    sym = SymbolGrid(g, out_cov, data, class_meta or {"sigma": 1.0, "l": 0.0, "m": 0.0})
    if cov is not None and not cov.matches(out_cov):
        raise GridMismatch("requested covariable grid differs from the canonical one")
    return sym


# ---------------------------------------------------------------------------
# operator application


def _nyquist_check(v: GridFn, tol: float = 1e-4):
    n = v.spec.dim
    vals = v.values()
    peak = np.abs(vals).max(initial=0.0)
    if peak == 0.0:
        return
    vh = np.abs(np.fft.fftn(vals))
    freqs = np.abs(np.fft.fftfreq(v.spec.N, d=1.0 / v.spec.N))
    mesh = np.meshgrid(*([freqs] * n), indexing="ij")
    high = np.zeros(vals.shape, dtype=bool)
    for m in mesh:
        high |= m > v.spec.N // 4
    top = vh.max()
    if top > 0 and vh[high].max(initial=0.0) > tol * top:
        raise ResolutionError("input function is not resolved to N/4 modes")


def apply_kernel(K: KernelGrid, v: GridFn, frame: Frame) -> GridFn:
    """``(A v)(x) = sum_y K(x, y) v(y) mu(y) h^n``."""
    if not K.grid.matches(v.spec):
        raise GridMismatch("kernel and function grids differ")
    w = K.weights(frame) * K.grid.cell
    return GridFn(v.spec, K.data @ (v.data * w))


def _apply_direct(spec: QuantizationSpec, a: SymbolGrid, v: GridFn) -> GridFn:
    g = v.spec
    N, n = g.N, g.dim
    zax = (np.arange(2 * N) - N) * g.h
    zeta = np.stack(np.meshgrid(*([zax] * n), indexing="ij"), -1).reshape(-1, n)
    dual = a.cov.matches(g.dual())
    vals = v.values()
    affine = spec.affine
    if affine:
        vp = np.zeros((3 * N,) * n, dtype=complex)
        vp[(slice(N, 2 * N),) * n] = vals
        IX = _index_grid(g)
        JZ = _index_grid(GridSpec(n, 2 * g.L, 2 * N))
    else:
        th = a.cov.axis()
        Es = np.exp(2j * np.pi * th[:, None] * zax[None, :])
    pts = g.points()
    out = np.empty(g.size, dtype=complex)
    step = max(1, _CHUNK // zeta.shape[0])
    for s in range(0, g.size, step):
        c = min(step, g.size - s)
        if affine:
            idx = IX[s:s + c, None, :] - JZ[None, :, :] + 2 * N
            u = vp[tuple(idx[..., k] for k in range(n))]
        else:
            x = np.repeat(pts[s:s + c], zeta.shape[0], axis=0)
            z = np.tile(zeta, (c, 1))
            y = spec.model.psi(spec.frame, x, -z)
            u = interpolate(vals, g.index_of(y)).reshape(c, -1)
        u = u.reshape((c,) + (2 * N,) * n)
        if dual:
            for ax in range(1, n + 1):
                u = np.roll(u, -(N // 2), axis=ax)
                shp = list(u.shape)
                shp[ax:ax + 1] = [2, N]
                u = u.reshape(shp).sum(axis=ax)
            W = centered_dft(u, axes=tuple(range(1, n + 1)), sign=+1) * g.cell
        else:
            W = u
            for ax in range(1, n + 1):
                W = np.moveaxis(np.tensordot(W, Es, axes=([ax], [1])), -1, ax)
            W = W * g.cell
        out[s:s + c] = np.sum(a.data[s:s + c] * W.reshape(c, -1), axis=1) * a.cov.cell
    return GridFn(g, out)


def apply_operator(spec: QuantizationSpec, a: SymbolGrid, v: GridFn, route: str = "auto",
                   check: bool = True) -> GridFn:
    """Apply ``Op_lam(a)`` to ``v``.

    For ``lam = 0`` the default route evaluates
    ``sum_theta a(x, theta) sum_zeta exp(2 pi i theta.zeta) v(psi(x, -zeta))``
    with ``zeta`` covering twice the box, so every point of the box is
    reached from every ``x``.  Other values of ``lam`` (or
    ``route='kernel'``) build the kernel and sum against ``v mu h^n``.
    """
    if not a.base.matches(v.spec):
        raise GridMismatch("symbol and function grids differ")
    if check:
        _nyquist_check(v)
    if route not in ("auto", "direct", "kernel"):
        raise ValueError("route must be auto, direct or kernel")
    if route == "direct" and spec.lam != 0.0:
        raise ValueError("the direct route is only available for lambda = 0")
    if spec.lam == 0.0 and route != "kernel":
        return _apply_direct(spec, a, v)
    K = kernel_from_symbol(spec, a, check=check)
    return apply_kernel(K, v, spec.frame)


# ---------------------------------------------------------------------------
# lambda conversion and amplitude reduction


def expansion_coefficient(beta) -> complex:
    """``(i / 2 pi)^|beta| / beta!``."""
    k = sum(beta)
    den = 1
    for b in beta:
        den *= factorial(b)
    return (1j / (2.0 * np.pi)) ** k / den


def _symbol_eval(a: SymbolGrid) -> Callable:
    if a.func is not None:
        return a.func
    warnings.warn("symbol has no exact callable; derivatives use spline interpolation",
                  BoundaryWarning, stacklevel=3)
    return a.evaluate


def lambda_amplitude(spec: QuantizationSpec, a_eval: Callable, t: float) -> Callable:
    """Amplitude ``a_t(x, zeta, theta)`` whose reduction converts ``lam`` to ``lam + t``.

    ``a_t = [mu(psi(x, t zeta)) / mu(x)] |J Upsilon_t| / |det P| a(psi(x, t zeta), P^-T theta)``
    with ``P = P_{x, t zeta}``.
    """
    model, frame = spec.model, spec.frame
    n = model.dim
    affine = spec.affine

    def amp(x, zeta, theta):
        x, zeta, theta = np.broadcast_arrays(np.asarray(x, float), np.asarray(zeta, float),
                                             np.asarray(theta, float))
        shape = x.shape
        xf, zf, tf = (v.reshape(-1, n) for v in (x, zeta, theta))
        y = model.psi(frame, xf, t * zf)
        P = model.transport(frame, xf, t * zf)
        Pinv = np.linalg.inv(P)
        th = np.einsum("pji,pj->pi", Pinv, tf)
        fac = spec.mu(y) / spec.mu(xf) / np.abs(np.linalg.det(P))
        if not affine:
            def ups(w):
                f, s = upsilon_t(model, frame, t, w[..., :n], w[..., n:])
                return np.concatenate([f, s], axis=-1)

            jac = numeric_jacobian(ups, np.concatenate([xf, zf], axis=-1))
            fac = fac * np.abs(np.linalg.det(jac))
        out = fac * np.asarray(a_eval(y, th), dtype=complex)
        return out.reshape(shape[:-1])

    return amp


def _reduce(amp: Callable, base: GridSpec, cov: GridSpec, order: int, steps=None) -> np.ndarray:
    n = base.dim
    X = base.points()[:, None, :]
    TH = cov.points()[None, :, :]
    X, TH = np.broadcast_arrays(X, TH)
    w0 = np.concatenate([np.zeros_like(X), TH], axis=-1)

    def f(w):
        return amp(X, w[..., :n], w[..., n:])

    total = np.zeros(X.shape[:-1], dtype=complex)
    for k in range(order + 1):
        for beta in multi_indices(n, k):
            c = expansion_coefficient(beta)
            if k == 0:
                total = total + f(w0)
            else:
                total = total + c * mixed_partial(f, w0, list(beta) + list(beta), steps)
    return total


def reduce_amplitude(spec: QuantizationSpec, amp: Callable, order: int, base: GridSpec,
                     cov: GridSpec | None = None, class_meta: dict | None = None) -> SymbolGrid:
    """Truncated reduction ``sum_{|beta|<=order} c_beta d_zeta^beta d_theta^beta amp |_{zeta=0}``.

    Parameters
    ----------
    amp : callable
        ``amp(x, zeta, theta)``, vectorised over leading axes.
    order : int
        At most 3.
    """
    if order < 0 or order > CONVERT_CAP:
        raise CapExceeded(f"reduction order is capped at {CONVERT_CAP}")
    cov = cov or canonical_cov(base, spec.lam)
    data = _reduce(amp, base, cov, order)
    return SymbolGrid(base, cov, data, class_meta or {"sigma": 1.0, "l": 0.0, "m": 0.0})


def lambda_convert(spec: QuantizationSpec, a: SymbolGrid, lam_to: float, order: int) -> SymbolGrid:
    """Symbol ``a'`` with ``Op_{lam_to}(a') ~ Op_lam(a)``, truncated at ``order``."""
    if order < 0 or order > CONVERT_CAP:
        raise CapExceeded(f"conversion order is capped at {CONVERT_CAP}")
    target = spec.with_lambda(lam_to)
    t = float(lam_to) - spec.lam
    cov = canonical_cov(a.base, lam_to)
    if t == 0.0 or order == 0:
        if cov.matches(a.cov):
            return a.with_data(a.data.copy(), a.func)
        x = a.base.points()[:, None, :]
        th = cov.points()[None, :, :]
        return SymbolGrid(a.base, cov, _symbol_eval(a)(x, th), dict(a.class_meta), a.func)
    amp = lambda_amplitude(spec, _symbol_eval(a), t)
    return reduce_amplitude(target, amp, order, a.base, cov, dict(a.class_meta))


def adjoint_symbol(spec: QuantizationSpec, a: SymbolGrid, method: str = "kernel",
                   order: int = 2) -> SymbolGrid:
    """``lam``-symbol of the adjoint operator.

    ``method='kernel'`` conjugate-transposes the kernel; ``method='convert'``
    conjugates the ``1 - lam`` symbol obtained by :func:`lambda_convert`.
    """
    if method == "kernel":
        K = kernel_from_symbol(spec, a, check=False)
        return symbol_from_kernel(spec, K.conj_transpose(), class_meta=dict(a.class_meta))
    if method == "convert":
        return lambda_convert(spec, a, 1.0 - spec.lam, order).conj()
    raise ValueError("method must be 'kernel' or 'convert'")

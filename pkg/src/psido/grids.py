"""Sampled functions and symbols, seminorms, decay fits, cutoffs and the
grid file format.

File format
-----------
A grid file is::

    PSIDO-GRID 1\\n
    <one line of JSON header>\\n
    <raw little-endian float64 payload, real/imag interleaved, row-major>

The header always carries ``role`` (``function``, ``symbol`` or
``kernel``), ``dim``, ``extent``, ``N`` and ``complex``; symbols add
``cov_extent``, ``cov_N`` and ``class_meta``; kernels add ``density``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .errors import CapExceeded, GridMismatch, InvalidSample, PsidoError
from .geometry import fd_weights, japanese

__all__ = [
    "GridSpec",
    "GridFn",
    "SymbolGrid",
    "canonical_cov",
    "canonical_fiber",
    "lambda_fraction",
    "decay_fit",
    "refit",
    "read_header",
    "DecayFit",
    "FitLine",
    "grid_derivative",
    "schwartz_seminorm",
    "symbol_seminorm",
    "fit_decay_exponent",
    "bump",
    "excision_cutoff",
    "asymptotic_sum_truncate",
    "interpolate",
    "centered_dft",
    "save_grid",
    "load_grid",
    "set_threads",
    "get_threads",
]

MAGIC = b"PSIDO-GRID 1\n"
GRID_DERIV_CAP = 4

_THREADS = None


def set_threads(n: int | None):
    """Set the worker count used by FFTs (``None`` means all cores)."""
    global _THREADS
    _THREADS = None if n is None else max(1, int(n))


def get_threads() -> int:
    if _THREADS is not None:
        return _THREADS
    env = os.environ.get("PSIDO_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# grid specs


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid ``x_j = -L + j h`` on ``[-L, L)^dim`` with ``h = 2L/N``."""

    dim: int
    L: float
    N: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.N < 8 or self.N % 2:
            raise ValueError("N must be even and at least 8")
        if not self.L > 0:
            raise ValueError("extent must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dim

    @property
    def size(self) -> int:
        return self.N**self.dim

    @property
    def cell(self) -> float:
        return self.h**self.dim

    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.N)

    def points(self) -> np.ndarray:
        """All grid points, row-major, shape ``(N**dim, dim)``."""
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def index_of(self, pts) -> np.ndarray:
        """Fractional grid indices of points."""
        return (np.asarray(pts, dtype=float) + self.L) / self.h

    def dual(self) -> "GridSpec":
        """Centered dual grid with spacing ``1/(2L)`` and the same ``N``."""
        return GridSpec(self.dim, self.N / (4.0 * self.L), self.N)

    def interior_mask(self, band: int = 2) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        sl = tuple(slice(band, self.N - band) for _ in range(self.dim))
        m[sl] = True
        return m.ravel()

    def matches(self, other: "GridSpec") -> bool:
        return (
            self.dim == other.dim
            and self.N == other.N
            and abs(self.L - other.L) <= 1e-12 * max(1.0, self.L)
        )

    def to_dict(self) -> dict:
        return {"dim": self.dim, "extent": self.L, "N": self.N}


def lambda_fraction(lam: float) -> Fraction:
    """Small-denominator rational for ``lam`` (denominator 1 if none)."""
    fr = Fraction(lam).limit_denominator(8)
    if abs(float(fr) - lam) > 1e-12:
        return Fraction(0)
    return fr


def canonical_fiber(base: GridSpec, lam: float) -> GridSpec:
    """Fiber grid for ``lam = p/q``: step ``q h`` so that ``Phi_lam`` hits grid points."""
    fr = lambda_fraction(float(lam))
    q = fr.denominator if 0 < fr < 1 else 1
    return GridSpec(base.dim, q * base.L, base.N)


def canonical_cov(base: GridSpec, lam: float = 0.0) -> GridSpec:
    """Covariable grid dual to :func:`canonical_fiber`."""
    return canonical_fiber(base, lam).dual()


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True, eq=False)
class GridFn:
    """Complex samples of a function on a :class:`GridSpec`."""

    spec: GridSpec
    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=complex).reshape(-1)
        if d.size != self.spec.size:
            raise GridMismatch("data length does not match N**dim")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @classmethod
    def from_callable(cls, spec: GridSpec, f: Callable) -> "GridFn":
        return cls(spec, np.asarray(f(spec.points()), dtype=complex))

    def values(self) -> np.ndarray:
        return self.data.reshape(self.spec.shape)

    def norm(self, exclude_band: int = 0) -> float:
        d = self.data
        if exclude_band:
            d = d[self.spec.interior_mask(exclude_band)]
        return float(np.sqrt(np.sum(np.abs(d) ** 2) * self.spec.cell))

    def __add__(self, other):
        _check_same(self.spec, other.spec)
        return GridFn(self.spec, self.data + other.data)

    def __sub__(self, other):
        _check_same(self.spec, other.spec)
        return GridFn(self.spec, self.data - other.data)

    def __mul__(self, c):
        return GridFn(self.spec, self.data * c)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class SymbolGrid:
    """Samples of a symbol ``a(x, theta)`` on a product grid.

    Parameters
    ----------
    base : GridSpec
        Grid over ``x``.
    cov : GridSpec
        Grid over ``theta`` (centered, read as ``theta_k = -L_c + k h_c``).
    data : ndarray, shape (N**dim, Nc**dim)
    class_meta : dict
        Declared ``sigma``, ``l``, ``m``; used as fit targets only.
    func : callable, optional
        Exact ``a(x, theta)`` for off-grid evaluation and differentiation;
        broadcasts over leading axes of ``x`` and ``theta``.
    """

    base: GridSpec
    cov: GridSpec
    data: np.ndarray
    class_meta: dict = field(default_factory=lambda: {"sigma": 1.0, "l": 0.0, "m": 0.0})
    func: Callable | None = None

    def __post_init__(self):
        if self.base.dim != self.cov.dim:
            raise GridMismatch("base and covariable dimensions differ")
        d = np.asarray(self.data, dtype=complex).reshape(self.base.size, self.cov.size)
        if not np.all(np.isfinite(d)):
            raise PsidoError("symbol data must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @classmethod
    def from_callable(cls, func: Callable, base: GridSpec, cov: GridSpec | None = None,
                      class_meta: dict | None = None, keep_func: bool = True) -> "SymbolGrid":
        cov = cov or canonical_cov(base, 0.0)
        x = base.points()[:, None, :]
        th = cov.points()[None, :, :]
        data = np.asarray(func(x, th), dtype=complex)
        data = np.broadcast_to(data, (base.size, cov.size))
        meta = class_meta or {"sigma": 1.0, "l": 0.0, "m": 0.0}
        return cls(base, cov, data, meta, func if keep_func else None)

    @property
    def dim(self) -> int:
        return self.base.dim

    def values(self) -> np.ndarray:
        return self.data.reshape(self.base.shape + self.cov.shape)

    def with_data(self, data, func=None) -> "SymbolGrid":
        return SymbolGrid(self.base, self.cov, data, dict(self.class_meta), func)

    def values_at(self, x) -> np.ndarray:
        """Rows ``a(x, .)`` on the covariable grid for arbitrary base points."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        if self.func is not None:
            th = self.cov.points()[None, :, :]
            out = np.asarray(self.func(x[:, None, :], th), dtype=complex)
            return np.broadcast_to(out, (x.shape[0], self.cov.size)).copy()
        idx = self.base.index_of(x)
        rows = self.values().reshape(self.base.shape + (self.cov.size,))
        out = np.empty((x.shape[0], self.cov.size), dtype=complex)
        for k in range(self.cov.size):
            out[:, k] = interpolate(rows[..., k], idx)
        return out

    def evaluate(self, x, theta) -> np.ndarray:
        """Off-grid evaluation ``a(x, theta)`` (exact when ``func`` is set)."""
        if self.func is not None:
            return np.asarray(self.func(np.asarray(x, float), np.asarray(theta, float)), dtype=complex)
        x, theta = np.broadcast_arrays(np.asarray(x, float), np.asarray(theta, float))
        coords = np.concatenate([self.base.index_of(x), self.cov.index_of(theta)], axis=-1)
        flat = coords.reshape(-1, 2 * self.dim)
        return interpolate(self.values(), flat).reshape(x.shape[:-1])

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.data) ** 2) * self.base.cell * self.cov.cell))

    def conj(self) -> "SymbolGrid":
        f = self.func
        g = None if f is None else (lambda x, t: np.conj(f(x, t)))
        return self.with_data(np.conj(self.data), g)

    def __add__(self, other):
        _check_symbol_grids(self, other)
        f, g = self.func, other.func
        h = None if f is None or g is None else (lambda x, t: f(x, t) + g(x, t))
        return self.with_data(self.data + other.data, h)

    def __sub__(self, other):
        _check_symbol_grids(self, other)
        f, g = self.func, other.func
        h = None if f is None or g is None else (lambda x, t: f(x, t) - g(x, t))
        return self.with_data(self.data - other.data, h)

    def __mul__(self, c):
        f = self.func
        h = None if f is None else (lambda x, t: c * f(x, t))
        return self.with_data(self.data * c, h)

    __rmul__ = __mul__


def _check_same(a: GridSpec, b: GridSpec):
    if not a.matches(b):
        raise GridMismatch(f"grid mismatch: {a} vs {b}")


def _check_symbol_grids(a: SymbolGrid, b: SymbolGrid):
    _check_same(a.base, b.base)
    _check_same(a.cov, b.cov)


# ---------------------------------------------------------------------------
# discrete transforms and interpolation


def centered_dft(u: np.ndarray, axes: Sequence[int], sign: int) -> np.ndarray:
    """``sum_j u_j exp(sign 2 pi i (j - N/2)(k - N/2) / N)`` along ``axes``."""
    from scipy import fft

    axes = tuple(axes)
    u = fft.ifftshift(u, axes=axes)
    if sign < 0:
        out = fft.fftn(u, axes=axes, workers=get_threads())
    else:
        out = fft.ifftn(u, axes=axes, workers=get_threads())
        out = out * np.prod([u.shape[a] for a in axes])
    return fft.fftshift(out, axes=axes)


def interpolate(values: np.ndarray, idx: np.ndarray, snap: float = 1e-9) -> np.ndarray:
    """Evaluate gridded data at fractional indices, zero outside the grid.

    Indices within ``snap`` of integers are read directly; otherwise cubic
    spline interpolation is used.
    """
    idx = np.asarray(idx, dtype=float)
    shape = values.shape
    nd = len(shape)
    idx = idx.reshape(-1, nd)
    out = np.zeros(idx.shape[0], dtype=complex)
    upper = np.array(shape, dtype=float) - 1.0
    inside = np.all((idx >= -snap) & (idx <= upper + snap), axis=1)
    if not np.any(inside):
        return out
    sub = idx[inside]
    rnd = np.rint(sub)
    on_grid = np.all(np.abs(sub - rnd) <= snap, axis=1)
    if np.any(on_grid):
        ii = tuple(rnd[on_grid].astype(int).T)
        vals = np.empty(int(on_grid.sum()), dtype=complex)
        vals[:] = values[ii]
        tmp = np.zeros(sub.shape[0], dtype=complex)
        tmp[on_grid] = vals
    else:
        tmp = np.zeros(sub.shape[0], dtype=complex)
    off = ~on_grid
    if np.any(off):
        coords = sub[off].T
        re = ndimage.map_coordinates(np.real(values), coords, order=3, mode="constant", cval=0.0)
        im = ndimage.map_coordinates(np.imag(values), coords, order=3, mode="constant", cval=0.0)
        tmp[off] = re + 1j * im
    out[inside] = tmp
    return out


# ---------------------------------------------------------------------------
# finite differences and seminorms


def _band(order: int) -> int:
    return (order + 1) // 2 + 1 if order else 0


def grid_derivative(values: np.ndarray, orders: Sequence[int], steps: Sequence[float]) -> np.ndarray:
    """Central differences of fourth-order accuracy along each axis.

    Points within the stencil half-width of the boundary are unreliable;
    callers exclude them.
    """
    out = np.asarray(values, dtype=complex)
    for ax, (k, h) in enumerate(zip(orders, steps)):
        if k == 0:
            continue
        nodes, w = fd_weights(k)
        acc = np.zeros_like(out)
        for n, c in zip(nodes, w):
            if c != 0.0:
                acc += c * np.roll(out, -n, axis=ax)
        out = acc / h**k
    return out


def _interior(shape, bands) -> tuple:
    return tuple(slice(b, n - b) for n, b in zip(shape, bands))


def schwartz_seminorm(f, alpha: Sequence[int], p: float, grid: GridSpec | None = None,
                      derivatives: Callable | None = None) -> float:
    """``sup <x>^p |d^alpha f(x)|`` over the grid interior.

    Parameters
    ----------
    f : GridFn or callable
    alpha : multi-index
    p : float
    grid : GridSpec
        Required for callables.
    derivatives : callable, optional
        ``derivatives(alpha)`` returns an exact callable for ``d^alpha f``.
    """
    alpha = tuple(int(a) for a in alpha)
    if isinstance(f, GridFn):
        spec = f.spec
        vals = f.values()
        exact = None
    else:
        if grid is None:
            raise ValueError("a grid is required for callables")
        spec = grid
        exact = derivatives(alpha) if derivatives is not None else None
        vals = None if exact is not None else np.asarray(f(spec.points()), dtype=complex).reshape(spec.shape)
    if len(alpha) != spec.dim:
        raise ValueError("multi-index length must equal dim")
    pts = spec.points().reshape(spec.shape + (spec.dim,))
    weight = japanese(pts) ** p
    if exact is not None:
        d = np.asarray(exact(spec.points()), dtype=complex).reshape(spec.shape)
        bands = [2] * spec.dim
    else:
        if sum(alpha) > GRID_DERIV_CAP:
            raise CapExceeded("grid derivatives are capped at total order 4")
        d = grid_derivative(vals, alpha, [spec.h] * spec.dim)
        bands = [max(2, _band(a)) for a in alpha]
    sl = _interior(spec.shape, bands)
    return float(np.max(weight[sl] * np.abs(d[sl]), initial=0.0))


def symbol_seminorm(a: SymbolGrid, alpha: Sequence[int], beta: Sequence[int]) -> float:
    """``sup <x>^{sigma(|alpha| - l)} <theta>^{|beta| - m} |d^(alpha, beta) a|``."""
    alpha = tuple(int(v) for v in alpha)
    beta = tuple(int(v) for v in beta)
    if sum(alpha) + sum(beta) > GRID_DERIV_CAP:
        raise CapExceeded("grid derivatives are capped at total order 4")
    n = a.dim
    meta = a.class_meta
    sigma, l, m = float(meta.get("sigma", 1.0)), float(meta.get("l", 0.0)), float(meta.get("m", 0.0))
    vals = a.values()
    d = grid_derivative(vals, alpha + beta, [a.base.h] * n + [a.cov.h] * n)
    x = a.base.points().reshape(a.base.shape + (n,))
    th = a.cov.points().reshape(a.cov.shape + (n,))
    wx = japanese(x) ** (sigma * (sum(alpha) - l))
    wt = japanese(th) ** (sum(beta) - m)
    w = wx.reshape(wx.shape + (1,) * n) * wt.reshape((1,) * n + wt.shape)
    bands = [max(2, _band(o)) for o in alpha + beta]
    sl = _interior(vals.shape, bands)
    return float(np.max(w[sl] * np.abs(d[sl]), initial=0.0))


# ---------------------------------------------------------------------------
# decay fits


@dataclass(frozen=True)
class FitLine:
    slope: float
    intercept: float
    rms: float


def fit_decay_exponent(samples) -> FitLine:
    """Least-squares line through ``(log <r>, log value)``.

    Parameters
    ----------
    samples : sequence of (r, value)
        At least six samples, ``r`` strictly increasing, values positive.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 6:
        raise InvalidSample("need at least six (r, value) samples")
    r, v = arr[:, 0], arr[:, 1]
    if np.any(np.diff(r) <= 0):
        raise InvalidSample("radii must be strictly increasing")
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise InvalidSample("values must be finite and positive")
    X = np.log(japanese(r[:, None]))
    Y = np.log(v)
    A = np.stack([X, np.ones_like(X)], axis=1)
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    res = Y - A @ coef
    return FitLine(float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(res**2))))


@dataclass
class DecayFit:
    """One fitted exponent with its verdict.

    In ``'sharp'`` mode the verdict requires the slope within ``tol`` of
    ``target`` and the RMS within ``rms_cap``.  In ``'upper'`` mode only
    ``slope <= target + tol`` is required, since decay faster than the
    bound need not be a power law.  Samples below ``floor`` count
    as identically zero and pass.
    """

    label: str
    alpha: tuple
    slope: float | None
    intercept: float | None
    rms: float | None
    target: float
    tol: float = 0.25
    rms_cap: float = 0.15
    mode: str = "sharp"
    at_floor: bool = False
    samples: list = field(default_factory=list)
    floor: float = 1e-12

    @property
    def sharp(self) -> bool:
        if self.at_floor:
            return True
        return abs(self.slope - self.target) <= self.tol and self.rms <= self.rms_cap

    @property
    def verdict(self) -> bool:
        if self.at_floor:
            return True
        if self.mode == "upper":
            return self.slope <= self.target + self.tol
        return self.sharp

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "alpha": list(self.alpha),
            "slope": self.slope,
            "intercept": self.intercept,
            "rms": self.rms,
            "target": self.target,
            "tol": self.tol,
            "rms_cap": self.rms_cap,
            "mode": self.mode,
            "at_floor": self.at_floor,
            "verdict": "pass" if self.verdict else "fail",
            "samples": [[float(r), float(v)] for r, v in self.samples],
            "floor": float(self.floor),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecayFit":
        return cls(d["label"], tuple(d["alpha"]), d["slope"], d["intercept"], d["rms"],
                   d["target"], d["tol"], d["rms_cap"], d["mode"], d["at_floor"],
                   [tuple(s) for s in d["samples"]], d.get("floor", 1e-12))


def decay_fit(label, alpha, radii, values, target, tol=0.25, rms_cap=0.15, mode="sharp",
              floor=1e-12) -> DecayFit:
    """Fit ``values`` against ``radii`` and wrap the result in a :class:`DecayFit`."""
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    samples = list(zip(radii.tolist(), values.tolist()))
    if np.all(values <= floor):
        return DecayFit(label, tuple(alpha), None, None, None, target, tol, rms_cap, mode, True, samples, floor)
    line = fit_decay_exponent(np.stack([radii, np.maximum(values, floor)], axis=1))
    return DecayFit(label, tuple(alpha), line.slope, line.intercept, line.rms, target, tol,
                    rms_cap, mode, False, samples, floor)


def refit(fit: DecayFit) -> DecayFit:
    """Recompute a fit from its recorded samples."""
    r, v = (np.array(c) for c in zip(*fit.samples))
    return decay_fit(fit.label, fit.alpha, r, v, fit.target, fit.tol, fit.rms_cap, fit.mode, fit.floor)


# ---------------------------------------------------------------------------
# cutoffs and asymptotic sums


def bump(u) -> np.ndarray:
    """Radial bump: 1 on the unit ball, 0 outside radius 2."""
    u = np.asarray(u, dtype=float)
    r = np.linalg.norm(u, axis=-1)
    t = np.clip(r - 1.0, 0.0, 1.0)
    mid = (r > 1.0) & (r < 2.0)
    tm = np.where(mid, t, 0.0)
    val = np.exp(1.0 - 1.0 / (1.0 - tm * tm))
    return np.where(r <= 1.0, 1.0, np.where(mid, val, 0.0))


def excision_cutoff(sigma: float, p: float, x, theta) -> np.ndarray:
    """``rho(x/p)^(1 - delta_{sigma,0}) rho(theta/p)``."""
    if p < 1:
        raise ValueError("p must be at least 1")
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    out = bump(theta / p)
    if sigma != 0:
        out = bump(x / p) * out
    return out


def asymptotic_sum_truncate(terms: Sequence[SymbolGrid], cut_radii: Sequence[float]) -> SymbolGrid:
    """Sum ``(1 - excision_{p_j}) a_j`` over the terms on their common grid."""
    if not terms:
        raise ValueError("need at least one term")
    if len(cut_radii) != len(terms):
        raise ValueError("one cut radius per term")
    radii = [float(p) for p in cut_radii]
    if any(p < 1 for p in radii) or any(b < a for a, b in zip(radii, radii[1:])):
        raise ValueError("cut radii must be nondecreasing and at least 1")
    first = terms[0]
    for t in terms[1:]:
        _check_symbol_grids(first, t)
    orders = [(float(t.class_meta.get("l", 0.0)), float(t.class_meta.get("m", 0.0))) for t in terms]
    for (l0, m0), (l1, m1) in zip(orders, orders[1:]):
        if not (l1 < l0 or m1 < m0) or l1 > l0 or m1 > m0:
            raise ValueError("terms must have strictly decreasing orders")
    sigma = float(first.class_meta.get("sigma", 1.0))
    x = first.base.points()[:, None, :]
    th = first.cov.points()[None, :, :]
    total = np.zeros_like(first.data)
    for t, p in zip(terms, radii):
        total = total + (1.0 - excision_cutoff(sigma, p, x, th)) * t.data
    return SymbolGrid(first.base, first.cov, total, dict(first.class_meta))


# ---------------------------------------------------------------------------
# file format


def _header(obj) -> tuple[dict, np.ndarray]:
    from .quantize import KernelGrid  # local import to avoid a cycle

    if isinstance(obj, GridFn):
        h = {"role": "function", **obj.spec.to_dict(), "complex": True}
        return h, obj.data
    if isinstance(obj, SymbolGrid):
        h = {
            "role": "symbol",
            **obj.base.to_dict(),
            "cov_extent": obj.cov.L,
            "cov_N": obj.cov.N,
            "complex": True,
            "class_meta": obj.class_meta,
        }
        return h, obj.data
    if isinstance(obj, KernelGrid):
        h = {"role": "kernel", **obj.grid.to_dict(), "complex": True, "density": obj.density.to_dict()}
        return h, obj.data
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def save_grid(obj, path, overwrite: bool = False, extra: dict | None = None):
    """Write a grid container in the ``PSIDO-GRID 1`` format."""
    header, data = _header(obj)
    if extra:
        header["meta"] = extra
    if os.path.exists(path) and not overwrite:
        raise FileExistsError(f"{path} exists; refusing to overwrite")
    payload = np.empty(data.size * 2, dtype="<f8")
    flat = np.ascontiguousarray(data).reshape(-1)
    payload[0::2] = flat.real
    payload[1::2] = flat.imag
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload.tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path} is not a PSIDO grid file")
        return json.loads(fh.readline())


def load_grid(path, model=None):
    """Read a container written by :func:`save_grid`.

    Kernels need ``model`` to rebuild their density; without it a
    frame-Lebesgue density in the default frame is assumed.
    """
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path} is not a PSIDO grid file")
        header = json.loads(fh.readline())
        raw = np.frombuffer(fh.read(), dtype="<f8")
    data = raw[0::2] + 1j * raw[1::2]
    spec = GridSpec(int(header["dim"]), float(header["extent"]), int(header["N"]))
    role = header["role"]
    if role == "function":
        return GridFn(spec, data)
    if role == "symbol":
        cov = GridSpec(spec.dim, float(header["cov_extent"]), int(header["cov_N"]))
        return SymbolGrid(spec, cov, data.reshape(spec.size, cov.size), header.get("class_meta") or {})
    if role == "kernel":
        from .geometry import Density
        from .quantize import KernelGrid

        dd = header.get("density", {"kind": "frame_lebesgue"})
        frame = None
        if "frame" in dd and model is not None:
            from .geometry import Frame

            frame = Frame(model, dd["frame"]["base_point"], dd["frame"]["basis"])
        return KernelGrid(spec, data.reshape(spec.size, spec.size), Density(dd["kind"], frame))
    raise ValueError(f"unknown role {role!r}")

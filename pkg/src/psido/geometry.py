"""Frames, normal charts, transition maps, finite differences, densities
and the multivariate Faa di Bruno enumeration.

All point-valued routines are vectorised over leading axes: a point array
has shape ``(..., n)`` and Jacobians have shape ``(..., m, n)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from math import factorial
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import CapExceeded, GridMismatch, InvalidFrame, NumericError

__all__ = [
    "Frame",
    "FaaTerm",
    "Density",
    "chart_forward",
    "chart_inverse",
    "transition_map",
    "numeric_jacobian",
    "fd_weights",
    "fd_step",
    "mixed_partial",
    "multi_indices",
    "faa_di_bruno_terms",
    "evaluate_faa_di_bruno",
    "density_in_frame",
    "japanese",
]

FAA_CAP = 6


def japanese(x):
    """Return ``<x> = (1 + |x|^2)^(1/2)`` over the last axis."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(1.0 + np.sum(x * x, axis=-1))


# ---------------------------------------------------------------------------
# frames and charts


@dataclass(frozen=True, eq=False)
class Frame:
    """A base point together with a basis of the tangent space there.

    The induced chart is ``n(p) = B^{-1} exp_z^{-1}(p)``, where the columns of
    ``B`` are the basis vectors expressed in model coordinates.

    Parameters
    ----------
    model : ManifoldModel
        Model providing ``exp``/``log`` and their Jacobians.
    base_point : array_like, shape (n,)
    basis : array_like, shape (n, n), optional
        Defaults to the identity.
    """

    model: object
    base_point: np.ndarray
    basis: np.ndarray = None
    _inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.model.dim
        z = np.asarray(self.base_point, dtype=float).reshape(n)
        b = np.eye(n) if self.basis is None else np.asarray(self.basis, dtype=float)
        if b.shape != (n, n):
            raise InvalidFrame(f"basis must be {n}x{n}, got {b.shape}")
        if not np.all(np.isfinite(b)) or abs(np.linalg.det(b)) <= 1e-12:
            raise InvalidFrame("basis is singular")
        object.__setattr__(self, "base_point", z)
        object.__setattr__(self, "basis", b)
        object.__setattr__(self, "_inv", np.linalg.inv(b))

    @property
    def dim(self) -> int:
        return self.model.dim

    def same_as(self, other: "Frame") -> bool:
        return (
            other is not None
            and self.model is other.model
            and np.array_equal(self.base_point, other.base_point)
            and np.array_equal(self.basis, other.basis)
        )

    def is_identity_chart(self) -> bool:
        """True when the chart coincides with the model coordinates."""
        return (
            getattr(self.model, "euclidean_charts", False)
            and not np.any(self.base_point)
            and np.array_equal(self.basis, np.eye(self.dim))
        )

    def forward(self, p):
        """Chart map: model point(s) to frame coordinates."""
        p = np.asarray(p, dtype=float)
        return self.model.log(self.base_point, p) @ self._inv.T

    def inverse(self, x):
        """Inverse chart: frame coordinates to model point(s)."""
        x = np.asarray(x, dtype=float)
        return self.model.exp(self.base_point, x @ self.basis.T)

    def d_forward(self, p):
        """Jacobian of the chart at model point(s) ``p``."""
        p = np.asarray(p, dtype=float)
        return self._inv @ self.model.log_jac(self.base_point, p)

    def d_inverse(self, x):
        """Jacobian of the inverse chart at frame point(s) ``x``."""
        x = np.asarray(x, dtype=float)
        return self.model.exp_jac(self.base_point, x @ self.basis.T) @ self.basis

    def to_dict(self) -> dict:
        return {"base_point": self.base_point.tolist(), "basis": self.basis.tolist()}


def chart_forward(frame: Frame, p):
    """Return the frame coordinates ``L_b(exp_z^{-1}(p))`` of ``p``."""
    return frame.forward(p)


def chart_inverse(frame: Frame, x):
    """Return the model point with frame coordinates ``x``."""
    return frame.inverse(x)


def transition_map(frame_a: Frame, frame_b: Frame, x):
    """Coordinate change from ``frame_b`` coordinates to ``frame_a`` coordinates."""
    if frame_a.model is not frame_b.model:
        raise GridMismatch("frames belong to different models")
    if frame_a.same_as(frame_b):
        return np.array(x, dtype=float)
    return frame_a.forward(frame_b.inverse(x))


# ---------------------------------------------------------------------------
# finite differences


def numeric_jacobian(f: Callable, x, h: float = 1e-4):
    """Central-difference Jacobian with one Richardson step.

    Parameters
    ----------
    f : callable
        Maps ``(..., n)`` arrays to ``(..., m)`` arrays (or ``(...)`` for
        scalar fields).
    x : array_like, shape (..., n)
    h : float
        Coarse step; the fine step is ``h/2``.

    Returns
    -------
    ndarray, shape (..., m, n) or (..., n) for scalar fields
    """
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        d1 = (np.asarray(f(x + h * e)) - np.asarray(f(x - h * e))) / (2 * h)
        d2 = (np.asarray(f(x + 0.5 * h * e)) - np.asarray(f(x - 0.5 * h * e))) / h
        cols.append((4.0 * d2 - d1) / 3.0)
    jac = np.stack(cols, axis=-1)
    if not np.all(np.isfinite(jac)):
        raise NumericError("non-finite samples in numeric_jacobian")
    return jac


def fd_weights(order: int, half_width: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Central finite-difference stencil of fourth-order accuracy.

    Returns integer offsets and weights for unit spacing (Fornberg's
    recursion).
    """
    if order == 0:
        return np.array([0]), np.array([1.0])
    p = (order + 1) // 2 + 1 if half_width is None else half_width
    nodes = np.arange(-p, p + 1, dtype=float)
    m = len(nodes)
    c = np.zeros((m, order + 1))
    c[0, 0] = 1.0
    c1 = 1.0
    c4 = nodes[0]
    for i in range(1, m):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i]
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    w = c[:, order]
    w[np.abs(w) < 1e-14] = 0.0
    return nodes.astype(int), w


def fd_step(total_order: int) -> float:
    """Default step for finite differences of callables of a given total order."""
    if total_order <= 0:
        return 1e-3
    return max(1e-3, 10.0 ** (-16.0 / (total_order + 4)))


def mixed_partial(f: Callable, x, orders: Sequence[int], steps=None):
    """Mixed partial derivative of a smooth callable by tensor stencils.

    Parameters
    ----------
    f : callable
        Maps ``(..., D)`` arrays to arrays with leading shape ``(...)``.
    x : array_like, shape (..., D)
        Evaluation points.
    orders : sequence of int, length D
        Derivative order per scalar variable.
    steps : float or sequence, optional
        Step per variable; defaults to :func:`fd_step` of the total order.
    """
    x = np.asarray(x, dtype=float)
    orders = [int(o) for o in orders]
    D = x.shape[-1]
    if len(orders) != D:
        raise ValueError("orders length must match the variable count")
    total = sum(orders)
    if steps is None:
        steps = [fd_step(total)] * D
    elif np.isscalar(steps):
        steps = [float(steps)] * D
    active = [i for i in range(D) if orders[i] > 0]
    if not active:
        return np.asarray(f(x))
    stencils = [fd_weights(orders[i]) for i in active]
    out = None
    for combo in itertools.product(*[range(len(s[0])) for s in stencils]):
        w = 1.0
        shift = np.zeros(D)
        for ax, k, (nodes, wts) in zip(active, combo, stencils):
            w *= wts[k] / steps[ax] ** orders[ax]
            shift[ax] = nodes[k] * steps[ax]
        if w == 0.0:
            continue
        val = w * np.asarray(f(x + shift))
        out = val if out is None else out + val
    return out


# ---------------------------------------------------------------------------
# multi-indices and Faa di Bruno


def multi_indices(dim: int, order: int) -> Iterator[tuple[int, ...]]:
    """All ``dim``-multi-indices of length ``order`` in lexicographic order."""
    for combo in itertools.combinations_with_replacement(range(dim), order):
        alpha = [0] * dim
        for c in combo:
            alpha[c] += 1
        yield tuple(alpha)


def _mfact(alpha) -> int:
    out = 1
    for a in alpha:
        out *= factorial(a)
    return out


@dataclass(frozen=True)
class FaaTerm:
    """One term ``coefficient * d^lambda f(g) * prod_j (d^{l_j} g)^{k_j}``."""

    coefficient: Fraction
    outer_index: tuple
    factors: tuple  # of (l_j, k_j) pairs


def faa_di_bruno_terms(nu, n_inner: int, p_outer: int, cap: int = FAA_CAP) -> list[FaaTerm]:
    """Exact terms of ``d^nu (f o g)`` for ``g: R^n -> R^p``, ``f: R^p -> R``.

    Parameters
    ----------
    nu : sequence of int, length ``n_inner``
    n_inner : int
        Dimension of the domain of ``g``.
    p_outer : int
        Dimension of the domain of ``f``.
    cap : int
        Largest admissible ``|nu|``.

    Returns
    -------
    list of FaaTerm
        Each term lists the distinct inner indices ``l_j`` with their
        ``p``-multi-index powers ``k_j``.
    """
    nu = tuple(int(v) for v in nu)
    if len(nu) != n_inner:
        raise ValueError("nu must have n_inner entries")
    if any(v < 0 for v in nu) or sum(nu) < 1:
        raise ValueError("|nu| must be at least 1")
    if n_inner > 3 or p_outer > 3 or n_inner < 1 or p_outer < 1:
        raise ValueError("dimensions must lie in 1..3")
    if sum(nu) > cap:
        raise CapExceeded(f"|nu| = {sum(nu)} exceeds cap {cap}")

    cands = [
        l
        for l in itertools.product(*[range(v + 1) for v in nu])
        if any(l)
    ]
    cands.sort(key=lambda l: (sum(l), l))
    nu_fact = _mfact(nu)
    terms: list[FaaTerm] = []

    def k_options(maxmult):
        for total in range(0, maxmult + 1):
            yield from multi_indices(p_outer, total)

    def rec(i, remaining, chosen):
        if not any(remaining):
            lam = [0] * p_outer
            denom = 1
            for l, k in chosen:
                for a in range(p_outer):
                    lam[a] += k[a]
                denom *= _mfact(k) * _mfact(l) ** sum(k)
            terms.append(FaaTerm(Fraction(nu_fact, denom), tuple(lam), tuple(chosen)))
            return
        if i == len(cands):
            return
        l = cands[i]
        # maximal multiplicity of l that fits in the remainder
        maxmult = min((r // c for r, c in zip(remaining, l) if c > 0), default=0)
        for k in k_options(maxmult):
            m = sum(k)
            if m == 0:
                rec(i + 1, remaining, chosen)
                continue
            rem = tuple(r - m * c for r, c in zip(remaining, l))
            rec(i + 1, rem, chosen + [(l, k)])

    rec(0, nu, [])
    return terms


def evaluate_faa_di_bruno(terms, outer_derivative: Callable, inner_derivative: Callable):
    """Sum the Faa di Bruno terms given derivative oracles.

    ``outer_derivative(lam)`` returns ``d^lam f`` at ``g(x)``;
    ``inner_derivative(l, i)`` returns ``d^l g_i`` at ``x``.
    """
    total = 0
    for t in terms:
        prod = t.coefficient * outer_derivative(t.outer_index)
        for l, k in t.factors:
            for i, ki in enumerate(k):
                if ki:
                    prod = prod * inner_derivative(l, i) ** ki
        total = total + prod
    return total


# ---------------------------------------------------------------------------
# densities


@dataclass(frozen=True, eq=False)
class Density:
    """A strictly positive density.

    ``kind='frame_lebesgue'`` is Lebesgue measure in the coordinates of
    ``frame``; ``kind='riemannian'`` is the metric volume.
    """

    kind: str = "frame_lebesgue"
    frame: Frame | None = None

    def __post_init__(self):
        if self.kind not in ("frame_lebesgue", "riemannian"):
            raise ValueError(f"unknown density kind {self.kind!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.frame is not None:
            d["frame"] = self.frame.to_dict()
        return d


def density_in_frame(d: Density, frame: Frame, x):
    """Weight ``mu_{z,b}(x)`` of density ``d`` in the coordinates of ``frame``."""
    x = np.asarray(x, dtype=float)
    if d.kind == "frame_lebesgue":
        ref = d.frame
        if ref is None or ref.same_as(frame):
            return np.ones(x.shape[:-1])
        if getattr(frame.model, "euclidean_charts", False):
            # affine charts: constant Jacobian
            val = abs(np.linalg.det(ref._inv @ frame.basis))
            return np.full(x.shape[:-1], val)
        p = frame.inverse(x)
        jac = ref.d_forward(p) @ frame.d_inverse(x)
        return np.abs(np.linalg.det(jac))
    p = frame.inverse(x)
    g = frame.model.metric(p)
    vol = np.sqrt(np.linalg.det(g))
    if getattr(frame.model, "euclidean_charts", False):
        return vol * abs(np.linalg.det(frame.basis))
    return vol * np.abs(np.linalg.det(frame.d_inverse(x)))

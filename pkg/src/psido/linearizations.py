"""Concrete manifold models and the maps derived from a linearization.

Models
------
``euclidean_standard``
    R^n with ``psi(x, v) = x + v``.
``euclidean_deformed``
    R^n with ``psi(x, v) = x + <x>^s S(v / <x>^s)`` where ``S = Id + g`` and
    ``g`` is built from a componentwise profile ``h``.
``hyperbolic_exp``
    The hyperbolic plane in the coordinates ``ds^2 = dx^2 + cosh^2(x) dy^2``
    with ``psi = exp``.
``hyperbolic_frame_flat``
    Same manifold, with ``psi`` chosen standard in a designated frame.
``euclidean_scaled``
    Test fixture ``psi(x, v) = x + <x> v`` that violates the decay
    hypotheses; used as a negative control.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    ConfigError,
    DomainError,
    HypothesisViolation,
    InverseFailure,
    NumericError,
)
from .geometry import Density, Frame, density_in_frame, japanese, numeric_jacobian

__all__ = [
    "ManifoldModel",
    "EuclideanStandard",
    "EuclideanDeformed",
    "EuclideanScaled",
    "HyperbolicExp",
    "HyperbolicFrameFlat",
    "make_model",
    "model_from_dict",
    "PhiResult",
    "TransportMap",
    "hyp_exp",
    "hyp_log",
    "hyp_distance",
    "hyp_metric",
    "geodesic_ode",
    "psi_eval",
    "psi_bar_eval",
    "phi_lambda",
    "phi_lambda_inv",
    "upsilon_t",
    "parallel_transport",
    "transport_matrices",
    "mu_lambda",
    "mu_lambda_at_phi",
    "check_h_psi",
]

HYP_COORD_CAP = 700.0


# ---------------------------------------------------------------------------
# hyperbolic closed forms


def _sinhc(t):
    t = np.asarray(t, dtype=float)
    small = np.abs(t) < 1e-4
    ts = np.where(small, 1.0, t)
    return np.where(small, 1.0 + t * t / 6.0 + t**4 / 120.0, np.sinh(ts) / ts)


def _check_hyp(*arrays):
    for a in arrays:
        if np.any(np.abs(a) > HYP_COORD_CAP):
            raise DomainError("hyperbolic coordinates exceed the cosh overflow range")


def hyp_metric(p):
    """Metric tensor ``diag(1, cosh^2 x)`` at model point(s) ``p``."""
    p = np.asarray(p, dtype=float)
    g = np.zeros(p.shape[:-1] + (2, 2))
    g[..., 0, 0] = 1.0
    g[..., 1, 1] = np.cosh(p[..., 0]) ** 2
    return g


def hyp_exp(p, v):
    """Exponential map of the hyperbolic plane in ``(x, y)`` coordinates.

    The geodesic leaving ``p`` with velocity ``v`` is evaluated at time 1 by
    writing ``v = t (cos_x, sin_x)`` with ``t`` its metric length.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_hyp(p)
    x, y = p[..., 0], p[..., 1]
    v1, v2 = v[..., 0], v[..., 1]
    t = np.sqrt(v1 * v1 + (np.cosh(x) * v2) ** 2)
    ch, sc = np.cosh(t), _sinhc(t)
    sx, cx = np.sinh(x), np.cosh(x)
    sy, cy = np.sinh(y), np.cosh(y)
    x_new = np.arcsinh(ch * sx + sc * v1 * cx)
    y_new = np.arcsinh((ch * cx * sy + sc * (sx * sy * v1 + cx * cy * v2)) / np.cosh(x_new))
    return np.stack([x_new, y_new], axis=-1)


def _argch_ratio(f):
    """``argch(f) / sqrt(f^2 - 1)``, continuous through ``f = 1``."""
    f = np.asarray(f, dtype=float)
    u = np.maximum(f - 1.0, 0.0)
    small = u < 1e-6
    fs = np.where(small, 2.0, f)
    exact = np.arccosh(fs) / np.sqrt(fs * fs - 1.0)
    series = np.sqrt(2.0 / (2.0 + u)) * (1.0 - u / 12.0 + 3.0 * u * u / 160.0)
    return np.where(small, series, exact)


def _hyp_fg(p, q):
    x, y = p[..., 0], p[..., 1]
    xq, yq = q[..., 0], q[..., 1]
    cdy = np.cosh(yq - y)
    f = np.cosh(xq) * cdy * np.cosh(x) - np.sinh(xq) * np.sinh(x)
    g = np.cosh(xq) * cdy * np.sinh(x) - np.sinh(xq) * np.cosh(x)
    return f, g


def hyp_log(p, q):
    """Inverse of :func:`hyp_exp` in its second argument."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    _check_hyp(p, q)
    f, g = _hyp_fg(p, q)
    k = _argch_ratio(f)
    w1 = -g
    w2 = np.cosh(q[..., 0]) / np.cosh(p[..., 0]) * np.sinh(q[..., 1] - p[..., 1])
    return np.stack([k * w1, k * w2], axis=-1)


def hyp_distance(p, q):
    """Geodesic distance ``argch f_p(q)``.

    Evaluated as the metric length of :func:`hyp_log`, which avoids the
    ``sqrt(eps)`` loss of ``arccosh`` near the diagonal.
    """
    p = np.asarray(p, float)
    v = hyp_log(p, q)
    return np.sqrt(v[..., 0] ** 2 + (np.cosh(p[..., 0]) * v[..., 1]) ** 2)


def _geo_rhs(s):
    x, vx, vy = s[..., 0], s[..., 2], s[..., 3]
    out = np.empty_like(s)
    out[..., 0] = vx
    out[..., 1] = vy
    out[..., 2] = np.cosh(x) * np.sinh(x) * vy * vy
    out[..., 3] = -2.0 * np.tanh(x) * vx * vy
    if s.shape[-1] > 4:
        b = s[..., 4:].reshape(s.shape[:-1] + (2, 2))
        db = np.empty_like(b)
        # d beta^k = -Gamma^k_ij gamma'^i beta^j
        db[..., 0, :] = np.cosh(x)[..., None] * np.sinh(x)[..., None] * vy[..., None] * b[..., 1, :]
        db[..., 1, :] = -np.tanh(x)[..., None] * (vx[..., None] * b[..., 1, :] + vy[..., None] * b[..., 0, :])
        out[..., 4:] = db.reshape(s.shape[:-1] + (4,))
    return out


def _rk4(state, dt, nsteps, record=False):
    path = [state.copy()] if record else None
    for _ in range(nsteps):
        k1 = _geo_rhs(state)
        k2 = _geo_rhs(state + 0.5 * dt * k1)
        k3 = _geo_rhs(state + 0.5 * dt * k2)
        k4 = _geo_rhs(state + dt * k3)
        state = state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(state)):
            raise NumericError("geodesic integration produced non-finite state")
        if record:
            path.append(state.copy())
    return (state, np.array(path)) if record else state


def geodesic_ode(p, v, t_max: float, dt: float = 1e-3):
    """Integrate the hyperbolic geodesic equations with classical RK4.

    Returns
    -------
    t : ndarray, shape (K,)
    positions : ndarray, shape (K, ..., 2)
    velocities : ndarray, shape (K, ..., 2)
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    nsteps = int(round(t_max / dt))
    h = t_max / nsteps if nsteps else 0.0
    state = np.concatenate([p, v], axis=-1)
    _, path = _rk4(state, h, nsteps, record=True)
    t = np.arange(nsteps + 1) * h
    return t, path[..., :2], path[..., 2:4]


def _hyp_transport_model(p, v, dt=1e-3):
    """Parallel transport matrix along ``s -> exp_p(s v)``, ``s in [0, 1]``."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    shape = np.broadcast_shapes(p.shape, v.shape)
    p = np.broadcast_to(p, shape)
    v = np.broadcast_to(v, shape)
    beta = np.broadcast_to(np.eye(2).reshape(4), shape[:-1] + (4,))
    state = np.concatenate([p, v, beta], axis=-1)
    nsteps = max(1, int(round(1.0 / dt)))
    state = _rk4(state, 1.0 / nsteps, nsteps)
    return state[..., 4:].reshape(shape[:-1] + (2, 2))


# ---------------------------------------------------------------------------
# models


class ManifoldModel:
    """Base class: exponential structure plus a linearization.

    Subclasses provide ``exp``/``log`` (defining the normal charts) and may
    override ``psi_model``/``psi_bar_model`` (the linearization in model
    coordinates) and the frame-level fast paths.
    """

    kind = "abstract"
    euclidean_charts = False

    def __init__(self, dim: int):
        if dim not in (1, 2):
            raise ConfigError("dimension must be 1 or 2")
        self.dim = dim

    # exponential structure -------------------------------------------------
    def exp(self, p, v):
        raise NotImplementedError

    def log(self, p, q):
        raise NotImplementedError

    def exp_jac(self, p, v):
        return numeric_jacobian(lambda w: self.exp(p, w), v)

    def log_jac(self, p, q):
        return numeric_jacobian(lambda w: self.log(p, w), q)

    def metric(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(np.eye(self.dim), p.shape[:-1] + (self.dim, self.dim))

    # linearization in model coordinates ------------------------------------
    def psi_model(self, p, v):
        return self.exp(p, v)

    def psi_bar_model(self, p, q):
        return self.log(p, q)

    # frame-level maps --------------------------------------------------------
    def is_affine(self, frame: Frame) -> bool:
        """True when ``psi`` reads ``x + zeta`` in the coordinates of ``frame``."""
        return False

    def psi(self, frame: Frame, x, zeta):
        x = np.asarray(x, dtype=float)
        zeta = np.asarray(zeta, dtype=float)
        if self.is_affine(frame):
            return x + zeta
        x, zeta = np.broadcast_arrays(x, zeta)
        p = frame.inverse(x)
        v = np.einsum("...ij,...j->...i", frame.d_inverse(x), zeta)
        return frame.forward(self.psi_model(p, v))

    def psi_bar(self, frame: Frame, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.is_affine(frame):
            return y - x
        x, y = np.broadcast_arrays(x, y)
        p = frame.inverse(x)
        w = self.psi_bar_model(p, frame.inverse(y))
        return np.einsum("...ij,...j->...i", frame.d_forward(p), w)

    def transport(self, frame: Frame, x, xi):
        """Transport matrices ``P_{x, xi}`` in frame coordinates.

        The default is the mean-value matrix of ``Upsilon_{1,T}(x, .)``
        along the segment ``[0, xi]``, which satisfies both defining
        identities.
        """
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        x, xi = np.broadcast_arrays(x, xi)
        nodes, weights = np.polynomial.legendre.leggauss(16)
        nodes = 0.5 * (nodes + 1.0)
        weights = 0.5 * weights
        acc = np.zeros(x.shape + (self.dim,))
        for s, w in zip(nodes, weights):
            jac = numeric_jacobian(
                lambda z: _upsilon_T(self, frame, 1.0, x, z), s * xi
            )
            acc = acc + w * jac
        return acc

    def h_psi_declared(self, frame: Frame) -> bool:
        """Whether the midpoint hypothesis is known to hold."""
        return False

    def check_domain(self, x):
        return None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim}

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"


class _EuclideanBase(ManifoldModel):
    euclidean_charts = True

    def exp(self, p, v):
        return np.asarray(p, dtype=float) + np.asarray(v, dtype=float)

    def log(self, p, q):
        return np.asarray(q, dtype=float) - np.asarray(p, dtype=float)

    def _eye(self, a, b):
        shape = np.broadcast_shapes(np.shape(a), np.shape(b))
        return np.broadcast_to(np.eye(self.dim), shape[:-1] + (self.dim, self.dim))

    def exp_jac(self, p, v):
        return self._eye(p, v)

    def log_jac(self, p, q):
        return self._eye(p, q)


class EuclideanStandard(_EuclideanBase):
    """R^n with the standard linearization."""

    kind = "euclidean_standard"

    def __init__(self, dim: int = 1):
        super().__init__(dim)

    def is_affine(self, frame):
        return True

    def transport(self, frame, x, xi):
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        return np.broadcast_to(np.eye(self.dim), x.shape + (self.dim,)).copy()

    def h_psi_declared(self, frame):
        return True


# profiles h(u) = phi(u) applied componentwise, with derivative dphi
_PROFILES: dict[str, tuple[Callable, Callable]] = {
    "tanh": (np.tanh, lambda u: 1.0 / np.cosh(u) ** 2),
    "zero": (np.zeros_like, np.zeros_like),
    "sin": (np.sin, np.cos),
}


class EuclideanDeformed(_EuclideanBase):
    """Deformed linearization ``psi(x, v) = x + <x>^s S(v/<x>^s)``.

    Parameters
    ----------
    dim : int
    sigma : float in [0, 1]
    eta : float
        Scale: ``h = (eta/16) * profile`` componentwise, so that
        ``|d h| <= eta/16`` for profiles with unit-bounded slope.
    profile : str or (callable, callable)
        Profile name or a ``(phi, dphi)`` pair of vectorised callables.
    """

    kind = "euclidean_deformed"

    def __init__(self, dim: int = 1, sigma: float = 1.0, eta: float = 0.1, profile="tanh"):
        super().__init__(dim)
        if not 0.0 <= sigma <= 1.0:
            raise ConfigError("sigma must lie in [0, 1]")
        if not 0.0 <= eta < 16.0:
            raise ConfigError("eta must lie in [0, 16)")
        self.sigma = float(sigma)
        self.eta = float(eta)
        if isinstance(profile, str):
            if profile not in _PROFILES:
                raise ConfigError(f"unknown profile {profile!r}")
            self.profile_name = profile
            phi, dphi = _PROFILES[profile]
        else:
            self.profile_name = None
            phi, dphi = profile
        c = self.eta / 16.0
        self._phi = lambda u: c * phi(u)
        self._dphi = lambda u: c * dphi(u)
        self._phi0 = float(self._phi(np.zeros(1))[0])
        self._dphi0 = float(self._dphi(np.zeros(1))[0])

    # S = Id + g, g(u) = h(u) - h(0) - dh_0 u
    def g(self, u):
        u = np.asarray(u, dtype=float)
        return self._phi(u) - self._phi0 - self._dphi0 * u

    def dg(self, u):
        return self._dphi(np.asarray(u, dtype=float)) - self._dphi0

    def s(self, u):
        u = np.asarray(u, dtype=float)
        return u + self.g(u)

    def s_inv(self, w, maxiter: int = 100, tol: float = 1e-15):
        """Invert ``S`` componentwise by damped Newton iteration."""
        w = np.asarray(w, dtype=float)
        u = w.copy()
        res = self.s(u) - w
        for _ in range(maxiter):
            scale = np.maximum(1.0, np.abs(w))
            if np.all(np.abs(res) <= tol * scale):
                return u
            step = res / (1.0 + self.dg(u))
            cand = u - step
            cres = self.s(cand) - w
            worse = np.abs(cres) > np.abs(res)
            damp = 1.0
            while np.any(worse) and damp > 1e-6:
                damp *= 0.5
                cand = np.where(worse, u - damp * step, cand)
                cres = self.s(cand) - w
                worse = np.abs(cres) > np.abs(res)
            if np.array_equal(cand, u):
                return u
            u, res = cand, cres
        if np.all(np.abs(res) <= 1e-12 * np.maximum(1.0, np.abs(w))):
            return u
        raise InverseFailure("Newton inversion of S did not converge in 100 steps")

    def weight(self, p):
        return japanese(p) ** self.sigma

    def psi_model(self, p, v):
        p = np.asarray(p, dtype=float)
        w = self.weight(p)[..., None]
        return p + w * self.s(np.asarray(v, dtype=float) / w)

    def psi_bar_model(self, p, q):
        p = np.asarray(p, dtype=float)
        w = self.weight(p)[..., None]
        return w * self.s_inv((np.asarray(q, dtype=float) - p) / w)

    def is_affine(self, frame):
        return self.eta == 0.0 or self.profile_name == "zero"

    def psi(self, frame, x, zeta):
        if self.is_affine(frame):
            return np.asarray(x, float) + np.asarray(zeta, float)
        p = frame.inverse(np.asarray(x, float))
        v = np.asarray(zeta, float) @ frame.basis.T
        return frame.forward(self.psi_model(p, v))

    def psi_bar(self, frame, x, y):
        if self.is_affine(frame):
            return np.asarray(y, float) - np.asarray(x, float)
        p = frame.inverse(np.asarray(x, float))
        w = self.psi_bar_model(p, frame.inverse(np.asarray(y, float)))
        return w @ frame._inv.T

    def g_hat(self, z):
        return self.g(self.s_inv(-np.asarray(z, dtype=float)))

    def transport_model(self, p, xi):
        """Closed form ``Id + V + W`` in model coordinates (diagonal)."""
        p, xi = np.broadcast_arrays(np.asarray(p, float), np.asarray(xi, float))
        wx = self.weight(p)[..., None]
        q = self.psi_model(p, xi)
        wy = self.weight(q)[..., None]
        u = xi / wx
        safe_u = np.where(u == 0.0, 1.0, u)
        v_diag = np.where(u == 0.0, 0.0, self.g(u) / safe_u)
        safe_xi = np.where(xi == 0.0, 1.0, xi)
        w_val = wy * self.g_hat(wx * self.s(u) / wy)
        w_diag = np.where(xi == 0.0, 0.0, w_val / safe_xi)
        diag = 1.0 + v_diag + w_diag
        out = np.zeros(p.shape + (self.dim,))
        idx = np.arange(self.dim)
        out[..., idx, idx] = diag
        return out

    def transport(self, frame, x, xi):
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        p = frame.inverse(x)
        v = xi @ frame.basis.T
        pm = self.transport_model(p, v)
        return frame._inv @ pm @ frame.basis

    def h_psi_declared(self, frame):
        return self.is_affine(frame)

    def to_dict(self):
        if self.profile_name is None:
            raise ConfigError("custom profiles are not serialisable")
        return {
            "kind": self.kind,
            "dim": self.dim,
            "sigma": self.sigma,
            "eta": self.eta,
            "profile": self.profile_name,
        }


class EuclideanScaled(_EuclideanBase):
    """Negative-control fixture ``psi(x, v) = x + <x> v``."""

    kind = "euclidean_scaled"

    def __init__(self, dim: int = 1):
        super().__init__(dim)

    def psi_model(self, p, v):
        p = np.asarray(p, dtype=float)
        return p + japanese(p)[..., None] * np.asarray(v, dtype=float)

    def psi_bar_model(self, p, q):
        p = np.asarray(p, dtype=float)
        return (np.asarray(q, dtype=float) - p) / japanese(p)[..., None]

    def psi(self, frame, x, zeta):
        p = frame.inverse(np.asarray(x, float))
        v = np.asarray(zeta, float) @ frame.basis.T
        return frame.forward(self.psi_model(p, v))

    def psi_bar(self, frame, x, y):
        p = frame.inverse(np.asarray(x, float))
        w = self.psi_bar_model(p, frame.inverse(np.asarray(y, float)))
        return w @ frame._inv.T


class HyperbolicExp(ManifoldModel):
    """Hyperbolic plane with the Riemannian exponential as linearization."""

    kind = "hyperbolic_exp"

    def __init__(self, dim: int = 2):
        if dim != 2:
            raise ConfigError("the hyperbolic models are two-dimensional")
        super().__init__(2)

    def exp(self, p, v):
        return hyp_exp(p, v)

    def log(self, p, q):
        return hyp_log(p, q)

    def exp_jac(self, p, v):
        return numeric_jacobian(lambda w: hyp_exp(p, w), v, h=1e-4)

    def log_jac(self, p, q):
        return numeric_jacobian(lambda w: hyp_log(p, w), q, h=1e-4)

    def metric(self, p):
        return hyp_metric(p)

    def check_domain(self, x):
        _check_hyp(np.asarray(x, float))

    def transport(self, frame, x, xi):
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        p = frame.inverse(x)
        dinv = frame.d_inverse(x)
        v = np.einsum("...ij,...j->...i", dinv, xi)
        q = hyp_exp(p, v)
        pm = _hyp_transport_model(p, v)
        return frame.d_forward(q) @ pm @ dinv

    def h_psi_declared(self, frame):
        return True


class HyperbolicFrameFlat(HyperbolicExp):
    """Hyperbolic plane with the linearization that is standard in ``frame0``.

    Parameters
    ----------
    base_point, basis : array_like
        Defining frame; defaults to the origin with the identity basis.
    """

    kind = "hyperbolic_frame_flat"

    def __init__(self, base_point=(0.0, 0.0), basis=None):
        super().__init__(2)
        self.frame0 = Frame(self, base_point, basis)

    def psi_model(self, p, v):
        f0 = self.frame0
        u = f0.forward(p)
        du = np.einsum("...ij,...j->...i", f0.d_forward(p), v)
        return f0.inverse(u + du)

    def psi_bar_model(self, p, q):
        f0 = self.frame0
        diff = f0.forward(q) - f0.forward(p)
        return np.einsum("...ij,...j->...i", f0.d_inverse(f0.forward(p)), diff)

    def is_affine(self, frame):
        return frame.same_as(self.frame0)

    def transport(self, frame, x, xi):
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        if self.is_affine(frame):
            return np.broadcast_to(np.eye(2), x.shape + (2,)).copy()
        f0 = self.frame0
        p = frame.inverse(x)
        j_in = f0.d_forward(p) @ frame.d_inverse(x)
        x0 = f0.forward(p)
        y0 = x0 + np.einsum("...ij,...j->...i", j_in, xi)
        q = f0.inverse(y0)
        j_out = frame.d_forward(q) @ f0.d_inverse(y0)
        return j_out @ j_in

    def h_psi_declared(self, frame):
        return True

    def to_dict(self):
        return {"kind": self.kind, "dim": 2, "frame": self.frame0.to_dict()}


_KINDS = {
    "euclidean_standard": EuclideanStandard,
    "euclidean_deformed": EuclideanDeformed,
    "euclidean_scaled": EuclideanScaled,
    "hyperbolic_exp": HyperbolicExp,
    "hyperbolic_frame_flat": HyperbolicFrameFlat,
}


def make_model(kind: str, **params) -> ManifoldModel:
    """Construct a model from its kind tag and parameters."""
    if kind not in _KINDS:
        raise ConfigError(f"unknown model kind {kind!r}")
    if kind == "hyperbolic_frame_flat":
        fr = params.pop("frame", None) or {}
        params.pop("dim", None)
        return HyperbolicFrameFlat(fr.get("base_point", (0.0, 0.0)), fr.get("basis"))
    try:
        return _KINDS[kind](**params)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def model_from_dict(d: dict) -> ManifoldModel:
    d = dict(d)
    return make_model(d.pop("kind"), **d)


# ---------------------------------------------------------------------------
# derived maps


@dataclass(frozen=True)
class PhiResult:
    left: np.ndarray
    right: np.ndarray


@dataclass(frozen=True)
class TransportMap:
    matrix: np.ndarray
    x: np.ndarray
    xi: np.ndarray


def psi_eval(model: ManifoldModel, frame: Frame, x, zeta):
    """Linearization ``psi_z^b(x, zeta)`` in the coordinates of ``frame``."""
    return model.psi(frame, x, zeta)


def psi_bar_eval(model: ManifoldModel, frame: Frame, x, y):
    """Inverse of ``psi_z^b(x, .)``."""
    return model.psi_bar(frame, x, y)


def _require_h_psi(model, frame, lam):
    if lam not in (0.0, 1.0, -1.0) and not model.h_psi_declared(frame):
        raise HypothesisViolation(
            f"{model.kind} does not satisfy the midpoint hypothesis; "
            "only lambda in {0, 1} is available"
        )


def phi_lambda(model, frame, lam: float, x, zeta) -> PhiResult:
    """``Phi_lambda(x, zeta) = (psi(x, lam zeta), psi(x, -(1-lam) zeta))``."""
    lam = float(lam)
    _require_h_psi(model, frame, lam)
    x = np.asarray(x, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    left = x + 0.0 * zeta if lam == 0.0 else model.psi(frame, x, lam * zeta)
    right = x + 0.0 * zeta if lam == 1.0 else model.psi(frame, x, -(1.0 - lam) * zeta)
    return PhiResult(left, right)


def phi_lambda_inv(model, frame, lam: float, x, y):
    """Return ``(m_lambda(x, y), xi_lambda(x, y))``."""
    lam = float(lam)
    _require_h_psi(model, frame, lam)
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    if lam == 0.0:
        return x.copy(), -model.psi_bar(frame, x, y)
    if lam == 1.0:
        return y.copy(), model.psi_bar(frame, y, x)
    if model.is_affine(frame):
        return x + lam * (y - x), x - y
    m = model.psi(frame, x, lam * model.psi_bar(frame, x, y))
    if lam >= 0.5:
        xi = model.psi_bar(frame, m, x) / lam
    else:
        xi = -model.psi_bar(frame, m, y) / (1.0 - lam)
    return m, xi


def _upsilon_T(model, frame, t, x, zeta):
    t = float(t)
    if t == 0.0:
        return np.broadcast_to(zeta, np.broadcast_shapes(np.shape(x), np.shape(zeta))).copy()
    y = model.psi(frame, x, t * zeta)
    return -model.psi_bar(frame, y, x) / t


def upsilon_t(model, frame, t: float, x, zeta):
    """``Upsilon_t(x, zeta) = (psi(x, t zeta), -(1/t) psibar(psi(x, t zeta), x))``."""
    t = float(t)
    if not -1.0 <= t <= 1.0:
        raise ValueError("t must lie in [-1, 1]")
    _require_h_psi(model, frame, t)
    x = np.asarray(x, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    if t == 0.0:
        x, zeta = np.broadcast_arrays(x, zeta)
        return x.copy(), zeta.copy()
    first = model.psi(frame, x, t * zeta)
    if abs(t) < 1e-3:
        # linear blend between t = 0 and t = +-1e-3 to avoid 1/t roundoff
        t0 = np.copysign(1e-3, t)
        ref = _upsilon_T(model, frame, t0, x, zeta)
        second = zeta + (t / t0) * (ref - zeta)
    else:
        second = -model.psi_bar(frame, first, x) / t
    return first, second


def transport_matrices(model, frame, x, xi):
    """Vectorised transport matrices ``P_{x, xi}`` with shape ``(..., n, n)``."""
    return model.transport(frame, x, xi)


def parallel_transport(model, frame, x, xi) -> TransportMap:
    """Transport map ``P_{x, xi}`` in frame coordinates."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    mat = model.transport(frame, x, xi)
    if not np.all(np.isfinite(mat)):
        raise NumericError("transport produced non-finite entries")
    return TransportMap(mat, x, xi)


def _phi_jacobian_det(model, frame, lam, x, zeta):
    if model.is_affine(frame):
        return np.ones(np.broadcast_shapes(np.shape(x), np.shape(zeta))[:-1])
    n = model.dim

    def phi_flat(v):
        r = phi_lambda(model, frame, lam, v[..., :n], v[..., n:])
        return np.concatenate([r.left, r.right], axis=-1)

    x, zeta = np.broadcast_arrays(np.asarray(x, float), np.asarray(zeta, float))
    jac = numeric_jacobian(phi_flat, np.concatenate([x, zeta], axis=-1))
    det = np.abs(np.linalg.det(jac))
    if np.any(det <= 0) or not np.all(np.isfinite(det)):
        raise NumericError("singular Jacobian of Phi_lambda")
    return det


def mu_lambda_at_phi(model, frame, density: Density, lam: float, x, zeta):
    """``mu_lambda`` evaluated at ``Phi_lambda(x, zeta)``."""
    x, zeta = np.broadcast_arrays(np.asarray(x, float), np.asarray(zeta, float))
    r = phi_lambda(model, frame, lam, x, zeta)
    jd = _phi_jacobian_det(model, frame, lam, x, zeta)
    mu = lambda pts: density_in_frame(density, frame, pts)
    return mu(r.left) * mu(r.right) / mu(x) ** 2 * jd


def mu_lambda(model, frame, density: Density, lam: float, x, y):
    """Density correction ``mu_lambda(x, y)``."""
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    m, xi = phi_lambda_inv(model, frame, lam, x, y)
    jd = _phi_jacobian_det(model, frame, lam, m, xi)
    mu = lambda pts: density_in_frame(density, frame, pts)
    out = mu(x) * mu(y) / mu(m) ** 2 * jd
    if np.any(out <= 0):
        raise NumericError("non-positive mu_lambda")
    return out


def check_h_psi(model, frame, samples: int = 200, seed: int = 0, box: float = 3.0,
                tol: float = 1e-7) -> dict:
    """Sample the midpoint identity ``psi_x(t psibar_x(y)) = psi_y((1-t) psibar_y(x))``.

    Returns
    -------
    dict
        ``max_residual``, ``passed`` and the sampling parameters.
    """
    rng = np.random.default_rng(seed)
    n = model.dim
    x = rng.uniform(-box, box, size=(samples, n))
    y = rng.uniform(-box, box, size=(samples, n))
    t = rng.uniform(0.0, 1.0, size=(samples, 1))
    lhs = model.psi(frame, x, t * model.psi_bar(frame, x, y))
    rhs = model.psi(frame, y, (1.0 - t) * model.psi_bar(frame, y, x))
    res = float(np.max(np.linalg.norm(lhs - rhs, axis=-1)))
    return {
        "hypothesis": "H_psi",
        "model": model.kind,
        "samples": samples,
        "seed": seed,
        "box": box,
        "max_residual": res,
        "tolerance": tol,
        "passed": bool(res <= tol),
    }

"""Numerical evidence for the geometric hypotheses behind the calculus.

Every verifier samples along rays from the origin, fits log-log decay
exponents with :func:`psido.grids.fit_decay_exponent` and collects the
results in a :class:`HypothesisReport`.  Reports serialise to JSON with a
CSV side file holding the raw ``(radius, value)`` samples.
"""
from __future__ import annotations

import csv
import json
import os
import functools
from dataclasses import dataclass, field

import numpy as np

from .compose import composition_geometry
from .errors import DomainError, InverseFailure
from .geometry import Frame, mixed_partial, multi_indices, numeric_jacobian, transition_map
from .grids import DecayFit, decay_fit
from .linearizations import ManifoldModel, _upsilon_T

__all__ = [
    "Check",
    "HypothesisReport",
    "ray_directions",
    "sample_radii",
    "verify_bounded_geometry",
    "verify_linearization_class",
    "verify_h_v",
    "verify_c_sigma",
    "emit_report",
    "load_report",
]

REPORT_SCHEMA = "psido-report/1"
DEFAULT_L = 12.0
X_STEP = 0.05
BOUND_CAP = 1e3
EPS = np.finfo(float).eps


@dataclass
class Check:
    """Scalar check ``value <= threshold`` (or ``>=`` when ``kind='ge'``)."""

    label: str
    value: float
    threshold: float
    kind: str = "le"

    @property
    def verdict(self) -> bool:
        if not np.isfinite(self.value):
            return False
        return self.value <= self.threshold if self.kind == "le" else self.value >= self.threshold

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "value": float(self.value),
            "threshold": float(self.threshold),
            "kind": self.kind,
            "verdict": "pass" if self.verdict else "fail",
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["label"], d["value"], d["threshold"], d["kind"])


@dataclass
class HypothesisReport:
    """Checks for one hypothesis; passes only if every check passes."""

    hypothesis: str
    models: list
    fits: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    parameters: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def verdict(self) -> bool:
        return all(f.verdict for f in self.fits) and all(c.verdict for c in self.checks)

    def failed(self) -> list[str]:
        return [f.label for f in self.fits if not f.verdict] + [c.label for c in self.checks if not c.verdict]

    def to_dict(self) -> dict:
        return {
            "hypothesis": self.hypothesis,
            "models": self.models,
            "parameters": self.parameters,
            "fits": [f.to_dict() for f in self.fits],
            "checks": [c.to_dict() for c in self.checks],
            "info": self.info,
            "verdict": "pass" if self.verdict else "fail",
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HypothesisReport":
        return cls(
            d["hypothesis"],
            d["models"],
            [DecayFit.from_dict(f) for f in d["fits"]],
            [Check.from_dict(c) for c in d["checks"]],
            d.get("parameters", {}),
            d.get("info", {}),
        )


# ---------------------------------------------------------------------------
# sampling helpers


def ray_directions(dim: int, n_rays: int = 8) -> np.ndarray:
    """Unit directions: ``+-1`` in 1-D, angles ``k 2pi/n_rays`` in 2-D."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    ang = 2.0 * np.pi * np.arange(n_rays) / n_rays
    return np.stack([np.cos(ang), np.sin(ang)], axis=-1)


def sample_radii(L: float = DEFAULT_L, n: int = 12, r_min: float = 2.0) -> np.ndarray:
    """Log-spaced radii in ``[r_min, 0.8 L]``."""
    return np.geomspace(r_min, 0.8 * L, n)


def _deriv_norm(F, X, k: int, step: float = X_STEP) -> np.ndarray:
    """Frobenius norm of all order-``k`` partials of ``F`` at ``X``."""
    lead = X.shape[:-1]
    if k == 0:
        return np.linalg.norm(np.asarray(F(X)).reshape(lead + (-1,)), axis=-1)
    acc = np.zeros(lead)
    for alpha in multi_indices(X.shape[-1], k):
        d = np.asarray(mixed_partial(F, X, alpha, step))
        acc = acc + np.sum(np.abs(d.reshape(lead + (-1,))) ** 2, axis=-1)
    return np.sqrt(acc)


def _floor(scale: float, k: int, step: float = X_STEP) -> float:
    """Roundoff level of an order-``k`` stencil on data of size ``scale``."""
    return max(1e-12, 100.0 * EPS * max(1.0, scale) / step**k)


def _ray_points(dim, L, n_radii, n_rays):
    dirs = ray_directions(dim, n_rays)
    radii = sample_radii(L, n_radii)
    X = radii[None, :, None] * dirs[:, None, :]
    return dirs, radii, X


def _model_tag(model: ManifoldModel, frame: Frame | None = None) -> dict:
    d = {"kind": model.kind}
    try:
        d.update(model.to_dict())
    except Exception:  # custom profiles are not serialisable
        d["custom"] = True
    if frame is not None:
        d["frame"] = frame.to_dict()
    return d


def _shell_vectors(dim: int, shells) -> np.ndarray:
    dirs = ray_directions(dim, 4 if dim == 2 else 2)
    return np.concatenate([s * dirs for s in shells], axis=0)


# ---------------------------------------------------------------------------
# bounded geometry


def verify_bounded_geometry(model: ManifoldModel, frames, sigma: float, max_order: int = 3,
                            L: float = DEFAULT_L, n_radii: int = 12, n_rays: int = 8,
                            tol: float = 0.25, orders=None) -> HypothesisReport:
    """Decay of the derivatives of chart transitions.

    For each ordered pair of distinct frames and each ``|alpha| <= max_order``
    ``|d^alpha (n_a o n_b^-1)|`` is fitted against the radius along every
    ray.  Orders ``>= 2`` with ``sigma > 0`` must match ``-sigma(|alpha|-1)``
    within ``tol``; first order and ``sigma = 0`` only need the upper bound.
    ``orders`` restricts the fitted orders (default ``1..max_order``).
    """
    frames = list(frames)
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    orders = sorted(set(orders)) if orders is not None else list(range(1, max_order + 1))
    if not orders or orders[0] < 1 or orders[-1] > 4:
        raise ValueError("orders must lie in 1..4")
    max_order = orders[-1]
    dim = model.dim
    _, radii, X = _ray_points(dim, L, n_radii, n_rays)
    rep = HypothesisReport(
        "S_sigma_bounded_geometry",
        [_model_tag(model, f) for f in frames],
        parameters={"sigma": sigma, "orders": orders, "L": L, "n_radii": n_radii,
                    "n_rays": n_rays, "tol": tol, "x_step": X_STEP},
    )
    table = {}
    for i, fa in enumerate(frames):
        for j, fb in enumerate(frames):
            if i == j:
                continue
            T = lambda x, fa=fa, fb=fb: transition_map(fa, fb, x)
            scale = float(np.max(np.abs(T(X))))
            for k in orders:
                vals = _deriv_norm(T, X, k)
                target = -sigma * (k - 1)
                mode = "sharp" if (sigma > 0 and k >= 2) else "upper"
                slopes = []
                for m, row in enumerate(vals):
                    fit = decay_fit(f"pair{i}{j}_order{k}_ray{m}", (k,), radii, row, target, tol,
                                    mode=mode, floor=_floor(scale, k))
                    rep.fits.append(fit)
                    slopes.append(fit.slope)
                table[f"pair{i}{j}_order{k}"] = slopes
                if k == 1:
                    rep.checks.append(Check(f"pair{i}{j}_order1_sup", float(vals.max()), BOUND_CAP))
    rep.info["slope_table"] = table
    rep.info["auto_pass"] = ["S_sigma2 transport transitions (trivial bundle)"]
    return rep


def _domain_guarded(hypothesis: str):
    """Turn a :class:`DomainError` raised while sampling into a failed check.

    Samples that push a model outside its representable range are evidence
    against the growth bounds being tested, not a numerical breakdown.
    """
    def wrap(fn):
        @functools.wraps(fn)
        def inner(model, frame, *args, **kwargs):
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    return fn(model, frame, *args, **kwargs)
            except DomainError as exc:
                rep = HypothesisReport(hypothesis, [_model_tag(model, frame)],
                                       parameters={"args": list(args), **kwargs})
                rep.checks.append(Check("samples inside model domain", 1.0, 0.0))
                rep.info["domain_error"] = str(exc)
                return rep
        return inner
    return wrap


# ---------------------------------------------------------------------------
# linearization class


@_domain_guarded("S_sigma_linearization")
def verify_linearization_class(model: ManifoldModel, frame: Frame, sigma: float,
                               L: float = DEFAULT_L, n_radii: int = 10, n_rays: int = 8,
                               shells=(0.5, 1.0, 2.0), max_order: int = 2,
                               tol: float = 0.25) -> HypothesisReport:
    """Sampled membership of ``psi`` in an ``S_sigma``-linearization class.

    (i) ``d_x^nu psi(x, zeta)`` for ``1 <= |nu| <= max_order`` at fixed
    ``zeta`` shells decays at least like ``<x>^{-sigma(|nu|-1)}`` and
    ``d_zeta psi`` stays bounded in ``x``; the growth exponent ``kappa`` in
    ``|zeta|`` is reported.  (ii) ``P`` and ``P^-1`` are bounded, their
    ``x``-derivatives decay like ``<x>^{-sigma|nu|}``, ``P_{x,xi} xi``
    reproduces ``Upsilon_{1,T}`` and ``P_{x,0} = Id``.  (iii) is automatic
    for scalar bundles.
    """
    dim = model.dim
    dirs, radii, X = _ray_points(dim, L, n_radii, n_rays)
    Z = _shell_vectors(dim, shells)
    rep = HypothesisReport(
        "S_sigma_linearization",
        [_model_tag(model, frame)],
        parameters={"sigma": sigma, "L": L, "n_radii": n_radii, "n_rays": n_rays,
                    "shells": list(shells), "max_order": max_order, "tol": tol, "x_step": X_STEP},
    )
    Xs = np.broadcast_to(X[None], (Z.shape[0],) + X.shape)
    Zs = np.broadcast_to(Z[:, None, None, :], Xs.shape)

    psi = lambda x: model.psi(frame, x, Zs)
    scale = float(np.max(np.abs(psi(Xs))))
    for k in range(1, max_order + 1):
        vals = _deriv_norm(psi, Xs, k).max(axis=(0, 1))
        rep.fits.append(decay_fit(f"(i) d_x^{k} psi", (k,), radii, vals, -sigma * (k - 1), tol,
                                  mode="upper", floor=_floor(scale, k)))
    dz = numeric_jacobian(lambda z: model.psi(frame, Xs, z), Zs)
    dz_vals = np.linalg.norm(dz.reshape(dz.shape[:-2] + (-1,)), axis=-1).max(axis=(0, 1))
    rep.fits.append(decay_fit("(i) d_zeta psi bounded", (0,), radii, dz_vals, 0.0, tol, mode="upper"))
    rep.checks.append(Check("(i) sup |d_zeta psi|", float(dz_vals.max()), BOUND_CAP))

    # kappa: growth of d_x psi in |zeta| at a fixed radius
    zr = np.geomspace(1.0, 0.4 * L, 8)
    zdir = ray_directions(dim, 4 if dim == 2 else 2)
    Zk = zr[None, :, None] * zdir[:, None, :]
    x0 = np.broadcast_to(X[:, n_radii // 2][:, None, None, :], (X.shape[0],) + Zk.shape)
    Zk = np.broadcast_to(Zk[None], x0.shape)
    g1 = _deriv_norm(lambda x: model.psi(frame, x, Zk), x0, 1).max(axis=(0, 1))
    kap = decay_fit("kappa", (1,), zr, g1, 0.0, np.inf, mode="upper")
    rep.info["kappa_estimate"] = kap.slope if kap.slope is not None else 0.0

    # (ii) transport
    Pf = lambda x: model.transport(frame, x, Zs)
    P = Pf(Xs)
    Pinv = np.linalg.inv(P)
    pn = np.linalg.norm(P.reshape(P.shape[:-2] + (-1,)), axis=-1).max(axis=(0, 1))
    pin = np.linalg.norm(Pinv.reshape(Pinv.shape[:-2] + (-1,)), axis=-1).max(axis=(0, 1))
    rep.checks.append(Check("(ii) sup |P|", float(pn.max()), BOUND_CAP))
    rep.checks.append(Check("(ii) sup |P^-1|", float(pin.max()), BOUND_CAP))
    rep.fits.append(decay_fit("(ii) |P| bounded", (0,), radii, pn, 0.0, tol, mode="upper"))
    rep.fits.append(decay_fit("(ii) |P^-1| bounded", (0,), radii, pin, 0.0, tol, mode="upper"))
    for k in (1, 2):
        vals = _deriv_norm(Pf, Xs, k).max(axis=(0, 1))
        rep.fits.append(decay_fit(f"(ii) d_x^{k} P", (k,), radii, vals, -sigma * k, tol,
                                  mode="upper", floor=_floor(1.0, k)))
    ups = _upsilon_T(model, frame, 1.0, Xs, Zs)
    res = np.max(np.abs(np.einsum("...ij,...j->...i", P, Zs) - ups))
    rep.checks.append(Check("(ii) |P xi - Upsilon_1T|", float(res), 1e-6))
    P0 = model.transport(frame, X, np.zeros_like(X))
    rep.checks.append(Check("(ii) |P_{x,0} - Id|", float(np.max(np.abs(P0 - np.eye(dim)))), 1e-8))
    rep.info["auto_pass"] = ["(iii) trivial bundle transport"]
    return rep


# ---------------------------------------------------------------------------
# (H_V)


def _gauss_t(n=8):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


@_domain_guarded("H_V")
def verify_h_v(model: ManifoldModel, frame: Frame, sigma: float, eps: float = 1.0, eta: float = 1.0,
               delta_min: float = 0.25, samples: int = 200, seed: int = 0, L: float = DEFAULT_L,
               tol: float = 0.25) -> HypothesisReport:
    """Invertibility of ``V_x(zeta) = -psi(x, -zeta) + x`` in averaged form.

    ``M = int_0^1 d(V_x^-1)(t zeta) dt`` and ``N = int_0^1 dV_x(t zeta) dt``
    are integrated with 8-node Gauss-Legendre on samples with
    ``|zeta| <= eps <x>^{sigma eta}``; the report passes iff
    ``min(det M, det N) >= delta_min`` and the differentials stay bounded.
    """
    dim = model.dim
    rng = np.random.default_rng(seed)
    R = 0.8 * L
    x = rng.uniform(-1.0, 1.0, size=(samples, dim))
    x = x / np.maximum(1.0, np.linalg.norm(x, axis=-1, keepdims=True)) * R
    d = rng.normal(size=(samples, dim))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    rad = eps * (1.0 + np.sum(x * x, axis=-1)) ** (0.5 * sigma * eta)
    zeta = d * (rng.uniform(0.0, 1.0, size=(samples, 1)) * rad[:, None])

    V = lambda xx, z: -model.psi(frame, xx, -z) + xx
    Vinv = lambda xx, w: -model.psi_bar(frame, xx, xx - w)
    t, w = _gauss_t(8)
    M = np.zeros((samples, dim, dim))
    Nm = np.zeros((samples, dim, dim))
    for tk, wk in zip(t, w):
        M += wk * numeric_jacobian(lambda z: Vinv(x, z), tk * zeta)
        Nm += wk * numeric_jacobian(lambda z: V(x, z), tk * zeta)
    detM = np.linalg.det(M)
    detN = np.linalg.det(Nm)
    rt = np.max(np.abs(Vinv(x, V(x, zeta)) - zeta))
    rep = HypothesisReport(
        "H_V",
        [_model_tag(model, frame)],
        parameters={"sigma": sigma, "eps": eps, "eta": eta, "delta_min": delta_min,
                    "samples": samples, "seed": seed, "L": L, "quadrature_nodes": 8},
    )
    rep.checks.append(Check("min det M", float(detM.min()), delta_min, "ge"))
    rep.checks.append(Check("min det N", float(detN.min()), delta_min, "ge"))
    rep.checks.append(Check("|V^-1 o V - Id|", float(rt), 1e-8))
    rep.info["min_det"] = float(min(detM.min(), detN.min()))

    _, radii, X = _ray_points(dim, L, 10, 8)
    Z = _shell_vectors(dim, (0.5, 1.0))
    Xs = np.broadcast_to(X[None], (Z.shape[0],) + X.shape)
    Zs = np.broadcast_to(Z[:, None, None, :], Xs.shape)
    dV = numeric_jacobian(lambda z: V(Xs, z), Zs)
    dVi = numeric_jacobian(lambda z: Vinv(Xs, z), Zs)
    for name, arr in (("|dV_x|", dV), ("|dV_x^-1|", dVi)):
        vals = np.linalg.norm(arr.reshape(arr.shape[:-2] + (-1,)), axis=-1).max(axis=(0, 1))
        rep.fits.append(decay_fit(f"{name} bounded", (0,), radii, vals, 0.0, tol, mode="upper"))
    return rep


# ---------------------------------------------------------------------------
# (C_sigma)


@_domain_guarded("C_sigma")
def verify_c_sigma(model: ManifoldModel, frame: Frame, sigma: float, L: float = DEFAULT_L,
                   n_radii: int = 10, n_rays: int = 8, shells=(0.5, 1.0), tol: float = 0.25,
                   cap: float = BOUND_CAP) -> HypothesisReport:
    """Spot checks of the amplitude-class conditions used for composition.

    The first differentials ``(d psi_x)_zeta`` and ``(d psibar_x)_y`` must
    stay bounded: their sup along rays must not grow (fitted slope
    ``<= tol``) and must stay below ``cap``.  ``V = (dr_{x,zeta})_{zeta'}``
    and its ``x``-derivatives up to order 2 must decay like
    ``<x>^{-sigma|nu|}``.  Growth exponents of ``V`` in ``zeta`` and
    ``zeta'`` are reported as ``kappa_v`` and ``eps_v``.
    """
    dim = model.dim
    _, radii, X = _ray_points(dim, L, n_radii, n_rays)
    Z = _shell_vectors(dim, shells)
    Xs = np.broadcast_to(X[None], (Z.shape[0],) + X.shape)
    Zs = np.broadcast_to(Z[:, None, None, :], Xs.shape)
    rep = HypothesisReport(
        "C_sigma",
        [_model_tag(model, frame)],
        parameters={"sigma": sigma, "L": L, "n_radii": n_radii, "n_rays": n_rays,
                    "shells": list(shells), "tol": tol, "cap": cap, "x_step": X_STEP},
    )
    dpsi = numeric_jacobian(lambda z: model.psi(frame, Xs, z), Zs)
    Y = model.psi(frame, Xs, Zs)
    dpsib = numeric_jacobian(lambda y: model.psi_bar(frame, Xs, y), Y)
    for name, arr in (("(d psi_x)_zeta", dpsi), ("(d psibar_x)_y", dpsib)):
        vals = np.linalg.norm(arr.reshape(arr.shape[:-2] + (-1,)), axis=-1).max(axis=(0, 1))
        rep.fits.append(decay_fit(f"{name} growth", (0,), radii, vals, 0.0, tol, mode="upper"))
        rep.checks.append(Check(f"sup |{name}|", float(vals.max()), cap))

    geo = composition_geometry(model, frame)
    Zp = np.roll(Zs, 1, axis=0)
    Vf = lambda x: geo.V(x, Zs, Zp)
    for k in range(0, 3):
        vals = _deriv_norm(Vf, Xs, k).max(axis=(0, 1))
        rep.fits.append(decay_fit(f"d_x^{k} V", (k,), radii, vals, -sigma * k, tol,
                                  mode="upper", floor=_floor(1.0, k) if k else 1e-12))

    # growth of V in zeta and zeta' at a fixed radius
    zr = np.geomspace(0.5, 4.0, 6)
    x0 = X[:, n_radii // 2]
    u = ray_directions(dim, 4 if dim == 2 else 2)[0]
    grow = {}
    for which in ("zeta", "zeta_p"):
        vals = []
        for s in zr:
            z = np.broadcast_to(s * u, x0.shape)
            zp = np.broadcast_to(0.5 * u, x0.shape)
            Vv = geo.V(x0, z, zp) if which == "zeta" else geo.V(x0, zp, z)
            vals.append(np.max(np.abs(Vv - np.eye(dim))))
        vals = np.asarray(vals)
        fit = decay_fit(which, (0,), np.arange(1, 7, dtype=float), np.maximum(vals, 1e-300), 0.0, np.inf,
                        mode="upper", floor=1e-12)
        grow[which] = fit.slope if fit.slope is not None else 0.0
    rep.info["kappa_v"] = grow["zeta"]
    rep.info["eps_v"] = grow["zeta_p"]
    rep.info["w_v"] = float(np.max(np.abs(Vf(Xs)))) if Xs.size else 0.0
    return rep


# ---------------------------------------------------------------------------
# report IO


def emit_report(reports, path, overwrite: bool = False, provenance: dict | None = None) -> str:
    """Write reports as JSON plus a CSV of raw samples next to it.

    Returns the CSV path.
    """
    path = os.fspath(path)
    csv_path = os.path.splitext(path)[0] + "_samples.csv"
    for p in (path, csv_path):
        if os.path.exists(p) and not overwrite:
            raise FileExistsError(f"{p} exists; refusing to overwrite")
    reports = list(reports)
    doc = {
        "schema": REPORT_SCHEMA,
        "provenance": provenance or {},
        "reports": [r.to_dict() for r in reports],
        "verdict": "pass" if all(r.verdict for r in reports) else "fail",
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["report", "check", "radius", "value"])
        for i, r in enumerate(reports):
            for f in r.fits:
                for rad, val in f.samples:
                    w.writerow([f"{i}:{r.hypothesis}", f.label, repr(float(rad)), repr(float(val))])
    return csv_path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def load_report(path) -> list[HypothesisReport]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != REPORT_SCHEMA:
        raise ValueError("unknown report schema")
    return [HypothesisReport.from_dict(d) for d in doc["reports"]]

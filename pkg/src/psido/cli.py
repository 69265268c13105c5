"""Command-line entry point.

Every command reads an optional JSON/YAML config, lets flags override it,
validates the merged config against a schema, computes, and only then
writes its outputs.  Each output carries a provenance block with the
resolved config and library versions, enough to replay the run.

Exit codes: 0 success, 1 a verification failed, 2 numerical failure,
3 configuration error.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import warnings

import jsonschema
import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, HypothesisViolation, NumericError, PsidoError
from .geometry import Density, Frame
from .grids import GridFn, GridSpec, SymbolGrid, canonical_cov, load_grid, save_grid, set_threads
from .linearizations import make_model, parallel_transport, upsilon_t

EXIT_OK, EXIT_FAIL, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2, 3

DEFAULTS = {
    "model": {"kind": "euclidean_standard", "dim": 1},
    "frame": None,
    "frames": None,
    "density": "frame_lebesgue",
    "grid": {"L": 8.0, "N": 128},
    "lambda": 0.0,
    "seed": 0,
    "params": {},
    "outputs": {},
}

_VEC = {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 2}
_FRAME = {
    "type": "object",
    "properties": {"base_point": _VEC, "basis": {"type": "array", "items": _VEC}},
    "required": ["base_point"],
    "additionalProperties": False,
}
SCHEMA = {
    "type": "object",
    "properties": {
        "model": {
            "type": "object",
            "properties": {"kind": {"type": "string"}, "dim": {"enum": [1, 2]}},
            "required": ["kind"],
        },
        "frame": {"oneOf": [{"type": "null"}, _FRAME]},
        "frames": {"oneOf": [{"type": "null"}, {"type": "array", "items": _FRAME, "minItems": 2}]},
        "density": {"enum": ["frame_lebesgue", "riemannian"]},
        "grid": {
            "type": "object",
            "properties": {"L": {"type": "number", "exclusiveMinimum": 0},
                           "N": {"type": "integer", "minimum": 8, "multipleOf": 2}},
            "required": ["L", "N"],
            "additionalProperties": False,
        },
        "lambda": {"type": "number", "minimum": 0, "maximum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "params": {"type": "object"},
        "outputs": {"type": "object", "additionalProperties": {"type": "string"}},
    },
    "additionalProperties": False,
}


# ---------------------------------------------------------------------------
# config


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        doc = yaml.safe_load(text) if path.endswith((".yaml", ".yml")) else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    return doc


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then config file, then flags; validated against :data:`SCHEMA`."""
    cfg = _merge(DEFAULTS, load_config(getattr(args, "config", None)))
    flags: dict = {}
    if getattr(args, "model", None):
        flags.setdefault("model", {})["kind"] = args.model
    if getattr(args, "dim", None):
        flags.setdefault("model", {})["dim"] = args.dim
    if getattr(args, "model_sigma", None) is not None:
        flags.setdefault("model", {})["sigma"] = args.model_sigma
    if getattr(args, "frame", None):
        flags["frame"] = {"base_point": _floats(args.frame)}
    if getattr(args, "L", None) is not None:
        flags.setdefault("grid", {})["L"] = args.L
    if getattr(args, "N", None) is not None:
        flags.setdefault("grid", {})["N"] = args.N
    if getattr(args, "lam", None) is not None:
        flags["lambda"] = args.lam
    if getattr(args, "density", None):
        flags["density"] = args.density
    if getattr(args, "seed", None) is not None:
        flags["seed"] = args.seed
    cfg = _merge(cfg, flags)
    if cfg["model"].get("kind") == "hyperbolic_exp" or cfg["model"].get("kind") == "hyperbolic_frame_flat":
        cfg["model"]["dim"] = 2
    cfg["model"].setdefault("dim", 1)
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config at {list(exc.absolute_path)}: {exc.message}") from exc
    return cfg


def build_model(cfg: dict):
    params = dict(cfg["model"])
    return make_model(params.pop("kind"), **params)


def build_frame(model, fdict: dict | None) -> Frame:
    if fdict is None:
        if model.kind == "hyperbolic_frame_flat":
            return model.frame0
        return Frame(model, np.zeros(model.dim))
    try:
        return Frame(model, fdict["base_point"], fdict.get("basis"))
    except PsidoError as exc:
        raise ConfigError(str(exc)) from exc


def build_spec(cfg: dict, lam: float | None = None):
    from .quantize import QuantizationSpec

    model = build_model(cfg)
    frame = build_frame(model, cfg["frame"])
    density = Density(cfg["density"], frame)
    return QuantizationSpec(model, frame, density, cfg["lambda"] if lam is None else lam)


def provenance(command: str, cfg: dict, argv: list[str]) -> dict:
    import scipy

    return {
        "command": command,
        "argv": list(argv),
        "config": cfg,
        "psido_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
    }


# ---------------------------------------------------------------------------
# output handling


class Outputs:
    """Collects outputs and writes them only after the computation succeeds."""

    def __init__(self, overwrite: bool):
        self.overwrite = overwrite
        self.pending: list = []

    def claim(self, path: str | None, what: str) -> str:
        if not path:
            raise ConfigError(f"missing output path for {what}")
        if os.path.exists(path) and not self.overwrite:
            raise ConfigError(f"{path} exists; pass --overwrite to replace it")
        return path

    def grid(self, obj, path, prov):
        self.pending.append(("grid", obj, path, prov))

    def json(self, doc, path):
        self.pending.append(("json", doc, path, None))

    def text(self, text, path):
        self.pending.append(("text", text, path, None))

    def flush(self):
        written = []
        try:
            for kind, obj, path, prov in self.pending:
                if kind == "grid":
                    save_grid(obj, path, overwrite=True, extra={"provenance": prov})
                elif kind == "text":
                    with open(path, "w") as fh:
                        fh.write(obj)
                else:
                    with open(path, "w") as fh:
                        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
                        fh.write("\n")
                written.append(path)
        except BaseException:
            for p in written:
                os.remove(p)
            raise
        return written


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _load(path, kind, model=None):
    if not path:
        raise ConfigError(f"missing input {kind}")
    try:
        obj = load_grid(path, model)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read {kind} {path}: {exc}") from exc
    return obj


# ---------------------------------------------------------------------------
# presets for the sample command

FUNCTION_PRESETS = {
    "gaussian": lambda x: np.exp(-np.pi * np.sum(x * x, axis=-1)),
    "wide_gaussian": lambda x: np.exp(-np.pi * np.sum(x * x, axis=-1) / 4),
}
SYMBOL_PRESETS = {
    "one": lambda x, t: np.ones(np.broadcast_shapes(x.shape, t.shape)[:-1]),
    "derivative": lambda x, t: 2j * np.pi * np.broadcast_to(t, np.broadcast_shapes(x.shape, t.shape))[..., 0],
    "gaussian": lambda x, t: np.exp(-np.pi * (np.sum(x * x, -1) + np.sum(t * t, -1))),
    "weyl_gaussian": lambda x, t: np.exp(-np.pi * (np.sum(x * x, -1) / 2 + 2 * np.sum(t * t, -1))),
}


# ---------------------------------------------------------------------------
# commands


def cmd_sample(args, cfg, out: Outputs, prov):
    n, L, N = cfg["model"]["dim"], cfg["grid"]["L"], cfg["grid"]["N"]
    base = GridSpec(n, L, N)
    path = out.claim(args.out, "sample")
    if args.what == "function":
        if args.preset not in FUNCTION_PRESETS:
            raise ConfigError(f"unknown function preset {args.preset!r}")
        out.grid(GridFn.from_callable(base, FUNCTION_PRESETS[args.preset]), path, prov)
    else:
        if args.preset not in SYMBOL_PRESETS:
            raise ConfigError(f"unknown symbol preset {args.preset!r}")
        cov = canonical_cov(base, cfg["lambda"])
        out.grid(SymbolGrid.from_callable(SYMBOL_PRESETS[args.preset], base, cov), path, prov)
    return EXIT_OK


def cmd_quantize(args, cfg, out: Outputs, prov):
    from .quantize import apply_operator, kernel_from_symbol, symbol_from_kernel

    spec = build_spec(cfg)
    if args.action == "apply":
        path = out.claim(args.out, "output function")
        a = _load(args.symbol, "symbol")
        v = _load(args.input, "function")
        out.grid(apply_operator(spec, a, v, route=args.route), path, prov)
    elif args.action == "kernel":
        path = out.claim(args.out, "kernel")
        a = _load(args.symbol, "symbol")
        out.grid(kernel_from_symbol(spec, a), path, prov)
    else:
        path = out.claim(args.out, "symbol")
        K = _load(args.kernel, "kernel", spec.model)
        out.grid(symbol_from_kernel(spec, K), path, prov)
    return EXIT_OK


def cmd_compose(args, cfg, out: Outputs, prov):
    from .compose import compose_kernels, composition_expansion, moyal_product

    spec = build_spec(cfg)
    path = out.claim(args.out, "composition")
    if args.mode == "kernel":
        KA = _load(args.a, "kernel", spec.model)
        KB = _load(args.b, "kernel", spec.model)
        out.grid(compose_kernels(KA, KB, spec.density, spec.frame), path, prov)
        return EXIT_OK
    a = _load(args.a, "symbol")
    b = _load(args.b, "symbol")
    if args.mode == "moyal":
        out.grid(moyal_product(spec, a, b, "symmetrized" if args.symmetrized else "lambda"), path, prov)
        return EXIT_OK
    report_path = out.claim(args.report, "expansion report")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        exp = composition_expansion(spec, a, b, args.order)
    oracle = moyal_product(spec, a, b)
    err = float(np.linalg.norm(exp.data - oracle.data) / np.linalg.norm(oracle.data))
    out.grid(exp, path, prov)
    out.json({"provenance": prov, "order": args.order, "relative_error_vs_kernel_oracle": err}, report_path)
    return EXIT_OK


def cmd_convert(args, cfg, out: Outputs, prov):
    from .quantize import lambda_convert

    spec = build_spec(cfg)
    path = out.claim(args.out, "converted symbol")
    a = _load(args.symbol, "symbol")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out.grid(lambda_convert(spec, a, args.lam_to, args.order), path, prov)
    return EXIT_OK


def cmd_transport(args, cfg, out: Outputs, prov):
    spec_model = build_model(cfg)
    frame = build_frame(spec_model, cfg["frame"])
    path = out.claim(args.out, "transport table")
    n = spec_model.dim
    xi = np.asarray(_floats(args.xi) if args.xi else [1.0] + [0.0] * (n - 1))
    if xi.size != n:
        raise ConfigError(f"--xi needs {n} components")
    base = GridSpec(n, cfg["grid"]["L"], cfg["grid"]["N"])
    X = base.points()
    XI = np.broadcast_to(xi, X.shape)
    P = parallel_transport(spec_model, frame, X, XI).matrix
    rows = []
    for t in (0.25, 0.5, 1.0):
        Pt = parallel_transport(spec_model, frame, X, t * XI).matrix
        ups = upsilon_t(spec_model, frame, t, X, XI)[1] if spec_model.h_psi_declared(frame) or t == 1.0 else None
        res = None if ups is None else float(np.max(np.abs(np.einsum("...ij,...j->...i", Pt, XI) - ups)))
        rows.append({"t": t, "max_residual_upsilon": res})
    doc = {
        "provenance": prov,
        "xi": xi.tolist(),
        "points": X.tolist(),
        "matrices": P.tolist(),
        "identity_checks": rows,
    }
    out.json(doc, path)
    return EXIT_OK


def cmd_verify(args, cfg, out: Outputs, prov):
    from .verify import (verify_bounded_geometry, verify_c_sigma, verify_h_v,
                         verify_linearization_class)

    model = build_model(cfg)
    frame = build_frame(model, cfg["frame"])
    path = out.claim(args.out, "report")
    csv_path = out.claim(os.path.splitext(path)[0] + "_samples.csv", "sample csv")
    suites = args.suite.split(",")
    unknown = set(suites) - {"bounded", "linearization", "h_v", "c_sigma", "all"}
    if unknown:
        raise ConfigError(f"unknown suites {sorted(unknown)}")
    if "all" in suites:
        suites = ["bounded", "linearization", "h_v", "c_sigma"]
    orders = [int(o) for o in _floats(args.orders)] if args.orders else None
    reports = []
    for s in suites:
        if s == "bounded":
            if cfg["frames"]:
                frames = [build_frame(model, f) for f in cfg["frames"]]
            else:
                shifts = np.eye(model.dim)
                frames = [frame] + [build_frame(model, {"base_point": (frame.base_point + e).tolist()})
                                    for e in shifts]
            reports.append(verify_bounded_geometry(model, frames, args.sigma, orders=orders))
        elif s == "linearization":
            reports.append(verify_linearization_class(model, frame, args.sigma))
        elif s == "h_v":
            reports.append(verify_h_v(model, frame, args.sigma, seed=cfg["seed"],
                                      delta_min=args.delta_min))
        else:
            reports.append(verify_c_sigma(model, frame, args.sigma))
    _pending_report(out, reports, path, csv_path, prov)
    return EXIT_OK if all(r.verdict for r in reports) else EXIT_FAIL


def _pending_report(out, reports, path, csv_path, prov):
    import tempfile

    from .verify import emit_report

    with tempfile.TemporaryDirectory() as tmp:
        tmp_json = os.path.join(tmp, "r.json")
        tmp_csv = emit_report(reports, tmp_json, provenance=prov)
        with open(tmp_json) as fh:
            doc = json.load(fh)
        with open(tmp_csv) as fh:
            csv_text = fh.read()
    out.json(doc, path)
    out.text(csv_text, csv_path)


def cmd_report(args, cfg, out: Outputs, prov):
    from .verify import REPORT_SCHEMA, load_report

    path = out.claim(args.out, "merged report")
    reports = []
    for p in args.inputs:
        try:
            reports.extend(load_report(p))
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read report {p}: {exc}") from exc
    doc = {
        "schema": REPORT_SCHEMA,
        "provenance": prov,
        "sources": list(args.inputs),
        "reports": [r.to_dict() for r in reports],
        "verdict": "pass" if all(r.verdict for r in reports) else "fail",
    }
    out.json(doc, path)
    return EXIT_OK if all(r.verdict for r in reports) else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON or YAML config file")
    p.add_argument("--model", help="model kind")
    p.add_argument("--dim", type=int, choices=(1, 2))
    p.add_argument("--model-sigma", type=float, dest="model_sigma", help="decay type of the deformed model")
    p.add_argument("--frame", help="frame base point, comma separated")
    p.add_argument("--L", type=float, help="half-width of the base box")
    p.add_argument("--N", type=int, help="points per axis")
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--density", choices=("frame_lebesgue", "riemannian"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output path")
    p.add_argument("--overwrite", action="store_true", help="replace existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psido", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, help="worker count (default: PSIDO_THREADS or all cores)")
    parser.add_argument("--version", action="version", version=f"psido {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-geometry", help="run hypothesis verifiers")
    _common(p)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--orders", help="derivative orders for transition fits, e.g. 2,3")
    p.add_argument("--suite", default="all", help="bounded,linearization,h_v,c_sigma or all")
    p.add_argument("--delta-min", type=float, default=0.25, dest="delta_min")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("quantize", help="apply an operator, build a kernel or extract a symbol")
    p.add_argument("action", choices=("apply", "kernel", "symbol"))
    _common(p)
    p.add_argument("--symbol")
    p.add_argument("--input")
    p.add_argument("--kernel")
    p.add_argument("--route", default="auto", choices=("auto", "direct", "kernel"))
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("compose", help="kernel composition, Moyal product or expansion")
    _common(p)
    p.add_argument("--mode", default="moyal", choices=("kernel", "moyal", "expansion"))
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--order", type=int, default=1)
    p.add_argument("--symmetrized", action="store_true")
    p.add_argument("--report", help="JSON error report for --mode expansion")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("transport", help="tabulate transport matrices")
    _common(p)
    p.add_argument("--xi", help="transported vector, comma separated")
    p.set_defaults(func=cmd_transport)

    p = sub.add_parser("convert-lambda", help="change the quantization parameter of a symbol")
    _common(p)
    p.add_argument("--symbol", required=True)
    p.add_argument("--to", type=float, required=True, dest="lam_to")
    p.add_argument("--order", type=int, default=2)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("report", help="merge verification reports")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sample", help="write a preset function or symbol grid")
    p.add_argument("what", choices=("function", "symbol"))
    p.add_argument("--preset", required=True)
    _common(p)
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    threads = args.threads
    if threads is None and os.environ.get("PSIDO_THREADS"):
        try:
            threads = int(os.environ["PSIDO_THREADS"])
        except ValueError:
            print("psido: PSIDO_THREADS must be an integer", file=sys.stderr)
            return EXIT_CONFIG
    set_threads(threads)
    out = Outputs(getattr(args, "overwrite", False))
    try:
        cfg = resolve_config(args) if args.command != "report" else {"inputs": list(args.inputs)}
        prov = provenance(args.command, cfg, argv)
        code = args.func(args, cfg, out, prov)
        out.flush()
    except (ConfigError, HypothesisViolation, FileNotFoundError) as exc:
        print(f"psido: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"psido: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PsidoError as exc:
        print(f"psido: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"psido: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return code


if __name__ == "__main__":
    sys.exit(main())

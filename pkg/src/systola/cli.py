"""Command-line front end: ``systola <subcommand> ...``.

Exit codes: 0 success, 1 an inequality failed its slack check, 2 bad input,
3 a solver failed.  Errors are printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import InputError, SolverError
from .lattice import (Lattice, critical_lattice, hermite_ratio, hexagonal_lattice, is_eutactic, is_perfect,
                      shortest_vectors, square_lattice)
from .mesh import Mesh, bump_factor, conformal_scale, flat_torus_mesh, metric_perturbation, normalize_volume

log = logging.getLogger("systola")

EXIT_OK, EXIT_SLACK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2, 3
MESH_INEQUALITIES = ("10", "10c", "23", "23c", "28")


# -- helpers -------------------------------------------------------------------

def _schema() -> dict:
    text = resources.files("systola").joinpath("schemas/report.schema.json").read_text()
    return json.loads(text)


def validate_report(obj: dict, kind: str = "report"):
    schema = _schema()
    jsonschema.validate(obj, {**schema, "$ref": f"#/$defs/{kind}"})


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from None


def _dump(obj, fh=None, indent=2):
    text = json.dumps(_jsonable(obj), indent=indent, allow_nan=False)
    if fh is None:
        print(text)
    else:
        fh.write(text + "\n")


def _parse_p(text):
    if text is None:
        return None
    if str(text).lower() in ("inf", "infinity"):
        return math.inf
    try:
        return float(text)
    except ValueError:
        raise InputError(f"bad exponent {text!r}") from None


def _pjson(p):
    return None if p is None else ("inf" if math.isinf(p) else p)


NAMED_LATTICES = {
    "square": lambda: square_lattice(2),
    "hexagonal": hexagonal_lattice,
    "A2": lambda: critical_lattice(2),
    "A3": lambda: critical_lattice(3),
    "D4": lambda: critical_lattice(4),
    "Z3": lambda: square_lattice(3),
}


def load_lattice(spec) -> Lattice:
    """A named lattice, a Gram matrix, or a JSON file holding {"gram": ...}."""
    if isinstance(spec, Lattice):
        return spec
    if isinstance(spec, str) and spec in NAMED_LATTICES:
        return NAMED_LATTICES[spec]()
    if isinstance(spec, dict):
        spec = spec.get("gram")
    elif isinstance(spec, (str, os.PathLike)):
        spec = _read_json(spec).get("gram")
    if spec is None:
        raise InputError('lattice file needs a "gram" entry')
    return Lattice.from_gram(np.array(spec, dtype=float))


def _gram_fractions(path):
    data = _read_json(path)
    gram = data.get("gram")
    if gram is None:
        raise InputError('lattice file needs a "gram" entry')
    return [[Fraction(str(x)) for x in row] for row in gram]


def build_mesh(source: dict, k: int) -> Mesh:
    """Mesh from a sweep source: {"lattice", "perturbation", "amplitude", "normalize"}."""
    lat = load_lattice(source.get("lattice", "hexagonal"))
    mesh = flat_torus_mesh(lat, k)
    kind = source.get("perturbation", "none")
    amp = float(source.get("amplitude", 0.2))
    if kind == "bump":
        mesh = conformal_scale(mesh, bump_factor(mesh, amplitude=amp))
    elif kind == "stretch":
        s = (1.0 + amp) ** 2
        mesh = metric_perturbation(mesh, lambda x: np.diag([s] + [1.0] * (lat.dim - 1)))
    elif kind != "none":
        raise InputError(f"unknown perturbation {kind!r}")
    if source.get("normalize", True):
        mesh = normalize_volume(mesh)
    return mesh


def _threads() -> int:
    raw = os.environ.get("SYSTOLA_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"SYSTOLA_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise InputError("SYSTOLA_THREADS must be at least 1")
    return n


def _load_config(args) -> dict:
    cfg = _read_json(args.config) if args.config else {}
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object")
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _verify_config(cfg: dict):
    from .systolic import VerifyConfig

    tol = dict(cfg.get("tolerances", {}))
    if "seed" in cfg:
        tol["seed"] = int(cfg["seed"])
    try:
        return VerifyConfig.from_dict(tol)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad tolerances: {exc}") from None


# -- subcommands ---------------------------------------------------------------

def cmd_lattice(args, cfg):
    lat = load_lattice(args.gram)
    if args.op == "lambda1":
        sv = shortest_vectors(lat)
        out = {"lambda1": sv.length, "kissing_pairs": len(sv.vectors),
               "vectors": [[int(x) for x in v] for v in sv.vectors]}
    elif args.op == "ratio":
        out = {"hermite_ratio": hermite_ratio(lat)}
    elif args.op == "perfect":
        out = {"perfect": is_perfect(lat)}
    else:
        e = is_eutactic(lat)
        out = {"eutactic": "indeterminate" if e is None else e}
    _dump(out)
    return EXIT_OK


def cmd_norm(args, cfg):
    from .normed_space import NormBody, john_ellipsoid, rank1_decomposition

    body = NormBody.from_json(_read_json(args.inp))
    ell = john_ellipsoid(body)
    if args.op == "john":
        _dump(ell.to_json())
    else:
        dec = rank1_decomposition(body, ell)
        out = dec.to_json()
        out["reconstruction_error"] = dec.reconstruction_error()
        _dump(out)
    return EXIT_OK


def cmd_mesh(args, cfg):
    source = {"lattice": args.gram or args.lattice, "perturbation": args.perturb,
              "amplitude": args.amplitude, "normalize": args.normalize}
    mesh = build_mesh(source, args.refine)
    mesh.save(args.out)
    _dump({"out": str(args.out), "vertices": mesh.n_vertices, "edges": mesh.n_edges,
           "simplices": mesh.n_simplices, "name": mesh.name})
    return EXIT_OK


def cmd_forms(args, cfg):
    from .cohomology import (CohomologyClass, cohomology_norm, harmonic_representative, minimizer_for,
                             norm_profile)

    mesh = Mesh.load(args.mesh)
    try:
        coeffs = [float(x) for x in args.cls.split(",")]
    except ValueError:
        raise InputError(f"bad class {args.cls!r}") from None
    cls = CohomologyClass.from_coefficients(mesh, coeffs)
    p = _parse_p(args.p)
    if args.op == "harmonic":
        _dump(harmonic_representative(cls, mesh).to_json())
    elif args.op == "min":
        _dump(minimizer_for(cls, 2.0 if p is None else p, mesh).to_json())
    elif args.op == "norm":
        p = 2.0 if p is None else p
        _dump({"p": _pjson(p), "norm": cohomology_norm(cls, p, mesh)})
    else:
        ps = cfg.get("exponents", [2, 3, 4, 8, 16, "inf"])
        _dump(norm_profile(cls, mesh, [_parse_p(x) for x in ps]).to_json())
    return EXIT_OK


def cmd_aj(args, cfg):
    from . import plots
    from .abel_jacobi import (build_bi_map, coarea_check, degree, harmonic_abel_jacobi, jacobian_field,
                              jensen_chain_check, equality_signature)

    mesh = Mesh.load(args.mesh)
    vcfg = _verify_config(cfg)
    p = _parse_p(args.p)
    if args.op == "chain":
        con = build_bi_map(mesh, 2.0 if p is None else p, vcfg.n_pairs)
        rep = jensen_chain_check(mesh, con.decomposition, con.minimizers, con.p)
        rep = {k: v for k, v in rep.items() if k != "per_simplex"}
        _dump(_jsonable(rep))
        return EXIT_OK
    if p is None:
        fmap = harmonic_abel_jacobi(mesh)
        sig = None
    else:
        con = build_bi_map(mesh, p, vcfg.n_pairs)
        fmap = con.map
        sig = equality_signature(con)
    if args.op == "build":
        out = {"map": fmap.name, "target_gram": np.asarray(fmap.metric).tolist(),
               "integrality_defect": float(fmap.integrality_defect)}
        if sig:
            out["equality_signature"] = sig
        _dump(out)
    elif args.op == "degree":
        _dump({"degree": degree(fmap, vcfg.degree_values, vcfg.seed)})
    elif args.op == "coarea":
        _dump(coarea_check(fmap, int(cfg.get("samples", 10_000)), vcfg.seed))
    else:
        jac = jacobian_field(fmap, "full" if mesh.dim == fmap.target_dim else "perp")
        out = jac.to_json()
        if sig:
            out["equality_signature"] = sig
        _dump(out)
        if args.out:
            base = Path(args.out)
            with open(base.with_suffix(".json"), "w") as fh:
                _dump(out, fh)
            with open(base.with_suffix(".csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["simplex", "volume", "jac"])
                for i, (v, j) in enumerate(zip(jac.volumes, jac.values)):
                    w.writerow([i, repr(float(v)), repr(float(j))])
            plots.jacobian_figure(mesh, jac.values, base.with_suffix(".png"), title=f"jac ({fmap.name})")
    return EXIT_OK


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else ("-inf" if x < 0 else "nan"))
    if isinstance(obj, Fraction):
        return str(obj)
    return obj


def _emit_report(report, out_path, plot=True):
    from . import plots

    obj = _jsonable(report.to_json())
    validate_report(obj)
    _dump(obj)
    if out_path:
        with open(out_path, "w") as fh:
            _dump(obj, fh)
        if plot:
            plots.report_figure(obj, Path(out_path).with_suffix(".png"))
    return EXIT_OK if report.holds else EXIT_SLACK


def cmd_verify(args, cfg):
    from .systolic import verify

    mesh = Mesh.load(args.mesh)
    report = verify(mesh, args.ineq, _parse_p(args.p), _verify_config(cfg),
                    provenance={"source": str(args.mesh)})
    return _emit_report(report, args.out, plot=not args.no_plot)


def cmd_fixture(args, cfg):
    from .fixtures import HeisenbergFixture, ProductFixture
    from .systolic import verify

    gram = _gram_fractions(args.gram) if args.gram else [[Fraction(1), Fraction(1, 2)], [Fraction(1, 2), Fraction(1)]]
    try:
        fiber = Fraction(args.fiber)
    except (ValueError, ZeroDivisionError):
        raise InputError(f"bad fiber size {args.fiber!r}") from None
    if args.kind == "heisenberg":
        fx = HeisenbergFixture.make(gram, fiber)
        ineq = args.ineq or "11"
    else:
        fx = ProductFixture.make(gram, fiber, args.fiber_dim)
        ineq = args.ineq or "eq12"
    report = verify(fx, ineq, None, _verify_config(cfg))
    return _emit_report(report, args.out, plot=not args.no_plot)


# -- sweep ---------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    source: dict
    inequalities: list
    exponents: list
    refinements: list
    tolerances: dict = field(default_factory=dict)
    out_dir: str = "sweep-out"
    seed: int = 0

    @classmethod
    def from_dict(cls, cfg: dict, out_dir=None) -> "ExperimentConfig":
        ineqs = list(cfg.get("inequalities", []))
        if not ineqs:
            raise InputError("the inequality list is empty")
        bad = [i for i in ineqs if str(i) not in MESH_INEQUALITIES]
        if bad:
            raise InputError(f"sweeps run mesh inequalities {MESH_INEQUALITIES}; got {bad}")
        refs = [int(k) for k in cfg.get("refinements", [])]
        if not refs or min(refs) < 1:
            raise InputError("refinements must be a nonempty list of positive integers")
        source = dict(cfg.get("mesh", {}))
        lat = source.get("lattice", "hexagonal")
        if isinstance(lat, str) and lat not in NAMED_LATTICES and not Path(lat).exists():
            raise InputError(f"lattice file {lat} does not exist")
        exps = [None if x is None else _pjson(_parse_p(x)) for x in cfg.get("exponents", [None])]
        tol = dict(cfg.get("tolerances", {}))
        for name, v in tol.items():
            if isinstance(v, (int, float)) and name != "seed" and v <= 0:
                raise InputError(f"tolerance {name} must be positive")
        return cls(source, [str(i) for i in ineqs], exps, refs, tol,
                   str(out_dir or cfg.get("out_dir", "sweep-out")), int(cfg.get("seed", 0)))


def _cells(exp: ExperimentConfig):
    cells = []
    for k in exp.refinements:
        for ineq in exp.inequalities:
            ps = exp.exponents if ineq in ("23",) else [None]
            for p in ps:
                cells.append({"refinement": k, "inequality": ineq, "p": p})
    return cells


def _run_refinement(exp: ExperimentConfig, k: int, cells: list) -> list:
    from .systolic import MeshAnalysis, VerifyConfig, verify

    vcfg = VerifyConfig.from_dict({**exp.tolerances, "seed": exp.seed})
    out = []
    try:
        mesh = build_mesh(exp.source, k)
        an = MeshAnalysis(mesh, vcfg)
    except Exception as exc:  # noqa: BLE001
        return [_error_record(c, exc) for c in cells]
    for c in cells:
        try:
            rep = verify(mesh, c["inequality"], _parse_p(c["p"]), vcfg, analysis=an,
                         provenance={"source": mesh.name, "refinement": k})
            out.append({"cell": c, "status": "ok", "report": _jsonable(rep.to_json())})
        except Exception as exc:  # noqa: BLE001
            out.append(_error_record(c, exc))
    return out


def _error_record(cell, exc):
    return {"cell": cell, "status": "error", "error": _error_obj(exc, cell)}


def _error_obj(exc, cell=None):
    code = _exit_code(exc)
    return {"type": type(exc).__name__, "message": str(exc), "exit_code": code, "cell": cell}


def run_experiment(exp: ExperimentConfig, threads: int = 1) -> tuple[list, int]:
    """Run every cell; returns the records in config order and the exit code."""
    from . import plots

    cells = _cells(exp)
    groups = {}
    for c in cells:
        groups.setdefault(c["refinement"], []).append(c)
    if threads > 1 and len(groups) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(groups))) as pool:
            futs = {k: pool.submit(_run_refinement, exp, k, cs) for k, cs in groups.items()}
            by_k = {k: f.result() for k, f in futs.items()}
    else:
        by_k = {k: _run_refinement(exp, k, cs) for k, cs in groups.items()}
    records = [r for k in groups for r in by_k[k]]

    out = Path(exp.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    with open(out / "reports.jsonl", "w") as fh:
        for r in records:
            validate_report(r, "cell")
            fh.write(json.dumps(r, allow_nan=False) + "\n")
            rep = r.get("report", {})
            rows.append({**r["cell"], "p": "" if r["cell"]["p"] is None else r["cell"]["p"],
                         "status": r["status"], "lhs": rep.get("lhs", ""), "rhs": rep.get("rhs", ""),
                         "ratio": rep.get("ratio", ""), "slack": rep.get("slack", ""),
                         "holds": rep.get("holds", ""), "equality_flag": rep.get("equality_flag", "")})
    fields = ["refinement", "inequality", "p", "status", "lhs", "rhs", "ratio", "slack", "holds", "equality_flag"]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    plots.sweep_figure(rows, out / "ratios.png")

    codes = [r["error"]["exit_code"] for r in records if r["status"] == "error"]
    if codes:
        return records, max(codes)
    if any(not r["report"]["holds"] for r in records):
        return records, EXIT_SLACK
    return records, EXIT_OK


def cmd_sweep(args, cfg):
    exp = ExperimentConfig.from_dict(cfg, out_dir=args.out)
    records, code = run_experiment(exp, _threads())
    failed = [r for r in records if r["status"] == "error"]
    for r in failed:
        _dump({"error": r["error"]}, sys.stderr, indent=None)
    _dump({"out_dir": exp.out_dir, "cells": len(records), "errors": len(failed), "exit_code": code})
    return code


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (tolerances, sweep grid)")
    common.add_argument("--seed", type=int, help="seed for sampled regular values")

    ap = argparse.ArgumentParser(prog="systola", description="Systolic inequalities on piecewise-flat tori.",
                                 parents=[common])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("lattice", parents=[common], help="lattice invariants")
    s.add_argument("--gram", required=True, help="JSON file with a gram entry, or a lattice name")
    s.add_argument("--op", choices=["lambda1", "ratio", "perfect", "eutactic"], required=True)

    s = sub.add_parser("norm", parents=[common], help="John ellipsoid and rank-1 decomposition")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--op", choices=["john", "decompose"], required=True)

    s = sub.add_parser("mesh", parents=[common], help="build a flat-torus mesh")
    s.add_argument("--make", choices=["flat-torus"], default="flat-torus")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--gram", help="JSON file with a gram entry")
    g.add_argument("--lattice", choices=sorted(NAMED_LATTICES))
    s.add_argument("--refine", type=int, required=True)
    s.add_argument("--perturb", choices=["none", "bump", "stretch"], default="none")
    s.add_argument("--amplitude", type=float, default=0.2)
    s.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("forms", parents=[common], help="minimizing and harmonic forms")
    s.add_argument("--mesh", required=True)
    s.add_argument("--class", dest="cls", required=True, help='coefficients, e.g. "1,0"')
    s.add_argument("--p")
    s.add_argument("--op", choices=["min", "harmonic", "norm", "profile"], required=True)

    s = sub.add_parser("aj", parents=[common], help="Abel-Jacobi and BI maps")
    s.add_argument("--mesh", required=True)
    s.add_argument("--op", choices=["build", "jacobian", "coarea", "degree", "chain"], required=True)
    s.add_argument("--p", help="BI exponent; omit for the harmonic Abel-Jacobi map")
    s.add_argument("--out", help="basename for the jacobian JSON/CSV/PNG")

    s = sub.add_parser("verify", parents=[common], help="evaluate one inequality on a mesh")
    s.add_argument("--mesh", required=True)
    s.add_argument("--ineq", choices=list(MESH_INEQUALITIES) + ["11"], required=True)
    s.add_argument("--p")
    s.add_argument("--out")
    s.add_argument("--no-plot", action="store_true")

    s = sub.add_parser("fixture", parents=[common], help="closed-form fixtures")
    s.add_argument("--kind", choices=["heisenberg", "product"], required=True)
    s.add_argument("--gram", help="base lattice JSON (rational entries allowed as strings)")
    s.add_argument("--fiber", default="1", help="fiber length t or fiber volume v, e.g. 1/2")
    s.add_argument("--fiber-dim", type=int, default=2)
    s.add_argument("--ineq", choices=["11", "eq12", "23"])
    s.add_argument("--out")
    s.add_argument("--no-plot", action="store_true")

    s = sub.add_parser("sweep", parents=[common], help="batch over refinements, inequalities, exponents")
    s.add_argument("--out", help="output directory (overrides out_dir in the config)")
    return ap


COMMANDS = {"lattice": cmd_lattice, "norm": cmd_norm, "mesh": cmd_mesh, "forms": cmd_forms, "aj": cmd_aj,
            "verify": cmd_verify, "fixture": cmd_fixture, "sweep": cmd_sweep}


def _exit_code(exc) -> int:
    if isinstance(exc, SolverError):
        return EXIT_SOLVER
    if isinstance(exc, (InputError, ValueError, KeyError, TypeError, OSError, jsonschema.ValidationError)):
        return EXIT_INPUT
    return EXIT_SOLVER


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except Exception as exc:  # noqa: BLE001
        err = _error_obj(exc)
        _dump({"error": err}, sys.stderr, indent=None)
        log.debug("failure", exc_info=True)
        return err["exit_code"]


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: JSON experiment configs in, JSON and CSV reports out.

Exit codes: 0 when every check in the experiment passed, 1 when a
mathematical check failed, 2 for configuration or numerical errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Optional

import jsonschema
import numpy as np

from . import ball, fem2d, flows, rearrange
from . import disk_spectral as ds
from .errors import RobinShapeError
from .sources import RadialSource

COMMANDS = ("stability", "thresholds", "modes", "translate-check", "fem-compare",
            "counterexample", "rearrange-check", "insulation", "sweep")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NUMLIST = {"type": "array", "items": _NUM, "minItems": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "source": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["constant", "gaussian", "polynomial", "tabulated"]},
                "params": {"type": "object"},
                "n": {"type": "integer", "minimum": 2},
                "floor": {"type": "number", "minimum": 0},
                "r_max": _POS,
            },
        },
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 2},
                "R": _POS,
                "beta": {"oneOf": [_POS, {"const": "dirichlet"}]},
            },
        },
        "perturbation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["translation", "star-mode"]},
                "direction": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                "k": {"type": "integer", "minimum": 1},
                "amplitude": _NUM,
            },
        },
        "domain": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["disk", "ellipse", "fourier"]},
                "R": _POS,
                "center": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                "a": _POS,
                "b": _POS,
                "cos": {"type": "object", "additionalProperties": _NUM},
                "sin": {"type": "object", "additionalProperties": _NUM},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "K": {"type": "integer", "minimum": 1},
                "M": {"type": "integer", "minimum": 16},
                "h": _POS,
                "t": _POS,
                "dx": _POS,
                "seed": {"type": "integer"},
                "n_profiles": {"type": "integer", "minimum": 1},
                "m": _POS,
                "max_l": {"type": "integer", "minimum": 1},
                "tolerance": _POS,
            },
        },
        "counterexample": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"eps": _POS, "beta": _POS},
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"beta": _NUMLIST, "delta": _NUMLIST, "R": _NUMLIST},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"report": {"type": "string"}, "csv": {"type": "string"}},
        },
    },
}


class ConfigError(Exception):
    """Malformed or inconsistent configuration (exit code 2)."""


# -- config handling ------------------------------------------------------------------

def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    validate_config(cfg)
    return cfg


def validate_config(cfg: Any):
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        pointer = "/" + "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(f"config field {pointer}: {exc.message}")


def apply_shortcuts(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = json.loads(json.dumps(cfg))  # deep copy
    prob = cfg.setdefault("problem", {})
    if args.n is not None:
        prob["n"] = args.n
        if "source" in cfg:
            cfg["source"]["n"] = args.n
    if args.r_ball is not None:
        prob["R"] = args.r_ball
    if args.beta is not None:
        prob["beta"] = args.beta
        cfg.setdefault("counterexample", {})["beta"] = args.beta
    if args.eps is not None:
        cfg.setdefault("counterexample", {})["eps"] = args.eps
    if args.delta is not None:
        cfg["source"] = {"kind": "gaussian", "params": {"delta": args.delta},
                         "n": prob.get("n", 2)}
    if args.mode_l is not None:
        cfg.setdefault("solver", {})["max_l"] = args.mode_l
    validate_config(cfg)
    return cfg


def make_source(cfg: dict) -> RadialSource:
    spec = dict(cfg.get("source", {"kind": "constant", "params": {"c": 1.0}}))
    spec.setdefault("n", cfg.get("problem", {}).get("n", 2))
    return RadialSource.from_spec(spec)


def make_problem(cfg: dict) -> ball.BallProblem:
    p = cfg.get("problem", {})
    beta = p.get("beta", 1.0)
    n, R = int(p.get("n", 2)), float(p.get("R", 1.0))
    if beta == "dirichlet":
        return ball.BallProblem.dirichlet(n, R)
    return ball.BallProblem.robin(n, R, beta)


def make_domain(cfg: dict) -> fem2d.StarDomain:
    d = cfg.get("domain", {"kind": "disk"})
    if d["kind"] == "disk":
        return fem2d.StarDomain.disk(d.get("R", 1.0), center=tuple(d.get("center", (0.0, 0.0))))
    if d["kind"] == "ellipse":
        if "a" not in d or "b" not in d:
            raise ConfigError("config field /domain: ellipse needs 'a' and 'b'")
        return fem2d.StarDomain.ellipse(d["a"], d["b"])
    return fem2d.StarDomain.fourier(d.get("R", 1.0), {int(k): v for k, v in d.get("cos", {}).items()},
                                    {int(k): v for k, v in d.get("sin", {}).items()})


def spectral_config(cfg: dict) -> ds.SpectralConfig:
    s = cfg.get("solver", {})
    return ds.SpectralConfig(K=int(s.get("K", 64)), M=int(s.get("M", 512)))


# -- output ---------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_atomic(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _check(name: str, ok: bool, **detail) -> dict:
    return {"name": name, "passed": bool(ok), **detail}


# -- commands -------------------------------------------------------------------------

def cmd_stability(cfg: dict) -> dict:
    p, src = make_problem(cfg), make_source(cfg)
    if not p.is_robin:
        verdict = ball.dirichlet_stability(src, p.R)
        return {"result": {"dirichlet_verdict": verdict}, "verdict": verdict, "checks": []}
    rep = ball.stability_report(p, src)
    return {"result": rep.to_json(), "verdict": rep.summary, "checks": []}


def cmd_thresholds(cfg: dict) -> dict:
    p, src = make_problem(cfg), make_source(cfg)
    th = ball.beta_thresholds(src, p.n, p.R)
    A0, A1, A2 = ball.abc_decomposition(ball.BallProblem.robin(p.n, p.R, 1.0), src)
    res = {"A0": A0, "A1": A1, "A2": A2, "window": None if th is None else {
        "beta1": th.beta1, "beta2": th.beta2, "discriminant": th.discriminant, "underflow": th.underflow}}
    checks = []
    if th is not None:
        mid = 0.5 * (th.beta1 + th.beta2)
        cls = ball.classify(src, p.n, p.R, mid)
        checks.append(_check("midpoint-unstable", cls.verdict == "unstable", beta=mid, clause=cls.clause))
    verdict = "stable for every beta" if th is None else "instability window"
    return {"result": res, "verdict": verdict, "checks": checks}


def cmd_modes(cfg: dict) -> dict:
    p, src = make_problem(cfg), make_source(cfg)
    L = int(cfg.get("solver", {}).get("max_l", 4))
    rows = [ball.mode_second_variation(p, src, l) for l in range(1, L + 1)]
    lhs = ball.stability_lhs(p, src)
    q1 = rows[0].Q_l
    scale = max(abs(q1), abs(lhs) * p.R / (1 + p.beta * p.R), src.ball_mean(p.R).fbar ** 2, 1e-300)
    gap = abs(q1 + p.R / (1 + p.beta * p.R) * lhs) / scale
    res = {"modes": [{"l": m.l, "lambda_l": m.lambda_l, "c_l": m.c_l, "Q_l": m.Q_l} for m in rows],
           "stability_lhs": lhs}
    worst = min(rows, key=lambda m: m.Q_l)
    return {"result": res, "verdict": "stable" if worst.Q_l >= 0 else f"unstable (l={worst.l})",
            "checks": [_check("mode-1-identity", gap <= 1e-10, rel_gap=gap)]}


def cmd_translate_check(cfg: dict) -> dict:
    p, src = make_problem(cfg), make_source(cfg)
    spec = flows.PerturbationSpec.from_spec(cfg.get("perturbation", {"kind": "translation"}))
    s = cfg.get("solver", {})
    sample = flows.energy_along_flow(p, src, spec, s.get("t"), s.get("h", 0.02), spectral_config(cfg))
    Q = ball.mode_second_variation(p, src, spec.mode_index()).Q_l
    analytic = Q * spec.zeta_norm_sq(p.R)
    numeric = sample.d2_richardson
    err = sample.d2_error
    checks = [_check("first-variation-vanishes", abs(sample.d1_richardson) <= max(10 * sample.d1_error, 1e-8),
                     d1=sample.d1_richardson, bound=max(10 * sample.d1_error, 1e-8))]
    if abs(analytic) > 3 * err:
        checks.append(_check("sign-agreement", math.copysign(1, numeric) == math.copysign(1, analytic),
                             numeric=numeric, analytic=analytic))
    tol = float(s.get("tolerance", 0.01 if spec.kind == "translation" else 0.02))
    rel = abs(numeric - analytic) / max(abs(analytic), 1e-300)
    checks.append(_check("second-variation-match", rel <= tol or abs(numeric - analytic) <= 3 * err,
                         rel_error=rel, tolerance=tol))
    res = {"samples": {"t": list(sample.t), "J": list(sample.J)}, "flow": sample.footer(),
           "Q_l": Q, "zeta_norm_sq": spec.zeta_norm_sq(p.R), "analytic": analytic, "numeric": numeric}
    verdict = "J decreases" if numeric < 0 else "J increases"
    return {"result": res, "verdict": verdict, "checks": checks, "flow_sample": sample}


def cmd_fem_compare(cfg: dict) -> dict:
    p, src = make_problem(cfg), make_source(cfg)
    if p.n != 2:
        raise ConfigError("config field /problem/n: solver comparisons are two-dimensional")
    h = float(cfg.get("solver", {}).get("h", 0.02))
    sfld = ds.solve_disk(p.R, p.beta, src.value_at, spectral_config(cfg))
    terms = ds.energy_terms(sfld)
    J_s = ds.energy(sfld)
    mesh = fem2d.build_star_mesh(fem2d.StarDomain.disk(p.R), h)
    bc = fem2d.BoundaryCondition.robin(p.beta) if p.is_robin else fem2d.BoundaryCondition.dirichlet()
    ffld = fem2d.assemble_solve(mesh, bc, src.value_at)
    J_f = fem2d.energy(ffld)
    rel = abs(J_f - J_s) / max(abs(J_s), 1e-300)
    ident = abs(J_s + 0.5 * terms["fu"]) / max(abs(J_s), 1e-300)
    res = {"J_spectral": J_s, "J_fem": J_f, "rel_diff": rel, "energy_identity": ident,
           "heat_spectral": ds.integral(sfld), "heat_fem": fem2d.integral(ffld),
           "n_vertices": mesh.n_vertices, "h": h}
    checks = [_check("solver-agreement", rel <= 1e-3, rel_diff=rel),
              _check("spectral-energy-identity", ident <= 1e-9, value=ident)]
    return {"result": res, "verdict": "agree" if rel <= 1e-3 else "disagree", "checks": checks}


def cmd_counterexample(cfg: dict) -> dict:
    c = cfg.get("counterexample", {})
    rep = rearrange.two_disk_counterexample(float(c.get("eps", 0.5)), float(c.get("beta", 0.5)))
    closed = (1 / (2 * rep.beta)) * (1 / rep.c - 1) + 0.5 * math.log(rep.c)
    checks = [_check("delta-closed-form", abs(rep.delta - closed) <= 1e-12, delta=rep.delta),
              _check("verdict-consistent", (rep.delta < 0) == (rep.verdict == "comparison fails")
                     or abs(rep.delta) <= 1e-12)]
    return {"result": rep.to_json(), "verdict": rep.verdict, "checks": checks}


def cmd_rearrange_check(cfg: dict) -> dict:
    src = make_source(cfg)
    dom = make_domain(cfg)
    s = cfg.get("solver", {})
    dx = float(s.get("dx", 0.02))
    R = math.sqrt(dom.area / math.pi)
    dom_rep = rearrange.lemma_domination_check(src, dom, R, dx)
    p = cfg.get("problem", {})
    beta = p.get("beta", 1.0)
    beta = None if beta == "dirichlet" else float(beta)
    tal = rearrange.talenti_experiments(dom, src, beta, float(s.get("h", 0.02)), dx, spectral_config(cfg))
    tol = float(s.get("tolerance", 1e-6))
    checks = [_check("lemma-domination", dom_rep.ok, max_violation=dom_rep.max_violation),
              _check("hardy-littlewood", tal.hardy_littlewood_ok, lhs=tal.hl_lhs, rhs=tal.hl_rhs),
              _check("heat-content-ordering", tal.heat_margin >= -tol, margin=tal.heat_margin)]
    if beta is None and src.is_decreasing:
        checks.append(_check("dirichlet-energy-ordering", tal.J_margin >= -tol, margin=tal.J_margin))
    res = {"domination": dom_rep.__dict__, "talenti": tal.to_json()}
    return {"result": res, "verdict": "consistent" if all(c["passed"] for c in checks) else "violated",
            "checks": checks}


def cmd_insulation(cfg: dict) -> dict:
    src = make_source(cfg)
    s = cfg.get("solver", {})
    R = float(cfg.get("problem", {}).get("R", 1.0))
    rep = rearrange.insulation_comparison(src, float(s.get("m", 1.0)), R, int(s.get("n_profiles", 20)),
                                          int(s.get("seed", 0)), float(s.get("h", 0.04)))
    tol = float(s.get("tolerance", 1e-8))
    checks = [_check("constant-profile-maximal", rep.min_margin >= -tol, min_margin=rep.min_margin)]
    res = {"m": rep.m, "heat_constant": rep.heat_constant, "heat_profiles": list(rep.heat_profiles),
           "margins": list(rep.margins)}
    return {"result": res, "verdict": "constant best" if checks[0]["passed"] else "constant beaten",
            "checks": checks}


SWEEP_COLUMNS = ("beta", "delta", "R", "n", "fbar", "f_R", "lhs", "verdict", "clause", "beta1", "beta2")


def _sweep_point(args) -> dict:
    beta, delta, R, n = args
    src = RadialSource.gaussian(delta, n)
    tr = ball.source_traces(src, R)
    cls = ball.classify(src, n, R, beta)
    th = ball.beta_thresholds(src, n, R)
    lhs = ball.stability_lhs(ball.BallProblem.robin(n, R, beta), src)
    return {"beta": beta, "delta": delta, "R": R, "n": n, "fbar": tr.fbar, "f_R": tr.f_R, "lhs": lhs,
            "verdict": cls.verdict, "clause": cls.clause,
            "beta1": "" if th is None else th.beta1, "beta2": "" if th is None else th.beta2}


def cmd_sweep(cfg: dict, jobs: int = 1) -> dict:
    sw = cfg.get("sweep", {})
    n = int(cfg.get("problem", {}).get("n", 2))
    betas = sw.get("beta", [0.25, 0.5, 1.0, 2.0, 4.0])
    deltas = sw.get("delta", [0.1, 0.3, 0.5, 1.0])
    radii = sw.get("R", [1.0])
    grid = [(float(b), float(d), float(r), n) for b, d, r in itertools.product(betas, deltas, radii)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            rows = list(ex.map(_sweep_point, grid))
    else:
        rows = [_sweep_point(g) for g in grid]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    counts = {}
    for r in rows:
        counts[r["verdict"]] = counts.get(r["verdict"], 0) + 1
    return {"result": {"points": len(rows), "verdict_counts": counts, "columns": list(SWEEP_COLUMNS)},
            "verdict": "descriptive", "checks": [], "csv": buf.getvalue()}


HANDLERS = {
    "stability": cmd_stability, "thresholds": cmd_thresholds, "modes": cmd_modes,
    "translate-check": cmd_translate_check, "fem-compare": cmd_fem_compare,
    "counterexample": cmd_counterexample, "rearrange-check": cmd_rearrange_check,
    "insulation": cmd_insulation, "sweep": cmd_sweep,
}


# -- entry point ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robinshape",
                                 description="Stability of the centred ball for Robin heat energies.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON experiment config")
    ap.add_argument("--out", default=None, help="directory for reports (default: print only)")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    ap.add_argument("--eps", type=float, help="two-disk radius parameter")
    ap.add_argument("--beta", type=float, help="Robin coefficient")
    ap.add_argument("--delta", type=float, help="gaussian source width (replaces the source)")
    ap.add_argument("--n", type=int, help="space dimension")
    ap.add_argument("--r-ball", type=float, dest="r_ball", help="ball radius")
    ap.add_argument("--mode-l", type=int, dest="mode_l", help="largest mode degree for `modes`")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if "command" in cfg and cfg["command"] != args.command:
            raise ConfigError(f"config field /command: {cfg['command']!r} does not match {args.command!r}")
        cfg = apply_shortcuts(cfg, args)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        handler = HANDLERS[args.command]
        out = handler(cfg, args.jobs) if args.command == "sweep" else handler(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RobinShapeError, ValueError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2

    passed = all(c["passed"] for c in out["checks"])
    report = {"command": args.command, "config": cfg, "verdict": out["verdict"],
              "result": out["result"], "checks": out["checks"], "passed": passed}
    text = dumps(report)
    sys.stdout.write(text)
    if args.out:
        o = cfg.get("output", {})
        stem = args.command
        write_atomic(os.path.join(args.out, o.get("report", f"{stem}.json")), text)
        write_atomic(os.path.join(args.out, f"{stem}.meta.json"),
                     dumps({"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "command": args.command}))
        if "csv" in out:
            write_atomic(os.path.join(args.out, o.get("csv", f"{stem}.csv")), out["csv"])
        if "flow_sample" in out:
            write_atomic(os.path.join(args.out, o.get("csv", f"{stem}.csv")), out["flow_sample"].csv_text())
    return 0 if passed else 1


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()

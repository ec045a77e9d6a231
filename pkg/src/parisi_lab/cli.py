"""Command-line front end.

Every command reads a JSON config (validated against :data:`CONFIG_SCHEMA`,
unknown keys rejected), echoes the fully resolved config on stderr, prints a
JSON result on stdout and optionally writes artifacts to ``--out``.  Output
files embed the config hash and seed and are written atomically.

Exit codes: 0 success, 1 usage or configuration error, 2 structured
hypothesis refusal.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import jsonschema
import numpy as np

from .errors import HypothesisRefusal, ParisiLabError
from .flows import at_line_check, check_parisi_criterion
from .gibbs_oracle import (coupled_overlap_distribution, constrained_coupled_free_energy,
                           constrained_profile, free_energy_exact, guerra_gap)
from .gt2d import (Grid2DParams, MODES, check_hypotheses, gt_bound, optimize_lambda,
                   scan_bound)
from .measures import AtomicMeasure
from .mixtures import (CouplingSpec, MixtureSpec, check_convexity, check_dominance,
                       check_monotone_ratio)
from .optimizer import find_parisi_measure
from .parisi1d import GridParams, parisi_functional, solve_phi

_NUM = {"type": "number"}
_MIXTURE = {
    "type": "object",
    "properties": {
        "coeffs": {"type": "object", "patternProperties": {"^[0-9]+$": {"type": "number", "minimum": 0}},
                   "additionalProperties": False},
        "sk_beta": _NUM,
    },
    "additionalProperties": False,
}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


CONFIG_SCHEMA = _obj({
    "mixture": _MIXTURE,
    "xi0": _MIXTURE,
    "h": _NUM,
    "q": {"type": "number", "minimum": -1, "maximum": 1},
    "lambda": _NUM,
    "seed": {"type": "integer", "minimum": 0},
    "measure": _obj({"atoms": {"type": "array", "items": _NUM, "minItems": 1},
                     "weights": {"type": "array", "items": _NUM, "minItems": 1}},
                    ["atoms", "weights"]),
    "grid": _obj({"L": {"type": ["number", "null"]}, "dx": {"type": ["number", "null"]},
                  "gh_order": {"type": "integer", "minimum": 4}, "pad": _NUM}),
    "grid2d": _obj({"dx": {"type": ["number", "null"]},
                    "gh_order": {"type": "integer", "minimum": 4},
                    "width": _NUM, "pad": _NUM}),
    "optimizer": _obj({"k_max": {"type": "integer", "minimum": 0},
                       "restarts": {"type": "integer", "minimum": 1},
                       "improve_tol": _NUM, "criterion_tol": _NUM,
                       "q_grid_n": {"type": "integer", "minimum": 11}}),
    "criterion": _obj({"tol": _NUM, "q_grid_n": {"type": "integer", "minimum": 11}}),
    "at_line": _obj({"quad_order": {"type": "integer", "minimum": 40}}),
    "bound": _obj({"optimize_lambda": {"type": "boolean"},
                   "lambda_range": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}}),
    "scan": _obj({"mode": {"enum": list(MODES)},
                  "q_grid_n": {"type": "integer", "minimum": 3},
                  "eps_exclusion": {"type": "number", "exclusiveMinimum": 0},
                  "lambda_range": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                  "modified_eps": {"type": "number", "exclusiveMinimum": 0},
                  "cert_margin": {"type": "number", "minimum": 0},
                  "candidates": {"type": "array", "items": {"enum": ["lambda", "modified"]},
                                 "minItems": 1}}),
    "oracle": _obj({"N": {"type": "integer", "minimum": 1},
                    "n_disorder": {"type": "integer", "minimum": 2},
                    "q": {"type": ["number", "null"]}}),
})

DEFAULTS = {
    "mixture": {"sk_beta": 1.0},
    "h": 0.0,
    "q": 0.0,
    "lambda": 0.0,
    "seed": 0,
    "grid": {"L": None, "dx": None, "gh_order": 80, "pad": 0.0},
    "grid2d": {"dx": None, "gh_order": 40, "width": 6.0, "pad": 0.0},
    "optimizer": {"k_max": 3, "restarts": 8, "improve_tol": 1e-5, "criterion_tol": 1e-5,
                  "q_grid_n": 21},
    "criterion": {"tol": 1e-5, "q_grid_n": 21},
    "at_line": {"quad_order": 80},
    "bound": {"optimize_lambda": False, "lambda_range": [-4.0, 4.0]},
    "scan": {"mode": "positivity", "q_grid_n": 101, "eps_exclusion": 0.1,
             "lambda_range": [-4.0, 4.0], "modified_eps": 0.02, "cert_margin": 1e-4,
             "candidates": ["lambda", "modified"]},
    "oracle": {"N": 8, "n_disorder": 100, "q": None},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_REPLACE = ("mixture", "xi0", "measure")


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in _REPLACE:
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(raw: dict, args) -> dict:
    jsonschema.validate(raw, CONFIG_SCHEMA)
    cfg = _merge(DEFAULTS, raw)
    if "xi0" not in cfg:
        cfg["xi0"] = copy.deepcopy(cfg["mixture"])
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    if args.q_grid is not None:
        cfg["scan"]["q_grid_n"] = int(args.q_grid)
    if args.mode is not None:
        cfg["scan"]["mode"] = args.mode
    jsonschema.validate(cfg, CONFIG_SCHEMA)
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _mixture(d: dict, allow_zero=False) -> MixtureSpec:
    if "coeffs" in d and "sk_beta" in d:
        raise UsageError("give either coeffs or sk_beta, not both")
    if "sk_beta" in d:
        b = float(d["sk_beta"])
        return MixtureSpec({2: 0.5 * b * b}, allow_zero=allow_zero or b == 0)
    if "coeffs" not in d:
        raise UsageError("mixture needs coeffs or sk_beta")
    return MixtureSpec({int(k): v for k, v in d["coeffs"].items()}, allow_zero=allow_zero)


def _grid(cfg) -> GridParams:
    return GridParams(**cfg["grid"])


def _grid2d(cfg) -> Grid2DParams:
    return Grid2DParams(**cfg["grid2d"])


def _coupling(cfg, q=None) -> CouplingSpec:
    return CouplingSpec(_mixture(cfg["mixture"]), _mixture(cfg["xi0"], allow_zero=True),
                        float(cfg["h"]), float(cfg["q"] if q is None else q))


def _measure(cfg):
    m = cfg.get("measure")
    return None if m is None else AtomicMeasure.create(m["atoms"], m["weights"])


def _estimate(cfg, xi, h):
    o = cfg["optimizer"]
    return find_parisi_measure(xi, h, k_max=o["k_max"], improve_tol=o["improve_tol"],
                               seed=cfg["seed"], restarts=o["restarts"],
                               q_grid_n=o["q_grid_n"], criterion_tol=o["criterion_tol"])


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _atomic_write(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows, meta) -> str:
    lines = [f"# config_hash={meta['config_hash']} seed={meta['seed']}", ",".join(header)]
    for r in rows:
        lines.append(",".join(repr(float(v)) if not isinstance(v, (bool, np.bool_)) else str(int(v))
                              for v in r))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_mixture_check(cfg, args):
    xi = _mixture(cfg["mixture"])
    conv = check_convexity(xi)
    out = {"convex": conv.convex, "convexity_witness": conv.witness, "even": xi.is_even}
    try:
        r = check_monotone_ratio(xi, xi, reflect_den=True)
        out["ratio_monotone"] = r.monotone
        out["ratio_witness"] = r.witness
    except ParisiLabError as exc:
        out["ratio_monotone"] = False
        out["ratio_error"] = str(exc)
    if "xi0" in cfg:
        dom = check_dominance(_coupling(cfg))
        out["dominance"] = {"strict": dom.strict, "weak": dom.weak, "witness": dom.witness}
    return out, None


def cmd_parisi_solve(cfg, args):
    xi, h = _mixture(cfg["mixture"]), float(cfg["h"])
    mu = _measure(cfg) or AtomicMeasure.dirac(0.0)
    phi = solve_phi(mu, xi, h, _grid(cfg))
    out = {"phi_at_start": phi.value_at_start(), "s_nodes": phi.s_nodes,
           "n_x": int(phi.x_grid.size)}
    rows = []
    for j, s in enumerate(phi.s_nodes):
        for i, x in enumerate(phi.x_grid):
            rows.append((s, x, phi.phi[j, i], phi.dphi[j, i], phi.ddphi[j, i]))
    return out, (("s", "x", "phi", "dphi", "ddphi"), rows)


def cmd_parisi_functional(cfg, args):
    xi, h = _mixture(cfg["mixture"]), float(cfg["h"])
    mu = _measure(cfg) or AtomicMeasure.dirac(0.0)
    return {"value": parisi_functional(mu, xi, h, _grid(cfg)), "measure": mu.to_dict()}, None


def cmd_parisi_optimize(cfg, args):
    xi, h = _mixture(cfg["mixture"]), float(cfg["h"])
    return _estimate(cfg, xi, h).to_dict(), None


def cmd_parisi_criterion(cfg, args):
    xi, h = _mixture(cfg["mixture"]), float(cfg["h"])
    mu = _measure(cfg)
    if mu is None:
        mu = _estimate(cfg, xi, h).measure
    c = cfg["criterion"]
    grid = GridParams(**{**cfg["grid"], "pad": max(cfg["grid"]["pad"], float(xi(1.0, 1)))})
    rep = check_parisi_criterion(mu, xi, h, c["q_grid_n"], grid, tol=c["tol"])
    out = rep.to_dict()
    out["measure"] = mu.to_dict()
    return out, (("q", "derivative"), list(zip(rep.q_grid, rep.derivative_values)))


def cmd_at_line(cfg, args):
    xi, h = _mixture(cfg["mixture"]), float(cfg["h"])
    rep = at_line_check(xi, h, cfg["at_line"]["quad_order"])
    return {"q_root": rep.q_root, "roots": list(rep.roots), "lhs_ineq": rep.lhs_ineq,
            "rs_consistent": rep.rs_consistent}, None


def cmd_gt_bound(cfg, args):
    c = _coupling(cfg)
    mu = _measure(cfg)
    if mu is None:
        mu = _estimate(cfg, c.xi, c.h).measure
    b = cfg["bound"]
    if b["optimize_lambda"]:
        opt = optimize_lambda(mu, c, _grid2d(cfg), tuple(b["lambda_range"]))
        return {"q": c.q, "lambda": opt.lambda_star, "Lambda": opt.value,
                "convex_probe": opt.convex, "measure": mu.to_dict()}, None
    lam = float(cfg["lambda"])
    return {"q": c.q, "lambda": lam, "Lambda": gt_bound(mu, c, lam, _grid2d(cfg)),
            "measure": mu.to_dict()}, None


def cmd_gt_scan(cfg, args):
    fam = _coupling(cfg)
    sc = cfg["scan"]
    check_hypotheses(fam, sc["mode"])      # refuse before any expensive work
    est = _estimate(cfg, fam.xi, fam.h)
    curve = scan_bound(fam, est, sc["mode"], sc["q_grid_n"], sc["eps_exclusion"],
                       _grid2d(cfg), tuple(sc["lambda_range"]), sc["modified_eps"],
                       sc["cert_margin"], tuple(sc["candidates"]), threads=args.threads)
    out = curve.certificate()
    out["estimate"] = est.to_dict()
    rows = [(q, l, v, curve.two_P, curve.two_P - v, ok) for q, l, v, ok in
            zip(curve.q_grid, curve.lambda_star, curve.Lambda, curve.psd_ok)]
    return out, (("q", "lambda_star", "Lambda", "two_P", "margin", "psd_ok"), rows)


def _oracle_params(cfg):
    o = cfg["oracle"]
    return int(o["N"]), int(o["n_disorder"]), int(cfg["seed"])


def cmd_oracle_free_energy(cfg, args):
    xi = _mixture(cfg["mixture"], allow_zero=True)
    N, n, seed = _oracle_params(cfg)
    est = free_energy_exact(xi, float(cfg["h"]), N, n, seed)
    out = est.to_dict()
    mu = _measure(cfg)
    if mu is not None:
        g = guerra_gap(mu, xi, float(cfg["h"]), N, n, seed, _grid(cfg))
        out["guerra"] = g.to_dict()
    return out, None


def cmd_oracle_overlap(cfg, args):
    c = _coupling(cfg)
    N, n, seed = _oracle_params(cfg)
    hist = coupled_overlap_distribution(c, N, n, seed)
    out = {"mean": hist.mean(), "variance": hist.variance(), "n": hist.n}
    return out, (("q", "probability", "std_err"),
                 list(zip(hist.q, hist.probability, hist.std_err)))


def cmd_oracle_constrained(cfg, args):
    N, n, seed = _oracle_params(cfg)
    q = cfg["oracle"]["q"]
    if q is not None:
        c = _coupling(cfg)
        est = constrained_coupled_free_energy(c, N, float(q), n, seed)
        return {"q": float(q), **est.to_dict()}, None
    qs, means, ses = constrained_profile(_coupling(cfg), N, n, seed)
    return {"q": qs, "mean": means, "std_err": ses}, (("q", "mean", "std_err"),
                                                      list(zip(qs, means, ses)))


COMMANDS = {
    ("mixture", "check"): cmd_mixture_check,
    ("parisi", "solve"): cmd_parisi_solve,
    ("parisi", "functional"): cmd_parisi_functional,
    ("parisi", "optimize"): cmd_parisi_optimize,
    ("parisi", "criterion"): cmd_parisi_criterion,
    ("at-line", None): cmd_at_line,
    ("gt", "bound"): cmd_gt_bound,
    ("gt", "scan"): cmd_gt_scan,
    ("oracle", "free-energy"): cmd_oracle_free_energy,
    ("oracle", "overlap"): cmd_oracle_overlap,
    ("oracle", "constrained"): cmd_oracle_constrained,
}


def _threads_default():
    env = os.environ.get("PARISI_LAB_THREADS")
    try:
        return max(int(env), 1) if env else 1
    except ValueError:
        raise UsageError(f"PARISI_LAB_THREADS must be an integer, got {env!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="parisi-lab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted({k[0] for k in COMMANDS}))
    p.add_argument("action", nargs="?")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--q-grid", dest="q_grid", type=int)
    p.add_argument("--mode", choices=MODES)
    return p


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        key = (args.command, args.action)
        if args.command == "at-line":
            if args.action is not None:
                raise UsageError("at-line takes no action")
            key = ("at-line", None)
        if key not in COMMANDS:
            raise UsageError(f"unknown command {' '.join(a for a in key if a)!r}")
        if args.threads is None:
            args.threads = _threads_default()
        if args.threads < 1:
            raise UsageError("--threads must be positive")
        raw = {}
        if args.config is not None:
            try:
                raw = json.loads(args.config.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config: {exc}")
        cfg = resolve_config(raw, args)
    except (UsageError, jsonschema.ValidationError) as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
        print(json.dumps({"error": "usage", "message": msg}), file=stderr)
        return 1
    meta = {"config_hash": config_hash(cfg), "seed": cfg["seed"]}
    print(json.dumps({"config": cfg, **meta}, sort_keys=True), file=stderr)
    try:
        result, table = COMMANDS[key](cfg, args)
    except HypothesisRefusal as exc:
        payload = {**exc.to_dict(), **meta}
        text = json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"
        if args.out is not None:
            _atomic_write(args.out, text)
        stdout.write(text)
        return 2
    except (UsageError, ParisiLabError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=stderr)
        return 1
    payload = _jsonable({"command": " ".join(a for a in key if a), "result": result,
                         "config": cfg, **meta})
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out is not None:
        out = Path(args.out)
        if out.suffix == ".csv":
            if table is None:
                print(json.dumps({"error": "usage", "message": "command has no CSV output"}),
                      file=stderr)
                return 1
            _atomic_write(out, _csv_text(table[0], table[1], meta))
        else:
            _atomic_write(out, text)
            if table is not None:
                _atomic_write(out.with_suffix(".csv"), _csv_text(table[0], table[1], meta))
    stdout.write(text)
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()

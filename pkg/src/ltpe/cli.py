"""Command-line experiment runner.

    ltpe check      --model ginzburg_landau --theta 1
    ltpe weak-error --model ginzburg_landau --theta 0 --h 2^-6,2^-7,2^-8,2^-9 \\
                    --h-ref 2^-12 --T 5 --M 10000 --phi all --seed 42 --out gl.csv
    ltpe density    --model mean_reverting --theta 0,0.5,1 --h 2^-10 --T 5 --M 20000

Settings come from an optional JSON file (``--config``) overridden by flags.
Exit status: 0 success, 1 configuration error, 2 a verdict failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import re
import sys

import numpy as np

from . import estimate, report, verify
from .model import BUILTIN_MODELS, ModelError, check_assumptions, dissipativity_gap, make_model
from .scheme import (BOUND_NAMES, InadmissibleStepError, SchemeParams, ergodicity_warnings,
                     max_stable_stepsize, stepsize_bounds)

log = logging.getLogger("ltpe")

COMMANDS = ("check", "simulate", "weak-error", "density", "contract", "moments", "holder")

EXIT_OK, EXIT_CONFIG, EXIT_VERDICT = 0, 1, 2

# Per-command defaults; None marks "derived at validation time".
DEFAULTS = {
    "check": {"theta": 1.0, "p": 2, "kappa": 0.5, "seed": 0, "M": 100000, "radius": 10.0},
    "simulate": {"theta": 1.0, "h": 2.0**-6, "T": 5.0, "M": 100, "seed": 0},
    "weak-error": {"theta": 1.0, "h": [2.0**-6, 2.0**-7, 2.0**-8, 2.0**-9], "h_ref": 2.0**-12,
                   "T": 5.0, "M": 10000, "phi": "all", "seed": 0, "theta_ref": None},
    "density": {"theta": [0.0, 0.5, 1.0], "h": 2.0**-10, "T": 5.0, "M": 20000, "seed": 0,
                "bins": 100},
    "contract": {"theta": 1.0, "h": 2.0**-6, "T": 10.0, "M": 1000, "seed": 0,
                 "x0_a": -2.0, "x0_b": 3.0},
    "moments": {"theta": 1.0, "h": None, "T": 20.0, "M": 2000, "seed": 0, "p": 2},
    "holder": {"theta": 1.0, "h": 2.0**-6, "T": 1.0, "M": 10000, "seed": 0, "p": 1,
               "sub_steps": 16},
}
COMMON = {"model_params": {}, "kappa": 0.5, "p": 2, "threads": 1, "force_h": False,
          "out": None, "svg": None}
LIST_FIELDS = {"weak-error": ("h",), "density": ("theta",)}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


_POW = re.compile(r"^\s*2\s*\^\s*(-?\d+)\s*$")


def parse_number(text):
    """Parse a float, accepting the exact power-of-two literal ``2^-k``."""
    if isinstance(text, (int, float)):
        return float(text)
    m = _POW.match(str(text))
    if m:
        return 2.0 ** int(m.group(1))
    return float(text)


def parse_list(text):
    if isinstance(text, (list, tuple)):
        return [parse_number(t) for t in text]
    return [parse_number(t) for t in str(text).split(",") if t.strip()]


def _coerce_model_params(params):
    out = {}
    for k, v in params.items():
        if isinstance(v, str):
            v = parse_number(v)
        if isinstance(v, float) and k == "K":
            v = int(v)
        out[k] = v
    return out


def validate(config):
    """Fill defaults, check ranges and step-size admissibility.

    Returns the resolved configuration; raises :class:`ConfigError` carrying
    every problem found (not just the first).
    """
    errors = []
    cfg = {k: v for k, v in dict(config).items() if v is not None}
    command = cfg.get("command")
    if command is None:
        errors.append("command: required (one of " + ", ".join(COMMANDS) + ")")
    elif command not in COMMANDS:
        errors.append(f"command: unknown {command!r}")
    if "model" not in cfg:
        errors.append("model: required (one of " + ", ".join(sorted(BUILTIN_MODELS)) + ")")
    elif cfg["model"] not in BUILTIN_MODELS:
        errors.append(f"model: unknown {cfg['model']!r}")
    if command not in COMMANDS:
        raise ConfigError(errors)

    resolved = dict(COMMON)
    resolved.update(DEFAULTS[command])
    resolved.update(cfg)
    resolved["model_params"] = _coerce_model_params(resolved.get("model_params") or {})

    def number(key, lo=None, hi=None, strict_lo=False, integer=False):
        try:
            v = resolved[key]
            v = int(parse_number(v)) if integer else parse_number(v)
        except (TypeError, ValueError):
            errors.append(f"{key}: not a number ({resolved[key]!r})")
            return
        if lo is not None and (v <= lo if strict_lo else v < lo):
            errors.append(f"{key}: must be {'>' if strict_lo else '>='} {lo}, got {v}")
        if hi is not None and v > hi:
            errors.append(f"{key}: must be <= {hi}, got {v}")
        resolved[key] = v

    list_fields = LIST_FIELDS.get(command, ())
    for key in ("theta", "h"):
        if key not in resolved or resolved[key] is None:
            continue
        if key in list_fields:
            try:
                resolved[key] = parse_list(resolved[key])
            except ValueError:
                errors.append(f"{key}: cannot parse {resolved[key]!r}")
                continue
            if not resolved[key]:
                errors.append(f"{key}: empty list")
        else:
            vals = parse_list(resolved[key]) if isinstance(resolved[key], (str, list)) else [resolved[key]]
            if len(vals) != 1:
                errors.append(f"{key}: command {command} takes a single value")
                continue
            resolved[key] = float(vals[0])
    thetas = resolved["theta"] if isinstance(resolved["theta"], list) else [resolved["theta"]]
    for th in thetas:
        if not 0.0 <= th <= 1.0:
            errors.append(f"theta: must lie in [0, 1], got {th}")
    for key in ("T", "h_ref"):
        if key in resolved and resolved[key] is not None:
            number(key, 0.0, strict_lo=True)
    number("M", 1, integer=True)
    number("seed", 0, integer=True)
    number("threads", 1, integer=True)
    number("p", 1, integer=True)
    number("kappa", 0.0, 1.0, strict_lo=True)
    if command == "weak-error":
        resolved["phi"] = ",".join(estimate.resolve_phis(resolved["phi"])) if _phi_ok(resolved["phi"], errors) else resolved["phi"]
        if resolved.get("theta_ref") is None:
            resolved["theta_ref"] = resolved["theta"]
        else:
            number("theta_ref", 0.0, 1.0)
    if command == "holder":
        number("sub_steps", 4, integer=True)
    if command == "density":
        number("bins", 1, integer=True)
    if command == "contract":
        number("x0_a")
        number("x0_b")
    if errors:
        raise ConfigError(errors)

    try:
        model = make_model(resolved["model"], **resolved["model_params"])
    except (ModelError, TypeError) as exc:
        raise ConfigError([f"model_params: {exc}"]) from None

    warnings = ergodicity_warnings(model)
    if command == "moments" and resolved.get("h") is None:
        h_max = max_stable_stepsize(model, thetas[0], resolved["p"], resolved["kappa"])
        n = math.ceil(2 * resolved["T"] / h_max)
        resolved["h"] = resolved["T"] / n

    if command in ("simulate", "weak-error", "density", "contract", "moments", "holder"):
        hs = resolved["h"] if isinstance(resolved["h"], list) else [resolved["h"]]
        for th in thetas:
            for h in hs:
                msg = _admissibility_error(model, th, h, resolved["p"], resolved["kappa"])
                if msg is None:
                    continue
                if resolved["force_h"]:
                    warnings.append("forced " + msg.split("; pass")[0])
                else:
                    errors.append(msg)
        for h in hs + ([resolved["h_ref"]] if "h_ref" in resolved else []):
            n = resolved["T"] / h
            if abs(n - round(n)) > 1e-9 * max(1.0, n):
                errors.append(f"h: T/h must be an integer (T={resolved['T']}, h={h})")
        if command == "weak-error":
            for h in hs:
                ratio = h / resolved["h_ref"]
                r = round(ratio)
                if r < 1 or abs(ratio - r) > 1e-9 or r & (r - 1):
                    errors.append(f"h_ref: h/h_ref must be a power of two (h={h})")
    if errors:
        raise ConfigError(errors)
    resolved["warnings"] = warnings
    return resolved


def _phi_ok(phi, errors):
    try:
        estimate.resolve_phis(phi)
        return True
    except ValueError as exc:
        errors.append(f"phi: {exc}")
        return False


def _admissibility_error(model, theta, h, p, kappa):
    try:
        bounds = stepsize_bounds(model, theta, h, p, kappa)
    except InadmissibleStepError as exc:
        return f"h: {exc}"
    violated = [n for n in BOUND_NAMES if not h < bounds[n]]
    if not violated:
        return None
    binding = min(violated, key=lambda n: bounds[n])
    h_max = max_stable_stepsize(model, theta, p, kappa)
    return (f"h: {h:g} is not admissible for theta={theta:g}; binding bound "
            f"{binding} = {bounds[binding]:.6g} (h_max = {h_max:.6g}); pass --force-h to override")


# ---------------------------------------------------------------------------
# commands

# settings that cannot change any computed value stay out of the CSV header
EXECUTION_KEYS = ("threads", "out", "svg")


def _emit(cfg, columns, rows, out=None):
    header = {k: v for k, v in cfg.items() if k not in EXECUTION_KEYS}
    text = report.render_csv(header, columns, rows)
    path = out if out is not None else cfg.get("out")
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
        log.info("wrote %s", path)
    else:
        sys.stdout.write(text)
    return text


def _model(cfg):
    return make_model(cfg["model"], **cfg["model_params"])


def cmd_check(cfg):
    model = _model(cfg)
    rep = check_assumptions(model, cfg["M"], cfg.get("radius", 10.0), cfg["seed"])
    gap1, gap2 = dissipativity_gap(model)
    print(f"model            {model.name}  {json.dumps(model.params, sort_keys=True)}")
    print(f"lambda_1/d       {model.linear.lambda_min:.6g} / {model.linear.lambda_max:.6g}")
    c = model.constants
    print(f"constants        L1={c.L1:.6g} L2={c.L2:.6g} p0={c.p0:g} p1={c.p1:g} "
          f"C1={c.C1:.6g} C2={c.C2:.6g} gamma={model.gamma:g}")
    print(f"gaps             2*lambda_1-L1={gap1:.6g}  2*lambda_1-L2={gap2:.6g}")
    try:
        h_max = max_stable_stepsize(model, cfg["theta"], cfg["p"], cfg["kappa"])
        print(f"h_max            {h_max:.12g}  (theta={cfg['theta']:g}, p={cfg['p']}, "
              f"kappa={cfg['kappa']:g})")
    except InadmissibleStepError as exc:
        h_max = math.nan
        print(f"h_max            none: {exc}")
    for w in cfg["warnings"]:
        print(f"warning          {w}")
    print(f"spot check       {'ok' if rep.ok else 'VIOLATED ' + ','.join(rep.violations)} "
          f"({rep.n_samples} pairs, radius {rep.radius:g})")
    names = {"L1": "coercivity", "L2": "monotonicity", "C2": "growth", "A": "linear"}
    rows = [(names[k], model.name, cfg["theta"], h_max, cfg["p"],
             "violated" if k in rep.violations else "ok", rep.maxima[k], math.nan, cfg["seed"])
            for k in ("L1", "L2", "C2", "A")]
    if cfg.get("out"):
        _emit(cfg, report.VERIFY_COLUMNS, rows)
    return EXIT_OK if rep.ok and math.isfinite(h_max) else EXIT_VERDICT


def cmd_simulate(cfg):
    model = _model(cfg)
    params = SchemeParams(cfg["theta"], cfg["h"], cfg["kappa"], cfg["p"])
    states, failed = estimate.terminal_samples(model, params, cfg["M"], cfg["T"], cfg["seed"],
                                               threads=cfg["threads"])
    rows = [(model.name, cfg["theta"], cfg["h"], cfg["T"], cfg["seed"], i, j, float(states[i, j]))
            for i in range(states.shape[0]) for j in range(states.shape[1])]
    _emit(cfg, report.SAMPLE_COLUMNS, rows)
    n_failed = int(np.sum(failed >= 0))
    if n_failed:
        log.error("%d trajectories failed", n_failed)
        return EXIT_VERDICT
    return EXIT_OK


SLOPE_BAND = (0.75, 1.25)
DENSITY_FACTOR = 3.0


def cmd_weak_error(cfg):
    model = _model(cfg)
    res = estimate.weak_error_sweep(model, cfg["theta"], cfg["h"], cfg["h_ref"], cfg["T"],
                                    cfg["M"], cfg["phi"], cfg["seed"], theta_ref=cfg["theta_ref"],
                                    threads=cfg["threads"])
    rows = [(model.name, cfg["theta"], phi, h, cfg["h_ref"], cfg["T"], cfg["M"], cfg["seed"],
             err, hw) for phi, h, err, hw in res.rows()]
    _emit(cfg, report.WEAK_ERROR_COLUMNS, rows)
    ok = True
    for phi in res.phis:
        try:
            fit = res.rate(phi)
        except ValueError as exc:
            print(f"# slope {phi}: {exc}", file=sys.stderr)
            ok = False
            continue
        good = SLOPE_BAND[0] <= fit.slope <= SLOPE_BAND[1]
        ok &= good
        print(f"# slope {phi:12s} {fit.slope:.4f}  r2={fit.r2:.4f}  {'ok' if good else 'OUT OF BAND'}",
              file=sys.stderr)
    if cfg.get("svg"):
        series = {phi: list(zip(res.h_list, res.errors[phi].tolist())) for phi in res.phis}
        with open(cfg["svg"], "w") as fh:
            fh.write(report.loglog_svg(series, f"{model.name}, theta={cfg['theta']:g}"))
    return EXIT_OK if ok else EXIT_VERDICT


def _density_path(out, theta):
    root, ext = os.path.splitext(out)
    return f"{root}_theta{theta:g}{ext or '.csv'}"


def cmd_density(cfg):
    model = _model(cfg)
    cmp = estimate.compare_densities(model, cfg["theta"], cfg["h"], cfg["T"], cfg["M"],
                                     cfg["seed"], cfg["bins"], threads=cfg["threads"])
    all_rows = []
    for th, curve in cmp.curves.items():
        rows = [(model.name, th, cfg["h"], cfg["T"], cfg["M"], cfg["seed"], float(a), float(b),
                 float(v)) for a, b, v in zip(curve.edges[:-1], curve.edges[1:], curve.heights)]
        if cfg.get("out"):
            _emit(cfg, report.DENSITY_COLUMNS, rows, _density_path(cfg["out"], th))
        all_rows.extend(rows)
    if not cfg.get("out"):
        _emit(cfg, report.DENSITY_COLUMNS, all_rows)
    print(f"# same-law baseline L1 (theta={cmp.baseline_theta:g}): {cmp.baseline:.5f}",
          file=sys.stderr)
    for (a, b), d in cmp.distances.items():
        good = d <= DENSITY_FACTOR * cmp.baseline
        print(f"# L1(theta={a:g}, theta={b:g}) = {d:.5f}  "
              f"{'ok' if good else f'EXCEEDS {DENSITY_FACTOR:g}x baseline'}", file=sys.stderr)
    return EXIT_OK if cmp.within(DENSITY_FACTOR) else EXIT_VERDICT


def cmd_contract(cfg):
    model = _model(cfg)
    params = SchemeParams(cfg["theta"], cfg["h"], cfg["kappa"], cfg["p"])
    fit = verify.contractivity_decay(model, params, cfg["x0_a"], cfg["x0_b"], cfg["T"], cfg["M"],
                                     cfg["seed"], threads=cfg["threads"])
    rows = [("contractivity", model.name, cfg["theta"], cfg["h"], cfg["p"], fit.verdict,
             fit.rate, fit.r2, cfg["seed"])]
    _emit(cfg, report.VERIFY_COLUMNS, rows)
    print(f"# rate={fit.rate:.5g} r2={fit.r2:.5f} terminal/initial={fit.terminal / fit.initial:.3g}",
          file=sys.stderr)
    return EXIT_OK if fit.verdict == "contractive" else EXIT_VERDICT


def cmd_moments(cfg):
    model = _model(cfg)
    params = SchemeParams(cfg["theta"], cfg["h"], cfg["kappa"], cfg["p"])
    res = verify.moment_trajectory(model, params, cfg["p"], cfg["T"], cfg["M"], cfg["seed"],
                                   check_stepsize=not cfg["force_h"], threads=cfg["threads"])
    rows = [(model.name, cfg["theta"], cfg["h"], cfg["p"], step, t, v) for step, t, v in res.rows()]
    _emit(cfg, report.MOMENT_COLUMNS, rows)
    print(f"# verdict: {res.verdict}", file=sys.stderr)
    return EXIT_OK if res.verdict == "bounded" else EXIT_VERDICT


def cmd_holder(cfg):
    model = _model(cfg)
    params = SchemeParams(cfg["theta"], cfg["h"], cfg["kappa"], cfg["p"])
    res = verify.holder_check(model, params, cfg["p"], cfg["sub_steps"], cfg["M"], cfg["seed"],
                              cfg["T"], threads=cfg["threads"])
    rows = [("holder", model.name, cfg["theta"], cfg["h"], cfg["p"], res.verdict, res.slope,
             res.r2, cfg["seed"])]
    _emit(cfg, report.VERIFY_COLUMNS, rows)
    return EXIT_OK if res.verdict == "holds" else EXIT_VERDICT


HANDLERS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "weak-error": cmd_weak_error,
    "density": cmd_density,
    "contract": cmd_contract,
    "moments": cmd_moments,
    "holder": cmd_holder,
}


def run(config):
    """Validate ``config`` and run its command; returns the exit status."""
    try:
        cfg = validate(config)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for w in cfg["warnings"]:
        log.warning(w)
    try:
        return HANDLERS[cfg["command"]](cfg)
    except (InadmissibleStepError, ModelError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_VERDICT
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def build_parser():
    parser = argparse.ArgumentParser(prog="ltpe", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON file with settings; flags override it")
    parser.add_argument("--model")
    parser.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                        help="model parameter, e.g. --param K=8 (repeatable)")
    parser.add_argument("--theta", help="method parameter (comma list for density)")
    parser.add_argument("--h", help="step size(s), e.g. 2^-6,2^-7")
    parser.add_argument("--h-ref", dest="h_ref")
    parser.add_argument("--theta-ref", dest="theta_ref")
    parser.add_argument("--T")
    parser.add_argument("--M")
    parser.add_argument("--phi")
    parser.add_argument("--seed")
    parser.add_argument("--p")
    parser.add_argument("--kappa")
    parser.add_argument("--bins")
    parser.add_argument("--sub-steps", dest="sub_steps")
    parser.add_argument("--x0-a", dest="x0_a")
    parser.add_argument("--x0-b", dest="x0_b")
    parser.add_argument("--out")
    parser.add_argument("--svg")
    parser.add_argument("--threads")
    parser.add_argument("--force-h", dest="force_h", action="store_true", default=None)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    config = {}
    if args.config:
        try:
            with open(args.config) as fh:
                config.update(json.load(fh))
        except (OSError, ValueError) as exc:
            print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    config["command"] = args.command
    flags = {k: v for k, v in vars(args).items()
             if k not in ("command", "config", "param", "verbose") and v is not None}
    config.update(flags)
    if args.param:
        params = dict(config.get("model_params") or {})
        for item in args.param:
            key, sep, value = item.partition("=")
            if not sep:
                print(f"config error: --param expects KEY=VALUE, got {item!r}", file=sys.stderr)
                return EXIT_CONFIG
            params[key] = value
        config["model_params"] = params
    return run(config)


if __name__ == "__main__":
    sys.exit(main())

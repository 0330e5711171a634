"""Command-line entry point for the long-time SDE experiments.

Subcommands
-----------
convergence        coupled-path strong error over a step ladder, rate fit
moments            (E|Z_t|^2p)^(1/2p) trace with divergence tagging
contractivity      decay of the coupled two-point gap E|X_t - Y_t|^2p
check-assumptions  sampled certification of the structural conditions

Step sizes are given as exact rationals ("2^-7", "15/2^10", "1/8", "0.125")
and must be binary-representable, so the one-time float realization is exact
and all divisibility checks are literal. Results go to a CSV file (schema
below) plus a JSON sidecar; nothing in either depends on wall-clock time or
thread count, so identical configurations produce byte-identical outputs.

CSV schema: `#`-prefixed comment lines (tool version, config echo, seed),
then rows of  kind,model,scheme,p,h,t,value,std_error,n_paths,n_divergent
(the `t` column is empty for convergence and assumption rows).

Exit codes: 0 pass, 1 quantitative check failed, 2 usage error, 3 solver
failure. SDE_LONGTIME_THREADS overrides any configured worker count.
"""

from __future__ import annotations

import argparse
import csv
import importlib.util
import json
import re
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .analysis import (decay_slope, make_convergence_report, stationarity_gap)
from .errors import SolverFailure, UsageError
from .model import (SdeProblem, build_allen_cahn, build_ginzburg_landau,
                    check_contractive_monotone, check_poly_lipschitz,
                    max_feasible_pstar, theorem_admissible_p_max)
from .schemes import SchemeConfig, scheme_orders, step_ceiling
from .simulate import (contraction_experiment, moment_trace,
                       strong_error_experiment)

__all__ = ["ExperimentConfig", "parse_rational", "parse_config", "run", "main"]

COLUMNS = ("kind", "model", "scheme", "p", "h", "t", "value", "std_error",
           "n_paths", "n_divergent")

COMMANDS = ("convergence", "moments", "contractivity", "check-assumptions")

# Figure-style presets; flag and config-file values override preset entries.
PRESETS = {
    "gl-fig1": {
        "model": "gl", "scheme": "be", "T": "16",
        "h_list": "2^-3,2^-4,2^-5,2^-6,2^-7", "h_ref": "2^-12",
        "paths": "10000", "p": "1", "x0": "1",
    },
    "gl-fig2": {
        "model": "gl", "scheme": "pe", "T": "16",
        "h_list": "2^-3,2^-4,2^-5,2^-6,2^-7", "h_ref": "2^-12",
        "paths": "10000", "p": "1", "x0": "1",
    },
    "ac-fig3": {
        "model": "allen-cahn", "scheme": "be", "T": "30", "K": "4",
        "h_list": "15/2^6,15/2^7,15/2^8,15/2^9,15/2^10", "h_ref": "15/2^12",
        "paths": "5000", "p": "1", "x0": "1",
    },
    "ac-fig4": {
        "model": "allen-cahn", "scheme": "pe", "T": "30", "K": "4",
        "h_list": "15/2^6,15/2^7,15/2^8,15/2^9,15/2^10", "h_ref": "15/2^12",
        "paths": "5000", "p": "1", "x0": "1",
    },
}

_CONFIG_KEYS = ("preset", "model", "scheme", "T", "h_list", "h_ref", "h",
                "paths", "p", "seed", "threads", "output",
                "enforce_step_ceiling", "x0", "y0", "eta", "sigma", "theta",
                "K", "band", "r2_min")


def parse_rational(text: str) -> Fraction:
    """Parse an exact rational step size: 'a', 'a/b', '2^-k', or 'a/2^k'.

    Decimal strings are read as exact decimals ('0.125' -> 1/8), never through
    a float round trip.
    """
    t = str(text).strip()
    m = re.fullmatch(r"([+-]?\d+)\s*/\s*(\d+)\s*\^\s*([+-]?\d+)", t)
    if m:
        num, base, exp = int(m.group(1)), int(m.group(2)), int(m.group(3))
        return Fraction(num) / Fraction(base) ** exp
    m = re.fullmatch(r"(\d+)\s*\^\s*([+-]?\d+)", t)
    if m:
        return Fraction(int(m.group(1))) ** int(m.group(2))
    try:
        return Fraction(t)
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"cannot parse {text!r} as an exact rational") from exc


def _require_dyadic(fr: Fraction, what: str) -> float:
    """Binary representability: denominator must be a power of two."""
    den = fr.denominator
    if den & (den - 1) != 0:
        raise UsageError(
            f"{what}={fr} is not binary-representable (denominator {den} is "
            f"not a power of two); exact step arithmetic is impossible")
    value = float(fr)
    if Fraction(value) != fr:
        raise UsageError(f"{what}={fr} cannot be realized exactly as a float")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully validated description of one CLI run."""

    command: str
    model: str = "gl"
    scheme: str = "be"
    T: Optional[Fraction] = None
    h_list: tuple = ()            # Fractions, descending
    h_ref: Optional[Fraction] = None
    h: Optional[Fraction] = None
    n_paths: int = 1000
    p: float = 1.0
    master_seed: int = 0
    threads: Optional[int] = None
    output: Optional[str] = None
    enforce_step_ceiling: bool = False
    x0: tuple = (1.0,)
    y0: tuple = (0.0,)
    band: float = 0.1
    r2_min: float = 0.98
    model_params: dict = field(default_factory=dict)


def _parse_states(text) -> tuple:
    try:
        return tuple(float(v) for v in str(text).split(","))
    except ValueError as exc:
        raise UsageError(f"cannot parse state {text!r}") from exc


def _read_config_file(path: str) -> dict:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for ln, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{ln}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{ln}: unknown config key {key!r}")
        out[key] = value
    return out


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sde-longtime",
        description="Long-time strong approximation experiments for dissipative SDEs")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--preset", choices=sorted(PRESETS))
        sp.add_argument("--config", help="key=value file; flags override it")
        sp.add_argument("--model", help="gl | allen-cahn | custom:<file.py>")
        sp.add_argument("--scheme", choices=("em", "be", "pe"))
        sp.add_argument("--T")
        sp.add_argument("--h-list", dest="h_list",
                        help="comma-separated exact rationals")
        sp.add_argument("--h-ref", dest="h_ref")
        sp.add_argument("--h")
        sp.add_argument("--paths", type=int)
        sp.add_argument("--p", type=float)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--output")
        sp.add_argument("--enforce-step-ceiling", action="store_const",
                        const=True, dest="enforce_step_ceiling")
        sp.add_argument("--x0")
        sp.add_argument("--y0")
        sp.add_argument("--eta", type=float)
        sp.add_argument("--sigma", type=float)
        sp.add_argument("--theta", type=float)
        sp.add_argument("--K", type=int)
        sp.add_argument("--band", type=float)
        sp.add_argument("--r2-min", dest="r2_min", type=float)
    return parser


def parse_config(argv: Optional[Sequence[str]] = None) -> ExperimentConfig:
    """Merge preset < config file < flags into a validated ExperimentConfig."""
    args = _build_parser().parse_args(argv)
    file_values = _read_config_file(args.config) if args.config else {}
    preset_name = args.preset or file_values.pop("preset", None)
    if preset_name is not None and preset_name not in PRESETS:
        raise UsageError(f"unknown preset {preset_name!r}")
    file_values.pop("preset", None)
    merged: dict = dict(PRESETS[preset_name]) if preset_name else {}
    merged.update(file_values)
    for key in _CONFIG_KEYS:
        if key in ("preset",):
            continue
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val

    command = args.command
    model = str(merged.get("model", "gl"))
    scheme = str(merged.get("scheme", "be"))
    if scheme not in ("em", "be", "pe"):
        raise UsageError(f"unknown scheme {scheme!r}")
    if not (model in ("gl", "allen-cahn") or model.startswith("custom:")):
        raise UsageError(f"unknown model {model!r}")

    def frac(key):
        return parse_rational(merged[key]) if key in merged else None

    T = frac("T")
    h_ref = frac("h_ref")
    h = frac("h")
    h_list = ()
    if "h_list" in merged:
        raw = merged["h_list"]
        items = raw.split(",") if isinstance(raw, str) else list(raw)
        h_list = tuple(sorted({parse_rational(s) for s in items}, reverse=True))

    try:
        n_paths = int(merged.get("paths", 1000))
        p = float(merged.get("p", 1.0))
        seed = int(merged.get("seed", 0))
        band = float(merged.get("band", 0.1))
        r2_min = float(merged.get("r2_min", 0.98))
        threads = int(merged["threads"]) if "threads" in merged else None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid numeric option: {exc}") from exc
    enforce = merged.get("enforce_step_ceiling", False)
    if isinstance(enforce, str):
        if enforce.lower() in ("1", "true", "yes", "on"):
            enforce = True
        elif enforce.lower() in ("0", "false", "no", "off"):
            enforce = False
        else:
            raise UsageError(f"enforce_step_ceiling must be boolean, got {enforce!r}")

    model_params = {}
    for key, cast in (("eta", float), ("sigma", float), ("theta", float), ("K", int)):
        if key in merged:
            try:
                model_params[key] = cast(merged[key])
            except (TypeError, ValueError) as exc:
                raise UsageError(f"invalid {key}: {merged[key]!r}") from exc

    cfg = ExperimentConfig(
        command=command, model=model, scheme=scheme, T=T, h_list=h_list,
        h_ref=h_ref, h=h, n_paths=n_paths, p=p, master_seed=seed,
        threads=threads, output=merged.get("output"),
        enforce_step_ceiling=bool(enforce),
        x0=_parse_states(merged.get("x0", "1")),
        y0=_parse_states(merged.get("y0", "0")),
        band=band, r2_min=r2_min, model_params=model_params)
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: ExperimentConfig) -> None:
    if cfg.n_paths < 1:
        raise UsageError(f"paths must be >= 1, got {cfg.n_paths}")
    if cfg.p <= 0.0:
        raise UsageError(f"p must be positive, got {cfg.p}")
    if cfg.command == "check-assumptions":
        return
    if cfg.T is None or cfg.T <= 0:
        raise UsageError("T must be given and positive")
    _require_dyadic(cfg.T, "T")
    if cfg.command == "convergence":
        if not cfg.h_list or cfg.h_ref is None:
            raise UsageError("convergence needs --h-list and --h-ref")
        hr = cfg.h_ref
        if hr <= 0:
            raise UsageError(f"h_ref must be positive, got {hr}")
        _require_dyadic(hr, "h_ref")
        for hv in cfg.h_list:
            if hv <= 0:
                raise UsageError(f"h must be positive, got {hv}")
            _require_dyadic(hv, "h")
            if hv < hr:
                raise UsageError(f"h={hv} is below h_ref={hr}")
            ratio = hv / hr
            if ratio.denominator != 1:
                raise UsageError(f"h={hv} is not an integer multiple of h_ref={hr}")
            if cfg.enforce_step_ceiling and (ratio.numerator &
                                             (ratio.numerator - 1)) != 0:
                raise UsageError(
                    f"--enforce-step-ceiling requires a dyadic ladder; "
                    f"h={hv} is {ratio} x h_ref")
            if (cfg.T / hv).denominator != 1:
                raise UsageError(f"h={hv} does not divide T={cfg.T}")
        if (cfg.T / hr).denominator != 1:
            raise UsageError(f"h_ref={hr} does not divide T={cfg.T}")
    else:
        if cfg.h is None:
            raise UsageError(f"{cfg.command} needs --h")
        if cfg.h <= 0:
            raise UsageError(f"h must be positive, got {cfg.h}")
        _require_dyadic(cfg.h, "h")
        if (cfg.T / cfg.h).denominator != 1:
            raise UsageError(f"h={cfg.h} does not divide T={cfg.T}")
    if cfg.command == "contractivity" and tuple(cfg.x0) == tuple(cfg.y0):
        raise UsageError("contractivity needs distinct --x0 and --y0")


def build_problem(cfg: ExperimentConfig) -> SdeProblem:
    params = cfg.model_params
    if cfg.model == "gl":
        return build_ginzburg_landau(eta=params.get("eta", -1.5),
                                     sigma=params.get("sigma", 1.0),
                                     theta=params.get("theta", 1.0))
    if cfg.model == "allen-cahn":
        return build_allen_cahn(K=params.get("K", 4))
    path = cfg.model.split(":", 1)[1]
    spec = importlib.util.spec_from_file_location("sde_longtime_custom", path)
    if spec is None or spec.loader is None:
        raise UsageError(f"cannot load custom model from {path}")
    mod = importlib.util.module_from_spec(spec)
    try:
        spec.loader.exec_module(mod)
    except OSError as exc:
        raise UsageError(f"cannot load custom model from {path}: {exc}") from exc
    problem = getattr(mod, "PROBLEM", None)
    if not isinstance(problem, SdeProblem):
        raise UsageError(f"{path} must define PROBLEM as an SdeProblem")
    return problem


def _state_for(problem: SdeProblem, values: tuple):
    if len(values) == 1:
        return values[0]
    arr = np.asarray(values, dtype=float)
    if arr.shape != (problem.d,):
        raise UsageError(
            f"state has {arr.size} components, problem needs {problem.d}")
    return arr


def _config_echo(cfg: ExperimentConfig) -> str:
    parts = [f"command={cfg.command}", f"model={cfg.model}",
             f"scheme={cfg.scheme}", f"seed={cfg.master_seed}",
             f"paths={cfg.n_paths}", f"p={cfg.p:g}"]
    if cfg.T is not None:
        parts.append(f"T={cfg.T}")
    if cfg.h_list:
        parts.append("h_list=" + ",".join(str(h) for h in cfg.h_list))
    if cfg.h_ref is not None:
        parts.append(f"h_ref={cfg.h_ref}")
    if cfg.h is not None:
        parts.append(f"h={cfg.h}")
    if cfg.x0:
        parts.append("x0=" + ",".join(f"{v:g}" for v in cfg.x0))
    if cfg.command == "contractivity":
        parts.append("y0=" + ",".join(f"{v:g}" for v in cfg.y0))
    for k in sorted(cfg.model_params):
        parts.append(f"{k}={cfg.model_params[k]:g}")
    if cfg.enforce_step_ceiling:
        parts.append("enforce_step_ceiling=true")
    return " ".join(parts)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_outputs(cfg: ExperimentConfig, rows, sidecar: dict) -> Path:
    out = cfg.output or f"{cfg.command.replace('-', '_')}_{cfg.model}_{cfg.scheme}.csv"
    path = Path(out)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# sde-longtime {__version__}\n")
        fh.write(f"# {_config_echo(cfg)}\n")
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in COLUMNS])
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _enforce_ceiling(cfg: ExperimentConfig, problem: SdeProblem, hs) -> None:
    if not cfg.enforce_step_ceiling:
        return
    ceiling = step_ceiling(cfg.scheme, cfg.p, problem.constants.alpha1)
    for hv in hs:
        if float(hv) > ceiling * (1.0 + 1e-12):
            raise UsageError(
                f"h={hv} exceeds the {cfg.scheme} theorem ceiling {ceiling:g}")


def run(cfg: ExperimentConfig) -> int:
    """Execute a validated configuration; returns the process exit code."""
    problem = build_problem(cfg)
    scheme_cfg = SchemeConfig(variant=cfg.scheme)
    base = {"model": problem.name, "scheme": cfg.scheme, "p": cfg.p}
    echo = {"config": _config_echo(cfg), "version": __version__}

    if cfg.command == "convergence":
        _enforce_ceiling(cfg, problem, cfg.h_list)
        curve = strong_error_experiment(
            problem, scheme_cfg, T=float(cfg.T),
            h_list=[float(h) for h in cfg.h_list], h_ref=float(cfg.h_ref),
            n_paths=cfg.n_paths, p=cfg.p, master_seed=cfg.master_seed,
            x0=_state_for(problem, cfg.x0), threads=cfg.threads)
        report = make_convergence_report(
            curve, scheme_orders(cfg.scheme), band=cfg.band, r2_min=cfg.r2_min,
            residual_tol=scheme_cfg.newton.residual_tol,
            constants=problem.constants)
        rows = [dict(base, kind="convergence", h=h, value=e.value,
                     std_error=e.std_error, n_paths=e.n_paths,
                     n_divergent=e.n_divergent)
                for h, e in zip(curve.hs, curve.estimates)]
        _write_outputs(cfg, rows, dict(echo, report=report.to_dict()))
        return 0 if report.passed else 1

    if cfg.command in ("moments", "contractivity"):
        h = float(cfg.h)
        if cfg.command == "moments":
            if cfg.enforce_step_ceiling:
                _enforce_ceiling(cfg, problem, [cfg.h])
            times, ests = moment_trace(
                problem, scheme_cfg, T=float(cfg.T), h=h, n_paths=cfg.n_paths,
                p=cfg.p, master_seed=cfg.master_seed,
                x0=_state_for(problem, cfg.x0), threads=cfg.threads)
            kind = "moments"
        else:
            _enforce_ceiling(cfg, problem, [cfg.h])
            times, ests = contraction_experiment(
                problem, scheme_cfg, T=float(cfg.T), h=h, n_paths=cfg.n_paths,
                p=cfg.p, master_seed=cfg.master_seed,
                x0=_state_for(problem, cfg.x0),
                y0=_state_for(problem, cfg.y0), threads=cfg.threads)
            kind = "contractivity"
        rows = [dict(base, kind=kind, h=h, t=float(t), value=e.value,
                     std_error=e.std_error, n_paths=e.n_paths,
                     n_divergent=e.n_divergent)
                for t, e in zip(times, ests)]
        values = [e.value for e in ests]
        summary = {
            "times": [float(t) for t in times],
            "values": values,
            "std_errors": [e.std_error for e in ests],
            "n_divergent": [e.n_divergent for e in ests],
        }
        if cfg.command == "moments":
            gap, sup, ratio = stationarity_gap(times, values)
            n_div = max(e.n_divergent for e in ests)
            passed = (n_div == 0) and (ratio <= 0.10)
            summary["stationarity"] = {"gap": gap, "sup": sup, "ratio": ratio}
            summary["max_divergent"] = n_div
        else:
            slope2p = 2.0 * cfg.p * decay_slope(times, values)
            threshold = -2.0 * cfg.p * problem.constants.alpha1 + 0.1
            passed = slope2p <= threshold
            summary["decay_slope_2p"] = slope2p
            summary["threshold"] = threshold
        summary["passed"] = bool(passed)
        _write_outputs(cfg, rows, dict(echo, **{kind: summary}))
        return 0 if passed else 1

    # check-assumptions
    mono = check_contractive_monotone(problem)
    poly = check_poly_lipschitz(problem)
    pmax = max_feasible_pstar(problem)
    rows = [
        dict(base, kind="assumption-contractive_monotone",
             p=problem.constants.p_star, value=mono.worst_margin,
             n_paths=mono.n_pairs),
        dict(base, kind="assumption-polynomial_lipschitz",
             p=problem.constants.p_star, value=poly.worst_margin,
             n_paths=poly.n_pairs),
        dict(base, kind="assumption-max_feasible_pstar",
             p=problem.constants.p_star, value=pmax, n_paths=mono.n_pairs),
    ]
    passed = mono.passed and poly.passed
    sidecar = dict(echo, assumptions={
        "contractive_monotone": {"worst_margin": mono.worst_margin,
                                 "passed": mono.passed, "n_pairs": mono.n_pairs},
        "polynomial_lipschitz": {"worst_margin": poly.worst_margin,
                                 "passed": poly.passed, "n_pairs": poly.n_pairs,
                                 "c2": poly.c2, "c3": poly.c3},
        "max_feasible_pstar": pmax,
        "claimed": {"alpha1": problem.constants.alpha1,
                    "p_star": problem.constants.p_star,
                    "kappa": problem.constants.kappa,
                    "c1": problem.constants.c1,
                    "beta1": problem.constants.beta1},
        "p_max_theorem": theorem_admissible_p_max(problem.constants),
        "passed": passed,
    })
    _write_outputs(cfg, rows, sidecar)
    return 0 if passed else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cfg = parse_config(argv)
        return run(cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

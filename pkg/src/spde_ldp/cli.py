"""Config-driven command line front end.

Usage::

    spde-ldp <simulate|skeleton|steady|rate|estimate|validate> --config run.yaml [--out DIR]
             [--workers K] [--mode exact|euler|picard|closed-form] [--cross-check]

Every run writes its outputs plus ``manifest.json`` (config hash, seed,
package versions and output file hashes) into the output directory. Exit
codes: 0 ok, 2 config error, 3 unattainable event, 4 solver failure,
5 validation failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .coefficients import PollutantCoefficients, verify_conditions
from .dynamics import (
    BlowUpError,
    ConvergenceError,
    energy_residual,
    simulate_euler,
    simulate_exact,
    skeleton_closed_form,
    solve_skeleton_picard,
    steady_state,
)
from .ldp import (
    EndpointEvent,
    EndpointKernel,
    estimate_is,
    ldp_diagnostic,
    rate_endpoint_dual,
    rate_endpoint_grid,
    write_control_table,
    write_table,
)
from .marks import IntegrabilityError
from .prm import Constant, JumpPath, Tabulated, entropy_inequalities, sample_batch, stream
from .spectral import ModelParams, basis_matrix, density, sobolev_norm_sq

log = logging.getLogger("spde_ldp")

EXIT_OK, EXIT_CONFIG, EXIT_UNATTAINABLE, EXIT_SOLVER, EXIT_VALIDATION = 0, 2, 3, 4, 5
MODES = ("exact", "euler", "picard", "closed-form")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


# ------------------------------------------------------------------- config


@dataclass
class RunConfig:
    raw: dict
    text: bytes
    model: ModelParams | None
    model_error: IntegrabilityError | None
    numerics: dict
    event: dict | None
    estimation: dict
    control: dict | None
    output: Path

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text).hexdigest()

    def horizon(self) -> float:
        return float(self.event["horizon"]) if self.event else self.numerics["horizon"]

    def require_model(self) -> ModelParams:
        if self.model is None:
            raise ConfigError(f"model.sources: {self.model_error}")
        return self.model

    def require_seed(self) -> int:
        seed = self.estimation.get("seed")
        if seed is None:
            raise ConfigError("estimation.seed: required (no clock-based default)")
        return seed

    def epsilons(self) -> list[float]:
        eps = self.estimation.get("epsilons")
        if eps is None:
            raise ConfigError("estimation.epsilons: required for this command")
        return eps


def _number(section, key, value, lo=None, hi=None, lo_open=False, integer=False):
    where = f"{section}.{key}"
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    v = int(value) if integer else float(value)
    if not math.isfinite(v):
        raise ConfigError(f"{where}: must be finite")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"{where}: must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(f"{where}: must be <= {hi}, got {v}")
    return v


def _section(raw, name, required=False):
    sec = raw.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"{name}: section missing")
        return None
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected a mapping")
    return sec


def _parse_model(sec):
    for key in ("D", "alpha", "ell"):
        if key not in sec:
            raise ConfigError(f"model.{key}: required")
    _number("model", "D", sec["D"], lo=0, lo_open=True)
    _number("model", "V", sec.get("V", 0.0))
    _number("model", "alpha", sec["alpha"], lo=0)
    ell = _number("model", "ell", sec["ell"], lo=0, lo_open=True)
    sources = sec.get("sources", [])
    if not isinstance(sources, list) or not sources:
        raise ConfigError("model.sources: expected a nonempty list")
    for k, s in enumerate(sources):
        where = f"model.sources[{k}]"
        if not isinstance(s, dict) or not {"kappa", "f", "marks"} <= set(s):
            raise ConfigError(f"{where}: needs kappa, f and marks")
        _number(where, "kappa", s["kappa"], lo=0, hi=ell)
        _number(where, "f", s["f"], lo=0, lo_open=True)
        if not isinstance(s["marks"], dict) or "type" not in s["marks"]:
            raise ConfigError(f"{where}.marks: needs a type")
    try:
        return ModelParams.from_dict(sec), None
    except IntegrabilityError as exc:
        return None, exc
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"model: {exc}") from exc


def _parse_numerics(sec):
    sec = dict(sec or {})
    out = {
        "d_modes": _number("numerics", "d_modes", sec.get("d_modes", 64), lo=0, hi=4096, integer=True),
        "dt": _number("numerics", "dt", sec.get("dt", 1e-3), lo=0, lo_open=True),
        "tol": _number("numerics", "tol", sec.get("tol", 1e-12), lo=0, lo_open=True),
        "grid": _number("numerics", "grid", sec.get("grid", 100), lo=1, integer=True),
        "horizon": _number("numerics", "horizon", sec.get("horizon", 1.0), lo=0, lo_open=True),
        "initial": sec.get("initial", "steady"),
        "time_bins": _number("numerics", "time_bins", sec.get("time_bins", 64), lo=2, integer=True),
        "mark_bins": _number("numerics", "mark_bins", sec.get("mark_bins", 64), lo=2, integer=True),
    }
    if out["initial"] not in ("steady", "zero"):
        raise ConfigError("numerics.initial: must be 'steady' or 'zero'")
    unknown = set(sec) - set(out)
    if unknown:
        raise ConfigError(f"numerics: unknown keys {sorted(unknown)}")
    return out


def _parse_event(sec):
    if sec is None:
        return None
    test = sec.get("test")
    if not isinstance(test, list) or not test:
        raise ConfigError("event.test: expected a nonempty list of mode coefficients")
    for k, v in enumerate(test):
        _number("event", f"test[{k}]", v)
    if ("level" in sec) == ("level_offset" in sec):
        raise ConfigError("event: give exactly one of level or level_offset")
    key = "level" if "level" in sec else "level_offset"
    value = _number("event", key, sec[key])
    direction = sec.get("direction", ">=")
    if direction not in (">=", "<="):
        raise ConfigError("event.direction: must be '>=' or '<='")
    horizon = _number("event", "horizon", sec.get("horizon", 1.0), lo=0, lo_open=True)
    return {"test": [float(v) for v in test], key: value, "direction": direction, "horizon": horizon}


def _parse_estimation(sec):
    sec = dict(sec or {})
    out = {}
    if "seed" in sec:
        out["seed"] = _number("estimation", "seed", sec["seed"], lo=0, integer=True)
    if "epsilon" in sec and "epsilons" in sec:
        raise ConfigError("estimation: give epsilon or epsilons, not both")
    if "epsilon" in sec:
        sec["epsilons"] = [sec["epsilon"]]
    if "epsilons" in sec:
        eps = sec["epsilons"]
        if not isinstance(eps, list) or not eps:
            raise ConfigError("estimation.epsilons: expected a nonempty list")
        out["epsilons"] = [_number("estimation", f"epsilons[{k}]", v, lo=0, lo_open=True)
                           for k, v in enumerate(eps)]
    if "n_samples" in sec:
        out["n_samples"] = _number("estimation", "n_samples", sec["n_samples"], lo=100, integer=True)
    out["n_paths"] = _number("estimation", "n_paths", sec.get("n_paths", 1), lo=1, integer=True)
    method = sec.get("method", "is")
    if method not in ("is", "plain"):
        raise ConfigError("estimation.method: must be 'is' or 'plain'")
    out["method"] = method
    return out


def _parse_control(sec):
    if sec is None:
        return None
    kind = sec.get("type")
    if kind == "constant":
        _number("control", "theta", sec.get("theta"), lo=0, lo_open=True)
    elif kind == "tabulated":
        for key in ("time_edges", "mark_edges", "values", "bound"):
            if key not in sec:
                raise ConfigError(f"control.{key}: required for tabulated controls")
    elif kind != "optimal":
        raise ConfigError("control.type: must be constant, tabulated or optimal")
    return dict(sec)


def load_config(path, out_override=None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    text = path.read_bytes()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a mapping of sections")
    unknown = set(raw) - {"model", "numerics", "event", "estimation", "control", "output"}
    if unknown:
        raise ConfigError(f"top level: unknown sections {sorted(unknown)}")
    model, model_error = _parse_model(_section(raw, "model", required=True))
    out_sec = _section(raw, "output") or {}
    directory = out_override or out_sec.get("directory")
    if directory is None:
        raise ConfigError("output.directory: required (or pass --out)")
    return RunConfig(raw, text, model, model_error, _parse_numerics(_section(raw, "numerics")),
                     _parse_event(_section(raw, "event")), _parse_estimation(_section(raw, "estimation")),
                     _parse_control(_section(raw, "control")), Path(directory))


# ------------------------------------------------------------------ helpers


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def _initial_state(cfg, params, d):
    return steady_state(params, d) if cfg.numerics["initial"] == "steady" else np.zeros(d + 1)


def _event(cfg, params) -> EndpointEvent:
    if cfg.event is None:
        raise ConfigError("event: section required for this command")
    ev = cfg.event
    if "level" in ev:
        level = ev["level"]
    else:
        probe = EndpointEvent(np.array(ev["test"]), 0.0, ev["direction"], ev["horizon"])
        d = cfg.numerics["d_modes"]
        u0 = _initial_state(cfg, params, d)
        level = EndpointKernel(probe, params, d, u0).nominal() + ev["level_offset"]
    return EndpointEvent(np.array(ev["test"]), level, ev["direction"], ev["horizon"])


def _control(cfg, params, T, rate_result=None):
    chosen = cfg.control
    if chosen is None:
        return None
    kind = chosen["type"]
    if kind == "constant":
        return Constant(float(chosen["theta"]), T)
    if kind == "tabulated":
        try:
            ctrl = Tabulated(np.asarray(chosen["time_edges"], float), np.asarray(chosen["mark_edges"], float),
                             np.asarray(chosen["values"], float), float(chosen["bound"]))
        except ValueError as exc:
            raise ConfigError(f"control: {exc}") from exc
        if abs(ctrl.horizon - T) > 1e-12 * max(1.0, T):
            raise ConfigError("control.time_edges: last edge must equal the horizon")
        if ctrl.values.shape[1] != params.n_sources:
            raise ConfigError("control.values: second axis must match the number of sources")
        return ctrl
    return None if rate_result is None else rate_result.control


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(cfg: RunConfig, command: str, out: Path, files, extra=None) -> Path:
    """Replay record: the config itself, its hash, seed, versions and output hashes."""
    manifest = {
        "command": command,
        "config_sha256": cfg.sha256,
        "config": cfg.raw,
        "seed": cfg.estimation.get("seed"),
        "versions": {"spde_ldp": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "files": {Path(f).name: _file_hash(Path(f)) for f in sorted(files)},
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_json_safe(data), indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------- commands


def cmd_simulate(cfg: RunConfig, mode: str = "exact", workers: int = 1) -> tuple[int, list[Path]]:
    params = cfg.require_model()
    seed = cfg.require_seed()
    eps = cfg.epsilons()[0]
    if mode not in ("exact", "euler"):
        raise ConfigError("--mode: simulate supports exact or euler")
    d, T = cfg.numerics["d_modes"], cfg.horizon()
    u0 = _initial_state(cfg, params, d)
    ctrl = _control(cfg, params, T)
    if cfg.control is not None and cfg.control["type"] == "optimal":
        ctrl = rate_endpoint_dual(_event(cfg, params), params, d_modes=d, u0=u0).control
    op = PollutantCoefficients(params, d)

    def one(k):
        _, t, i, a = sample_batch(params, eps, T, 1, stream(seed, k), ctrl)
        jp = JumpPath(t, i, a, T, eps)
        if mode == "exact":
            path = simulate_exact(params, eps, u0, T, cfg.numerics["grid"], jumps=jp)
        else:
            path = simulate_euler(op, eps, u0, T, cfg.numerics["dt"], jumps=jp)
        return path, jp

    n = cfg.estimation["n_paths"]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(n)))
    else:
        results = [one(k) for k in range(n)]
    files = []
    for k, (path, jp) in enumerate(results):
        p_file, j_file = cfg.output / f"path_{k:04d}.csv", cfg.output / f"jumps_{k:04d}.csv"
        path.to_csv(p_file)
        jp.to_csv(j_file)
        files += [p_file, j_file]
    return EXIT_OK, files


def cmd_skeleton(cfg: RunConfig, mode: str = "closed-form", workers: int = 1) -> tuple[int, list[Path]]:
    params = cfg.require_model()
    d, T = cfg.numerics["d_modes"], cfg.horizon()
    u0 = _initial_state(cfg, params, d)
    ctrl = _control(cfg, params, T)
    if ctrl is None:
        if cfg.event is not None:
            res = rate_endpoint_dual(_event(cfg, params), params, d_modes=d, u0=u0)
            if not res.attainable:
                return EXIT_UNATTAINABLE, []
            ctrl = res.control
        else:
            ctrl = Constant(1.0, T)
    if mode == "picard":
        path = solve_skeleton_picard(ctrl, PollutantCoefficients(params, d), u0, T, d,
                                     cfg.numerics["dt"], tol=cfg.numerics["tol"])
    elif mode == "closed-form":
        if cfg.numerics["initial"] != "steady":
            raise ConfigError("numerics.initial: closed-form skeleton starts from the steady state")
        path = skeleton_closed_form(ctrl, params, T, cfg.numerics["grid"], d)
    else:
        raise ConfigError("--mode: skeleton supports picard or closed-form")
    out = cfg.output / "skeleton.csv"
    path.to_csv(out)
    return EXIT_OK, [out]


def cmd_steady(cfg: RunConfig, mode=None, workers: int = 1) -> tuple[int, list[Path]]:
    params = cfg.require_model()
    d = cfg.numerics["d_modes"]
    u = steady_state(params, d)
    coeff = cfg.output / "steady_coefficients.csv"
    with open(coeff, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "coefficient"])
        for j, v in enumerate(u):
            w.writerow([j, _fmt(v)])
    x = np.linspace(0.0, params.ell, cfg.numerics["grid"] + 1)
    profile = cfg.output / "steady_profile.csv"
    values = basis_matrix(x, d, params) @ u
    with open(profile, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "u"])
        for xv, v in zip(x, values):
            w.writerow([_fmt(xv), _fmt(v)])
    return EXIT_OK, [coeff, profile]


def cmd_rate(cfg: RunConfig, cross_check: bool = False, **_) -> tuple[int, list[Path]]:
    params = cfg.require_model()
    d = cfg.numerics["d_modes"]
    u0 = _initial_state(cfg, params, d)
    event = _event(cfg, params)
    res = rate_endpoint_dual(event, params, d_modes=d, tol=cfg.numerics["tol"], u0=u0)
    report = {"dual": res.to_report()}
    files = []
    if cross_check:
        grid = rate_endpoint_grid(event, params, time_bins=cfg.numerics["time_bins"],
                                  mark_bins=cfg.numerics["mark_bins"], d_modes=d, u0=u0)
        report["grid"] = grid.to_report()
        if res.attainable and grid.attainable:
            gap = abs(res.rate - grid.rate) / max(res.rate, 1e-12)
            report["relative_gap"] = gap
            print(f"dual I = {res.rate:.17g}  grid I = {grid.rate:.17g}  relative gap = {gap:.3e}")
    rpt = cfg.output / "rate_report.json"
    _write_json(rpt, report)
    files.append(rpt)
    if not res.attainable:
        log.error("event level %s is not attainable with controls bounded by 1e6", event.level)
        return EXIT_UNATTAINABLE, files
    ctrl = cfg.output / "optimal_control.csv"
    write_control_table(res, ctrl, n_times=cfg.numerics["grid"] + 1)
    files.append(ctrl)
    print(f"I = {res.rate:.17g}  beta = {res.beta:.17g}")
    return EXIT_OK, files


def cmd_estimate(cfg: RunConfig, workers: int = 1, **_) -> tuple[int, list[Path]]:
    params = cfg.require_model()
    seed = cfg.require_seed()
    eps = cfg.epsilons()
    if "n_samples" not in cfg.estimation:
        raise ConfigError("estimation.n_samples: required for estimate")
    d = cfg.numerics["d_modes"]
    u0 = _initial_state(cfg, params, d)
    event = _event(cfg, params)
    rate = rate_endpoint_dual(event, params, d_modes=d, tol=cfg.numerics["tol"], u0=u0)
    plain = cfg.estimation["method"] == "plain"
    control = _control(cfg, params, event.horizon, rate) if cfg.control else rate.control
    if not plain and control is None:
        log.error("event is unattainable; no optimal control for importance sampling")
        return EXIT_UNATTAINABLE, []
    rows = ldp_diagnostic(event, params, eps, cfg.estimation["n_samples"], seed, d_modes=d, u0=u0,
                          workers=workers, control=control, plain=plain, rate=rate)
    out = cfg.output / "ldp_table.csv"
    write_table(rows, out)
    for r in rows:
        print(f"eps={r['epsilon']:g}  p_hat={r['p_hat']:.6e}  -eps log p={r['neg_eps_log_p']:.6f}  "
              f"I={r['rate']:.6f}  gap={r['gap']:.4f}")
    return EXIT_OK, [out]


def _gram_check(params, modes=16, panels=10_000):
    x = np.linspace(0.0, params.ell, panels + 1)
    w = np.full(panels + 1, 2.0)
    w[1:-1:2] = 4.0
    w[0] = w[-1] = 1.0
    w *= (x[1] - x[0]) / 3.0 * density(x, params)
    B = basis_matrix(x, modes, params)
    return float(np.max(np.abs(B.T @ (w[:, None] * B) - np.eye(modes + 1))))


def cmd_validate(cfg: RunConfig, workers: int = 1, **_) -> tuple[int, list[Path]]:
    checks = []

    def record(name, passed, **measured):
        checks.append({"check": name, "passed": bool(passed), **measured})
        print(f"{'PASS' if passed else 'FAIL'}  {name}  " + "  ".join(f"{k}={v}" for k, v in measured.items()))

    if cfg.model is None:
        record("mark_integrability", False, explanation=str(cfg.model_error))
    else:
        params = cfg.model
        d = cfg.numerics["d_modes"]
        seed = cfg.estimation.get("seed", 0)
        gram = _gram_check(params)
        record("orthonormality", gram <= 1e-8, max_deviation=gram)
        op = PollutantCoefficients(params, d)
        u0 = steady_state(params, d) if params.alpha > 0 else np.zeros(d + 1)
        rng = stream(seed, 0)
        samples = [(float(rng.uniform(0, 1)), u0 + rng.standard_normal(d + 1) / (1.0 + np.arange(d + 1)),
                    u0 + rng.standard_normal(d + 1) / (1.0 + np.arange(d + 1))) for _ in range(32)]
        rep = verify_conditions(op, samples)
        finite = all(math.isfinite(v) for v in (rep.coercivity_K, rep.growth_K, rep.monotonicity_K))
        record("coefficient_conditions", finite and rep.exp_integrable,
               coercivity_K=rep.coercivity_K, growth_K=rep.growth_K, monotonicity_K=rep.monotonicity_K,
               mark_deltas=rep.mark_deltas)
        if params.alpha > 0:
            res = float(np.sqrt(sobolev_norm_sq(op.drift(0.0, u0), -2, params)))
            record("steady_state_residual", res <= 1e-12, norm_minus2=res)
        # jump-free energy balance on a smooth decaying path
        v0 = np.zeros(d + 1)
        v0[: min(4, d + 1)] = 1.0
        T = cfg.horizon()
        path = simulate_exact(params, 1.0, v0, T, 20_000, jumps=JumpPath.empty(T, 1.0))
        res = energy_residual(path, None, op, 1.0)
        record("energy_identity", res <= 1e-8, residual=res)
        ineq = entropy_inequalities(10_000, seed)
        record("entropy_inequalities", ineq.passed, violations=ineq.young_violations,
               c1=ineq.c1_envelope, c2=ineq.c2_envelope)
        if cfg.event is not None:
            event = _event(cfg, params)
            rate = rate_endpoint_dual(event, params, d_modes=d, u0=steady_state(params, d))
            ctrl = rate.control if rate.attainable and rate.rate > 0 else Constant(2.0, event.horizon)
        else:
            event = EndpointEvent(np.array([1.0]), 0.0, ">=", cfg.horizon())
            ctrl = Constant(2.0, event.horizon)
        eps = cfg.estimation.get("epsilons", [0.05])[0]
        est = estimate_is(event, ctrl, params, eps, 10_000, seed, d_modes=d, workers=workers)
        z = abs(est.mean_weight - 1.0) / est.weight_std_err if est.weight_std_err > 0 else 0.0
        record("girsanov_mean_one", z <= 3.0, mean_weight=est.mean_weight, std_err=est.weight_std_err)
    out = cfg.output / "validation_report.json"
    _write_json(out, {"checks": checks, "passed": all(c["passed"] for c in checks)})
    return (EXIT_OK if all(c["passed"] for c in checks) else EXIT_VALIDATION), [out]


COMMANDS = {"simulate": cmd_simulate, "skeleton": cmd_skeleton, "steady": cmd_steady,
            "rate": cmd_rate, "estimate": cmd_estimate, "validate": cmd_validate}
DEFAULT_MODE = {"simulate": "exact", "skeleton": "closed-form"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spde-ldp", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="YAML run configuration")
    ap.add_argument("--out", help="output directory (overrides output.directory)")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--mode", choices=MODES)
    ap.add_argument("--cross-check", action="store_true", help="rate: also solve the grid program")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers: must be >= 1")
        cfg = load_config(args.config, args.out)
        if cfg.model is None and args.command != "validate":
            cfg.require_model()
        cfg.output.mkdir(parents=True, exist_ok=True)
        fn = COMMANDS[args.command]
        kwargs = {"workers": args.workers}
        if args.command in DEFAULT_MODE:
            kwargs["mode"] = args.mode or DEFAULT_MODE[args.command]
        elif args.mode is not None:
            raise ConfigError(f"--mode: not used by {args.command}")
        if args.command == "rate":
            kwargs["cross_check"] = args.cross_check
        code, files = fn(cfg, **kwargs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, BlowUpError, RuntimeError, OverflowError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_manifest(cfg, args.command, cfg.output, files, {"exit_code": code})
    return code


if __name__ == "__main__":
    sys.exit(main())

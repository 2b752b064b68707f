"""Command line experiment runner.

Subcommands: ``hinf``, ``membership``, ``optimize``, ``game``, ``modelfree``
and ``case-list``. Configuration comes from a JSON file (``--config``) and
command line overrides. Exit codes: 0 success, 2 configuration error,
3 infeasibility, 4 non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cases as cases_mod
from .errors import (
    ConfigError,
    FeasibilityViolation,
    InfeasibleError,
    InstabilityError,
    MixedPOError,
    NonConvergenceError,
    SearchFailure,
)
from .lqgame import GameSpec, solve_gare
from .norms import hinf_bisect, hinf_grid, membership
from .plant import TIME_DOMAINS, Plant
from .polgrad import OptimizerConfig, find_feasible_init, run_optimizer
from .riccati import solve_optimal
from .zeroth import MODES, VARIANTS, RolloutConfig, outer_ng

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NONCONVERGENCE = 0, 2, 3, 4
CSV_HEADER = ["trial", "iteration", "cost", "grad_norm_sq", "hinf", "brl_margin", "wall_clock_seconds"]
MATRIX_KEYS = ("A", "B", "Q", "R", "C", "E", "D")
REFERENCE_TOL = 1e-4

_ALGO_KEYS = {"kind", "stepsize", "cost_form", "tol", "max_iter", "stop_rule", "cost_ref",
              "freeze_stepsize", "backtracking", "max_backtracks"}
_MF_KEYS = {"mode", "variant", "m_traj", "horizon", "radius", "n_outer", "n_inner", "eta", "alpha",
            "tol"}
_TOP_KEYS = {"case", "time_domain", "gamma", "seed", "trials", "output_path", "algorithm",
             "gain", "hinf_every", "modelfree"} | set(MATRIX_KEYS)


@dataclass
class ExperimentConfig:
    """Validated experiment settings."""

    case: str
    time_domain: str
    plant: Plant | None
    gamma_slack: float | None
    init_box: float
    algorithm: dict
    seed: int = 0
    trials: int = 1
    output_path: str | None = None
    gain: object = None
    hinf_every: int = 1
    modelfree: dict = field(default_factory=dict)
    gains: dict = field(default_factory=dict)


def _matrix(value, name):
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a nested list of numbers") from exc
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2:
        raise ConfigError(f"{name} must be a matrix (nested list)")
    return M


def build_config(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a configuration dictionary.

    Raises
    ------
    ConfigError
        Unknown keys, missing matrices, or matrix overrides on a built-in
        case.
    """
    raw = dict(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    name = raw.get("case")
    if name is None:
        raise ConfigError("configuration needs a 'case'")
    if name not in cases_mod.BUILTIN_NAMES:
        raise ConfigError(f"unknown case {name!r}; choose from {list(cases_mod.BUILTIN_NAMES)}")
    gamma = raw.get("gamma")
    if gamma is not None and not (isinstance(gamma, (int, float)) and gamma > 0):
        raise ConfigError("gamma must be a positive number")
    try:
        seed = int(raw.get("seed", 0))
        trials = int(raw.get("trials", 1))
        hinf_every = int(raw.get("hinf_every", 1))
    except (TypeError, ValueError) as exc:
        raise ConfigError("seed, trials and hinf_every must be integers") from exc
    if seed < 0 or trials < 1 or hinf_every < 0:
        raise ConfigError("seed must be >= 0, trials >= 1, hinf_every >= 0")
    algo = dict(raw.get("algorithm") or {})
    if set(algo) - _ALGO_KEYS:
        raise ConfigError(f"unknown algorithm keys: {sorted(set(algo) - _ALGO_KEYS)}")
    mf = dict(raw.get("modelfree") or {})
    if set(mf) - _MF_KEYS:
        raise ConfigError(f"unknown modelfree keys: {sorted(set(mf) - _MF_KEYS)}")
    present = [k for k in MATRIX_KEYS if k in raw]
    gains = {}
    if name == "custom":
        td = raw.get("time_domain", "discrete")
        if td not in TIME_DOMAINS:
            raise ConfigError(f"time_domain must be one of {TIME_DOMAINS}")
        if gamma is None:
            raise ConfigError("custom case needs gamma")
        missing = [k for k in ("A", "B", "D") if k not in raw]
        if "Q" not in raw and "C" not in raw:
            missing.append("Q or C")
        if "R" not in raw and "E" not in raw:
            missing.append("R or E")
        if missing:
            raise ConfigError(f"custom case is missing {missing}")
        A, B, D = (_matrix(raw[k], k) for k in ("A", "B", "D"))
        try:
            if "C" in raw or "E" in raw:
                if not ("C" in raw and "E" in raw):
                    raise ConfigError("give both C and E, or Q and R")
                plant = Plant.from_output_matrices(A, B, _matrix(raw["C"], "C"), _matrix(raw["E"], "E"), D, gamma)
            else:
                plant = Plant(A, B, _matrix(raw["Q"], "Q"), _matrix(raw["R"], "R"), D, gamma)
        except (ValueError, MixedPOError) as exc:
            raise ConfigError(f"invalid custom plant: {exc}") from exc
        slack, box = None, float(raw.get("init_box", 1.0))
    else:
        if present:
            raise ConfigError(f"built-in case {name!r} does not accept matrix overrides {present}")
        if "time_domain" in raw:
            raise ConfigError("built-in cases fix their own time_domain")
        case = cases_mod.get_case(name)
        td = case.time_domain
        gains = case.gains
        slack = case.gamma_slack if gamma is None else None
        if gamma is None and case.gamma is None:
            plant = None
        else:
            plant = case.plant(gamma)
        box = case.init_box
    return ExperimentConfig(
        case=name, time_domain=td, plant=plant, gamma_slack=slack, init_box=box,
        algorithm=algo, seed=seed, trials=trials, output_path=raw.get("output_path"),
        gain=raw.get("gain"), hinf_every=hinf_every, modelfree=mf, gains=gains,
    )


def load_config(path: str | None, overrides: dict) -> ExperimentConfig:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    return build_config(raw, overrides)


def _optimizer_config(cfg: ExperimentConfig) -> OptimizerConfig:
    algo = dict(cfg.algorithm)
    algo.setdefault("kind", "NPG")
    algo["hinf_every"] = cfg.hinf_every
    try:
        return OptimizerConfig(**algo)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid algorithm settings: {exc}") from exc


def _rng_for_trial(seed, trial):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def _initial(cfg: ExperimentConfig, trial: int = 0):
    """Initial gain and plant for a trial, searched from the trial's stream."""
    rng = _rng_for_trial(cfg.seed, trial)
    base = cfg.plant if cfg.plant is not None else cases_mod.get_case(cfg.case).plant(1.0)
    return find_feasible_init(
        base, cfg.init_box, cfg.time_domain, seed=rng, gamma_slack=cfg.gamma_slack,
    )


def _resolve_gain(cfg: ExperimentConfig):
    """Gain named or given in the config; otherwise the first built-in gain or a search."""
    g = cfg.gain
    if isinstance(g, str):
        if g not in cfg.gains:
            raise ConfigError(f"unknown gain {g!r}; case provides {sorted(cfg.gains)}")
        K = cfg.gains[g]
    elif g is not None:
        K = _matrix(g, "gain")
    elif cfg.gains:
        K = next(iter(cfg.gains.values()))
    else:
        return _initial(cfg)
    plant = cfg.plant if cfg.plant is not None else cases_mod.get_case(cfg.case).plant(1.0)
    try:
        K = plant.check_gain(K)
    except MixedPOError as exc:
        raise ConfigError(str(exc)) from exc
    return K, plant


def _emit(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=False)
    print(text)
    if out:
        Path(out).write_text(text + "\n")


def cmd_hinf(cfg: ExperimentConfig, out=None) -> int:
    K, plant = _resolve_gain(cfg)
    try:
        b = hinf_bisect(plant, K, cfg.time_domain).value
        g = hinf_grid(plant, K, cfg.time_domain, n_points=8192).value
    except InstabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    delta = abs(b - g)
    _emit({
        "case": cfg.case,
        "K": K.tolist(),
        "hinf_bisection": b,
        "hinf_grid": g,
        "delta": delta,
        "check": "ok" if delta <= 1e-3 else "mismatch",
    }, out)
    return EXIT_OK


def cmd_membership(cfg: ExperimentConfig, out=None) -> int:
    K, plant = _resolve_gain(cfg)
    cert = membership(plant, K, cfg.time_domain)
    r = cert.riccati
    _emit({
        "case": cfg.case,
        "gamma": plant.gamma,
        "K": K.tolist(),
        "in_set": cert.in_set,
        "stabilizing": cert.stabilizing,
        "reason": cert.reason,
        "brl_margin": None if r is None else r.brl_margin,
        "P": None if r is None else r.P.tolist(),
    }, out)
    return EXIT_OK


def _run_trial(cfg: ExperimentConfig, opt: OptimizerConfig, trial: int):
    K0, plant = _initial(cfg, trial)
    trace = run_optimizer(plant, K0, opt, cfg.time_domain)
    result = {"trial": trial, "plant": plant, "trace": trace, "K0": K0}
    if trace.steps:
        K = trace.final.K
        result["final_hinf"] = hinf_bisect(plant, K, cfg.time_domain).value
        try:
            _, Kref = solve_optimal(plant, cfg.time_domain)
            result["reference_K"] = Kref
        except (InfeasibleError, NonConvergenceError):
            result["reference_K"] = None
    return result


def _trace_rows(result):
    rows = []
    for s in result["trace"].steps:
        rows.append([
            result["trial"], s.iteration, repr(s.cost), repr(s.grad_norm_sq),
            "" if s.hinf is None else repr(s.hinf), repr(s.brl_margin), f"{s.elapsed:.6f}",
        ])
    return rows


def _per_trial_or_scalar(values, trials):
    return values[0] if trials == 1 else values


def cmd_optimize(cfg: ExperimentConfig, out=None) -> int:
    opt = _optimizer_config(cfg)
    workers = max(1, min(cfg.trials, os.cpu_count() or 1))
    try:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda t: _run_trial(cfg, opt, t), range(cfg.trials)))
    except (SearchFailure, InfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in results:
        writer.writerows(_trace_rows(r))
    out_path = Path(out or cfg.output_path or "trace.csv")
    out_path.write_text(buf.getvalue())

    statuses = [r["trace"].status for r in results]
    ran = [r for r in results if r["trace"].steps]
    regular = all(
        r["trace"].status != "feasibility_violation"
        and all(s.hinf is None or s.hinf < r["plant"].gamma for s in r["trace"].steps)
        and (r.get("final_hinf") is None or r["final_hinf"] < r["plant"].gamma)
        for r in results
    )
    to_ref = [
        r.get("reference_K") is not None
        and float(np.linalg.norm(r["trace"].final.K - r["reference_K"])) <= REFERENCE_TOL
        for r in ran
    ]
    if not ran:
        verdict = "not-run"
    elif all(s == "converged" for s in statuses):
        verdict = "converged"
    elif any(s == "feasibility_violation" for s in statuses):
        verdict = "feasibility-violation"
    else:
        verdict = "not-converged"
    n = cfg.trials

    def col(fn):
        return _per_trial_or_scalar([fn(r) if r["trace"].steps else None for r in results], n)

    summary = {
        "case": cfg.case,
        "algorithm": opt.kind,
        "eta": opt.stepsize,
        "gamma": _per_trial_or_scalar([r["plant"].gamma for r in results], n),
        "converged": verdict == "converged",
        "final_cost": col(lambda r: r["trace"].final.cost),
        "final_hinf": col(lambda r: r["final_hinf"]),
        "final_K": col(lambda r: r["trace"].final.K.tolist()),
        "iterations": _per_trial_or_scalar([len(r["trace"].steps) for r in results], n),
        "seed": cfg.seed,
        "trials": n,
        "verdict": verdict,
        "converged_count": sum(s == "converged" for s in statuses),
        "implicit_regularization": bool(regular),
        "converged_to_reference": sum(to_ref),
        "trace_path": str(out_path),
    }
    text = json.dumps(summary, indent=2)
    print(text)
    out_path.with_suffix(".json").write_text(text + "\n")
    if verdict == "feasibility-violation":
        return EXIT_INFEASIBLE
    if verdict == "not-converged":
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def _game_spec(cfg: ExperimentConfig):
    if cfg.time_domain != "discrete":
        raise ConfigError("the game reduction is defined for discrete plants only")
    if cfg.plant is None:
        _, plant = _initial(cfg)
    else:
        plant = cfg.plant
    return GameSpec.from_plant(plant), plant


def cmd_game(cfg: ExperimentConfig, out=None) -> int:
    spec, plant = _game_spec(cfg)
    try:
        sol = solve_gare(spec)
        _, K_mixed = solve_optimal(plant, "discrete")
    except (InfeasibleError, NonConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    diff = float(np.abs(sol.K_star - K_mixed).max())
    _emit({
        "case": cfg.case,
        "gamma": plant.gamma,
        "K_star": sol.K_star.tolist(),
        "L_star": sol.L_star.tolist(),
        "P_star": sol.P_star.tolist(),
        "residual": sol.residual,
        "mixed_K_star": K_mixed.tolist(),
        "max_abs_diff": diff,
        "match": diff <= 1e-6,
    }, out)
    return EXIT_OK


def cmd_modelfree(cfg: ExperimentConfig, out=None) -> int:
    spec, plant = _game_spec(cfg)
    mf = dict(cfg.modelfree)
    mode = mf.get("mode", "exact_grad")
    variant = mf.get("variant", "NPG")
    if mode not in MODES or variant not in VARIANTS:
        raise ConfigError(f"mode must be in {MODES} and variant in {VARIANTS}")
    try:
        rc = RolloutConfig(
            m_traj=int(mf.get("m_traj", 50)), horizon=int(mf.get("horizon", 50)),
            radius=float(mf.get("radius", 0.05)), seed=cfg.seed,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    tol = float(mf.get("tol", 1e-3))
    try:
        sol = solve_gare(spec)
        K0 = np.zeros((plant.n_inputs, plant.n_states))
        if cfg.gain is not None:
            K0, _ = _resolve_gain(cfg)
        trace = outer_ng(
            spec, K0, rc, int(mf.get("n_outer", 500)), int(mf.get("n_inner", 50)),
            float(mf.get("eta", 0.1)), float(mf.get("alpha", 0.05)), variant, mode,
            K_ref=sol.K_star,
        )
    except (InfeasibleError, InstabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except MixedPOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    final = trace.final
    converged = trace.status == "completed" and final.distance <= tol
    _emit({
        "case": cfg.case,
        "mode": mode,
        "variant": variant,
        "seed": cfg.seed,
        "K_star": sol.K_star.tolist(),
        "final_K": final.K.tolist(),
        "distance": final.distance,
        "final_cost": final.cost,
        "outer_steps": final.iteration,
        "status": trace.status,
        "verdict": "converged" if converged else "not-converged",
    }, out)
    if trace.status != "completed":
        return EXIT_INFEASIBLE
    return EXIT_OK if converged else EXIT_NONCONVERGENCE


def cmd_case_list(cfg=None, out=None) -> int:
    for name, case in cases_mod.CASES.items():
        gamma = "derived" if case.gamma is None else f"{case.gamma:g}"
        print(f"{name}\t{case.time_domain}\tgamma={gamma}\t{case.description}")
    print("custom\t(any)\tgamma=required\tuser supplied matrices")
    return EXIT_OK


COMMANDS = {
    "hinf": cmd_hinf,
    "membership": cmd_membership,
    "optimize": cmd_optimize,
    "game": cmd_game,
    "modelfree": cmd_modelfree,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixedpo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("case-list", help="list built-in cases")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--case", help="case name (overrides the config file)")
        p.add_argument("--gamma", type=float)
        p.add_argument("--gain", help="name of a built-in gain")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output path")
        p.add_argument("--trials", type=int)
        p.add_argument("--hinf-every", type=int, dest="hinf_every")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "case-list":
        return cmd_case_list()
    overrides = {k: getattr(args, k) for k in ("case", "gamma", "gain", "seed", "trials", "hinf_every")}
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleError, InstabilityError, SearchFailure, FeasibilityViolation) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NonConvergenceError as exc:
        print(f"did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())

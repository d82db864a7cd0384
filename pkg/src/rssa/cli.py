"""Command-line entry point.

Subcommands: synthesize, simulate, feasmap, fistudy, bench.  Settings come
from built-in defaults, overridden by a key=value config file (--config),
overridden by explicit flags.  Exit codes: 0 success; 1 config or I/O
error (nothing partially written); 2 synthesis finished below rate 1 (no
certificate); 3 the simulate safety guard tripped (a polytope-filtered run
with the true parameter inside the modeled bound violated phi0 <= 1e-6).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import experiments, synthesis
from .bounds import estimate_constant_residual_bound
from .config import format_kv, parse_kv_file
from .dynamics import make_model, sample_parameter, uncertain_dist
from .safety_index import SCARA_LEARNED, SEGWAY_LEARNED, SafetyIndexParams

SAFETY_TOL = 1e-6

DEFAULTS = {
    "robot": "scara",
    "rssa": "polytope",
    "seed": 0,
    "confidence": 0.95,
    "samples": 50,
    "dt": 0.002,
    "horizon": 5.0,
    "out": ".",
}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; our contract reserves 2, so remap."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="rssa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--robot", choices=("scara", "segway"))
        p.add_argument("--rssa", choices=("polytope", "ellipsoid", "constant",
                                          "none"))
        p.add_argument("--seed", type=int)
        p.add_argument("--config")
        p.add_argument("--out")
        p.add_argument("--confidence", type=float)
        p.add_argument("--samples", type=int)
        p.add_argument("--dt", type=float)
        p.add_argument("--horizon", type=float)
        p.add_argument("--params", help="safety-index parameter file")

    p = sub.add_parser("synthesize", help="search (alpha, k_v, beta) for rate 1")
    common(p)
    p.add_argument("--grid", help="comma-separated grid counts per dimension")
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)

    p = sub.add_parser("simulate", help="closed-loop rollout to CSV")
    common(p)
    p.add_argument("--case", choices=("case1", "case2"),
                   help="scara scenario start (default case1)")
    p.add_argument("--true", dest="true_value", type=float,
                   help="hidden true parameter (m2 or K_m)")
    p.add_argument("--d-res", dest="d_res", type=float,
                   help="constant-variant residual margin (default estimated)")

    p = sub.add_parser("feasmap", help="joint-space infeasible-fraction map")
    common(p)
    p.add_argument("--grid", help="joint grid counts, e.g. 30,30")
    p.add_argument("--velocity-samples", type=int)
    p.add_argument("--velocity-scale", type=float,
                   help="fraction of the rated joint-speed box to sample "
                        "(default 0.6)")
    p.add_argument("--raw-index", action="store_true",
                   help="rate the plain distance index phi0 instead")

    p = sub.add_parser("fistudy", help="forward invariance vs unmodeled values")
    common(p)
    p.add_argument("--values", help="comma-separated true parameter values")
    p.add_argument("--trials", type=int)

    p = sub.add_parser("bench", help="solver timing vs bound sample count")
    common(p)
    p.add_argument("--counts", help="comma-separated sample counts")
    p.add_argument("--repeats", type=int)
    return parser


def _merge_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(parse_kv_file(args.config))
    for key in ("robot", "rssa", "seed", "out", "confidence", "samples", "dt",
                "horizon", "params", "case", "true_value", "d_res", "grid",
                "population", "generations", "velocity_samples",
                "velocity_scale", "values", "trials", "counts", "repeats",
                "raw_index"):
        value = getattr(args, key, None)
        if value is not None and value is not False:
            cfg[key] = value
    return cfg


def _out_dir(cfg) -> str:
    out = str(cfg["out"])
    if not os.path.isdir(out):
        raise FileNotFoundError(f"output directory does not exist: {out}")
    return out


def _load_params(cfg) -> SafetyIndexParams:
    if cfg.get("params"):
        return SafetyIndexParams.from_config(str(cfg["params"]))
    return SCARA_LEARNED if cfg["robot"] == "scara" else SEGWAY_LEARNED


def _int_tuple(text, fallback):
    if text is None:
        return fallback
    return tuple(int(v) for v in str(text).split(","))


def _float_tuple(text, fallback):
    if text is None:
        return fallback
    return tuple(float(v) for v in str(text).split(","))


def cmd_synthesize(cfg) -> int:
    out = _out_dir(cfg)
    model = make_model(str(cfg["robot"]))
    grid = _int_tuple(cfg.get("grid"), (12,) * model.n)
    syn_keys = {k: cfg[k] for k in ("k_gamma", "k_phi", "k_grad_phi",
                                    "k_sigma_f", "k_sigma_g", "m_u", "m_xdot",
                                    "sigma0") if k in cfg}
    syn = synthesis.SynthesisConfig(
        grid_counts=grid,
        population=int(cfg.get("population", 16)),
        max_generations=int(cfg.get("generations", 50)),
        seed=int(cfg["seed"]),
        sample_count=int(cfg["samples"]),
        **{k: float(v) for k, v in syn_keys.items()})
    result = synthesis.synthesize(model, syn)
    robot = cfg["robot"]
    with open(os.path.join(out, f"params_{robot}.cfg"), "w") as fh:
        fh.write(format_kv({
            "alpha": result.params.alpha, "k_v": result.params.k_v,
            "beta": result.params.beta,
            "gamma_slope": result.params.gamma_slope}))
    with open(os.path.join(out, f"synthesis_report_{robot}.txt"), "w") as fh:
        fh.write(synthesis.format_report(result))
    print(f"rate={result.rate} epsilon={result.epsilon} "
          f"theta=({result.params.alpha}, {result.params.k_v}, "
          f"{result.params.beta})")
    return 0 if result.certified else 2


def _default_true(cfg, model) -> float:
    if "true_value" in cfg:
        return float(cfg["true_value"])
    return 0.5 if model.kind == "scara" else model.km_dist.mean


def cmd_simulate(cfg) -> int:
    out = _out_dir(cfg)
    model = make_model(str(cfg["robot"]))
    params = _load_params(cfg)
    variant = str(cfg["rssa"])
    seed = int(cfg["seed"])
    true_value = _default_true(cfg, model)
    dt = float(cfg["dt"])
    steps = int(round(float(cfg["horizon"]) / dt))
    if model.kind == "scara":
        case = str(cfg.get("case", "case1"))
        x0 = (experiments.SCARA_CASE1_START if case == "case1"
              else experiments.SCARA_CASE2_START)
        tag = f"scara_{variant}_{case}"
    else:
        x0 = np.zeros(model.n)
        tag = f"segway_{variant}"
    d_res = 0.0
    if variant == "constant":
        if "d_res" in cfg:
            d_res = float(cfg["d_res"])
        else:
            grid, _ = synthesis.sample_state_grid(model, (6,) * model.n)
            values = sample_parameter(uncertain_dist(model), seed,
                                      int(cfg["samples"]))
            d_res = estimate_constant_residual_bound(model, params, values, grid)
    log = experiments.simulate(model, true_value, variant, x0, dt, steps, seed,
                               params=params, sample_count=int(cfg["samples"]),
                               confidence=float(cfg["confidence"]), d_res=d_res)
    log.to_csv(os.path.join(out, f"trajectory_{tag}.csv"))
    print(f"max_phi0={log.max_phi0} max_phi={log.max_phi} "
          f"fallback_steps={int(np.sum(log.fallback))}")
    dist = uncertain_dist(model)
    matched = dist.lower <= true_value <= dist.upper
    if variant == "polytope" and matched and log.max_phi0 > SAFETY_TOL:
        print("safety guard tripped: phi0 exceeded tolerance under matched "
              "uncertainty", file=sys.stderr)
        return 3
    return 0


def cmd_feasmap(cfg) -> int:
    out = _out_dir(cfg)
    model = make_model(str(cfg["robot"]))
    params = None if cfg.get("raw_index") else _load_params(cfg)
    grid = _int_tuple(cfg.get("grid"), (30, 30))
    result = experiments.feasibility_map(
        model, params, joint_counts=grid,
        velocity_samples=int(cfg.get("velocity_samples", 100)),
        seed=int(cfg["seed"]), sample_count=int(cfg["samples"]),
        velocity_scale=float(cfg.get("velocity_scale", 0.6)))
    tag = "raw" if params is None else "designed"
    experiments.write_json(result, os.path.join(out, f"feasmap_{tag}.json"),
                           schema="rssa/feasmap/v1")
    worst = max(max(row) for row in result["infeasible_fraction"])
    print(f"max_infeasible_fraction={worst}")
    return 0


def cmd_fistudy(cfg) -> int:
    out = _out_dir(cfg)
    model = make_model(str(cfg["robot"]))
    params = _load_params(cfg)
    values = _float_tuple(cfg.get("values"), (1.0, 2.0, 3.0))
    result = experiments.forward_invariance_study(
        model, params, true_values=values, trials=int(cfg.get("trials", 100)),
        horizon=float(cfg["horizon"]), dt=float(cfg["dt"]),
        rng_seed=int(cfg["seed"]), sample_count=int(cfg["samples"]))
    experiments.write_json(result, os.path.join(out, "fistudy.json"),
                           schema="rssa/fistudy/v1")
    for row in result["rows"]:
        print(f"true={row['true_value']} phi_max={row['phi_max']} "
              f"bound={row['bound']}")
    return 0


def cmd_bench(cfg) -> int:
    out = _out_dir(cfg)
    model = make_model(str(cfg["robot"]))
    counts = _int_tuple(cfg.get("counts"), (10, 50, 100, 500))
    result = experiments.timing_bench(
        model, sample_counts=counts, repeats=int(cfg.get("repeats", 10)),
        seed=int(cfg["seed"]), confidence=float(cfg["confidence"]))
    experiments.write_json(result, os.path.join(out, "bench.json"),
                           schema="rssa/bench/v1")
    for row in result["rows"]:
        print(f"{row['variant']} samples={row['samples']} "
              f"mean_s={row['mean_s']:.6f}")
    return 0


_COMMANDS = {
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "feasmap": cmd_feasmap,
    "fistudy": cmd_fistudy,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _merge_config(args)
        return _COMMANDS[args.command](cfg)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

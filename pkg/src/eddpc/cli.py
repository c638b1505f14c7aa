"""Command-line entry point: collect, predictor, run, sweep, bound, compare.

Every command prints its resolved configuration (JSON, on stderr) before
doing any work. Machine-readable results go to files or stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import bench
from .controllers import ControllerSpec, run_closed_loop
from .core import SystemDims, Trajectory
from .representation import (Predictor, min_samples_ddpc, min_samples_eddpc, predictor_from_data,
                             run_pipeline)
from .systems import LtiPlant, StateSpaceModel, four_tank, four_tank_dims
from .uncertainty import (BoundInputs, bound_inputs_from_data, bound_thm5, oracle_quantities,
                          predictor_distance_bound)
from .core import build_hankel


class CliError(Exception):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
    return v


def _load_model(spec: str) -> StateSpaceModel:
    if spec == "fourtank":
        return four_tank().model
    path = Path(spec)
    if not path.exists():
        raise CliError(f"model file {spec} not found (use 'fourtank' or a JSON file with A, B, C[, D])")
    return StateSpaceModel.load(path)


def _parse_dims(spec: str) -> SystemDims:
    if spec == "fourtank":
        return four_tank_dims()
    try:
        m, p, n, ell = (int(x) for x in spec.split(","))
    except ValueError:
        raise CliError(f"--dims expects 'fourtank' or 'm,p,n,ell', got {spec!r}") from None
    return SystemDims(m, p, n, ell)


def _need_file(path, producer: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{path} not found; create it first with `eddpc {producer}`")
    return p


def _echo_config(cmd: str, cfg: dict) -> None:
    print(json.dumps({"command": cmd, **cfg}, sort_keys=True, default=str), file=sys.stderr)


def cmd_collect(args) -> int:
    model = _load_model(args.model)
    cfg = {"model": args.model, "T": args.T, "eps": args.eps, "seed": args.seed, "out": args.out,
           "oracle": args.oracle}
    _echo_config("collect", cfg)
    data = bench.collect_data(model, args.T, bench.NoiseSpec(args.eps), args.seed)
    data.noisy.to_csv(args.out)
    if args.oracle:
        data.clean.to_csv(args.oracle)
    return 0


def cmd_predictor(args) -> int:
    dims = _parse_dims(args.dims)
    path = _need_file(args.data, "collect --out " + args.data)
    traj = Trajectory.from_csv(path, dims)
    cfg = {"data": args.data, "dims": dims.to_dict(), "d": args.d, "L": args.L, "denoise": args.denoise,
           "seed": args.seed, "out": args.out}
    _echo_config("predictor", cfg)
    kw = {"m": dims.m} if args.denoise == "slra" and not args.slra_free_inputs else {}
    pred = predictor_from_data(traj, dims, args.d, args.L, args.denoise, seed=args.seed, **kw)
    Path(args.out).write_text(pred.to_json())
    return 0


def cmd_run(args) -> int:
    path = _need_file(args.predictor, "predictor --out " + args.predictor)
    pred = Predictor.from_json(path.read_text())
    ft = four_tank()
    model = _load_model(args.model)
    if args.model != "fourtank":
        raise CliError("run currently supports the built-in fourtank plant only")
    L = pred.L if pred.L is not None else args.L
    rng = np.random.default_rng(args.seed)
    if args.x0:
        x0 = np.array([float(v) for v in args.x0.split(",")])
    else:
        g = rng.standard_normal(ft.x_s.size)
        x0 = ft.x_s + args.x0_scale * g / np.linalg.norm(g)
    scheme = {"hankel": "ddpc", "svd_reduced": "svd_ddpc"}.get(pred.provenance, "eddpc")
    spec = ControllerSpec(scheme, L, ft.W, ft.setpoint, ft.constraints, mode=args.mode,
                          lambda_beta=args.lambda_beta, lambda_sigma=args.lambda_sigma, eps_bar=args.eps,
                          slack_policy=args.slack)
    cfg = {"predictor": args.predictor, "mode": args.mode, "L": L, "x0": x0.tolist(), "eps": args.eps,
           "lambda_beta": args.lambda_beta, "lambda_sigma": args.lambda_sigma, "T_sim": args.T_sim,
           "seed": args.seed, "slack": spec.slack_policy}
    _echo_config("run", cfg)
    plant = LtiPlant(model, x0, args.eps, rng)
    res = run_closed_loop(spec, pred, plant, args.T_sim)
    res.meta["x0"] = x0.tolist()
    res.seconds = 0.0 if args.deterministic else res.seconds
    text = res.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    if args.csv:
        Path(args.csv).write_text(res.to_csv())
    return 1 if res.failed else 0


def cmd_sweep(args) -> int:
    path = _need_file(args.config, "sweep --config <file>  (write an ExperimentConfig JSON first)")
    cfg = bench.ExperimentConfig.load(path)
    if args.workers:
        cfg.workers = args.workers
    if args.reps:
        cfg.repetitions = args.reps
    out = args.out or cfg.output_dir or bench.default_output_dir()
    _echo_config("sweep", {**cfg.to_dict(), "output_dir": out, "config_hash": cfg.config_hash()})
    res = bench.sweep(cfg)
    paths = bench.write_outputs(res, cfg, out)
    print(json.dumps({**res.summary(), "files": paths}, indent=2, sort_keys=True))
    return 0


def cmd_bound(args) -> int:
    dims = _parse_dims(args.dims)
    cfg = {"dims": dims.to_dict(), "T": args.T, "d": args.d, "L": args.L, "eps": args.eps,
           "delta1": args.delta1, "delta2": args.delta2, "model": args.model, "seed": args.seed}
    _echo_config("bound", cfg)
    if args.model:
        model = _load_model(args.model)
        data = bench.collect_data(model, args.T, bench.NoiseSpec(args.eps), args.seed, dims=dims)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = run_pipeline(data.noisy, dims, args.d, args.L, "tsvd", seed=args.seed)
        orc = oracle_quantities(res.rep, res.gamma.selected_rows, build_hankel(data.clean, args.d).data,
                                args.L + dims.n)
        inp = bound_inputs_from_data(res.rep, res.gamma, res.H_hat, args.T, args.L, args.eps, orc)
        from .numerics import principal_angles
        emp = principal_angles(res.predictor.P, orc.P).sin_frobenius
    else:
        if args.delta1 is None or args.delta2 is None:
            raise CliError("bound needs --delta1 and --delta2, or --model for simulated oracle mode")
        inp = BoundInputs(dims, args.T, args.d, args.L, args.eps, args.delta1, args.delta2,
                          args.s_gamma, args.s_hankel)
        emp = None
    rep = bound_thm5(inp)
    out = json.loads(rep.to_json())
    out["empirical_sin_theta"] = emp
    out["delta1"] = inp.delta1
    out["delta2"] = inp.delta2
    if inp.has_oracle:
        pdb = predictor_distance_bound(inp)
        out["predictor_distance_bound"] = pdb if math.isfinite(pdb) else None
    print(json.dumps(out, sort_keys=True))
    return 0


def sample_requirements(dims: SystemDims, L: int, T: int, d: int) -> list:
    r_e = dims.m * (L + dims.n) + dims.n
    return [
        {"scheme": "ddpc", "min_T": min_samples_ddpc(dims, L), "regressor_dim": T - L - dims.n + 1},
        {"scheme": "svd_ddpc", "min_T": min_samples_ddpc(dims, L), "regressor_dim": r_e},
        {"scheme": "eddpc", "min_T": min_samples_eddpc(dims, d), "regressor_dim": r_e},
        {"scheme": "slra_eddpc", "min_T": min_samples_eddpc(dims, d), "regressor_dim": r_e},
    ]


def cmd_compare(args) -> int:
    ft = four_tank()
    dims = ft.model.dims
    d = args.d or bench.default_depth(args.T, dims, args.L)
    cfg = bench.ExperimentConfig(schemes=list(bench.SCHEME_NAMES), T_list=[args.T], eps_list=[args.eps],
                                 repetitions=args.reps, T_sim=args.T_sim, seed=args.seed, L=args.L,
                                 d_list=[d], x0_scale=args.x0_scale)
    _echo_config("compare", {**cfg.to_dict(), "config_hash": cfg.config_hash()})
    res = bench.sweep(cfg)
    rows = []
    for led in sample_requirements(dims, args.L, args.T, d):
        row = dict(led)
        if args.T < led["min_T"]:
            row["status"] = f"not applicable: T below minimum {led['min_T']}"
            row["mean_cost"] = None
        else:
            b = next((b for b in res.best.values() if b["scheme"] == led["scheme"]), None)
            row["status"] = "ok" if b else "failed"
            row["mean_cost"] = b["mean_cost"] if b else None
        rows.append(row)
    print(f"{'scheme':<12}{'min T':>7}{'regressor':>11}{'mean J':>12}  status")
    for r in rows:
        cost = f"{r['mean_cost']:.4f}" if r["mean_cost"] is not None else "-"
        print(f"{r['scheme']:<12}{r['min_T']:>7}{r['regressor_dim']:>11}{cost:>12}  {r['status']}")
    if args.json:
        Path(args.json).write_text(json.dumps({"T": args.T, "d": d, "rows": rows}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eddpc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="open-loop data collection")
    p.add_argument("--model", default="fourtank", help="'fourtank' or a JSON model file {A,B,C[,D]}")
    p.add_argument("--T", type=_positive_int, required=True, help="number of samples")
    p.add_argument("--eps", type=_nonneg_float, default=4e-3, help="output noise bound")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data.csv", help="noisy trajectory CSV")
    p.add_argument("--oracle", default=None, help="also write the noise-free trajectory here")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("predictor", help="build a predictor from a trajectory CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--dims", default="fourtank", help="'fourtank' or 'm,p,n,ell'")
    p.add_argument("--d", type=_positive_int, required=True, help="Hankel depth")
    p.add_argument("--L", type=_positive_int, default=16, help="prediction horizon")
    p.add_argument("--denoise", choices=("none", "tsvd", "slra"), default="none")
    p.add_argument("--slra-free-inputs", action="store_true", help="let SLRA adjust input samples too")
    p.add_argument("--seed", type=int, default=0, help="row-selection sampling seed")
    p.add_argument("--out", default="predictor.json")
    p.set_defaults(func=cmd_predictor)

    p = sub.add_parser("run", help="closed-loop run on the four-tank plant")
    p.add_argument("--predictor", required=True)
    p.add_argument("--model", default="fourtank")
    p.add_argument("--mode", choices=("nominal", "robust"), default="robust")
    p.add_argument("--L", type=_positive_int, default=16)
    p.add_argument("--eps", type=_nonneg_float, default=4e-3, help="plant noise bound (also used in weights)")
    p.add_argument("--lambda-beta", type=_nonneg_float, default=0.01)
    p.add_argument("--lambda-sigma", type=_nonneg_float, default=10.0)
    p.add_argument("--slack", choices=("full_q", "outputs_p", "none"), default="full_q")
    p.add_argument("--T-sim", type=_positive_int, default=300)
    p.add_argument("--x0", default=None, help="comma-separated initial state")
    p.add_argument("--x0-scale", type=_nonneg_float, default=2.95,
                   help="distance of the random initial state from the steady state")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true", help="zero the timing field for byte-stable output")
    p.add_argument("--out", default=None, help="result JSON (stdout if omitted)")
    p.add_argument("--csv", default=None, help="closed-loop trajectory CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="hyperparameter sweep from an ExperimentConfig JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (default: config, then $EDDPC_OUTPUT_DIR)")
    p.add_argument("--workers", type=_positive_int, default=None)
    p.add_argument("--reps", type=_positive_int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bound", help="uncertainty bound report (JSON)")
    p.add_argument("--dims", default="fourtank")
    p.add_argument("--T", type=_positive_int, required=True)
    p.add_argument("--d", type=_positive_int, required=True)
    p.add_argument("--L", type=_positive_int, default=16)
    p.add_argument("--eps", type=_nonneg_float, required=True)
    p.add_argument("--delta1", type=float, default=None, help="measured s_{p(L+n)-n} of the estimated Gamma")
    p.add_argument("--delta2", type=float, default=None, help="measured s_{md+n} of the denoised Hankel matrix")
    p.add_argument("--s-gamma", type=float, default=None, help="noise-free counterpart of delta1")
    p.add_argument("--s-hankel", type=float, default=None, help="noise-free counterpart of delta2")
    p.add_argument("--model", default=None, help="simulate data from this model for oracle mode")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("compare", help="all schemes on identical data and seeds")
    p.add_argument("--T", type=_positive_int, required=True)
    p.add_argument("--d", type=_positive_int, default=None, help="depth for the eDDPC variants")
    p.add_argument("--L", type=_positive_int, default=16)
    p.add_argument("--eps", type=_nonneg_float, default=4e-3)
    p.add_argument("--reps", type=_positive_int, default=1)
    p.add_argument("--T-sim", type=_positive_int, default=300)
    p.add_argument("--x0-scale", type=_nonneg_float, default=2.95,
                   help="distance of the initial states from the steady state")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", default=None, help="also write the comparison as JSON")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

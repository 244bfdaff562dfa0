"""Command-line entry point: ``marginal-lds <command> --config cfg.json``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .errors import MarginalLdsError
from .kalman import hinf_norm, solve_dare, sufficient_length, tail_l1, unroll_filter
from .predictors import run_ar_learner, run_lds_learner
from .structural import DIAGNOSTIC_COLUMNS, anomaly_frontier, certify_anomaly_free, diagnose_trajectory
from .structural.report import anomaly_rows, rows_to_csv, to_json

EXIT_ERROR = 1


def _write(out_dir: Path, stem: str, rows: list, columns: list, fmt: str, extra: dict | None = None) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        path = out_dir / f"{stem}.csv"
        path.write_text(rows_to_csv(rows, columns))
    else:
        path = out_dir / f"{stem}.json"
        body = {"rows": rows}
        if extra:
            body.update(extra)
        path.write_text(to_json(body) + "\n")
    return path


def _config(args) -> harness.ExperimentConfig:
    if not args.config:
        raise MarginalLdsError("--config is required for this command")
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _out_dir(args, cfg=None) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    if cfg is not None and cfg.output.get("dir"):
        return Path(cfg.output["dir"])
    return Path(".")


def _horizon(args, cfg) -> int:
    return int(args.horizon) if args.horizon else int(cfg.horizons[-1])


def _vector_columns(prefix: str, k: int) -> list:
    return [f"{prefix}{i}" for i in range(k)]


def cmd_simulate(args) -> int:
    cfg = _config(args)
    T = _horizon(args, cfg)
    _, traj = harness.simulate_cell(cfg, T, args.trial)
    d, m = traj.states.shape[1], traj.inputs.shape[1]
    n = 0 if traj.observations is None else traj.observations.shape[1]
    cols = ["t"] + _vector_columns("x", d) + _vector_columns("u", m) + _vector_columns("y", n)
    rows = []
    for t in range(T + 1):
        row = {"t": t}
        row.update(zip(_vector_columns("x", d), traj.states[t].tolist()))
        if t < T:
            row.update(zip(_vector_columns("u", m), traj.inputs[t].tolist()))
        if n:
            row.update(zip(_vector_columns("y", n), traj.observations[t].tolist()))
        rows.append(row)
    path = _write(_out_dir(args, cfg), "trajectory", rows, cols, args.format, {"config_hash": cfg.hash()})
    print(path)
    return harness.EXIT_OK


def cmd_predict(args) -> int:
    cfg = _config(args)
    T = _horizon(args, cfg)
    system, traj = harness.simulate_cell(cfg, T, args.trial)
    mu = harness.resolve_mu(cfg, system, T, system.d + system.m)
    if cfg.setting == "partial-stochastic":
        kf = harness.kalman_for(system)
        ell = harness.resolve_ell(cfg, kf)
        mu = harness.resolve_mu(cfg, system, T, ell * (system.m + system.n))
        preds, _ = run_ar_learner(traj, mu, ell)
        target, start, prefix = traj.observations, ell + 1, "yhat"
    else:
        ell = None
        raw, _ = run_lds_learner(traj, mu)
        preds = np.vstack([np.zeros((1, raw.shape[1])), raw])
        target, start, prefix = traj.states, 1, "xhat"
    k = preds.shape[1]
    cols = ["t"] + _vector_columns(prefix, k) + ["loss"]
    rows = []
    for t in range(start, T + 1):
        row = {"t": t, "loss": float(np.sum((preds[t] - target[t]) ** 2))}
        row.update(zip(_vector_columns(prefix, k), preds[t].tolist()))
        rows.append(row)
    path = _write(_out_dir(args, cfg), "predictions", rows, cols, args.format, {"mu": mu, "ell": ell})
    print(path)
    return harness.EXIT_OK


def cmd_regret_sweep(args) -> int:
    cfg = _config(args)
    res = harness.run_experiment(cfg, _out_dir(args, cfg), threads=args.threads)
    if args.format == "json":
        print(json.dumps(res.summary, indent=2, sort_keys=True))
    else:
        sys.stdout.write(res.runs_csv)
    for v in res.summary["violations"]:
        print(f"violation: {v}", file=sys.stderr)
    return res.exit_code


def cmd_lower_bound(args) -> int:
    horizons = [int(t) for t in args.horizons.split(",")]
    cfg = harness.config_from_dict({"setting": "ols-lower-bound", "horizons": horizons, "trials": 2, "seed": args.seed or 0})
    res = harness.run_experiment(cfg, _out_dir(args), threads=args.threads)
    rows = [{"T": int(T), "mean_regret": v, "T_squared": int(T) ** 2} for T, v in res.summary["mean_regret"].items()]
    if args.format == "json":
        print(json.dumps(rows, indent=2))
    else:
        sys.stdout.write(rows_to_csv(rows, ["T", "mean_regret", "T_squared"]))
    return res.exit_code


def cmd_kalman(args) -> int:
    cfg = _config(args)
    system = harness.build_system(cfg.system)
    if system.C is None:
        raise MarginalLdsError("the kalman command needs an observation matrix C")
    nc = system.noise
    sx = nc.sigma_x if nc.sigma_x is not None else np.eye(system.d)
    sy = nc.sigma_y if nc.sigma_y is not None else np.eye(system.n)
    kf = solve_dare(system.A, system.C, sx, sy, system.B)
    eps_list = [float(e) for e in args.eps.split(",")]
    rows = []
    for eps in eps_list:
        res = sufficient_length(kf, eps)
        rows.append(
            {
                "eps": eps,
                "length": res.length,
                "gamma": res.gamma,
                "bound": res.bound,
                "tail_l1": tail_l1(unroll_filter(kf, res.length), res.length),
            }
        )
    extra = {
        "P": kf.P.tolist(),
        "K": kf.K.tolist(),
        "A_kf": kf.A_kf.tolist(),
        "spectral_radius": kf.spectral_radius(),
        "hinf_norm": hinf_norm(kf),
        "riccati_residual": kf.riccati_residual,
    }
    out = _out_dir(args, cfg)
    path = _write(out, "kalman", rows, ["eps", "length", "gamma", "bound", "tail_l1"], args.format, extra)
    if args.format == "csv":
        (out / "kalman_state.json").write_text(to_json(extra) + "\n")
    print(path)
    return harness.EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = _config(args)
    if cfg.setting not in ("full-adversarial", "full-stochastic"):
        raise MarginalLdsError("diagnose runs on fully observed settings")
    T = _horizon(args, cfg)
    out = _out_dir(args, cfg)
    exit_code = harness.EXIT_OK
    summaries = []
    for trial in range(cfg.trials):
        system, traj = harness.simulate_cell(cfg, T, trial)
        mu = harness.resolve_mu(cfg, system, T, system.d + system.m)
        rep = diagnose_trajectory(traj, system, mu=mu, seed=cfg.seed)
        stem = "diagnostics" if cfg.trials == 1 else f"diagnostics_{trial}"
        _write(out, stem, list(rep.rows()), DIAGNOSTIC_COLUMNS, args.format)
        summary = rep.summary()
        summary["trial"] = trial
        if args.anomaly:
            anomaly = certify_anomaly_free(traj.states, directions=8, c=2.0, c1=0.5, c2=0.5, alpha=1.0, seed=cfg.seed)
            _write(out, f"anomaly_{trial}", list(anomaly_rows(anomaly)), ["t", "direction", "M", "required", "observed", "passed"], args.format)
            summary["anomaly_frontier"] = [dataclasses.asdict(p) for p in anomaly_frontier(traj.states, seed=cfg.seed)]
        summaries.append(summary)
        for v in rep.violations:
            print(f"trial {trial}: violation: {v}", file=sys.stderr)
        if rep.violations:
            exit_code = harness.EXIT_INVARIANT
    (out / "diagnostics_summary.json").write_text(to_json({"config_hash": cfg.hash(), "T": T, "trials": summaries}) + "\n")
    print(out / "diagnostics_summary.json")
    return exit_code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out-dir", default=None, help="directory for output files")
    common.add_argument("--threads", type=int, default=1, help=f"worker processes ({harness.THREADS_ENV} overrides)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    parser = argparse.ArgumentParser(prog="marginal-lds", description="Online prediction for marginally stable linear systems.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate one trajectory")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("predict", parents=[common], help="run the online learner on one trajectory")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("regret-sweep", parents=[common], help="regret over horizons and trials")
    p.set_defaults(func=cmd_regret_sweep)

    p = sub.add_parser("diagnose", parents=[common], help="structural checks on simulated trajectories")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--anomaly", action="store_true", help="also certify anomaly-freeness")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("kalman", parents=[common], help="steady-state filter and sufficient lengths")
    p.add_argument("--eps", default="1e-2,1e-3,1e-4", help="comma-separated tail tolerances")
    p.set_defaults(func=cmd_kalman)

    p = sub.add_parser("lower-bound", parents=[common], help="ridge regression on the counterexample sequence")
    p.add_argument("--horizons", default="1,10,100")
    p.set_defaults(func=cmd_lower_bound)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MarginalLdsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

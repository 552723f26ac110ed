"""Command-line front end: config parsing, catalog wiring, experiment runs.

Subcommands: ``simulate`` (one-trajectory ergodic trace), ``clt``
(normalized-statistic report), ``rate`` (log-log rate regression), ``probe``
(hypothesis diagnostics), ``wasserstein`` (distance trace to the catalog
invariant law).  ``--assert`` turns each report's tolerance into the exit
code so the experiments double as reproduction scripts: 0 pass, 1 fail,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .diagnostics import moment_match_report, recursive_control_probe, weak_order_probe
from .harness import (
    ConfigError,
    ExperimentConfig,
    ExperimentError,
    InternalInconsistencyError,
    emit,
    parse_config_file,
    run_clt_experiment,
    run_ergodic_experiment,
    run_rate_experiment,
)
from .model import Enumerate
from .schemes import DivergenceError

EULER_RATIO_WINDOW = (3.2, 4.8)
TALAY_RATIO_WINDOW = (6.0, 10.0)
SLOPE_TOLERANCE = 0.12


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key=value config file")
    p.add_argument("--output-dir", type=Path, default=Path("."))
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--assert", dest="assert_check", action="store_true",
                   help="fold report tolerances into the exit code")
    p.add_argument("-v", "--verbose", action="count", default=0)
    # config overrides
    p.add_argument("--model", dest="model_id")
    p.add_argument("--theta", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--scheme", choices=("euler", "talay2"))
    p.add_argument("--innovation", choices=("gaussian", "rademacher", "three_point"))
    p.add_argument("--f", dest="observable")
    p.add_argument("--gamma1", type=float)
    p.add_argument("--xi", type=float)
    p.add_argument("--weight", choices=("proportional", "trapezoidal", "power"))
    p.add_argument("--weight-c", type=float)
    p.add_argument("--n-steps", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoints")
    p.add_argument("--x0", type=float)
    p.add_argument("--buffer-capacity", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--threads", type=int)


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    pairs = {
        "model.id": args.model_id,
        "model.theta": args.theta,
        "model.sigma": args.sigma,
        "scheme": args.scheme,
        "innovation": args.innovation,
        "f": args.observable,
        "step.gamma1": args.gamma1,
        "step.xi": args.xi,
        "weight.kind": args.weight,
        "weight.c": args.weight_c,
        "n_steps": args.n_steps,
        "replications": args.replications,
        "seed": args.seed,
        "checkpoints": args.checkpoints,
        "x0": args.x0,
        "buffer_capacity": args.buffer_capacity,
        "burn_in": args.burn_in,
        "threads": args.threads,
    }
    return {k: str(v) for k, v in pairs.items() if v is not None}


def _load_config(args: argparse.Namespace, defaults: dict[str, str] | None = None) -> ExperimentConfig:
    base: dict[str, str] = {}
    if args.config is not None:
        if not args.config.exists():
            raise ConfigError(f"config file not found: {args.config}")
        base = parse_config_file(args.config)
    over = _overrides(args)
    if "seed" not in base and "seed" not in over and "ERGODIC_SEED" in os.environ:
        over["seed"] = os.environ["ERGODIC_SEED"]
    if args.threads is None and "threads" not in base:
        over["threads"] = str(os.cpu_count() or 1)
    # subcommand defaults apply only where neither config nor flags spoke
    for key, value in (defaults or {}).items():
        if key not in base and key not in over:
            over[key] = value
    return ExperimentConfig.from_mapping(base, over)


def _default_trace_checkpoints(config: ExperimentConfig) -> ExperimentConfig:
    if config.checkpoints:
        return config
    grid = np.unique(np.logspace(1, math.log10(config.n_steps), 16).astype(int))
    grid = tuple(int(g) for g in grid if g <= config.n_steps)
    if not grid or grid[-1] != config.n_steps:
        grid = grid + (config.n_steps,)
    return ExperimentConfig.from_mapping(
        {**{k: v for k, v in _config_to_mapping(config).items()},
         "checkpoints": ",".join(str(g) for g in grid)})


def _config_to_mapping(config: ExperimentConfig) -> dict[str, str]:
    out = {
        "model.id": config.model_id,
        "scheme": config.scheme,
        "innovation": config.innovation_kind,
        "f": config.observable_name,
        "step.kind": config.step_kind,
        "step.gamma1": repr(config.gamma1),
        "step.xi": repr(config.xi),
        "weight.kind": config.weight_kind,
        "weight.c": repr(config.weight_c),
        "weight.r": repr(config.weight_r),
        "n_steps": str(config.n_steps),
        "replications": str(config.replications),
        "seed": str(config.seed),
        "x0": repr(config.x0),
        "buffer_capacity": str(config.buffer_capacity),
        "burn_in": str(config.burn_in),
        "threads": str(config.threads),
    }
    for k, v in config.model_params.items():
        out[f"model.{k}"] = repr(v)
    if config.checkpoints:
        out["checkpoints"] = ",".join(str(c) for c in config.checkpoints)
    return out


def _cmd_simulate(args) -> int:
    config = _default_trace_checkpoints(_load_config(args))
    config = ExperimentConfig.from_mapping({**_config_to_mapping(config), "replications": "1"})
    report = run_ergodic_experiment(config, want_w1=False)
    out = args.output_dir / f"simulate.{args.format}"
    emit(report, args.format, out)
    final = report.mean_values[report.checkpoints[-1]]
    print(f"simulate: n={config.n_steps} nu_n({config.observable_name}) = {final!r} -> {out}")
    return 0


def _cmd_clt(args) -> int:
    config = _load_config(args)
    report = run_clt_experiment(config)
    out = args.output_dir / f"clt.{args.format}"
    emit(report, args.format, out)
    final = report.checkpoints[-1]
    stats = report.summaries[final]
    ks_d, ks_pass = report.ks.get(final, (float("nan"), True))
    print(f"clt: regime={report.regime} n={final} mean={stats.mean:.4f} "
          f"var={stats.variance:.4f} predicted_var={report.predicted_variance:.4f} "
          f"shift={report.predicted_shift[final]:.4f} ks={ks_d:.4f} "
          f"({'pass' if ks_pass else 'fail'}) -> {out}")
    if args.verbose:
        for c in report.checkpoints:
            s = report.summaries[c]
            print(f"  n={c}: mean={s.mean:.5f} var={s.variance:.5f} "
                  f"skew={s.skewness:.3f} exkurt={s.excess_kurtosis:.3f}")
    if args.assert_check and final in report.ks and not report.ks[final][1]:
        return 1
    return 0


def _rate_defaults(args) -> dict[str, str]:
    n = args.n_steps or 100_000
    grid = np.unique(np.logspace(math.log10(max(1000, n // 100)), math.log10(n), 5).astype(int))
    return {
        "replications": "100",
        "checkpoints": ",".join(str(int(g)) for g in grid),
    }


def _cmd_rate(args) -> int:
    config = _load_config(args, defaults=_rate_defaults(args))
    report = run_rate_experiment(config)
    out = args.output_dir / f"rate.{args.format}"
    emit(report, args.format, out)
    lo, hi = report.slope_ci
    ok = abs(report.slope - report.theoretical_exponent) <= SLOPE_TOLERANCE
    print(f"rate: slope={report.slope:.4f} ci=({lo:.4f},{hi:.4f}) "
          f"target={report.theoretical_exponent:.4f} "
          f"({'pass' if ok else 'fail'} at +-{SLOPE_TOLERANCE}) -> {out}")
    return 1 if (args.assert_check and not ok) else 0


def _cmd_probe(args) -> int:
    from .catalog import quadratic_lyapunov

    config = _load_config(args)
    model = config.model()
    innovation = config.innovation(model)
    f = config.observable(model)
    probe_gamma = min(2.0**-6, config.gamma1)
    gammas = [probe_gamma, probe_gamma / 2.0]
    wo = weak_order_probe(config.scheme, model, f, np.full(model.dim, 1.0), gammas, innovation)
    window = EULER_RATIO_WINDOW if config.scheme == "euler" else TALAY_RATIO_WINDOW
    wo_ok = bool(wo.ratios) and (window[0] <= wo.ratios[0] <= window[1] or wo.errors[0] == 0.0)

    q = 1 if config.scheme == "euler" else 2
    mm = moment_match_report(innovation, up_to_order=min(2 * q + 1, 6))
    mm_ok = mm.matched_through() >= 2 * q + 1 if innovation.kind != "gaussian" else True

    lyap = quadratic_lyapunov(alpha=2.0, beta=4.0)
    rc = recursive_control_probe(config.scheme, model, lyap, gamma=probe_gamma,
                                 quadrature=Enumerate())
    payload = {
        "weak_order": json.loads(wo.to_json()),
        "weak_order_window": list(window),
        "weak_order_pass": wo_ok,
        "moment_match": {
            "kind": mm.kind,
            "matched_through": mm.matched_through(),
            "required": 2 * q + 1,
            "pass": mm_ok,
        },
        "recursive_control": json.loads(rc.to_json()),
    }
    out = args.output_dir / "probe.json"
    with open(out, "w") as fh:
        json.dump(payload, fh, indent=2)
    print(f"probe: weak_order ratio={wo.ratios[0]:.3f} ({'pass' if wo_ok else 'fail'}), "
          f"moments through {mm.matched_through()} ({'pass' if mm_ok else 'fail'}), "
          f"recursive control {rc.verdict} -> {out}")
    all_ok = wo_ok and mm_ok and rc.verdict == "pass"
    return 1 if (args.assert_check and not all_ok) else 0


def _cmd_wasserstein(args) -> int:
    config = _default_trace_checkpoints(_load_config(args))
    if config.buffer_capacity <= 0:
        config = ExperimentConfig.from_mapping(
            {**_config_to_mapping(config), "buffer_capacity": "20000"})
    report = run_ergodic_experiment(config, want_w1=True)
    out = args.output_dir / f"wasserstein.{args.format}"
    emit(report, args.format, out)
    means = [report.mean_w1[c] for c in report.checkpoints]
    decreasing = all(b < a for a, b in zip(means, means[1:]))
    print("wasserstein: " + " ".join(
        f"n={c}:{report.mean_w1[c]:.5f}" for c in report.checkpoints)
        + f" ({'decreasing' if decreasing else 'not decreasing'}) -> {out}")
    return 1 if (args.assert_check and not (decreasing and means[-1] < 0.05)) else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ergostep",
        description="Invariant-distribution experiments for decreasing-step schemes",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, blurb in (
        ("simulate", _cmd_simulate, "one trajectory, ergodic-average trace"),
        ("clt", _cmd_clt, "normalized-statistic distribution at checkpoints"),
        ("rate", _cmd_rate, "log-log convergence-rate regression"),
        ("probe", _cmd_probe, "hypothesis diagnostics (weak order, moments, mean reversion)"),
        ("wasserstein", _cmd_wasserstein, "W1 distance trace to the catalog law"),
    ):
        p = sub.add_parser(name, help=blurb)
        _add_common(p)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    try:
        args.output_dir.mkdir(parents=True, exist_ok=True)
        return args.fn(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ExperimentError, InternalInconsistencyError, DivergenceError) as err:
        print(f"experiment failed: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # never a traceback on bad input
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Subcommands:

* ``simulate``       -- run a config end to end, write CSV/JSON artifacts
* ``estimate-mu``    -- nested Monte Carlo growth-optimal weights at a state
* ``survival-sweep`` -- survival classification over strategies x horizons
* ``selftest``       -- built-in verification battery

Exit codes: 0 success, 2 configuration error, 3 model-assumption violation,
4 selftest/acceptance failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .config import ExperimentConfig, default_mu_horizon
from .errors import AssumptionError, ConfigError, MfmError, UnsupportedModelError
from .runner import run, run_estimate_mu, survival_sweep, write_sweep_csv
from .selftest import run_selftest

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
EXIT_SELFTEST = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfm",
        description="Mean-field market Monte Carlo experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one experiment config")
    sim.add_argument("--config", required=True, help="experiment config JSON file")
    sim.add_argument("--seed", type=int, default=None, help="override master seed")
    sim.add_argument("--paths", type=int, default=None, help="override path count")
    sim.add_argument("--out", default=None, help="override output directory")
    sim.add_argument("--threads", type=int, default=1, help="worker threads (speed only)")

    est = sub.add_parser("estimate-mu", help="estimate growth-optimal weights at a state")
    est.add_argument("--config", required=True, help="experiment config JSON file (model and rho)")
    est.add_argument("--state", required=True, help="share state: R1 or comma list summing to 1")
    est.add_argument("--t", type=float, default=0.0, help="evaluation time (default 0)")
    est.add_argument(
        "--horizon", type=float, default=None,
        help="truncation horizon T (default: t + ln(1000)/rho, bias bound 1e-3)",
    )
    est.add_argument("--inner", type=int, default=1000, help="inner Monte Carlo paths")
    est.add_argument("--dt", type=float, default=1e-3, help="inner simulation step")
    est.add_argument("--seed", type=int, default=None, help="override master seed")
    est.add_argument("--out", default=None, help="output directory for mu_estimate.json")

    swp = sub.add_parser("survival-sweep", help="classify strategies across horizons")
    swp.add_argument("--config", required=True, help="base experiment config JSON file")
    swp.add_argument("--strategies", required=True, help="JSON file: list of strategy specs")
    swp.add_argument("--horizons", required=True, help="comma-separated horizons, e.g. 10,40")
    swp.add_argument("--seed", type=int, default=None, help="override master seed")
    swp.add_argument("--paths", type=int, default=None, help="override path count")
    swp.add_argument("--out", default=None, help="override output directory")
    swp.add_argument("--threads", type=int, default=1, help="worker threads (speed only)")

    slf = sub.add_parser("selftest", help="run the built-in verification battery")
    slf.add_argument("--out", default=None, help="working directory for artifacts")
    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["master_seed"] = args.seed
    if getattr(args, "paths", None) is not None:
        changes["n_paths"] = args.paths
    if getattr(args, "out", None) is not None:
        changes["output_dir"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    if cfg.output_dir is None:
        raise ConfigError("no output directory: set output_dir in the config or pass --out")
    res = run(cfg, threads=args.threads)
    print(f"wrote {len(res.files)} files to {res.out_dir}")
    print(
        f"paths={cfg.n_paths} excluded={res.manifest['excluded_path_fraction']:.4%} "
        f"config_hash={res.manifest['config_hash'][:12]}"
    )
    if res.supermartingale is not None:
        verdict = "pass" if res.supermartingale.passed else "FAIL"
        print(f"supermartingale check: {verdict}")
    print(f"survival classification: {res.survival.classification}")
    return EXIT_OK


def _cmd_estimate_mu(args) -> int:
    cfg = _load_config(args)
    state = [float(s) for s in args.state.split(",")]
    state = state[0] if len(state) == 1 else state
    horizon = args.horizon if args.horizon is not None else args.t + default_mu_horizon(cfg.rho)
    est, payload = run_estimate_mu(
        cfg.model,
        state,
        rho=cfg.rho,
        t=args.t,
        horizon=horizon,
        n_inner=args.inner,
        master_seed=cfg.master_seed,
        dt=args.dt,
    )
    for n, (m, se) in enumerate(zip(est.values, est.mc_standard_error)):
        print(f"mu[{n + 1}] = {m:.6f}  (MC standard error {se:.2e})")
    print(f"truncation bias bound = {est.truncation_bias_bound:.3e}")
    out = args.out or cfg.output_dir
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "mu_estimate.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_survival_sweep(args) -> int:
    cfg = _load_config(args)
    with open(args.strategies, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list) or not raw:
        raise ConfigError("--strategies must be a non-empty JSON list")
    specs = []
    for i, item in enumerate(raw):
        if isinstance(item, dict) and "strategy" in item:
            specs.append((item.get("name", f"strategy{i}"), item["strategy"]))
        else:
            specs.append((f"strategy{i}", item))
    horizons = [float(h) for h in args.horizons.split(",")]
    rows = survival_sweep(cfg, specs, horizons, threads=args.threads)
    out = Path(args.out or cfg.output_dir or ".")
    path = write_sweep_csv(rows, out / "survival_sweep.csv")
    for row in rows:
        print(f"{row['strategy']} @ T={row['horizon']}: {row['classification']}")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_selftest(args) -> int:
    t0 = time.perf_counter()
    results = run_selftest(work_dir=args.out)
    all_ok = True
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        all_ok = all_ok and res.passed
        print(f"[{status}] {res.name} ({res.seconds:.1f}s): {res.detail}")
    print(f"selftest {'passed' if all_ok else 'FAILED'} in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK if all_ok else EXIT_SELFTEST


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "estimate-mu": _cmd_estimate_mu,
        "survival-sweep": _cmd_survival_sweep,
        "selftest": _cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, UnsupportedModelError, FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssumptionError as exc:
        print(f"model assumption violated: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except MfmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

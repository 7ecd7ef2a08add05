import json
import subprocess
import sys

import numpy as np
import pytest

from mfmarket import AssumptionError, ExperimentConfig
from mfmarket.cli import main
from mfmarket.runner import run, run_estimate_mu, survival_sweep, write_sweep_csv


BASE = {
    "model": {"variant": "wright_fisher", "sigma": 0.5, "x0": 0.5},
    "rho": 0.2,
    "grid": {"t_start": 0.0, "t_end": 1.0, "dt": 0.01},
    "strategy": {"kind": "constant", "weights": [0.3, 0.7]},
    "n_paths": 200,
    "master_seed": 42,
    "checkpoints": [0.5, 1.0],
}


def _cfg(**overrides):
    return ExperimentConfig.from_dict(dict(BASE, **overrides))


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------

def test_run_produces_expected_files(tmp_path):
    res = run(_cfg(), out_dir=tmp_path / "out")
    names = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert names == [
        "checkpoint_stats.csv",
        "manifest.json",
        "paths_summary.csv",
        "supermartingale_report.json",
        "survival_report.json",
    ]
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["config_hash"] == _cfg().config_hash()
    assert manifest["n_paths"] == 200
    assert manifest["excluded_path_fraction"] == 0.0
    body = (tmp_path / "out" / "checkpoint_stats.csv").read_text().splitlines()
    assert body[0] == "t,mean_ratio,se_ratio,median_ratio,p05_ratio,mean_G,median_G"
    assert len(body) == 1 + len(res.checkpoint_times)


def test_run_reports_are_populated():
    res = run(_cfg())
    assert res.supermartingale is not None
    assert res.supermartingale.passed
    assert res.survival.classification in {
        "extinction-consistent", "survival-consistent", "inconclusive"
    }
    assert res.ratios.shape == (200, len(res.checkpoint_times))


def test_run_determinism_across_everything(tmp_path):
    outs = {}
    for tag, kwargs in {
        "a": dict(threads=1),
        "b": dict(threads=1),
        "c": dict(threads=4),
        "d": dict(threads=1, block_size=32),
    }.items():
        res = run(_cfg(), out_dir=tmp_path / tag, **kwargs)
        outs[tag] = {
            name: p.read_bytes() for name, p in res.files.items() if p.suffix == ".csv"
        }
    assert outs["a"] == outs["b"] == outs["c"] == outs["d"]


def test_run_skips_supermartingale_when_underpowered(tmp_path):
    res = run(_cfg(n_paths=50), out_dir=tmp_path / "out")
    assert res.supermartingale is None
    payload = json.loads((tmp_path / "out" / "supermartingale_report.json").read_text())
    assert "skipped" in payload


def test_run_fails_on_mass_exclusion():
    # rho dt close to 1 with weights parked on a nearly dividend-less asset:
    # most paths die, which must abort the run
    # slow discounting makes the market weights sit near theta while the
    # shares sit at the edge; an agent holding only the barely-paying asset
    # then consumes rho dt > 1 of wealth per step at this absurd step size
    cfg = _cfg(
        model={"variant": "linear_drift_r", "kappa": 10.0, "theta": 0.5, "sigma": 0.0, "r0": 0.998},
        rho=0.05,
        grid={"t_start": 0.0, "t_end": 50.0, "dt": 25.0},
        strategy={"kind": "constant", "weights": [1e-6, 1.0]},
        checkpoints=[25.0, 50.0],
        n_paths=50,
    )
    with pytest.raises(AssumptionError):
        run(cfg)


def test_reports_recompute_bit_for_bit_from_csv(tmp_path):
    # the stored per-path CSV carries enough digits that re-running the
    # analysis on it reproduces the report JSONs exactly
    import dataclasses

    from mfmarket.analysis import classify_survival
    from mfmarket import test_supermartingale as supermartingale_check
    from mfmarket.runner import load_paths_summary

    cfg = _cfg()
    res = run(cfg, out_dir=tmp_path / "out")
    times, ratios, g, excluded = load_paths_summary(tmp_path / "out" / "paths_summary.csv")
    assert times == res.checkpoint_times
    np.testing.assert_array_equal(ratios, res.ratios)
    np.testing.assert_array_equal(g, res.g)

    alive = ~excluded
    user_cols = [times.index(c) for c in cfg.checkpoints]
    sm = supermartingale_check(
        ratios[alive][:, user_cols], cfg.checkpoints, res.ratio0, float(excluded.mean())
    )
    assert json.loads(json.dumps(dataclasses.asdict(sm))) == json.loads(
        (tmp_path / "out" / "supermartingale_report.json").read_text()
    )
    half, full = times.index(0.5), times.index(1.0)
    sv = classify_survival(
        g[alive, half], g[alive, full], ratios[alive, half], ratios[alive, full],
        horizon=1.0, thresholds=cfg.build_thresholds(),
    )
    assert json.loads(json.dumps(dataclasses.asdict(sv))) == json.loads(
        (tmp_path / "out" / "survival_report.json").read_text()
    )


def test_estimate_mu_runner():
    est, payload = run_estimate_mu(
        {"variant": "wright_fisher", "sigma": 0.5, "x0": 0.4},
        0.4,
        rho=1.0,
        t=0.0,
        horizon=4.0,
        n_inner=200,
        master_seed=9,
        dt=5e-3,
    )
    assert abs(est.values[0] - 0.4) <= est.truncation_bias_bound + 3 * est.mc_standard_error[0]
    assert payload["mu"] == est.values.tolist()
    assert payload["state"] == [0.4, 0.6]


def test_survival_sweep_rows_and_errors(tmp_path):
    base = _cfg(n_paths=150)
    rows = survival_sweep(
        base,
        [
            ("market", {"kind": "optimal"}),
            ("broken", {"kind": "constant", "weights": [-1.0, -1.0]}),
        ],
        horizons=[0.5, 1.0],
    )
    assert len(rows) == 4
    market_rows = [r for r in rows if r["strategy"] == "market"]
    assert all(r["classification"] == "survival-consistent" for r in market_rows)
    broken = [r for r in rows if r["strategy"] == "broken"]
    assert all(r["classification"] == "error" and r["error"] for r in broken)

    path = write_sweep_csv(rows, tmp_path / "sweep.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 5
    assert lines[0].startswith("strategy,horizon,classification")


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _write_config(tmp_path, **overrides):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(dict(BASE, **overrides)))
    return path


def test_cli_simulate_roundtrip(tmp_path, capsys):
    cfg_path = _write_config(tmp_path)
    rc = main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
    assert rc == 0
    captured = capsys.readouterr()
    assert "survival classification" in captured.out
    assert (tmp_path / "out" / "manifest.json").exists()


def test_cli_rejects_bad_dt(tmp_path, capsys):
    cfg_path = _write_config(tmp_path, grid={"t_start": 0.0, "t_end": 1.0, "dt": -0.01})
    rc = main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_cli_rejects_zero_paths(tmp_path, capsys):
    cfg_path = _write_config(tmp_path, n_paths=0)
    rc = main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
    assert rc == 2


def test_cli_rejects_missing_config(tmp_path, capsys):
    rc = main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
    assert rc == 2


def test_cli_assumption_violation_exit_code(tmp_path, capsys):
    cfg_path = _write_config(
        tmp_path,
        model={"variant": "linear_drift_r", "kappa": 10.0, "theta": 0.5, "sigma": 0.0, "r0": 0.998},
        rho=0.05,
        grid={"t_start": 0.0, "t_end": 50.0, "dt": 25.0},
        strategy={"kind": "constant", "weights": [1e-6, 1.0]},
        checkpoints=[25.0, 50.0],
        n_paths=50,
    )
    rc = main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
    assert rc == 3
    assert "assumption" in capsys.readouterr().err


def test_cli_flag_overrides(tmp_path, capsys):
    cfg_path = _write_config(tmp_path)
    rc = main([
        "simulate", "--config", str(cfg_path), "--out", str(tmp_path / "out"),
        "--paths", "120", "--seed", "77",
    ])
    assert rc == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["n_paths"] == 120
    assert manifest["master_seed"] == 77


def test_cli_estimate_mu(tmp_path, capsys):
    cfg_path = _write_config(tmp_path)
    rc = main([
        "estimate-mu", "--config", str(cfg_path), "--state", "0.4",
        "--horizon", "4.0", "--inner", "100", "--dt", "0.005",
        "--out", str(tmp_path / "mu"),
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "mu[1]" in out and "truncation bias bound" in out
    payload = json.loads((tmp_path / "mu" / "mu_estimate.json").read_text())
    assert payload["n_inner"] == 100


def test_cli_estimate_mu_rejects_unsupported_model(tmp_path, capsys):
    # a valid config whose state vector cannot be normalized is a config error
    cfg_path = _write_config(tmp_path)
    rc = main([
        "estimate-mu", "--config", str(cfg_path), "--state=-1,-1",
        "--horizon", "4.0",
    ])
    assert rc == 2


def test_cli_survival_sweep(tmp_path, capsys):
    cfg_path = _write_config(tmp_path, n_paths=120)
    strat_path = tmp_path / "strategies.json"
    strat_path.write_text(json.dumps([
        {"name": "market", "strategy": {"kind": "optimal"}},
        {"kind": "constant", "weights": [0.3, 0.7]},
    ]))
    rc = main([
        "survival-sweep", "--config", str(cfg_path), "--strategies", str(strat_path),
        "--horizons", "0.5,1", "--out", str(tmp_path / "sweep"),
    ])
    assert rc == 0
    lines = (tmp_path / "sweep" / "survival_sweep.csv").read_text().splitlines()
    assert len(lines) == 5


def test_cli_entry_point_subprocess(tmp_path):
    cfg_path = _write_config(tmp_path)
    proc = subprocess.run(
        [sys.executable, "-m", "mfmarket.cli", "simulate", "--config", str(cfg_path),
         "--out", str(tmp_path / "out")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr

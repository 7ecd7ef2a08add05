"""Experiment orchestration: block-parallel Monte Carlo, reports, artifacts.

Paths are partitioned into contiguous blocks by stream id; each block is
simulated independently (possibly concurrently) and reduced by block index,
so results are byte-identical regardless of thread count.  Output files are
written by a single writer after the reduction, with floats rendered at 17
significant digits for bit-exact round trips.
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .analysis import (
    SupermartingaleReport,
    SurvivalReport,
    classify_survival,
    test_supermartingale,
)
from .config import ExperimentConfig, build_model
from .dynamics import simulate_market
from .errors import AssumptionError, MfmError
from .paths import RngSpec
from .strategies import estimate_mu_nested_mc

# exclusion beyond this fraction signals a broken discretization, not noise
MAX_EXCLUDED_FRACTION = 1e-3

# soft cap on per-block working memory (all diagnostic series materialized)
_BLOCK_BYTES = 2.5e8


def _block_size(n_paths: int, n_points: int, n_assets: int) -> int:
    per_path = 8.0 * n_points * (8 + 6 * n_assets)
    return max(8, min(n_paths, int(_BLOCK_BYTES / per_path)))


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class RunResult:
    """In-memory view of one experiment run plus the files it wrote."""

    config: ExperimentConfig
    out_dir: Optional[Path]
    manifest: dict
    checkpoint_times: tuple        # internal checkpoints (user's plus T/2 and T)
    ratios: np.ndarray             # (n_paths, n_checkpoints)
    g: np.ndarray                  # (n_paths, n_checkpoints)
    excluded: np.ndarray           # (n_paths,) bool
    supermartingale: Optional[SupermartingaleReport]
    survival: SurvivalReport
    ratio0: float
    zt_form_max_gap: float
    g_qv_max_rel_gap: float
    files: dict


def _internal_checkpoints(config: ExperimentConfig):
    grid = config.build_grid()
    idx = {grid.index_of(c) for c in config.checkpoints}
    half = int(round(grid.n_steps / 2))
    idx.add(half)
    idx.add(grid.n_steps)
    ordered = sorted(idx)
    times = tuple(grid.times[k] for k in ordered)
    return grid, ordered, times, half, grid.n_steps


def run(config: ExperimentConfig, threads: int = 1, out_dir=None, block_size=None) -> RunResult:
    """Execute one experiment and (optionally) write its artifact files.

    ``threads`` affects speed only; per-path streams make the results
    independent of both the block partition and the thread count, and the
    reduction goes by block index.  ``block_size`` overrides the memory-based
    default partition (useful for testing that independence).
    """
    t_begin = time.perf_counter()
    config.validate()
    model = config.build_model()
    strategy = config.build_strategy(model)
    params = config.build_market_params(model)
    grid, ckpt_idx, ckpt_times, half_idx, last_idx = _internal_checkpoints(config)

    n_paths = config.n_paths
    block = block_size if block_size else _block_size(n_paths, grid.n_points, model.n_assets)
    starts = list(range(0, n_paths, block))

    def do_block(start: int):
        count = min(block, n_paths - start)
        diag = simulate_market(
            model,
            strategy,
            params,
            grid,
            RngSpec(config.master_seed, start),
            count,
            path_ids=np.arange(start, start + count),
        )
        return (
            diag.ratio[:, ckpt_idx],
            diag.g[:, ckpt_idx],
            diag.excluded,
            diag.ratio0,
            diag.zt_form_max_gap,
            diag.g_qv_max_rel_gap,
        )

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(do_block, starts))
    else:
        results = [do_block(s) for s in starts]

    ratios = np.vstack([r[0] for r in results])
    g = np.vstack([r[1] for r in results])
    excluded = np.concatenate([r[2] for r in results])
    ratio0 = results[0][3]
    zt_gap = max(r[4] for r in results)
    g_qv_gap = max(r[5] for r in results)

    excluded_fraction = float(excluded.mean())
    if excluded_fraction > MAX_EXCLUDED_FRACTION:
        raise AssumptionError(
            f"{excluded_fraction:.2%} of paths hit non-positive wealth "
            f"(limit {MAX_EXCLUDED_FRACTION:.2%}); refine dt or check the model"
        )

    alive = ~excluded
    user_cols = [ckpt_idx.index(grid.index_of(c)) for c in config.checkpoints]
    sm_report = None
    if int(alive.sum()) >= 100:
        sm_report = test_supermartingale(
            ratios[alive][:, user_cols], config.checkpoints, ratio0, excluded_fraction
        )
    half_col = ckpt_idx.index(half_idx)
    last_col = ckpt_idx.index(last_idx)
    survival = classify_survival(
        g[alive, half_col],
        g[alive, last_col],
        ratios[alive, half_col],
        ratios[alive, last_col],
        horizon=grid.times[last_idx],
        thresholds=config.build_thresholds(),
    )

    duration = time.perf_counter() - t_begin
    manifest = {
        "config_hash": config.config_hash(),
        "tool_version": __version__,
        "master_seed": config.master_seed,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "excluded_path_fraction": excluded_fraction,
        "wall_clock_seconds": duration,
        "n_paths": n_paths,
        "zt_form_max_gap": zt_gap,
        "g_qv_max_rel_gap": g_qv_gap,
    }

    out = out_dir if out_dir is not None else config.output_dir
    files = {}
    if out is not None:
        files = _write_artifacts(
            Path(out), config, ckpt_times, ratios, g, excluded, sm_report, survival, manifest
        )

    return RunResult(
        config=config,
        out_dir=None if out is None else Path(out),
        manifest=manifest,
        checkpoint_times=ckpt_times,
        ratios=ratios,
        g=g,
        excluded=excluded,
        supermartingale=sm_report,
        survival=survival,
        ratio0=ratio0,
        zt_form_max_gap=zt_gap,
        g_qv_max_rel_gap=g_qv_gap,
        files=files,
    )


def _write_artifacts(out, config, ckpt_times, ratios, g, excluded, sm_report, survival, manifest):
    out.mkdir(parents=True, exist_ok=True)
    files = {}

    labels = [repr(float(t)) for t in ckpt_times]  # shortest exact float form
    paths_csv = out / "paths_summary.csv"
    with open(paths_csv, "w", encoding="utf-8", newline="\n") as fh:
        header = ["path", "excluded"]
        header += [f"ratio_t{lbl}" for lbl in labels] + [f"g_t{lbl}" for lbl in labels]
        fh.write(",".join(header) + "\n")
        for p in range(ratios.shape[0]):
            row = [str(p), "1" if excluded[p] else "0"]
            row += [_fmt(x) for x in ratios[p]] + [_fmt(x) for x in g[p]]
            fh.write(",".join(row) + "\n")
    files["paths_summary"] = paths_csv

    alive = ~excluded
    stats_csv = out / "checkpoint_stats.csv"
    with open(stats_csv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,mean_ratio,se_ratio,median_ratio,p05_ratio,mean_G,median_G\n")
        n_alive = max(int(alive.sum()), 1)
        for j, t in enumerate(ckpt_times):
            r = ratios[alive, j]
            gg = g[alive, j]
            se = float(r.std(ddof=1) / np.sqrt(n_alive)) if n_alive > 1 else 0.0
            fh.write(
                ",".join(
                    [
                        _fmt(t),
                        _fmt(r.mean()),
                        _fmt(se),
                        _fmt(np.median(r)),
                        _fmt(np.percentile(r, 5)),
                        _fmt(gg.mean()),
                        _fmt(np.median(gg)),
                    ]
                )
                + "\n"
            )
    files["checkpoint_stats"] = stats_csv

    sm_json = out / "supermartingale_report.json"
    payload = (
        {"skipped": "fewer than 100 surviving paths"}
        if sm_report is None
        else dataclasses.asdict(sm_report)
    )
    _dump_json(sm_json, payload)
    files["supermartingale_report"] = sm_json

    sv_json = out / "survival_report.json"
    _dump_json(sv_json, dataclasses.asdict(survival))
    files["survival_report"] = sv_json

    mf_json = out / "manifest.json"
    _dump_json(mf_json, dict(manifest, files=sorted(f.name for f in files.values())))
    files["manifest"] = mf_json
    return files


def _dump_json(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# estimate-mu and survival-sweep entry points
# ---------------------------------------------------------------------------

def run_estimate_mu(
    model_spec: dict,
    r_state,
    rho: float,
    t: float,
    horizon: float,
    n_inner: int,
    master_seed: int,
    dt: float = 1e-3,
    stream_id: int = 0,
):
    """Estimate the growth-optimal weights at a state; returns (estimate, dict)."""
    model = build_model(model_spec)
    r_state = np.asarray(r_state, dtype=float)
    if r_state.ndim == 0:
        r_state = np.array([float(r_state), 1.0 - float(r_state)])
    est = estimate_mu_nested_mc(
        model, r_state, t, rho, horizon, n_inner, RngSpec(master_seed, stream_id), dt
    )
    payload = {
        "model": model_spec,
        "state": r_state.tolist(),
        "t": t,
        "horizon": horizon,
        "rho": rho,
        "n_inner": n_inner,
        "dt": dt,
        "master_seed": master_seed,
        "mu": est.values.tolist(),
        "truncation_bias_bound": est.truncation_bias_bound,
        "mc_standard_error": est.mc_standard_error.tolist(),
    }
    return est, payload


def survival_sweep(
    base: ExperimentConfig,
    strategy_specs: Sequence[tuple],
    horizons: Sequence[float],
    threads: int = 1,
) -> list:
    """Run the survival classification for every (strategy, horizon) cell.

    ``strategy_specs`` is a sequence of (name, strategy-dict) pairs.  Cell
    failures are recorded in the row and do not stop the sweep.
    """
    rows = []
    dt = base.grid["dt"]
    for name, spec in strategy_specs:
        for h in horizons:
            row = {"strategy": name, "horizon": h}
            try:
                k_half = int(round(0.5 * h / dt))
                cfg = base.replace(
                    strategy=spec,
                    grid={"t_start": base.grid["t_start"], "t_end": base.grid["t_start"] + h, "dt": dt},
                    checkpoints=[base.grid["t_start"] + k_half * dt, base.grid["t_start"] + h],
                    output_dir=None,
                )
                res = run(cfg, threads=threads)
                sv = res.survival
                row.update(
                    classification=sv.classification,
                    n_paths=sv.n_paths,
                    excluded_fraction=res.manifest["excluded_path_fraction"],
                    median_g_half=sv.median_g_half,
                    median_g_full=sv.median_g_full,
                    median_g_growth_ratio=sv.median_g_growth_ratio,
                    median_ratio_half=sv.median_ratio_half,
                    median_ratio_full=sv.median_ratio_full,
                    p05_ratio_full=sv.p05_ratio_full,
                    error="",
                )
            except MfmError as exc:
                row.update(classification="error", error=str(exc))
            rows.append(row)
    return rows


def load_paths_summary(path):
    """Read a ``paths_summary.csv`` back into arrays.

    Returns ``(checkpoint_times, ratios, g, excluded)``.  Floats are written
    with 17 significant digits, so the reports recomputed from the file match
    the originals bit for bit.
    """
    import csv

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        ratio_cols = [i for i, name in enumerate(header) if name.startswith("ratio_t")]
        g_cols = [i for i, name in enumerate(header) if name.startswith("g_t")]
        times = tuple(float(header[i][len("ratio_t"):]) for i in ratio_cols)
        ratios, g, excluded = [], [], []
        for row in reader:
            excluded.append(row[1] == "1")
            ratios.append([float(row[i]) for i in ratio_cols])
            g.append([float(row[i]) for i in g_cols])
    return times, np.array(ratios), np.array(g), np.array(excluded, dtype=bool)


_SWEEP_COLUMNS = [
    "strategy", "horizon", "classification", "n_paths", "excluded_fraction",
    "median_g_half", "median_g_full", "median_g_growth_ratio",
    "median_ratio_half", "median_ratio_full", "p05_ratio_full", "error",
]


def write_sweep_csv(rows: list, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(_SWEEP_COLUMNS) + "\n")
        for row in rows:
            cells = []
            for col in _SWEEP_COLUMNS:
                val = row.get(col, "")
                if isinstance(val, float):
                    cells.append(_fmt(val))
                else:
                    cells.append(str(val))
            fh.write(",".join(cells) + "\n")
    return path

"""Experiment configuration: JSON schema, validation, and reproducibility.

Configs are plain dicts with a versioned schema; unknown fields are rejected
(fail-closed) so a typo cannot silently change an experiment.  The canonical
serialized form is hashed into the run manifest; any field change changes the
hash.

Environment overrides: variables with the ``MFM_`` prefix map onto config
fields, with ``__`` descending into sections.  Examples::

    MFM_N_PATHS=500          -> n_paths
    MFM_MASTER_SEED=7        -> master_seed
    MFM_GRID__DT=0.001       -> grid.dt
    MFM_MODEL__SIGMA=0.5     -> model.sigma

Values are parsed as JSON when possible and fall back to raw strings.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import dividends as dv
from . import strategies as st
from .analysis import SurvivalThresholds
from .dynamics import MarketParams
from .errors import ConfigError
from .paths import RngSpec, TimeGrid, make_grid

SCHEMA_VERSION = 1

ENV_PREFIX = "MFM_"


def _require_keys(d: Mapping, allowed: set, required: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {sorted(unknown)}")
    missing = required - set(d)
    if missing:
        raise ConfigError(f"missing field(s) in {where}: {sorted(missing)}")


def _number(d: Mapping, key: str, where: str) -> float:
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number, got {v!r}")
    return float(v)


def _integer(d: Mapping, key: str, where: str) -> int:
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}.{key} must be an integer, got {v!r}")
    return v


# ---------------------------------------------------------------------------
# Model and strategy sub-specs
# ---------------------------------------------------------------------------

def build_model(spec: Mapping) -> dv.DividendModelSpec:
    if not isinstance(spec, Mapping) or "variant" not in spec:
        raise ConfigError("model must be an object with a 'variant' field")
    variant = spec["variant"]
    if variant == "wright_fisher":
        _require_keys(spec, {"variant", "sigma", "x0"}, {"sigma", "x0"}, "model")
        return dv.WrightFisherSpec(sigma=_number(spec, "sigma", "model"), x0=_number(spec, "x0", "model"))
    if variant == "linear_drift_r":
        _require_keys(spec, {"variant", "kappa", "theta", "sigma", "r0"}, {"kappa", "theta", "sigma", "r0"}, "model")
        return dv.LinearDriftRSpec(
            kappa=_number(spec, "kappa", "model"),
            theta=_number(spec, "theta", "model"),
            sigma=_number(spec, "sigma", "model"),
            r0=_number(spec, "r0", "model"),
        )
    if variant == "martingale_r":
        _require_keys(spec, {"variant", "r0", "sigma"}, {"r0", "sigma"}, "model")
        r0 = np.asarray(spec["r0"], dtype=float)
        sig = spec["sigma"]
        if not isinstance(sig, Mapping) or "form" not in sig:
            raise ConfigError("model.sigma must be an object with a 'form' field")
        if sig["form"] == "wf_pair":
            _require_keys(sig, {"form", "sigma"}, {"sigma"}, "model.sigma")
            if r0.shape != (2,):
                raise ConfigError("wf_pair volatility needs exactly 2 assets")
            sigma_fn = dv.WrightFisherPairSigma(_number(sig, "sigma", "model.sigma"))
            k = 1
        elif sig["form"] == "constant":
            _require_keys(sig, {"form", "matrix"}, {"matrix"}, "model.sigma")
            sigma_fn = dv.ConstantSigma(sig["matrix"])
            if sigma_fn.matrix.shape[0] != r0.shape[0]:
                raise ConfigError("sigma matrix rows must match the number of assets")
            k = sigma_fn.matrix.shape[1]
        else:
            raise ConfigError(f"unknown model.sigma form {sig['form']!r}")
        return dv.MartingaleRSpec(n_assets=r0.shape[0], n_drivers=k, sigma=sigma_fn, r0=r0)
    raise ConfigError(f"unknown model variant {variant!r}")


def model_to_dict(model: dv.DividendModelSpec) -> dict:
    if isinstance(model, dv.WrightFisherSpec):
        return {"variant": "wright_fisher", "sigma": model.sigma, "x0": model.x0}
    if isinstance(model, dv.LinearDriftRSpec):
        return {
            "variant": "linear_drift_r",
            "kappa": model.kappa,
            "theta": model.theta,
            "sigma": model.sigma,
            "r0": model.r0,
        }
    if isinstance(model, dv.MartingaleRSpec):
        if isinstance(model.sigma, dv.WrightFisherPairSigma):
            sig = {"form": "wf_pair", "sigma": model.sigma.sigma}
        elif isinstance(model.sigma, dv.ConstantSigma):
            sig = {"form": "constant", "matrix": model.sigma.matrix.tolist()}
        else:
            raise ConfigError("only named sigma forms can be serialized")
        return {"variant": "martingale_r", "r0": model.r0.tolist(), "sigma": sig}
    raise ConfigError(f"cannot serialize model {type(model).__name__}")


def build_strategy(spec: Mapping, model: dv.DividendModelSpec, rho: float, master_seed: int) -> st.Strategy:
    if not isinstance(spec, Mapping) or "kind" not in spec:
        raise ConfigError("strategy must be an object with a 'kind' field")
    kind = spec["kind"]
    if kind == "constant":
        _require_keys(spec, {"kind", "weights"}, {"weights"}, "strategy")
        return st.ConstantStrategy(np.asarray(spec["weights"], dtype=float))
    if kind == "optimal":
        _require_keys(spec, {"kind"}, set(), "strategy")
        return st.OptimalClosedForm(model, rho)
    if kind == "optimal_nested_mc":
        _require_keys(
            spec, {"kind", "horizon", "inner_paths", "dt", "stream_id"}, {"inner_paths"}, "strategy"
        )
        horizon = spec.get("horizon")
        if horizon is None:
            horizon = default_mu_horizon(rho)
        return st.NestedMCStrategy(
            model=model,
            rho=rho,
            horizon=float(horizon),
            n_inner=_integer(spec, "inner_paths", "strategy"),
            rng=RngSpec(master_seed, int(spec.get("stream_id", 0))),
            dt=float(spec.get("dt", 1e-3)),
        )
    if kind == "perturbed":
        _require_keys(spec, {"kind", "base", "delta", "weight"}, {"base", "delta", "weight"}, "strategy")
        base = build_strategy(spec["base"], model, rho, master_seed)
        weight = _build_weight(spec["weight"])
        return st.PerturbedStrategy(base=base, delta=np.asarray(spec["delta"], dtype=float), weight=weight)
    raise ConfigError(f"unknown strategy kind {kind!r}")


def default_mu_horizon(rho: float) -> float:
    """Truncation horizon making the weight-estimator bias bound 1e-3."""
    if rho <= 0:
        raise ConfigError(f"rho must be > 0, got {rho}")
    return float(np.log(1e3) / rho)


def _build_weight(spec: Mapping):
    if not isinstance(spec, Mapping) or "kind" not in spec:
        raise ConfigError("strategy.weight must be an object with a 'kind' field")
    if spec["kind"] == "constant":
        _require_keys(spec, {"kind", "value"}, {"value"}, "strategy.weight")
        return st.ConstantWeight(_number(spec, "value", "strategy.weight"))
    if spec["kind"] == "exp_decay":
        _require_keys(spec, {"kind", "scale", "rate"}, set(), "strategy.weight")
        return st.ExpDecayWeight(
            scale=float(spec.get("scale", 1.0)), rate=float(spec.get("rate", 1.0))
        )
    raise ConfigError(f"unknown weight kind {spec['kind']!r}")


# ---------------------------------------------------------------------------
# Experiment config
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, reproducible run specification."""

    model: dict
    rho: float
    grid: dict                   # {"t_start", "t_end", "dt"}
    strategy: dict
    n_paths: int
    master_seed: int
    checkpoints: tuple
    w0: Optional[float] = None   # defaults to the initial representative wealth
    output_dir: Optional[str] = None
    analysis: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        _require_keys(
            d,
            {
                "schema_version", "model", "rho", "w0", "grid", "strategy",
                "n_paths", "master_seed", "checkpoints", "output_dir", "analysis",
            },
            {"model", "rho", "grid", "strategy", "n_paths", "master_seed", "checkpoints"},
            "config",
        )
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        grid_spec = d["grid"]
        _require_keys(grid_spec, {"t_start", "t_end", "dt"}, {"t_start", "t_end", "dt"}, "grid")
        cfg = cls(
            model=dict(d["model"]),
            rho=_number(d, "rho", "config"),
            grid={k: _number(grid_spec, k, "grid") for k in ("t_start", "t_end", "dt")},
            strategy=_as_plain_dict(d["strategy"]),
            n_paths=_integer(d, "n_paths", "config"),
            master_seed=_integer(d, "master_seed", "config"),
            checkpoints=tuple(float(c) for c in d["checkpoints"]),
            w0=None if d.get("w0") is None else _number(d, "w0", "config"),
            output_dir=d.get("output_dir"),
            analysis=dict(d.get("analysis", {})),
            schema_version=version,
        )
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(apply_env_overrides(raw))

    def validate(self) -> None:
        if self.rho <= 0:
            raise ConfigError(f"rho must be > 0, got {self.rho}")
        if self.n_paths < 1:
            raise ConfigError(f"n_paths must be >= 1, got {self.n_paths}")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if self.w0 is not None and self.w0 <= 0:
            raise ConfigError(f"w0 must be > 0, got {self.w0}")
        if not self.checkpoints:
            raise ConfigError("need at least one checkpoint")
        grid = self.build_grid()
        for c in self.checkpoints:
            grid.index_of(c)  # raises if not a grid point
        model = self.build_model()
        self.build_strategy(model)
        _build_thresholds(self.analysis)

    # -- engine objects ----------------------------------------------------

    def build_grid(self) -> TimeGrid:
        return make_grid(self.grid["t_start"], self.grid["t_end"], self.grid["dt"])

    def build_model(self) -> dv.DividendModelSpec:
        return build_model(self.model)

    def build_strategy(self, model: Optional[dv.DividendModelSpec] = None) -> st.Strategy:
        model = model if model is not None else self.build_model()
        return build_strategy(self.strategy, model, self.rho, self.master_seed)

    def build_market_params(self, model: Optional[dv.DividendModelSpec] = None) -> MarketParams:
        model = model if model is not None else self.build_model()
        w0 = self.w0
        if w0 is None:
            w0 = _initial_total_intensity(model) / self.rho  # ratio0 = 1 by default
        return MarketParams(n_assets=model.n_assets, rho=self.rho, w0=w0)

    def build_thresholds(self) -> SurvivalThresholds:
        return _build_thresholds(self.analysis)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "model": self.model,
            "rho": self.rho,
            "w0": self.w0,
            "grid": self.grid,
            "strategy": self.strategy,
            "n_paths": self.n_paths,
            "master_seed": self.master_seed,
            "checkpoints": list(self.checkpoints),
            "output_dir": self.output_dir,
            "analysis": self.analysis,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)


def _as_plain_dict(obj):
    if isinstance(obj, Mapping):
        return {k: _as_plain_dict(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_as_plain_dict(v) for v in obj]
    return obj


def _initial_total_intensity(model: dv.DividendModelSpec) -> float:
    # built-in models normalize the total intensity to 1
    return 1.0


def _build_thresholds(overrides: Mapping) -> SurvivalThresholds:
    allowed = {"g_growth_min", "ratio_decay_factor", "g_flat_max", "g_negligible"}
    _require_keys(overrides, allowed, set(), "analysis")
    defaults = SurvivalThresholds()
    return SurvivalThresholds(
        g_growth_min=float(overrides.get("g_growth_min", defaults.g_growth_min)),
        ratio_decay_factor=float(overrides.get("ratio_decay_factor", defaults.ratio_decay_factor)),
        g_flat_max=float(overrides.get("g_flat_max", defaults.g_flat_max)),
        g_negligible=float(overrides.get("g_negligible", defaults.g_negligible)),
    )


# ---------------------------------------------------------------------------
# Environment overrides
# ---------------------------------------------------------------------------

def apply_env_overrides(raw: Mapping, environ: Optional[Mapping[str, str]] = None) -> dict:
    """Overlay ``MFM_*`` environment variables onto a raw config dict."""
    environ = os.environ if environ is None else environ
    out = _as_plain_dict(raw)
    for name, value in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = [seg.lower() for seg in name[len(ENV_PREFIX):].split("__")]
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = out
        for seg in path[:-1]:
            nxt = node.get(seg)
            if not isinstance(nxt, dict):
                nxt = {}
                node[seg] = nxt
            node = nxt
        node[path[-1]] = parsed
    return out

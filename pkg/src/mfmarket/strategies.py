"""Simplex-valued trading strategies and growth-optimal weight computation.

The growth-optimal weights of the representative agents are the discounted
expected future dividend shares,

    mu_t^n = integral over s in (t, inf) of rho * exp(-rho (s - t))
             * E[R_s^n | state at t] ds.

For a driftless share model the conditional expectations equal the current
shares, so ``mu = R``.  For the mean-reverting two-asset model the integral
evaluates in closed form to an affine function of the current share.  For any
Markovian model the weights can be estimated by nested Monte Carlo: simulate
inner share paths from the current state, integrate with the exponential
weight up to a finite horizon, and complete the truncated tail with the
terminal share (which keeps the estimate exactly on the simplex and carries a
bias bound of ``exp(-rho * (T - t))``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import dividends as dv
from .errors import ConfigError, InvalidStrategyError, UnsupportedModelError
from .paths import FLOOR_EPS, RngSpec, TimeGrid, make_grid


def validate_simplex(v: np.ndarray, floor: float = FLOOR_EPS) -> np.ndarray:
    """Project weight vectors onto the floored simplex.

    Components are clipped up to ``floor`` and renormalized to sum 1; the
    pass repeats until every component sits at or above the floor
    (renormalizing after a clip can push a floored component back below it
    by a sliver, so one pass is not always enough).  A batch in which every
    row is already on the floored simplex comes back unchanged.

    Applies to the last axis; leading axes are batch dimensions.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] < 1:
        raise InvalidStrategyError("weight vector must have at least one component")
    if not np.all(np.isfinite(v)):
        raise InvalidStrategyError("weight vector has non-finite components")
    if np.any(v.max(axis=-1) <= 0.0):
        raise InvalidStrategyError("all weight components are <= 0; cannot normalize")
    if not (0.0 < floor < 1.0 / v.shape[-1]):
        raise ConfigError(f"floor must lie in (0, 1/N), got {floor}")
    w = v
    for _ in range(32):
        if np.all(w >= floor) and np.all(np.abs(w.sum(axis=-1) - 1.0) <= 1e-12):
            break
        w = np.maximum(w, floor)
        w = w / w.sum(axis=-1, keepdims=True)
    return w


def optimal_mu_martingale(r: np.ndarray) -> np.ndarray:
    """Growth-optimal weights when shares are a martingale: the shares themselves."""
    return np.array(r, dtype=float, copy=True)


def optimal_mu_linear_drift(r1, kappa: float, theta: float, rho: float) -> np.ndarray:
    """Closed-form growth-optimal weights for the mean-reverting share model.

    Substituting ``E[R_s | R_t] = theta + (R_t - theta) exp(-kappa (s - t))``
    into the discounted-expectation integral gives

        mu1 = theta + (R_t - theta) * rho / (rho + kappa),

    which recovers ``mu1 = R_t`` in the ``kappa -> 0`` limit.
    """
    if rho <= 0:
        raise ConfigError(f"rho must be > 0, got {rho}")
    if kappa < 0:
        raise ConfigError(f"kappa must be >= 0, got {kappa}")
    r1 = np.asarray(r1, dtype=float)
    mu1 = theta + (r1 - theta) * (rho / (rho + kappa))
    return np.stack([mu1, 1.0 - mu1], axis=-1)


@dataclass(frozen=True)
class MuEstimate:
    """Nested Monte Carlo estimate of the growth-optimal weights."""

    values: np.ndarray
    truncation_bias_bound: float
    mc_standard_error: np.ndarray
    n_inner: int
    horizon: float

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "mc_standard_error", np.asarray(self.mc_standard_error, dtype=float))


def _inner_share_paths(model, r_state, grid, dw):
    if isinstance(model, dv.WrightFisherSpec):
        r1 = dv.wright_fisher_kernel(model.sigma, r_state[..., 0], grid, dw)
        return np.stack([r1, 1.0 - r1], axis=1)
    if isinstance(model, dv.MartingaleRSpec):
        return dv.martingale_r_kernel(model.sigma, r_state, grid, dw)
    if isinstance(model, dv.LinearDriftRSpec):
        r1 = dv.linear_drift_r_kernel(model, r_state[..., 0], grid, dw)
        return np.stack([r1, 1.0 - r1], axis=1)
    raise UnsupportedModelError(
        f"nested Monte Carlo needs a Markovian built-in model, got {type(model).__name__}"
    )


def estimate_mu_nested_mc(
    model: dv.DividendModelSpec,
    r_state: np.ndarray,
    t: float,
    rho: float,
    horizon: float,
    n_inner: int,
    rng: RngSpec,
    dt: float = 1e-3,
) -> MuEstimate:
    """Estimate the growth-optimal weights at a Markov state by inner simulation.

    Simulates ``n_inner`` share paths from ``r_state`` over ``[t, horizon]``,
    evaluates per path

        y^n = integral of rho * exp(rho (t - s)) * R_s^n ds
              + exp(-rho (horizon - t)) * R_horizon^n,

    and averages.  The time integral uses exact per-panel exponential weights
    against trapezoidal share values, so summing y over assets telescopes to
    exactly 1 and the estimate stays on the simplex.  The tail completion with
    the terminal share bounds the truncation bias by ``exp(-rho (horizon - t))``
    since both the true weights and the shares live in [0, 1].

    Inner path ``m`` draws from the stream ``(rng.master_seed, rng.stream_id, m)``;
    lengthening the horizon reuses the same driver prefix.
    """
    if rho <= 0:
        raise ConfigError(f"rho must be > 0, got {rho}")
    if horizon <= t:
        raise ConfigError(f"horizon {horizon} must exceed evaluation time {t}")
    if n_inner < 2:
        raise ConfigError(f"need at least 2 inner paths, got {n_inner}")
    r_state = validate_simplex(np.asarray(r_state, dtype=float))
    # built-in models are time-homogeneous: simulate on [0, horizon - t],
    # rounding the horizon up to whole steps (extending it only shrinks the
    # truncation bias, and the reported bound uses the actual grid end)
    n_steps = max(1, int(np.ceil((horizon - t) / dt - 1e-12)))
    grid = make_grid(0.0, n_steps * dt, dt)
    scale = np.sqrt(grid.dt)
    dims = model.n_drivers

    w = np.exp(-rho * grid.times)          # exp(rho (t - s)) on the shifted grid
    panel = w[:-1] - w[1:]                 # exact integral of the weight per panel

    # chunk the inner batch to bound memory; per-path streams make the
    # chunking invisible in the results
    chunk = max(2, min(n_inner, int(1.5e8 / (8.0 * grid.n_points * (dims + 2 * model.n_assets)))))
    y = np.empty((n_inner, model.n_assets))
    for lo in range(0, n_inner, chunk):
        hi = min(lo + chunk, n_inner)
        dw = np.empty((hi - lo, dims, grid.n_steps))
        for m in range(lo, hi):
            dw[m - lo] = rng.substream(m).normal(0.0, scale, size=(dims, grid.n_steps))
        r_paths = _inner_share_paths(
            model, np.broadcast_to(r_state, (hi - lo,) + r_state.shape), grid, dw
        )
        mid = 0.5 * (r_paths[:, :, :-1] + r_paths[:, :, 1:])
        y[lo:hi] = np.einsum("pnk,k->pn", mid, panel) + w[-1] * r_paths[:, :, -1]

    mu_hat = y.mean(axis=0)
    se = y.std(axis=0, ddof=1) / np.sqrt(n_inner)
    return MuEstimate(
        values=validate_simplex(mu_hat),
        truncation_bias_bound=float(w[-1]),
        mc_standard_error=se,
        n_inner=n_inner,
        horizon=float(horizon),
    )


# ---------------------------------------------------------------------------
# Strategy objects
# ---------------------------------------------------------------------------

class Strategy:
    """Pointwise rule mapping (time, current shares) to portfolio weights.

    ``weights`` accepts a batch of share vectors with the asset axis last and
    must return weights on the floored simplex.  ``stream_key`` identifies the
    evaluation context (step index, global path id) for strategies that draw
    randomness; deterministic strategies ignore it.
    """

    needs_streams = False

    def weights(self, t: float, r: np.ndarray, stream_key: tuple = ()) -> np.ndarray:
        raise NotImplementedError

    def weights_along(self, times: np.ndarray, r_all: np.ndarray, path_ids=None) -> np.ndarray:
        """Weights at every grid point of a path batch (paths, assets, points).

        The base implementation loops over grid points; deterministic
        subclasses override it with a fully vectorized evaluation.
        """
        out = np.empty_like(r_all)
        if not self.needs_streams:
            for k in range(r_all.shape[-1]):
                out[:, :, k] = self.weights(times[k], r_all[:, :, k])
            return out
        if path_ids is None:
            path_ids = np.arange(r_all.shape[0])
        for k in range(r_all.shape[-1]):
            for i in range(r_all.shape[0]):
                out[i, :, k] = self.weights(
                    times[k], r_all[i, :, k], stream_key=(k, int(path_ids[i]))
                )
        return out


@dataclass(frozen=True)
class ConstantStrategy(Strategy):
    """Fixed weights, independent of time and state."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", validate_simplex(np.asarray(self.values, dtype=float)))

    def weights(self, t, r, stream_key=()):
        r = np.asarray(r)
        return np.broadcast_to(self.values, r.shape).copy()

    def weights_along(self, times, r_all, path_ids=None):
        return np.broadcast_to(self.values[np.newaxis, :, np.newaxis], r_all.shape).copy()


@dataclass(frozen=True)
class OptimalClosedForm(Strategy):
    """Growth-optimal weights in closed form for the built-in models."""

    model: dv.DividendModelSpec
    rho: float

    def __post_init__(self):
        if self.rho <= 0:
            raise ConfigError(f"rho must be > 0, got {self.rho}")

    def weights(self, t, r, stream_key=()):
        if isinstance(self.model, (dv.WrightFisherSpec, dv.MartingaleRSpec)):
            return optimal_mu_martingale(r)
        if isinstance(self.model, dv.LinearDriftRSpec):
            return optimal_mu_linear_drift(
                np.asarray(r)[..., 0], self.model.kappa, self.model.theta, self.rho
            )
        raise UnsupportedModelError(
            f"no closed-form optimal weights for {type(self.model).__name__}"
        )

    def weights_along(self, times, r_all, path_ids=None):
        if isinstance(self.model, (dv.WrightFisherSpec, dv.MartingaleRSpec)):
            return optimal_mu_martingale(r_all)
        if isinstance(self.model, dv.LinearDriftRSpec):
            mu1 = self.model.theta + (r_all[:, 0, :] - self.model.theta) * (
                self.rho / (self.rho + self.model.kappa)
            )
            return np.stack([mu1, 1.0 - mu1], axis=1)
        raise UnsupportedModelError(
            f"no closed-form optimal weights for {type(self.model).__name__}"
        )


@dataclass(frozen=True)
class NestedMCStrategy(Strategy):
    """Growth-optimal weights estimated pointwise by nested Monte Carlo.

    Expensive: every evaluation launches ``n_inner`` inner simulations.  Meant
    for spot checks and the estimate-mu command, not large path batches.
    """

    model: dv.DividendModelSpec
    rho: float
    horizon: float
    n_inner: int
    rng: RngSpec
    dt: float = 1e-3

    needs_streams = True

    def weights(self, t, r, stream_key=()):
        r = np.asarray(r, dtype=float)
        if r.ndim == 1:
            est = self.estimate(t, r, stream_key)
            return est.values
        out = np.empty_like(r)
        for i in range(r.shape[0]):
            out[i] = self.estimate(t, r[i], stream_key + (i,)).values
        return out

    def estimate(self, t, r_state, stream_key=()) -> MuEstimate:
        base = RngSpec(self.rng.master_seed, self.rng.stream_id)
        gen_spec = base if not stream_key else _derived_spec(base, stream_key)
        return estimate_mu_nested_mc(
            self.model, r_state, t, self.rho, t + self.horizon, self.n_inner, gen_spec, self.dt
        )


class _derived_spec(RngSpec):
    """RngSpec whose substreams fold in an extra context key."""

    def __init__(self, base: RngSpec, key: tuple):
        object.__setattr__(self, "master_seed", base.master_seed)
        object.__setattr__(self, "stream_id", base.stream_id)
        object.__setattr__(self, "_key", tuple(int(k) for k in key))

    def substream(self, *extra: int):
        from .paths import stream_generator

        return stream_generator(self.master_seed, self.stream_id, *self._key, *extra)


class ExpDecayWeight:
    """Perturbation weight ``scale * exp(-rate * t)``."""

    def __init__(self, scale: float = 1.0, rate: float = 1.0):
        if rate <= 0:
            raise ConfigError(f"decay rate must be > 0, got {rate}")
        self.scale = float(scale)
        self.rate = float(rate)

    def __call__(self, t: float) -> float:
        return self.scale * np.exp(-self.rate * t)

    def __eq__(self, other):
        return (
            isinstance(other, ExpDecayWeight)
            and other.scale == self.scale
            and other.rate == self.rate
        )


class ConstantWeight:
    """Constant perturbation weight."""

    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def __call__(self, t: float) -> float:
        return self.value

    def __eq__(self, other):
        return isinstance(other, ConstantWeight) and other.value == self.value


@dataclass(frozen=True)
class PerturbedStrategy(Strategy):
    """Base strategy plus a time-weighted tangent perturbation, reprojected.

    The perturbation direction must sum to zero (it moves along the simplex
    hyperplane); the result is clamped and renormalized, so large weights are
    clipped rather than leaving the admissible region.
    """

    base: Strategy
    delta: np.ndarray
    weight: Callable[[float], float]

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=float)
        if not np.all(np.isfinite(delta)):
            raise ConfigError("perturbation direction must be finite")
        if abs(delta.sum()) > 1e-12 * max(1.0, np.abs(delta).sum()):
            raise ConfigError(
                f"perturbation direction must sum to zero, got sum {delta.sum()!r}"
            )
        object.__setattr__(self, "delta", delta)

    @property
    def needs_streams(self):
        return self.base.needs_streams

    def weights(self, t, r, stream_key=()):
        lam = self.base.weights(t, r, stream_key) + self.weight(t) * self.delta
        return validate_simplex(lam)

    def weights_along(self, times, r_all, path_ids=None):
        base = self.base.weights_along(times, r_all, path_ids)
        w_t = np.array([self.weight(t) for t in times])
        lam = base + w_t[np.newaxis, np.newaxis, :] * self.delta[np.newaxis, :, np.newaxis]
        out = validate_simplex(np.moveaxis(lam, 1, -1))
        return np.moveaxis(out, -1, 1).copy()


# ---------------------------------------------------------------------------
# Evaluation along simulated paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StrategyPaths:
    """Strategy weights evaluated at every grid point of a path batch."""

    grid: TimeGrid
    values: np.ndarray  # (n_paths, n_assets, n_points)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 3 or vals.shape[-1] != self.grid.n_points:
            raise ConfigError(f"strategy paths must be (paths, assets, {self.grid.n_points})")
        object.__setattr__(self, "values", vals)


def evaluate_along(
    strategy: Strategy,
    paths: dv.DividendPaths,
    path_ids: Optional[np.ndarray] = None,
) -> StrategyPaths:
    """Evaluate a strategy at every (time, state) of a dividend path batch.

    ``path_ids`` are the global stream ids of the batch rows; they key the
    randomness of stochastic strategy evaluators so results do not depend on
    how paths are split into batches.
    """
    values = strategy.weights_along(paths.grid.times, paths.r, path_ids)
    return StrategyPaths(paths.grid, values)

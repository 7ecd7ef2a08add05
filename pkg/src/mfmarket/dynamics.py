"""Market dynamics: prices, wealth evolution, and diagnostic processes.

With the representative agents holding weights ``mu`` and consuming at rate
``rho``, their wealth is ``V = X_bar / rho`` and prices are ``S^n = mu^n V``.
A small agent holding weights ``lam`` evolves by the explicit Euler recursion

    W_{k+1} = W_k * (1 + sum_n (lam_k^n / S_k^n) (S_{k+1}^n - S_k^n + X_k^n dt)
                     - rho dt).

Left-point weights and prices against forward price increments make the
``lam = mu`` case cancel algebraically: the wealth ratio ``W/V`` is then
constant for every path, up to floating-point rounding.  That exact
cancellation anchors the whole test suite, so the discretization must not be
changed casually.

Diagnostics of the ratio process:

*  ``L^n``: cumulative ``exp(-rho t_k) (dmu^n - rho (mu^n - R^n) dt)`` -- the
   martingale part of the optimal-weight dynamics, discounted.
*  ``Z``:   cumulative ``exp(rho t_k) sum_n (lam^n / mu^n) dL^n`` -- the
   driving local martingale of the ratio.
*  ``[Z]``: realized quadratic variation of ``Z``.
*  ``G``:   cumulative ``exp(2 rho t_k) sum_{i,j} (lam^i lam^j / mu^i mu^j)
   dL^i dL^j``; the double sum factorizes into the square of the single sum,
   so ``G`` equals ``[Z]`` up to rounding.  ``G`` is the survival functional:
   it must be non-decreasing, and its divergence or convergence separates
   extinction from survival of the small agent.

All ``exp(rho t)`` factors are evaluated at the left endpoint of each step,
consistently across L, Z and G, so the identity ``G = [Z]`` holds to rounding
error rather than O(dt).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import dividends as dv
from . import strategies as st
from .errors import AdmissibilityError, AssumptionError, ConfigError, InvariantError, ShapeError
from .paths import FLOOR_EPS, RngSpec, TimeGrid, kahan_cumsum


@dataclass(frozen=True)
class MarketParams:
    """Market-wide constants: asset count, consumption rate, initial wealth."""

    n_assets: int
    rho: float
    w0: float
    s: Optional[np.ndarray] = None  # per-asset supply constants, fixed to 1

    def __post_init__(self):
        if self.n_assets < 1:
            raise ConfigError(f"n_assets must be >= 1, got {self.n_assets}")
        if self.rho <= 0:
            raise ConfigError(f"rho must be > 0, got {self.rho}")
        if self.w0 <= 0:
            raise ConfigError(f"w0 must be > 0, got {self.w0}")
        s = np.ones(self.n_assets) if self.s is None else np.asarray(self.s, dtype=float)
        if s.shape != (self.n_assets,) or np.any(s != 1.0):
            raise ConfigError("supply constants are fixed to 1 per asset")
        object.__setattr__(self, "s", s)


def representative_wealth(x_bar: np.ndarray, rho: float) -> np.ndarray:
    """Representative-agent wealth ``V = X_bar / rho`` (requires X_bar > 0)."""
    if rho <= 0:
        raise ConfigError(f"rho must be > 0, got {rho}")
    x_bar = np.asarray(x_bar, dtype=float)
    if x_bar.size and x_bar.min() <= 0:
        raise AssumptionError("total dividend intensity must be positive everywhere")
    return x_bar / rho


def prices(mu: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Asset prices ``S^n = mu^n V`` for unit supply.

    ``mu`` has the asset axis second: (paths, assets, points); ``v`` is
    (paths, points).  All weights must be admissible (>= FLOOR_EPS).
    """
    mu = np.asarray(mu, dtype=float)
    v = np.asarray(v, dtype=float)
    if mu.ndim != 3 or v.shape != (mu.shape[0], mu.shape[2]):
        raise ShapeError(f"incompatible shapes mu {mu.shape}, v {v.shape}")
    if mu.min() < FLOOR_EPS:
        raise AdmissibilityError(
            f"market weights fell below the admissibility floor {FLOOR_EPS} "
            f"(min {mu.min()!r})"
        )
    return mu * v[:, np.newaxis, :]


def evolve_small_agent(
    lam: st.StrategyPaths,
    mu: st.StrategyPaths,
    paths: dv.DividendPaths,
    params: MarketParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Small-agent wealth along each path; returns ``(W, excluded)``.

    ``W`` has shape (paths, points) with ``W[:, 0] = w0``.  Paths where the
    recursion drives W to zero or below (a discretization artifact; the
    continuous model keeps W > 0) are frozen at their last good value and
    flagged in the boolean ``excluded`` array.
    """
    grid = paths.grid
    if lam.grid != grid or mu.grid != grid:
        raise ShapeError("strategy paths and dividend paths must share one grid")
    v = representative_wealth(paths.x_bar, params.rho)
    s = prices(mu.values, v)
    dt = grid.dt

    # per-step gross return: the multiplier never feeds back into itself, so
    # the recursion is a sequential cumulative product
    gain = np.diff(s, axis=2) + paths.x[:, :, :-1] * dt
    ret = ((lam.values[:, :, :-1] / s[:, :, :-1]) * gain).sum(axis=1)
    mult = 1.0 + ret - params.rho * dt

    n_paths = paths.n_paths
    w = np.empty((n_paths, grid.n_points))
    w[:, 0] = params.w0
    np.cumprod(mult, axis=1, out=w[:, 1:])
    w[:, 1:] *= params.w0

    dead = w[:, 1:] <= 0.0
    excluded = dead.any(axis=1)
    for p in np.nonzero(excluded)[0]:
        j = int(np.argmax(dead[p])) + 1  # first non-positive point; freeze there
        w[p, j:] = w[p, j - 1]
    return w, excluded


def l_increments(mu: np.ndarray, r: np.ndarray, rho: float, grid: TimeGrid) -> np.ndarray:
    """Per-step increments ``exp(-rho t_k) (dmu^n - rho (mu^n - R^n) dt)``.

    These are what :func:`compute_L` accumulates.  Keep them around when
    feeding :func:`compute_Z` / :func:`compute_G`: at large ``rho * t`` the
    discounted increments fall below the rounding grain of the accumulated L
    level, so recovering them by differencing the level series destroys them.
    """
    mu = np.asarray(mu, dtype=float)
    r = np.asarray(r, dtype=float)
    if mu.shape != r.shape:
        raise ShapeError(f"mu shape {mu.shape} != r shape {r.shape}")
    disc = np.exp(-rho * grid.times[:-1])
    dmu = np.diff(mu, axis=-1)
    return disc * (dmu - rho * (mu[..., :-1] - r[..., :-1]) * grid.dt)


def compute_L(mu: np.ndarray, r: np.ndarray, rho: float, grid: TimeGrid) -> np.ndarray:
    """Discounted martingale part of the optimal-weight dynamics.

    Cumulative sums of ``exp(-rho t_k) (dmu^n - rho (mu^n - R^n) dt)`` with
    L_0 = 0.  Defined for the growth-optimal ``mu``; when ``mu = R`` (driftless
    share models) the drift term vanishes and dL = exp(-rho t) dmu.
    """
    return kahan_cumsum(l_increments(mu, r, rho, grid))


def _weighted_dl_sum(lam: np.ndarray, mu: np.ndarray, L: np.ndarray, dl) -> np.ndarray:
    # left-point lam/mu against forward dL; shared by Z and G so both consume
    # bitwise-identical integrand values
    if dl is None:
        dl = np.diff(L, axis=-1)
    return ((lam[:, :, :-1] / mu[:, :, :-1]) * dl).sum(axis=1)


@dataclass(frozen=True)
class ZResult:
    """Driving martingale of the wealth ratio plus its realized variation."""

    z: np.ndarray            # (paths, points)
    qv: np.ndarray           # (paths, points), realized [Z]
    zt_form_max_gap: float   # max |Z - Z'| against the weight-dynamics form


def compute_Z(
    lam: np.ndarray,
    mu: np.ndarray,
    L: np.ndarray,
    rho: float,
    r: np.ndarray,
    grid: TimeGrid,
    dl: Optional[np.ndarray] = None,
) -> ZResult:
    """Ratio-driving process Z, its realized variation, and a cross-check.

    Primary form: cumulative ``exp(rho t_k) sum_n (lam^n/mu^n) dL^n``.  The
    cross-check re-derives Z from the weight dynamics directly,

        dZ' = sum_n (lam^n/mu^n) dmu^n + rho (sum_n (lam^n/mu^n) R^n - 1) dt,

    with the dt-integral discretized trapezoidally; the two discretizations
    agree as dt -> 0 and their gap is reported for refinement studies.

    Pass ``dl`` (from :func:`l_increments`) to avoid re-differencing L; see
    the precision note there.
    """
    zsum = _weighted_dl_sum(lam, mu, L, dl)
    growth = np.exp(rho * grid.times[:-1])
    dz = growth * zsum
    z = kahan_cumsum(dz)
    qv = kahan_cumsum(dz * dz, non_negative=True)

    dmu = np.diff(mu, axis=-1)
    stoch = ((lam[:, :, :-1] / mu[:, :, :-1]) * dmu).sum(axis=1)
    f = ((lam / mu) * r).sum(axis=1)
    drift = rho * (0.5 * (f[:, :-1] + f[:, 1:]) - 1.0) * grid.dt
    z_alt = kahan_cumsum(stoch + drift)
    gap = float(np.max(np.abs(z - z_alt))) if z.size else 0.0
    return ZResult(z=z, qv=qv, zt_form_max_gap=gap)


def compute_G(
    lam: np.ndarray,
    mu: np.ndarray,
    L: np.ndarray,
    rho: float,
    grid: TimeGrid,
    dl: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Survival functional: accumulated weighted covariation of the L^n.

    Increments ``exp(2 rho t_k) sum_{i,j} (lam^i lam^j / mu^i mu^j) dL^i dL^j``;
    the double sum over asset pairs factorizes into the square of the single
    weighted sum, which is how it is evaluated.  Non-decreasing by
    construction.  See :func:`l_increments` about ``dl``.
    """
    zsum = _weighted_dl_sum(lam, mu, L, dl)
    growth2 = np.exp(2.0 * rho * grid.times[:-1])
    return kahan_cumsum(growth2 * zsum * zsum, non_negative=True)


def stochastic_exponential(z: np.ndarray, qv: np.ndarray, initial: float = 1.0) -> np.ndarray:
    """Reconstruct the wealth ratio as ``initial * exp(Z - QV/2)``."""
    z = np.asarray(z, dtype=float)
    qv = np.asarray(qv, dtype=float)
    if z.shape != qv.shape:
        raise ShapeError(f"z shape {z.shape} != qv shape {qv.shape}")
    if qv.size and np.any(np.diff(qv, axis=-1) < 0):
        raise InvariantError("quadratic variation series must be non-decreasing")
    return initial * np.exp(z - 0.5 * qv)


def g_closed_form_two_asset(
    lam1: np.ndarray, r1: np.ndarray, sigma: float, grid: TimeGrid
) -> np.ndarray:
    """Closed-form survival functional for the two-asset driftless model.

    ``G_t = sigma^2 * integral of (lam^1 - R^1)^2 ds`` evaluated by left-point
    quadrature on the grid -- an independent discretization of the same object
    as :func:`compute_G` there, agreeing pathwise at rate sqrt(dt).
    """
    lam1 = np.asarray(lam1, dtype=float)
    r1 = np.asarray(r1, dtype=float)
    d = lam1[..., :-1] - r1[..., :-1]
    return kahan_cumsum(sigma * sigma * d * d * grid.dt, non_negative=True)


# ---------------------------------------------------------------------------
# Full per-batch pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RatioDiagnostics:
    """Everything the analysis layer consumes, for one batch of paths."""

    grid: TimeGrid
    ratio0: float
    v: np.ndarray          # (paths, points) representative wealth
    s: np.ndarray          # (paths, assets, points) prices
    w: np.ndarray          # (paths, points) small-agent wealth
    ratio: np.ndarray      # (paths, points) W/V
    lam: np.ndarray        # (paths, assets, points)
    mu: np.ndarray         # (paths, assets, points)
    l: np.ndarray          # (paths, assets, points)
    z: np.ndarray          # (paths, points)
    qv: np.ndarray         # (paths, points)
    g: np.ndarray          # (paths, points)
    excluded: np.ndarray   # (paths,) bool
    zt_form_max_gap: float
    g_qv_max_rel_gap: float
    g_closed_form: Optional[np.ndarray] = None  # (paths, points) when available

    @property
    def n_paths(self) -> int:
        return self.w.shape[0]

    def reconstructed_ratio(self) -> np.ndarray:
        return stochastic_exponential(self.z, self.qv, initial=self.ratio0)


def _g_qv_rel_gap(g: np.ndarray, qv: np.ndarray) -> float:
    denom = np.maximum(g, 1e-300)
    return float(np.max(np.abs(g - qv) / denom)) if g.size else 0.0


def simulate_market(
    model: dv.DividendModelSpec,
    strategy: st.Strategy,
    params: MarketParams,
    grid: TimeGrid,
    rng: RngSpec,
    n_paths: int,
    increments: Optional[np.ndarray] = None,
    path_ids: Optional[np.ndarray] = None,
) -> RatioDiagnostics:
    """Simulate one batch of paths end to end.

    The representative agents always hold the growth-optimal closed-form
    weights for ``model``; ``strategy`` is the small agent's rule.  ``rng``
    is the stream of the first path in the batch; path p uses stream
    ``rng.stream_id + p``.
    """
    if model.n_assets != params.n_assets:
        raise ConfigError(
            f"model has {model.n_assets} assets but params expect {params.n_assets}"
        )
    div = dv.simulate(model, grid, rng, n_paths, increments)
    v = representative_wealth(div.x_bar, params.rho)
    market = st.OptimalClosedForm(model, params.rho)
    mu = st.evaluate_along(market, div)
    lam = st.evaluate_along(strategy, div, path_ids)
    w, excluded = evolve_small_agent(lam, mu, div, params)
    ratio = w / v
    ratio0 = params.w0 / float(v[0, 0])

    dl = l_increments(mu.values, div.r, params.rho, grid)
    L = kahan_cumsum(dl)
    zres = compute_Z(lam.values, mu.values, L, params.rho, div.r, grid, dl=dl)
    g = compute_G(lam.values, mu.values, L, params.rho, grid, dl=dl)

    g_cf = None
    if isinstance(model, (dv.WrightFisherSpec, dv.MartingaleRSpec)) and model.n_assets == 2:
        sigma_scalar = _scalar_sigma(model)
        if sigma_scalar is not None:
            g_cf = g_closed_form_two_asset(lam.values[:, 0, :], div.r[:, 0, :], sigma_scalar, grid)

    return RatioDiagnostics(
        grid=grid,
        ratio0=ratio0,
        v=v,
        s=prices(mu.values, v),
        w=w,
        ratio=ratio,
        lam=lam.values,
        mu=mu.values,
        l=L,
        z=zres.z,
        qv=zres.qv,
        g=g,
        excluded=excluded,
        zt_form_max_gap=zres.zt_form_max_gap,
        g_qv_max_rel_gap=_g_qv_rel_gap(g, zres.qv),
        g_closed_form=g_cf,
    )


def _scalar_sigma(model) -> Optional[float]:
    if isinstance(model, dv.WrightFisherSpec):
        return model.sigma
    if isinstance(model, dv.MartingaleRSpec) and isinstance(model.sigma, dv.WrightFisherPairSigma):
        return model.sigma.sigma
    return None

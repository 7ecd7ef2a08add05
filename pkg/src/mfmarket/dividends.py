"""Dividend-intensity models.

Three built-in families produce relative-intensity paths on the open simplex:

* ``WrightFisherSpec`` -- two assets driven by one Brownian motion, with the
  first intensity following ``dX = sigma * X * (1 - X) * dB`` (a bounded
  martingale on (0, 1)) and the second equal to ``1 - X``.
* ``MartingaleRSpec`` -- N assets with ``dR = sigma_t dB`` for a matrix-valued
  volatility whose columns sum to zero, so the simplex constraint is preserved
  in expectation; each Euler step is clamped and renormalized.
* ``LinearDriftRSpec`` -- two assets where the first share mean-reverts,
  ``dR = kappa * (theta - R) dt + sigma * R * (1 - R) dB``.  This is the one
  built-in family where the growth-optimal weights differ from the current
  shares, so it exercises the discounted-conditional-expectation formula
  nontrivially.

All built-ins normalize the total intensity to 1, so the representative
wealth is the constant ``1/rho`` and every diagnostic depends on the shares
``R`` only.  Wealth dynamics still handle a general total intensity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import ConfigError, ShapeError
from .paths import FLOOR_EPS, PathSeries, RngSpec, TimeGrid

_CAP = 1.0 - FLOOR_EPS


def _batch_increments(grid: TimeGrid, dims: int, rng: RngSpec, n_paths: int) -> np.ndarray:
    """Gaussian step increments for paths ``rng.stream_id .. +n_paths-1``.

    Shape (n_paths, dims, n_steps).  Path p draws from its own counter-based
    stream, so any contiguous batch reproduces exactly the paths a different
    batch layout would produce.
    """
    scale = np.sqrt(grid.dt)
    out = np.empty((n_paths, dims, grid.n_steps))
    for p in range(n_paths):
        out[p] = rng.shifted(p).generator().normal(0.0, scale, size=(dims, grid.n_steps))
    return out


def coupled_increments(
    grid: TimeGrid, factor: int, dims: int, rng: RngSpec, n_paths: int
) -> tuple[np.ndarray, np.ndarray]:
    """Driver increments for ``grid`` and its ``factor``-times refinement.

    The fine increments are drawn from the per-path streams on the refined
    grid and the coarse ones are their group sums, so both resolutions see
    the same Brownian path (strong-convergence refinement studies).
    Returns ``(coarse, fine)``.
    """
    fine_grid = grid.refined(factor)
    fine = _batch_increments(fine_grid, dims, rng, n_paths)
    coarse = fine.reshape(n_paths, dims, grid.n_steps, factor).sum(axis=3)
    return coarse, fine


# ---------------------------------------------------------------------------
# Model specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WrightFisherSpec:
    """Two-asset bounded-martingale model; ``x0`` is the initial first share."""

    sigma: float
    x0: float

    def __post_init__(self):
        if not (0.0 < self.x0 < 1.0):
            raise ConfigError(f"x0 must lie in (0, 1), got {self.x0}")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def n_assets(self) -> int:
        return 2

    @property
    def n_drivers(self) -> int:
        return 1

    @property
    def r0(self) -> np.ndarray:
        return np.array([self.x0, 1.0 - self.x0])


class WrightFisherPairSigma:
    """Volatility ``sigma * R1 * (1 - R1) * (+1, -1)`` for N=2, K=1.

    Reproduces the Wright-Fisher pair inside the general martingale model.
    """

    def __init__(self, sigma: float):
        if sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {sigma}")
        self.sigma = float(sigma)

    def __call__(self, t: float, r: np.ndarray) -> np.ndarray:
        a = self.sigma * r[..., 0] * (1.0 - r[..., 0])
        return np.stack([a, -a], axis=-1)[..., np.newaxis]

    def __eq__(self, other):
        return isinstance(other, WrightFisherPairSigma) and other.sigma == self.sigma


class ConstantSigma:
    """Constant N x K volatility matrix with zero column sums."""

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2:
            raise ConfigError("constant sigma must be an N x K matrix")
        if np.max(np.abs(m.sum(axis=0))) > 1e-12:
            raise ConfigError("sigma columns must sum to zero to preserve the simplex")
        self.matrix = m

    def __call__(self, t: float, r: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.matrix, r.shape[:-1] + self.matrix.shape)

    def __eq__(self, other):
        return isinstance(other, ConstantSigma) and np.array_equal(other.matrix, self.matrix)


@dataclass(frozen=True)
class MartingaleRSpec:
    """N-asset driftless share model ``dR = sigma(t, R) dB``."""

    n_assets: int
    n_drivers: int
    sigma: Callable[[float, np.ndarray], np.ndarray]
    r0: np.ndarray

    def __post_init__(self):
        if self.n_assets < 1 or self.n_drivers < 1:
            raise ConfigError("need n_assets >= 1 and n_drivers >= 1")
        r0 = np.asarray(self.r0, dtype=float)
        if r0.shape != (self.n_assets,):
            raise ConfigError(f"r0 must have shape ({self.n_assets},), got {r0.shape}")
        if np.any(r0 <= 0) or abs(r0.sum() - 1.0) > 1e-12:
            raise ConfigError("r0 must lie on the open simplex (components > 0, sum 1)")
        mat = np.asarray(self.sigma(0.0, r0), dtype=float)
        if mat.shape != (self.n_assets, self.n_drivers):
            raise ConfigError(
                f"sigma(t, r) must return shape ({self.n_assets}, {self.n_drivers}), got {mat.shape}"
            )
        if np.max(np.abs(mat.sum(axis=0))) > 1e-12:
            raise ConfigError("sigma columns must sum to zero to preserve the simplex")
        object.__setattr__(self, "r0", r0)


@dataclass(frozen=True)
class LinearDriftRSpec:
    """Two-asset mean-reverting share model (shares are not a martingale)."""

    kappa: float
    theta: float
    sigma: float
    r0: float

    def __post_init__(self):
        if self.kappa <= 0:
            raise ConfigError(f"kappa must be > 0, got {self.kappa}")
        if not (0.0 < self.theta < 1.0):
            raise ConfigError(f"theta must lie in (0, 1), got {self.theta}")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if not (0.0 < self.r0 < 1.0):
            raise ConfigError(f"r0 must lie in (0, 1), got {self.r0}")

    @property
    def n_assets(self) -> int:
        return 2

    @property
    def n_drivers(self) -> int:
        return 1


DividendModelSpec = Union[WrightFisherSpec, MartingaleRSpec, LinearDriftRSpec]


# ---------------------------------------------------------------------------
# Path container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DividendPaths:
    """Batch of dividend paths: intensities X, shares R, total intensity X_bar.

    Shapes: X and R are (n_paths, n_assets, n_points), X_bar is
    (n_paths, n_points).  Structural consistency is validated here;
    the non-degeneracy conditions are checked by :func:`check_assumptions`
    so that degenerate counterexamples can still be constructed.
    """

    grid: TimeGrid
    x: np.ndarray
    r: np.ndarray
    x_bar: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        r = np.asarray(self.r, dtype=float)
        xb = np.asarray(self.x_bar, dtype=float)
        if x.ndim != 3 or x.shape[-1] != self.grid.n_points:
            raise ShapeError(f"x must be (paths, assets, {self.grid.n_points}), got {x.shape}")
        if r.shape != x.shape:
            raise ShapeError(f"r shape {r.shape} != x shape {x.shape}")
        if xb.shape != (x.shape[0], x.shape[2]):
            raise ShapeError(f"x_bar must be (paths, points), got {xb.shape}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "x_bar", xb)

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def n_assets(self) -> int:
        return self.x.shape[1]

    @classmethod
    def from_intensities(cls, grid: TimeGrid, x: np.ndarray) -> "DividendPaths":
        """Derive shares and total intensity from raw intensities."""
        x = np.asarray(x, dtype=float)
        x_bar = x.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(x_bar[:, np.newaxis, :] > 0, x / x_bar[:, np.newaxis, :], 0.0)
        return cls(grid, x, r, x_bar)

    def r_path(self, p: int) -> PathSeries:
        return PathSeries(self.grid, self.r[p], labels=tuple(f"R{n+1}" for n in range(self.n_assets)))

    def x_path(self, p: int) -> PathSeries:
        return PathSeries(self.grid, self.x[p], labels=tuple(f"X{n+1}" for n in range(self.n_assets)))


# ---------------------------------------------------------------------------
# Euler kernels (explicit increments; also used by nested Monte Carlo and
# grid-refinement studies)
# ---------------------------------------------------------------------------

def wright_fisher_kernel(sigma: float, x0: np.ndarray, grid: TimeGrid, dw: np.ndarray) -> np.ndarray:
    """First-share paths from given driver increments; shape (paths, points)."""
    n_paths = dw.shape[0]
    out = np.empty((n_paths, grid.n_points))
    x = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths,)).copy()
    out[:, 0] = x
    for k in range(grid.n_steps):
        x = x + sigma * x * (1.0 - x) * dw[:, 0, k]
        np.clip(x, FLOOR_EPS, _CAP, out=x)
        out[:, k + 1] = x
    return out


def martingale_r_kernel(
    sigma: Callable[[float, np.ndarray], np.ndarray],
    r0: np.ndarray,
    grid: TimeGrid,
    dw: np.ndarray,
) -> np.ndarray:
    """Share paths for the driftless model; shape (paths, assets, points)."""
    n_paths = dw.shape[0]
    r0 = np.asarray(r0, dtype=float)
    n_assets = r0.shape[-1]
    times = grid.times
    out = np.empty((n_paths, n_assets, grid.n_points))
    r = np.broadcast_to(r0, (n_paths, n_assets)).copy()
    out[:, :, 0] = r
    for k in range(grid.n_steps):
        mat = sigma(times[k], r)
        r = r + np.einsum("pnk,pk->pn", mat, dw[:, :, k])
        # renormalizing can pull a floored component back under the floor
        # when the clamped sum exceeds 1; repeat until clean (1-3 passes)
        while True:
            np.clip(r, FLOOR_EPS, None, out=r)
            r /= r.sum(axis=1, keepdims=True)
            if r.min() >= FLOOR_EPS:
                break
        out[:, :, k + 1] = r
    return out


def linear_drift_r_kernel(
    spec: LinearDriftRSpec, r0: np.ndarray, grid: TimeGrid, dw: np.ndarray
) -> np.ndarray:
    """First-share paths for the mean-reverting model; shape (paths, points)."""
    n_paths = dw.shape[0]
    out = np.empty((n_paths, grid.n_points))
    r = np.broadcast_to(np.asarray(r0, dtype=float), (n_paths,)).copy()
    out[:, 0] = r
    dt = grid.dt
    for k in range(grid.n_steps):
        r = r + spec.kappa * (spec.theta - r) * dt + spec.sigma * r * (1.0 - r) * dw[:, 0, k]
        np.clip(r, FLOOR_EPS, _CAP, out=r)
        out[:, k + 1] = r
    return out


def _two_asset_paths(grid: TimeGrid, r1: np.ndarray) -> DividendPaths:
    # built-in convention: total intensity normalized to 1, so X = R
    r = np.stack([r1, 1.0 - r1], axis=1)
    x_bar = np.ones((r1.shape[0], grid.n_points))
    return DividendPaths(grid, r.copy(), r, x_bar)


# ---------------------------------------------------------------------------
# Simulators
# ---------------------------------------------------------------------------

def simulate_wright_fisher(
    spec: WrightFisherSpec,
    grid: TimeGrid,
    rng: Optional[RngSpec],
    n_paths: int = 1,
    increments: Optional[np.ndarray] = None,
) -> DividendPaths:
    """Euler paths of the two-asset bounded-martingale model.

    Paths are clamped to ``[FLOOR_EPS, 1 - FLOOR_EPS]``; the continuous model
    never leaves (0, 1) but Euler steps can.  Pass ``increments`` of shape
    (n_paths, 1, n_steps) to reuse an external driver (refinement studies).
    """
    dw = _resolve_increments(grid, spec.n_drivers, rng, n_paths, increments)
    x1 = wright_fisher_kernel(spec.sigma, spec.x0, grid, dw)
    return _two_asset_paths(grid, x1)


def simulate_martingale_r(
    spec: MartingaleRSpec,
    grid: TimeGrid,
    rng: Optional[RngSpec],
    n_paths: int = 1,
    increments: Optional[np.ndarray] = None,
) -> DividendPaths:
    """Euler paths of ``dR = sigma dB`` with per-step clamp and renormalization."""
    dw = _resolve_increments(grid, spec.n_drivers, rng, n_paths, increments)
    r = martingale_r_kernel(spec.sigma, spec.r0, grid, dw)
    x_bar = np.ones((r.shape[0], grid.n_points))
    return DividendPaths(grid, r.copy(), r, x_bar)


def simulate_linear_drift_r(
    spec: LinearDriftRSpec,
    grid: TimeGrid,
    rng: Optional[RngSpec],
    n_paths: int = 1,
    increments: Optional[np.ndarray] = None,
) -> DividendPaths:
    """Euler paths of the mean-reverting two-asset share model."""
    dw = _resolve_increments(grid, spec.n_drivers, rng, n_paths, increments)
    r1 = linear_drift_r_kernel(spec, spec.r0, grid, dw)
    return _two_asset_paths(grid, r1)


def simulate(
    spec: DividendModelSpec,
    grid: TimeGrid,
    rng: Optional[RngSpec],
    n_paths: int = 1,
    increments: Optional[np.ndarray] = None,
) -> DividendPaths:
    """Dispatch to the simulator for ``spec``."""
    if isinstance(spec, WrightFisherSpec):
        return simulate_wright_fisher(spec, grid, rng, n_paths, increments)
    if isinstance(spec, MartingaleRSpec):
        return simulate_martingale_r(spec, grid, rng, n_paths, increments)
    if isinstance(spec, LinearDriftRSpec):
        return simulate_linear_drift_r(spec, grid, rng, n_paths, increments)
    raise ConfigError(f"unknown dividend model spec: {type(spec).__name__}")


def _resolve_increments(grid, dims, rng, n_paths, increments):
    if increments is not None:
        inc = np.asarray(increments, dtype=float)
        if inc.shape != (n_paths, dims, grid.n_steps):
            raise ShapeError(
                f"increments must have shape ({n_paths}, {dims}, {grid.n_steps}), got {inc.shape}"
            )
        return inc
    if rng is None:
        raise ConfigError("either rng or explicit increments must be provided")
    if n_paths < 1:
        raise ConfigError(f"n_paths must be >= 1, got {n_paths}")
    return _batch_increments(grid, dims, rng, n_paths)


# ---------------------------------------------------------------------------
# Non-degeneracy diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssumptionReport:
    """Pass/fail of the model non-degeneracy conditions on simulated paths.

    ``total_intensity_positive``: the total dividend intensity is strictly
    positive at every grid point of every path.

    ``assets_pay_somewhere``: every asset's share exceeds ``FLOOR_EPS / 2``
    somewhere on every path.  This is a finite-horizon heuristic proxy for
    the conditional no-dead-asset condition, which refers to the infinite
    future and cannot be verified pathwise; it documents intent without
    claiming equivalence.
    """

    total_intensity_positive: bool
    assets_pay_somewhere: bool
    min_total_intensity: float
    worst_max_share: float

    @property
    def passed(self) -> bool:
        return self.total_intensity_positive and self.assets_pay_somewhere


def check_assumptions(paths: DividendPaths) -> AssumptionReport:
    """Diagnostic check of the non-degeneracy conditions (never raises)."""
    min_xbar = float(paths.x_bar.min())
    max_share = paths.r.max(axis=2)  # (paths, assets)
    worst = float(max_share.min())
    return AssumptionReport(
        total_intensity_positive=min_xbar > 0.0,
        assets_pay_somewhere=worst >= FLOOR_EPS / 2.0,
        min_total_intensity=min_xbar,
        worst_max_share=worst,
    )

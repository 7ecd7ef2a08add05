"""Statistical verdicts on simulated wealth ratios.

Two finite-horizon questions are answered here:

* does the ratio ``W/V`` behave like a supermartingale (its Monte Carlo mean
  at each checkpoint must not exceed the initial ratio beyond noise), and
* does a run look like extinction (ratio collapsing while the survival
  functional G keeps growing) or survival (G flattening, ratio bounded away
  from zero)?

Both tests of asymptotic statements are necessarily calibrated heuristics:
verdict thresholds are configuration with documented defaults, and the
extinction/survival classification asserts direction only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvariantError, StatisticalPowerError


@dataclass(frozen=True)
class SupermartingaleReport:
    """Per-checkpoint mean-ratio test at the 3-standard-error level."""

    checkpoints: tuple
    means: tuple
    standard_errors: tuple
    verdicts: tuple            # per-checkpoint pass
    ratio0: float
    n_paths: int
    excluded_fraction: float

    @property
    def passed(self) -> bool:
        return all(self.verdicts)


def test_supermartingale(
    ratios: np.ndarray,
    checkpoints: Sequence[float],
    ratio0: float,
    excluded_fraction: float = 0.0,
) -> SupermartingaleReport:
    """Check ``mean(W_t/V_t) <= ratio0 + 3 SE`` at each checkpoint.

    ``ratios`` has shape (paths, checkpoints).  The 3-SE rule is conservative
    Monte Carlo practice: under a Gaussian CLT a true supermartingale fails a
    checkpoint with probability about 0.3%.
    """
    ratios = np.asarray(ratios, dtype=float)
    if ratios.ndim != 2 or ratios.shape[1] != len(checkpoints):
        raise InvariantError(
            f"ratios must be (paths, {len(checkpoints)}), got {ratios.shape}"
        )
    n = ratios.shape[0]
    if n < 100:
        raise StatisticalPowerError(f"need at least 100 paths for a verdict, got {n}")
    means = ratios.mean(axis=0)
    ses = ratios.std(axis=0, ddof=1) / np.sqrt(n)
    verdicts = means <= ratio0 + 3.0 * ses
    return SupermartingaleReport(
        checkpoints=tuple(float(c) for c in checkpoints),
        means=tuple(float(m) for m in means),
        standard_errors=tuple(float(s) for s in ses),
        verdicts=tuple(bool(v) for v in verdicts),
        ratio0=float(ratio0),
        n_paths=n,
        excluded_fraction=float(excluded_fraction),
    )


@dataclass(frozen=True)
class SurvivalThresholds:
    """Configurable decision thresholds for the survival classification."""

    g_growth_min: float = 1.5       # extinction: median G_T / G_{T/2} at least this
    ratio_decay_factor: float = 0.5  # extinction: median ratio_T below this times median ratio_{T/2}
    g_flat_max: float = 0.05        # survival: median (G_T - G_{T/2}) at most this times median G_{T/2}
    g_negligible: float = 1e-18     # G below this is treated as exactly zero (rounding junk)


@dataclass(frozen=True)
class SurvivalReport:
    """Directional classification of a run against the survival dichotomy."""

    classification: str  # extinction-consistent | survival-consistent | inconclusive
    horizon: float
    median_g_half: float
    median_g_full: float
    median_g_growth_ratio: float
    median_ratio_half: float
    median_ratio_full: float
    p05_ratio_full: float
    g_quantiles_half: tuple  # (p05, median, p95)
    g_quantiles_full: tuple
    n_paths: int
    thresholds: SurvivalThresholds = field(default_factory=SurvivalThresholds)


def classify_survival(
    g_half: np.ndarray,
    g_full: np.ndarray,
    ratio_half: np.ndarray,
    ratio_full: np.ndarray,
    horizon: float,
    thresholds: Optional[SurvivalThresholds] = None,
) -> SurvivalReport:
    """Classify a run as extinction- or survival-consistent.

    Inputs are per-path values of the survival functional G and the wealth
    ratio at the half horizon and the full horizon.  Decision rule (defaults
    in :class:`SurvivalThresholds`):

    * extinction-consistent: median per-path ``G_T/G_{T/2} >= g_growth_min``
      and ``median ratio_T < ratio_decay_factor * median ratio_{T/2}``;
    * survival-consistent: ``median (G_T - G_{T/2}) <= g_flat_max * median
      G_{T/2}`` and the 5th percentile of ``ratio_T`` is positive;
    * inconclusive otherwise.  The extinction rule is checked first.

    Per-path G ratios with a zero denominator count as 1 when the numerator
    is also zero (no growth) and as infinity otherwise.
    """
    th = thresholds or SurvivalThresholds()
    g_half = np.asarray(g_half, dtype=float)
    g_full = np.asarray(g_full, dtype=float)
    ratio_half = np.asarray(ratio_half, dtype=float)
    ratio_full = np.asarray(ratio_full, dtype=float)
    if np.any(g_full < g_half - 1e-12 * np.maximum(1.0, g_half)):
        raise InvariantError("survival functional decreased between horizons")
    # a market-copying agent accumulates G at the rounding-noise scale
    # (~1e-30), which must not read as growth
    g_half = np.where(g_half < th.g_negligible, 0.0, g_half)
    g_full = np.where(g_full < th.g_negligible, 0.0, g_full)

    with np.errstate(divide="ignore", invalid="ignore"):
        growth = np.where(
            g_half > 0.0, g_full / np.maximum(g_half, 1e-300),
            np.where(g_full > 0.0, np.inf, 1.0),
        )
    med_growth = float(np.median(growth))
    med_g_half = float(np.median(g_half))
    med_g_full = float(np.median(g_full))
    med_r_half = float(np.median(ratio_half))
    med_r_full = float(np.median(ratio_full))
    p05_r_full = float(np.percentile(ratio_full, 5))

    extinction = med_growth >= th.g_growth_min and med_r_full < th.ratio_decay_factor * med_r_half
    survival = (
        float(np.median(g_full - g_half)) <= th.g_flat_max * med_g_half
        and p05_r_full > 0.0
    )
    if extinction:
        label = "extinction-consistent"
    elif survival:
        label = "survival-consistent"
    else:
        label = "inconclusive"

    def quants(a):
        return tuple(float(q) for q in np.percentile(a, [5, 50, 95]))

    return SurvivalReport(
        classification=label,
        horizon=float(horizon),
        median_g_half=med_g_half,
        median_g_full=med_g_full,
        median_g_growth_ratio=med_growth,
        median_ratio_half=med_r_half,
        median_ratio_full=med_r_full,
        p05_ratio_full=p05_r_full,
        g_quantiles_half=quants(g_half),
        g_quantiles_full=quants(g_full),
        n_paths=int(g_half.shape[0]),
        thresholds=th,
    )


@dataclass(frozen=True)
class ItoConsistencyReport:
    """Agreement between the direct wealth ratio and its reconstruction."""

    max_abs_log_gap: float
    n_paths: int


def ito_consistency(direct: np.ndarray, reconstructed: np.ndarray) -> ItoConsistencyReport:
    """Max over paths and times of ``|ln(direct) - ln(reconstructed)|``.

    Both inputs are (paths, points) positive ratio series on the same grid.
    Pair with a dt-halving rerun and compare the two reports to measure the
    convergence rate of the discretization.
    """
    direct = np.asarray(direct, dtype=float)
    reconstructed = np.asarray(reconstructed, dtype=float)
    if direct.shape != reconstructed.shape:
        raise InvariantError(f"shape mismatch {direct.shape} vs {reconstructed.shape}")
    if np.any(direct <= 0) or np.any(reconstructed <= 0):
        raise InvariantError("ratio series must be positive (exclude dead paths first)")
    gap = float(np.max(np.abs(np.log(direct) - np.log(reconstructed))))
    return ItoConsistencyReport(max_abs_log_gap=gap, n_paths=direct.shape[0])


@dataclass(frozen=True)
class SllnReport:
    """Trend of |Z|/max(G, 1) over increasing horizons."""

    horizons: tuple
    median_ratios: tuple
    vanishing: bool


def slln_diagnostic(
    z_at_horizons: np.ndarray, g_at_horizons: np.ndarray, horizons: Sequence[float]
) -> SllnReport:
    """Directional check that Z grows slower than G when G diverges.

    Inputs are (paths, horizons) arrays of Z and G sampled at increasing
    horizons.  Reports the median of ``|Z|/max(G, 1)`` per horizon and flags
    the sequence as vanishing when the last median has dropped to at most 60%
    of the first (or both are zero).  A constant ratio -- e.g. the fake input
    Z = G = t -- is flagged as non-vanishing.
    """
    z = np.asarray(z_at_horizons, dtype=float)
    g = np.asarray(g_at_horizons, dtype=float)
    if z.shape != g.shape or z.shape[1] != len(horizons):
        raise InvariantError("z and g must be (paths, horizons) on the same horizons")
    ratios = np.abs(z) / np.maximum(g, 1.0)
    medians = np.median(ratios, axis=0)
    vanishing = bool(medians[-1] <= 0.6 * medians[0])
    return SllnReport(
        horizons=tuple(float(h) for h in horizons),
        median_ratios=tuple(float(m) for m in medians),
        vanishing=vanishing,
    )

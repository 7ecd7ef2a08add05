"""Time grids, reproducible random drivers, path containers, and realized
(co)variation estimators.

Everything downstream (dividend models, wealth dynamics, diagnostics) works on
a fixed uniform grid and consumes *increments*; level paths are derived on
demand.  Random numbers come from counter-based Philox streams keyed by
``(master_seed, stream_id)`` so that path generation is a pure function of the
seed spec, independent of scheduling or batch layout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

# Pathwise clamp floor shared by dividend models and strategies: simplex
# components are kept >= FLOOR_EPS so divisions by portfolio weights stay
# well defined (the continuous models keep paths in the open simplex; Euler
# steps can exit it).
FLOOR_EPS = 1e-6


# ---------------------------------------------------------------------------
# Time grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_start + k*dt, k = 0..n_steps."""

    t_start: float
    t_end: float
    dt: float
    n_steps: int

    @property
    def n_points(self) -> int:
        return self.n_steps + 1

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_points)

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a grid point."""
        k = int(round((t - self.t_start) / self.dt))
        if k < 0 or k > self.n_steps:
            raise ConfigError(f"time {t} outside grid [{self.t_start}, {self.t_end}]")
        if abs(t - (self.t_start + k * self.dt)) > 1e-9 * max(1.0, abs(t)):
            raise ConfigError(f"time {t} is not a grid point (dt={self.dt})")
        return k

    def refined(self, factor: int) -> "TimeGrid":
        """Same interval with ``factor`` times smaller steps (for refinement studies)."""
        if factor < 1:
            raise ConfigError("refinement factor must be >= 1")
        return TimeGrid(self.t_start, self.t_end, self.dt / factor, self.n_steps * factor)


def make_grid(t_start: float, t_end: float, dt: float) -> TimeGrid:
    """Build a uniform :class:`TimeGrid` on ``[t_start, t_end]``.

    ``(t_end - t_start)/dt`` must be an integer up to floating-point division
    error; otherwise the step count is rounded and a warning is emitted.
    """
    if not np.isfinite(dt) or dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if not (np.isfinite(t_start) and np.isfinite(t_end)) or t_end <= t_start:
        raise ConfigError(f"need t_end > t_start, got [{t_start}, {t_end}]")
    ratio = (t_end - t_start) / dt
    n_steps = int(round(ratio))
    if n_steps < 1:
        raise ConfigError(f"dt={dt} larger than the interval [{t_start}, {t_end}]")
    # a couple of ulps of slack: the division itself is inexact for decimal dt
    if abs(ratio - n_steps) > 4.0 * np.spacing(ratio):
        warnings.warn(
            f"(t_end - t_start)/dt = {ratio!r} is not an integer; "
            f"rounding to n_steps={n_steps}",
            stacklevel=2,
        )
    return TimeGrid(float(t_start), float(t_end), float(dt), n_steps)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def stream_generator(master_seed: int, *stream_path: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(master_seed, *stream_path)``.

    Distinct key tuples give statistically independent, non-overlapping
    streams; the same tuple always reproduces the same draws.  Nested Monte
    Carlo derives inner streams as ``(master_seed, outer_id, inner_id)``.
    """
    if not 0 <= int(master_seed) < 2**64:
        raise ConfigError(f"master_seed must be a 64-bit unsigned integer, got {master_seed}")
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(s) for s in stream_path))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class RngSpec:
    """Deterministic random stream id: ``(master_seed, stream_id)``."""

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if int(self.stream_id) < 0:
            raise ConfigError(f"stream_id must be non-negative, got {self.stream_id}")

    def generator(self) -> np.random.Generator:
        return stream_generator(self.master_seed, self.stream_id)

    def substream(self, *extra: int) -> np.random.Generator:
        """Generator for a derived stream ``(master_seed, stream_id, *extra)``."""
        return stream_generator(self.master_seed, self.stream_id, *extra)

    def shifted(self, offset: int) -> "RngSpec":
        return RngSpec(self.master_seed, self.stream_id + offset)


# ---------------------------------------------------------------------------
# Path containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BrownianPath:
    """Gaussian increments of a K-dimensional standard Brownian motion.

    ``increments[k, j] ~ Normal(0, dt)`` independently across k and j.
    """

    grid: TimeGrid
    increments: np.ndarray  # (dims, n_steps)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[1] != self.grid.n_steps:
            raise ShapeError(
                f"increments must have shape (dims, {self.grid.n_steps}), got {inc.shape}"
            )
        object.__setattr__(self, "increments", inc)

    @property
    def dims(self) -> int:
        return self.increments.shape[0]

    @property
    def levels(self) -> np.ndarray:
        """B_t on the grid, starting at 0; shape (dims, n_points)."""
        out = np.zeros((self.dims, self.grid.n_points))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out


def sample_brownian(grid: TimeGrid, dims: int, rng: RngSpec) -> BrownianPath:
    """Draw one K-dimensional Brownian driver on ``grid`` from stream ``rng``."""
    if dims < 1:
        raise ConfigError(f"dims must be >= 1, got {dims}")
    inc = rng.generator().normal(0.0, np.sqrt(grid.dt), size=(dims, grid.n_steps))
    return BrownianPath(grid, inc)


@dataclass(frozen=True)
class PathSeries:
    """Values of one or more channels on every grid point of one path."""

    grid: TimeGrid
    values: np.ndarray  # (n_channels, n_points)
    labels: tuple = field(default=None)

    def __post_init__(self):
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if vals.shape[-1] != self.grid.n_points:
            raise ShapeError(
                f"values must have {self.grid.n_points} grid points, got {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ShapeError("PathSeries values must be finite (no missing entries)")
        labels = self.labels
        if labels is None:
            labels = tuple(f"c{i}" for i in range(vals.shape[0]))
        else:
            labels = tuple(labels)
            if len(labels) != vals.shape[0]:
                raise ShapeError(f"{len(labels)} labels for {vals.shape[0]} channels")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "labels", labels)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    def channel(self, key) -> np.ndarray:
        """1-D values of a channel, by index or label."""
        if isinstance(key, str):
            try:
                key = self.labels.index(key)
            except ValueError:
                raise KeyError(f"no channel labelled {key!r}") from None
        return self.values[key]


# ---------------------------------------------------------------------------
# Compensated accumulation and realized covariation
# ---------------------------------------------------------------------------

def kahan_cumsum(increments: np.ndarray, non_negative: bool = False) -> np.ndarray:
    """Compensated (Kahan/Neumaier) cumulative sum along the last axis.

    Returns an array with one extra trailing entry: ``out[..., 0] = 0`` and
    ``out[..., k]`` the compensated sum of the first ``k`` increments.  With
    ``non_negative=True`` the emitted series is additionally clamped to be
    non-decreasing: compensated emission can jitter down by one ulp where
    increments vanish, which would break exact monotonicity of realized
    variances.
    """
    inc = np.asarray(increments, dtype=float)
    n = inc.shape[-1]
    out = np.empty(inc.shape[:-1] + (n + 1,))
    out[..., 0] = 0.0
    s = np.zeros(inc.shape[:-1])
    c = np.zeros(inc.shape[:-1])
    for k in range(n):
        x = inc[..., k]
        t = s + x
        big = np.abs(s) >= np.abs(x)
        c = c + np.where(big, (s - t) + x, (x - t) + s)
        s = t
        out[..., k + 1] = s + c
    if non_negative:
        np.maximum.accumulate(out, axis=-1, out=out)
    return out


def realized_covariation(a: PathSeries, b: PathSeries) -> PathSeries:
    """Realized quadratic covariation of two single-channel series.

    Cumulative sum over steps of the increment products ``da * db``; exactly
    non-decreasing when ``a`` and ``b`` carry the same values.
    """
    if a.grid != b.grid:
        raise ShapeError("realized_covariation requires series on the same grid")
    if a.n_channels != 1 or b.n_channels != 1:
        raise ShapeError("realized_covariation expects single-channel series")
    da = np.diff(a.values[0])
    db = np.diff(b.values[0])
    same = a.values is b.values or np.array_equal(da, db)
    cov = kahan_cumsum(da * db, non_negative=same)
    return PathSeries(a.grid, cov[np.newaxis, :], labels=("cov",))

"""Segments, segment paths, path ensembles and the distances between them.

Everything lives on a uniform grid. A Segment holds the values of a function on [-tau, 0]; a
SegmentPath holds a trajectory on [-tau, T]; a PathEnsemble holds many trajectories on a shared
grid. The delay and the horizon must both be integer multiples of the step; off-grid times are
rejected rather than interpolated.

Distances come in two layers. The public functions take Segment / SegmentPath objects. The
``*_of_difference`` functions take raw difference arrays with arbitrary leading dimensions,
which is what the cost-matrix code in ``ot`` feeds them.
"""

#
#  Copyright (c) 2025 Stephen Jibson
#
#  This file is part of neutraltci.
#
#  Neutraltci is free software: you can redistribute it and/or modify it under the terms of the
#  GNU General Public License as published by the Free Software Foundation, either version 3 of the
#  License, or (at your option) any later version.
#
#  Neutraltci is distributed in the hope that it will be useful, but WITHOUT ANY WARRANTY;
#  without even the implied warranty of MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See
#  the GNU General Public License for more details.
#
#  You should have received a copy of the GNU General Public License along with neutraltci.
#  If not, see <https://www.gnu.org/licenses/>.
#
import dataclasses
import functools
import logging
import math
import pathlib
import re
from collections.abc import Sequence
from typing import Final, Literal

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view
from scipy import integrate

from neutraltci import errors

log = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]
PathMetric = Literal["uniform", "weighted-uniform", "l2-weighted"]
SegmentMetric = Literal["uniform", "l2", "l2-tilde"]

PATH_METRICS: Final[tuple[PathMetric, ...]] = ("uniform", "weighted-uniform", "l2-weighted")
SEGMENT_METRICS: Final[tuple[SegmentMetric, ...]] = ("uniform", "l2", "l2-tilde")

_GRID_TOLERANCE: Final[float] = 1e-9
_HEADER_RE: Final = re.compile(
    r"dt=(?P<dt>\S+)\s+tau=(?P<tau>\S+)\s+T=(?P<horizon>\S+)\s+d=(?P<dim>\d+)"
)


def grid_steps(value: float, dt: float, name: str = "value") -> int:
    """Return value / dt as an integer, or raise a DomainError if value is not on the grid."""
    if dt <= 0 or not math.isfinite(dt):
        msg = f"Time step must be positive and finite (got {dt})"
        raise errors.DomainError(msg)
    ratio = value / dt
    steps = round(ratio)
    if abs(ratio - steps) > _GRID_TOLERANCE * max(1.0, abs(ratio)):
        msg = f"{name}={value} is not an integer multiple of dt={dt}"
        raise errors.DomainError(msg)
    return int(steps)


@dataclasses.dataclass(frozen=True)
class Grid:
    """A uniform time grid on [-delay, horizon]."""

    dt: float
    delay: float
    horizon: float

    def __post_init__(self) -> None:
        """Validate grid alignment."""
        if self.delay <= 0:
            msg = f"Delay must be positive (got {self.delay})"
            raise errors.DomainError(msg)
        if self.horizon < 0:
            msg = f"Horizon must be nonnegative (got {self.horizon})"
            raise errors.DomainError(msg)
        grid_steps(self.delay, self.dt, "tau")
        grid_steps(self.horizon, self.dt, "T")

    @functools.cached_property
    def n_tau(self) -> int:
        """Return the number of steps in the delay window."""
        return grid_steps(self.delay, self.dt, "tau")

    @functools.cached_property
    def n_steps(self) -> int:
        """Return the number of steps in [0, horizon]."""
        return grid_steps(self.horizon, self.dt, "T")

    @property
    def n_points(self) -> int:
        """Return the number of grid points in [-delay, horizon]."""
        return self.n_tau + self.n_steps + 1

    @property
    def times(self) -> Array:
        """Return every grid time in [-delay, horizon]."""
        return (np.arange(self.n_points) - self.n_tau) * self.dt

    @property
    def segment_times(self) -> Array:
        """Return the grid times of a segment, -delay .. 0."""
        return (np.arange(self.n_tau + 1) - self.n_tau) * self.dt

    @property
    def step_times(self) -> Array:
        """Return the grid times in [0, horizon]."""
        return np.arange(self.n_steps + 1) * self.dt

    def index(self, t: float) -> int:
        """Return the step index of time t in [0, horizon]."""
        j = grid_steps(t, self.dt, "t")
        if not 0 <= j <= self.n_steps:
            msg = f"t={t} is outside [0, {self.horizon}]"
            raise errors.DomainError(msg)
        return j

    def with_dt(self, dt: float) -> "Grid":
        """Return the same delay and horizon on a different step."""
        return Grid(dt=dt, delay=self.delay, horizon=self.horizon)


@dataclasses.dataclass(frozen=True)
class Segment:
    """A function on [-delay, 0] sampled at n_tau + 1 uniform grid points.

    The first row of values is the value at -delay and the last row is the value at 0.
    """

    values: Array
    delay: float

    def __post_init__(self) -> None:
        """Normalize and validate the values."""
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[0] < 2 or values.shape[1] < 1:  # noqa: PLR2004
            msg = f"Segment values must have shape (n_tau + 1 >= 2, d >= 1), got {values.shape}"
            raise errors.DomainError(msg)
        if not np.all(np.isfinite(values)):
            msg = "Segment values must be finite"
            raise errors.DomainError(msg)
        if self.delay <= 0:
            msg = f"Segment delay must be positive (got {self.delay})"
            raise errors.DomainError(msg)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value: float | Sequence[float], *, delay: float, n_tau: int) -> "Segment":
        """Return a constant segment."""
        row = np.atleast_1d(np.asarray(value, dtype=np.float64))
        return cls(values=np.tile(row, (n_tau + 1, 1)), delay=delay)

    @property
    def dim(self) -> int:
        """Return the state dimension d."""
        return int(self.values.shape[1])

    @property
    def n_tau(self) -> int:
        """Return the number of steps in the segment."""
        return int(self.values.shape[0]) - 1

    @property
    def dt(self) -> float:
        """Return the grid step."""
        return self.delay / self.n_tau

    @property
    def endpoint(self) -> Array:
        """Return the value at 0."""
        return self.values[-1]


@dataclasses.dataclass(frozen=True)
class SegmentPath:
    """A trajectory on [-delay, horizon]; values has one row per grid time."""

    grid: Grid
    values: Array

    def __post_init__(self) -> None:
        """Normalize and validate the values."""
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[0] != self.grid.n_points:  # noqa: PLR2004
            msg = f"Path values must have {self.grid.n_points} rows, got shape {values.shape}"
            raise errors.DomainError(msg)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        """Return the state dimension d."""
        return int(self.values.shape[1])

    @property
    def initial_segment(self) -> Segment:
        """Return the restriction of the path to [-delay, 0]."""
        return Segment(values=self.values[: self.grid.n_tau + 1], delay=self.grid.delay)


@dataclasses.dataclass(frozen=True)
class PathEnsemble:
    """Many trajectories on a shared grid, stored as an (n, n_points, d) array."""

    grid: Grid
    values: Array
    seeds: tuple[int, ...]
    weights: Array | None = None

    def __post_init__(self) -> None:
        """Validate shapes and weights."""
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or values.shape[1] != self.grid.n_points:  # noqa: PLR2004
            shape = f"(n, {self.grid.n_points}, d)"
            msg = f"Ensemble values must be shaped {shape}, got {values.shape}"
            raise errors.DomainError(msg)
        n = values.shape[0]
        if len(self.seeds) != n:
            msg = f"Expected {n} seeds, got {len(self.seeds)}"
            raise errors.DomainError(msg)
        weights = np.full(n, 1.0 / n) if self.weights is None else np.asarray(self.weights, float)
        total = abs(weights.sum() - 1.0)
        if weights.shape != (n,) or np.any(weights < 0) or total > 1e-12:  # noqa: PLR2004
            msg = "Ensemble weights must be nonnegative, one per path, and sum to 1"
            raise errors.DomainError(msg)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        """Return the number of paths."""
        return int(self.values.shape[0])

    def __getitem__(self, index: int) -> SegmentPath:
        """Return a single path."""
        return SegmentPath(grid=self.grid, values=self.values[index])

    @property
    def dim(self) -> int:
        """Return the state dimension d."""
        return int(self.values.shape[2])

    @property
    def paths(self) -> list[SegmentPath]:
        """Return the paths as SegmentPath objects."""
        return [self[i] for i in range(len(self))]

    @property
    def initial_values(self) -> Array:
        """Return the initial segments as an (n, n_tau + 1, d) array."""
        return self.values[:, : self.grid.n_tau + 1]


# Segment and path operations.
def segment_at(path: SegmentPath, t: float) -> Segment:
    """Return the window of path over [t - delay, t], re-indexed to [-delay, 0]."""
    j = path.grid.index(t)
    return Segment(values=path.values[j : j + path.grid.n_tau + 1], delay=path.grid.delay)


def rho_uniform(a: Segment, b: Segment) -> float:
    """Return the sup over grid points of |a - b|."""
    return float(uniform_of_difference(_segment_difference(a, b)))


def rho_2(a: Segment, b: Segment) -> float:
    """Return the root of the delay-averaged square distance (trapezoidal rule)."""
    return float(np.sqrt(l2_squared_of_difference(_segment_difference(a, b), a.dt, a.delay)))


def rho_2_tilde(a: Segment, b: Segment) -> float:
    """Return sqrt(|a(0) - b(0)|^2 + rho_2(a, b)^2)."""
    diff = _segment_difference(a, b)
    return float(segment_distance_of_difference(diff, a.dt, a.delay, "l2-tilde"))


def rho_inf_path(a: SegmentPath, b: SegmentPath) -> float:
    """Return sup over t in [0, T] of rho_uniform of the windows at t.

    The windows tile [-delay, T], so this is the pointwise maximum over the whole path.
    """
    return float(uniform_of_difference(_path_difference(a, b)))


def rho_inf_weighted(a: SegmentPath, b: SegmentPath, lam: float) -> float:
    """Return sup over t of exp(-lam * t) * rho_uniform of the windows at t."""
    _check_lambda(lam)
    return float(weighted_uniform_of_difference(_path_difference(a, b), a.grid, lam))


def rho_2_lambda_path(a: SegmentPath, b: SegmentPath, lam: float) -> float:
    """Return sqrt(int_0^T exp(-lam * t) * rho_2(windows at t)^2 dt), truncated at the horizon."""
    _check_lambda(lam)
    return float(l2_weighted_of_difference(_path_difference(a, b), a.grid, lam))


def path_distance(a: SegmentPath, b: SegmentPath, metric: PathMetric, lam: float = 0.0) -> float:
    """Return the named path distance."""
    _check_lambda(lam)
    return float(path_distance_of_difference(_path_difference(a, b), a.grid, metric, lam))


# Distances on difference arrays; the last two axes are (grid point, coordinate).
def uniform_of_difference(diff: Array) -> Array:
    """Return the max pointwise Euclidean norm over the grid axis."""
    return np.asarray(np.linalg.norm(diff, axis=-1).max(axis=-1))


def l2_squared_of_difference(diff: Array, dt: float, delay: float) -> Array:
    """Return (1 / delay) * trapezoid of |diff|^2 over the grid axis."""
    return np.asarray(integrate.trapezoid(np.sum(diff * diff, axis=-1), dx=dt, axis=-1) / delay)


def segment_distance_of_difference(
    diff: Array, dt: float, delay: float, metric: SegmentMetric
) -> Array:
    """Return the named segment distance of segment differences shaped (..., n_tau + 1, d)."""
    match metric:
        case "uniform":
            return uniform_of_difference(diff)
        case "l2":
            return np.sqrt(l2_squared_of_difference(diff, dt, delay))
        case "l2-tilde":
            endpoint = np.sum(diff[..., -1, :] ** 2, axis=-1)
            return np.sqrt(endpoint + l2_squared_of_difference(diff, dt, delay))
    msg = f"Unknown segment metric: {metric}"
    raise errors.DomainError(msg)


def weighted_uniform_of_difference(diff: Array, grid: Grid, lam: float) -> Array:
    """Return the discounted sup of the window sup norms."""
    norms = np.linalg.norm(diff, axis=-1)
    window_max = sliding_window_view(norms, grid.n_tau + 1, axis=-1).max(axis=-1)
    return np.asarray((np.exp(-lam * grid.step_times) * window_max).max(axis=-1))


def window_l2_squared_of_difference(diff: Array, grid: Grid) -> Array:
    """Return rho_2(window at t)^2 for every grid t in [0, T], shaped (..., n_steps + 1)."""
    squares = np.sum(diff * diff, axis=-1)
    running = integrate.cumulative_trapezoid(squares, dx=grid.dt, axis=-1, initial=0.0)
    return np.asarray((running[..., grid.n_tau :] - running[..., : -grid.n_tau]) / grid.delay)


def l2_weighted_of_difference(diff: Array, grid: Grid, lam: float) -> Array:
    """Return the discounted L2-in-time distance of window rho_2 values."""
    if grid.n_steps == 0:
        return np.zeros(diff.shape[:-2])
    integrand = np.exp(-lam * grid.step_times) * window_l2_squared_of_difference(diff, grid)
    return np.sqrt(integrate.trapezoid(integrand, dx=grid.dt, axis=-1))


def path_distance_of_difference(diff: Array, grid: Grid, metric: PathMetric, lam: float) -> Array:
    """Return the named path distance of path differences shaped (..., n_points, d)."""
    match metric:
        case "uniform":
            return uniform_of_difference(diff)
        case "weighted-uniform":
            return weighted_uniform_of_difference(diff, grid, lam)
        case "l2-weighted":
            return l2_weighted_of_difference(diff, grid, lam)
    msg = f"Unknown path metric: {metric}"
    raise errors.DomainError(msg)


# Serialization.
def write_path(path: SegmentPath, filename: pathlib.Path) -> None:
    """Write a path as columnar text: a header line, then time and d coordinates per row."""
    grid = path.grid
    header = f"dt={grid.dt:.17g} tau={grid.delay:.17g} T={grid.horizon:.17g} d={path.dim}"
    table = np.column_stack((grid.times, path.values))
    np.savetxt(filename, table, fmt="%.17g", header=header, comments="# ")


def read_path(filename: pathlib.Path) -> SegmentPath:
    """Read a path written by write_path."""
    with filename.open(encoding="utf-8") as f:
        header = f.readline()
    match = _HEADER_RE.search(header)
    if match is None:
        msg = f"{filename}: missing or malformed path header"
        raise errors.DomainError(msg)
    grid = Grid(
        dt=float(match["dt"]), delay=float(match["tau"]), horizon=float(match["horizon"])
    )
    table = np.loadtxt(filename, ndmin=2)
    dim = int(match["dim"])
    if table.shape[1] != dim + 1:
        msg = f"{filename}: expected {dim + 1} columns, found {table.shape[1]}"
        raise errors.DomainError(msg)
    return SegmentPath(grid=grid, values=table[:, 1:])


def _check_lambda(lam: float) -> None:
    if lam < 0 or not math.isfinite(lam):
        msg = f"Discount rate must be nonnegative and finite (got {lam})"
        raise errors.DomainError(msg)


def _segment_difference(a: Segment, b: Segment) -> Array:
    if a.values.shape != b.values.shape or not math.isclose(a.delay, b.delay):
        msg = "Segments are not on the same grid"
        raise errors.DomainError(msg)
    return a.values - b.values


def _path_difference(a: SegmentPath, b: SegmentPath) -> Array:
    if a.grid != b.grid or a.values.shape != b.values.shape:
        msg = "Paths are not on the same grid"
        raise errors.DomainError(msg)
    return a.values - b.values

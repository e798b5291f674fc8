"""Fixed-point Euler-Maruyama integration of neutral functional SDEs.

The integrator evolves M(t) = X(t) - G(X_t) explicitly and recovers the new endpoint X(t + dt)
from X(t + dt) = M(t + dt) + G(X_{t + dt}) by fixed-point iteration on the one unknown entry of the
shifted segment. A contraction constant kappa < 1 for G guarantees convergence at rate kappa.

Paths are simulated in batches: every array carries a leading path axis, so one call to a
coefficient evaluator advances a whole chunk of paths by one step.

Randomness comes from counter-based streams. Path i of stream s under root seed r always draws
from Philox seeded by SeedSequence(r, spawn_key=(i, s)), independent of how many paths are run or
how they are split between workers.
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
import enum
import json
import logging
import math
import pathlib
from collections.abc import Callable
from typing import Any, Protocol

import numpy as np

from neutraltci import errors, model, paths, records, workers
from neutraltci.paths import Array

log = logging.getLogger(__name__)


class Stream(enum.IntEnum):
    """Independent noise streams derived from the root seed."""

    COUPLED = 0
    REFERENCE_WEIGHTED = 1
    REFERENCE = 2
    FLOOR = 3
    BOOTSTRAP = 4
    CHECKS = 5
    CONVERGENCE = 6
    SYNCHRONOUS = 7


def path_seed(root: int, index: int, stream: Stream) -> int:
    """Return the 64-bit seed of path index in the given stream."""
    sequence = np.random.SeedSequence(root, spawn_key=(index, int(stream)))
    return int(sequence.generate_state(1, np.uint64)[0])


def generator(seed: int) -> np.random.Generator:
    """Return the counter-based generator for a path seed."""
    return np.random.Generator(np.random.Philox(seed))


def stream_generator(root: int, stream: Stream) -> np.random.Generator:
    """Return a generator for a whole stream (used for checkers and bootstrap)."""
    return generator(path_seed(root, 0, stream))


@dataclasses.dataclass(frozen=True, kw_only=True)
class SimConfig:
    """Simulation sizes, seed and fixed-point settings."""

    horizon: float
    dt: float
    delay: float
    dim: int = 1
    noise_dim: int = 1
    n_paths: int = 1
    seed: int = 0
    fp_tol: float = 1e-12
    fp_max_iter: int = 100
    chunk_size: int = 64

    def __post_init__(self) -> None:
        """Validate sizes and tolerances."""
        paths.Grid(dt=self.dt, delay=self.delay, horizon=self.horizon)
        if self.n_paths < 1:
            msg = f"n_paths must be at least 1 (got {self.n_paths})"
            raise errors.DomainError(msg)
        if self.fp_tol <= 0:
            msg = f"fp_tol must be positive (got {self.fp_tol})"
            raise errors.DomainError(msg)
        if self.fp_max_iter < 1 or self.chunk_size < 1 or self.dim < 1 or self.noise_dim < 1:
            msg = "fp_max_iter, chunk_size, dim and noise_dim must all be at least 1"
            raise errors.DomainError(msg)

    @property
    def grid(self) -> paths.Grid:
        """Return the simulation grid."""
        return paths.Grid(dt=self.dt, delay=self.delay, horizon=self.horizon)

    def max_iterations(self, kappa: float | None) -> int:
        """Return fp_max_iter, raised so a contraction at rate kappa can reach fp_tol."""
        if kappa is None or kappa <= 0:
            return self.fp_max_iter
        needed = math.ceil(math.log(self.fp_tol) / math.log(kappa)) + 10
        return max(self.fp_max_iter, needed)


@dataclasses.dataclass(frozen=True)
class NoiseStream:
    """Brownian increments of one path, shaped (n_steps, m), with variance dt per coordinate."""

    increments: Array
    seed: int

    @classmethod
    def draw(cls, seed: int, *, n_steps: int, noise_dim: int, dt: float) -> "NoiseStream":
        """Draw the increments of a path seed."""
        rng = generator(seed)
        return cls(increments=math.sqrt(dt) * rng.standard_normal((n_steps, noise_dim)), seed=seed)

    @property
    def n_steps(self) -> int:
        """Return the number of increments."""
        return int(self.increments.shape[0])


class Control(Protocol):
    """An adapted control h(t, X_t), evaluated on a batch of segments."""

    def evaluate(self, t: float, segments: Array) -> tuple[Array, Array]:
        """Return h shaped (B, m) and a boolean mask of rows that were clipped."""


class InitialLaw(Protocol):
    """A law of initial segments, sampled one path at a time from that path's generator."""

    @property
    def is_dirac(self) -> bool:
        """Return True if every draw is the same segment."""

    def sample(self, rng: np.random.Generator) -> Array:
        """Return one initial segment shaped (n_tau + 1, d)."""


@dataclasses.dataclass(frozen=True, eq=False)
class DiracLaw:
    """The point mass at a fixed segment."""

    values: Array

    @property
    def is_dirac(self) -> bool:
        """Return True."""
        return True

    def sample(self, rng: np.random.Generator) -> Array:
        """Return the segment."""
        _ = rng
        return np.array(self.values, dtype=float)


@dataclasses.dataclass(frozen=True, eq=False)
class RandomSegmentLaw:
    """Random initial segments drawn from a SegmentSampler, shifted by a mean segment."""

    sampler: model.SegmentSampler
    mean: Array

    @property
    def is_dirac(self) -> bool:
        """Return False."""
        return False

    def sample(self, rng: np.random.Generator) -> Array:
        """Return one random segment."""
        return self.mean + self.sampler.segments(1, rng)[0]


@dataclasses.dataclass
class Trajectories:
    """Output of a batched integration."""

    values: Array
    controls: Array | None = None
    clipped: Array | None = None
    fp_iterations: int = 0


def fixed_point_solve(
    neutral: model.SegmentMap,
    m_next: Array,
    window: Array,
    guess: Array,
    *,
    tol: float,
    max_iter: int,
) -> tuple[Array, list[float]]:
    """Solve x = m_next + G(window with endpoint x) for a batch of windows.

    window holds the known history in every row but the last. Rows stop updating once their own
    change falls below tol. Returns the solution and the batch-wide change of every iteration.
    """
    trial = np.array(window, dtype=float)
    trial[:, -1] = guess
    x = m_next + neutral(trial)
    residuals: list[float] = []
    active = np.ones(x.shape[0], dtype=bool)
    for _ in range(max_iter):
        trial[active, -1] = x[active]
        update = m_next[active] + neutral(trial[active])
        change = np.linalg.norm(update - x[active], axis=-1)
        x[active] = update
        residuals.append(float(change.max()))
        if not np.all(np.isfinite(change)):
            msg = "Fixed-point iteration produced non-finite values"
            raise errors.NumericError(msg)
        still = np.flatnonzero(active)[change >= tol]
        active[:] = False
        active[still] = True
        if not active.any():
            return x, residuals
    msg = f"Fixed point did not converge in {max_iter} iterations (residual {residuals[-1]:.3g})"
    raise errors.ConvergenceError(msg, residual=residuals[-1], iterations=max_iter)


def integrate(
    coeffs: model.CoefficientSet,
    initial: Array,
    grid: paths.Grid,
    increments: Array,
    *,
    fp_tol: float = 1e-12,
    fp_max_iter: int = 100,
    control: Control | None = None,
) -> Trajectories:
    """Integrate a batch of paths.

    initial is shaped (B, n_tau + 1, d) and increments (B, n_steps, m). With a control, the drift
    gains sigma(X_t) h(t, X_t).
    """
    coeffs.check_stability(grid.dt)
    batch, n_tau, dt = initial.shape[0], grid.n_tau, grid.dt
    if initial.shape[1:] != (n_tau + 1, coeffs.dim):
        msg = f"Initial segments must be shaped (B, {n_tau + 1}, {coeffs.dim})"
        raise errors.DomainError(msg)
    if increments.shape != (batch, grid.n_steps, coeffs.noise_dim):
        msg = f"Increments must be shaped ({batch}, {grid.n_steps}, {coeffs.noise_dim})"
        raise errors.DomainError(msg)
    values = np.empty((batch, grid.n_points, coeffs.dim))
    values[:, : n_tau + 1] = initial
    controls = None if control is None else np.zeros((batch, grid.n_steps, coeffs.noise_dim))
    clipped = np.zeros(batch, dtype=int)
    iterations = 0
    iterate = coeffs.neutral_depends_on_endpoint
    for j in range(grid.n_steps):
        window = values[:, j : j + n_tau + 1]
        x_t = window[:, -1]
        noise = increments[:, j]
        if control is not None and controls is not None:
            h, was_clipped = control.evaluate(j * dt, window)
            controls[:, j] = h
            clipped += was_clipped
            noise = noise + h * dt
        m_next = (
            x_t
            - coeffs.neutral(window)
            + coeffs.full_drift(window) * dt
            + np.einsum("bdm,bm->bd", coeffs.diffusion(window), noise)
        )
        if not np.all(np.isfinite(m_next)):
            msg = f"Coefficients produced non-finite values at t={j * dt:g}"
            raise errors.NumericError(msg)
        next_window = values[:, j + 1 : j + n_tau + 2]
        if iterate:
            x_next, residuals = fixed_point_solve(
                coeffs.neutral, m_next, next_window, x_t, tol=fp_tol, max_iter=fp_max_iter
            )
            iterations = max(iterations, len(residuals))
        else:
            next_window[:, -1] = x_t
            x_next = m_next + coeffs.neutral(next_window)
        values[:, j + n_tau + 1] = x_next
    log.debug(
        "Integrated %d paths over %d steps (max fp iterations %d)", batch, grid.n_steps, iterations
    )
    return Trajectories(
        values=values, controls=controls, clipped=clipped, fp_iterations=iterations
    )


def euler_step(
    coeffs: model.CoefficientSet,
    segment: paths.Segment,
    dw: Array,
    dt: float,
    *,
    fp_tol: float = 1e-12,
    fp_max_iter: int = 100,
) -> Array:
    """Return X(t + dt) given the segment X_t and the Brownian increment dw."""
    grid = paths.Grid(dt=dt, delay=segment.delay, horizon=dt)
    if grid.n_tau != segment.n_tau:
        msg = f"Segment step {segment.dt} does not match dt={dt}"
        raise errors.DomainError(msg)
    result = integrate(
        coeffs,
        segment.values[None],
        grid,
        np.asarray(dw, dtype=float).reshape(1, 1, -1),
        fp_tol=fp_tol,
        fp_max_iter=fp_max_iter,
    )
    return result.values[0, -1]


def simulate_path(
    coeffs: model.CoefficientSet,
    initial: paths.Segment,
    cfg: SimConfig,
    noise: NoiseStream,
    control: Control | None = None,
) -> paths.SegmentPath:
    """Integrate one path driven by the given noise."""
    grid = cfg.grid
    if initial.n_tau != grid.n_tau or noise.n_steps != grid.n_steps:
        msg = "Initial segment or noise does not match the simulation grid"
        raise errors.DomainError(msg)
    result = integrate(
        coeffs,
        initial.values[None],
        grid,
        noise.increments[None],
        fp_tol=cfg.fp_tol,
        fp_max_iter=cfg.max_iterations(coeffs.constants.kappa),
        control=control,
    )
    return paths.SegmentPath(grid=grid, values=result.values[0])


@dataclasses.dataclass(frozen=True, eq=False)
class ChunkTask:
    """Paths start..stop-1 of one stream; picklable so it can be sent to a worker."""

    coeffs: model.CoefficientSet
    law: InitialLaw
    cfg: SimConfig
    stream: Stream
    start: int
    stop: int
    control: Control | None = None


def draw_inputs(task: ChunkTask) -> tuple[Array, Array, list[int]]:
    """Return the initial segments, increments and seeds of a chunk."""
    grid = task.cfg.grid
    seeds = [path_seed(task.cfg.seed, i, task.stream) for i in range(task.start, task.stop)]
    initial = np.empty((len(seeds), grid.n_tau + 1, task.coeffs.dim))
    increments = np.empty((len(seeds), grid.n_steps, task.coeffs.noise_dim))
    scale = math.sqrt(grid.dt)
    for row, seed in enumerate(seeds):
        rng = generator(seed)
        initial[row] = task.law.sample(rng)
        increments[row] = scale * rng.standard_normal((grid.n_steps, task.coeffs.noise_dim))
    return initial, increments, seeds


def simulate_chunk(task: ChunkTask) -> tuple[Trajectories, list[int], Array]:
    """Simulate one chunk; returns trajectories, seeds and increments."""
    initial, increments, seeds = draw_inputs(task)
    trajectories = integrate(
        task.coeffs,
        initial,
        task.cfg.grid,
        increments,
        fp_tol=task.cfg.fp_tol,
        fp_max_iter=task.cfg.max_iterations(task.coeffs.constants.kappa),
        control=task.control,
    )
    return trajectories, seeds, increments


def chunk_tasks(
    coeffs: model.CoefficientSet,
    law: InitialLaw,
    cfg: SimConfig,
    stream: Stream,
    control: Control | None = None,
) -> list[ChunkTask]:
    """Split the ensemble into fixed-size chunks."""
    size = cfg.chunk_size
    return [
        ChunkTask(coeffs, law, cfg, stream, start, min(start + size, cfg.n_paths), control)
        for start in range(0, cfg.n_paths, size)
    ]


def simulate_ensemble(
    coeffs: model.CoefficientSet,
    law: InitialLaw,
    cfg: SimConfig,
    control: Control | None = None,
    *,
    stream: Stream = Stream.COUPLED,
    threads: int = 1,
) -> paths.PathEnsemble:
    """Simulate cfg.n_paths independent paths with per-path counter-based noise streams."""
    log.info("Simulating %d paths (stream %s)", cfg.n_paths, stream.name)
    tasks = chunk_tasks(coeffs, law, cfg, stream, control)
    results = workers.parallel_map(simulate_chunk, tasks, threads, "Simulating")
    values = np.concatenate([trajectories.values for trajectories, _, _ in results])
    seeds = tuple(seed for _, chunk_seeds, _ in results for seed in chunk_seeds)
    return paths.PathEnsemble(grid=cfg.grid, values=values, seeds=seeds)


def write_ensemble(
    ensemble: paths.PathEnsemble, directory: pathlib.Path, manifest: dict[str, Any]
) -> list[pathlib.Path]:
    """Write one path file per trajectory plus manifest.json; returns the path files."""
    directory.mkdir(parents=True, exist_ok=True)
    width = len(str(max(len(ensemble) - 1, 0)))
    filenames = []
    for i, path in enumerate(ensemble.paths):
        filename = directory / f"path_{str(i).zfill(width)}.txt"
        paths.write_path(path, filename)
        filenames.append(filename)
    content = manifest | {
        "files": [f.name for f in filenames],
        "seeds": list(ensemble.seeds),
    }
    (directory / "manifest.json").write_text(
        json.dumps(content, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return filenames


# Integrator validation.
def convergence_study(  # noqa: PLR0913
    make_coeffs: Callable[[int], model.CoefficientSet],
    *,
    initial_value: float,
    delay: float,
    horizon: float,
    dts: list[float],
    refinement: int = 64,
    n_paths: int = 2000,
    seed: int = 0,
    stochastic: bool = True,
    expected: tuple[float, float] = (0.35, 0.65),
    chunk_size: int = 256,
    noise: str = "multiplicative",
) -> records.ConvergenceReport:
    """Return the observed order of the RMS endpoint error against a refined reference.

    make_coeffs builds the coefficients for a given number of delay steps (the grid weights depend
    on the step). All coarse solutions reuse the reference's Brownian path, summed over blocks.
    """
    dts = sorted(dts, reverse=True)
    fine_dt = dts[-1] / refinement
    fine = paths.Grid(dt=fine_dt, delay=delay, horizon=horizon)
    factors = [paths.grid_steps(dt, fine_dt, "dt") for dt in dts]
    n_paths = n_paths if stochastic else 1
    squared = np.zeros(len(dts))
    for start in range(0, n_paths, chunk_size):
        stop = min(start + chunk_size, n_paths)
        increments = np.zeros((stop - start, fine.n_steps, 1))
        if stochastic:
            for row, i in enumerate(range(start, stop)):
                rng = generator(path_seed(seed, i, Stream.CONVERGENCE))
                increments[row] = math.sqrt(fine_dt) * rng.standard_normal((fine.n_steps, 1))
        reference = _endpoint(make_coeffs, fine, initial_value, increments)
        for col, (dt, factor) in enumerate(zip(dts, factors, strict=True)):
            coarse = fine.with_dt(dt)
            summed = increments.reshape(stop - start, coarse.n_steps, factor, 1).sum(axis=2)
            endpoint = _endpoint(make_coeffs, coarse, initial_value, summed)
            squared[col] += float(np.sum((endpoint - reference) ** 2))
    rms = np.sqrt(squared / n_paths)
    order = float(np.polyfit(np.log(dts), np.log(rms), 1)[0])
    log.info("Observed order %.3f over dt=%s", order, dts)
    return records.ConvergenceReport(
        study="strong" if stochastic else "deterministic",
        noise=noise if stochastic else "none",
        dts=list(dts),
        errors=[float(x) for x in rms],
        order=order,
        expected_low=expected[0],
        expected_high=expected[1],
    )


def _endpoint(
    make_coeffs: Callable[[int], model.CoefficientSet],
    grid: paths.Grid,
    initial_value: float,
    increments: Array,
) -> Array:
    coeffs = make_coeffs(grid.n_tau)
    initial = np.full((increments.shape[0], grid.n_tau + 1, coeffs.dim), initial_value)
    return integrate(coeffs, initial, grid, increments).values[:, -1, 0]

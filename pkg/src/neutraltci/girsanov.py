"""Girsanov tilts and the coupled simulation of a tilted and an untilted solution.

A bounded control h drives two solutions with the same Brownian increments dW~:

    X: drift b + sigma h (the law of X is the tilted law F Pi)
    Y: drift b           (the law of Y is Pi)

The density of the tilt is accumulated on the grid with left-point (Ito) sums. Along the coupled
run the increments are those of W~, so

    log F = sum <h, dW~> + 1/2 sum |h|^2 dt,

and along an untilted reference run driven by W the same density reads

    log F = sum <h, dW> - 1/2 sum |h|^2 dt.

The relative entropy of the tilted law is 1/2 E int |h(t, X_t)|^2 dt over the X paths.
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
import logging
import math
import warnings
from collections.abc import Callable
from typing import Final, Literal

import numpy as np
from scipy import special

from neutraltci import errors, model, paths, records, simulate, workers
from neutraltci.paths import Array

log = logging.getLogger(__name__)

TiltKind = Literal["none", "constant", "ramp", "feedback"]
PathFunctional = Callable[[Array], Array]

_LOW_ESS_FRACTION: Final[float] = 0.1


@dataclasses.dataclass(frozen=True, kw_only=True, eq=False)
class GirsanovTilt:
    """A bounded control h(t, xi) with values in R^m.

    constant: h = c; ramp: h = c t / horizon; feedback: h_j = c_j tanh(xi(0)_{j mod d}). Values
    whose norm exceeds h_bound are radially clipped and counted.
    """

    kind: TiltKind
    values: Array
    h_bound: float
    horizon: float = 1.0

    def __post_init__(self) -> None:
        """Validate the tilt."""
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            msg = "Tilt values must be a finite vector with one entry per noise coordinate"
            raise errors.DomainError(msg)
        if not (self.h_bound > 0 and math.isfinite(self.h_bound)):
            msg = f"h_bound must be positive and finite (got {self.h_bound})"
            raise errors.DomainError(msg)
        if self.horizon <= 0:
            msg = f"Tilt horizon must be positive (got {self.horizon})"
            raise errors.DomainError(msg)
        object.__setattr__(self, "values", values)

    @classmethod
    def zero(cls, noise_dim: int) -> "GirsanovTilt":
        """Return the zero tilt."""
        return cls(kind="none", values=np.zeros(noise_dim), h_bound=1.0)

    @property
    def noise_dim(self) -> int:
        """Return m."""
        return int(self.values.shape[0])

    def evaluate(self, t: float, segments: Array) -> tuple[Array, Array]:
        """Return h for a batch of segments, and the mask of clipped rows."""
        batch = segments.shape[0]
        match self.kind:
            case "none":
                h = np.zeros((batch, self.noise_dim))
            case "constant":
                h = np.tile(self.values, (batch, 1))
            case "ramp":
                h = np.tile(self.values * (t / self.horizon), (batch, 1))
            case "feedback":
                endpoint = segments[:, -1, :]
                columns = np.arange(self.noise_dim) % endpoint.shape[-1]
                h = self.values * np.tanh(endpoint[:, columns])
            case _:
                msg = f"Unknown tilt kind: {self.kind}"
                raise errors.DomainError(msg)
        norm = np.linalg.norm(h, axis=-1)
        clipped = norm > self.h_bound
        if np.any(clipped):
            h[clipped] *= (self.h_bound / norm[clipped])[:, None]
        return h, clipped

    def closed_form_entropy(self, horizon: float) -> float | None:
        """Return the entropy of an open-loop tilt in continuous time, or None for feedback."""
        size = float(np.dot(self.values, self.values))
        match self.kind:
            case "none":
                return 0.0
            case "constant" if math.sqrt(size) <= self.h_bound:
                return 0.5 * size * horizon
            case "ramp" if math.sqrt(size) <= self.h_bound:
                return size * horizon / 6.0
        return None


@dataclasses.dataclass(frozen=True, kw_only=True, eq=False)
class CouplingResult:
    """The coupled X (tilted) and Y (untilted) ensembles and per-path statistics."""

    x_paths: paths.PathEnsemble
    y_paths: paths.PathEnsemble
    log_density: Array
    entropy_per_path: Array
    sup_diff: Array
    clipped: Array
    tilt_kind: str

    @property
    def entropy_estimate(self) -> float:
        """Return 1/2 * mean over paths of int |h|^2 dt."""
        return float(np.mean(self.entropy_per_path))

    def __len__(self) -> int:
        """Return the number of path pairs."""
        return len(self.x_paths)

    def distances(self, metric: paths.PathMetric, lam: float = 0.0) -> Array:
        """Return metric(X_i, Y_i) for every path pair."""
        diff = self.x_paths.values - self.y_paths.values
        return paths.path_distance_of_difference(diff, self.x_paths.grid, metric, lam)

    def summary(self) -> records.CouplingSummary:
        """Return the JSON summary of the run."""
        entropy, entropy_se = relative_entropy(self)
        quantiles = np.quantile(self.sup_diff, [0.0, 0.5, 0.9, 0.99, 1.0])
        return records.CouplingSummary(
            tilt=self.tilt_kind,
            n_paths=len(self),
            horizon=self.x_paths.grid.horizon,
            entropy=entropy,
            entropy_se=entropy_se,
            sup_diff_mean_square=float(np.mean(self.sup_diff**2)),
            sup_diff_quantiles={
                name: float(q)
                for name, q in zip(("min", "median", "p90", "p99", "max"), quantiles, strict=True)
            },
            clipped=int(self.clipped.sum()),
        )

    def per_path_rows(self) -> list[dict[str, float | int]]:
        """Return one CSV row per path pair."""
        return [
            {
                "path": i,
                "seed": self.x_paths.seeds[i],
                "log_density": float(self.log_density[i]),
                "entropy": float(self.entropy_per_path[i]),
                "sup_diff": float(self.sup_diff[i]),
                "clipped": int(self.clipped[i]),
            }
            for i in range(len(self))
        ]


def _coupled_chunk(
    task: simulate.ChunkTask,
) -> tuple[Array, Array, Array, Array, Array, list[int]]:
    """Simulate X with the control and Y without it, sharing the increments of one chunk."""
    if task.control is None:
        msg = "A coupled chunk needs a tilt"
        raise errors.DomainError(msg)
    initial, increments, seeds = simulate.draw_inputs(task)
    grid, cfg = task.cfg.grid, task.cfg
    max_iter = cfg.max_iterations(task.coeffs.constants.kappa)
    x = simulate.integrate(
        task.coeffs,
        initial,
        grid,
        increments,
        fp_tol=cfg.fp_tol,
        fp_max_iter=max_iter,
        control=task.control,
    )
    y = simulate.integrate(
        task.coeffs, initial, grid, increments, fp_tol=cfg.fp_tol, fp_max_iter=max_iter
    )
    controls = x.controls if x.controls is not None else np.zeros_like(increments)
    clipped = x.clipped if x.clipped is not None else np.zeros(len(seeds), dtype=int)
    squares = np.sum(controls * controls, axis=-1).sum(axis=-1) * grid.dt
    log_density = np.einsum("bjm,bjm->b", controls, increments) + 0.5 * squares
    return x.values, y.values, log_density, 0.5 * squares, clipped, seeds


def coupled_simulate(
    coeffs: model.CoefficientSet,
    law: simulate.InitialLaw,
    cfg: simulate.SimConfig,
    tilt: GirsanovTilt,
    *,
    threads: int = 1,
) -> CouplingResult:
    """Run the tilted and untilted solutions on shared noise (stream COUPLED)."""
    if tilt.noise_dim != coeffs.noise_dim:
        msg = f"Tilt has {tilt.noise_dim} components but the noise has {coeffs.noise_dim}"
        raise errors.DomainError(msg)
    log.info("Coupled simulation of %d path pairs (tilt %s)", cfg.n_paths, tilt.kind)
    tasks = simulate.chunk_tasks(coeffs, law, cfg, simulate.Stream.COUPLED, control=tilt)
    results = workers.parallel_map(_coupled_chunk, tasks, threads, "Coupling")
    x, y, log_density, entropy, clipped, seeds = (
        np.concatenate([r[i] for r in results]) for i in range(6)
    )
    seeds_tuple = tuple(int(s) for s in seeds)
    grid = cfg.grid
    n_tau = grid.n_tau
    sup_diff = np.linalg.norm(x[:, n_tau:] - y[:, n_tau:], axis=-1).max(axis=-1)
    if clipped.sum():
        log.warning("Tilt was clipped at %d evaluations (h_bound=%g)", clipped.sum(), tilt.h_bound)
    return CouplingResult(
        x_paths=paths.PathEnsemble(grid=grid, values=x, seeds=seeds_tuple),
        y_paths=paths.PathEnsemble(grid=grid, values=y, seeds=seeds_tuple),
        log_density=log_density,
        entropy_per_path=entropy,
        sup_diff=sup_diff,
        clipped=clipped,
        tilt_kind=tilt.kind,
    )


def relative_entropy(result: CouplingResult) -> tuple[float, float]:
    """Return the Monte Carlo mean and standard error of 1/2 int |h(t, X_t)|^2 dt."""
    return _mean_se(result.entropy_per_path)


def tilt_along(tilt: GirsanovTilt, values: Array, grid: paths.Grid) -> tuple[Array, Array]:
    """Evaluate the tilt along given paths; returns h shaped (n, n_steps, m) and clip counts."""
    n = values.shape[0]
    controls = np.zeros((n, grid.n_steps, tilt.noise_dim))
    clipped = np.zeros(n, dtype=int)
    for j in range(grid.n_steps):
        h, was_clipped = tilt.evaluate(j * grid.dt, values[:, j : j + grid.n_tau + 1])
        controls[:, j] = h
        clipped += was_clipped
    return controls, clipped


def reference_density(
    coeffs: model.CoefficientSet,
    law: simulate.InitialLaw,
    cfg: simulate.SimConfig,
    tilt: GirsanovTilt,
    *,
    threads: int = 1,
) -> tuple[paths.PathEnsemble, Array]:
    """Simulate untilted paths (stream REFERENCE_WEIGHTED) and return them with log F per path."""
    tasks = simulate.chunk_tasks(coeffs, law, cfg, simulate.Stream.REFERENCE_WEIGHTED)
    results = workers.parallel_map(simulate.simulate_chunk, tasks, threads, "Reweighting")
    values = np.concatenate([trajectories.values for trajectories, _, _ in results])
    increments = np.concatenate([increments for _, _, increments in results])
    seeds = tuple(seed for _, chunk_seeds, _ in results for seed in chunk_seeds)
    controls, _ = tilt_along(tilt, values, cfg.grid)
    squares = np.sum(controls * controls, axis=-1).sum(axis=-1) * cfg.grid.dt
    log_density = np.einsum("bjm,bjm->b", controls, increments) - 0.5 * squares
    return paths.PathEnsemble(grid=cfg.grid, values=values, seeds=seeds), log_density


def endpoint_tanh(values: Array) -> Array:
    """Return tanh of the first coordinate of the endpoint; a bounded path functional."""
    return np.tanh(values[:, -1, 0])


def importance_check(  # noqa: PLR0913
    coeffs: model.CoefficientSet,
    law: simulate.InitialLaw,
    cfg: simulate.SimConfig,
    tilt: GirsanovTilt,
    phi: PathFunctional = endpoint_tanh,
    *,
    coupled: CouplingResult | None = None,
    threads: int = 1,
) -> records.ImportanceReport:
    """Compare E_P[F phi(X)] from reweighted reference paths with E_Q[phi(X)] from the coupling."""
    if coupled is None:
        coupled = coupled_simulate(coeffs, law, cfg, tilt, threads=threads)
    reference, log_density = reference_density(coeffs, law, cfg, tilt, threads=threads)
    density = np.exp(log_density)
    weighted_mean, weighted_se = _mean_se(density * phi(reference.values))
    tilted_mean, tilted_se = _mean_se(phi(coupled.x_paths.values))
    normalization, normalization_se = _mean_se(density)
    spread = math.hypot(weighted_se, tilted_se)
    difference = weighted_mean - tilted_mean
    z_score = difference / spread if spread > 0 else (0.0 if difference == 0 else math.inf)
    ess = math.exp(2.0 * special.logsumexp(log_density) - special.logsumexp(2.0 * log_density))
    low_ess = ess < _LOW_ESS_FRACTION * len(density)
    if low_ess:
        msg = f"Low effective sample size in importance check: {ess:.1f} of {len(density)}"
        log.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return records.ImportanceReport(
        weighted_mean=weighted_mean,
        weighted_se=weighted_se,
        tilted_mean=tilted_mean,
        tilted_se=tilted_se,
        z_score=float(z_score),
        normalization=normalization,
        normalization_se=normalization_se,
        effective_sample_size=ess,
        low_ess=low_ess,
    )


def _mean_se(values: Array) -> tuple[float, float]:
    n = len(values)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se

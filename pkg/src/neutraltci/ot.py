"""Empirical Wasserstein-2 distances between equal-size path ensembles.

Both ensembles carry uniform weights, so the discrete transport problem is an assignment problem:
small ensembles are solved exactly, larger ones with log-domain entropic (Sinkhorn) iterations.
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
from typing import Final, Literal

import numpy as np
from scipy import optimize, special

from neutraltci import errors, girsanov, paths, workers
from neutraltci.paths import Array

log = logging.getLogger(__name__)

Solver = Literal["exact", "sinkhorn"]

DEFAULT_CAP: Final[int] = 1024
_ROWS_PER_TASK: Final[int] = 32


@dataclasses.dataclass(frozen=True, eq=False)
class CostMatrix:
    """Squared path distances between two ensembles.

    values[i, j] = metric(a_i, b_j)^2. within_source and within_target hold the same for a
    against a and b against b when requested; the debiased entropic estimate needs them.
    """

    values: Array
    metric: str
    within_source: Array | None = None
    within_target: Array | None = None

    def __post_init__(self) -> None:
        """Validate the matrices."""
        for name in ("values", "within_source", "within_target"):
            matrix = getattr(self, name)
            if matrix is None:
                continue
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:  # noqa: PLR2004
                msg = f"Cost matrix {name} must be square (got shape {matrix.shape})"
                raise errors.DomainError(msg)
            if not np.all(np.isfinite(matrix)) or np.any(matrix < 0):
                msg = f"Cost matrix {name} must be finite and nonnegative"
                raise errors.DomainError(msg)

    @property
    def size(self) -> int:
        """Return n."""
        return int(self.values.shape[0])

    def subset(self, rows: Array, cols: Array) -> "CostMatrix":
        """Return the cost matrix of resampled ensembles (rows from a, cols from b)."""
        return CostMatrix(
            values=self.values[np.ix_(rows, cols)],
            metric=self.metric,
            within_source=None
            if self.within_source is None
            else self.within_source[np.ix_(rows, rows)],
            within_target=None
            if self.within_target is None
            else self.within_target[np.ix_(cols, cols)],
        )


@dataclasses.dataclass(frozen=True)
class SinkhornResult:
    """Entropic estimate of W2: the plan's transport cost, and the debiased divergence."""

    estimate: float
    converged: bool
    residual: float
    iterations: int
    epsilon: float
    debiased: float | None = None


@dataclasses.dataclass(frozen=True, eq=False)
class _CostTask:
    rows: Array
    target: Array
    grid: paths.Grid
    metric: paths.PathMetric
    lam: float


def _cost_rows(task: _CostTask) -> Array:
    block = np.empty((task.rows.shape[0], task.target.shape[0]))
    for i, row in enumerate(task.rows):
        block[i] = (
            paths.path_distance_of_difference(row - task.target, task.grid, task.metric, task.lam)
            ** 2
        )
    return block


def _pairwise(
    a: Array, b: Array, grid: paths.Grid, metric: paths.PathMetric, lam: float, threads: int
) -> Array:
    tasks = [
        _CostTask(a[start : start + _ROWS_PER_TASK], b, grid, metric, lam)
        for start in range(0, a.shape[0], _ROWS_PER_TASK)
    ]
    return np.concatenate(workers.parallel_map(_cost_rows, tasks, threads))


def cost_matrix(  # noqa: PLR0913
    a: paths.PathEnsemble,
    b: paths.PathEnsemble,
    metric: paths.PathMetric,
    lam: float = 0.0,
    *,
    within: bool = False,
    threads: int = 1,
) -> CostMatrix:
    """Return the squared-distance matrix between two equal-size ensembles on one grid."""
    if a.grid != b.grid or a.dim != b.dim:
        msg = "Ensembles are not on the same grid"
        raise errors.DomainError(msg)
    if len(a) != len(b):
        msg = f"Ensembles must have equal sizes (got {len(a)} and {len(b)})"
        raise errors.DomainError(msg)
    if lam < 0:
        msg = f"Discount rate must be nonnegative (got {lam})"
        raise errors.DomainError(msg)
    log.info("Cost matrix %dx%d (%s)", len(a), len(b), metric)
    values = _pairwise(a.values, b.values, a.grid, metric, lam, threads)
    if not within:
        return CostMatrix(values=values, metric=metric)
    return CostMatrix(
        values=values,
        metric=metric,
        within_source=_pairwise(a.values, a.values, a.grid, metric, lam, threads),
        within_target=_pairwise(b.values, b.values, b.grid, metric, lam, threads),
    )


def exact_w2(c: CostMatrix, cap: int = DEFAULT_CAP) -> float:
    """Return the square root of the mean assigned cost of an optimal assignment."""
    if c.size > cap:
        msg = (
            f"Exact assignment is capped at n={cap} (got n={c.size}); "
            "use the sinkhorn solver for larger ensembles"
        )
        raise errors.SolverSizeError(msg)
    rows, cols = optimize.linear_sum_assignment(c.values)
    return math.sqrt(max(float(np.mean(c.values[rows, cols])), 0.0))


def _sinkhorn_potentials(
    cost: Array, epsilon: float, max_iter: int, tol: float
) -> tuple[Array, Array, float, int]:
    """Return log-domain potentials (f, g), the final marginal violation and iterations used."""
    n = cost.shape[0]
    log_weights = np.full(n, -math.log(n))
    f = np.zeros(n)
    g = np.zeros(n)
    residual = math.inf
    iteration = 0
    for iteration in range(1, max_iter + 1):
        g = -epsilon * special.logsumexp((f[:, None] - cost) / epsilon + log_weights[:, None], 0)
        f = -epsilon * special.logsumexp((g[None, :] - cost) / epsilon + log_weights[None, :], 1)
        if iteration % 10 == 0 or iteration == max_iter:
            # Rows match after the f update; the violation sits in the column marginal.
            plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon + 2 * log_weights[0])
            residual = float(np.abs(plan.sum(axis=0) - 1.0 / n).sum())
            if residual < tol:
                break
    return f, g, residual, iteration


def _entropic_value(cost: Array, epsilon: float, max_iter: int, tol: float) -> float:
    f, g, _, _ = _sinkhorn_potentials(cost, epsilon, max_iter, tol)
    return float(np.mean(f) + np.mean(g))


def sinkhorn_w2(
    c: CostMatrix,
    eps_relative: float = 0.01,
    max_iter: int = 10000,
    tol: float = 1e-6,
) -> SinkhornResult:
    """Return the entropic estimate of W2.

    epsilon is eps_relative times the median cost. estimate is the root of the transport cost of
    the entropic plan (it decreases toward the exact value as epsilon shrinks). When the cost
    matrix carries the within-ensemble matrices, debiased is the root of the Sinkhorn divergence
    OT(a, b) - (OT(a, a) + OT(b, b)) / 2 of the dual values.
    """
    if eps_relative <= 0:
        msg = f"Sinkhorn regularization must be positive (got {eps_relative})"
        raise errors.DomainError(msg)
    scale = float(np.median(c.values)) or float(np.mean(c.values))
    if scale == 0:
        return SinkhornResult(
            estimate=0.0, converged=True, residual=0.0, iterations=0, epsilon=0.0, debiased=0.0
        )
    epsilon = eps_relative * scale
    f, g, residual, iterations = _sinkhorn_potentials(c.values, epsilon, max_iter, tol)
    n = c.size
    plan = np.exp((f[:, None] + g[None, :] - c.values) / epsilon) / (n * n)
    estimate = math.sqrt(max(float(np.sum(plan * c.values)), 0.0))
    converged = residual < tol
    log.debug(
        "Sinkhorn: %d iterations, residual %.3g, epsilon %.3g", iterations, residual, epsilon
    )
    if not converged:
        msg = f"Sinkhorn did not converge in {max_iter} iterations (residual {residual:.3g})"
        log.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    debiased = None
    if c.within_source is not None and c.within_target is not None:
        cross = float(np.mean(f) + np.mean(g))
        source = _entropic_value(c.within_source, epsilon, max_iter, tol)
        target = _entropic_value(c.within_target, epsilon, max_iter, tol)
        debiased = math.sqrt(max(cross - 0.5 * (source + target), 0.0))
    return SinkhornResult(
        estimate=estimate,
        converged=converged,
        residual=residual,
        iterations=iterations,
        epsilon=epsilon,
        debiased=debiased,
    )


def solve_w2(
    c: CostMatrix,
    solver: Solver = "exact",
    *,
    cap: int = DEFAULT_CAP,
    eps_relative: float = 0.01,
    max_iter: int = 10000,
) -> float:
    """Return W2 from the chosen solver (the debiased value when Sinkhorn can provide one)."""
    if solver == "exact":
        return exact_w2(c, cap)
    result = sinkhorn_w2(c, eps_relative, max_iter)
    return result.debiased if result.debiased is not None else result.estimate


def coupling_upper_bound(
    result: girsanov.CouplingResult, metric: paths.PathMetric, lam: float = 0.0
) -> float:
    """Return sqrt(mean metric(X_i, Y_i)^2): the cost of the diagonal (synchronous) coupling."""
    return math.sqrt(float(np.mean(result.distances(metric, lam) ** 2)))


def bootstrap_w2(  # noqa: PLR0913
    c: CostMatrix,
    rng: np.random.Generator,
    n_resamples: int = 200,
    confidence: float = 0.95,
    solver: Solver = "exact",
    *,
    cap: int = DEFAULT_CAP,
    eps_relative: float = 0.01,
) -> tuple[float, float]:
    """Return a percentile bootstrap interval for W2.

    Each resample draws both ensembles with replacement and re-solves the sub-indexed cost matrix.
    """
    if n_resamples < 1 or not 0 < confidence < 1:
        msg = "Bootstrap needs at least one resample and a confidence level in (0, 1)"
        raise errors.DomainError(msg)
    log.info("Bootstrap: %d resamples (%s)", n_resamples, solver)
    n = c.size
    estimates = np.empty(n_resamples)
    for i in range(n_resamples):
        rows = rng.integers(0, n, n)
        cols = rng.integers(0, n, n)
        estimates[i] = solve_w2(
            c.subset(rows, cols), solver, cap=cap, eps_relative=eps_relative
        )
    tail = (1.0 - confidence) / 2.0
    low, high = np.quantile(estimates, [tail, 1.0 - tail])
    return float(low), float(high)

"""Coefficients of the neutral equation and sampling checkers for their regularity constants.

Coefficient evaluators are batched: they take segment arrays shaped (..., n_tau + 1, d) and return
(..., d) for the neutral term G and the drift b, and (..., d, m) for the diffusion sigma. They are
frozen dataclasses so they pickle cleanly into worker processes.

The checkers are falsifiers, not verifiers. They draw random segment pairs, evaluate the quadratic
forms of the contraction and dissipativity conditions, and return the tightest constants that fit
every sample. A declared constant that a sample contradicts is reported as failing.

Sign convention for lambda1: the dissipativity form is bounded by -lambda1 * |xi - eta|_inf^2, so a
positive lambda1 means the drift pulls solutions together.
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
from typing import Final, Literal, Protocol

import numpy as np
from scipy import optimize

from neutraltci import errors, records
from neutraltci.paths import Array

log = logging.getLogger(__name__)

WeightName = Literal["none", "uniform", "endpoint", "delayed"]
PairMode = Literal["mixed", "independent", "shift", "endpoint"]

_DEGENERATE: Final[float] = 1e-14


class SegmentMap(Protocol):
    """A batched coefficient evaluator."""

    def __call__(self, segments: Array) -> Array:
        """Evaluate the coefficient on segments shaped (..., n_tau + 1, d)."""


# Grid weights.
def trapezoid_weights(n_tau: int) -> Array:
    """Return trapezoid weights on the segment grid, normalized to sum to 1."""
    w = np.ones(n_tau + 1)
    w[0] = w[-1] = 0.5
    return w / n_tau


def named_weights(name: WeightName, n_tau: int) -> Array:
    """Return a named weight vector on the segment grid."""
    w = np.zeros(n_tau + 1)
    match name:
        case "none":
            pass
        case "uniform":
            w = trapezoid_weights(n_tau)
        case "endpoint":
            w[-1] = 1.0
        case "delayed":
            w[0] = 1.0
        case _:
            msg = f"Unknown weight name: {name}"
            raise errors.DomainError(msg)
    return w


# Evaluators.
@dataclasses.dataclass(frozen=True, eq=False)
class ZeroMap:
    """The zero coefficient; shape is (d,) for G and b or (d, m) for sigma."""

    shape: tuple[int, ...]

    def __call__(self, segments: Array) -> Array:
        """Return zeros."""
        return np.zeros(segments.shape[:-2] + self.shape)

    @property
    def depends_on_endpoint(self) -> bool:
        """Return False; the zero map ignores its argument."""
        return False


@dataclasses.dataclass(frozen=True, eq=False)
class LinearFunctional:
    """xi -> sum_j weights[j] * xi(theta_j); point masses on the grid, one weight per node."""

    weights: Array
    _support: Array = dataclasses.field(init=False, repr=False)

    def __post_init__(self) -> None:
        """Record the support of the weights."""
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "_support", np.flatnonzero(weights))

    def __call__(self, segments: Array) -> Array:
        """Evaluate the functional."""
        return _weighted_sum(segments, self.weights, self._support)

    @property
    def depends_on_endpoint(self) -> bool:
        """Return True if the value at theta = 0 carries weight."""
        return bool(self.weights[-1] != 0)


@dataclasses.dataclass(frozen=True, eq=False)
class LinearDiffusion:
    """Diffusion built from a linear functional of the segment.

    With noise_dim equal to d the functional's value v gives diag(v); with noise_dim 1 it gives the
    column v. When cap is set the matrix is radially clipped to operator norm at most cap.
    """

    weights: Array
    noise_dim: int
    cap: float | None = None
    _support: Array = dataclasses.field(init=False, repr=False)

    def __post_init__(self) -> None:
        """Record the support of the weights."""
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "_support", np.flatnonzero(weights))

    def __call__(self, segments: Array) -> Array:
        """Evaluate the diffusion matrix."""
        v = _weighted_sum(segments, self.weights, self._support)
        dim = v.shape[-1]
        if self.noise_dim == dim:
            sigma = v[..., :, None] * np.eye(dim)
        elif self.noise_dim == 1:
            sigma = v[..., :, None]
        else:
            msg = f"Linear diffusion needs noise_dim equal to d ({dim}) or 1, got {self.noise_dim}"
            raise errors.DomainError(msg)
        if self.cap is None:
            return sigma
        norm = np.linalg.norm(sigma, ord=2, axis=(-2, -1))
        scale = np.minimum(1.0, self.cap / np.maximum(norm, np.finfo(float).tiny))
        return sigma * scale[..., None, None]


@dataclasses.dataclass(frozen=True, eq=False)
class ConstantDiffusion:
    """A constant d x m diffusion matrix."""

    matrix: Array

    def __call__(self, segments: Array) -> Array:
        """Return the matrix broadcast over the batch."""
        return np.broadcast_to(self.matrix, segments.shape[:-2] + self.matrix.shape).copy()


@dataclasses.dataclass(frozen=True, kw_only=True, eq=False)
class DeclaredConstants:
    """Regularity constants a coefficient set claims to satisfy; None means undeclared."""

    kappa: float | None = None
    lambda1: float | None = None
    lambda2: float | None = None
    lambda3: float | None = None
    k: float | None = None
    k1: float | None = None
    k2: float | None = None
    delay_weights: Array | None = None

    def __post_init__(self) -> None:
        """Validate the declared values."""
        for name in ("kappa", "k"):
            value = getattr(self, name)
            if value is not None and not 0 <= value < 1:
                msg = f"{name} must lie in [0, 1) (got {value})"
                raise errors.DomainError(msg)
        for name in ("lambda2", "k2"):
            value = getattr(self, name)
            if value is not None and value < 0:
                msg = f"{name} must be nonnegative (got {value})"
                raise errors.DomainError(msg)
        if self.lambda3 is not None and self.lambda3 <= 0:
            msg = f"lambda3 must be positive (got {self.lambda3})"
            raise errors.DomainError(msg)
        if self.delay_weights is not None:
            w = np.asarray(self.delay_weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:  # noqa: PLR2004
                msg = "delay_weights must be nonnegative and sum to 1"
                raise errors.DomainError(msg)
            object.__setattr__(self, "delay_weights", w)


@dataclasses.dataclass(frozen=True, eq=False)
class CoefficientSet:
    """G, b and sigma, plus an optional diagonal stiff drift A = diag(stiff)."""

    neutral: SegmentMap
    drift: SegmentMap
    diffusion: SegmentMap
    dim: int
    noise_dim: int
    stiff: Array | None = None
    constants: DeclaredConstants = dataclasses.field(default_factory=DeclaredConstants)

    def __post_init__(self) -> None:
        """Validate the stiff diagonal."""
        if self.stiff is not None:
            stiff = np.asarray(self.stiff, dtype=float)
            if stiff.shape != (self.dim,) or np.any(stiff >= 0):
                msg = f"stiff must hold {self.dim} strictly negative diagonal entries"
                raise errors.DomainError(msg)
            object.__setattr__(self, "stiff", stiff)

    @property
    def neutral_depends_on_endpoint(self) -> bool:
        """Return True unless G is known to ignore the value at theta = 0."""
        return bool(getattr(self.neutral, "depends_on_endpoint", True))

    @property
    def spectral_bound(self) -> float:
        """Return lambda0, the smallest |a| on the stiff diagonal (0 without A)."""
        return 0.0 if self.stiff is None else float(np.min(-self.stiff))

    def full_drift(self, segments: Array) -> Array:
        """Return A xi(0) + b(xi)."""
        b = self.drift(segments)
        if self.stiff is None:
            return b
        return b + self.stiff * segments[..., -1, :]

    def check_stability(self, dt: float) -> None:
        """Reject steps where explicit Euler on the stiff term is unstable (a * dt >= 1)."""
        if self.stiff is not None and float(np.max(-self.stiff)) * dt >= 1:
            msg = f"Stiff drift is unstable at dt={dt}: need a * dt < 1 for every diagonal entry"
            raise errors.DomainError(msg)


@dataclasses.dataclass(frozen=True, kw_only=True, eq=False)
class LinearExample:
    """G(xi) = (k/tau) int xi, b(xi) = c1 xi(0) + int xi dL1, sigma(xi) = c3 xi(0) + int xi dL2."""

    k: float
    c1: float
    lambda1: Array
    c3: float
    lambda2: Array
    sigma_cap: float | None = None

    def __post_init__(self) -> None:
        """Validate the example."""
        if not 0 < self.k < 1:
            msg = f"k must lie in (0, 1) (got {self.k})"
            raise errors.DomainError(msg)
        for name in ("lambda1", "lambda2"):
            w = np.asarray(getattr(self, name), dtype=float)
            if w.ndim != 1 or np.any(w < 0):
                msg = f"{name} must be a nonnegative weight vector on the segment grid"
                raise errors.DomainError(msg)
            object.__setattr__(self, name, w)
        if self.lambda1.shape != self.lambda2.shape:
            msg = "lambda1 and lambda2 must be on the same segment grid"
            raise errors.DomainError(msg)
        if self.sigma_cap is not None and self.sigma_cap <= 0:
            msg = f"sigma_cap must be positive (got {self.sigma_cap})"
            raise errors.DomainError(msg)

    @property
    def n_tau(self) -> int:
        """Return the number of steps in the segment grid."""
        return int(self.lambda1.shape[0]) - 1


def _endpoint(n_tau: int, scale: float) -> Array:
    w = np.zeros(n_tau + 1)
    w[-1] = scale
    return w


def linear_coefficients(
    ex: LinearExample,
    *,
    dim: int = 1,
    noise_dim: int | None = None,
    stiff: Array | None = None,
    delay_weights: Array | None = None,
) -> CoefficientSet:
    """Return the coefficient set of the linear example.

    The neutral term is Lipschitz with constant k for both the uniform and the averaged metric, so
    kappa = k is declared. With a sigma cap, lambda3 = cap^2 is declared.
    """
    n_tau = ex.n_tau
    return CoefficientSet(
        neutral=LinearFunctional(ex.k * trapezoid_weights(n_tau)),
        drift=LinearFunctional(_endpoint(n_tau, ex.c1) + ex.lambda1),
        diffusion=LinearDiffusion(
            _endpoint(n_tau, ex.c3) + ex.lambda2,
            noise_dim=dim if noise_dim is None else noise_dim,
            cap=ex.sigma_cap,
        ),
        dim=dim,
        noise_dim=dim if noise_dim is None else noise_dim,
        stiff=stiff,
        constants=DeclaredConstants(
            kappa=ex.k,
            k=ex.k,
            lambda3=None if ex.sigma_cap is None else ex.sigma_cap**2,
            delay_weights=delay_weights,
        ),
    )


def zero_coefficients(*, dim: int, noise_dim: int) -> CoefficientSet:
    """Return G = b = sigma = 0."""
    return CoefficientSet(
        neutral=ZeroMap((dim,)),
        drift=ZeroMap((dim,)),
        diffusion=ZeroMap((dim, noise_dim)),
        dim=dim,
        noise_dim=noise_dim,
    )


def brownian_coefficients(*, dim: int, scale: float = 1.0) -> CoefficientSet:
    """Return G = b = 0 and sigma = scale * I; the solution is a scaled Brownian motion."""
    return CoefficientSet(
        neutral=ZeroMap((dim,)),
        drift=ZeroMap((dim,)),
        diffusion=ConstantDiffusion(scale * np.eye(dim)),
        dim=dim,
        noise_dim=dim,
        constants=DeclaredConstants(kappa=0.0, lambda2=0.0, lambda3=scale**2, k=0.0),
    )


def delay_linear_coefficients(
    *,
    n_tau: int,
    decay: float = 1.0,
    delayed: float = 0.5,
    noise: float = 1.0,
    additive: bool = False,
) -> CoefficientSet:
    """Return the scalar delay equation.

    dX = (-decay X(t) + delayed X(t - tau)) dt + noise X(t) dW, or + noise dW when additive.
    """
    drift = _endpoint(n_tau, -decay)
    drift[0] += delayed
    diffusion: SegmentMap = (
        ConstantDiffusion(np.array([[noise]]))
        if additive
        else LinearDiffusion(_endpoint(n_tau, noise), noise_dim=1)
    )
    return CoefficientSet(
        neutral=ZeroMap((1,)),
        drift=LinearFunctional(drift),
        diffusion=diffusion,
        dim=1,
        noise_dim=1,
    )


# Sampling.
@dataclasses.dataclass(frozen=True)
class SegmentSampler:
    """Random segments: a Gaussian endpoint plus a Brownian walk run backwards from theta = 0.

    Pairs come in three flavours: independent segments, constant shifts (eta = xi + c) and
    endpoint perturbations (eta differs from xi only at theta = 0). "mixed" cycles through all
    three so that every regime of the conditions is exercised.
    """

    n_tau: int
    dim: int
    scale: float = 1.0
    mode: PairMode = "mixed"

    def segments(self, n: int, rng: np.random.Generator) -> Array:
        """Return n random segments shaped (n, n_tau + 1, d)."""
        endpoint = self.scale * rng.standard_normal((n, 1, self.dim))
        increments = self.scale * np.sqrt(1.0 / self.n_tau) * rng.standard_normal(
            (n, self.n_tau, self.dim)
        )
        walk = np.cumsum(increments[:, ::-1], axis=1)[:, ::-1]
        values = np.repeat(endpoint, self.n_tau + 1, axis=1)
        values[:, : self.n_tau] += walk
        return values

    def pairs(self, n: int, rng: np.random.Generator) -> tuple[Array, Array]:
        """Return n random segment pairs."""
        xi = self.segments(n, rng)
        eta = xi.copy()
        modes = (
            np.arange(n) % 3
            if self.mode == "mixed"
            else np.full(n, ("independent", "shift", "endpoint").index(self.mode))
        )
        independent, shift, endpoint = (modes == 0), (modes == 1), (modes == 2)  # noqa: PLR2004
        eta[independent] = self.segments(int(independent.sum()), rng)
        eta[shift] += self.scale * rng.standard_normal((int(shift.sum()), 1, self.dim))
        eta[endpoint, -1] += self.scale * rng.standard_normal((int(endpoint.sum()), self.dim))
        return xi, eta


# Checkers.
def estimate_neutral_lipschitz(
    coeffs: CoefficientSet,
    sampler: SegmentSampler,
    n: int,
    rng: np.random.Generator,
    metric: Literal["uniform", "l2"] = "uniform",
) -> records.LipschitzEstimate:
    """Return the largest sampled ratio |G(xi) - G(eta)| / distance(xi, eta).

    The estimate is a lower bound on the true Lipschitz constant. It is flagged when it reaches 1.
    """
    _check_sample_count(n)
    xi, eta = sampler.pairs(n, rng)
    diff = xi - eta
    if metric == "uniform":
        denominator = np.linalg.norm(diff, axis=-1).max(axis=-1)
    else:
        squares = np.sum(diff * diff, axis=-1) @ trapezoid_weights(sampler.n_tau)
        denominator = np.sqrt(squares)
    numerator = np.linalg.norm(coeffs.neutral(xi) - coeffs.neutral(eta), axis=-1)
    usable = denominator > _DEGENERATE * sampler.scale
    if not np.any(usable):
        msg = "Every sampled pair was degenerate; cannot estimate the neutral Lipschitz constant"
        raise errors.EstimationError(msg)
    kappa = float(np.max(numerator[usable] / denominator[usable]))
    declared = coeffs.constants.k if metric == "l2" else coeffs.constants.kappa
    log.info("Estimated neutral Lipschitz constant (%s): %.6g", metric, kappa)
    return records.LipschitzEstimate(
        metric=metric,
        kappa=kappa,
        declared=declared,
        passed=kappa < 1 and (declared is None or declared >= kappa - _slack(declared)),
        samples=int(usable.sum()),
    )


def dissipativity_form(coeffs: CoefficientSet, xi: Array, eta: Array) -> tuple[Array, Array]:
    """Return the quadratic form and ||sigma(xi) - sigma(eta)||_HS^2 for each pair.

    The form is 2 <xi(0) - eta(0) - G(xi) + G(eta), Ab + b(xi) - b(eta)> + ||dsigma||_HS^2, where
    Ab is the stiff term A (xi(0) - eta(0)) when A is present.
    """
    m = xi[..., -1, :] - eta[..., -1, :] - coeffs.neutral(xi) + coeffs.neutral(eta)
    db = coeffs.full_drift(xi) - coeffs.full_drift(eta)
    dsigma = coeffs.diffusion(xi) - coeffs.diffusion(eta)
    hs = np.sum(dsigma * dsigma, axis=(-2, -1))
    return 2.0 * np.sum(m * db, axis=-1) + hs, hs


def estimate_dissipativity(
    coeffs: CoefficientSet,
    sampler: SegmentSampler,
    n: int,
    rng: np.random.Generator,
    mode: Literal["uniform", "weighted"] = "uniform",
) -> records.DissipativityEstimate:
    """Return the tightest dissipativity constants fitting every sampled pair.

    mode "uniform": lambda1 = -max(form / |d|_inf^2) and lambda2 = max(||dsigma||^2 / |d|_inf^2).
    mode "weighted": fit form ~ -k1 |d(0)|^2 + k2 int |d|^2 dL by bounded least squares, then
    shift (k1, k2) by the worst violation so that every sample satisfies the fit.
    """
    _check_sample_count(n)
    xi, eta = sampler.pairs(n, rng)
    form, hs = dissipativity_form(coeffs, xi, eta)
    diff = xi - eta
    squares = np.sum(diff * diff, axis=-1)
    declared = coeffs.constants
    if mode == "uniform":
        sup2 = squares.max(axis=-1)
        usable = sup2 > (_DEGENERATE * sampler.scale) ** 2
        _require_usable(usable)
        lambda1 = float(-np.max(form[usable] / sup2[usable]))
        lambda2 = float(np.max(hs[usable] / sup2[usable]))
        passed = (declared.lambda1 is None or declared.lambda1 <= lambda1 + _slack(lambda1)) and (
            declared.lambda2 is None or declared.lambda2 >= lambda2 - _slack(lambda2)
        )
        log.info("Estimated dissipativity: lambda1=%.6g lambda2=%.6g", lambda1, lambda2)
        return records.DissipativityEstimate(
            mode=mode, first=lambda1, second=lambda2, passed=passed, samples=int(usable.sum())
        )

    if declared.delay_weights is None:
        msg = "Weighted dissipativity needs a delay measure (delay_weights)"
        raise errors.DomainError(msg)
    u = squares[:, -1]
    v = squares @ declared.delay_weights
    usable = (u + v) > (_DEGENERATE * sampler.scale) ** 2
    _require_usable(usable)
    u, v, form = u[usable], v[usable], form[usable]
    fit = optimize.lsq_linear(
        np.column_stack((-u, v)), form, bounds=([-np.inf, 0.0], [np.inf, np.inf])
    )
    k1, k2 = (float(x) for x in fit.x)
    shift = max(0.0, float(np.max((form - (-k1 * u + k2 * v)) / (u + v))))
    k1, k2 = k1 - shift, k2 + shift
    passed = (declared.k1 is None or declared.k1 <= k1 + _slack(k1)) and (
        declared.k2 is None or declared.k2 >= k2 - _slack(k2)
    )
    log.info("Estimated weighted dissipativity: k1=%.6g k2=%.6g (shift %.3g)", k1, k2, shift)
    return records.DissipativityEstimate(
        mode=mode, first=k1, second=k2, passed=passed, samples=int(usable.sum())
    )


def check_bounded_diffusion(
    coeffs: CoefficientSet, sampler: SegmentSampler, n: int, rng: np.random.Generator
) -> records.DiffusionBoundEstimate:
    """Return the largest sampled operator norm of sigma.

    The declared lambda3 bounds the squared operator norm, so it passes iff lambda3 >= norm^2.
    For sigma = 0.7 I the reported norm is 0.7 and the reported lambda3 is 0.49.
    """
    _check_sample_count(n)
    sigma = coeffs.diffusion(sampler.segments(n, rng))
    norm = float(np.max(np.linalg.norm(sigma, ord=2, axis=(-2, -1))))
    declared = coeffs.constants.lambda3
    log.info("Largest sampled diffusion norm: %.6g", norm)
    return records.DiffusionBoundEstimate(
        norm=norm,
        lambda3=norm**2,
        declared=declared,
        passed=declared is None or declared >= norm**2 - _slack(norm**2),
        samples=n,
    )


def _weighted_sum(segments: Array, weights: Array, support: Array) -> Array:
    # Only the nodes carrying weight are read; the rest of the segment may be unset.
    return np.einsum("...jd,j->...d", segments[..., support, :], weights[support])


def _check_sample_count(n: int) -> None:
    if n < 2:  # noqa: PLR2004
        msg = f"Need at least 2 samples (got {n})"
        raise errors.DomainError(msg)


def _require_usable(usable: Array) -> None:
    if not np.any(usable):
        msg = "Every sampled pair was degenerate; cannot estimate dissipativity constants"
        raise errors.EstimationError(msg)


def _slack(value: float) -> float:
    return 1e-9 * max(1.0, abs(value))

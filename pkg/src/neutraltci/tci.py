"""Transportation cost inequalities: closed-form constants and empirical verification.

Two families of inequalities bound the Wasserstein distance between a tilted law F Pi and the
reference law Pi by the relative entropy of F plus a term for the initial law:

    uniform metric:  W2(F Pi, Pi) <= sqrt(alpha(T)) sqrt(Ent) + sqrt(beta(T)) W2(mu, mu_F)
    L2 metric:       W2(F Pi, Pi) <= entropy_coeff sqrt(Ent) + initial_coeff W2(mu, mu_F)

The stiff variants use the same constants with the drift A xi(0) + b(xi) in the dissipativity
conditions.

Conventions: lambda1 is positive in the dissipative direction (the quadratic form is bounded by
-lambda1 |xi - eta|^2), and lambda3 bounds the squared operator norm of sigma.
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
from typing import Final, Literal, get_args

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from neutraltci import errors, girsanov, model, ot, paths, records, simulate
from neutraltci.paths import Array

log = logging.getLogger(__name__)

AlphaVariant = Literal["derived", "stated"]
Inequality = Literal["uniform", "l2-dissipative", "l2-weighted", "stiff-uniform", "stiff-l2"]
L2Case = Literal["dissipative", "weighted"]
INEQUALITIES: Final[tuple[str, ...]] = get_args(Inequality)

SUMMABILITY_TERMS: Final[int] = 50
_EXPONENT_RATE: Final[dict[str, float]] = {"derived": 16.0, "stated": 4.0}
_PAIRS_PER_BLOCK: Final[int] = 1024


def _positive_part(x: float) -> float:
    return max(x, 0.0)


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _check_uniform_domain(T: float, kappa: float, lambda2: float) -> None:
    if not (T > 0 and math.isfinite(T)):
        msg = f"T must be positive and finite (got {T})"
        raise errors.DomainError(msg)
    if not 0 <= kappa < 1:
        msg = f"kappa must lie in [0, 1) (got {kappa}): neutral Lipschitz condition fails"
        raise errors.DomainError(msg)
    if lambda2 < 0:
        msg = f"lambda2 must be nonnegative (got {lambda2})"
        raise errors.DomainError(msg)


def _check_lambda3(lambda3: float) -> None:
    if not (lambda3 > 0 and math.isfinite(lambda3)):
        msg = (
            f"lambda3 must be positive and finite (got {lambda3}): "
            "bounded diffusion condition fails"
        )
        raise errors.DomainError(msg)


# Closed-form constants.
def log_alpha(  # noqa: PLR0913
    T: float,
    kappa: float,
    lambda1: float,
    lambda2: float,
    lambda3: float,
    variant: AlphaVariant = "derived",
) -> float:
    """Return log alpha(T); see alpha."""
    _check_uniform_domain(T, kappa, lambda2)
    _check_lambda3(lambda3)
    plus, minus = _positive_part(lambda1), _positive_part(-lambda1)
    gap = (1.0 - kappa) ** 2
    log_prefactor = math.log(2.0 * lambda3) + 2.0 * math.log1p(kappa) - math.log(gap)
    rate = _EXPONENT_RATE[variant]
    branch = (
        math.log(4.0 * T)
        + 1.0
        + (2.0 * minus + rate * lambda2) * T / gap
        - math.log(2.0 * T * plus + gap)
    )
    if plus > 0:
        root = 4.0 * math.sqrt(lambda2) + math.sqrt(16.0 * lambda2 + plus)
        branch = min(branch, 2.0 * math.log(root) - 2.0 * math.log(plus))
    return log_prefactor + branch


def alpha(  # noqa: PLR0913
    T: float,
    kappa: float,
    lambda1: float,
    lambda2: float,
    lambda3: float,
    variant: AlphaVariant = "derived",
) -> float:
    """Return the entropy constant of the uniform inequality on [0, T].

    alpha(T) = [2 lambda3 (1 + kappa)^2 / (1 - kappa)^2] * min(
        (4 sqrt(lambda2) + sqrt(16 lambda2 + lambda1+))^2 / lambda1+^2,
        4 T exp[1 + (2 lambda1- + E lambda2) T / (1 - kappa)^2] / (2 T lambda1+ + (1 - kappa)^2))

    with E = 16 for the "derived" variant and E = 4 for the "stated" one. The first branch is
    infinite when lambda1+ = 0.
    """
    return _exp(log_alpha(T, kappa, lambda1, lambda2, lambda3, variant))


def log_beta_excess(T: float, kappa: float, lambda1: float, lambda2: float) -> float:
    """Return log(beta(T) - 1); see beta."""
    _check_uniform_domain(T, kappa, lambda2)
    plus, minus = _positive_part(lambda1), _positive_part(-lambda1)
    gap = (1.0 - kappa) ** 2
    branch = math.log(2.0) + (2.0 * minus + 16.0 * lambda2) * T / gap
    if plus > 0:
        root = 2.0 * math.sqrt(lambda2) + math.sqrt(4.0 * lambda2 + plus)
        branch = min(branch, 2.0 * math.log(root) - math.log(plus))
    return 2.0 * math.log1p(kappa) - math.log(gap) + branch


def beta(T: float, kappa: float, lambda1: float, lambda2: float) -> float:
    """Return the initial-law constant of the uniform inequality on [0, T].

    beta(T) = 1 + [(1 + kappa)^2 / (1 - kappa)^2] * min(
        (2 sqrt(lambda2) + sqrt(4 lambda2 + lambda1+))^2 / lambda1+,
        2 exp[(2 lambda1- + 16 lambda2) T / (1 - kappa)^2])
    """
    return 1.0 + _exp(log_beta_excess(T, kappa, lambda1, lambda2))


def _check_l2_domain(lam: float, k: float, k1: float, k2: float) -> None:
    if not 0 <= k < 1:
        msg = f"k must lie in [0, 1) (got {k}): L2 neutral Lipschitz condition fails"
        raise errors.DomainError(msg)
    if k2 < 0:
        msg = f"k2 must be nonnegative (got {k2})"
        raise errors.DomainError(msg)
    if lam < 0 or not math.isfinite(lam):
        msg = f"lambda must be nonnegative and finite (got {lam})"
        raise errors.DomainError(msg)
    if lam == 0 and k1 <= k2:
        msg = f"lambda = 0 needs k1 > k2 (got k1={k1}, k2={k2})"
        raise errors.DomainError(msg)
    if lam > 0 and lam <= (k2 - k1) / (1.0 - k) ** 2:
        threshold = (k2 - k1) / (1.0 - k) ** 2
        msg = f"lambda must exceed (k2 - k1) / (1 - k)^2 = {threshold:g} (got {lam})"
        raise errors.DomainError(msg)


def _l2_denominator(lam: float, k: float, k1: float, k2: float) -> float:
    return k1 - k2 + lam * (1.0 - k) ** 2


def c_lambda(lam: float, k: float, k1: float, k2: float, lambda3: float) -> float:
    """Return C(lambda) = lambda3 {1 + (1 + k)^2}^2 / {k1 - k2 + lambda (1 - k)^2}^2.

    The squared L2 distance between the tilted law and the law started from mu_F is at most
    2 C(lambda) times the entropy.
    """
    _check_l2_domain(lam, k, k1, k2)
    _check_lambda3(lambda3)
    return lambda3 * (1.0 + (1.0 + k) ** 2) ** 2 / _l2_denominator(lam, k, k1, k2) ** 2


def l2_coefficients(  # noqa: PLR0913
    case: L2Case, lam: float, k: float, k1: float, k2: float, lambda3: float, tau: float
) -> tuple[float, float]:
    """Return (entropy_coeff, initial_coeff) of the L2 inequality.

    "dissipative" is the undiscounted metric (lambda = 0, k1 > k2); "weighted" is the discounted
    metric with lambda > (k2 - k1) / (1 - k)^2.
    """
    if case == "dissipative" and lam != 0:
        msg = f"The dissipative case uses lambda = 0 (got {lam}); use the weighted case"
        raise errors.DomainError(msg)
    if case == "weighted" and lam == 0:
        msg = "The weighted case needs lambda > 0; use the dissipative case for lambda = 0"
        raise errors.DomainError(msg)
    if tau <= 0:
        msg = f"delay tau must be positive (got {tau})"
        raise errors.DomainError(msg)
    entropy_coeff = math.sqrt(2.0 * c_lambda(lam, k, k1, k2, lambda3))
    denominator = _l2_denominator(lam, k, k1, k2)
    numerator = lam * k * (1.0 - k) * tau + k2 * tau + 1.0 + k
    return entropy_coeff, math.sqrt(tau + numerator / denominator)


def combined_coefficient(alpha_value: float, beta_value: float, c_mu: float) -> float:
    """Return (sqrt(alpha) + sqrt(c_mu beta))^2.

    This is the single constant of the uniform inequality when mu itself satisfies a transport
    inequality with constant c_mu (0 for a point mass).
    """
    if c_mu < 0 or alpha_value < 0 or beta_value < 0:
        msg = "alpha, beta and c_mu must be nonnegative"
        raise errors.DomainError(msg)
    return (math.sqrt(alpha_value) + math.sqrt(c_mu * beta_value)) ** 2


def infinite_horizon_coefficients(
    kappa: float, lambda1: float, lambda2: float, lambda3: float
) -> tuple[float, float]:
    """Return the T-free (entropy_coeff, initial_coeff) of the uniform inequality on [0, inf)."""
    if lambda1 <= 0:
        msg = f"The whole half-line needs lambda1 > 0 (got {lambda1})"
        raise errors.DomainError(msg)
    _check_uniform_domain(1.0, kappa, lambda2)
    _check_lambda3(lambda3)
    ratio = (1.0 + kappa) / (1.0 - kappa)
    entropy_coeff = (
        math.sqrt(2.0 * lambda3)
        * ratio
        * (4.0 * math.sqrt(lambda2) + math.sqrt(16.0 * lambda2 + lambda1))
        / lambda1
    )
    initial_coeff = 1.0 + ratio * (
        2.0 * math.sqrt(lambda2) + math.sqrt(4.0 * lambda2 + lambda1)
    ) / math.sqrt(lambda1)
    return entropy_coeff, initial_coeff


def weighted_summability(  # noqa: PLR0913
    lam: float,
    kappa: float,
    lambda1: float,
    lambda2: float,
    lambda3: float = 1.0,
    variant: AlphaVariant = "derived",
    terms: int = SUMMABILITY_TERMS,
) -> records.Summability:
    """Return whether sum_n exp(-2 lambda n) (alpha(n) + beta(n)) is known to converge.

    The sufficient condition is lambda > (lambda1- + 8 lambda2) / (1 - kappa)^2. The partial sums
    for n = 1..terms come along as numerical evidence (they are evaluated in log space).
    """
    if lam <= 0:
        msg = f"Discount rate lambda must be positive (got {lam})"
        raise errors.DomainError(msg)
    _check_uniform_domain(1.0, kappa, lambda2)
    threshold = (_positive_part(-lambda1) + 8.0 * lambda2) / (1.0 - kappa) ** 2
    partial_sums: list[float] = []
    total = 0.0
    for n in range(1, terms + 1):
        decay = -2.0 * lam * n
        total += (
            _exp(decay + log_alpha(n, kappa, lambda1, lambda2, lambda3, variant))
            + _exp(decay)
            + _exp(decay + log_beta_excess(n, kappa, lambda1, lambda2))
        )
        partial_sums.append(total)
    return records.Summability(
        lam=lam, threshold=threshold, satisfied=lam > threshold, partial_sums=partial_sums
    )


def constants_row(  # noqa: PLR0913
    *,
    T: float | None = None,
    kappa: float | None = None,
    lambda1: float | None = None,
    lambda2: float | None = None,
    lambda3: float | None = None,
    lam: float | None = None,
    k: float | None = None,
    k1: float | None = None,
    k2: float | None = None,
    tau: float | None = None,
    c_mu: float = 0.0,
    variant: AlphaVariant = "derived",
) -> records.ConstantsRow:
    """Return every constant computable from the given parameters; domain errors go in the row."""
    row = records.ConstantsRow(
        T=T, kappa=kappa, lambda1=lambda1, lambda2=lambda2, lambda3=lambda3,
        lam=lam, k=k, k1=k1, k2=k2, tau=tau,
    )  # fmt: skip
    try:
        uniform = kappa is not None and lambda1 is not None and lambda2 is not None
        if uniform and T is not None and lambda3 is not None:
            row.alpha = alpha(T, kappa, lambda1, lambda2, lambda3, variant)
            row.beta = beta(T, kappa, lambda1, lambda2)
            row.combined = combined_coefficient(row.alpha, row.beta, c_mu)
        if uniform and lam is not None and lam > 0:
            row.summable = weighted_summability(
                lam, kappa, lambda1, lambda2, lambda3 or 1.0, variant
            ).satisfied
        if lam is not None and k is not None and k1 is not None and k2 is not None and lambda3:
            row.c_lambda = c_lambda(lam, k, k1, k2, lambda3)
            if tau is not None:
                case: L2Case = "dissipative" if lam == 0 else "weighted"
                row.entropy_coeff, row.initial_coeff = l2_coefficients(
                    case, lam, k, k1, k2, lambda3, tau
                )
    except errors.DomainError as err:
        row.error = str(err)
    return row


# Deterministic integral inequalities.
def integral_inequality_suite(  # noqa: PLR0913
    neutral: model.SegmentMap,
    grid: paths.Grid,
    n_pairs: int,
    rng: np.random.Generator,
    *,
    k: float,
    lam: float = 0.0,
    weights: Array | None = None,
    dim: int = 1,
    tolerance: float = 1e-8,
) -> records.IntegralSuiteReport:
    """Check three integral inequalities for random path pairs on [-tau, T].

    With D = xi - eta, the discounted integrals I(f) = int_0^T exp(-lam s) f(s) ds and
    Mbar(s) = D(s) - G(xi_s) + G(eta_s):

        delay-shift:  I(int |D(s + theta)|^2 Lambda(dtheta)) <= tau rho2(D_0)^2 + I(|D|^2)
        neutral-upper: I(|Mbar|^2) <= (1 + k)^2 I(|D|^2) + (1 + k) k tau rho2(D_0)^2
        neutral-lower: I(|D|^2) <= I(|Mbar|^2) / (1 - k)^2 + k tau / (1 - k) rho2(D_0)^2

    G must satisfy |G(xi) - G(eta)| <= k rho2(xi, eta). All integrals are trapezoidal on the grid,
    for which the three inequalities hold exactly; a violation is a slack below -tolerance times
    the scale of the right-hand side.
    """
    if not 0 <= k < 1:
        msg = f"k must lie in [0, 1) (got {k})"
        raise errors.DomainError(msg)
    if n_pairs < 1:
        msg = f"n_pairs must be at least 1 (got {n_pairs})"
        raise errors.DomainError(msg)
    n_tau = grid.n_tau
    weights = model.trapezoid_weights(n_tau) if weights is None else np.asarray(weights, float)
    if weights.shape != (n_tau + 1,):
        msg = f"Delay weights must have {n_tau + 1} entries"
        raise errors.DomainError(msg)
    sampler = model.SegmentSampler(n_tau=grid.n_points - 1, dim=dim)
    names = ("delay-shift", "neutral-upper", "neutral-lower")
    worst = dict.fromkeys(names, math.inf)
    violations = dict.fromkeys(names, 0)
    discount = np.exp(-lam * grid.step_times)
    trapezoid = model.trapezoid_weights(grid.n_steps) * grid.horizon
    for start in range(0, n_pairs, _PAIRS_PER_BLOCK):
        xi, eta = sampler.pairs(min(_PAIRS_PER_BLOCK, n_pairs - start), rng)
        diff = xi - eta
        squares = np.sum(diff * diff, axis=-1)
        windows = sliding_window_view(squares, n_tau + 1, axis=-1)
        initial = grid.delay * paths.l2_squared_of_difference(
            diff[:, : n_tau + 1], grid.dt, grid.delay
        )
        endpoint = (discount * squares[:, n_tau:]) @ trapezoid
        shifted = (discount * (windows @ weights)) @ trapezoid
        m_bar = (
            diff[:, n_tau:]
            - neutral(np.moveaxis(sliding_window_view(xi, n_tau + 1, axis=1), -1, -2))
            + neutral(np.moveaxis(sliding_window_view(eta, n_tau + 1, axis=1), -1, -2))
        )
        neutral_part = (discount * np.sum(m_bar * m_bar, axis=-1)) @ trapezoid
        sides = {
            "delay-shift": (shifted, initial + endpoint),
            "neutral-upper": (neutral_part, (1 + k) ** 2 * endpoint + (1 + k) * k * initial),
            "neutral-lower": (endpoint, neutral_part / (1 - k) ** 2 + k / (1 - k) * initial),
        }
        for name, (lhs, rhs) in sides.items():
            slack = rhs - lhs
            worst[name] = min(worst[name], float(slack.min()))
            violations[name] += int(np.sum(slack < -tolerance * np.maximum(1.0, rhs)))
    report = records.IntegralSuiteReport(
        pairs=n_pairs,
        tolerance=tolerance,
        inequalities=[
            records.IntegralInequality(name=n, worst_slack=worst[n], violations=violations[n])
            for n in names
        ],
    )
    if report.violations:
        log.warning("Integral inequality suite: %d violations", report.violations)
    return report


# Verification.
@dataclasses.dataclass(frozen=True, kw_only=True)
class ResolvedConstants:
    """The constants an inequality is evaluated with (declared, else estimated)."""

    kappa: float | None = None
    lambda1: float | None = None
    lambda2: float | None = None
    lambda3: float | None = None
    k: float | None = None
    k1: float | None = None
    k2: float | None = None


def inequality_metric(inequality: Inequality) -> paths.PathMetric:
    """Return the path metric an inequality is stated in."""
    return "uniform" if inequality in {"uniform", "stiff-uniform"} else "l2-weighted"


def initial_metric(inequality: Inequality) -> paths.SegmentMetric:
    """Return the segment metric of the initial-law term."""
    match inequality:
        case "uniform" | "stiff-uniform":
            return "uniform"
        case "stiff-l2":
            return "l2"
    return "l2-tilde"


def _l2_case(inequality: Inequality, lam: float) -> L2Case:
    match inequality:
        case "l2-dissipative":
            return "dissipative"
        case "l2-weighted":
            return "weighted"
    return "dissipative" if lam == 0 else "weighted"


def coefficients(  # noqa: PLR0913
    inequality: Inequality,
    constants: ResolvedConstants,
    *,
    horizon: float,
    delay: float,
    lam: float = 0.0,
    variant: AlphaVariant = "derived",
) -> tuple[float, float]:
    """Return (entropy_coeff, initial_coeff) for an inequality."""
    kappa, lambda1, lambda2, lambda3 = (
        constants.kappa, constants.lambda1, constants.lambda2, constants.lambda3
    )  # fmt: skip
    k, k1, k2 = constants.k, constants.k1, constants.k2
    if inequality_metric(inequality) == "uniform":
        if kappa is None or lambda1 is None or lambda2 is None or lambda3 is None:
            msg = f"{inequality} needs kappa, lambda1, lambda2 and lambda3"
            raise errors.DomainError(msg)
        a = alpha(horizon, kappa, lambda1, lambda2, lambda3, variant)
        b = beta(horizon, kappa, lambda1, lambda2)
        return math.sqrt(a), math.sqrt(b)
    if k is None or k1 is None or k2 is None or lambda3 is None:
        msg = f"{inequality} needs k, k1, k2 and lambda3"
        raise errors.DomainError(msg)
    return l2_coefficients(_l2_case(inequality, lam), lam, k, k1, k2, lambda3, delay)


@dataclasses.dataclass(frozen=True, kw_only=True, eq=False)
class Experiment:
    """Everything one inequality verification needs."""

    inequality: Inequality
    coeffs: model.CoefficientSet
    law: simulate.InitialLaw
    cfg: simulate.SimConfig
    tilt: girsanov.GirsanovTilt
    sampler: model.SegmentSampler
    lam: float = 0.0
    variant: AlphaVariant = "derived"
    solver: ot.Solver = "exact"
    exact_cap: int = ot.DEFAULT_CAP
    eps_relative: float = 0.01
    bootstrap: int = 200
    confidence: float = 0.95
    checker_samples: int = 2000
    threads: int = 1

    def __post_init__(self) -> None:
        """Validate the experiment."""
        if self.inequality not in INEQUALITIES:
            msg = f"Unknown inequality {self.inequality!r}; choose from {', '.join(INEQUALITIES)}"
            raise errors.DomainError(msg)
        if self.inequality.startswith("stiff") and self.coeffs.stiff is None:
            msg = f"{self.inequality} needs a stiff linear drift"
            raise errors.DomainError(msg)
        if self.inequality == "l2-dissipative" and self.lam != 0:
            msg = f"l2-dissipative uses lambda = 0 (got {self.lam})"
            raise errors.DomainError(msg)
        if self.inequality == "l2-weighted" and self.lam <= 0:
            msg = f"l2-weighted needs lambda > 0 (got {self.lam})"
            raise errors.DomainError(msg)


def _fill(name: str, declared: float | None, estimate: float) -> float:
    if declared is not None:
        return declared
    msg = f"No {name} declared; using the sampled estimate {estimate:.6g}"
    log.warning(msg)
    warnings.warn(msg, RuntimeWarning, stacklevel=3)
    return estimate


def check_assumptions(experiment: Experiment) -> tuple[ResolvedConstants, dict[str, bool]]:
    """Run the assumption checkers; fail on falsified declarations, fill undeclared constants."""
    coeffs, sampler, n = experiment.coeffs, experiment.sampler, experiment.checker_samples
    rng = simulate.stream_generator(experiment.cfg.seed, simulate.Stream.CHECKS)
    uniform = inequality_metric(experiment.inequality) == "uniform"
    lipschitz = model.estimate_neutral_lipschitz(
        coeffs, sampler, n, rng, metric="uniform" if uniform else "l2"
    )
    dissipativity = model.estimate_dissipativity(
        coeffs, sampler, n, rng, mode="uniform" if uniform else "weighted"
    )
    diffusion = model.check_bounded_diffusion(coeffs, sampler, n, rng)
    checks = {
        "neutral-lipschitz": lipschitz.passed,
        "dissipativity": dissipativity.passed,
        "bounded-diffusion": diffusion.passed,
    }
    for condition, passed in checks.items():
        if not passed:
            msg = f"Assumption check failed: {condition} (samples falsify the declared constant)"
            raise errors.AssumptionError(msg, condition=condition)
    declared = coeffs.constants
    lambda3 = _fill("lambda3", declared.lambda3, diffusion.lambda3)
    if lambda3 <= 0:
        msg = "Assumption check failed: bounded-diffusion (sigma vanishes on every sample)"
        raise errors.AssumptionError(msg, condition="bounded-diffusion")
    if uniform:
        constants = ResolvedConstants(
            kappa=_fill("kappa", declared.kappa, lipschitz.kappa),
            lambda1=_fill("lambda1", declared.lambda1, dissipativity.first),
            lambda2=_fill("lambda2", declared.lambda2, dissipativity.second),
            lambda3=lambda3,
        )
    else:
        constants = ResolvedConstants(
            k=_fill("k", declared.k, lipschitz.kappa),
            k1=_fill("k1", declared.k1, dissipativity.first),
            k2=_fill("k2", declared.k2, dissipativity.second),
            lambda3=lambda3,
        )
    return constants, checks


def resample_initial(initial: Array, log_density: Array) -> Array:
    """Return initial segments resampled with weights proportional to exp(log_density).

    Systematic resampling with a fixed offset of one half keeps the result deterministic.
    """
    weights = np.exp(log_density - np.max(log_density))
    cumulative = np.cumsum(weights / weights.sum())
    n = len(weights)
    positions = (np.arange(n) + 0.5) / n
    indices = np.minimum(np.searchsorted(cumulative, positions), n - 1)
    return initial[indices]


def initial_w2(experiment: Experiment, reference: paths.PathEnsemble) -> float:
    """Return W2(mu, mu_F) under the inequality's segment metric (0 for a point mass)."""
    if experiment.law.is_dirac:
        return 0.0
    weighted, log_density = girsanov.reference_density(
        experiment.coeffs, experiment.law, experiment.cfg, experiment.tilt,
        threads=experiment.threads,
    )  # fmt: skip
    grid = experiment.cfg.grid
    source = reference.initial_values
    target = resample_initial(weighted.initial_values, log_density)
    metric = initial_metric(experiment.inequality)
    values = np.stack([
        paths.segment_distance_of_difference(row - target, grid.dt, grid.delay, metric) ** 2
        for row in source
    ])  # fmt: skip
    return ot.solve_w2(
        ot.CostMatrix(values=values, metric=metric),
        experiment.solver,
        cap=experiment.exact_cap,
        eps_relative=experiment.eps_relative,
    )


def synchronous_coupling_check(  # noqa: PLR0913
    coeffs: model.CoefficientSet,
    law: simulate.InitialLaw,
    cfg: simulate.SimConfig,
    constants: ResolvedConstants,
    *,
    inequality: Inequality,
    lam: float = 0.0,
    variant: AlphaVariant = "derived",
) -> records.SynchronousCouplingReport:
    """Drive solutions from two initial segments with the same noise and compare with the bound.

    uniform: E sup_t |X_t - Y_t|_inf^2 <= beta(T) E |xi - eta|_inf^2
    L2: E rho_{2,lam}(X, Y)^2 <= initial_coeff^2 E rho(xi, eta)^2 (rho the initial metric)
    """
    grid = cfg.grid
    n = cfg.n_paths
    first = np.empty((n, grid.n_tau + 1, coeffs.dim))
    second = np.empty_like(first)
    increments = np.empty((n, grid.n_steps, coeffs.noise_dim))
    for i in range(n):
        rng = simulate.generator(simulate.path_seed(cfg.seed, i, simulate.Stream.SYNCHRONOUS))
        first[i] = law.sample(rng)
        second[i] = law.sample(rng)
        increments[i] = math.sqrt(grid.dt) * rng.standard_normal((grid.n_steps, coeffs.noise_dim))
    max_iter = cfg.max_iterations(coeffs.constants.kappa)
    x, y = (
        simulate.integrate(coeffs, s, grid, increments, fp_tol=cfg.fp_tol, fp_max_iter=max_iter)
        for s in (first, second)
    )
    metric = inequality_metric(inequality)
    distances = paths.path_distance_of_difference(x.values - y.values, grid, metric, lam) ** 2
    start = paths.segment_distance_of_difference(
        first - second, grid.dt, grid.delay, initial_metric(inequality)
    )
    _, initial_coeff = coefficients(
        inequality, constants, horizon=grid.horizon, delay=grid.delay, lam=lam, variant=variant
    )
    lhs = float(np.mean(distances))
    lhs_se = float(np.std(distances, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    initial = float(np.mean(start**2))
    rhs = initial_coeff**2 * initial
    return records.SynchronousCouplingReport(
        metric=metric,
        lhs=lhs,
        lhs_se=lhs_se,
        initial=initial,
        coefficient=initial_coeff**2,
        rhs=rhs,
        passed=lhs - 3.0 * lhs_se <= rhs,
        n_pairs=n,
    )


def tail_bound(
    inequality: Inequality, lam: float, horizon: float, diameter: float
) -> float | None:
    """Return the truncation slack of a discounted L2 metric beyond the horizon.

    int_T^inf exp(-lam t) D^2 dt = exp(-lam T) D^2 / lam, with D an empirical diameter. None when
    the metric is not discounted.
    """
    if inequality_metric(inequality) == "uniform" or lam == 0:
        return None
    return math.exp(-lam * horizon) * diameter**2 / lam


def verify_inequality(experiment: Experiment) -> records.TCIReport:
    """Verify one inequality end to end.

    The left side is the empirical W2 between the tilted ensemble and an independent reference
    ensemble; the same-law floor is the W2 between two independent reference ensembles. The
    check passes when the upper confidence limit of the left side, less the floor, is within the
    right side.
    """
    exp = experiment
    cfg, grid = exp.cfg, exp.cfg.grid
    constants, checks = check_assumptions(exp)
    entropy_coeff, initial_coeff = coefficients(
        exp.inequality, constants, horizon=grid.horizon, delay=grid.delay, lam=exp.lam,
        variant=exp.variant,
    )  # fmt: skip
    log.info("Coefficients: entropy %.6g, initial %.6g", entropy_coeff, initial_coeff)

    coupled = girsanov.coupled_simulate(exp.coeffs, exp.law, cfg, exp.tilt, threads=exp.threads)
    entropy, entropy_se = girsanov.relative_entropy(coupled)
    reference = simulate.simulate_ensemble(
        exp.coeffs, exp.law, cfg, stream=simulate.Stream.REFERENCE, threads=exp.threads
    )
    floor_ensemble = simulate.simulate_ensemble(
        exp.coeffs, exp.law, cfg, stream=simulate.Stream.FLOOR, threads=exp.threads
    )

    metric = inequality_metric(exp.inequality)
    within = exp.solver == "sinkhorn"
    cost = ot.cost_matrix(
        coupled.x_paths, reference, metric, exp.lam, within=within, threads=exp.threads
    )
    lhs = ot.solve_w2(cost, exp.solver, cap=exp.exact_cap, eps_relative=exp.eps_relative)
    low, high = ot.bootstrap_w2(
        cost,
        simulate.stream_generator(cfg.seed, simulate.Stream.BOOTSTRAP),
        exp.bootstrap,
        exp.confidence,
        exp.solver,
        cap=exp.exact_cap,
        eps_relative=exp.eps_relative,
    )
    floor_cost = ot.cost_matrix(
        reference, floor_ensemble, metric, exp.lam, within=within, threads=exp.threads
    )
    floor = ot.solve_w2(floor_cost, exp.solver, cap=exp.exact_cap, eps_relative=exp.eps_relative)
    initial = initial_w2(exp, reference)
    if not exp.law.is_dirac:
        checks["synchronous"] = synchronous_coupling_check(
            exp.coeffs, exp.law, cfg, constants, inequality=exp.inequality, lam=exp.lam,
            variant=exp.variant,
        ).passed  # fmt: skip

    rhs = entropy_coeff * math.sqrt(entropy) + initial_coeff * initial
    margin = rhs - (high - floor)
    if rhs == 0:
        verdict = records.Verdict.FLOOR_LIMITED
    else:
        verdict = records.Verdict.PASS if margin >= 0 else records.Verdict.FAIL
    upper = ot.coupling_upper_bound(coupled, metric, exp.lam)
    coupled_w2 = None
    if cfg.n_paths <= exp.exact_cap:
        pair_cost = ot.cost_matrix(
            coupled.x_paths, coupled.y_paths, metric, exp.lam, threads=exp.threads
        )
        coupled_w2 = ot.exact_w2(pair_cost, exp.exact_cap)
    diameter = float(np.sqrt(np.max(coupled.distances(metric, exp.lam) ** 2, initial=0.0)))
    log.info(
        "%s: lhs=%.6g floor=%.6g rhs=%.6g (%s)", exp.inequality, lhs, floor, rhs, verdict.value
    )
    return records.TCIReport(
        inequality=exp.inequality,
        metric=metric,
        parameters=dataclasses.asdict(constants)
        | {"T": grid.horizon, "tau": grid.delay, "lam": exp.lam},
        n_paths=cfg.n_paths,
        bootstrap=exp.bootstrap,
        solver=exp.solver,
        lhs=lhs,
        lhs_ci_low=low,
        lhs_ci_high=high,
        floor=floor,
        entropy=entropy,
        entropy_se=entropy_se,
        initial_w2=initial,
        entropy_coeff=entropy_coeff,
        initial_coeff=initial_coeff,
        rhs=rhs,
        margin=margin,
        verdict=verdict,
        passed=verdict is not records.Verdict.FAIL,
        coupling_upper_bound=upper,
        coupled_w2=coupled_w2,
        tail_bound=tail_bound(exp.inequality, exp.lam, grid.horizon, diameter),
        checks=checks,
    )

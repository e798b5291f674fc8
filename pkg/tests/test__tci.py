"""Test the transport inequality constants and their empirical verification."""

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
import itertools
import math
from typing import Any

import numpy as np
import pytest

from neutraltci import errors, girsanov, model, paths, records, simulate, tci

N_TAU = 5
DT = 0.02


# An independent evaluator that reads the formulas directly, without log space.
def _direct_alpha(T: float, kappa: float, lambda1: float, lambda2: float, lambda3: float) -> float:
    plus, minus = max(lambda1, 0.0), max(-lambda1, 0.0)
    gap = (1 - kappa) ** 2
    first = math.inf
    if plus > 0:
        first = (4 * math.sqrt(lambda2) + math.sqrt(16 * lambda2 + plus)) ** 2 / plus**2
    second = 4 * T * math.exp(1 + (2 * minus + 16 * lambda2) * T / gap) / (2 * T * plus + gap)
    return 2 * lambda3 * (1 + kappa) ** 2 / gap * min(first, second)


def _direct_beta(T: float, kappa: float, lambda1: float, lambda2: float) -> float:
    plus, minus = max(lambda1, 0.0), max(-lambda1, 0.0)
    gap = (1 - kappa) ** 2
    first = math.inf
    if plus > 0:
        first = (2 * math.sqrt(lambda2) + math.sqrt(4 * lambda2 + plus)) ** 2 / plus
    second = 2 * math.exp((2 * minus + 16 * lambda2) * T / gap)
    return 1 + (1 + kappa) ** 2 / gap * min(first, second)


def _direct_c(lam: float, k: float, k1: float, k2: float, lambda3: float) -> float:
    return lambda3 * (1 + (1 + k) ** 2) ** 2 / (k1 - k2 + lam * (1 - k) ** 2) ** 2


def _experiment(
    tilt_value: float | None,
    *,
    n_paths: int = 50,
    law: simulate.InitialLaw | None = None,
    **kwargs: Any,  # noqa: ANN401
) -> tci.Experiment:
    """Return a verification of the scaled Brownian motion started at 0."""
    coeffs = model.brownian_coefficients(dim=1)
    coeffs = dataclasses.replace(
        coeffs,
        constants=dataclasses.replace(
            coeffs.constants, lambda1=0.0, delay_weights=model.trapezoid_weights(N_TAU)
        ),
    )
    tilt = (
        girsanov.GirsanovTilt.zero(1)
        if tilt_value is None
        else girsanov.GirsanovTilt(kind="constant", values=np.array([tilt_value]), h_bound=10.0)
    )
    return tci.Experiment(
        inequality=kwargs.pop("inequality", "uniform"),
        coeffs=coeffs,
        law=law or simulate.DiracLaw(np.zeros((N_TAU + 1, 1))),
        cfg=simulate.SimConfig(horizon=1.0, dt=DT, delay=0.1, n_paths=n_paths, seed=2),
        tilt=tilt,
        sampler=model.SegmentSampler(n_tau=N_TAU, dim=1),
        bootstrap=50,
        checker_samples=300,
        **kwargs,
    )


class TestAlphaBeta:
    """Test the constants of the uniform inequality."""

    def test__alpha_first_branch(self) -> None:
        """Test alpha(1; 0, 1, 0, 1) = 2: the first branch 1 beats 4e/3."""
        assert tci.alpha(1.0, 0.0, 1.0, 0.0, 1.0) == pytest.approx(2.0)

    def test__alpha_no_dissipation(self) -> None:
        """Test that lambda1 <= 0 leaves the finite second branch."""
        assert tci.alpha(1.0, 0.0, 0.0, 0.0, 1.0) == pytest.approx(8.0 * math.e)
        assert math.isfinite(tci.alpha(3.0, 0.2, -0.5, 0.1, 1.0))

    def test__alpha_small_horizon(self) -> None:
        """Test that alpha vanishes like 8 e T as T -> 0 without dissipation."""
        for T in (1e-3, 1e-5):
            assert tci.alpha(T, 0.0, 0.0, 0.0, 1.0) == pytest.approx(8.0 * math.e * T)

    def test__alpha_variants(self) -> None:
        """Test that the stated variant uses the smaller exponent rate."""
        derived = tci.alpha(1.0, 0.0, 0.0, 0.25, 1.0, "derived")
        stated = tci.alpha(1.0, 0.0, 0.0, 0.25, 1.0, "stated")
        assert derived / stated == pytest.approx(math.exp(3.0))

    def test__beta(self) -> None:
        """Test beta(1; 0, 1, 0) = 2 and the branch reduction for lambda1 <= 0."""
        assert tci.beta(1.0, 0.0, 1.0, 0.0) == pytest.approx(2.0)
        kappa, lambda1, T = 0.3, -0.4, 2.0
        expected = 1 + 2 * (1 + kappa) ** 2 / (1 - kappa) ** 2 * math.exp(
            2 * 0.4 * T / (1 - kappa) ** 2
        )
        assert tci.beta(T, kappa, lambda1, 0.0) == pytest.approx(expected)

    def test__overflow(self) -> None:
        """Test that huge exponents give infinity rather than an error."""
        assert tci.alpha(1e6, 0.9, -10.0, 1.0, 1.0) == math.inf
        assert tci.log_alpha(1e6, 0.9, -10.0, 1.0, 1.0) > 700

    @pytest.mark.parametrize(
        ("T", "kappa", "lambda2"),
        [(0.0, 0.0, 0.0), (1.0, 1.0, 0.0), (1.0, -0.1, 0.0), (1.0, 0.0, -1.0)],
    )
    def test__domain(self, T: float, kappa: float, lambda2: float) -> None:
        """Test the parameter domain."""
        with pytest.raises(errors.DomainError):
            tci.alpha(T, kappa, 1.0, lambda2, 1.0)
        with pytest.raises(errors.DomainError):
            tci.beta(T, kappa, 1.0, lambda2)

    def test__domain_names_condition(self) -> None:
        """Test that domain errors name the condition that fails."""
        with pytest.raises(errors.DomainError, match="neutral Lipschitz condition"):
            tci.alpha(1.0, 1.2, 1.0, 0.0, 1.0)
        with pytest.raises(errors.DomainError, match="bounded diffusion condition"):
            tci.alpha(1.0, 0.0, 1.0, 0.0, 0.0)

    def test__direct_evaluation(self, rng: np.random.Generator) -> None:
        """Test against the direct formulas on 1000 random parameter tuples."""
        for _ in range(1000):
            T = rng.uniform(0.1, 5.0)
            kappa = rng.uniform(0.0, 0.5)
            lambda1 = rng.uniform(-1.0, 2.0)
            lambda2 = rng.uniform(0.0, 0.5)
            lambda3 = rng.uniform(0.1, 2.0)
            a = tci.alpha(T, kappa, lambda1, lambda2, lambda3)
            b = tci.beta(T, kappa, lambda1, lambda2)
            expected = _direct_alpha(T, kappa, lambda1, lambda2, lambda3)
            assert a == pytest.approx(expected, rel=1e-12)
            assert b == pytest.approx(_direct_beta(T, kappa, lambda1, lambda2), rel=1e-12)
            assert a > 0
            assert b >= 1

    def test__combined(self) -> None:
        """Test the combined coefficient; a point mass contributes nothing."""
        assert tci.combined_coefficient(2.0, 2.0, 0.0) == pytest.approx(2.0)
        assert tci.combined_coefficient(1.0, 4.0, 1.0) == pytest.approx(9.0)
        with pytest.raises(errors.DomainError):
            tci.combined_coefficient(1.0, 1.0, -1.0)

    def test__infinite_horizon(self) -> None:
        """Test that the half-line coefficients are the first branches."""
        entropy, initial = tci.infinite_horizon_coefficients(0.0, 1.0, 0.0, 1.0)
        assert entropy == pytest.approx(math.sqrt(tci.alpha(100.0, 0.0, 1.0, 0.0, 1.0)))
        assert initial == pytest.approx(2.0)
        with pytest.raises(errors.DomainError, match="lambda1 > 0"):
            tci.infinite_horizon_coefficients(0.0, 0.0, 0.0, 1.0)


class TestL2:
    """Test the constants of the L2 inequalities."""

    def test__c_lambda(self) -> None:
        """Test C = 4 for lambda = 0, k = 0, k1 = 2, k2 = 1, lambda3 = 1."""
        c = tci.c_lambda(0.0, 0.0, 2.0, 1.0, 1.0)
        assert c == pytest.approx(4.0)
        assert 2 * c == pytest.approx(8.0)

    def test__coefficients(self) -> None:
        """Test entropy_coeff = 2 sqrt(2) and initial_coeff = sqrt(3) in the dissipative case."""
        entropy, initial = tci.l2_coefficients("dissipative", 0.0, 0.0, 2.0, 1.0, 1.0, 1.0)
        assert entropy == pytest.approx(2.0 * math.sqrt(2.0))
        assert initial == pytest.approx(math.sqrt(3.0))
        assert entropy**2 == pytest.approx(2 * tci.c_lambda(0.0, 0.0, 2.0, 1.0, 1.0))

    def test__initial_limit(self) -> None:
        """Test that k = k2 = 0 gives initial_coeff = sqrt(tau + 1 / k1)."""
        _, initial = tci.l2_coefficients("dissipative", 0.0, 0.0, 4.0, 0.0, 1.0, 0.5)
        assert initial == pytest.approx(math.sqrt(0.75))

    def test__strong_dissipation(self) -> None:
        """Test that C vanishes as the dissipation grows."""
        assert tci.c_lambda(0.0, 0.2, 1e6, 0.0, 1.0) < 1e-10

    def test__continuity(self) -> None:
        """Test that C(lambda) tends to C(0) as lambda -> 0."""
        assert tci.c_lambda(1e-12, 0.3, 2.0, 1.0, 1.0) == pytest.approx(
            tci.c_lambda(0.0, 0.3, 2.0, 1.0, 1.0)
        )

    def test__decreasing(self) -> None:
        """Test that C is strictly decreasing in lambda on its domain."""
        values = [tci.c_lambda(lam, 0.4, 0.5, 1.0, 1.0) for lam in np.linspace(1.4, 20.0, 100)]
        assert all(b < a for a, b in itertools.pairwise(values))

    def test__direct_evaluation(self, rng: np.random.Generator) -> None:
        """Test C against the direct formula on random parameters."""
        for _ in range(1000):
            k, k2 = rng.uniform(0.0, 0.9), rng.uniform(0.0, 2.0)
            k1 = k2 + rng.uniform(0.01, 2.0)
            lam, lambda3 = rng.uniform(0.0, 5.0), rng.uniform(0.1, 2.0)
            assert tci.c_lambda(lam, k, k1, k2, lambda3) == pytest.approx(
                _direct_c(lam, k, k1, k2, lambda3), rel=1e-12
            )

    @pytest.mark.parametrize(
        ("case", "lam", "k1", "k2"),
        [
            ("dissipative", 0.0, 1.0, 1.0),
            ("dissipative", 1.0, 2.0, 1.0),
            ("weighted", 0.0, 2.0, 1.0),
            ("weighted", 0.5, 0.0, 1.0),
        ],
    )
    def test__case_preconditions(self, case: tci.L2Case, lam: float, k1: float, k2: float) -> None:
        """Test that each case enforces its own condition on lambda."""
        with pytest.raises(errors.DomainError):
            tci.l2_coefficients(case, lam, 0.0, k1, k2, 1.0, 1.0)


class TestSummability:
    """Test the discounted summability condition."""

    def test__dissipative(self) -> None:
        """Test that lambda1 > 0, lambda2 = 0 always qualifies, with converging partial sums."""
        result = tci.weighted_summability(1.0, 0.0, 1.0, 0.0)
        assert result.threshold == 0.0
        assert result.satisfied
        assert len(result.partial_sums) == tci.SUMMABILITY_TERMS
        assert result.partial_sums[-1] - result.partial_sums[24] < 1e-6

    def test__below_threshold(self) -> None:
        """Test that a rate below (lambda1- + 8 lambda2) / (1 - kappa)^2 does not qualify."""
        result = tci.weighted_summability(0.5, 0.0, -1.0, 0.0)
        assert result.threshold == pytest.approx(1.0)
        assert not result.satisfied

    def test__positive_rate(self) -> None:
        """Test that the discount rate must be positive."""
        with pytest.raises(errors.DomainError):
            tci.weighted_summability(0.0, 0.0, 1.0, 0.0)


class TestConstantsRow:
    """Test the constants table rows."""

    def test__uniform(self) -> None:
        """Test a uniform-only row."""
        row = tci.constants_row(T=1.0, kappa=0.0, lambda1=1.0, lambda2=0.0, lambda3=1.0)
        assert (row.alpha, row.beta, row.combined) == (
            pytest.approx(2.0),
            pytest.approx(2.0),
            pytest.approx(2.0),
        )
        assert row.c_lambda is None
        assert row.error is None

    def test__l2(self) -> None:
        """Test an L2-only row."""
        row = tci.constants_row(lam=0.0, k=0.0, k1=2.0, k2=1.0, lambda3=1.0, tau=1.0)
        assert row.c_lambda == pytest.approx(4.0)
        assert row.initial_coeff == pytest.approx(math.sqrt(3.0))
        assert row.alpha is None

    def test__error(self) -> None:
        """Test that a domain violation is recorded rather than raised."""
        row = tci.constants_row(T=1.0, kappa=1.0, lambda1=1.0, lambda2=0.0, lambda3=1.0)
        assert row.error is not None
        assert "kappa" in row.error


class TestIntegralSuite:
    """Test the deterministic integral inequalities."""

    def test__zero_neutral(self, grid: paths.Grid, rng: np.random.Generator) -> None:
        """Test that G = 0 with k = 0 gives no violations."""
        report = tci.integral_inequality_suite(model.ZeroMap((1,)), grid, 500, rng, k=0.0)
        assert report.violations == 0
        assert [x.name for x in report.inequalities] == [
            "delay-shift",
            "neutral-upper",
            "neutral-lower",
        ]

    def test__averaging_neutral(self, grid: paths.Grid, rng: np.random.Generator) -> None:
        """Test 10^4 random pairs with the k = 0.5 averaging functional."""
        neutral = model.LinearFunctional(0.5 * model.trapezoid_weights(grid.n_tau))
        report = tci.integral_inequality_suite(neutral, grid, 10_000, rng, k=0.5)
        assert report.pairs == 10_000
        assert report.violations == 0

    def test__understated_k(self, grid: paths.Grid, rng: np.random.Generator) -> None:
        """Test that a neutral term stronger than the stated k is caught."""
        neutral = model.LinearFunctional(0.9 * model.trapezoid_weights(grid.n_tau))
        report = tci.integral_inequality_suite(neutral, grid, 500, rng, k=0.1)
        lower = next(x for x in report.inequalities if x.name == "neutral-lower")
        assert lower.violations > 0
        assert lower.worst_slack < 0

    def test__bad_weights(self, grid: paths.Grid, rng: np.random.Generator) -> None:
        """Test that the delay weights must live on the segment grid."""
        with pytest.raises(errors.DomainError):
            tci.integral_inequality_suite(
                model.ZeroMap((1,)), grid, 10, rng, k=0.0, weights=np.ones(3) / 3
            )


class TestHelpers:
    """Test metrics, resampling and the tail bound."""

    def test__metrics(self) -> None:
        """Test the metric attached to each inequality."""
        assert tci.inequality_metric("uniform") == "uniform"
        assert tci.inequality_metric("stiff-l2") == "l2-weighted"
        assert tci.initial_metric("l2-weighted") == "l2-tilde"
        assert tci.initial_metric("stiff-l2") == "l2"
        assert tci.initial_metric("stiff-uniform") == "uniform"

    def test__resample(self) -> None:
        """Test that all the weight on one path selects it every time."""
        initial = np.arange(4.0).reshape(4, 1, 1)
        resampled = tci.resample_initial(initial, np.array([-50.0, -50.0, -50.0, 0.0]))
        np.testing.assert_array_equal(resampled[:, 0, 0], [3.0] * 4)
        uniform = tci.resample_initial(initial, np.zeros(4))
        np.testing.assert_array_equal(uniform, initial)

    def test__tail_bound(self) -> None:
        """Test the truncation slack beyond the horizon."""
        assert tci.tail_bound("uniform", 1.0, 1.0, 2.0) is None
        assert tci.tail_bound("l2-dissipative", 0.0, 1.0, 2.0) is None
        assert tci.tail_bound("l2-weighted", 1.0, 1.0, 2.0) == pytest.approx(4.0 * math.exp(-1.0))

    def test__coefficients_need_constants(self) -> None:
        """Test that missing constants are a domain error."""
        with pytest.raises(errors.DomainError, match="lambda1"):
            tci.coefficients(
                "uniform", tci.ResolvedConstants(kappa=0.0), horizon=1.0, delay=0.1
            )


class TestAssumptions:
    """Test the assumption checks that precede a verification."""

    def test__declared(self) -> None:
        """Test that fully declared constants are used as they are."""
        constants, checks = tci.check_assumptions(_experiment(0.5))
        assert constants == tci.ResolvedConstants(
            kappa=0.0, lambda1=0.0, lambda2=0.0, lambda3=1.0
        )
        assert all(checks.values())

    def test__filled(self, linear_example: model.LinearExample) -> None:
        """Test that undeclared constants are estimated, with a warning."""
        experiment = dataclasses.replace(
            _experiment(0.5),
            coeffs=model.linear_coefficients(linear_example),
            sampler=model.SegmentSampler(n_tau=linear_example.n_tau, dim=1),
        )
        with pytest.warns(RuntimeWarning, match="lambda1"):
            constants, _ = tci.check_assumptions(experiment)
        assert constants.kappa == 0.5
        assert constants.lambda1 is not None

    def test__falsified(self, linear_example: model.LinearExample) -> None:
        """Test that a declared constant the samples contradict aborts the run."""
        coeffs = model.linear_coefficients(linear_example)
        coeffs = dataclasses.replace(
            coeffs, constants=dataclasses.replace(coeffs.constants, kappa=0.1)
        )
        with pytest.raises(errors.AssumptionError) as exc:
            tci.check_assumptions(
                dataclasses.replace(
                    _experiment(0.5),
                    coeffs=coeffs,
                    sampler=model.SegmentSampler(n_tau=linear_example.n_tau, dim=1),
                )
            )
        assert exc.value.condition == "neutral-lipschitz"

    @pytest.mark.parametrize(
        ("inequality", "lam"),
        [("stiff-uniform", 0.0), ("l2-weighted", 0.0), ("l2-dissipative", 1.0)],
    )
    def test__experiment_validation(self, inequality: tci.Inequality, lam: float) -> None:
        """Test that inequality-specific requirements are enforced."""
        with pytest.raises(errors.DomainError):
            _experiment(0.5, inequality=inequality, lam=lam)


class TestSynchronousCoupling:
    """Test same-noise stability."""

    def test__brownian(self) -> None:
        """Test that Brownian motion keeps its initial gap exactly."""
        sampler = model.SegmentSampler(n_tau=N_TAU, dim=1, scale=0.3)
        law = simulate.RandomSegmentLaw(sampler, np.zeros((N_TAU + 1, 1)))
        cfg = simulate.SimConfig(horizon=1.0, dt=DT, delay=0.1, n_paths=40)
        constants = tci.ResolvedConstants(kappa=0.0, lambda1=0.0, lambda2=0.0, lambda3=1.0)
        report = tci.synchronous_coupling_check(
            model.brownian_coefficients(dim=1), law, cfg, constants, inequality="uniform"
        )
        assert report.lhs == pytest.approx(report.initial)
        assert report.coefficient == pytest.approx(3.0)
        assert report.passed


class TestVerify:
    """Test end-to-end verification."""

    def test__zero_tilt(self) -> None:
        """Test that h = 0 is flagged as floor-limited rather than failed."""
        report = tci.verify_inequality(_experiment(None))
        assert report.entropy == 0.0
        assert report.rhs == 0.0
        assert report.verdict is records.Verdict.FLOOR_LIMITED
        assert report.passed
        assert report.coupling_upper_bound == 0.0

    def test__brownian_shift(self) -> None:
        """Test the Brownian constant-tilt case against the shift coupling."""
        report = tci.verify_inequality(_experiment(0.5))
        alpha = tci.alpha(1.0, 0.0, 0.0, 0.0, 1.0)
        assert report.entropy == pytest.approx(0.125)
        assert report.rhs == pytest.approx(math.sqrt(alpha * 0.125))
        assert report.coupling_upper_bound == pytest.approx(0.5)
        assert report.coupled_w2 is not None
        assert report.coupled_w2 <= report.coupling_upper_bound + 1e-9
        assert report.lhs_ci_low <= report.lhs_ci_high
        assert report.initial_w2 == 0.0
        assert report.tail_bound is None
        assert report.verdict is records.Verdict.PASS
        assert report.checks == {
            "neutral-lipschitz": True,
            "dissipativity": True,
            "bounded-diffusion": True,
        }

    def test__deterministic(self) -> None:
        """Test that the same experiment gives the same report."""
        a = tci.verify_inequality(_experiment(0.5, n_paths=20))
        b = tci.verify_inequality(_experiment(0.5, n_paths=20))
        assert a.to_json() == b.to_json()

    def test__threads(self) -> None:
        """Test that the report does not depend on the number of worker processes."""
        experiment = _experiment(0.5, n_paths=20)
        cfg = dataclasses.replace(experiment.cfg, chunk_size=4)
        a = tci.verify_inequality(dataclasses.replace(experiment, cfg=cfg))
        b = tci.verify_inequality(dataclasses.replace(experiment, cfg=cfg, threads=3))
        assert a.to_json() == b.to_json()

    def test__random_initial(self) -> None:
        """Test a random initial law: the initial term and the synchronous check are reported."""
        sampler = model.SegmentSampler(n_tau=N_TAU, dim=1, scale=0.3)
        law = simulate.RandomSegmentLaw(sampler, np.zeros((N_TAU + 1, 1)))
        report = tci.verify_inequality(_experiment(0.5, law=law))
        assert report.initial_w2 >= 0.0
        assert report.checks["synchronous"]

    def test__l2_weighted(self) -> None:
        """Test the discounted L2 inequality on Brownian motion."""
        with pytest.warns(RuntimeWarning):
            report = tci.verify_inequality(_experiment(0.5, inequality="l2-weighted", lam=1.0))
        assert report.metric == "l2-weighted"
        assert report.tail_bound is not None
        assert report.tail_bound >= 0.0
        assert report.parameters["lam"] == 1.0

    def test__monotone_entropy(self) -> None:
        """Test that a larger constant tilt never has less entropy."""
        entropies = [
            girsanov.relative_entropy(
                girsanov.coupled_simulate(
                    model.brownian_coefficients(dim=1),
                    simulate.DiracLaw(np.zeros((N_TAU + 1, 1))),
                    simulate.SimConfig(horizon=1.0, dt=DT, delay=0.1, n_paths=5),
                    girsanov.GirsanovTilt(kind=kind, values=np.array([h]), h_bound=10.0),
                )
            )[0]
            for kind in ("constant", "ramp")
            for h in (0.2, 0.4, 0.8)
        ]
        assert entropies[:3] == sorted(entropies[:3])
        assert entropies[3:] == sorted(entropies[3:])

    @pytest.mark.slow
    def test__linear_example(self) -> None:
        """Test the linear example with c1 = -2, k = 0.3 and sigma capped at 1, end to end."""
        example = model.LinearExample(
            k=0.3,
            c1=-2.0,
            lambda1=np.zeros(N_TAU + 1),
            c3=0.0,
            lambda2=0.5 * model.trapezoid_weights(N_TAU),
            sigma_cap=1.0,
        )
        experiment = dataclasses.replace(
            _experiment(0.5, n_paths=512),
            coeffs=model.linear_coefficients(example),
            law=simulate.DiracLaw(np.ones((N_TAU + 1, 1))),
            bootstrap=200,
            checker_samples=2000,
        )
        report = tci.verify_inequality(experiment)
        assert report.passed
        assert report.coupled_w2 is not None
        assert report.coupled_w2 <= report.coupling_upper_bound + 1e-9

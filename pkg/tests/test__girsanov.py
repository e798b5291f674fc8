"""Test Girsanov tilts, the coupled simulation and the importance check."""

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
import math

import numpy as np
import pytest

from neutraltci import errors, girsanov, model, records, simulate

N_TAU = 10
DT = 0.01


def _brownian(
    tilt: girsanov.GirsanovTilt, *, n_paths: int = 100, horizon: float = 1.0, seed: int = 0
) -> girsanov.CouplingResult:
    """Return the coupled run of X = W + tilt against Y = W, started at 0."""
    coeffs = model.brownian_coefficients(dim=1)
    law = simulate.DiracLaw(np.zeros((N_TAU + 1, 1)))
    cfg = simulate.SimConfig(horizon=horizon, dt=DT, delay=0.1, n_paths=n_paths, seed=seed)
    return girsanov.coupled_simulate(coeffs, law, cfg, tilt)


def _tilt(kind: girsanov.TiltKind, value: float, h_bound: float = 10.0) -> girsanov.GirsanovTilt:
    return girsanov.GirsanovTilt(kind=kind, values=np.array([value]), h_bound=h_bound)


class TestTilt:
    """Test control evaluation."""

    def test__kinds(self) -> None:
        """Test each kind of control on a batch of two segments."""
        segments = np.zeros((2, N_TAU + 1, 1))
        segments[:, -1, 0] = [0.0, 1.0]
        h, _ = _tilt("constant", 0.5).evaluate(0.3, segments)
        np.testing.assert_allclose(h, [[0.5], [0.5]])
        h, _ = _tilt("ramp", 0.5).evaluate(0.3, segments)
        np.testing.assert_allclose(h, [[0.15], [0.15]])
        h, _ = _tilt("feedback", 0.5).evaluate(0.3, segments)
        np.testing.assert_allclose(h, [[0.0], [0.5 * math.tanh(1.0)]])
        h, _ = girsanov.GirsanovTilt.zero(1).evaluate(0.3, segments)
        assert np.all(h == 0)

    def test__clipping(self) -> None:
        """Test that values above h_bound are clipped radially and counted."""
        tilt = girsanov.GirsanovTilt(kind="constant", values=np.array([3.0, 4.0]), h_bound=1.0)
        h, clipped = tilt.evaluate(0.0, np.zeros((3, N_TAU + 1, 2)))
        np.testing.assert_allclose(h, [[0.6, 0.8]] * 3)
        assert clipped.tolist() == [True, True, True]

    def test__closed_form(self) -> None:
        """Test the continuous-time entropy of the open-loop tilts."""
        assert _tilt("constant", 0.5).closed_form_entropy(2.0) == pytest.approx(0.25)
        assert _tilt("ramp", 0.6).closed_form_entropy(1.0) == pytest.approx(0.06)
        assert _tilt("feedback", 0.5).closed_form_entropy(1.0) is None
        assert _tilt("constant", 3.0, h_bound=1.0).closed_form_entropy(1.0) is None
        assert girsanov.GirsanovTilt.zero(2).closed_form_entropy(1.0) == 0.0

    @pytest.mark.parametrize("h_bound", [0.0, -1.0, math.inf])
    def test__bad_bound(self, h_bound: float) -> None:
        """Test that h_bound must be positive and finite."""
        with pytest.raises(errors.DomainError):
            _tilt("constant", 0.5, h_bound=h_bound)


class TestCoupling:
    """Test the coupled simulation against exact differences and entropies."""

    def test__zero_tilt(self) -> None:
        """Test that h = 0 makes X and Y identical with zero entropy."""
        result = _brownian(girsanov.GirsanovTilt.zero(1), n_paths=10)
        np.testing.assert_array_equal(result.x_paths.values, result.y_paths.values)
        assert girsanov.relative_entropy(result) == (0.0, 0.0)
        assert np.all(result.sup_diff == 0)

    def test__constant_shift(self) -> None:
        """Test that a constant h on Brownian motion gives X(t) - Y(t) = h t."""
        result = _brownian(_tilt("constant", 0.5), n_paths=10)
        diff = result.x_paths.values - result.y_paths.values
        expected = 0.5 * np.clip(result.x_paths.grid.times, 0.0, None)
        np.testing.assert_allclose(diff[:, :, 0], np.tile(expected, (10, 1)), atol=1e-12)
        np.testing.assert_allclose(result.sup_diff, 0.5)

    def test__constant_entropy(self) -> None:
        """Test that a constant h gives 1/2 |h|^2 T with zero spread."""
        result = _brownian(_tilt("constant", 0.5), n_paths=20, horizon=2.0)
        entropy, se = girsanov.relative_entropy(result)
        assert entropy == pytest.approx(0.25, rel=1e-12)
        assert se == 0.0

    def test__ramp_entropy(self) -> None:
        """Test that the ramp entropy approaches its closed form."""
        tilt = _tilt("ramp", 0.6)
        result = _brownian(tilt, n_paths=5)
        assert result.entropy_estimate == pytest.approx(tilt.closed_form_entropy(1.0), rel=0.02)

    def test__clipped(self) -> None:
        """Test that clipping caps the entropy at 1/2 h_bound^2 T and counts every step."""
        result = _brownian(_tilt("constant", 3.0, h_bound=1.0), n_paths=4)
        assert result.entropy_estimate == pytest.approx(0.5)
        assert result.clipped.tolist() == [100] * 4
        assert result.summary().clipped == 400

    def test__feedback_consistency(self) -> None:
        """Test the feedback entropy against a ten times larger ensemble."""
        tilt = _tilt("feedback", 1.0)
        small = girsanov.relative_entropy(_brownian(tilt, n_paths=200, seed=1))
        large = girsanov.relative_entropy(_brownian(tilt, n_paths=2000, seed=2))
        assert abs(small[0] - large[0]) <= 4 * math.hypot(small[1], large[1])

    def test__deterministic(self) -> None:
        """Test that a rerun with the same seed is identical."""
        a = _brownian(_tilt("feedback", 1.0), n_paths=6)
        b = _brownian(_tilt("feedback", 1.0), n_paths=6)
        np.testing.assert_array_equal(a.x_paths.values, b.x_paths.values)
        np.testing.assert_array_equal(a.log_density, b.log_density)

    def test__threads(self) -> None:
        """Test that the coupled run does not depend on the number of worker processes."""
        coeffs = model.brownian_coefficients(dim=1)
        law = simulate.DiracLaw(np.zeros((N_TAU + 1, 1)))
        cfg = simulate.SimConfig(horizon=0.5, dt=DT, delay=0.1, n_paths=9, chunk_size=2)
        tilt = _tilt("feedback", 0.5)
        a = girsanov.coupled_simulate(coeffs, law, cfg, tilt, threads=1)
        b = girsanov.coupled_simulate(coeffs, law, cfg, tilt, threads=3)
        assert a.x_paths.values.tobytes() == b.x_paths.values.tobytes()
        assert a.y_paths.values.tobytes() == b.y_paths.values.tobytes()
        assert a.log_density.tobytes() == b.log_density.tobytes()

    def test__summary(self) -> None:
        """Test the summary and per-path rows."""
        result = _brownian(_tilt("constant", 0.5), n_paths=8)
        summary = result.summary()
        assert summary.n_paths == 8
        assert summary.tilt == "constant"
        assert summary.sup_diff_quantiles["max"] == pytest.approx(0.5)
        assert summary.sup_diff_mean_square == pytest.approx(0.25)
        rows = result.per_path_rows()
        assert len(rows) == 8
        assert set(rows[0]) == {"path", "seed", "log_density", "entropy", "sup_diff", "clipped"}

    def test__noise_dim_mismatch(self) -> None:
        """Test that the tilt must have one component per noise coordinate."""
        tilt = girsanov.GirsanovTilt(kind="constant", values=np.array([0.5, 0.5]), h_bound=10.0)
        with pytest.raises(errors.DomainError, match="components"):
            _brownian(tilt)


class TestImportance:
    """Test the reweighted reference simulation."""

    @staticmethod
    def _check(
        tilt: girsanov.GirsanovTilt, n_paths: int = 1000
    ) -> records.ImportanceReport:
        coeffs = model.brownian_coefficients(dim=1)
        law = simulate.DiracLaw(np.zeros((N_TAU + 1, 1)))
        cfg = simulate.SimConfig(horizon=1.0, dt=DT, delay=0.1, n_paths=n_paths, seed=4)
        return girsanov.importance_check(coeffs, law, cfg, tilt)

    def test__zero_tilt(self) -> None:
        """Test that h = 0 gives unit density and consistent means."""
        report = self._check(girsanov.GirsanovTilt.zero(1), n_paths=300)
        assert report.normalization == 1.0
        assert report.normalization_se == 0.0
        assert report.effective_sample_size == pytest.approx(300)
        assert abs(report.z_score) < 4
        assert not report.low_ess

    @pytest.mark.parametrize("kind", ["constant", "ramp", "feedback"])
    def test__normalization(self, kind: girsanov.TiltKind) -> None:
        """Test that the density has mean one under the reference law."""
        report = self._check(_tilt(kind, 0.5))
        assert abs(report.normalization - 1.0) <= 4 * report.normalization_se

    def test__gaussian_mean_shift(self) -> None:
        """Test both estimators against E tanh(N(h T, T)) for constant h on Brownian motion."""
        nodes, weights = np.polynomial.hermite_e.hermegauss(60)
        exact = float(np.sum(weights * np.tanh(0.5 + nodes)) / math.sqrt(2.0 * math.pi))
        report = self._check(_tilt("constant", 0.5), n_paths=2000)
        assert abs(report.weighted_mean - exact) <= 4 * report.weighted_se
        assert abs(report.tilted_mean - exact) <= 4 * report.tilted_se
        assert abs(report.z_score) < 4

    def test__low_ess(self) -> None:
        """Test that a large tilt is flagged for a low effective sample size."""
        with pytest.warns(RuntimeWarning, match="effective sample size"):
            report = self._check(_tilt("constant", 4.0), n_paths=200)
        assert report.low_ess

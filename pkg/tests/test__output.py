"""Test screen output utilities."""

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
import colors
import pytest

from neutraltci import output, records


def _report(verdict: records.Verdict) -> records.TCIReport:
    return records.TCIReport(
        inequality="uniform",
        metric="uniform",
        parameters={"T": 1.0},
        n_paths=10,
        bootstrap=20,
        solver="exact",
        lhs=0.25,
        lhs_ci_low=0.2,
        lhs_ci_high=0.3,
        floor=0.1,
        entropy=0.125,
        entropy_se=0.0,
        initial_w2=0.0,
        entropy_coeff=2.0,
        initial_coeff=1.5,
        rhs=0.5,
        margin=0.3,
        verdict=verdict,
        passed=verdict is not records.Verdict.FAIL,
        coupling_upper_bound=0.5,
    )


class TestDots:
    """Test dot generation."""

    def test__dots(self, capsys: pytest.CaptureFixture[str]) -> None:
        """Test dots."""
        with output.Dots("Please wait") as d:
            for _ in range(5):
                d.dot()
        out = capsys.readouterr().out.strip()
        assert out == "Please wait....."

    def test__quiet(self, capsys: pytest.CaptureFixture[str]) -> None:
        """Test that an empty message turns the output off."""
        with output.Dots("") as d:
            d.dot()
        assert capsys.readouterr().out == ""


class TestVerdict:
    """Test the one-line verdict."""

    @pytest.mark.parametrize(
        ("verdict", "label"),
        [
            (records.Verdict.PASS, "PASS"),
            (records.Verdict.FAIL, "FAIL"),
            (records.Verdict.FLOOR_LIMITED, "FLOOR-LIMITED"),
        ],
    )
    def test__label(self, verdict: records.Verdict, label: str) -> None:
        """Test the label and the numbers."""
        line = colors.strip_color(output.verdict(_report(verdict)))
        assert line == (
            f"{label} uniform: lhs=0.25 [0.2, 0.3] floor=0.1 rhs=0.5 margin=0.3"
        )


class TestTable:
    """Test text tables."""

    def test__table(self) -> None:
        """Test alignment, the union of columns and the None placeholder."""
        text = output.table([{"name": "alpha", "value": 2.0}, {"name": "beta", "other": None}])
        assert text.splitlines() == [
            " name  value  other",
            "alpha      2      -",
            " beta      -      -",
        ]

    def test__empty(self) -> None:
        """Test that no rows give an empty string."""
        assert output.table([]) == ""

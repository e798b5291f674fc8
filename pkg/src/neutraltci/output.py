"""Screen output utilities."""

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
import sys
from collections.abc import Sequence
from types import TracebackType
from typing import Self

import colors

from neutraltci import records


class Dots:
    """Context Manager that outputs a message, and dots...

    An empty message turns the output off.

    Example:
        with Dots("Simulating") as d:
            for chunk in chunks:
                simulate(chunk)
                d.dot()
    """

    def __init__(self, message: str) -> None:
        """Initialize a Dots object."""
        self._quiet = not message
        self._out(message)

    def __enter__(self) -> Self:
        """Enter the context manager."""
        return self

    def __exit__(
        self,
        _: type[BaseException] | None,
        __: BaseException | None,
        ___: TracebackType | None,
    ) -> None:
        """Exit the context manager."""
        self._out("\n")

    def dot(self) -> None:
        """Output a dot."""
        self._out(".")

    def _out(self, message: str) -> None:
        if self._quiet:
            return
        sys.stdout.write(message)
        sys.stdout.flush()


def verdict(report: records.TCIReport) -> str:
    """Return a one-line, coloured summary of an inequality check."""
    match report.verdict:
        case records.Verdict.PASS:
            label = colors.color("PASS", fg="green")
        case records.Verdict.FAIL:
            label = colors.color("FAIL", fg="red")
        case _:
            label = colors.color("FLOOR-LIMITED", fg="yellow")
    return (
        f"{label} {report.inequality}: lhs={report.lhs:.6g} "
        f"[{report.lhs_ci_low:.6g}, {report.lhs_ci_high:.6g}] floor={report.floor:.6g} "
        f"rhs={report.rhs:.6g} margin={report.margin:.6g}"
    )


def table(rows: Sequence[dict[str, object]]) -> str:
    """Return rows as an aligned text table; None shows as '-'."""
    if not rows:
        return ""
    columns = list(dict.fromkeys(key for row in rows for key in row))
    cells = [[_cell(row.get(column)) for column in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths, strict=True))]
    lines.extend("  ".join(c.rjust(w) for c, w in zip(r, widths, strict=True)) for r in cells)
    return "\n".join(lines)


def _cell(value: object) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)

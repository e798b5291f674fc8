"""Record (dataclass) definitions.

Everything a command writes to disk is one of these records. The JSON layout is described in
docs/output-schema.md; bump SCHEMA_VERSION whenever a field is renamed or removed.
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
import csv
import dataclasses
import enum
import io
import json
from typing import Any, Final

SCHEMA_VERSION: Final[int] = 1


class Verdict(enum.Enum):
    """Outcome of an inequality check."""

    PASS = "pass"
    FAIL = "fail"
    FLOOR_LIMITED = "floor-limited"


@dataclasses.dataclass(kw_only=True)
class Record:
    """Base class for records.

    Overrides true/false test for records returning false if all fields are None.
    """

    def __bool__(self) -> bool:
        """Return a boolean representation of the Record."""
        return bool([x for x in dataclasses.asdict(self).values() if x is not None])

    def asdict(self) -> dict[Any, Any]:
        """Return a dict version of the record."""
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        """Return the record as stable (sorted, indented) JSON."""
        return json.dumps(self.asdict(), default=_json_default, indent=2, sort_keys=True) + "\n"

    def csv_row(self) -> dict[str, Any]:
        """Return the record flattened to one CSV row (nested keys joined with '.')."""
        return _flatten(self.asdict())


def to_json(rows: list[Record]) -> str:
    """Return records as a stable JSON array."""
    return (
        json.dumps([row.asdict() for row in rows], default=_json_default, indent=2, sort_keys=True)
        + "\n"
    )


def to_csv(rows: list[Record]) -> str:
    """Return records as CSV text with a header row."""
    return rows_to_csv([row.csv_row() for row in rows])


def rows_to_csv(flat: list[dict[str, Any]]) -> str:
    """Return flat dicts as CSV text; the header is the union of keys in first-seen order."""
    fields = list(dict.fromkeys(key for row in flat for key in row))
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(flat)
    return buffer.getvalue()


# Assumption checkers.
@dataclasses.dataclass(kw_only=True)
class LipschitzEstimate(Record):
    """Sampled Lipschitz constant of the neutral term."""

    metric: str
    kappa: float
    declared: float | None = None
    passed: bool
    samples: int


@dataclasses.dataclass(kw_only=True)
class DissipativityEstimate(Record):
    """Sampled dissipativity constants: (lambda1, lambda2) or (k1, k2) depending on mode."""

    mode: str
    first: float
    second: float
    passed: bool
    samples: int


@dataclasses.dataclass(kw_only=True)
class DiffusionBoundEstimate(Record):
    """Sampled bound on the diffusion coefficient."""

    norm: float
    lambda3: float
    declared: float | None = None
    passed: bool
    samples: int


# Closed-form constants.
@dataclasses.dataclass(kw_only=True)
class Summability(Record):
    """The weighted-metric summability condition and its numerical evidence."""

    lam: float
    threshold: float
    satisfied: bool
    partial_sums: list[float]


@dataclasses.dataclass(kw_only=True)
class ConstantsRow(Record):
    """One row of the constants table; fields are None where they do not apply or are invalid."""

    T: float | None = None
    kappa: float | None = None
    lambda1: float | None = None
    lambda2: float | None = None
    lambda3: float | None = None
    alpha: float | None = None
    beta: float | None = None
    combined: float | None = None
    lam: float | None = None
    k: float | None = None
    k1: float | None = None
    k2: float | None = None
    tau: float | None = None
    c_lambda: float | None = None
    entropy_coeff: float | None = None
    initial_coeff: float | None = None
    summable: bool | None = None
    error: str | None = None


# Coupling.
@dataclasses.dataclass(kw_only=True)
class CouplingSummary(Record):
    """Ensemble statistics of a coupled run."""

    tilt: str
    n_paths: int
    horizon: float
    entropy: float
    entropy_se: float
    sup_diff_mean_square: float
    sup_diff_quantiles: dict[str, float]
    clipped: int


@dataclasses.dataclass(kw_only=True)
class ImportanceReport(Record):
    """Consistency of the reweighted reference simulation with the tilted simulation."""

    weighted_mean: float
    weighted_se: float
    tilted_mean: float
    tilted_se: float
    z_score: float
    normalization: float
    normalization_se: float
    effective_sample_size: float
    low_ess: bool


@dataclasses.dataclass(kw_only=True)
class CoupleReport(Record):
    """Everything the couple command writes."""

    schema_version: int = SCHEMA_VERSION
    coupling: CouplingSummary
    closed_form_entropy: float | None = None
    importance: ImportanceReport


# Inequalities.
@dataclasses.dataclass(kw_only=True)
class TCIReport(Record):
    """One inequality verification."""

    schema_version: int = SCHEMA_VERSION
    inequality: str
    metric: str
    parameters: dict[str, float | None]
    n_paths: int
    bootstrap: int
    solver: str
    lhs: float
    lhs_ci_low: float
    lhs_ci_high: float
    floor: float
    entropy: float
    entropy_se: float
    initial_w2: float
    entropy_coeff: float
    initial_coeff: float
    rhs: float
    margin: float
    verdict: Verdict
    passed: bool
    coupling_upper_bound: float
    coupled_w2: float | None = None
    tail_bound: float | None = None
    checks: dict[str, bool] = dataclasses.field(default_factory=dict)


@dataclasses.dataclass(kw_only=True)
class SynchronousCouplingReport(Record):
    """Same-noise stability of two solutions started from different initial segments."""

    metric: str
    lhs: float
    lhs_se: float
    initial: float
    coefficient: float
    rhs: float
    passed: bool
    n_pairs: int


@dataclasses.dataclass(kw_only=True)
class IntegralInequality(Record):
    """Outcome of one deterministic integral inequality over many path pairs."""

    name: str
    worst_slack: float
    violations: int


@dataclasses.dataclass(kw_only=True)
class IntegralSuiteReport(Record):
    """Outcome of the deterministic integral inequality suite."""

    pairs: int
    tolerance: float
    inequalities: list[IntegralInequality]

    @property
    def violations(self) -> int:
        """Return the total number of violations."""
        return sum(x.violations for x in self.inequalities)


# Convergence.
@dataclasses.dataclass(kw_only=True)
class ConvergenceReport(Record):
    """Observed order of the integrator."""

    study: str
    noise: str = "none"
    dts: list[float]
    errors: list[float]
    order: float
    expected_low: float
    expected_high: float

    @property
    def within_band(self) -> bool:
        """Return True if the observed order lies in the expected band."""
        return self.expected_low <= self.order <= self.expected_high


def _flatten(data: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{name}."))
        elif isinstance(value, list):
            flat[name] = json.dumps(value, default=_json_default)
        elif isinstance(value, enum.Enum):
            flat[name] = value.value
        else:
            flat[name] = value
    return flat


def _json_default(value: Any) -> Any:  # noqa: ANN401
    if isinstance(value, enum.Enum):
        return value.value
    if hasattr(value, "item"):  # numpy scalars
        return value.item()
    if hasattr(value, "tolist"):
        return value.tolist()
    msg = f"Object of type {type(value).__name__} is not JSON serializable"
    raise TypeError(msg)

"""Command line commands."""

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
import argparse
import dataclasses
import json
import functools
import logging
import re
import time
from typing import Any, Final

import numpy as np

from neutraltci import (
    __version__,
    base,
    config,
    errors,
    girsanov,
    model,
    output,
    records,
    simulate,
    tci,
)

log = logging.getLogger(__name__)

# Command line names of the constants parameters, mapped to their keyword names.
_PARAMETERS: Final[dict[str, str]] = {
    "T": "T",
    "kappa": "kappa",
    "l1": "lambda1",
    "l2": "lambda2",
    "l3": "lambda3",
    "lambda": "lam",
    "k": "k",
    "k1": "k1",
    "k2": "k2",
    "tau": "tau",
    "c-mu": "c_mu",
}
_SWEEP_RE: Final = re.compile(r"(?P<name>[\w-]+)=(?P<start>[^:]+):(?P<stop>[^:]+):(?P<num>\d+)")


@dataclasses.dataclass(frozen=True)
class _NoisePreset:
    sigma: float
    dts: tuple[float, ...]
    refinement: int
    n_paths: int | None  # None: sim.n_paths.
    delay: float | None  # None: sim.delay.
    expected: tuple[float, float]


_NOISE_PRESETS: Final[dict[str, _NoisePreset]] = {
    "multiplicative": _NoisePreset(
        sigma=1.0,
        dts=(0.05, 0.025, 0.0125, 0.00625),
        refinement=16,
        n_paths=None,
        delay=None,
        expected=(0.35, 0.65),
    ),
    "additive": _NoisePreset(
        sigma=0.3,
        dts=(2.0**-4, 2.0**-5, 2.0**-6, 2.0**-7),
        refinement=64,
        n_paths=2000,
        delay=1.0,
        expected=(0.8, 1.2),
    ),
}
_DETERMINISTIC_ORDER: Final = (0.8, 1.2)


def _constants_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Compute alpha(T), beta(T), C(lambda), the L2 coefficients and summability."
    )
    for name, dest in _PARAMETERS.items():
        parser.add_argument(f"--{name}", dest=dest, type=float, help=f"value of {dest}")
    parser.add_argument(
        "--variant",
        choices=("derived", "stated"),
        help="exponent rate in alpha (default: from config)",
    )
    parser.add_argument(
        "--sweep",
        metavar="NAME=START:STOP:NUM",
        help="emit CSV over NUM evenly spaced values of one parameter (e.g. T=0.5:5:10)",
    )
    return parser


def _delay_equation(
    n_tau: int, *, decay: float, delayed: float, noise: float, additive: bool
) -> model.CoefficientSet:
    return model.delay_linear_coefficients(
        n_tau=n_tau, decay=decay, delayed=delayed, noise=noise, additive=additive
    )


class _Command:
    # Base class for commands.
    help = ""
    parser = argparse.ArgumentParser()

    @staticmethod
    def validate_args(args: argparse.Namespace) -> bool:
        """Validate command line arguments."""
        _ = args
        return True


class Config(_Command):
    """neutraltci tool for working with a config file.

    This class provides a command-line interface for managing the neutraltci configuration file.
    It delegates all operations to the ConfigManager class.
    """

    command = "config"
    help = "work with the config file"
    parser = argparse.ArgumentParser(description="Manage neutraltci configuration")
    parser.add_argument("--init", "-i", action="store_true", help="initialize a new config file")

    def __init__(self, args: argparse.Namespace, settings: config.Settings) -> None:
        """Manage the config file.

        This class performs all of its tasks on instantiation and provides no public members or
        methods.
        """
        del settings  # Unused.
        config.ConfigManager(args=args)


class Constants(_Command):
    """Print the closed-form constants for given parameters.

    Without --sweep, one table row is printed and a domain violation is an error. With --sweep,
    one CSV row is printed per grid value and domain violations are reported in the row.
    """

    command = "constants"
    help = "compute closed-form constants"
    parser = _constants_parser()

    def __init__(self, args: argparse.Namespace, settings: config.Settings) -> None:
        """Initialize a Constants command handler."""
        variant = args.variant or settings.inequality.variant
        values: dict[str, Any] = {dest: getattr(args, dest) for dest in _PARAMETERS.values()}
        if values["c_mu"] is None:
            values["c_mu"] = 0.0
        if args.sweep:
            name, grid = self._sweep_grid(args.sweep)
            rows = [
                tci.constants_row(**(values | {name: float(v)}), variant=variant) for v in grid
            ]
            print(records.to_csv(list(rows)), end="")
            return
        row = tci.constants_row(**values, variant=variant)
        if row.error:
            raise errors.DomainError(row.error)
        print(output.table([{k: v for k, v in row.csv_row().items() if v is not None}]))
        kappa, lambda1, lambda2, lambda3, lam = (
            values[k] for k in ("kappa", "lambda1", "lambda2", "lambda3", "lam")
        )
        uniform = kappa is not None and lambda1 is not None and lambda2 is not None
        if uniform and lambda3 is not None and lambda1 > 0:
            entropy, initial = tci.infinite_horizon_coefficients(kappa, lambda1, lambda2, lambda3)
            print(f"\nWhole half-line: entropy_coeff={entropy:.6g} initial_coeff={initial:.6g}")
        if uniform and lam is not None and lam > 0:
            summability = tci.weighted_summability(
                lam, kappa, lambda1, lambda2, lambda3 or 1.0, variant
            )
            state = "satisfied" if summability.satisfied else "not satisfied"
            print(
                f"\nSummability: lambda={lam:g} threshold={summability.threshold:.6g} ({state}); "
                f"partial sum to n={len(summability.partial_sums)}: "
                f"{summability.partial_sums[-1]:.6g}"
            )

    @staticmethod
    def validate_args(args: argparse.Namespace) -> bool:
        """Validate command line arguments."""
        if args.sweep is None:
            return True
        match = _SWEEP_RE.fullmatch(args.sweep)
        if match is None or match["name"] not in _PARAMETERS:
            names = ", ".join(_PARAMETERS)
            print(f"Invalid --sweep; use NAME=START:STOP:NUM with NAME in {names}")
            return False
        try:
            float(match["start"]), float(match["stop"])
        except ValueError:
            print("Invalid --sweep; START and STOP must be numbers")
            return False
        return int(match["num"]) >= 1

    @staticmethod
    def _sweep_grid(sweep: str) -> tuple[str, list[float]]:
        match = _SWEEP_RE.fullmatch(sweep)
        if match is None:
            msg = f"Invalid --sweep: {sweep}"
            raise errors.DomainError(msg)
        grid = np.linspace(float(match["start"]), float(match["stop"]), int(match["num"]))
        return _PARAMETERS[match["name"]], [float(v) for v in grid]


class Simulate(_Command, base.Base):
    """Simulate an ensemble and write one path file per trajectory plus a manifest.

    This class performs all of its tasks on instantiation and provides no public members or
    methods.
    """

    command = "simulate"
    help = "simulate an ensemble of paths"
    parser = argparse.ArgumentParser(description="Simulate the configured neutral SDE.")

    def __init__(self, args: argparse.Namespace, settings: config.Settings) -> None:
        """Initialize a Simulate command handler."""
        super().__init__(args, settings)
        coeffs = self._coefficients()
        cfg = self._sim_config(coeffs)
        started = time.perf_counter()
        ensemble = simulate.simulate_ensemble(
            coeffs, self._law(coeffs), cfg, threads=self._threads
        )
        with self._lock:
            filenames = simulate.write_ensemble(
                ensemble, self._output_dir, self._manifest(started)
            )
        print(f"Wrote {len(filenames)} path files and manifest.json to {self._output_dir}")


class Couple(_Command, base.Base):
    """Run the tilted/untilted coupling and write its summary and per-path rows.

    This class performs all of its tasks on instantiation and provides no public members or
    methods.
    """

    command = "couple"
    help = "run the Girsanov coupling"
    parser = argparse.ArgumentParser(
        description="Simulate the tilted and reference solutions on shared noise."
    )

    def __init__(self, args: argparse.Namespace, settings: config.Settings) -> None:
        """Initialize a Couple command handler."""
        super().__init__(args, settings)
        coeffs = self._coefficients()
        cfg = self._sim_config(coeffs)
        law = self._law(coeffs)
        tilt = self._tilt(coeffs.noise_dim)
        coupled = girsanov.coupled_simulate(coeffs, law, cfg, tilt, threads=self._threads)
        importance = girsanov.importance_check(
            coeffs, law, cfg, tilt, coupled=coupled, threads=self._threads
        )
        report = records.CoupleReport(
            coupling=coupled.summary(),
            closed_form_entropy=tilt.closed_form_entropy(cfg.horizon),
            importance=importance,
        )
        print(
            output.table([{
                "tilt": report.coupling.tilt,
                "paths": report.coupling.n_paths,
                "entropy": report.coupling.entropy,
                "entropy_se": report.coupling.entropy_se,
                "closed_form": report.closed_form_entropy,
                "importance_z": importance.z_score,
                "ess": importance.effective_sample_size,
            }])  # fmt: skip
        )
        self._write_records("couple", [report])
        self._write_rows("couple_paths", coupled.per_path_rows())


class Verify(_Command, base.Base):
    """Verify the configured inequality end to end.

    This class performs all of its tasks on instantiation and provides no public members or
    methods.
    """

    command = "verify"
    help = "verify a transportation cost inequality"
    parser = argparse.ArgumentParser(
        description="Simulate, couple, transport and compare the two sides of an inequality."
    )
    parser.add_argument(
        "--integral-pairs",
        type=int,
        default=0,
        metavar="N",
        help="also check the integral inequalities on N random path pairs",
    )

    def __init__(self, args: argparse.Namespace, settings: config.Settings) -> None:
        """Initialize a Verify command handler."""
        super().__init__(args, settings)
        started = time.perf_counter()
        coeffs = self._coefficients()
        experiment = self._experiment(coeffs)
        report = tci.verify_inequality(experiment)
        print(output.verdict(report))
        self._write_records(experiment.inequality, [report])
        if args.integral_pairs:
            suite = tci.integral_inequality_suite(
                coeffs.neutral,
                experiment.cfg.grid,
                args.integral_pairs,
                simulate.stream_generator(experiment.cfg.seed, simulate.Stream.CHECKS),
                k=coeffs.constants.k if coeffs.constants.k is not None else 0.0,
                lam=experiment.lam,
                weights=coeffs.constants.delay_weights,
                dim=coeffs.dim,
            )
            print(output.table([i.asdict() for i in suite.inequalities]))
            self._write_records("integral_suite", [suite])
        manifest = json.dumps(self._manifest(started), indent=2, sort_keys=True) + "\n"
        self._write("manifest.json", manifest)

    @staticmethod
    def validate_args(args: argparse.Namespace) -> bool:
        """Validate command line arguments."""
        if args.integral_pairs < 0:
            print("--integral-pairs must be nonnegative")
            return False
        return True


class Convergence(_Command, base.Base):
    """Estimate the observed order of the integrator on the scalar delay equation.

    The multiplicative-noise study shows strong order one half; with additive noise the scheme
    reaches order one. Unset options take the preset of the chosen noise kind.

    This class performs all of its tasks on instantiation and provides no public members or
    methods.
    """

    command = "convergence"
    help = "estimate the integrator's convergence order"
    parser = argparse.ArgumentParser(
        description=(
            "Compare coarse solutions of dX = (-decay X(t) + delayed X(t - tau)) dt "
            "+ sigma X(t) dW (or + sigma dW) with a refined reference driven by the same "
            "Brownian path."
        )
    )
    parser.add_argument(
        "--study",
        choices=("strong", "deterministic", "both"),
        default="both",
        help="strong (with noise) and/or deterministic (noise = 0) study (default: both)",
    )
    parser.add_argument(
        "--noise",
        choices=tuple(_NOISE_PRESETS),
        default="multiplicative",
        help="noise of the strong study: sigma X(t) dW or sigma dW (default: multiplicative)",
    )
    parser.add_argument("--sigma", type=float, help="noise level (default: from --noise)")
    parser.add_argument(
        "--dts", type=float, nargs="+", help="coarse time steps (default: from --noise)"
    )
    parser.add_argument("--refinement", type=int, help="reference step divisor")
    parser.add_argument("--paths", type=int, help="paths in the strong study")
    parser.add_argument("--delay", type=float, help="delay tau (default: preset, else sim.delay)")
    parser.add_argument("--decay", type=float, default=1.0, help="coefficient of -X(t)")
    parser.add_argument("--delayed", type=float, default=0.5, help="coefficient of X(t - tau)")

    def __init__(self, args: argparse.Namespace, settings: config.Settings) -> None:
        """Initialize a Convergence command handler."""
        super().__init__(args, settings)
        sim = settings.sim
        preset = _NOISE_PRESETS[args.noise]
        sigma = preset.sigma if args.sigma is None else args.sigma
        n_paths = args.paths or preset.n_paths or sim.n_paths
        delay = args.delay or preset.delay or sim.delay
        studies = ("strong", "deterministic") if args.study == "both" else (args.study,)
        reports = []
        for study in studies:
            stochastic = study == "strong"
            make_coeffs = functools.partial(
                _delay_equation,
                decay=args.decay,
                delayed=args.delayed,
                noise=sigma if stochastic else 0.0,
                additive=args.noise == "additive",
            )
            report = simulate.convergence_study(
                make_coeffs,
                initial_value=sim.initial_value,
                delay=delay,
                horizon=sim.horizon,
                dts=list(args.dts or preset.dts),
                refinement=args.refinement or preset.refinement,
                n_paths=n_paths,
                seed=sim.seed,
                stochastic=stochastic,
                expected=preset.expected if stochastic else _DETERMINISTIC_ORDER,
                chunk_size=sim.chunk_size,
                noise=args.noise,
            )
            if not report.within_band:
                log.warning(
                    "%s order %.3f is outside [%g, %g]",
                    study,
                    report.order,
                    report.expected_low,
                    report.expected_high,
                )
            reports.append(report)
        print(
            output.table([{
                "study": r.study,
                "noise": r.noise,
                "order": r.order,
                "expected": f"[{r.expected_low:g}, {r.expected_high:g}]",
                "within_band": r.within_band,
            } for r in reports])  # fmt: skip
        )
        self._write_records("convergence", reports)

    @staticmethod
    def validate_args(args: argparse.Namespace) -> bool:
        """Validate command line arguments."""
        if args.dts is not None and (len(args.dts) < 2 or min(args.dts) <= 0):  # noqa: PLR2004
            print("--dts needs at least two positive time steps")
            return False
        if args.refinement is not None and args.refinement < 2:  # noqa: PLR2004
            print("--refinement must be at least 2")
            return False
        if getattr(args, "paths", None) is not None and args.paths < 1:
            print("--paths must be positive")
            return False
        if getattr(args, "delay", None) is not None and args.delay <= 0:
            print("--delay must be positive")
            return False
        return True


class Version(_Command):
    """Print the version."""

    command = "version"
    help = "display the program version"

    def __init__(self, args: argparse.Namespace, settings: config.Settings) -> None:
        """Initialize a Version command handler."""
        del args, settings  # Unused.
        print(f"neutraltci {__version__}")


COMMANDS: set[Any] = {Config, Constants, Convergence, Couple, Simulate, Verify, Version}

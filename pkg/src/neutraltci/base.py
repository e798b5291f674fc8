"""neutraltci base class."""

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
import datetime
import logging
import pathlib
import time
from collections.abc import Sequence
from typing import Any

import filelock
import numpy as np

from neutraltci import config, errors, girsanov, model, paths, records, simulate, tci
from neutraltci.paths import Array

log = logging.getLogger(__name__)


class Base:
    """neutraltci base class.

    This class should be sub-classed for the sub-commands that run experiments. It turns the
    settings into the objects the numerical modules work with and owns the output directory.
    """

    command: str | None = None

    def __init__(self, args: argparse.Namespace, settings: config.Settings) -> None:
        """Initialize the base."""
        _ = args
        self._settings = settings
        self._threads = settings.threads
        self._n_tau = paths.grid_steps(settings.sim.delay, settings.sim.dt, "sim.delay")

        # Directories.
        self._output_dir = settings.output.directory / (self.command or "")
        self._lock = filelock.FileLock(str(self._output_dir) + ".lock")

    def _coefficients(self) -> model.CoefficientSet:
        """Return the coefficient set described by the model block."""
        m, sim = self._settings.model, self._settings.sim
        noise_dim = sim.noise_dim or sim.dim
        match m.kind:
            case "linear":
                example = model.LinearExample(
                    k=m.k,
                    c1=m.c1,
                    lambda1=m.drift_scale * self._weights(m.drift_weights),
                    c3=m.c3,
                    lambda2=m.diffusion_scale * self._weights(m.diffusion_weights),
                    sigma_cap=m.sigma_cap,
                )
                coeffs = model.linear_coefficients(example, dim=sim.dim, noise_dim=noise_dim)
            case "zero":
                coeffs = model.zero_coefficients(dim=sim.dim, noise_dim=noise_dim)
            case "brownian":
                coeffs = model.brownian_coefficients(dim=sim.dim, scale=m.diffusion_scale)
            case _:
                if sim.dim != 1:
                    msg = f"model.kind delay-linear is scalar; sim.dim must be 1 (got {sim.dim})"
                    raise errors.DomainError(msg)
                coeffs = model.delay_linear_coefficients(
                    n_tau=self._n_tau, decay=-m.c1, delayed=m.drift_scale, noise=m.c3
                )
        declared = {k: v for k, v in m.declared.model_dump().items() if v is not None}
        if m.delay_weights is not None:
            declared["delay_weights"] = self._weights(m.delay_weights)
        stiff = None if m.stiff is None else np.asarray(m.stiff, dtype=float)
        coeffs = dataclasses.replace(
            coeffs, stiff=stiff, constants=dataclasses.replace(coeffs.constants, **declared)
        )
        coeffs.check_stability(sim.dt)
        return coeffs

    def _experiment(self, coeffs: model.CoefficientSet) -> tci.Experiment:
        """Return the verification experiment described by the settings."""
        ineq = self._settings.inequality
        return tci.Experiment(
            inequality=ineq.name,
            coeffs=coeffs,
            law=self._law(coeffs),
            cfg=self._sim_config(coeffs),
            tilt=self._tilt(coeffs.noise_dim),
            sampler=self._sampler(coeffs.dim),
            lam=ineq.lam,
            variant=ineq.variant,
            solver=ineq.solver,
            exact_cap=ineq.exact_cap,
            eps_relative=ineq.eps_relative,
            bootstrap=ineq.bootstrap,
            confidence=ineq.confidence,
            checker_samples=ineq.checker_samples,
            threads=self._threads,
        )

    def _law(self, coeffs: model.CoefficientSet) -> simulate.InitialLaw:
        """Return the initial law (a constant segment, or random segments around it)."""
        sim = self._settings.sim
        mean = np.full((self._n_tau + 1, coeffs.dim), sim.initial_value)
        if sim.initial == "dirac":
            return simulate.DiracLaw(mean)
        sampler = model.SegmentSampler(n_tau=self._n_tau, dim=coeffs.dim, scale=sim.initial_scale)
        return simulate.RandomSegmentLaw(sampler, mean)

    def _sampler(self, dim: int) -> model.SegmentSampler:
        """Return the segment sampler the assumption checkers draw from."""
        ineq = self._settings.inequality
        return model.SegmentSampler(
            n_tau=self._n_tau, dim=dim, scale=ineq.sampler_scale, mode=ineq.sampler_mode
        )

    def _sim_config(self, coeffs: model.CoefficientSet) -> simulate.SimConfig:
        """Return the simulation config, sized for the coefficient set."""
        sim = self._settings.sim
        return simulate.SimConfig(
            horizon=sim.horizon,
            dt=sim.dt,
            delay=sim.delay,
            dim=coeffs.dim,
            noise_dim=coeffs.noise_dim,
            n_paths=sim.n_paths,
            seed=sim.seed,
            fp_tol=sim.fp_tol,
            fp_max_iter=sim.fp_max_iter,
            chunk_size=sim.chunk_size,
        )

    def _tilt(self, noise_dim: int) -> girsanov.GirsanovTilt:
        """Return the tilt; a single value is repeated for every noise coordinate."""
        tilt = self._settings.tilt
        values = np.asarray(tilt.values, dtype=float)
        if values.shape == (1,):
            values = np.repeat(values, noise_dim)
        return girsanov.GirsanovTilt(
            kind=tilt.kind, values=values, h_bound=tilt.h_bound, horizon=self._settings.sim.horizon
        )

    def _weights(self, spec: config.WeightSpec) -> Array:
        """Return a weight vector on the segment grid from a name or an explicit list."""
        if isinstance(spec, str):
            return model.named_weights(spec, self._n_tau)
        return np.asarray(spec, dtype=float)

    def _manifest(self, started: float) -> dict[str, Any]:
        """Return the run manifest: settings, their hash, timestamp and runtime since started."""
        return {
            "schema_version": records.SCHEMA_VERSION,
            "command": self.command,
            "settings": self._settings.model_dump(mode="json"),
            "config_hash": config.settings_hash(self._settings),
            "created": datetime.datetime.now(tz=datetime.UTC).isoformat(),
            "runtime_seconds": time.perf_counter() - started,
        }

    def _write_records(self, name: str, rows: Sequence[records.Record]) -> None:
        """Write records as name.json (one record, or a list) and name.csv, per output.formats."""
        formats = self._settings.output.formats
        if "json" in formats:
            text = rows[0].to_json() if len(rows) == 1 else records.to_json(list(rows))
            self._write(f"{name}.json", text)
        if "csv" in formats:
            self._write(f"{name}.csv", records.to_csv(list(rows)))

    def _write_rows(self, name: str, rows: list[dict[str, Any]]) -> None:
        """Write plain rows as name.csv."""
        if "csv" in self._settings.output.formats:
            self._write(f"{name}.csv", records.rows_to_csv(rows))

    def _write(self, filename: str, text: str) -> pathlib.Path:
        """Write one file into the output directory while holding its lock."""
        path = self._output_dir / filename
        with self._lock:
            self._output_dir.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        print(f"Wrote {path}")
        return path

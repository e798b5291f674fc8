"""Configuration module for neutraltci.

This module provides configuration management using pydantic-settings, supporting multiple
sources of configuration:

1. Command line overrides (highest precedence):
   - `--set sim.n_paths=500` style dotted keys, passed to Settings as init values

2. Environment Variables:
   - Prefix: "NEUTRALTCI__"
   - Nested fields: Use "__" as delimiter (e.g., NEUTRALTCI__SIM__N_PATHS)

3. TOML Configuration File:
   - Location: $XDG_CONFIG_HOME/neutraltci/config.toml, or the file given with `--config`
   - One table per block: [model], [sim], [tilt], [inequality], [output]

4. Default Values:
   - Defined in the Settings class
   - Lowest precedence

The configuration is immutable (frozen=True). Every cross-field rule is checked before any
computation starts; a violation names the field and the rule.
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
import argparse
import hashlib
import json
import logging
import pathlib
from collections.abc import Iterable
from typing import Annotated, Any, Final, Literal, Self

import pydantic
import pydantic_settings
import xdg_base_dirs

from neutraltci import errors, paths

CONFIG_PATH: Final[pathlib.Path] = xdg_base_dirs.xdg_config_home() / "neutraltci" / "config.toml"

logger = logging.getLogger(__name__)

ExpandedPath = Annotated[
    pathlib.Path,
    pydantic.AfterValidator(lambda v: v.expanduser()),
]
WeightSpec = Literal["none", "uniform", "endpoint", "delayed"] | list[pydantic.NonNegativeFloat]


class DeclaredSettings(pydantic.BaseModel):
    """Constants the model declares; anything left unset is estimated by the checkers."""

    kappa: float | None = None
    lambda1: float | None = None
    lambda2: float | None = None
    lambda3: float | None = None
    k: float | None = None
    k1: float | None = None
    k2: float | None = None

    @pydantic.model_validator(mode="after")
    def _check_ranges(self) -> Self:
        for name in ("kappa", "k"):
            value = getattr(self, name)
            if value is not None and not 0 <= value < 1:
                msg = f"model.declared.{name} must lie in [0, 1) (got {value})"
                raise ValueError(msg)
        for name in ("lambda2", "k2"):
            value = getattr(self, name)
            if value is not None and value < 0:
                msg = f"model.declared.{name} must be nonnegative (got {value})"
                raise ValueError(msg)
        if self.lambda3 is not None and self.lambda3 <= 0:
            msg = f"model.declared.lambda3 must be positive (got {self.lambda3})"
            raise ValueError(msg)
        return self


class ModelSettings(pydantic.BaseModel):
    """Configuration settings for the coefficients.

    "linear" is G = (k/tau) int xi, b = c1 xi(0) + drift_scale int xi d(drift_weights) and
    sigma = c3 xi(0) + diffusion_scale int xi d(diffusion_weights), capped at sigma_cap.
    "brownian" uses sigma = c3 I; "delay-linear" is dX = (c1 X(t) + drift_scale X(t - tau)) dt
    + c3 X(t) dW.
    """

    kind: Literal["linear", "zero", "brownian", "delay-linear"] = "linear"
    k: float = 0.5
    c1: float = -4.0
    c3: float = 0.0
    drift_weights: WeightSpec = "none"
    drift_scale: pydantic.NonNegativeFloat = 1.0
    diffusion_weights: WeightSpec = "uniform"
    diffusion_scale: pydantic.NonNegativeFloat = 0.5
    sigma_cap: pydantic.PositiveFloat | None = 1.0
    stiff: list[float] | None = None
    delay_weights: WeightSpec | None = None
    declared: DeclaredSettings = DeclaredSettings()

    @pydantic.model_validator(mode="after")
    def _check_model(self) -> Self:
        if self.kind == "linear" and not 0 < self.k < 1:
            msg = f"model.k must lie in (0, 1) for the linear model (got {self.k})"
            raise ValueError(msg)
        if self.stiff is not None and any(a >= 0 for a in self.stiff):
            msg = "model.stiff entries must be strictly negative"
            raise ValueError(msg)
        weights = self.delay_weights
        if isinstance(weights, list) and abs(sum(weights) - 1.0) > 1e-12:  # noqa: PLR2004
            msg = "model.delay_weights must sum to 1 (it is a probability measure)"
            raise ValueError(msg)
        if self.delay_weights == "none":
            msg = "model.delay_weights must be a probability measure; 'none' has no mass"
            raise ValueError(msg)
        return self


class SimSettings(pydantic.BaseModel):
    """Configuration settings for the simulation grid and ensemble."""

    horizon: pydantic.PositiveFloat = 1.0
    dt: pydantic.PositiveFloat = 0.01
    delay: pydantic.PositiveFloat = 0.1
    dim: pydantic.PositiveInt = 1
    noise_dim: pydantic.PositiveInt | None = None  # Same as dim.
    n_paths: pydantic.PositiveInt = 200
    seed: pydantic.NonNegativeInt = 0
    fp_tol: pydantic.PositiveFloat = 1e-12
    fp_max_iter: pydantic.PositiveInt = 100
    chunk_size: pydantic.PositiveInt = 64
    initial: Literal["dirac", "random"] = "dirac"
    initial_value: float = 1.0
    initial_scale: pydantic.PositiveFloat = 0.5

    @pydantic.model_validator(mode="after")
    def _check_grid(self) -> Self:
        for name in ("delay", "horizon"):
            paths.grid_steps(getattr(self, name), self.dt, f"sim.{name}")
        return self


class TiltSettings(pydantic.BaseModel):
    """Configuration settings for the Girsanov tilt h."""

    kind: Literal["none", "constant", "ramp", "feedback"] = "constant"
    values: list[float] = [0.5]
    h_bound: pydantic.PositiveFloat = 10.0


class InequalitySettings(pydantic.BaseModel):
    """Configuration settings for the inequality under test and its estimators."""

    name: Literal["uniform", "l2-dissipative", "l2-weighted", "stiff-uniform", "stiff-l2"] = (
        "uniform"
    )
    lam: pydantic.NonNegativeFloat = 0.0
    variant: Literal["derived", "stated"] = "derived"
    solver: Literal["exact", "sinkhorn"] = "exact"
    exact_cap: pydantic.PositiveInt = 1024
    eps_relative: pydantic.PositiveFloat = 0.01
    bootstrap: pydantic.PositiveInt = 200
    confidence: float = pydantic.Field(default=0.95, gt=0, lt=1)
    checker_samples: pydantic.PositiveInt = 2000
    sampler_scale: pydantic.PositiveFloat = 1.0
    sampler_mode: Literal["mixed", "independent", "shift", "endpoint"] = "mixed"

    @pydantic.model_validator(mode="after")
    def _check_lambda(self) -> Self:
        if self.name == "l2-dissipative" and self.lam != 0:
            msg = f"inequality.lam must be 0 for l2-dissipative (got {self.lam})"
            raise ValueError(msg)
        if self.name == "l2-weighted" and self.lam <= 0:
            msg = "inequality.lam must be positive for l2-weighted"
            raise ValueError(msg)
        return self


class OutputSettings(pydantic.BaseModel):
    """Configuration settings for result files."""

    directory: ExpandedPath = pathlib.Path("neutraltci-output")
    formats: list[Literal["json", "csv"]] = ["json", "csv"]


class Settings(pydantic_settings.BaseSettings):
    """Configuration settings for neutraltci."""

    inequality: InequalitySettings = InequalitySettings()
    model: ModelSettings = ModelSettings()
    output: OutputSettings = OutputSettings()
    sim: SimSettings = SimSettings()
    threads: pydantic.NonNegativeInt = 0  # All cores.
    tilt: TiltSettings = TiltSettings()

    model_config = pydantic_settings.SettingsConfigDict(
        env_nested_delimiter="__",
        env_prefix="NEUTRALTCI__",
        toml_file=str(CONFIG_PATH),
        frozen=True,  # Make settings immutable.
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[pydantic_settings.BaseSettings],
        init_settings: pydantic_settings.PydanticBaseSettingsSource,
        env_settings: pydantic_settings.PydanticBaseSettingsSource,
        dotenv_settings: pydantic_settings.PydanticBaseSettingsSource,
        file_secret_settings: pydantic_settings.PydanticBaseSettingsSource,
    ) -> tuple[pydantic_settings.PydanticBaseSettingsSource, ...]:
        """Customize settings sources."""
        del dotenv_settings, file_secret_settings  # Unused.
        return (
            init_settings,  # Used for --set overrides and tests.
            env_settings,
            pydantic_settings.TomlConfigSettingsSource(settings_cls),
        )

    @pydantic.model_validator(mode="after")
    def _check_cross_block(self) -> Self:
        n_tau = paths.grid_steps(self.sim.delay, self.sim.dt, "sim.delay")
        for name in ("drift_weights", "diffusion_weights", "delay_weights"):
            weights = getattr(self.model, name)
            if isinstance(weights, list) and len(weights) != n_tau + 1:
                msg = f"model.{name} must have n_tau + 1 = {n_tau + 1} entries, got {len(weights)}"
                raise ValueError(msg)
        if self.model.stiff is not None:
            if len(self.model.stiff) != self.sim.dim:
                msg = f"model.stiff must have sim.dim = {self.sim.dim} entries"
                raise ValueError(msg)
            if max(-a for a in self.model.stiff) * self.sim.dt >= 1:
                msg = "model.stiff is unstable at sim.dt: need |a| * dt < 1 for every entry"
                raise ValueError(msg)
        if self.inequality.name.startswith("stiff") and self.model.stiff is None:
            msg = f"inequality.name {self.inequality.name} needs model.stiff"
            raise ValueError(msg)
        return self


def parse_overrides(items: Iterable[str]) -> dict[str, Any]:
    """Return `--set key=value` items as a nested dict (dotted keys nest; values parse as JSON).

    Values that are not valid JSON are kept as strings, so `--set tilt.kind=ramp` works unquoted.
    """
    overrides: dict[str, Any] = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            msg = f"--set expects key=value (got {item!r})"
            raise errors.DomainError(msg)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        *parents, leaf = key.split(".")
        node = overrides
        for parent in parents:
            node = node.setdefault(parent, {})
        node[leaf] = value
    return overrides


def load(config_file: pathlib.Path | None = None, overrides: Iterable[str] = ()) -> Settings:
    """Return settings from an explicit TOML file (instead of the default one) and overrides."""
    values = parse_overrides(overrides)
    if config_file is None:
        return Settings(**values)
    if not config_file.is_file():
        msg = f"Config file not found: {config_file}"
        raise errors.DomainError(msg)

    class FileSettings(Settings):
        model_config = pydantic_settings.SettingsConfigDict(toml_file=str(config_file))

    logger.info("Reading config from %s", config_file)
    return FileSettings(**values)


def settings_hash(settings: Settings) -> str:
    """Return the SHA-256 of the settings that determine results (all but threads and output)."""
    dumped = settings.model_dump(mode="json", exclude={"threads", "output"})
    return hashlib.sha256(json.dumps(dumped, sort_keys=True).encode()).hexdigest()


class ConfigManager:
    """Manage neutraltci configuration.

    This class handles all configuration-related operations including creating,
    reading, and managing the configuration file.
    """

    def __init__(self, args: argparse.Namespace, config_path: pathlib.Path = CONFIG_PATH) -> None:
        """Initialize and execute the ConfigManager."""
        self._config_path = config_path
        print(f"Config file location: {self._config_path}")
        if args.init:
            if self._config_path.exists():
                print("Config file already exists")
                return
            self.init_config_file()
            print("Created new config file")
            return
        if self._config_path.exists():
            print("\n=== Config file contents ===")
            print(self._config_path.read_text(encoding="utf-8"))
            return
        print("Config file does not exist. Use '--init' to create it.")

    def init_config_file(self) -> None:
        """Initialize a new config file with default values.

        Raises:
            OSError: If there's an error creating the file or directories.
            FileNotFoundError: If the template file cannot be found.
        """
        self._config_path.parent.mkdir(parents=True, exist_ok=True)
        template_file = pathlib.Path(__file__).parent / "templates" / "config.toml"
        self._config_path.write_text(template_file.read_text(encoding="utf-8"), encoding="utf-8")

"""Pytest configuration and fixtures."""

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
import os
import pathlib

import _pytest.config
import numpy as np
import pytest

from neutraltci import model, paths


def pytest_configure(config: _pytest.config.Config) -> None:
    """Configure pytest and set up environment variables.

    This runs before any test modules are imported.
    """
    # Create a temporary directory for this test session
    cache_dir = pathlib.Path(str(config.cache.mkdir("output")))
    output_dir = cache_dir / "output"
    output_dir.mkdir(exist_ok=True, parents=True)

    # Set the environment variable before any imports happen
    os.environ["NEUTRALTCI__OUTPUT__DIRECTORY"] = str(output_dir)


@pytest.fixture(scope="session")
def output_dir() -> pathlib.Path:
    """Get the path to the session's output directory."""
    return pathlib.Path(os.environ["NEUTRALTCI__OUTPUT__DIRECTORY"])


@pytest.fixture
def grid() -> paths.Grid:
    """Return a small grid: tau = 0.1 (10 steps), T = 0.5."""
    return paths.Grid(dt=0.01, delay=0.1, horizon=0.5)


@pytest.fixture
def rng() -> np.random.Generator:
    """Return a seeded generator."""
    return np.random.default_rng(12345)


@pytest.fixture
def linear_example() -> model.LinearExample:
    """Return the linear example on a 10-step segment grid, with a sigma cap of 1."""
    n_tau = 10
    return model.LinearExample(
        k=0.5,
        c1=-4.0,
        lambda1=np.zeros(n_tau + 1),
        c3=0.0,
        lambda2=0.5 * model.trapezoid_weights(n_tau),
        sigma_cap=1.0,
    )

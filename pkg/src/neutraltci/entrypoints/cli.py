"""neutraltci command line interface."""

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
import enum
import logging
import pathlib
import sys

import pydantic

from neutraltci import commands, config, errors

log = logging.getLogger("neutraltci")


class ExitCode(enum.IntEnum):
    """Process exit codes."""

    OK = 0
    VALIDATION = 2
    ASSUMPTION = 3
    RUNTIME = 4


class CommandLineInterface:
    """Command line interface."""

    def __init__(self, *, parse_args: bool = True) -> None:
        """Initialize a CommandLineInterface handler."""
        if parse_args:
            self._args = self._parse_args()
            self.log_level = self._args.log_level

    def execute(self) -> ExitCode:
        """Execute the command; return the exit code."""
        log.info("ARGS: %s", self._args)
        stage = self._args.command
        for cmd in commands.COMMANDS:
            if stage != cmd.command:
                continue
            if not cmd.validate_args(self._args):
                return ExitCode.VALIDATION
            try:
                settings = config.load(self._args.config, self._args.set or ())
                cmd(self._args, settings)
            except (pydantic.ValidationError, errors.DomainError) as err:
                return self._fail(stage, "invalid configuration", err, ExitCode.VALIDATION)
            except errors.AssumptionError as err:
                return self._fail(stage, "assumption check failed", err, ExitCode.ASSUMPTION)
            except errors.NeutralTCIError as err:
                return self._fail(stage, "failed", err, ExitCode.RUNTIME)
            return ExitCode.OK
        print("No command given; see --help", file=sys.stderr)
        return ExitCode.VALIDATION

    @staticmethod
    def _fail(stage: str, what: str, err: Exception, code: ExitCode) -> ExitCode:
        log.debug("%s: %s", stage, what, exc_info=err)
        print(f"neutraltci {stage}: {what}: {err}", file=sys.stderr)
        return code

    # noinspection PyProtectedMember
    @staticmethod
    def _parse_args() -> argparse.Namespace:
        """Parse command line arguments."""
        parser = argparse.ArgumentParser(description="neutraltci")

        # global options
        parser.add_argument(
            "--log-level",
            "-l",
            choices=("CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"),
            default="ERROR",
            help="log level (default: ERROR)",
        )
        parser.add_argument(
            "--config",
            "-c",
            type=pathlib.Path,
            help=f"TOML config file (default: {config.CONFIG_PATH})",
        )
        parser.add_argument(
            "--set",
            "-s",
            action="append",
            metavar="KEY=VALUE",
            help="override a config value, e.g. --set sim.n_paths=500 (repeatable)",
        )

        # Add sub-commands and args for sub_commands.
        subparsers = parser.add_subparsers(title="commands", dest="command")
        for cmd_ in sorted(commands.COMMANDS, key=lambda c: c.command):
            # This is a total hack because argparse won't allow you to add an already
            # existing ArgumentParser as a sub-parser.
            if cmd_.parser:
                cmd_.parser.prog = f"{subparsers._prog_prefix} {cmd_.command}"  # noqa: SLF001
                subparsers._choices_actions.append(  # noqa: SLF001
                    subparsers._ChoicesPseudoAction(cmd_.command, (), cmd_.help)  # noqa: SLF001
                )
                subparsers._name_parser_map[cmd_.command] = cmd_.parser  # noqa: SLF001

        return parser.parse_args()


def main() -> None:
    """Execute the command line interface."""
    cli_ = CommandLineInterface()
    logging.basicConfig(level=cli_.log_level)
    logging.captureWarnings(capture=True)
    sys.exit(cli_.execute())

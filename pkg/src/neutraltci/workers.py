"""Process-pool helpers."""

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
import logging
import os
import pickle
from collections.abc import Callable, Sequence
from multiprocessing import Pool

from neutraltci import output

log = logging.getLogger(__name__)


def resolve_threads(threads: int) -> int:
    """Return the number of worker processes for a configured thread count (0 = all cores)."""
    return threads if threads > 0 else (os.cpu_count() or 1)


def parallel_map[T, R](
    func: Callable[[T], R], tasks: Sequence[T], threads: int = 1, message: str = ""
) -> list[R]:
    """Apply func to every task, in a process pool when threads allows it.

    Results come back in task order whatever order the workers finish in, so the output does not
    depend on the number of workers.

    Args:
        func: Module-level function to apply (it must pickle)
        tasks: Inputs, one per call
        threads: Number of worker processes (0 for all cores, 1 to run in-process)
        message: Progress message to display (no progress output if empty)
    """
    workers = min(resolve_threads(threads), len(tasks))
    if workers > 1:
        try:
            pickle.dumps(tasks[0])
        except (pickle.PicklingError, TypeError, AttributeError) as err:
            log.warning("Running serially; task cannot be sent to a worker: %s", err)
            workers = 1
    if workers <= 1:
        return [func(task) for task in tasks]
    with output.Dots(message) as dots, Pool(workers) as pool:
        # Start all tasks.
        results = [pool.apply_async(func, (task,)) for task in tasks]

        # Wait for all tasks to complete.
        values = []
        for result in results:
            values.append(result.get())  # Will raise any exceptions from the worker.
            dots.dot()
    return values

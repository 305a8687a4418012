"""Lowest functional layer for the concurrent runs (surface columns, schedule level blocks, Monte Carlo batches)."""

import os
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from functools import partial
from typing import Callable, Optional

import numpy as np
from loguru import logger

from switchpoint.models.fundamentals import FundamentalPair
from switchpoint.models.payoff import STORAGE, PayoffModel
from switchpoint.models.sensitivity import (
    SensitivitySettings,
    SurfaceColumn,
    surface_column,
)
from switchpoint.models.solver import (
    ControlPair,
    SolverSettings,
    solve_schedule_level,
    storage_grid,
)


def resolve_threads(requested: Optional[int] = None) -> int:
    """Worker count: SWITCHPOINT_THREADS wins, then the request, then one."""
    override = os.getenv("SWITCHPOINT_THREADS")
    if override:
        return max(1, int(override))
    return max(1, int(requested or 1))


def run_mp(func: Callable, tasks: list[tuple], num_workers: int) -> list:
    """Run ``func(*task)`` for every task in a process pool; results keep the task order."""

    if num_workers <= 1 or len(tasks) <= 1:
        return [func(*task) for task in tasks]

    results = [None] * len(tasks)
    with ProcessPoolExecutor(max_workers=min(num_workers, len(tasks))) as executor:
        future_to_index = {
            executor.submit(func, *task): index for index, task in enumerate(tasks)
        }

        for future in as_completed(future_to_index):
            index = future_to_index[future]
            try:
                results[index] = future.result()
                logger.debug(f"run_mp: task {index + 1}/{len(tasks)} finished")
            except Exception as e:
                logger.error(f"Error processing task {index}: {e}")
                logger.error(traceback.format_exc())
                for pending in future_to_index:
                    pending.cancel()
                raise

    return results


def pool_mapper(num_workers: int) -> Callable:
    """A ``mapper(func, tasks)`` backed by the process pool, for the Monte Carlo entry points."""
    return partial(_mapped, num_workers=num_workers)


def _mapped(func, tasks, num_workers):
    return run_mp(func, tasks, num_workers)


def surface_columns_mp(
    pair: FundamentalPair,
    payoff: PayoffModel,
    n: int,
    temperatures,
    factor: str = STORAGE,
    march: bool = True,
    settings: SensitivitySettings = SensitivitySettings(),
    solver_settings: SolverSettings = SolverSettings(),
    num_workers: int = 1,
) -> list[SurfaceColumn]:
    """One surface column per temperature, computed concurrently."""
    tasks = [
        (pair, payoff, float(t), n, factor, march, settings, solver_settings)
        for t in temperatures
    ]
    logger.info(f"Computing {len(tasks)} surface columns on {num_workers} workers.")
    return run_mp(surface_column, tasks, num_workers)


def _solve_block(pair, payoff, factor, z, start, stop, settings) -> list[ControlPair]:
    """Solve levels ``start..stop-1``; the first is cold, the rest warm-start from their predecessor."""
    solved: list[ControlPair] = []
    for i in range(start, stop):
        solved.append(solve_schedule_level(pair, payoff, factor, z, i, solved, settings))
    return solved


def schedule_levels_mp(
    pair: FundamentalPair,
    payoff: PayoffModel,
    n: int,
    factor: str = STORAGE,
    settings: SolverSettings = SolverSettings(),
    num_workers: int = 1,
) -> list[ControlPair]:
    """Solve all schedule levels in contiguous blocks, one block per worker."""
    z = storage_grid(payoff, factor, n)
    bounds = np.linspace(0, n, min(num_workers, n) + 1).round().astype(int)
    tasks = [
        (pair, payoff, factor, z, int(start), int(stop), settings)
        for start, stop in zip(bounds[:-1], bounds[1:])
        if stop > start
    ]
    blocks = run_mp(_solve_block, tasks, num_workers)
    return [control for block in blocks for control in block]

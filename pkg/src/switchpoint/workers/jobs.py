"""Middle logic layer b/w the command line and the numerical functions."""

from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger

import switchpoint.utils.enums as enums
import switchpoint.workers.functions as functions
from switchpoint.models.empirical import (
    build_empirical_fundamentals,
    chain_consistency,
    default_grid,
    ingest_csv,
)
from switchpoint.models.exceptions import SwitchPointError, ValidationError
from switchpoint.models.fundamentals import check_trends
from switchpoint.models.payoff import STORAGE
from switchpoint.models.sensitivity import (
    build_surface,
    compare_march,
    march_schedule,
    temperature_sweep,
)
from switchpoint.models.simulate import (
    backtest_series,
    grid_search_oracle,
    horizon_for,
    monte_carlo_value,
)
from switchpoint.models.solver import (
    Schedule,
    build_q,
    calibrate_rate,
    smooth_fit_residuals,
    solve_level,
    solve_schedule,
    storage_grid,
)
from switchpoint.pipeline.config import RunConfig
from switchpoint.utils.function import checksum, run_metadata, write_csv, write_json


def _metadata(config: RunConfig, task: enums.Task, **extra) -> dict:
    return run_metadata(config.digest(), config.seed, task=task.name.lower(), r_per_s=config.spec.r, **extra)


def _write_table(frame: pd.DataFrame, config: RunConfig, out_dir: Path, stem: str, metadata: dict) -> Path:
    if config.output_format is enums.OutputFormat.JSON:
        path = out_dir / f"{stem}.json"
        write_json({"rows": frame.to_dict(orient="records")}, path, metadata)
    else:
        path = out_dir / f"{stem}.csv"
        write_csv(frame, path, metadata)
    return path


def _factor(config: RunConfig, payoff) -> Optional[str]:
    factor = config.payoff_section.factor
    return factor if factor in payoff.factor_names() else None


def calibrated(config: RunConfig) -> RunConfig:
    """Replace the configured rate with the calibrated one when [CALIBRATION] apply is set."""
    if not config.calibration.apply:
        return config
    result = _calibrate(config)
    return config.with_rate(result.r)


def _calibrate(config: RunConfig):
    payoff = config.payoff()
    section = config.calibration
    return calibrate_rate(
        config.spec,
        payoff,
        section.target_a0,
        _factor(config, payoff),
        config.levels,
        (section.r_min, section.r_max),
        section.grid_points,
        section.tolerance,
        config.solver,
    )


def _schedule(config: RunConfig, threads: int) -> Schedule:
    pair, payoff = config.fundamentals(), config.payoff()
    factor = _factor(config, payoff)
    if factor is None:
        raise ValidationError("Schedules need a separable factor.", [f"payoff has no factor '{config.payoff_section.factor}'"])
    levels = None
    if threads > 1:
        levels = functions.schedule_levels_mp(pair, payoff, config.levels, factor, config.solver, threads)
    return solve_schedule(pair, payoff, config.levels, factor, config.solver, levels)


def cmd_solve(config: RunConfig, out_dir: Path, threads: int = 1) -> list[Path]:
    config = calibrated(config)
    pair, payoff = config.fundamentals(), config.payoff()
    control = solve_level(pair, payoff, None, None, None, config.solver)
    charge = build_q(pair, payoff, enums.Side.CHARGE)
    discharge = build_q(pair, payoff, enums.Side.DISCHARGE)
    residual_psi, residual_phi = smooth_fit_residuals(charge, discharge, control)
    trends = check_trends(pair, payoff)
    data = {
        "a_mw": control.a,
        "b_mw": control.b,
        "residual_psi": residual_psi,
        "residual_phi": residual_phi,
        "A": [float(charge.q_psi(control.a)), 0.0],
        "B": [0.0, float(charge.q_phi(control.a))],
        "trends": trends.to_dict(),
    }
    path = out_dir / "solve.json"
    write_json(data, path, _metadata(config, enums.Task.SOLVE))
    return [path]


def cmd_schedule(config: RunConfig, out_dir: Path, threads: int = 1) -> list[Path]:
    config = calibrated(config)
    schedule = _schedule(config, threads)
    metadata = _metadata(config, enums.Task.SCHEDULE, levels=schedule.n)
    json_path = out_dir / "schedule.json"
    write_json(schedule.to_dict(), json_path, metadata)
    paths = [json_path]
    if config.output_format is enums.OutputFormat.CSV:
        paths.append(_write_table(schedule.to_frame(), config, out_dir, "schedule", metadata))
    return paths


def cmd_march(config: RunConfig, out_dir: Path, threads: int = 1) -> list[Path]:
    config = calibrated(config)
    pair, payoff = config.fundamentals(), config.payoff()
    explicit = _schedule(config, threads)
    march = march_schedule(
        pair, payoff, config.levels, explicit.factor, config.march, config.solver, explicit.pairs[0]
    )
    frame = compare_march(explicit, march)
    a_max = float(frame["a_error"].abs().max())
    b_max = float(frame["b_error"].abs().max())
    logger.info(f"March error: max |a| {a_max:.2f} MW, max |b| {b_max:.2f} MW")
    metadata = _metadata(
        config, enums.Task.MARCH, max_abs_a_error_mw=round(a_max, 6), max_abs_b_error_mw=round(b_max, 6)
    )
    return [_write_table(frame, config, out_dir, "march", metadata)]


def cmd_surface(config: RunConfig, out_dir: Path, threads: int = 1) -> list[Path]:
    config = calibrated(config)
    pair, payoff = config.fundamentals(), config.payoff()
    factor = _factor(config, payoff)
    if factor is None:
        raise ValidationError("Surfaces need a separable factor.", [f"payoff has no factor '{config.payoff_section.factor}'"])
    columns = None
    if threads > 1:
        columns = functions.surface_columns_mp(
            pair, payoff, config.levels, config.temperatures, factor,
            config.use_march, config.march, config.solver, threads,
        )
    surface = build_surface(
        pair, payoff, config.levels, config.temperatures, factor,
        config.use_march, config.march, config.solver, columns,
    )
    metadata = _metadata(config, enums.Task.SURFACE, march=config.use_march)
    return [_write_table(surface.to_frame(), config, out_dir, "surface", metadata)]


def cmd_sweep(config: RunConfig, out_dir: Path, threads: int = 1) -> list[Path]:
    config = calibrated(config)
    frame = temperature_sweep(config.fundamentals(), config.payoff(), config.temperatures, config.solver)
    return [_write_table(frame, config, out_dir, "sweep", _metadata(config, enums.Task.SWEEP))]


def cmd_estimate(config: RunConfig, out_dir: Path, input_path: Path, threads: int = 1) -> list[Path]:
    section = config.empirical
    series = ingest_csv(input_path, section.gap_factor)
    grid = default_grid(series, section.levels, section.coverage)
    fundamentals = build_empirical_fundamentals(
        series, grid, config.spec.r, section.x_ref, section.min_count, section.repair_tolerance, threads
    )

    quartiles = grid[np.linspace(0, grid.size - 1, 5).round().astype(int)[1:4]]
    try:
        check = chain_consistency(series, *map(float, quartiles), config.spec.r)
        consistency = {
            "levels_mw": quartiles.tolist(),
            "product": check.product,
            "direct": check.direct,
            "combined_se": check.combined_se,
            "within_3_se": check.within,
        }
    except SwitchPointError as e:
        logger.warning(f"Chain consistency check skipped: {e}")
        consistency = None

    quality = {
        "samples": len(series),
        "dt_s": series.dt,
        "gaps": len(series.gaps),
        "flagged_links": len(fundamentals.flagged_links),
        "max_censored_fraction": float(np.max(fundamentals.censored)) if fundamentals.censored.size else 0.0,
        "min_link_count": int(min(fundamentals.up_counts.min(), fundamentals.down_counts.min())),
        "chain_consistency": consistency,
    }
    path = out_dir / "empirical.json"
    metadata = _metadata(config, enums.Task.ESTIMATE, input_checksum=checksum(Path(input_path)))
    write_json({**fundamentals.to_dict(), "quality": quality}, path, metadata)
    return [path]


def cmd_backtest(
    config: RunConfig,
    out_dir: Path,
    schedule_path: Path,
    input_path: Optional[Path] = None,
    threads: int = 1,
) -> list[Path]:
    schedule = Schedule.from_json(schedule_path)
    if schedule.r is None:
        config = calibrated(config)
    else:
        if schedule.r != config.spec.r:
            logger.info(f"Backtesting at the schedule's rate r={schedule.r:.6g}, not the configured {config.spec.r:.6g}.")
        config = config.with_rate(schedule.r)
    payoff = config.payoff()
    simulation = config.simulation
    if input_path is not None:
        report = backtest_series(
            ingest_csv(input_path, config.empirical.gap_factor), schedule, payoff, simulation.z_start, config.spec.r
        )
    else:
        report = monte_carlo_value(
            config.spec,
            schedule,
            payoff,
            simulation.x0,
            simulation.z_start,
            simulation.dt,
            simulation.n_paths,
            config.seed,
            horizon_for(config.spec.r, simulation.horizon_tolerance),
            simulation.batch_size,
            functions.pool_mapper(threads),
        )
    path = out_dir / "backtest.json"
    write_json(report.to_dict(), path, _metadata(config, enums.Task.BACKTEST))
    return [path]


def cmd_oracle(config: RunConfig, out_dir: Path, threads: int = 1) -> list[Path]:
    config = calibrated(config)
    pair, payoff = config.fundamentals(), config.payoff()
    factor = _factor(config, payoff)
    z_levels = tuple(storage_grid(payoff, factor, 1)) if factor else (0.0, 1.0)
    a_grid, b_grid = config.oracle.axes()
    simulation = config.simulation
    result = grid_search_oracle(
        config.spec,
        payoff,
        a_grid,
        b_grid,
        simulation.n_paths,
        horizon_for(config.spec.r, simulation.horizon_tolerance),
        simulation.dt,
        simulation.x0,
        config.seed,
        z_levels,
        factor or STORAGE,
        simulation.batch_size,
        functions.pool_mapper(threads),
    )

    summary = {
        "best_a_mw": result.best[0],
        "best_b_mw": result.best[1],
        "best_J": result.best_J,
        "unimodal_a": result.unimodal_a,
        "unimodal_b": result.unimodal_b,
    }
    try:
        y_charge, y_discharge = (z_levels[0], z_levels[1]) if factor else (None, None)
        control = solve_level(pair, payoff, factor, y_charge, y_discharge, config.solver)
        pitch = config.oracle.pitch
        summary.update(
            solved_a_mw=control.a,
            solved_b_mw=control.b,
            within_one_cell=bool(
                abs(control.a - result.best[0]) <= pitch and abs(control.b - result.best[1]) <= pitch
            ),
        )
    except SwitchPointError as e:
        logger.warning(f"Could not solve the comparison pair: {e}")

    metadata = _metadata(config, enums.Task.ORACLE)
    table = _write_table(result.to_frame(), config, out_dir, "oracle", metadata)
    path = out_dir / "oracle_best.json"
    write_json(summary, path, metadata)
    return [table, path]


def cmd_calibrate(config: RunConfig, out_dir: Path, threads: int = 1) -> list[Path]:
    result = _calibrate(config)
    path = out_dir / "calibration.json"
    write_json(result.to_dict(), path, _metadata(config, enums.Task.CALIBRATE, calibrated_r_per_s=result.r))
    return [path]


class JobProcessor:
    """Run one task against a validated configuration and write its outputs."""

    def __init__(
        self,
        config: RunConfig,
        task: str,
        threads: Optional[int] = None,
        input_path: Optional[Path] = None,
        schedule_path: Optional[Path] = None,
    ):
        self.config = config
        self.task = task
        self.output_path = Path(config.output_dir)
        self.num_processes = functions.resolve_threads(threads)
        self.input_path = Path(input_path) if input_path else None
        self.schedule_path = Path(schedule_path) if schedule_path else None
        self.written: list[Path] = []

        self.output_path.mkdir(parents=True, exist_ok=True)
        logger.info(f"Task {self.task} on {self.num_processes} workers, seed {config.seed}")

    def run(self) -> str:
        """Run the job processor."""
        config, out, threads = self.config, self.output_path, self.num_processes

        if self.task == enums.Task.SOLVE.name:
            self.written = cmd_solve(config, out, threads)

        elif self.task == enums.Task.SCHEDULE.name:
            self.written = cmd_schedule(config, out, threads)

        elif self.task == enums.Task.MARCH.name:
            self.written = cmd_march(config, out, threads)

        elif self.task == enums.Task.SURFACE.name:
            self.written = cmd_surface(config, out, threads)

        elif self.task == enums.Task.SWEEP.name:
            self.written = cmd_sweep(config, out, threads)

        elif self.task == enums.Task.ESTIMATE.name:
            if self.input_path is None:
                raise ValidationError(enums.ErrorMessage.INPUT_MISSING.value)
            self.written = cmd_estimate(config, out, self.input_path, threads)

        elif self.task == enums.Task.BACKTEST.name:
            if self.schedule_path is None:
                raise ValidationError(enums.ErrorMessage.SCHEDULE_MISSING.value)
            self.written = cmd_backtest(config, out, self.schedule_path, self.input_path, threads)

        elif self.task == enums.Task.ORACLE.name:
            self.written = cmd_oracle(config, out, threads)

        elif self.task == enums.Task.CALIBRATE.name:
            self.written = cmd_calibrate(config, out, threads)

        else:
            raise NotImplementedError(f"Task not implemented: {self.task}")

        logger.info(f"Task {self.task} wrote {', '.join(str(p) for p in self.written)}")
        return enums.StatusMessage.COMPLETE.name

"""Enums for the application."""

from enum import Enum


class Task(Enum):
    """Enum for task type. Values double as the subcommand help text."""

    SOLVE = "Solve the bang-bang smooth-fit system at the configured factor values. Writes JSON with a_mw, b_mw, the two relative residuals, the coefficients A and B and the action-region trend report."
    SCHEDULE = "Solve the marginal schedule over the storage grid. Writes CSV columns i, z_i, a_i, b_i_plus_1, A_i, B_i (the last row carries only A_n and B_n) and a JSON copy."
    MARCH = "March the schedule with the first-order sensitivity scheme and compare it with explicit solves. Writes CSV columns z, a_explicit, a_march, b_explicit, b_march, a_error, b_error."
    SURFACE = "Build the (T, z) threshold surface for the composed temperature and storage payoff. Writes CSV columns T, z, a, b."
    SWEEP = "Solve the bang-bang pair across the configured temperatures at fixed storage. Writes CSV columns T, a, b."
    ESTIMATE = "Estimate the fundamental solutions from an excess-demand CSV (--input). Writes JSON with grid, psi_hat, phi_hat, counts, censoring and the quality report."
    BACKTEST = "Backtest a schedule (--schedule) on simulated paths or on a supplied series (--input). Writes JSON with n_paths, mean, std, se, min, max, horizon, tail_bound and seed."
    ORACLE = "Monte Carlo grid search over (a, b) with common random numbers. Writes CSV columns a, b, J, se and a JSON argmax."
    CALIBRATE = "Calibrate the discount rate so that the first charge threshold matches the target. Writes JSON with r, a0_mw, target_mw and relative_error."


class ErrorMessage(Enum):
    INPUT_MISSING = "Error, this task requires --input pointing to an excess-demand CSV."
    SCHEDULE_MISSING = "Error, this task requires --schedule pointing to a schedule JSON."
    UNEXPECTED = "Unexpected failure, please check the logs for more information."


class StatusMessage(Enum):
    COMPLETE = "Task completed successfully!"
    ERROR = "An error occurred. Please check the logs for more information."
    STOPPED = "Task manager shutting down."


class Side(Enum):
    """Which side of the switching problem a payoff or factor belongs to."""

    CHARGE = "charge"
    DISCHARGE = "discharge"


class Provenance(Enum):
    """Origin of a pair of fundamental solutions."""

    ANALYTIC = "analytic"
    EMPIRICAL = "empirical"


class DerivativeMethod(Enum):
    """How the analytic fundamentals compute first derivatives."""

    RECURRENCE = "recurrence"
    STENCIL = "stencil"


class Elimination(Enum):
    """Which coefficient is eliminated when reducing the smooth-fit system to one unknown."""

    BOUNDARY_GAP = "boundary-gap"
    PSI_FIRST = "psi-first"
    PHI_FIRST = "phi-first"


class PayoffPreset(Enum):
    """Named payoff presets accepted by the run configuration."""

    LINEAR = "linear"
    STORAGE_LINEAR = "storage-linear"
    TEMPERATURE = "temperature"
    COMPOSED = "composed"


class OutputFormat(Enum):
    CSV = "csv"
    JSON = "json"

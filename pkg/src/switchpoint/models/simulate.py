"""Simulated excess demand, schedule execution and Monte Carlo performance."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger
from scipy.signal import lfilter

from switchpoint.models.empirical import DemandSeries
from switchpoint.models.exceptions import ValidationError
from switchpoint.models.fundamentals import DiffusionSpec
from switchpoint.models.payoff import STORAGE, PayoffModel
from switchpoint.models.solver import Schedule
from switchpoint.utils.enums import Side

SCAN_CHUNK = 4096


# --------------------------------------------------------------------------
# paths
# --------------------------------------------------------------------------


def ou_transition(x0: float, kappa: float, theta: float, sigma: float, dt: float, shocks: np.ndarray) -> np.ndarray:
    """Exact OU recursion driven by standard normal ``shocks``; returns the states after each step."""
    rho = math.exp(-kappa * dt)
    step_sd = sigma * math.sqrt(-math.expm1(-2.0 * kappa * dt) / (2.0 * kappa))
    deviations, _ = lfilter([1.0], [1.0, -rho], step_sd * np.asarray(shocks, dtype=float), zi=[rho * (x0 - theta)])
    return theta + deviations


def sample_ou_path(spec: DiffusionSpec, x0: float, dt: float, steps: int, seed=None) -> DemandSeries:
    """Sample ``steps`` exact OU transitions from ``x0``; timestamps start at 0."""
    if dt <= 0 or steps < 1:
        raise ValidationError("Invalid path request.", [f"need dt > 0 and steps >= 1, got dt={dt}, steps={steps}"])
    rng = np.random.default_rng(seed)
    states = ou_transition(x0, spec.kappa, spec.theta, spec.sigma, dt, rng.standard_normal(steps))
    timestamps = dt * np.arange(steps + 1, dtype=float)
    return DemandSeries(timestamps, np.concatenate([[float(x0)], states]), float(dt))


def path_seeds(seed: Optional[int], n_paths: int) -> list[np.random.SeedSequence]:
    """Independent per-path seeds derived from the master seed."""
    return np.random.SeedSequence(seed).spawn(n_paths)


def horizon_for(r: float, tolerance: float = 1e-4) -> float:
    """Horizon ``H`` with ``exp(-r H) = tolerance``."""
    if r <= 0 or not 0 < tolerance < 1:
        raise ValidationError("Invalid horizon request.", [f"need r > 0 and 0 < tolerance < 1, got {r}, {tolerance}"])
    return -math.log(tolerance) / r


# --------------------------------------------------------------------------
# strategy execution
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Action:
    time: float
    x: float
    from_level: int
    to_level: int
    cashflow: float


@dataclass
class StrategyRun:
    """Ledger of one walk of a schedule along a series."""

    horizon: float
    actions: list[Action] = field(default_factory=list)
    J: float = 0.0
    final_level: int = 0

    def to_frame(self) -> pd.DataFrame:
        columns = ["time", "x", "from_level", "to_level", "cashflow"]
        return pd.DataFrame([asdict(a) for a in self.actions], columns=columns)


def _level_scales(schedule: Schedule, payoff: PayoffModel) -> tuple[np.ndarray, np.ndarray]:
    """Charge and discharge payoff multipliers at every level ``z_0..z_n``."""
    levels = schedule.z_grid
    if schedule.factor not in payoff.factor_names():
        charge = np.full(levels.size, payoff.side_scale(Side.CHARGE))
        return charge, np.full(levels.size, payoff.side_scale(Side.DISCHARGE))
    charge = np.empty(levels.size)
    discharge = np.empty(levels.size)
    for i, z in enumerate(levels):
        model = payoff.with_value(schedule.factor, float(z))
        charge[i] = model.side_scale(Side.CHARGE)
        discharge[i] = model.side_scale(Side.DISCHARGE)
    return charge, discharge


def _next_exit(x: np.ndarray, start: int, a: float, b: float) -> Optional[int]:
    chunk = SCAN_CHUNK
    k = start
    while k < x.size:
        window = x[k : k + chunk]
        hits = np.flatnonzero((window <= a) | (window >= b))
        if hits.size:
            return k + int(hits[0])
        k += chunk
        chunk *= 2
    return None


def run_strategy(
    series: DemandSeries,
    schedule: Schedule,
    payoff: PayoffModel,
    z_start: int,
    r: float,
    origin: Optional[float] = None,
) -> StrategyRun:
    """
    Walk ``series`` applying the threshold rules of ``schedule``.

    At level ``i`` one increment is charged while ``x <= a_i`` and one
    discharged while ``x >= b_i``, repeating at the same sample until the
    continuation region is reached. Charging from level ``i`` pays
    ``F(x, z_i)``, discharging from ``i`` earns ``E(x, z_i)``; both are
    discounted by ``exp(-r (t - origin))`` with ``origin`` defaulting to the
    first timestamp. Execution happens at sample resolution.
    """
    n = schedule.n
    if not 0 <= z_start <= n:
        raise ValidationError("Invalid start level.", [f"z_start={z_start} outside 0..{n}"])
    if r <= 0:
        raise ValidationError("Invalid discount rate.", [f"r must be > 0, got {r}"])

    charge_scale, discharge_scale = _level_scales(schedule, payoff)
    x, t = series.values, series.timestamps
    origin = float(t[0]) if origin is None else float(origin)
    run = StrategyRun(horizon=float(t[-1] - origin), final_level=z_start)

    i, k = z_start, 0
    while k < x.size:
        k = _next_exit(x, k, schedule.charge_threshold(i), schedule.discharge_threshold(i))
        if k is None:
            break
        xk = float(x[k])
        discount = math.exp(-r * (float(t[k]) - origin))
        while True:
            if i < n and xk <= schedule.lower[i]:
                cashflow = -charge_scale[i] * float(payoff.base.F(xk)) * discount
                run.actions.append(Action(float(t[k]), xk, i, i + 1, cashflow))
                i += 1
            elif i > 0 and xk >= schedule.upper[i - 1]:
                cashflow = discharge_scale[i] * float(payoff.base.E(xk)) * discount
                run.actions.append(Action(float(t[k]), xk, i, i - 1, cashflow))
                i -= 1
            else:
                break
            run.J += cashflow
        k += 1

    run.final_level = i
    return run


def bang_bang_schedule(a: float, b: float, z_levels: Sequence[float] = (0.0, 1.0), factor: str = STORAGE) -> Schedule:
    """Single-increment schedule charging at ``a`` and discharging at ``b``."""
    zeros = np.zeros(2)
    return Schedule(np.asarray(z_levels, dtype=float), np.array([a]), np.array([b]), zeros, zeros, factor)


# --------------------------------------------------------------------------
# Monte Carlo
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BacktestReport:
    """Distribution of realised discounted profit J."""

    n_paths: int
    mean: float
    std: float
    se: float
    min: float
    max: float
    horizon: float
    tail_bound: float
    seed: Optional[int]
    source: str

    @classmethod
    def from_values(cls, values, horizon: float, tail_bound: float, seed, source: str) -> "BacktestReport":
        values = np.asarray(values, dtype=float)
        std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
        return cls(
            n_paths=int(values.size),
            mean=float(values.mean()),
            std=std,
            se=std / math.sqrt(values.size),
            min=float(values.min()),
            max=float(values.max()),
            horizon=float(horizon),
            tail_bound=float(tail_bound),
            seed=seed,
            source=source,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def serial_map(func: Callable, tasks: list[tuple]) -> list:
    return [func(*task) for task in tasks]


def _batches(items: list, size: int) -> list[list]:
    return [items[k : k + size] for k in range(0, len(items), size)]


def payoff_bound(low: float, high: float, schedule: Schedule, payoff: PayoffModel) -> float:
    """Largest single-increment payoff magnitude for x in [low, high] over the schedule levels."""
    charge_scale, discharge_scale = _level_scales(schedule, payoff)
    ends = np.array([low, high])
    base = max(np.max(np.abs(payoff.base.F(ends))), np.max(np.abs(payoff.base.E(ends))))
    return float(base * max(np.max(np.abs(charge_scale)), np.max(np.abs(discharge_scale))))


def path_values(
    spec: DiffusionSpec,
    schedule: Schedule,
    payoff: PayoffModel,
    x0: float,
    z_start: int,
    dt: float,
    steps: int,
    seeds: list,
) -> np.ndarray:
    """J on one simulated path per seed."""
    values = np.empty(len(seeds))
    for j, seed in enumerate(seeds):
        series = sample_ou_path(spec, x0, dt, steps, seed)
        values[j] = run_strategy(series, schedule, payoff, z_start, spec.r).J
    return values


def monte_carlo_value(
    spec: DiffusionSpec,
    schedule: Schedule,
    payoff: PayoffModel,
    x0: float,
    z_start: int,
    dt: float,
    n_paths: int,
    seed: Optional[int] = None,
    horizon: Optional[float] = None,
    batch_size: int = 16,
    mapper: Callable = serial_map,
) -> BacktestReport:
    """Estimate J from ``x0`` and level ``z_start`` over ``n_paths`` simulated paths.

    ``mapper(func, tasks)`` evaluates the path batches; the process-pool
    runner in ``switchpoint.workers`` is a drop-in replacement for the
    serial default. Results do not depend on the mapper.
    """
    if n_paths < 1:
        raise ValidationError("Invalid path count.", [f"n_paths must be >= 1, got {n_paths}"])
    horizon = horizon_for(spec.r) if horizon is None else float(horizon)
    steps = max(1, math.ceil(horizon / dt))
    tasks = [
        (spec, schedule, payoff, x0, z_start, dt, steps, batch)
        for batch in _batches(path_seeds(seed, n_paths), batch_size)
    ]
    values = np.concatenate(mapper(path_values, tasks))
    report = BacktestReport.from_values(
        values, horizon, math.exp(-spec.r * horizon) * payoff_bound(spec.alpha, spec.beta, schedule, payoff), seed, "simulated"
    )
    logger.info(f"Monte Carlo J over {n_paths} paths: {report.mean:.6g} +/- {report.se:.3g}")
    return report


def backtest_series(
    series: DemandSeries,
    schedule: Schedule,
    payoff: PayoffModel,
    z_start: int,
    r: float,
) -> BacktestReport:
    """Run the schedule on every gap-free segment of a recorded series."""
    runs = [
        run_strategy(DemandSeries(t, v, series.dt), schedule, payoff, z_start, r)
        for t, v in series.segments()
        if t.size >= 2
    ]
    if not runs:
        raise ValidationError("Nothing to backtest.", ["no segment has two samples"])
    horizon = max(run.horizon for run in runs)
    bound = payoff_bound(float(series.values.min()), float(series.values.max()), schedule, payoff)
    report = BacktestReport.from_values(
        [run.J for run in runs], horizon, math.exp(-r * horizon) * bound, None, "series"
    )
    logger.info(f"Backtest over {len(runs)} segments: mean J {report.mean:.6g}")
    return report


# --------------------------------------------------------------------------
# grid-search oracle
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleResult:
    """Monte Carlo J surface over a grid of ``(a, b)`` pairs; infeasible cells are NaN."""

    a_grid: np.ndarray
    b_grid: np.ndarray
    J: np.ndarray
    se: np.ndarray
    best: tuple[float, float]
    best_J: float
    unimodal_a: bool
    unimodal_b: bool
    seed: Optional[int] = None

    def to_frame(self) -> pd.DataFrame:
        a, b = np.meshgrid(self.a_grid, self.b_grid, indexing="ij")
        frame = pd.DataFrame({"a": a.ravel(), "b": b.ravel(), "J": self.J.ravel(), "se": self.se.ravel()})
        return frame.dropna(subset=["J"]).reset_index(drop=True)


def oracle_values(
    spec: DiffusionSpec,
    payoff: PayoffModel,
    a_grid: np.ndarray,
    b_grid: np.ndarray,
    x0: float,
    dt: float,
    steps: int,
    seeds: list,
    z_levels: tuple[float, float],
    factor: str,
) -> np.ndarray:
    """J for every feasible cell on each seed's path; the same path serves every cell."""
    values = np.full((len(seeds), a_grid.size, b_grid.size), np.nan)
    for j, seed in enumerate(seeds):
        series = sample_ou_path(spec, x0, dt, steps, seed)
        for p, a in enumerate(a_grid):
            for q, b in enumerate(b_grid):
                if a < b:
                    schedule = bang_bang_schedule(float(a), float(b), z_levels, factor)
                    values[j, p, q] = run_strategy(series, schedule, payoff, 0, spec.r).J
    return values


def _is_unimodal(values: np.ndarray, tolerance: np.ndarray) -> bool:
    """True when the finite values rise then fall, allowing noise up to ``tolerance``."""
    finite = np.isfinite(values)
    v, tol = values[finite], tolerance[finite]
    if v.size < 3:
        return True
    peak = int(np.argmax(v))
    rising = np.all(np.diff(v[: peak + 1]) >= -tol[1 : peak + 1])
    falling = np.all(np.diff(v[peak:]) <= tol[peak + 1 :])
    return bool(rising and falling)


def grid_search_oracle(
    spec: DiffusionSpec,
    payoff: PayoffModel,
    a_grid,
    b_grid,
    n_paths: int,
    horizon: Optional[float] = None,
    dt: float = 60.0,
    x0: Optional[float] = None,
    seed: Optional[int] = None,
    z_levels: tuple[float, float] = (0.0, 1.0),
    factor: str = STORAGE,
    batch_size: int = 8,
    mapper: Callable = serial_map,
) -> OracleResult:
    """Brute-force the single-increment control pair by Monte Carlo with common random numbers.

    Every ``(a, b)`` cell with ``a < b`` is evaluated on the same simulated
    paths, starting empty at ``x0`` (default ``theta``).
    """
    a_grid = np.asarray(a_grid, dtype=float)
    b_grid = np.asarray(b_grid, dtype=float)
    if a_grid.size == 0 or b_grid.size == 0 or not np.any(a_grid[:, None] < b_grid[None, :]):
        raise ValidationError("Empty oracle grid.", ["no cell satisfies a < b"])
    if n_paths < 1:
        raise ValidationError("Invalid path count.", [f"n_paths must be >= 1, got {n_paths}"])

    horizon = horizon_for(spec.r) if horizon is None else float(horizon)
    steps = max(1, math.ceil(horizon / dt))
    x0 = spec.theta if x0 is None else float(x0)
    tasks = [
        (spec, payoff, a_grid, b_grid, x0, dt, steps, batch, z_levels, factor)
        for batch in _batches(path_seeds(seed, n_paths), batch_size)
    ]
    samples = np.concatenate(mapper(oracle_values, tasks), axis=0)
    J = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(n_paths) if n_paths > 1 else np.zeros_like(J)

    p, q = np.unravel_index(np.nanargmax(J), J.shape)
    unimodal_a = _is_unimodal(J[:, q], 2.0 * se[:, q])
    unimodal_b = _is_unimodal(J[p, :], 2.0 * se[p, :])
    if not (unimodal_a and unimodal_b):
        logger.warning(f"J surface is not unimodal along a={unimodal_a}, b={unimodal_b} through the best cell.")
    result = OracleResult(
        a_grid, b_grid, J, se, (float(a_grid[p]), float(b_grid[q])), float(J[p, q]), unimodal_a, unimodal_b, seed
    )
    logger.info(f"Oracle best pair a={result.best[0]:.1f}, b={result.best[1]:.1f}, J={result.best_J:.6g}")
    return result

"""Model-free fundamental solutions estimated from an excess-demand series.

``E_x[exp(-r tau_y)]`` equals ``psi(x) / psi(y)`` for ``x <= y`` and
``phi(x) / phi(y)`` for ``x >= y``. Estimating that expectation between
adjacent grid levels and chaining the ratios outward from a reference level
gives psi and phi up to their multiplicative constants.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger
from scipy.interpolate import PchipInterpolator
from scipy.optimize import isotonic_regression

from switchpoint.models.exceptions import (
    EstimateQualityError,
    IngestError,
    InsufficientDataError,
    ParameterRangeError,
    ValidationError,
)
from switchpoint.models.fundamentals import FundamentalPair
from switchpoint.utils.enums import Provenance

GAP_FACTOR = 10.0
CENSORING_LIMIT = 0.2


@dataclass(frozen=True)
class DemandSeries:
    """Sampled excess demand, split into gap-free segments."""

    timestamps: np.ndarray
    values: np.ndarray
    dt: float
    segment_starts: tuple[int, ...] = (0,)
    gaps: tuple[tuple[int, float], ...] = ()

    @classmethod
    def from_arrays(cls, timestamps, values, dt: Optional[float] = None, gap_factor: float = GAP_FACTOR):
        t = np.asarray(timestamps, dtype=float)
        v = np.asarray(values, dtype=float)
        problems = []
        if t.shape != v.shape or t.ndim != 1:
            problems.append("timestamps and values must be 1-d arrays of equal length")
        elif t.size < 2:
            problems.append("a series needs at least two samples")
        else:
            if not np.all(np.isfinite(t)) or not np.all(np.isfinite(v)):
                problems.append("timestamps and values must be finite")
            if np.any(np.diff(t) <= 0):
                problems.append("timestamps must be strictly increasing")
        if problems:
            raise ValidationError("Invalid demand series.", problems)

        steps = np.diff(t)
        dt = float(np.median(steps)) if dt is None else float(dt)
        split = np.flatnonzero(steps > gap_factor * dt) + 1
        gaps = tuple((int(k), float(steps[k - 1])) for k in split)
        if gaps:
            logger.info(f"Series has {len(gaps)} gaps above {gap_factor} x dt, split into {len(gaps) + 1} segments.")
        return cls(t, v, dt, (0, *map(int, split)), gaps)

    def __len__(self) -> int:
        return int(self.values.size)

    def segments(self):
        """Yield ``(timestamps, values)`` for each gap-free segment."""
        bounds = (*self.segment_starts, len(self))
        for start, stop in zip(bounds[:-1], bounds[1:]):
            yield self.timestamps[start:stop], self.values[start:stop]

    def reflected(self, center: float) -> "DemandSeries":
        """Series mirrored about ``center``."""
        return DemandSeries(
            self.timestamps, 2.0 * center - self.values, self.dt, self.segment_starts, self.gaps
        )


# --------------------------------------------------------------------------
# ingestion
# --------------------------------------------------------------------------


def _parse_timestamps(raw: pd.Series, lines: np.ndarray) -> np.ndarray:
    numeric = pd.to_numeric(raw, errors="coerce")
    if numeric.notna().all():
        return np.array([float(s) for s in raw])
    parsed = pd.to_datetime(raw, utc=True, errors="coerce", format="ISO8601")
    bad = parsed.isna().to_numpy()
    if bad.any():
        raise IngestError("Unparseable timestamp.", line=int(lines[np.argmax(bad)]))
    epoch = pd.Timestamp("1970-01-01", tz="UTC")
    return ((parsed - epoch) / pd.Timedelta(seconds=1)).to_numpy(dtype=float)


def _parse_value(text: str, line: int) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise IngestError("Unparseable value.", line=line) from None
    if not math.isfinite(value):
        raise IngestError("Non-finite value.", line=line)
    return value


def ingest_csv(source, gap_factor: float = GAP_FACTOR) -> DemandSeries:
    """Read a two-column (timestamp, MW) CSV; the header row and ``#`` lines are optional."""
    try:
        frame = pd.read_csv(
            source,
            header=None,
            names=["timestamp", "value"],
            dtype=str,
            skip_blank_lines=False,
            keep_default_na=False,
        )
    except pd.errors.ParserError as e:
        raise IngestError(f"Malformed CSV: {e}") from e

    frame = frame.fillna("")
    lines = np.arange(1, len(frame) + 1)
    first = frame["timestamp"].str.strip()
    keep = (first != "") & ~first.str.startswith("#", na=False)
    frame, lines = frame[keep.to_numpy()], lines[keep.to_numpy()]
    if len(frame) and not _is_number(frame["value"].iloc[0]):
        # header row
        frame, lines = frame.iloc[1:], lines[1:]
    if len(frame) < 2:
        raise IngestError("A demand series needs at least two rows.")

    values = np.array(
        [_parse_value(text.strip(), int(line)) for text, line in zip(frame["value"], lines)]
    )
    timestamps = _parse_timestamps(frame["timestamp"].str.strip(), lines)
    steps = np.diff(timestamps)
    if np.any(steps <= 0):
        raise IngestError("Timestamps must be strictly increasing.", line=int(lines[np.argmax(steps <= 0) + 1]))

    series = DemandSeries.from_arrays(timestamps, values, gap_factor=gap_factor)
    logger.info(f"Ingested {len(series)} samples, dt={series.dt:.6g} s, {len(series.gaps)} gaps.")
    return series


def _is_number(text: str) -> bool:
    try:
        float(text)
    except (TypeError, ValueError):
        return False
    return True


def export_csv(series: DemandSeries, target) -> None:
    """Write ``timestamp,value`` rows with shortest round-trip float text."""
    pd.DataFrame({"timestamp": series.timestamps, "value": series.values}).to_csv(
        target, index=False
    )


# --------------------------------------------------------------------------
# discounted hitting times
# --------------------------------------------------------------------------


def _crossing_times(t: np.ndarray, v: np.ndarray, level: float, upward: bool) -> np.ndarray:
    d = v - level
    if upward:
        mask = (d[:-1] < 0) & (d[1:] >= 0)
    else:
        mask = (d[:-1] > 0) & (d[1:] <= 0)
    k = np.flatnonzero(mask)
    fraction = -d[k] / (d[k + 1] - d[k])
    return t[k] + fraction * (t[k + 1] - t[k])


class CrossingIndex:
    """Per-segment level crossing times, computed once per level."""

    def __init__(self, series: DemandSeries):
        self.series = series
        self._segments = list(series.segments())
        self._cache: dict[tuple[float, bool], list[np.ndarray]] = {}

    def crossings(self, level: float, upward: bool) -> list[np.ndarray]:
        key = (float(level), upward)
        if key not in self._cache:
            self._cache[key] = [_crossing_times(t, v, level, upward) for t, v in self._segments]
        return self._cache[key]


@dataclass(frozen=True)
class DiscountEstimate:
    """Mean of ``exp(-r tau)`` over completed episodes from one level to another."""

    from_level: float
    to_level: float
    mean: float
    se: float
    count: int
    censored: int

    @property
    def censored_fraction(self) -> float:
        total = self.count + self.censored
        return self.censored / total if total else 0.0

    @property
    def flagged(self) -> bool:
        return self.censored_fraction > CENSORING_LIMIT


def _estimate(index: CrossingIndex, from_level: float, to_level: float, r: float) -> DiscountEstimate:
    starts = index.crossings(from_level, upward=True)
    if from_level == to_level:
        count = int(sum(s.size for s in starts))
        return DiscountEstimate(from_level, to_level, 1.0, 0.0, count, 0)

    targets = index.crossings(to_level, upward=to_level > from_level)
    taus, censored = [], 0
    for start, target in zip(starts, targets):
        position = np.searchsorted(target, start, side="right")
        done = position < target.size
        censored += int((~done).sum())
        taus.append(target[position[done]] - start[done])
    tau = np.concatenate(taus) if taus else np.empty(0)
    if tau.size == 0:
        raise InsufficientDataError((from_level, to_level), 0, 1)

    discounts = np.exp(-r * tau)
    se = float(np.std(discounts, ddof=1) / math.sqrt(tau.size)) if tau.size > 1 else math.inf
    return DiscountEstimate(from_level, to_level, float(discounts.mean()), se, int(tau.size), censored)


def estimate_discount_factor(
    series: DemandSeries, from_level: float, to_level: float, r: float
) -> DiscountEstimate:
    """Estimate ``E[exp(-r tau)]`` for the first passage from ``from_level`` to ``to_level``.

    Every up-crossing of ``from_level`` starts an episode; episodes may
    overlap. Crossing times are linearly interpolated between samples.
    Episodes still running when their segment ends are censored: dropped from
    the mean and counted.
    """
    if r <= 0:
        raise ValidationError("Invalid discount rate.", [f"r must be > 0, got {r}"])
    low, high = float(series.values.min()), float(series.values.max())
    for level in (from_level, to_level):
        if not low <= level <= high:
            raise ValidationError(
                "Level outside the observed range.", [f"{level} not in [{low}, {high}]"]
            )
    estimate = _estimate(CrossingIndex(series), float(from_level), float(to_level), r)
    if estimate.flagged:
        logger.warning(
            f"Link {from_level} -> {to_level}: {estimate.censored_fraction:.1%} of episodes censored."
        )
    return estimate


def default_grid(series: DemandSeries, levels: int = 101, coverage: float = 0.98) -> np.ndarray:
    """Uniform levels spanning the central ``coverage`` share of the observed values."""
    tail = 0.5 * (1.0 - coverage)
    low, high = np.quantile(series.values, [tail, 1.0 - tail])
    return np.linspace(low, high, levels)


@dataclass(frozen=True)
class ConsistencyCheck:
    product: float
    direct: float
    combined_se: float

    @property
    def within(self) -> bool:
        return abs(self.product - self.direct) <= 3.0 * self.combined_se


def chain_consistency(series: DemandSeries, x: float, y: float, z: float, r: float) -> ConsistencyCheck:
    """Compare ``E(x->y) E(y->z)`` with ``E(x->z)`` for levels ordered ``x < y < z``."""
    if not x < y < z:
        raise ValidationError("Invalid chain.", [f"levels must satisfy x < y < z, got {x}, {y}, {z}"])
    index = CrossingIndex(series)
    first, second = _estimate(index, x, y, r), _estimate(index, y, z, r)
    direct = _estimate(index, x, z, r)
    product = first.mean * second.mean
    product_se = math.hypot(second.mean * first.se, first.mean * second.se)
    check = ConsistencyCheck(product, direct.mean, math.hypot(product_se, direct.se))
    if not check.within:
        logger.warning(
            f"Chain {x} -> {y} -> {z}: product {product:.6g} vs direct {direct.mean:.6g} "
            f"beyond 3 SE ({check.combined_se:.3g})."
        )
    return check


# --------------------------------------------------------------------------
# empirical fundamentals
# --------------------------------------------------------------------------


@dataclass
class EmpiricalFundamentals(FundamentalPair):
    """Tabulated psi and phi with monotone cubic interpolation of their logarithms."""

    grid: np.ndarray
    psi_hat: np.ndarray
    phi_hat: np.ndarray
    up_counts: np.ndarray
    down_counts: np.ndarray
    anchor: float
    r: float
    censored: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    flagged_links: list = field(default_factory=list)
    provenance: Provenance = field(default=Provenance.EMPIRICAL, init=False)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.psi_hat = np.asarray(self.psi_hat, dtype=float)
        self.phi_hat = np.asarray(self.phi_hat, dtype=float)
        if np.any(self.psi_hat <= 0) or np.any(self.phi_hat <= 0):
            raise ValidationError("Invalid empirical fundamentals.", ["tabulated values must be positive"])
        self._log_psi = PchipInterpolator(self.grid, np.log(self.psi_hat), extrapolate=False)
        self._log_phi = PchipInterpolator(self.grid, np.log(self.phi_hat), extrapolate=False)

    @property
    def domain(self) -> tuple[float, float]:
        return (float(self.grid[0]), float(self.grid[-1]))

    def _check(self, x) -> np.ndarray:
        xs = np.asarray(x, dtype=float)
        low, high = self.domain
        if np.any(xs < low) or np.any(xs > high):
            bad = np.ravel(xs[(xs < low) | (xs > high)] if xs.ndim else xs)[0]
            raise ParameterRangeError("Outside the estimation grid.", x=float(bad))
        return xs

    @staticmethod
    def _out(values):
        return float(values) if np.ndim(values) == 0 else values

    def psi(self, x):
        return self._out(np.exp(self._log_psi(self._check(x))))

    def phi(self, x):
        return self._out(np.exp(self._log_phi(self._check(x))))

    def dpsi(self, x):
        xs = self._check(x)
        return self._out(np.exp(self._log_psi(xs)) * self._log_psi(xs, 1))

    def dphi(self, x):
        xs = self._check(x)
        return self._out(np.exp(self._log_phi(xs)) * self._log_phi(xs, 1))

    def d2psi(self, x):
        xs = self._check(x)
        slope = self._log_psi(xs, 1)
        return self._out(np.exp(self._log_psi(xs)) * (self._log_psi(xs, 2) + slope**2))

    def d2phi(self, x):
        xs = self._check(x)
        slope = self._log_phi(xs, 1)
        return self._out(np.exp(self._log_phi(xs)) * (self._log_phi(xs, 2) + slope**2))

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "psi_hat": self.psi_hat.tolist(),
            "phi_hat": self.phi_hat.tolist(),
            "up_counts": np.asarray(self.up_counts).tolist(),
            "down_counts": np.asarray(self.down_counts).tolist(),
            "censored": np.asarray(self.censored).tolist(),
            "flagged_links": [list(link) for link in self.flagged_links],
            "anchor": self.anchor,
            "r": self.r,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EmpiricalFundamentals":
        return cls(
            grid=data["grid"],
            psi_hat=data["psi_hat"],
            phi_hat=data["phi_hat"],
            up_counts=np.asarray(data["up_counts"]),
            down_counts=np.asarray(data["down_counts"]),
            anchor=float(data["anchor"]),
            r=float(data["r"]),
            censored=np.asarray(data.get("censored", [])),
            flagged_links=[tuple(link) for link in data.get("flagged_links", [])],
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=4))

    @classmethod
    def from_json(cls, path) -> "EmpiricalFundamentals":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _repair(log_values: np.ndarray, increasing: bool, tolerance: float, name: str) -> np.ndarray:
    """Project a log chain onto monotone sequences; fail when the projection moves it too far."""
    result = isotonic_regression(log_values, increasing=increasing)
    fitted = np.asarray(result.x, dtype=float)
    moved = float(np.max(np.abs(fitted - log_values)))
    if moved > tolerance:
        raise EstimateQualityError(
            f"{name} chain is not monotone (repair moved log values by {moved:.3g}).",
            {"max_log_change": moved, "tolerance": tolerance},
        )
    if moved > 0:
        logger.warning(f"{name} chain repaired, max log change {moved:.3g}.")
    return fitted


def build_empirical_fundamentals(
    series: DemandSeries,
    grid,
    r: float,
    x_ref: float,
    min_count: int = 30,
    repair_tolerance: float = 0.05,
    threads: int = 1,
) -> EmpiricalFundamentals:
    """
    Chain adjacent-level discount estimates into psi and phi on ``grid``.

    Moving up one level multiplies psi by ``1 / E(x_k -> x_{k+1})`` and phi by
    ``E(x_{k+1} -> x_k)``; moving down reverses both. The chain is anchored so
    that both functions equal 1 at the grid level nearest ``x_ref``.

    Raises
    ------
    InsufficientDataError
        If any link has fewer than ``min_count`` completed episodes.
    EstimateQualityError
        If monotone repair would move a log value by more than ``repair_tolerance``.
    """
    grid = np.sort(np.asarray(grid, dtype=float))
    if grid.size < 3:
        raise ValidationError("Invalid grid.", ["at least three levels are required"])
    low, high = float(series.values.min()), float(series.values.max())
    if grid[0] < low or grid[-1] > high:
        raise ValidationError("Grid outside the observed range.", [f"[{grid[0]}, {grid[-1]}] not in [{low}, {high}]"])
    if r <= 0:
        raise ValidationError("Invalid discount rate.", [f"r must be > 0, got {r}"])

    index = CrossingIndex(series)
    for level in grid:
        index.crossings(level, True)
        index.crossings(level, False)

    links = [(k, float(grid[k]), float(grid[k + 1])) for k in range(grid.size - 1)]
    up: dict[int, DiscountEstimate] = {}
    down: dict[int, DiscountEstimate] = {}

    def run(k, lower, upper):
        return k, _estimate(index, lower, upper, r), _estimate(index, upper, lower, r)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            futures = [executor.submit(run, *link) for link in links]
            for future in as_completed(futures):
                k, up[k], down[k] = future.result()
    else:
        for link in links:
            k, up[k], down[k] = run(*link)

    flagged = []
    for k, lower, upper in links:
        for estimate in (up[k], down[k]):
            if estimate.count < min_count:
                raise InsufficientDataError(
                    (estimate.from_level, estimate.to_level), estimate.count, min_count
                )
            if estimate.flagged:
                flagged.append((estimate.from_level, estimate.to_level))
    if flagged:
        logger.warning(f"{len(flagged)} links have more than {CENSORING_LIMIT:.0%} censored episodes.")

    up_means = np.array([up[k].mean for k in range(len(links))])
    down_means = np.array([down[k].mean for k in range(len(links))])
    log_psi = np.concatenate([[0.0], np.cumsum(-np.log(up_means))])
    log_phi = np.concatenate([[0.0], np.cumsum(np.log(down_means))])

    ref = int(np.argmin(np.abs(grid - x_ref)))
    if grid[ref] != x_ref:
        logger.info(f"Anchoring at grid level {grid[ref]:.3f} MW nearest to {x_ref} MW.")
    log_psi = _repair(log_psi - log_psi[ref], True, repair_tolerance, "psi")
    log_phi = _repair(log_phi - log_phi[ref], False, repair_tolerance, "phi")
    log_psi -= log_psi[ref]
    log_phi -= log_phi[ref]

    fundamentals = EmpiricalFundamentals(
        grid=grid,
        psi_hat=np.exp(log_psi),
        phi_hat=np.exp(log_phi),
        up_counts=np.array([up[k].count for k in range(len(links))]),
        down_counts=np.array([down[k].count for k in range(len(links))]),
        anchor=float(grid[ref]),
        r=r,
        censored=np.array(
            [[up[k].censored_fraction, down[k].censored_fraction] for k in range(len(links))]
        ),
        flagged_links=flagged,
    )
    logger.info(
        f"Empirical fundamentals on {grid.size} levels, min link count "
        f"{int(min(fundamentals.up_counts.min(), fundamentals.down_counts.min()))}."
    )
    return fundamentals

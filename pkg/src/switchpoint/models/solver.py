"""Smooth-fit systems for the optimal charge and discharge thresholds.

For a level ``i`` with charge factor value ``y_f`` and discharge factor value
``y_e`` the thresholds ``(a, b)`` solve

    Z_f(y_f) q_psi_f(a) = Z_e(y_e) q_psi_e(b)
    Z_f(y_f) q_phi_f(a) = Z_e(y_e) q_phi_e(b)

with ``q_psi_G = (G' psi - G psi') / W`` and ``q_phi_G = (G' phi - G phi') / W``.
The two sides of the first line give ``A_i - A_{i+1}``, those of the second
``B_{i+1} - B_i``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import pandas as pd
from loguru import logger
from scipy import optimize

from switchpoint.models.exceptions import (
    CalibrationError,
    MultipleSolutionsError,
    NoSolutionError,
    ParameterRangeError,
    SwitchPointError,
    ValidationError,
)
from switchpoint.models.fundamentals import (
    DiffusionSpec,
    FundamentalPair,
    check_trends,
    make_analytic_fundamentals,
)
from switchpoint.models.payoff import STORAGE, PayoffModel
from switchpoint.utils.enums import Elimination, Side

RESIDUAL_FLOOR = 1e-12


@dataclass(frozen=True)
class SolverSettings:
    """Root-finding tolerances and brackets.

    ``xtol`` is the absolute threshold tolerance in MW handed to Brent's
    method; it is kept well below the 1e-3 MW boundary tolerance so the
    relative smooth-fit residual lands under ``tol_resid``.
    """

    tol_resid: float = 1e-7
    xtol: float = 1e-6
    maxiter: int = 200
    scan_points: int = 48
    b_grid_points: int = 64
    bracket_fraction: float = 0.01
    a_bracket: Optional[tuple[float, float]] = None
    b_bracket: Optional[tuple[float, float]] = None
    elimination: Elimination = Elimination.BOUNDARY_GAP
    check_trends: bool = True
    warm_start: bool = True
    warm_width: float = 2000.0
    warm_points: int = 9

    def brackets(self, pair: FundamentalPair, theta: float):
        alpha, beta = pair.domain
        eps = self.bracket_fraction * (beta - alpha)
        a_bracket = self.a_bracket or (alpha + eps, theta)
        b_bracket = self.b_bracket or (theta, beta - eps)
        return tuple(map(float, a_bracket)), tuple(map(float, b_bracket))


@dataclass(frozen=True)
class QFunctions:
    """q-functions of one payoff side, premultiplied by that side's factor scale."""

    pair: FundamentalPair
    side: Side
    G: Callable
    dG: Callable
    d2G: Callable
    scale: float = 1.0

    def _check(self, x):
        alpha, beta = self.pair.domain
        xs = np.asarray(x, dtype=float)
        if np.any(xs <= alpha) or np.any(xs >= beta):
            bad = xs[(xs <= alpha) | (xs >= beta)] if xs.ndim else xs
            raise ParameterRangeError(
                f"q-function evaluated outside ({alpha}, {beta}).", x=float(np.ravel(bad)[0])
            )
        return xs

    def _numerator(self, x, fundamental, derivative):
        return self.dG(x) * fundamental(x) - self.G(x) * derivative(x)

    def q_psi(self, x):
        x = self._check(x)
        p = self.pair
        return self.scale * self._numerator(x, p.psi, p.dpsi) / p.wronskian(x)

    def q_phi(self, x):
        x = self._check(x)
        p = self.pair
        return self.scale * self._numerator(x, p.phi, p.dphi) / p.wronskian(x)

    def _derivative(self, x, fundamental, derivative, second):
        p = self.pair
        w = p.wronskian(x)
        numerator = self._numerator(x, fundamental, derivative)
        d_numerator = self.d2G(x) * fundamental(x) - self.G(x) * second(x)
        return self.scale * (d_numerator * w - numerator * p.dwronskian(x)) / w**2

    def dq_psi(self, x):
        x = self._check(x)
        p = self.pair
        return self._derivative(x, p.psi, p.dpsi, p.d2psi)

    def dq_phi(self, x):
        x = self._check(x)
        p = self.pair
        return self._derivative(x, p.phi, p.dphi, p.d2phi)

    def quotient_q_psi(self, x):
        """``d/dx(G / psi) * psi**2 / W`` via the quotient rule."""
        x = self._check(x)
        p = self.pair
        psi = p.psi(x)
        slope = (self.dG(x) * psi - self.G(x) * p.dpsi(x)) / psi**2
        return self.scale * slope * psi**2 / p.wronskian(x)

    def quotient_q_phi(self, x):
        x = self._check(x)
        p = self.pair
        phi = p.phi(x)
        slope = (self.dG(x) * phi - self.G(x) * p.dphi(x)) / phi**2
        return self.scale * slope * phi**2 / p.wronskian(x)


def build_q(
    pair: FundamentalPair,
    payoff: PayoffModel,
    side: Side,
    exclude: Optional[str] = None,
) -> QFunctions:
    """q-functions of ``payoff`` on ``side`` at its current factor values.

    ``exclude`` leaves one factor out of the premultiplier, which is how the
    sensitivity equations consume them.
    """
    G, dG, d2G = payoff.base.side(side)
    return QFunctions(pair, side, G, dG, d2G, payoff.side_scale(side, exclude))


@dataclass(frozen=True)
class ControlPair:
    """Charge threshold ``a`` and discharge threshold ``b`` in MW."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValidationError("Invalid control pair.", [f"a={self.a} must be < b={self.b}"])

    def within(self, domain: tuple[float, float]) -> bool:
        return domain[0] < self.a < self.b < domain[1]

    def shifted(self, da: float, db: float) -> "ControlPair":
        return ControlPair(self.a + da, self.b + db)


def _relative(lhs: float, rhs: float) -> float:
    return abs(lhs - rhs) / (abs(lhs) + abs(rhs) + RESIDUAL_FLOOR)


def smooth_fit_residuals(charge: QFunctions, discharge: QFunctions, control: ControlPair):
    """Relative residuals of the psi and phi smooth-fit equations."""
    return (
        _relative(float(charge.q_psi(control.a)), float(discharge.q_psi(control.b))),
        _relative(float(charge.q_phi(control.a)), float(discharge.q_phi(control.b))),
    )


# --------------------------------------------------------------------------
# one smooth-fit system
# --------------------------------------------------------------------------


class SmoothFitSystem:
    """Reduces the two-equation system to a scalar root problem in ``a``."""

    def __init__(
        self,
        charge: QFunctions,
        discharge: QFunctions,
        a_bracket: tuple[float, float],
        b_bracket: tuple[float, float],
        settings: SolverSettings,
    ):
        self.charge = charge
        self.discharge = discharge
        self.a_bracket = a_bracket
        self.b_bracket = b_bracket
        self.settings = settings
        self.b_grid = np.linspace(*b_bracket, settings.b_grid_points)
        self._b_psi = np.asarray(discharge.q_psi(self.b_grid), dtype=float)
        self._b_phi = np.asarray(discharge.q_phi(self.b_grid), dtype=float)

    def _invert(self, target: float, grid_values: np.ndarray, func: Callable) -> float:
        """Smallest b on the grid bracket with ``func(b) = target``; nan if none."""
        diff = grid_values - target
        hits = np.flatnonzero(np.sign(diff[:-1]) * np.sign(diff[1:]) <= 0)
        if hits.size == 0:
            return math.nan
        k = int(hits[0])
        lo, hi = self.b_grid[k], self.b_grid[k + 1]
        if diff[k] == 0.0:
            return float(lo)
        if diff[k + 1] == 0.0:
            return float(hi)
        if hits.size > 1:
            logger.debug(f"Inner map has {hits.size} crossings, using the lowest b.")
        return optimize.brentq(
            lambda b: float(func(b)) - target,
            lo,
            hi,
            xtol=self.settings.xtol,
            maxiter=self.settings.maxiter,
        )

    def ell_a(self, a: float) -> float:
        """b solving the psi-equation for this a."""
        return self._invert(float(self.charge.q_psi(a)), self._b_psi, self.discharge.q_psi)

    def ell_b(self, a: float) -> float:
        """b solving the phi-equation for this a."""
        return self._invert(float(self.charge.q_phi(a)), self._b_phi, self.discharge.q_phi)

    def reduced(self, a: float) -> float:
        mode = self.settings.elimination
        if mode is Elimination.BOUNDARY_GAP:
            return self.ell_a(a) - self.ell_b(a)
        if mode is Elimination.PSI_FIRST:
            b = self.ell_a(a)
            if math.isnan(b):
                return math.nan
            return float(self.charge.q_phi(a)) - float(self.discharge.q_phi(b))
        b = self.ell_b(a)
        if math.isnan(b):
            return math.nan
        return float(self.charge.q_psi(a)) - float(self.discharge.q_psi(b))

    def pair_at(self, a: float) -> tuple[float, float]:
        mode = self.settings.elimination
        if mode is Elimination.PSI_FIRST:
            return a, self.ell_a(a)
        if mode is Elimination.PHI_FIRST:
            return a, self.ell_b(a)
        return a, 0.5 * (self.ell_a(a) + self.ell_b(a))

    def roots(self, a_grid: np.ndarray) -> list[ControlPair]:
        values = np.array([self.reduced(a) for a in a_grid])
        logger.debug(f"Reduced system scanned at {a_grid.size} points, {np.isfinite(values).sum()} defined.")
        found = []
        for k in range(a_grid.size - 1):
            lo, hi = values[k], values[k + 1]
            if not (math.isfinite(lo) and math.isfinite(hi)):
                continue
            if lo == 0.0:
                root = a_grid[k]
            elif lo * hi < 0.0:
                try:
                    root = optimize.brentq(
                        self.reduced,
                        a_grid[k],
                        a_grid[k + 1],
                        xtol=self.settings.xtol,
                        maxiter=self.settings.maxiter,
                    )
                except (ValueError, RuntimeError) as e:
                    logger.debug(f"Refinement failed in [{a_grid[k]}, {a_grid[k + 1]}]: {e}")
                    continue
            else:
                continue
            a, b = self.pair_at(root)
            if not math.isfinite(b) or not a < b:
                continue
            control = ControlPair(float(a), float(b))
            residual = max(smooth_fit_residuals(self.charge, self.discharge, control))
            if residual >= self.settings.tol_resid:
                # sign change across a discontinuity of the inner maps
                logger.warning(
                    f"Discarding candidate {control} with residual {residual:.3e}."
                )
                continue
            found.append(control)
        if values.size and values[-1] == 0.0:
            a, b = self.pair_at(a_grid[-1])
            if math.isfinite(b) and a < b:
                found.append(ControlPair(float(a), float(b)))
        return found


def solve_bang_bang(
    charge: QFunctions,
    discharge: QFunctions,
    bracket: Optional[tuple[float, float]] = None,
    settings: SolverSettings = SolverSettings(),
    theta: Optional[float] = None,
) -> ControlPair:
    """Solve the smooth-fit system for one ``(a, b)`` pair.

    The a-bracket defaults to ``(alpha + eps, theta)`` and the b-bracket to
    ``(theta, beta - eps)``. ``theta`` defaults to the domain midpoint when the
    pair does not carry a diffusion.
    """
    pair = charge.pair
    if theta is None:
        spec = getattr(pair, "spec", None)
        theta = spec.theta if spec is not None else 0.5 * sum(pair.domain)
    default_a, b_bracket = settings.brackets(pair, theta)
    a_bracket = tuple(map(float, bracket)) if bracket is not None else default_a

    system = SmoothFitSystem(charge, discharge, a_bracket, b_bracket, settings)
    roots = system.roots(np.linspace(*a_bracket, settings.scan_points))
    details = {"a_bracket": list(a_bracket), "b_bracket": list(b_bracket)}
    if not roots:
        raise NoSolutionError(details=details)
    if len(roots) > 1:
        raise MultipleSolutionsError([(r.a, r.b) for r in roots], details)
    control = roots[0]
    logger.debug(f"Solved control pair a={control.a:.4f} MW, b={control.b:.4f} MW")
    return control


def _theta_of(pair: FundamentalPair) -> float:
    spec = getattr(pair, "spec", None)
    return spec.theta if spec is not None else 0.5 * sum(pair.domain)


def _rate_of(pair: FundamentalPair) -> Optional[float]:
    spec = getattr(pair, "spec", None)
    return spec.r if spec is not None else getattr(pair, "r", None)


def level_qs(
    pair: FundamentalPair,
    payoff: PayoffModel,
    factor: Optional[str],
    y_charge: Optional[float],
    y_discharge: Optional[float],
    exclude: bool = False,
) -> tuple[QFunctions, QFunctions]:
    """Charge and discharge q-functions with the factor set to the given values."""
    model = payoff
    if factor is not None:
        model = payoff.with_values(factor, y_charge, y_discharge)
    excluded = factor if exclude else None
    return (
        build_q(pair, model, Side.CHARGE, excluded),
        build_q(pair, model, Side.DISCHARGE, excluded),
    )


def solve_level(
    pair: FundamentalPair,
    payoff: PayoffModel,
    factor: Optional[str],
    y_charge: Optional[float],
    y_discharge: Optional[float],
    settings: SolverSettings = SolverSettings(),
    bracket: Optional[tuple[float, float]] = None,
) -> ControlPair:
    """Solve the system with the charge side at ``y_charge`` and the discharge side at ``y_discharge``."""
    charge, discharge = level_qs(pair, payoff, factor, y_charge, y_discharge)
    return solve_bang_bang(charge, discharge, bracket, settings, _theta_of(pair))


# --------------------------------------------------------------------------
# schedules
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Thresholds ``a_0..a_{n-1}``, ``b_1..b_n`` and coefficients ``A_0..A_n``, ``B_0..B_n``.

    ``r`` records the discount rate the thresholds were solved at, when known.
    """

    z_grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    A: np.ndarray
    B: np.ndarray
    factor: str = STORAGE
    residuals: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    r: Optional[float] = None

    def __post_init__(self):
        n = self.n
        problems = []
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            problems.append("lower and upper must have n entries")
        else:
            crossed = np.flatnonzero(~(self.lower < self.upper))
            if crossed.size:
                problems.append(f"a_i must be < b_(i+1), violated at levels {crossed.tolist()}")
        if self.r is not None and not self.r > 0:
            problems.append(f"r must be > 0, got {self.r}")
        if self.A.shape != (n + 1,) or self.B.shape != (n + 1,):
            problems.append("A and B must have n + 1 entries")
        steps = np.diff(self.z_grid)
        if steps.size and not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            problems.append("z grid must be uniform")
        if problems:
            raise ValidationError("Invalid schedule.", problems)

    @property
    def n(self) -> int:
        return int(self.z_grid.size - 1)

    @property
    def pairs(self) -> list[ControlPair]:
        return [ControlPair(float(a), float(b)) for a, b in zip(self.lower, self.upper)]

    def charge_threshold(self, i: int) -> float:
        """``a_i``; no charging from the full level."""
        return float(self.lower[i]) if i < self.n else -math.inf

    def discharge_threshold(self, i: int) -> float:
        """``b_i``; no discharging from the empty level."""
        return float(self.upper[i - 1]) if i > 0 else math.inf

    def to_frame(self) -> pd.DataFrame:
        n = self.n
        return pd.DataFrame(
            {
                "i": np.arange(n + 1),
                "z_i": self.z_grid,
                "a_i": np.append(self.lower, np.nan),
                "b_i_plus_1": np.append(self.upper, np.nan),
                "A_i": self.A,
                "B_i": self.B,
            }
        )

    def to_dict(self) -> dict:
        return {
            "factor": self.factor,
            "z_grid": self.z_grid.tolist(),
            "a": self.lower.tolist(),
            "b": self.upper.tolist(),
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "residuals": np.asarray(self.residuals).tolist(),
            "r_per_s": self.r,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Schedule":
        try:
            return cls(
                z_grid=np.asarray(data["z_grid"], dtype=float),
                lower=np.asarray(data["a"], dtype=float),
                upper=np.asarray(data["b"], dtype=float),
                A=np.asarray(data["A"], dtype=float),
                B=np.asarray(data["B"], dtype=float),
                factor=data.get("factor", STORAGE),
                residuals=np.asarray(data.get("residuals", []), dtype=float).reshape(-1, 2),
                r=data.get("r_per_s"),
            )
        except KeyError as e:
            raise ValidationError("Invalid schedule file.", [f"missing key {e}"]) from e

    @classmethod
    def from_json(cls, path) -> "Schedule":
        with open(path, "r") as f:
            return cls.from_dict(json.load(f))


def storage_grid(payoff: PayoffModel, factor: str, n: int) -> np.ndarray:
    """Uniform grid ``z_0..z_n`` over the factor curve domain."""
    if n < 1:
        raise ValidationError("Invalid schedule size.", [f"n must be >= 1, got {n}"])
    charge, _ = payoff.curves(factor)
    low, high = charge.domain
    return np.linspace(low, high, n + 1)


def coefficients_from(differences_a: np.ndarray, differences_b: np.ndarray):
    """Accumulate ``A_i - A_{i+1}`` and ``B_{i+1} - B_i`` with ``A_n = B_0 = 0``."""
    A = np.append(np.cumsum(differences_a[::-1])[::-1], 0.0)
    B = np.insert(np.cumsum(differences_b), 0, 0.0)
    return A, B


def _annotate(error: SwitchPointError, **coordinates) -> SwitchPointError:
    error.details.update(coordinates)
    return error


def solve_schedule(
    pair: FundamentalPair,
    payoff: PayoffModel,
    n: int,
    factor: str = STORAGE,
    settings: SolverSettings = SolverSettings(),
    levels: Optional[list[ControlPair]] = None,
) -> Schedule:
    """Solve every level of the marginal schedule and recover the coefficients.

    Level ``i`` pairs the charge factor at ``z_i`` with the discharge factor at
    ``z_{i+1}``. With warm starts each level is first searched near the
    previous one. ``levels`` lets a caller supply already solved pairs (the
    process-pool runner does).
    """
    z = storage_grid(payoff, factor, n)
    if settings.check_trends:
        report = check_trends(pair, payoff.with_value(factor, float(z[0])))
        if not report.passed:
            logger.warning(f"Action-region trend check failed: {report.failures}")
    no_check = dataclasses.replace(settings, check_trends=False)

    solved: list[ControlPair] = list(levels or [])
    for i in range(len(solved), n):
        try:
            solved.append(solve_schedule_level(pair, payoff, factor, z, i, solved, no_check))
        except SwitchPointError as e:
            raise _annotate(e, level=i, z=float(z[i])) from None
        logger.debug(f"Level {i}: a={solved[-1].a:.3f}, b={solved[-1].b:.3f}")

    schedule = assemble_schedule(pair, payoff, factor, z, solved)
    logger.info(
        f"Schedule over {n} levels: a {schedule.lower[0]:.2f} -> {schedule.lower[-1]:.2f} MW, "
        f"b {schedule.upper[0]:.2f} -> {schedule.upper[-1]:.2f} MW"
    )
    return schedule


def assemble_schedule(
    pair: FundamentalPair,
    payoff: PayoffModel,
    factor: str,
    z: np.ndarray,
    solved: list[ControlPair],
) -> Schedule:
    """Recover the coefficients for solved level pairs and pack them into a schedule."""
    n = len(solved)
    lower = np.array([c.a for c in solved])
    upper = np.array([c.b for c in solved])
    diff_a = np.empty(n)
    diff_b = np.empty(n)
    residuals = np.empty((n, 2))
    for i, control in enumerate(solved):
        charge, discharge = level_qs(pair, payoff, factor, float(z[i]), float(z[i + 1]))
        diff_a[i] = float(charge.q_psi(control.a))
        diff_b[i] = float(charge.q_phi(control.a))
        residuals[i] = smooth_fit_residuals(charge, discharge, control)
    A, B = coefficients_from(diff_a, diff_b)
    return Schedule(np.asarray(z, dtype=float), lower, upper, A, B, factor, residuals, _rate_of(pair))


def solve_schedule_level(pair, payoff, factor, z, i, solved, settings) -> ControlPair:
    """Solve level ``i``, searching near the last entry of ``solved`` first when warm starts are on."""
    y_f, y_e = float(z[i]), float(z[i + 1])
    if settings.warm_start and solved:
        previous = solved[-1]
        default_a, _ = settings.brackets(pair, _theta_of(pair))
        lo = max(default_a[0], previous.a - settings.warm_width)
        hi = min(default_a[1], previous.a + settings.warm_width)
        warm = dataclasses.replace(settings, scan_points=settings.warm_points)
        try:
            return solve_level(pair, payoff, factor, y_f, y_e, warm, (lo, hi))
        except (NoSolutionError, MultipleSolutionsError):
            logger.debug(f"Warm start failed at level {i}, scanning the full bracket.")
    return solve_level(pair, payoff, factor, y_f, y_e, settings)


def value_function(
    schedule: Schedule,
    pair: FundamentalPair,
    payoff: PayoffModel,
    x: float,
    i: int,
) -> float:
    """Value ``w(x, z_i)`` of holding level ``i`` at excess demand ``x``."""
    n = schedule.n
    if not 0 <= i <= n:
        raise ValidationError("Invalid level.", [f"level {i} outside 0..{n}"])
    A, B = schedule.A, schedule.B
    model = payoff.with_value(schedule.factor, float(schedule.z_grid[i]))
    phi, psi = float(pair.phi(x)), float(pair.psi(x))
    if i < n and x <= schedule.lower[i]:
        return A[i + 1] * phi + B[i + 1] * psi - float(model.F(x))
    if i > 0 and x >= schedule.upper[i - 1]:
        return A[i - 1] * phi + B[i - 1] * psi + float(model.E(x))
    return A[i] * phi + B[i] * psi


# --------------------------------------------------------------------------
# discount rate calibration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationResult:
    r: float
    a0: float
    b1: float
    target: float

    @property
    def relative_error(self) -> float:
        return abs(self.a0 - self.target) / abs(self.target)

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "a0_mw": self.a0,
            "b1_mw": self.b1,
            "target_mw": self.target,
            "relative_error": self.relative_error,
        }


def calibrate_rate(
    spec: DiffusionSpec,
    payoff: PayoffModel,
    target_a0: float,
    factor: Optional[str] = STORAGE,
    n: int = 100,
    bracket: tuple[float, float] = (1e-6, 1.0),
    grid_points: int = 25,
    tolerance: float = 0.01,
    settings: SolverSettings = SolverSettings(),
) -> CalibrationResult:
    """Find the discount rate whose first charge threshold equals ``target_a0``.

    A log-spaced scan of ``r`` over ``bracket`` locates a sign change of
    ``a_0(r) - target``, which Brent's method refines in ``log r``.
    """
    quiet = dataclasses.replace(settings, check_trends=False, warm_start=False)
    if factor is not None and factor in payoff.factor_names():
        z = storage_grid(payoff, factor, n)
        y_f, y_e = float(z[0]), float(z[1])
    else:
        factor, y_f, y_e = None, None, None

    def first_level(log_r: float) -> ControlPair:
        pair = make_analytic_fundamentals(spec.with_rate(math.exp(log_r)))
        return solve_level(pair, payoff, factor, y_f, y_e, quiet)

    def gap(log_r: float) -> float:
        try:
            return first_level(log_r).a - target_a0
        except SwitchPointError as e:
            logger.debug(f"No level-0 solution at r={math.exp(log_r):.3e}: {e}")
            return math.nan

    grid = np.linspace(math.log(bracket[0]), math.log(bracket[1]), grid_points)
    values = np.array([gap(g) for g in grid])
    logger.info(f"Calibration scan: {np.isfinite(values).sum()} of {grid.size} rates solvable.")

    for k in range(grid.size - 1):
        lo, hi = values[k], values[k + 1]
        if math.isfinite(lo) and math.isfinite(hi) and lo * hi <= 0.0:
            log_r = optimize.brentq(gap, grid[k], grid[k + 1], xtol=1e-10, maxiter=settings.maxiter)
            control = first_level(log_r)
            result = CalibrationResult(math.exp(log_r), control.a, control.b, target_a0)
            if result.relative_error > tolerance:
                break
            logger.info(f"Calibrated r={result.r:.6e}: a_0={result.a0:.2f} MW, b_1={result.b1:.2f} MW")
            return result

    raise CalibrationError(
        details={
            "target_mw": target_a0,
            "bracket": list(bracket),
            "scan": [[math.exp(g), v] for g, v in zip(grid, values.tolist())],
        }
    )

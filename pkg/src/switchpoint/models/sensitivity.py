"""Threshold sensitivities to separable factors, the first-order march and (T, z) surfaces."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from switchpoint.models.exceptions import (
    DivergenceError,
    SingularityError,
    SwitchPointError,
    ValidationError,
)
from switchpoint.models.fundamentals import FundamentalPair
from switchpoint.models.payoff import (
    STORAGE,
    FactorCurve,
    PayoffModel,
    TemperaturePayoff,
    factor_ratio_derivative,
)
from switchpoint.models.solver import (
    ControlPair,
    QFunctions,
    Schedule,
    SolverSettings,
    build_q,
    solve_level,
    solve_schedule,
    storage_grid,
)
from switchpoint.utils.enums import Side


@dataclass(frozen=True)
class SensitivitySettings:
    """March controls.

    ``resolve_every`` re-solves the system explicitly every K steps (0 keeps
    the march open loop). ``step_budget`` is the allowed growth of the relative
    smooth-fit residual per step before the step is halved; None disables step
    control.
    """

    resolve_every: int = 10
    step_budget: Optional[float] = 1e-6
    min_step_fraction: float = 2.0**-10
    singular_tol: float = 1e-8


@dataclass(frozen=True)
class BoundaryDerivatives:
    da: float
    db: float
    da_alt: float
    db_alt: float

    def agreement(self) -> float:
        """Largest relative gap between the two forms of each derivative."""

        def gap(x, y):
            scale = max(abs(x), abs(y))
            return 0.0 if scale == 0.0 else abs(x - y) / scale

        return max(gap(self.da, self.da_alt), gap(self.db, self.db_alt))


@dataclass(frozen=True)
class _Terms:
    """q-values and slopes at the current thresholds plus the shared denominator."""

    psi_f: float
    phi_f: float
    psi_e: float
    phi_e: float
    dpsi_f: float
    dphi_f: float
    dpsi_e: float
    dphi_e: float
    denominator: float


def _terms(charge: QFunctions, discharge: QFunctions, control: ControlPair, tol: float) -> _Terms:
    a, b = control.a, control.b
    values = dict(
        psi_f=float(charge.q_psi(a)),
        phi_f=float(charge.q_phi(a)),
        psi_e=float(discharge.q_psi(b)),
        phi_e=float(discharge.q_phi(b)),
        dpsi_f=float(charge.dq_psi(a)),
        dphi_f=float(charge.dq_phi(a)),
        dpsi_e=float(discharge.dq_psi(b)),
        dphi_e=float(discharge.dq_phi(b)),
    )
    first = values["dpsi_f"] * values["dphi_e"]
    second = values["dpsi_e"] * values["dphi_f"]
    denominator = first - second
    if denominator == 0.0 or abs(denominator) < tol * (abs(first) + abs(second)):
        raise SingularityError(
            "Sensitivity denominator vanishes.",
            {"a": a, "b": b, "denominator": denominator, **values},
        )
    return _Terms(denominator=denominator, **values)


def boundary_derivatives(
    charge: QFunctions,
    discharge: QFunctions,
    cf: FactorCurve,
    df: FactorCurve,
    y: float,
    control: ControlPair,
    singular_tol: float = 1e-8,
) -> BoundaryDerivatives:
    """
    Derivatives of the thresholds with respect to one separable factor.

    Parameters
    ----------
    charge, discharge : QFunctions
        q-functions with the differentiated factor left out of the premultiplier.
    cf, df : FactorCurve
        Charge and discharge curves of that factor.
    y : float
        Factor value, shared by both sides.
    control : ControlPair
        Solved thresholds at ``y``.

    Returns
    -------
    BoundaryDerivatives
        ``da/dy`` and ``db/dy`` from the log-derivative bracket form, and the
        same derivatives from the ratio-derivative form in ``da_alt``, ``db_alt``.

    Notes
    -----
    The ratio-derivative form of ``db`` is
    ``d(Z_f/Z_e)/dy * (q_psi_f' q_phi_f - q_psi_f q_phi_f') / D``. Written with
    the factors in the other order, ``q_psi_f q_phi_f' - q_psi_f' q_phi_f``,
    it has the wrong sign and disagrees with the bracket form.
    """
    t = _terms(charge, discharge, control, singular_tol)
    zf, ze = float(cf.eval(y)), float(df.eval(y))
    bracket = float(df.deriv(y)) / ze - float(cf.deriv(y)) / zf
    d_ef, d_fe = factor_ratio_derivative(cf, df, y)

    da = bracket * (t.psi_f * t.dphi_e - t.dpsi_e * t.phi_f) / t.denominator
    db = bracket * (t.psi_e * t.dphi_f - t.dpsi_f * t.phi_e) / t.denominator
    da_alt = d_ef * (t.psi_e * t.dphi_e - t.dpsi_e * t.phi_e) / t.denominator
    db_alt = d_fe * (t.dpsi_f * t.phi_f - t.psi_f * t.dphi_f) / t.denominator
    return BoundaryDerivatives(da, db, da_alt, db_alt)


@dataclass(frozen=True)
class MarchState:
    """Thresholds at charge factor value ``y``; the discharge side sits at ``y + offset``."""

    y: float
    pair: ControlPair
    dy: float
    offset: float = 0.0
    residual: float = 0.0
    steps: int = 0

    @property
    def y_e(self) -> float:
        return self.y + self.offset


def march_residual(
    charge: QFunctions,
    discharge: QFunctions,
    cf: FactorCurve,
    df: FactorCurve,
    y: float,
    y_e: float,
    control: ControlPair,
) -> float:
    """Relative smooth-fit residual with the factor applied at ``y`` and ``y_e``."""
    zf, ze = float(cf.eval(y)), float(df.eval(y_e))
    residuals = []
    for lhs, rhs in (
        (zf * float(charge.q_psi(control.a)), ze * float(discharge.q_psi(control.b))),
        (zf * float(charge.q_phi(control.a)), ze * float(discharge.q_phi(control.b))),
    ):
        residuals.append(abs(lhs - rhs) / (abs(lhs) + abs(rhs) + 1e-12))
    return max(residuals)


def _explicit_step(state, charge, discharge, cf, df, dy, singular_tol) -> MarchState:
    y, y_e = state.y, state.y_e
    t = _terms(charge, discharge, state.pair, singular_tol)
    zf, dzf = float(cf.eval(y)), float(cf.deriv(y))
    ze, dze = float(df.eval(y_e)), float(df.deriv(y_e))

    da_dz = (
        dze * (t.psi_e * t.dphi_e - t.dpsi_e * t.phi_e)
        + dzf * (t.dpsi_e * t.phi_f - t.psi_f * t.dphi_e)
    ) / t.denominator / (zf + dy * dzf)
    db_dz = (
        dze * (t.psi_e * t.dphi_f - t.dpsi_f * t.phi_e)
        + dzf * (t.dpsi_f * t.phi_f - t.psi_f * t.dphi_f)
    ) / t.denominator / (ze + dy * dze)

    if da_dz == 0.0 and db_dz == 0.0:
        moved = state.pair
    else:
        moved = state.pair.shifted(dy * da_dz, dy * db_dz)
    residual = march_residual(charge, discharge, cf, df, y + dy, y_e + dy, moved)
    return dataclasses.replace(
        state, y=y + dy, pair=moved, dy=dy, residual=residual, steps=state.steps + 1
    )


def march_step(
    state: MarchState,
    charge: QFunctions,
    discharge: QFunctions,
    cf: FactorCurve,
    df: FactorCurve,
    dy: float,
    settings: SensitivitySettings = SensitivitySettings(),
    dy_min: Optional[float] = None,
) -> MarchState:
    """Advance the thresholds from ``y`` to ``y + dy`` with the first-order update.

    When the residual grows by more than the step budget the step is split in
    two halves, recursively, down to ``dy_min``.
    """
    proposal = _explicit_step(state, charge, discharge, cf, df, dy, settings.singular_tol)
    budget = settings.step_budget
    if budget is None or proposal.residual - state.residual <= budget:
        return proposal

    if dy_min is None:
        dy_min = abs(dy) * settings.min_step_fraction
    half = 0.5 * dy
    if abs(half) < dy_min:
        raise DivergenceError(
            details={
                "y": state.y,
                "dy": dy,
                "residual": proposal.residual,
                "budget": budget,
            }
        )
    logger.debug(f"Residual grew to {proposal.residual:.3e} at y={state.y:.6g}, halving dy={dy:.3e}")
    middle = march_step(state, charge, discharge, cf, df, half, settings, dy_min)
    return march_step(middle, charge, discharge, cf, df, half, settings, dy_min)


@dataclass(frozen=True)
class MarchResult:
    z_grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    residuals: np.ndarray
    resolved: np.ndarray
    factor: str = STORAGE


def march_schedule(
    pair: FundamentalPair,
    payoff: PayoffModel,
    n: int,
    factor: str = STORAGE,
    settings: SensitivitySettings = SensitivitySettings(),
    solver_settings: SolverSettings = SolverSettings(),
    start: Optional[ControlPair] = None,
    offset: Optional[float] = None,
) -> MarchResult:
    """March the level thresholds across the factor grid from one explicit solve.

    Storage levels pair ``z_i`` on the charge side with ``z_{i+1}`` on the
    discharge side, so the default ``offset`` is one grid step; pass
    ``offset=0`` for a generic factor shared by both sides.
    """
    z = storage_grid(payoff, factor, n)
    dz = float(z[1] - z[0])
    offset = dz if offset is None else offset
    cf, df = payoff.curves(factor)
    charge = build_q(pair, payoff, Side.CHARGE, exclude=factor)
    discharge = build_q(pair, payoff, Side.DISCHARGE, exclude=factor)

    first = start or solve_level(pair, payoff, factor, float(z[0]), float(z[0]) + offset, solver_settings)
    state = MarchState(
        float(z[0]),
        first,
        dz,
        offset,
        march_residual(charge, discharge, cf, df, float(z[0]), float(z[0]) + offset, first),
    )
    lower, upper = [first.a], [first.b]
    residuals, resolved = [state.residual], [True]
    warm = dataclasses.replace(solver_settings, scan_points=solver_settings.warm_points)

    for i in range(1, n):
        try:
            state = march_step(state, charge, discharge, cf, df, dz, settings)
        except SwitchPointError as e:
            e.details.update(level=i, z=float(z[i]))
            raise
        state = dataclasses.replace(state, y=float(z[i]), dy=dz)
        did_resolve = settings.resolve_every > 0 and i % settings.resolve_every == 0
        if did_resolve:
            a = state.pair.a
            width = solver_settings.warm_width
            fixed = solve_level(
                pair, payoff, factor, state.y, state.y_e, warm, (a - width, a + width)
            )
            state = dataclasses.replace(
                state,
                pair=fixed,
                residual=march_residual(charge, discharge, cf, df, state.y, state.y_e, fixed),
            )
        lower.append(state.pair.a)
        upper.append(state.pair.b)
        residuals.append(state.residual)
        resolved.append(did_resolve)

    logger.info(
        f"March over {n} levels finished after {state.steps} steps, final residual {state.residual:.3e}"
    )
    return MarchResult(
        z, np.array(lower), np.array(upper), np.array(residuals), np.array(resolved), factor
    )


def compare_march(explicit: Schedule, march: MarchResult) -> pd.DataFrame:
    """Explicit and marched thresholds per level with signed errors (march minus explicit)."""
    if explicit.n != march.lower.size:
        raise ValidationError(
            "Mismatched march.", [f"explicit has {explicit.n} levels, march {march.lower.size}"]
        )
    frame = pd.DataFrame(
        {
            "z": explicit.z_grid[:-1],
            "a_explicit": explicit.lower,
            "a_march": march.lower,
            "b_explicit": explicit.upper,
            "b_march": march.upper,
        }
    )
    frame["a_error"] = frame["a_march"] - frame["a_explicit"]
    frame["b_error"] = frame["b_march"] - frame["b_explicit"]
    return frame


# --------------------------------------------------------------------------
# temperature studies
# --------------------------------------------------------------------------


def _at_temperature(payoff: PayoffModel, temperature: float) -> PayoffModel:
    if not isinstance(payoff.base, TemperaturePayoff):
        raise ValidationError(
            "Temperature study needs a temperature payoff.",
            [f"base payoff is {type(payoff.base).__name__}"],
        )
    return payoff.with_base(payoff.base.with_temperature(temperature))


def temperature_sweep(
    pair: FundamentalPair,
    payoff: PayoffModel,
    temperatures: Sequence[float],
    settings: SolverSettings = SolverSettings(),
) -> pd.DataFrame:
    """Explicit thresholds for each temperature at the payoff's current factor values."""
    rows = []
    for temperature in temperatures:
        model = _at_temperature(payoff, float(temperature))
        try:
            control = solve_level(pair, model, None, None, None, settings)
        except SwitchPointError as e:
            e.details.update(T=float(temperature))
            raise
        rows.append({"T": float(temperature), "a": control.a, "b": control.b})
        logger.debug(f"T={temperature}: a={control.a:.2f}, b={control.b:.2f}")
    return pd.DataFrame(rows, columns=["T", "a", "b"])


@dataclass(frozen=True)
class SurfaceColumn:
    temperature: float
    lower: np.ndarray
    upper: np.ndarray


@dataclass(frozen=True)
class Surface:
    temperatures: np.ndarray
    z_grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        """Long format with one (T, z, a, b) row per cell, z being the charge-side level."""
        t, z = np.meshgrid(self.temperatures, self.z_grid[:-1], indexing="ij")
        return pd.DataFrame(
            {
                "T": t.ravel(),
                "z": z.ravel(),
                "a": self.lower.ravel(),
                "b": self.upper.ravel(),
            }
        )


def surface_column(
    pair: FundamentalPair,
    payoff: PayoffModel,
    temperature: float,
    n: int,
    factor: str = STORAGE,
    march: bool = True,
    settings: SensitivitySettings = SensitivitySettings(),
    solver_settings: SolverSettings = SolverSettings(),
) -> SurfaceColumn:
    """Thresholds along the factor grid at one temperature, seeded by an explicit solve at ``z_0``."""
    model = _at_temperature(payoff, temperature)
    try:
        if march:
            result = march_schedule(pair, model, n, factor, settings, solver_settings)
            lower, upper = result.lower, result.upper
        else:
            schedule = solve_schedule(pair, model, n, factor, solver_settings)
            lower, upper = schedule.lower, schedule.upper
    except SwitchPointError as e:
        e.details.update(T=float(temperature))
        raise
    return SurfaceColumn(float(temperature), lower, upper)


def build_surface(
    pair: FundamentalPair,
    payoff: PayoffModel,
    n: int,
    temperatures: Sequence[float],
    factor: str = STORAGE,
    march: bool = True,
    settings: SensitivitySettings = SensitivitySettings(),
    solver_settings: SolverSettings = SolverSettings(),
    columns: Optional[Sequence[SurfaceColumn]] = None,
) -> Surface:
    """Threshold surface over temperature (outer) and factor level (inner).

    Columns are independent; ``columns`` accepts precomputed ones (the process
    pool runner computes them concurrently) and any missing temperature is
    computed here.
    """
    z = storage_grid(payoff, factor, n)
    done = {column.temperature: column for column in columns or ()}
    ordered = []
    for temperature in temperatures:
        column = done.get(float(temperature))
        if column is None:
            column = surface_column(
                pair, payoff, float(temperature), n, factor, march, settings, solver_settings
            )
        ordered.append(column)
    logger.info(f"Surface built over {len(ordered)} temperatures and {n} levels.")
    return Surface(
        np.array([c.temperature for c in ordered]),
        z,
        np.vstack([c.lower for c in ordered]),
        np.vstack([c.upper for c in ordered]),
    )

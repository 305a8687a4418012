"""Charging cost F and discharging income E as functions of excess demand and factors."""

from __future__ import annotations

import dataclasses
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from loguru import logger

from switchpoint.models.exceptions import (
    FactorDomainError,
    SingularityError,
    ValidationError,
)
from switchpoint.utils.enums import PayoffPreset, Side

STORAGE = "storage"


# --------------------------------------------------------------------------
# base payoffs in x
# --------------------------------------------------------------------------


class BasePayoff(ABC):
    """Factor-free payoff lines ``F_x`` and ``E_x`` with two derivatives in x."""

    @abstractmethod
    def F(self, x): ...

    @abstractmethod
    def dF(self, x): ...

    @abstractmethod
    def E(self, x): ...

    @abstractmethod
    def dE(self, x): ...

    def d2F(self, x):
        return np.zeros_like(np.asarray(x, dtype=float)) + 0.0

    def d2E(self, x):
        return np.zeros_like(np.asarray(x, dtype=float)) + 0.0

    def side(self, side: Side):
        """Return ``(G, G', G'')`` for one side."""
        if side is Side.CHARGE:
            return self.F, self.dF, self.d2F
        return self.E, self.dE, self.d2E


@dataclass(frozen=True)
class LinearBasePayoff(BasePayoff):
    """``F_x = slope * x + intercept`` and ``E_x = efficiency * F_x``."""

    slope: float = 0.001
    intercept: float = 20.0
    efficiency: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.efficiency <= 1.0:
            raise ValidationError(
                "Invalid linear payoff.",
                [f"efficiency must lie in (0, 1], got {self.efficiency}"],
            )

    def F(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept

    def dF(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.slope)

    def E(self, x):
        return self.efficiency * self.F(x)

    def dE(self, x):
        return self.efficiency * self.dF(x)


@dataclass(frozen=True)
class AffinePayoff(BasePayoff):
    """Independent affine charge and discharge lines."""

    charge_slope: float
    charge_intercept: float
    discharge_slope: float
    discharge_intercept: float

    def F(self, x):
        return self.charge_slope * np.asarray(x, dtype=float) + self.charge_intercept

    def dF(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.charge_slope)

    def E(self, x):
        return (
            self.discharge_slope * np.asarray(x, dtype=float) + self.discharge_intercept
        )

    def dE(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.discharge_slope)


@dataclass(frozen=True)
class TemperaturePayoff(BasePayoff):
    """
    Temperature-adjusted price line.

    ``F(x, T) = slope * (x + (reference - T)**2 * (offset + (x - min_x) / spread)) + intercept``
    and ``E(x, T) = efficiency * F(x, T)``, with the slope, intercept and
    efficiency taken from ``base``. ``T`` is an average monthly temperature in
    degrees Celsius.
    """

    temperature: float
    min_x: float = -40000.0
    base: LinearBasePayoff = LinearBasePayoff()
    reference: float = 20.0
    offset: float = 55.0
    spread: float = 1500.0
    valid_range: tuple[float, float] = (5.0, 20.0)

    def __post_init__(self):
        low, high = self.valid_range
        if not low <= self.temperature <= high:
            raise ValidationError(
                "Invalid temperature payoff.",
                [f"temperature must lie in [{low}, {high}] C, got {self.temperature}"],
            )
        if self.spread <= 0:
            raise ValidationError("Invalid temperature payoff.", ["spread must be > 0"])

    @property
    def correction(self) -> float:
        return (self.reference - self.temperature) ** 2

    def F(self, x):
        x = np.asarray(x, dtype=float)
        adjusted = x + self.correction * (self.offset + (x - self.min_x) / self.spread)
        return self.base.slope * adjusted + self.base.intercept

    def dF(self, x):
        return np.full_like(
            np.asarray(x, dtype=float),
            self.base.slope * (1.0 + self.correction / self.spread),
        )

    def E(self, x):
        return self.base.efficiency * self.F(x)

    def dE(self, x):
        return self.base.efficiency * self.dF(x)

    def with_temperature(self, temperature: float) -> "TemperaturePayoff":
        return dataclasses.replace(self, temperature=temperature)


# --------------------------------------------------------------------------
# separable factor curves
# --------------------------------------------------------------------------


class FactorCurve(ABC):
    """Positive multiplicative factor ``Y(y)`` on a closed domain."""

    side: Side
    domain: tuple[float, float]

    @abstractmethod
    def eval(self, y): ...

    @abstractmethod
    def deriv(self, y): ...

    def __call__(self, y):
        return self.eval(y)

    def contains(self, y: float) -> bool:
        low, high = self.domain
        return low <= y <= high

    @property
    def width(self) -> float:
        return self.domain[1] - self.domain[0]


@dataclass(frozen=True)
class ConstantFactor(FactorCurve):
    value: float = 1.0
    side: Side = Side.CHARGE
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.value <= 0:
            raise ValidationError("Invalid factor.", [f"constant factor must be > 0, got {self.value}"])

    def eval(self, y):
        return np.full_like(np.asarray(y, dtype=float), self.value) + 0.0

    def deriv(self, y):
        return np.zeros_like(np.asarray(y, dtype=float)) + 0.0


@dataclass(frozen=True)
class LinearFactor(FactorCurve):
    """``intercept + slope * y``; the storage charge factor is ``1 + 2 z / z_n``."""

    intercept: float = 1.0
    slope: float = 2.0
    side: Side = Side.CHARGE
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        low, high = self.domain
        if min(self.intercept + self.slope * low, self.intercept + self.slope * high) <= 0:
            raise ValidationError("Invalid factor.", ["linear factor must stay positive on its domain"])

    def eval(self, y):
        return self.intercept + self.slope * np.asarray(y, dtype=float)

    def deriv(self, y):
        return np.full_like(np.asarray(y, dtype=float), self.slope) + 0.0


@dataclass(frozen=True)
class ExponentialFactor(FactorCurve):
    """``scale * exp(rate * y)``."""

    scale: float = 1.0
    rate: float = 1.0
    side: Side = Side.CHARGE
    domain: tuple[float, float] = (0.0, 1.0)

    def eval(self, y):
        return self.scale * np.exp(self.rate * np.asarray(y, dtype=float))

    def deriv(self, y):
        return self.rate * self.eval(y)


@dataclass(frozen=True)
class CallableFactor(FactorCurve):
    """User-supplied factor; differentiated numerically when no derivative is given."""

    func: Callable
    derivative: Optional[Callable] = None
    side: Side = Side.CHARGE
    domain: tuple[float, float] = (0.0, 1.0)

    def eval(self, y):
        return np.asarray(self.func(np.asarray(y, dtype=float)), dtype=float)

    def deriv(self, y):
        if self.derivative is not None:
            return np.asarray(self.derivative(np.asarray(y, dtype=float)), dtype=float)
        h = 1e-6 * self.width
        y = np.asarray(y, dtype=float)
        return (self.eval(y + h) - self.eval(y - h)) / (2.0 * h)


def storage_factors(z_n: float = 1.0, charge_slope: float = 2.0):
    """Storage factor curves ``Z_f = 1 + charge_slope * z / z_n`` and ``Z_e = 1``."""
    domain = (0.0, z_n)
    charge = LinearFactor(1.0, charge_slope / z_n, Side.CHARGE, domain)
    discharge = ConstantFactor(1.0, Side.DISCHARGE, domain)
    return charge, discharge


def factor_ratio_derivative(cf: FactorCurve, df: FactorCurve, y: float) -> tuple[float, float]:
    """Return ``(d/dy (Z_e / Z_f), d/dy (Z_f / Z_e))`` at ``y``."""
    for curve in (cf, df):
        if not curve.contains(y):
            raise FactorDomainError(curve.side.value, y, curve.domain)
    zf, ze = float(cf.eval(y)), float(df.eval(y))
    dzf, dze = float(cf.deriv(y)), float(df.deriv(y))
    if zf == 0.0 or ze == 0.0:
        raise SingularityError(
            "Factor ratio has a zero denominator.", {"y": y, "Z_f": zf, "Z_e": ze}
        )
    return (dze * zf - ze * dzf) / zf**2, (dzf * ze - zf * dze) / ze**2


# --------------------------------------------------------------------------
# composed model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundFactor:
    """A factor curve together with its current value."""

    name: str
    curve: FactorCurve
    value: float

    def scale(self) -> float:
        if not self.curve.contains(self.value):
            raise FactorDomainError(self.name, self.value, self.curve.domain)
        return float(self.curve.eval(self.value))


@dataclass(frozen=True)
class PayoffModel:
    """Composed payoffs ``F = prod(Y_f) * F_x`` and ``E = prod(Y_e) * E_x``."""

    base: BasePayoff
    charge_factors: tuple[BoundFactor, ...] = ()
    discharge_factors: tuple[BoundFactor, ...] = ()

    def side_scale(self, side: Side, exclude: Optional[str] = None) -> float:
        factors = self.charge_factors if side is Side.CHARGE else self.discharge_factors
        return math.prod(f.scale() for f in factors if f.name != exclude)

    def F(self, x):
        return self.side_scale(Side.CHARGE) * self.base.F(x)

    def dF(self, x):
        return self.side_scale(Side.CHARGE) * self.base.dF(x)

    def d2F(self, x):
        return self.side_scale(Side.CHARGE) * self.base.d2F(x)

    def E(self, x):
        return self.side_scale(Side.DISCHARGE) * self.base.E(x)

    def dE(self, x):
        return self.side_scale(Side.DISCHARGE) * self.base.dE(x)

    def d2E(self, x):
        return self.side_scale(Side.DISCHARGE) * self.base.d2E(x)

    def factor_names(self) -> set[str]:
        return {f.name for f in self.charge_factors + self.discharge_factors}

    def curves(self, name: str) -> tuple[FactorCurve, FactorCurve]:
        """Return the charge and discharge curves of a factor; a missing side is constant 1."""
        if name not in self.factor_names():
            raise ValidationError("Unknown factor.", [f"payoff has no factor named '{name}'"])

        def find(factors, side):
            for f in factors:
                if f.name == name:
                    return f.curve
            return ConstantFactor(1.0, side, self._domain_of(name))

        return (
            find(self.charge_factors, Side.CHARGE),
            find(self.discharge_factors, Side.DISCHARGE),
        )

    def _domain_of(self, name: str) -> tuple[float, float]:
        for f in self.charge_factors + self.discharge_factors:
            if f.name == name:
                return f.curve.domain
        raise ValidationError("Unknown factor.", [f"payoff has no factor named '{name}'"])

    def value_of(self, name: str) -> float:
        for f in self.charge_factors + self.discharge_factors:
            if f.name == name:
                return f.value
        raise ValidationError("Unknown factor.", [f"payoff has no factor named '{name}'"])

    def with_value(self, name: str, value: float, side: Optional[Side] = None) -> "PayoffModel":
        """Return a copy with factor ``name`` set to ``value`` (on one side or both)."""

        def update(factors, factor_side):
            if side is not None and side is not factor_side:
                return factors
            return tuple(
                dataclasses.replace(f, value=value) if f.name == name else f
                for f in factors
            )

        return dataclasses.replace(
            self,
            charge_factors=update(self.charge_factors, Side.CHARGE),
            discharge_factors=update(self.discharge_factors, Side.DISCHARGE),
        )

    def with_values(self, name: str, charge_value: float, discharge_value: float) -> "PayoffModel":
        """Set the charge and discharge sides of a factor to different values."""
        return self.with_value(name, charge_value, Side.CHARGE).with_value(
            name, discharge_value, Side.DISCHARGE
        )

    def with_base(self, base: BasePayoff) -> "PayoffModel":
        return dataclasses.replace(self, base=base)


def eval_F(model: PayoffModel, x):
    """Composed charging cost at ``x``."""
    return model.F(x)


def eval_E(model: PayoffModel, x):
    """Composed discharging income at ``x``."""
    return model.E(x)


@dataclass(frozen=True)
class WellPosednessReport:
    max_gap: float
    negative_price_points: int
    sampled: int

    @property
    def passed(self) -> bool:
        return self.max_gap < 0.0


def check_well_posed(model: PayoffModel, xs) -> WellPosednessReport:
    """Check ``E - F < 0`` wherever ``F > 0``.

    In the negative-price regime ``F <= 0`` an efficiency below one gives
    ``E >= F``; those points are counted and logged, not failed.
    """
    xs = np.asarray(xs, dtype=float)
    f = np.asarray(model.F(xs), dtype=float)
    e = np.asarray(model.E(xs), dtype=float)
    positive = f > 0
    gaps = (e - f)[positive]
    max_gap = float(gaps.max()) if gaps.size else -math.inf
    negative = int((~positive).sum())
    if negative:
        logger.warning(f"{negative} of {xs.size} sampled points have non-positive charging cost.")
    if max_gap >= 0:
        logger.warning(f"Payoff is not well posed: max(E - F) = {max_gap:.6g} where F > 0.")
    return WellPosednessReport(max_gap, negative, int(xs.size))


def build_preset(
    name,
    slope: float = 0.001,
    intercept: float = 20.0,
    efficiency: float = 0.9,
    temperature: float = 20.0,
    min_x: float = -40000.0,
    z_n: float = 1.0,
    storage_charge_slope: float = 2.0,
    storage_value: float = 0.0,
) -> PayoffModel:
    """Build one of the named payoff presets."""
    preset = PayoffPreset(name) if not isinstance(name, PayoffPreset) else name
    linear = LinearBasePayoff(slope, intercept, efficiency)

    if preset in (PayoffPreset.TEMPERATURE, PayoffPreset.COMPOSED):
        base = TemperaturePayoff(temperature, min_x, linear)
    else:
        base = linear

    if preset in (PayoffPreset.LINEAR, PayoffPreset.TEMPERATURE):
        return PayoffModel(base)

    charge, discharge = storage_factors(z_n, storage_charge_slope)
    return PayoffModel(
        base,
        (BoundFactor(STORAGE, charge, storage_value),),
        (BoundFactor(STORAGE, discharge, storage_value),),
    )

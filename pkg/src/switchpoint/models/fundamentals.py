"""Fundamental solutions of the discounted Ornstein-Uhlenbeck generator.

The increasing solution psi and the decreasing solution phi of

    0.5 * sigma**2 * v'' + kappa * (theta - x) * v' - r * v = 0

are written with the scaled parabolic cylinder function
``f_nu(s) = exp(s**2 / 4) * D_nu(s)`` and ``nu = -r / kappa``::

    psi(x) = f_nu(-c * (x - theta)),   phi(x) = f_nu(c * (x - theta)),   c = sqrt(2 * kappa) / sigma

Working with ``f_nu`` instead of ``D_nu`` keeps the Gaussian prefactor out of
the overflow path.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np
from loguru import logger
from scipy import integrate, special

from switchpoint.models.exceptions import ParameterRangeError, ValidationError
from switchpoint.utils.enums import DerivativeMethod, Provenance

if TYPE_CHECKING:
    from switchpoint.models.payoff import PayoffModel

# above this log-magnitude exp() overflows a float64
LOG_OVERFLOW = 700.0
ASYMPTOTIC_SWITCH = 20.0
QUAD_EPSREL = 1e-12
QUAD_LIMIT = 200
PEAK_TAIL = 40.0


@dataclass(frozen=True)
class DiffusionSpec:
    """OU excess-demand model ``dX = kappa (theta - X) dt + sigma dW`` on ``(alpha, beta)`` with discount ``r``."""

    kappa: float
    theta: float
    sigma: float
    r: float
    alpha: float
    beta: float

    def __post_init__(self):
        problems = []
        for name in ("kappa", "theta", "sigma", "r", "alpha", "beta"):
            if not math.isfinite(getattr(self, name)):
                problems.append(f"{name} must be finite")
        if self.kappa <= 0:
            problems.append(f"kappa must be > 0, got {self.kappa}")
        if self.sigma**2 <= 0:
            problems.append(f"sigma**2 must be > 0, got sigma={self.sigma}")
        if self.r <= 0:
            problems.append(f"r must be > 0, got {self.r}")
        if not self.alpha < self.beta:
            problems.append(f"alpha must be < beta, got ({self.alpha}, {self.beta})")
        elif not self.alpha < self.theta < self.beta:
            problems.append(
                f"theta={self.theta} must lie inside ({self.alpha}, {self.beta})"
            )
        if problems:
            raise ValidationError("Invalid diffusion.", problems)

    @property
    def scale(self) -> float:
        """Argument scale ``sqrt(2 kappa) / sigma``."""
        return math.sqrt(2.0 * self.kappa) / self.sigma

    @property
    def index(self) -> float:
        """Parabolic cylinder index ``-r / kappa``."""
        return -self.r / self.kappa

    @property
    def stationary_sd(self) -> float:
        return self.sigma / math.sqrt(2.0 * self.kappa)

    @property
    def width(self) -> float:
        return self.beta - self.alpha

    def drift(self, x):
        return self.kappa * (self.theta - np.asarray(x, dtype=float))

    def with_rate(self, r: float) -> "DiffusionSpec":
        """Return a copy with a different discount rate."""
        return dataclasses.replace(self, r=r)


def _as_output(values: np.ndarray):
    """Return python floats for scalar input, arrays otherwise."""
    return float(values) if np.ndim(values) == 0 else values


def five_point_derivative(func, x, h: float):
    """Fourth-order central difference of ``func`` at ``x``."""
    x = np.asarray(x, dtype=float)
    return (
        -func(x + 2 * h) + 8 * func(x + h) - 8 * func(x - h) + func(x - 2 * h)
    ) / (12.0 * h)


# --------------------------------------------------------------------------
# parabolic cylinder function
# --------------------------------------------------------------------------


def _log_scaled_asymptotic(nu: float, s: float) -> float:
    """Large positive argument expansion of ``log f_nu(s)``."""
    total = 1.0
    term = 1.0
    inv = 1.0 / (s * s)
    previous = math.inf
    for k in range(1, 60):
        term *= -(nu - 2 * k + 2) * (nu - 2 * k + 1) * inv / (2.0 * k)
        if abs(term) >= previous:
            # divergent tail of the asymptotic series
            break
        total += term
        previous = abs(term)
        if previous < 1e-17 * abs(total):
            break
    return nu * math.log(s) + math.log(total)


def _log_scaled_integral(nu: float, s: float) -> float:
    """``log f_nu(s)`` from the integral representation, valid for ``nu < 0``."""
    mu = -nu
    disc = s * s + 4.0 * (mu - 1.0)
    t_peak = (-s + math.sqrt(disc)) / 2.0 if disc >= 0 else 0.0
    t_peak = max(t_peak, 0.0)
    t_end = max(t_peak, 1.0) + PEAK_TAIL

    def exponent(t):
        return -0.5 * t * t - s * t

    def log_integrand(t):
        return (mu - 1.0) * math.log(t) + exponent(t)

    # shared shift: maxima of the two pieces
    t_near = min(max(-s, 0.0), 1.0)
    shift_near = exponent(t_near)
    t_far = min(max(t_peak, 1.0), t_end)
    shift_far = log_integrand(t_far)
    shift = max(shift_near, shift_far)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        near, _ = integrate.quad(
            lambda t: math.exp(exponent(t) - shift),
            0.0,
            1.0,
            weight="alg",
            wvar=(mu - 1.0, 0.0),
            epsabs=0.0,
            epsrel=QUAD_EPSREL,
            limit=QUAD_LIMIT,
        )
        points = [t_peak] if 1.0 < t_peak < t_end else None
        far, _ = integrate.quad(
            lambda t: math.exp(log_integrand(t) - shift),
            1.0,
            t_end,
            points=points,
            epsabs=0.0,
            epsrel=QUAD_EPSREL,
            limit=QUAD_LIMIT,
        )
    return shift + math.log(near + far) - special.gammaln(mu)


@lru_cache(maxsize=1 << 16)
def log_scaled_parabolic_cylinder(nu: float, s: float) -> float:
    """Return ``log(exp(s**2/4) * D_nu(s))`` for ``nu <= 0``."""
    if nu > 0:
        raise ValidationError("Invalid index.", [f"nu must be <= 0, got {nu}"])
    if not math.isfinite(s):
        raise ParameterRangeError("Argument must be finite.", x=s)
    if nu == 0.0:
        return 0.0
    if s > ASYMPTOTIC_SWITCH:
        return _log_scaled_asymptotic(nu, s)
    return _log_scaled_integral(nu, s)


def _scaled_scalar(nu: float, s: float) -> float:
    log_value = log_scaled_parabolic_cylinder(float(nu), float(s))
    if log_value > LOG_OVERFLOW:
        raise ParameterRangeError("Scaled parabolic cylinder value overflows.", x=s)
    return math.exp(log_value)


def scaled_parabolic_cylinder(nu: float, s):
    """Return ``exp(s**2/4) * D_nu(s)`` elementwise."""
    values = np.vectorize(lambda v: _scaled_scalar(nu, v), otypes=[float])(
        np.asarray(s, dtype=float)
    )
    return _as_output(values)


def parabolic_cylinder(nu: float, z):
    """
    Parabolic cylinder function ``D_nu(z)`` for non-positive index.

    Parameters
    ----------
    nu : float
        Index, ``nu <= 0``.
    z : float or array_like
        Finite argument(s).

    Returns
    -------
    float or ndarray
        ``D_nu(z)``.

    Raises
    ------
    ParameterRangeError
        If the value would overflow.

    Examples
    --------
    >>> round(parabolic_cylinder(0.0, 2.0), 12) == round(math.exp(-1.0), 12)
    True
    """

    def scalar(v):
        log_value = log_scaled_parabolic_cylinder(float(nu), float(v)) - v * v / 4.0
        if log_value > LOG_OVERFLOW:
            raise ParameterRangeError("Parabolic cylinder value overflows.", x=v)
        return math.exp(log_value)

    values = np.vectorize(scalar, otypes=[float])(np.asarray(z, dtype=float))
    return _as_output(values)


# --------------------------------------------------------------------------
# fundamental pairs
# --------------------------------------------------------------------------


class FundamentalPair(ABC):
    """Increasing and decreasing fundamental solutions with derivatives and Wronskian."""

    provenance: Provenance

    @property
    @abstractmethod
    def domain(self) -> tuple[float, float]:
        """Interval on which the pair is defined."""

    @abstractmethod
    def psi(self, x): ...

    @abstractmethod
    def phi(self, x): ...

    @abstractmethod
    def dpsi(self, x): ...

    @abstractmethod
    def dphi(self, x): ...

    @abstractmethod
    def d2psi(self, x): ...

    @abstractmethod
    def d2phi(self, x): ...

    def wronskian(self, x):
        return self.phi(x) * self.dpsi(x) - self.dphi(x) * self.psi(x)

    def dwronskian(self, x):
        return self.phi(x) * self.d2psi(x) - self.d2phi(x) * self.psi(x)

    def scaled(self, c_psi: float, c_phi: float) -> "ScaledFundamentals":
        """Return the pair ``(c_psi * psi, c_phi * phi)``."""
        return ScaledFundamentals(self, c_psi, c_phi)


@dataclass(frozen=True)
class ScaledFundamentals(FundamentalPair):
    base: FundamentalPair
    c_psi: float
    c_phi: float

    def __post_init__(self):
        if not (self.c_psi > 0 and self.c_phi > 0):
            raise ValidationError(
                "Invalid scaling.", [f"scales must be positive, got {self.c_psi}, {self.c_phi}"]
            )

    @property
    def provenance(self) -> Provenance:
        return self.base.provenance

    @property
    def domain(self) -> tuple[float, float]:
        return self.base.domain

    def psi(self, x):
        return self.c_psi * self.base.psi(x)

    def phi(self, x):
        return self.c_phi * self.base.phi(x)

    def dpsi(self, x):
        return self.c_psi * self.base.dpsi(x)

    def dphi(self, x):
        return self.c_phi * self.base.dphi(x)

    def d2psi(self, x):
        return self.c_psi * self.base.d2psi(x)

    def d2phi(self, x):
        return self.c_phi * self.base.d2phi(x)


@dataclass(frozen=True)
class AnalyticFundamentals(FundamentalPair):
    """Closed-form OU fundamentals."""

    spec: DiffusionSpec
    derivative: DerivativeMethod = DerivativeMethod.RECURRENCE
    provenance: Provenance = field(default=Provenance.ANALYTIC, init=False)

    @property
    def domain(self) -> tuple[float, float]:
        return (self.spec.alpha, self.spec.beta)

    def _argument(self, x) -> np.ndarray:
        return self.spec.scale * (np.asarray(x, dtype=float) - self.spec.theta)

    def _scaled(self, nu: float, s: np.ndarray, x) -> np.ndarray:
        try:
            return np.vectorize(lambda v: _scaled_scalar(nu, v), otypes=[float])(s)
        except ParameterRangeError as e:
            # report the offending state rather than the internal argument
            offending = np.asarray(x, dtype=float).ravel()
            bad = offending[np.argmax(np.abs(offending - self.spec.theta))]
            raise ParameterRangeError(
                "Fundamental solution overflows.", x=float(bad)
            ) from e

    def psi(self, x):
        return _as_output(self._scaled(self.spec.index, -self._argument(x), x))

    def phi(self, x):
        return _as_output(self._scaled(self.spec.index, self._argument(x), x))

    def dpsi(self, x):
        if self.derivative is DerivativeMethod.STENCIL:
            return _as_output(
                five_point_derivative(self.psi, x, 1e-3 * self.spec.sigma)
            )
        nu = self.spec.index
        values = -self.spec.scale * nu * self._scaled(nu - 1.0, -self._argument(x), x)
        return _as_output(values)

    def dphi(self, x):
        if self.derivative is DerivativeMethod.STENCIL:
            return _as_output(
                five_point_derivative(self.phi, x, 1e-3 * self.spec.sigma)
            )
        nu = self.spec.index
        values = self.spec.scale * nu * self._scaled(nu - 1.0, self._argument(x), x)
        return _as_output(values)

    def _second(self, value, slope, x):
        # from the generator equation
        spec = self.spec
        return _as_output(
            2.0 * (spec.r * value - spec.drift(x) * slope) / spec.sigma**2
        )

    def d2psi(self, x):
        return self._second(np.asarray(self.psi(x)), np.asarray(self.dpsi(x)), x)

    def d2phi(self, x):
        return self._second(np.asarray(self.phi(x)), np.asarray(self.dphi(x)), x)


def make_analytic_fundamentals(
    spec: DiffusionSpec, derivative: DerivativeMethod = DerivativeMethod.RECURRENCE
) -> AnalyticFundamentals:
    """Build the closed-form OU pair for ``spec``."""
    logger.debug(
        f"Analytic fundamentals: nu={spec.index:.6g}, scale={spec.scale:.6g}, derivative={derivative.value}"
    )
    return AnalyticFundamentals(spec, derivative)


# --------------------------------------------------------------------------
# action-region trend diagnostic
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RatioTrend:
    name: str
    points: tuple[float, ...]
    ratios: tuple[float, ...]
    passed: bool


@dataclass(frozen=True)
class TrendReport:
    trends: tuple[RatioTrend, ...]

    @property
    def passed(self) -> bool:
        return all(trend.passed for trend in self.trends)

    @property
    def failures(self) -> list[str]:
        return [trend.name for trend in self.trends if not trend.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "trends": [
                {
                    "name": t.name,
                    "points": list(t.points),
                    "ratios": list(t.ratios),
                    "passed": t.passed,
                }
                for t in self.trends
            ],
        }


def _trend_passes(ratios: np.ndarray) -> bool:
    if np.all(ratios == 0.0):
        return True
    if not np.all(np.isfinite(ratios)):
        return False
    return bool(np.all(np.diff(ratios) < 0.0))


def check_trends(
    pair: FundamentalPair, payoff: "PayoffModel", steps: int = 8
) -> TrendReport:
    """Check that ``|F|/psi``, ``|E|/psi`` shrink toward beta and ``|F|/phi``, ``|E|/phi`` toward alpha.

    Points approach each endpoint at distances ``0.1 * width * 2**-k``; a trend
    passes when the ratio strictly decreases along the approach or is identically zero.
    """
    alpha, beta = pair.domain
    offsets = 0.1 * (beta - alpha) * 2.0 ** -np.arange(steps)
    upper = beta - offsets
    lower = alpha + offsets

    checks = (
        ("|F|/psi toward beta", payoff.F, pair.psi, upper),
        ("|E|/psi toward beta", payoff.E, pair.psi, upper),
        ("|F|/phi toward alpha", payoff.F, pair.phi, lower),
        ("|E|/phi toward alpha", payoff.E, pair.phi, lower),
    )
    trends = []
    for name, payoff_fn, fundamental, xs in checks:
        ratios = np.abs(np.asarray(payoff_fn(xs), dtype=float)) / np.asarray(
            fundamental(xs), dtype=float
        )
        passed = _trend_passes(ratios)
        if not passed:
            logger.warning(f"Action-region trend fails for {name}: {ratios.tolist()}")
        trends.append(RatioTrend(name, tuple(xs.tolist()), tuple(ratios.tolist()), passed))
    return TrendReport(tuple(trends))

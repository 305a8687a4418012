"""Run configuration: INI sections with unit-suffixed keys, validated in one pass."""

import configparser
import dataclasses
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from switchpoint.models.exceptions import ConfigValidationError, SwitchPointError
from switchpoint.models.fundamentals import (
    AnalyticFundamentals,
    DiffusionSpec,
    make_analytic_fundamentals,
)
from switchpoint.models.payoff import PayoffModel, build_preset
from switchpoint.models.sensitivity import SensitivitySettings
from switchpoint.models.solver import SolverSettings
from switchpoint.utils.enums import DerivativeMethod, Elimination, OutputFormat, PayoffPreset
from switchpoint.utils.function import text_to_hash

SECTIONS = (
    "DIFFUSION",
    "PAYOFF",
    "SOLVER",
    "MARCH",
    "GRIDS",
    "EMPIRICAL",
    "SIMULATION",
    "CALIBRATION",
    "SEEDS",
    "OUTPUT",
)

_MISSING = object()


class _Reader:
    """Typed access to a parser that records every problem instead of stopping at the first."""

    def __init__(self, parser: configparser.ConfigParser):
        self.parser = parser
        self.errors: list[str] = []
        for section in SECTIONS:
            if not parser.has_section(section):
                self.errors.append(f"[{section}] section is missing")

    def _raw(self, section, key, default):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key).strip()
        if default is _MISSING:
            if self.parser.has_section(section):
                self.errors.append(f"[{section}] {key} is required")
            return None
        return default

    def float(self, section, key, default=_MISSING, positive=False, optional=False):
        raw = self._raw(section, key, default)
        if raw is None or not isinstance(raw, str):
            return raw
        if optional and raw.lower() in ("", "none"):
            return None
        try:
            value = float(raw)
        except ValueError:
            self.errors.append(f"[{section}] {key} must be a number, got '{raw}'")
            return None
        if not math.isfinite(value):
            self.errors.append(f"[{section}] {key} must be finite, got '{raw}'")
            return None
        if positive and value <= 0:
            self.errors.append(f"[{section}] {key} must be > 0, got {value}")
            return None
        return value

    def int(self, section, key, default=_MISSING, minimum=None):
        raw = self._raw(section, key, default)
        if raw is None or not isinstance(raw, str):
            return raw
        try:
            value = int(raw)
        except ValueError:
            self.errors.append(f"[{section}] {key} must be an integer, got '{raw}'")
            return None
        if minimum is not None and value < minimum:
            self.errors.append(f"[{section}] {key} must be >= {minimum}, got {value}")
            return None
        return value

    def bool(self, section, key, default=_MISSING):
        raw = self._raw(section, key, default)
        if raw is None or not isinstance(raw, str):
            return raw
        states = configparser.ConfigParser.BOOLEAN_STATES
        if raw.lower() not in states:
            self.errors.append(f"[{section}] {key} must be a boolean, got '{raw}'")
            return None
        return states[raw.lower()]

    def choice(self, section, key, enum, default=_MISSING):
        raw = self._raw(section, key, default)
        if raw is None or isinstance(raw, enum):
            return raw
        try:
            return enum(raw.lower())
        except ValueError:
            allowed = ", ".join(e.value for e in enum)
            self.errors.append(f"[{section}] {key} must be one of {allowed}, got '{raw}'")
            return None

    def floats(self, section, key, default=_MISSING):
        raw = self._raw(section, key, default)
        if raw is None or not isinstance(raw, str):
            return raw
        try:
            values = tuple(float(part) for part in raw.split(",") if part.strip())
        except ValueError:
            self.errors.append(f"[{section}] {key} must be a comma-separated list of numbers")
            return None
        if not values:
            self.errors.append(f"[{section}] {key} must not be empty")
            return None
        return values

    def text(self, section, key, default=_MISSING):
        return self._raw(section, key, default)


@dataclass(frozen=True)
class PayoffSection:
    preset: PayoffPreset
    slope: float
    intercept: float
    efficiency: float
    temperature: float
    min_x: float
    z_n: float
    storage_charge_slope: float
    storage_value: float
    factor: str


@dataclass(frozen=True)
class EmpiricalSection:
    levels: int = 101
    coverage: float = 0.98
    x_ref: float = 5000.0
    min_count: int = 30
    repair_tolerance: float = 0.05
    gap_factor: float = 10.0


@dataclass(frozen=True)
class SimulationSection:
    dt: float = 60.0
    x0: float = 5000.0
    z_start: int = 0
    n_paths: int = 2000
    horizon_tolerance: float = 1e-4
    batch_size: int = 16


@dataclass(frozen=True)
class CalibrationSection:
    apply: bool = False
    target_a0: float = -6787.10
    r_min: float = 1e-6
    r_max: float = 1.0
    grid_points: int = 25
    tolerance: float = 0.01


@dataclass(frozen=True)
class OracleGrid:
    a_min: float
    a_max: float
    b_min: float
    b_max: float
    pitch: float

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.arange(self.a_min, self.a_max + 0.5 * self.pitch, self.pitch)
        b = np.arange(self.b_min, self.b_max + 0.5 * self.pitch, self.pitch)
        return a, b


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; reproducible from the INI text and the seed."""

    spec: DiffusionSpec
    derivative: DerivativeMethod
    payoff_section: PayoffSection
    solver: SolverSettings
    march: SensitivitySettings
    use_march: bool
    levels: int
    temperatures: tuple[float, ...]
    oracle: OracleGrid
    empirical: EmpiricalSection
    simulation: SimulationSection
    calibration: CalibrationSection
    seed: Optional[int]
    output_dir: Path
    output_format: OutputFormat
    log_file: str
    source_text: str = field(default="", repr=False)

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser) -> "RunConfig":
        """Validate every section; raise one ConfigValidationError listing all problems."""
        read = _Reader(parser)

        diffusion = dict(
            kappa=read.float("DIFFUSION", "kappa_per_s", positive=True),
            theta=read.float("DIFFUSION", "theta_mw"),
            sigma=read.float("DIFFUSION", "sigma_mw_per_sqrt_s", positive=True),
            r=read.float("DIFFUSION", "r_per_s", positive=True),
            alpha=read.float("DIFFUSION", "alpha_mw"),
            beta=read.float("DIFFUSION", "beta_mw"),
        )
        derivative = read.choice("DIFFUSION", "derivative", DerivativeMethod, DerivativeMethod.RECURRENCE)

        payoff_section = PayoffSection(
            preset=read.choice("PAYOFF", "preset", PayoffPreset),
            slope=read.float("PAYOFF", "slope_per_mw", 0.001),
            intercept=read.float("PAYOFF", "intercept", 20.0),
            efficiency=read.float("PAYOFF", "efficiency", 0.9),
            temperature=read.float("PAYOFF", "temperature_c", 20.0),
            min_x=read.float("PAYOFF", "min_x_mw", -40000.0),
            z_n=read.float("PAYOFF", "z_n", 1.0, positive=True),
            storage_charge_slope=read.float("PAYOFF", "storage_charge_slope", 2.0),
            storage_value=read.float("PAYOFF", "storage_value", 0.0),
            factor=read.text("PAYOFF", "factor", "storage"),
        )

        a_bracket = read.floats("SOLVER", "a_bracket_mw", None)
        b_bracket = read.floats("SOLVER", "b_bracket_mw", None)
        for name, bracket in (("a_bracket_mw", a_bracket), ("b_bracket_mw", b_bracket)):
            if bracket is not None and (len(bracket) != 2 or bracket[0] >= bracket[1]):
                read.errors.append(f"[SOLVER] {name} must be 'low, high' with low < high")
        solver = dict(
            tol_resid=read.float("SOLVER", "tol_resid", 1e-7, positive=True),
            xtol=read.float("SOLVER", "xtol_mw", 1e-6, positive=True),
            maxiter=read.int("SOLVER", "maxiter", 200, minimum=1),
            scan_points=read.int("SOLVER", "scan_points", 48, minimum=3),
            b_grid_points=read.int("SOLVER", "b_grid_points", 64, minimum=3),
            bracket_fraction=read.float("SOLVER", "bracket_fraction", 0.01, positive=True),
            a_bracket=a_bracket,
            b_bracket=b_bracket,
            elimination=read.choice("SOLVER", "elimination", Elimination, Elimination.BOUNDARY_GAP),
            check_trends=read.bool("SOLVER", "check_trends", True),
            warm_start=read.bool("SOLVER", "warm_start", True),
            warm_width=read.float("SOLVER", "warm_width_mw", 2000.0, positive=True),
            warm_points=read.int("SOLVER", "warm_points", 9, minimum=3),
        )

        march = dict(
            resolve_every=read.int("MARCH", "resolve_every", 10, minimum=0),
            step_budget=read.float("MARCH", "step_budget", 1e-6, positive=True, optional=True),
            min_step_fraction=read.float("MARCH", "min_step_fraction", 2.0**-10, positive=True),
            singular_tol=read.float("MARCH", "singular_tol", 1e-8, positive=True),
        )
        use_march = read.bool("MARCH", "surface_uses_march", True)

        levels = read.int("GRIDS", "levels", 100, minimum=1)
        temperatures = read.floats("GRIDS", "temperatures_c", (20.0,))
        oracle = dict(
            a_min=read.float("GRIDS", "oracle_a_min_mw", -20000.0),
            a_max=read.float("GRIDS", "oracle_a_max_mw", 0.0),
            b_min=read.float("GRIDS", "oracle_b_min_mw", 5000.0),
            b_max=read.float("GRIDS", "oracle_b_max_mw", 20000.0),
            pitch=read.float("GRIDS", "oracle_pitch_mw", 250.0, positive=True),
        )

        empirical = dict(
            levels=read.int("EMPIRICAL", "levels", 101, minimum=3),
            coverage=read.float("EMPIRICAL", "coverage", 0.98, positive=True),
            x_ref=read.float("EMPIRICAL", "x_ref_mw", 5000.0),
            min_count=read.int("EMPIRICAL", "min_count", 30, minimum=1),
            repair_tolerance=read.float("EMPIRICAL", "repair_tolerance", 0.05, positive=True),
            gap_factor=read.float("EMPIRICAL", "gap_factor", 10.0, positive=True),
        )
        if empirical["coverage"] is not None and empirical["coverage"] > 1:
            read.errors.append("[EMPIRICAL] coverage must lie in (0, 1]")

        simulation = dict(
            dt=read.float("SIMULATION", "dt_s", 60.0, positive=True),
            x0=read.float("SIMULATION", "x0_mw", 5000.0),
            z_start=read.int("SIMULATION", "z_start", 0, minimum=0),
            n_paths=read.int("SIMULATION", "n_paths", 2000, minimum=1),
            horizon_tolerance=read.float("SIMULATION", "horizon_tolerance", 1e-4, positive=True),
            batch_size=read.int("SIMULATION", "batch_size", 16, minimum=1),
        )

        calibration = dict(
            apply=read.bool("CALIBRATION", "apply", False),
            target_a0=read.float("CALIBRATION", "target_a0_mw", -6787.10),
            r_min=read.float("CALIBRATION", "r_min_per_s", 1e-6, positive=True),
            r_max=read.float("CALIBRATION", "r_max_per_s", 1.0, positive=True),
            grid_points=read.int("CALIBRATION", "grid_points", 25, minimum=2),
            tolerance=read.float("CALIBRATION", "tolerance", 0.01, positive=True),
        )

        seed = read.int("SEEDS", "master", None, minimum=0)
        output_dir = read.text("OUTPUT", "directory", "output")
        output_format = read.choice("OUTPUT", "format", OutputFormat, OutputFormat.CSV)
        log_file = read.text("OUTPUT", "log_file", "switchpoint.log")

        spec = None
        if None not in diffusion.values():
            try:
                spec = DiffusionSpec(**diffusion)
            except SwitchPointError as e:
                read.errors.extend(f"[DIFFUSION] {p}" for p in e.details.get("problems", [str(e)]))
        if payoff_section.preset is not None and None not in dataclasses.asdict(payoff_section).values():
            try:
                _build_payoff(payoff_section)
            except SwitchPointError as e:
                read.errors.extend(f"[PAYOFF] {p}" for p in e.details.get("problems", [str(e)]))

        if read.errors:
            raise ConfigValidationError(read.errors)

        return cls(
            spec=spec,
            derivative=derivative,
            payoff_section=payoff_section,
            solver=SolverSettings(**solver),
            march=SensitivitySettings(**march),
            use_march=use_march,
            levels=levels,
            temperatures=temperatures,
            oracle=OracleGrid(**oracle),
            empirical=EmpiricalSection(**empirical),
            simulation=SimulationSection(**simulation),
            calibration=CalibrationSection(**calibration),
            seed=seed,
            output_dir=Path(output_dir),
            output_format=output_format,
            log_file=log_file,
            source_text=canonical_text(parser),
        )

    def digest(self) -> str:
        """sha256 of the canonical INI text."""
        return text_to_hash(self.source_text)

    def with_overrides(self, seed=None, output_dir=None, output_format=None) -> "RunConfig":
        """Apply command-line overrides; the digest keeps describing the file."""
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if output_dir is not None:
            changes["output_dir"] = Path(output_dir)
        if output_format is not None:
            changes["output_format"] = OutputFormat(output_format)
        return dataclasses.replace(self, **changes)

    def with_rate(self, r: float) -> "RunConfig":
        return dataclasses.replace(self, spec=self.spec.with_rate(r))

    def payoff(self) -> PayoffModel:
        return _build_payoff(self.payoff_section)

    def fundamentals(self) -> AnalyticFundamentals:
        return make_analytic_fundamentals(self.spec, self.derivative)


def _build_payoff(section: PayoffSection) -> PayoffModel:
    return build_preset(
        section.preset,
        slope=section.slope,
        intercept=section.intercept,
        efficiency=section.efficiency,
        temperature=section.temperature,
        min_x=section.min_x,
        z_n=section.z_n,
        storage_charge_slope=section.storage_charge_slope,
        storage_value=section.storage_value,
    )


def canonical_text(parser: configparser.ConfigParser) -> str:
    """INI text with sections and keys sorted, independent of file layout and comments."""
    canonical = configparser.ConfigParser()
    for section in sorted(parser.sections()):
        canonical.add_section(section)
        for key in sorted(parser.options(section)):
            canonical.set(section, key, parser.get(section, key).strip())
    buffer = io.StringIO()
    canonical.write(buffer)
    return buffer.getvalue()
